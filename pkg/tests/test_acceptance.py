"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the collected lines are
repeated in the terminal summary (see conftest.py).
"""
import math
import random
import statistics
import time

import numpy as np
import pytest

from nl2code import decode as D
from nl2code import evaluation as EV
from nl2code import experiments as X
from nl2code import model as M
from nl2code import objectives as O
from nl2code import tensor as T
from nl2code import tokenizers as TK
from nl2code import train as TR
from nl2code import augment as A
from nl2code import corpus as C
from nl2code import synthetic

RESULTS = []


def report(n, title, ok, detail=""):
    line = f"ACCEPTANCE #{n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


# ----------------------------------------------------------------------- 1

def test_01_gradient_correctness():
    t0 = time.time()
    cfg = M.ModelConfig(d_model=8, n_heads=2, n_encoder_layers=1, n_decoder_layers=1, d_ff=16,
                        dropout=0.0, max_len=10, src_vocab_size=12, tgt_vocab_size=12, init_std=0.3)
    m = M.build(cfg, seed=0)
    m.eval()
    src = np.array([[4, 5, 6, 7], [8, 9, 10, 0]])
    tin = np.array([[1, 7, 8, 9], [1, 10, 11, 0]])
    tout = np.array([[7, 8, 9, 2], [10, 11, 2, 0]])
    params = list(m.parameters().values())
    f = lambda: T.cross_entropy(M.forward(m, src, tin), tout, ignore_index=0)  # noqa: E731
    err = T.finite_diff_check(f, params, epsilon=1e-5, n_samples=400, rng=np.random.default_rng(0))
    dt = time.time() - t0
    report(1, "gradient check, 1-layer 2-head d_model=8 transformer", err < 1e-5 and dt < 60,
           f"max rel err {err:.2e} over 400 coords, {dt:.1f}s")


# ----------------------------------------------------------------------- 2

def test_02_attention_laws(monkeypatch):
    calls = []
    real = M.scaled_dot_attention

    def spy(q, k, v, mask=None, *a, **kw):
        out, w = real(q, k, v, mask, *a, **kw)
        calls.append((w.data.copy(), None if mask is None else np.broadcast_to(mask, w.shape).copy()))
        return out, w

    monkeypatch.setattr(M, "scaled_dot_attention", spy)
    cfg = M.ModelConfig(d_model=16, n_heads=4, n_encoder_layers=2, n_decoder_layers=2, d_ff=32,
                        dropout=0.0, max_len=16, src_vocab_size=20, tgt_vocab_size=20)
    m = M.build(cfg, seed=1)
    rng = np.random.default_rng(0)
    src = rng.integers(7, 20, size=(3, 9))
    src[1, 6:] = 0
    tgt = np.concatenate([np.ones((3, 1), int), rng.integers(7, 20, size=(3, 8))], axis=1)
    base = M.forward_teacher_forced(m, src, tgt).data
    rows_ok = all(np.max(np.abs(w.sum(-1) - 1.0)) < 1e-6 for w, _ in calls)
    masked_zero = all(mask is None or np.all(w[mask] == 0.0) for w, mask in calls)
    L = tgt.shape[1]
    upper = np.triu(np.ones((L, L), bool), 1)
    causal = [w for w, mask in calls if mask is not None and w.shape[-2:] == (L, L)
              and np.all(mask[..., upper])]
    causal_ok = bool(causal) and all(np.all(w[..., upper] == 0.0) for w in causal)
    monkeypatch.setattr(M, "scaled_dot_attention", real)
    bitwise = True
    for j in range(1, L):
        t2 = tgt.copy()
        t2[:, j:] = rng.integers(7, 20, size=(3, L - j))
        bitwise &= np.array_equal(M.forward_teacher_forced(m, src, t2).data[:, :j], base[:, :j])
    report(2, "attention rows sum to 1, causal/future zero weight, past logits bitwise stable",
           rows_ok and masked_zero and causal_ok and bitwise,
           f"{len(calls)} attention calls, {len(causal)} causal")


# ----------------------------------------------------------------------- 3

def test_03_bleu_oracle():
    s = "the cat sat on the mat".split()
    one = EV.sentence_bleu(s, [s], smoothing="none").score
    cat = EV.sentence_bleu("the cat sat".split(), [s], max_n=3, smoothing="none").score
    clip = EV.sentence_bleu("the the the the".split(), ["the cat".split()], max_n=1, smoothing="none").score
    hyps = ["the cat sat on the mat".split(), "a dog".split()]
    refs = ["the cat sat on the mat".split(), "a dog ran away fast".split()]
    corpus = EV.corpus_bleu(hyps, refs) / 100
    macro = statistics.mean(EV.sentence_bleu(h, [r], smoothing="none").score for h, r in zip(hyps, refs))
    ok = (abs(one - 1.0) < 1e-6 and abs(cat - math.exp(-1)) < 1e-6 and abs(clip - 0.25) < 1e-6
          and abs(corpus - macro) > 1e-3)
    report(3, "BLEU hand cases and micro/macro inequality", ok,
           f"{one:.6f}, {cat:.6f}, {clip:.6f}; corpus {corpus:.4f} vs mean {macro:.4f}")


# ----------------------------------------------------------------------- 4

def _brute_lcs(a, b):
    import itertools
    for k in range(min(len(a), len(b)), 0, -1):
        subs = set(itertools.combinations(a, k))
        if any(c in subs for c in itertools.combinations(b, k)):
            return k
    return 0


def test_04_rouge_l_oracle():
    rng = random.Random(4)
    bad = 0
    for _ in range(500):
        a = [rng.choice("abcde") for _ in range(rng.randint(0, 10))]
        b = [rng.choice("abcde") for _ in range(rng.randint(0, 10))]
        L = _brute_lcs(a, b)
        r = EV.rouge(a, b, "lcs")
        p = L / len(a) if a else 0.0
        rc = L / len(b) if b else 0.0
        if EV.lcs_length(a, b) != L or r["precision"] != p or r["recall"] != rc:
            bad += 1
    report(4, "ROUGE-L equals brute-force LCS on 500 random pairs", bad == 0, f"{bad} mismatches")


# ----------------------------------------------------------------------- 5

def _random_text(rng):
    chars = []
    for _ in range(rng.randint(0, 30)):
        cp = rng.choice([rng.randint(0x20, 0x7E), rng.randint(0xA0, 0x2FF), rng.randint(0x4E00, 0x4FFF),
                         rng.randint(0x1F300, 0x1F5FF), rng.randint(0, 0x10FFFF)])
        if 0xD800 <= cp <= 0xDFFF:
            cp = 0x41
        chars.append(chr(cp))
    return "".join(chars)


def test_05_tokenizer_properties(tmp_path):
    rng = random.Random(5)
    corpus = ["def load_data(path): return open(path).read()", "x = np.zeros((3, 4))",
              "sort the list by the second item", "print('héllo wörld')"] * 3
    byte_tok = TK.train_byte_bpe(corpus, n_merges=80)
    strings = [_random_text(rng) for _ in range(1000)]
    round_trip = sum(byte_tok.decode(byte_tok.encode(s)) == s for s in strings)
    deterministic = True
    for kind in ("bpe", "wordpiece", "unigram"):
        files = []
        for i in range(2):
            p = tmp_path / f"{kind}{i}.json"
            TK.save_tokenizer(TK.train(kind, corpus, 90, min_frequency=1), str(p))
            files.append(p.read_bytes())
        deterministic &= files[0] == files[1]
    uni = TK.train_unigram(corpus, vocab_size=80, seed_size=300)
    base_chars = {c for t in corpus for c in t if not c.isspace()}
    kept = all(c in uni.vocab for c in base_chars)
    camel = " ".join(TK.code_tokenize("class TirionFordring")) == "class Tirion Fordring"
    report(5, "byte BPE round trip, trainer determinism, unigram base chars, CamelCase split",
           round_trip == 1000 and deterministic and kept and camel,
           f"round trip {round_trip}/1000, deterministic {deterministic}, base chars {kept}, camel {camel}")


# ----------------------------------------------------------------------- 6

def test_06_one_cycle_endpoints():
    ok = True
    for lr_max, div, total, frac in ((1e-3, 25.0, 1000, 0.3), (3e-4, 10.0, 77, 0.25), (0.1, 4.0, 10, 0.5)):
        s = TR.OneCycleSchedule(lr_max=lr_max, div_factor=div, total_steps=total, peak_fraction=frac)
        peak = frac * total
        ok &= TR.one_cycle_at(0, s)[0] == lr_max / div
        if peak == int(peak):
            ok &= TR.one_cycle_at(int(peak), s)[0] == lr_max
        ok &= TR.one_cycle_at(total, s)[0] == lr_max / (div * 100)
    report(6, "one-cycle lr endpoints exact", ok)


# ----------------------------------------------------------------------- 7

def test_07_corruption_statistics():
    rng = np.random.default_rng(7)
    toks = rng.integers(7, 5000, size=1_000_000)
    corrupted, labels = O.mlm_mask(toks, O.NoiseConfig(), rng, vocab_size=5000)
    sel = labels != O.IGNORE
    frac = sel.mean()
    c, orig = corrupted[sel], toks[sel]
    f_mask = np.mean(c == O.MASK_ID)
    f_keep = np.mean(c == orig)
    f_rand = 1.0 - f_mask - f_keep
    spans = O.sample_span_lengths(np.random.default_rng(8), 3.0, 100_000)
    ok = (abs(frac - 0.15) <= 0.005 and abs(f_mask - 0.8) <= 0.01 and abs(f_keep - 0.1) <= 0.01
          and abs(f_rand - 0.1) <= 0.01 and abs(spans.mean() - 3.0) <= 0.05)
    report(7, "MLM 15% with 80/10/10, Poisson(3) span mean", ok,
           f"sel {frac:.4f}, mask {f_mask:.4f}, random {f_rand:.4f}, keep {f_keep:.4f}, span mean {spans.mean():.4f}")


# ----------------------------------------------------------------------- 8

def test_08_overfit_probe():
    r = X.overfit_probe(n_pairs=16, epochs=300, seed=0)
    ok = r["token_accuracy"] >= 0.99 and r["bleu"] >= 99 and r["seconds"] < 600
    report(8, "overfit probe on 16 pairs", ok,
           f"token acc {r['token_accuracy']:.4f}, BLEU {r['bleu']:.2f}, {r['epochs']} epochs, {r['seconds']:.1f}s")


# ----------------------------------------------------------------------- 9

def _table_model(vocab, seed):
    def f(src, prefixes):
        rows = []
        for p in prefixes:
            z = np.random.default_rng([seed] + list(p)).normal(0, 2, size=vocab)
            z[0] = z[1] = -np.inf
            rows.append(z)
        return np.array(rows)
    return f


def _engineered():
    probs = {(1,): {3: 0.55, 4: 0.45}, (1, 3): {3: 0.34, 4: 0.33, 5: 0.33}, (1, 4): {4: 0.9, 5: 0.1}}

    def f(src, prefixes):
        out = []
        for p in prefixes:
            z = np.full(6, -np.inf)
            if len(p) == 3:
                z[2] = 0.0
            else:
                for tok, pr in probs.get(tuple(p), {3: 1 / 3, 4: 1 / 3, 5: 1 / 3}).items():
                    z[tok] = math.log(pr)
            out.append(z)
        return np.array(out)
    return f


def test_09_beam_oracle():
    import itertools
    f = _engineered()
    best, best_lp = None, -math.inf
    for seq in itertools.product(range(6), repeat=2):
        ids, lp = [1], 0.0
        for tok in seq + (2,):
            row = f(None, [ids])[0]
            lp += (row - np.logaddexp.reduce(row))[tok]
            ids.append(tok)
        if lp > best_lp:
            best, best_lp = ids, lp
    cfg = D.DecodeConfig(strategy="beam", beam_size=4, max_length=10, no_repeat_ngram_size=0)
    beam = D.beam_search(f, [], cfg)[0]
    greedy = D.greedy(f, [], D.DecodeConfig(strategy="greedy", max_length=10, no_repeat_ngram_size=0))
    oracle_ok = beam.ids == best and greedy.ids != best
    agree = 0
    for seed in range(100):
        g = _table_model(8, seed)
        a = D.greedy(g, [], D.DecodeConfig(strategy="greedy", max_length=8, no_repeat_ngram_size=0))
        b = D.beam_search(g, [], D.DecodeConfig(strategy="beam", beam_size=1, max_length=8,
                                                no_repeat_ngram_size=0))[0]
        agree += a.ids == b.ids
    report(9, "beam 4 finds exhaustive optimum; beam 1 equals greedy", oracle_ok and agree == 100,
           f"beam {beam.ids} vs exhaustive {best}; greedy agreement {agree}/100")


# ---------------------------------------------------------------------- 10

def test_10_bootstrap_sanity():
    t0 = time.time()
    rng = random.Random(10)
    refs = [[rng.choice("abcdefgh") for _ in range(10)] for _ in range(100)]
    good = [list(r) for r in refs]
    bad = [r[:5] + ["zz"] * 5 for r in refs]
    dom = EV.paired_bootstrap(None, bad, good, refs, n_samples=10000, seed=0)
    same = EV.paired_bootstrap(None, good, good, refs, n_samples=10000, seed=0)
    again = EV.paired_bootstrap(None, bad, good, refs, n_samples=10000, seed=0)
    dt = time.time() - t0
    ok = ((dom.win_ratio_a, dom.win_ratio_b, dom.p_value) == (0.0, 1.0, 0.0)
          and same.ties == 10000 and same.win_ratio_a == same.win_ratio_b == 0.0
          and dom.to_json() == again.to_json() and dt < 30)
    report(10, "paired bootstrap dominance, all-ties and determinism", ok,
           f"win ratio {dom.win_ratio_a:.3f}/{dom.win_ratio_b:.3f}, ties {same.ties}, {dt:.1f}s")


# ---------------------------------------------------------------------- 11

@pytest.mark.slow
def test_11_pretrain_finetune_direction():
    t0 = time.time()
    runs = [X.pretrain_vs_scratch(seed=s) for s in (0, 1, 2)]
    scratch = statistics.median(r["bleu_finetune_only"] for r in runs)
    pre = statistics.median(r["bleu_pretrain_finetune"] for r in runs)
    dt = time.time() - t0
    report(11, "pretrain then fine-tune beats fine-tune only by >= 2 BLEU (median of 3 seeds)",
           pre - scratch >= 2.0 and dt < 1800,
           f"median {pre:.2f} vs {scratch:.2f}, per seed "
           + ", ".join(f"{r['bleu_pretrain_finetune']:.1f}/{r['bleu_finetune_only']:.1f}" for r in runs)
           + f", {dt:.0f}s")


# ---------------------------------------------------------------------- 12

def test_12_augmentation_bookkeeping():
    src = synthetic.labeled_set(50, seed=12)
    base = C.Dataset([C.ParallelExample(intent=e.intent, snippet=e.snippet, rewritten_intent="to " + e.intent)
                      for e in src.examples], "base", "nl2code")

    def fake(tag):
        return lambda snippet, k: [f"{tag} candidate {r} {snippet}" for r in range(k)]
    models = {"intent": fake("i"), "rewritten_intent": fake("r")}
    n1 = len(C.assemble_augmented(base, A.back_translate(models, base, A.AugmentConfig(top_k=1))))
    n2 = len(C.assemble_augmented(base, A.back_translate(models, base, A.AugmentConfig(top_k=2))))
    report(12, "top-1/top-1 gives 3n and top-2/top-2 gives 5n (n=50)", n1 == 150 and n2 == 250,
           f"{n1}, {n2}")


# ---------------------------------------------------------------------- 13

GOOD = ["app.run(debug=True)", "time.sleep(1)", "len(s)", "tuple(t)", "r = requests.get(url)",
        "list(set(t))", "isinstance(obj, str)", "getattr(obj, 'attr')", "json.dumps(Decimal('3.9'))",
        "os.kill(os.getpid(), signal.SIGUSR1)"]


def _corrupt(i, s):
    if i % 2 == 0:
        k = max(s.rfind(")"), s.rfind("]"))
        return s[:k] + s[k + 1:]
    return s + " +"


def test_13_parsability_counter():
    bad = [_corrupt(i, s) for i, s in enumerate(GOOD)]
    n_good = EV.parsable_count(GOOD, "builtin")
    n_bad = EV.parsable_count(bad, "builtin")
    report(13, "builtin checker: 10 known-good snippets pass, 10 corrupted fail", n_good == 10 and n_bad == 0,
           f"good {n_good}/10, corrupted accepted {n_bad}/10")


# ---------------------------------------------------------------------- 14

def test_14_quality_binning():
    out = EV.quality_bins([0.05, 0.15, 0.25, 0.55, 0.95])
    hand = (out["histogram"] == [1, 1, 1, 0, 0, 1, 0, 0, 0, 1] and out["above_0_5"] == 2
            and out["classes"] == {"wrong": 2, "semantically_equivalent": 1, "marginally_correct": 1,
                                   "mostly_correct": 0, "exact_match": 1})
    rng = np.random.default_rng(14)
    totals = True
    for _ in range(500):
        n = int(rng.integers(0, 200))
        scores = rng.random(n)
        scores[rng.random(n) < 0.1] = rng.choice([0.0, 0.1, 0.2, 0.5, 0.9, 1.0])
        o = EV.quality_bins(scores.tolist())
        totals &= sum(o["histogram"]) == n == sum(o["classes"].values())
    report(14, "quality bins hand case and histogram totals", hand and totals, f"hand {hand}, totals {totals}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
