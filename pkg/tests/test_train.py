import math

import numpy as np
import pytest

from nl2code import experiments as E
from nl2code import model as M
from nl2code import pipeline as P
from nl2code import synthetic
from nl2code import tensor as T
from nl2code import train as TR
from nl2code.errors import (ConfigurationError, CorruptionError, IncompatibleVersionError,
                            NumericalError, UsageError)


def tiny(**kw):
    base = dict(d_model=16, n_heads=2, n_encoder_layers=1, n_decoder_layers=1, d_ff=32, dropout=0.0,
                max_len=24, src_vocab_size=20, tgt_vocab_size=20)
    base.update(kw)
    return M.ModelConfig(**base)


def toy_pairs(n, seed=0, vocab=20):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        x = rng.integers(7, vocab, size=int(rng.integers(2, 6))).tolist()
        out.append((x, x[::-1]))
    return out


# ------------------------------------------------------------------ schedule

def test_one_cycle_endpoints_exact():
    s = TR.OneCycleSchedule(lr_max=1e-3, div_factor=25.0, total_steps=1000, peak_fraction=0.3)
    lr0, m0 = TR.one_cycle_at(0, s)
    assert lr0 == 1e-3 / 25.0 and m0 == s.mom_max
    lrp, mp = TR.one_cycle_at(300, s)
    assert lrp == 1e-3 and mp == s.mom_min
    lrt, mt = TR.one_cycle_at(1000, s)
    assert lrt == 1e-3 / (25.0 * 100) and mt == s.mom_max


def test_one_cycle_shape():
    s = TR.OneCycleSchedule(lr_max=0.01, total_steps=200)
    peak, down = s.boundaries()
    lrs, moms = zip(*(TR.one_cycle_at(t, s) for t in range(201)))
    # momentum moves against lr during the first two phases, then stays at mom_max
    for t in range(1, int(down)):
        assert (lrs[t] - lrs[t - 1]) * (moms[t] - moms[t - 1]) <= 0
    assert all(m == s.mom_max for m in moms[int(math.ceil(down)):])
    assert max(lrs) == lrs[int(peak)]
    with pytest.raises(UsageError):
        TR.one_cycle_at(201, s)
    with pytest.raises(ConfigurationError):
        TR.OneCycleSchedule(peak_fraction=1.0)


# ---------------------------------------------------------------------- adam

def test_adam_zero_grad_and_first_step():
    p = {"w": T.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)}
    before = p["w"].data.copy()
    TR.adam_step(p, {"w": np.zeros(3)}, TR.AdamState(), lr=0.1)
    assert np.array_equal(p["w"].data, before)
    g = np.array([0.5, -4.0, 1e-3])
    TR.adam_step(p, {"w": g}, TR.AdamState(), lr=0.1)
    # at t=1 the bias-corrected ratio is g/(|g| + eps): a step of lr in the sign direction
    expect = before - 0.1 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"].data, expect, rtol=1e-12)


def test_adam_nan_gradient_names_parameter():
    p = {"enc.0.ff.w1": T.Tensor(np.zeros(2), requires_grad=True)}
    with pytest.raises(NumericalError) as exc:
        TR.adam_step(p, {"enc.0.ff.w1": np.array([np.nan, 0.0])}, TR.AdamState(), lr=0.1)
    assert exc.value.parameter == "enc.0.ff.w1" and "enc.0.ff.w1" in str(exc.value)
    assert np.all(p["enc.0.ff.w1"].data == 0)


def test_clip_grad_norm():
    g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    pre = TR.clip_grad_norm(g, 1.0)
    assert pre == pytest.approx(5.0)
    post = math.sqrt(sum(float((v ** 2).sum()) for v in g.values()))
    assert post == pytest.approx(1.0, abs=1e-12)
    small = {"a": np.array([0.1])}
    TR.clip_grad_norm(small, 1.0)
    assert small["a"][0] == 0.1


# ---------------------------------------------------------------- the loop

def test_accumulation_update_count():
    assert TR.updates_per_epoch(32, 8, 4) == TR.updates_per_epoch(32, 32, 1) == 1
    assert TR.updates_per_epoch(100, 8, 4) == 4


def test_config_validation():
    with pytest.raises(ConfigurationError):
        TR.TrainConfig(grad_accum_steps=0)
    with pytest.raises(ConfigurationError):
        TR.TrainConfig(patience=0)
    with pytest.raises(ConfigurationError):
        TR.TrainConfig.from_dict({"epochs": 1, "bogus": 2})
    with pytest.raises(ConfigurationError):
        TR.train_loop(M.build(tiny()), [], None, TR.TrainConfig())


def test_grad_accumulation_matches_large_batch():
    # equal-length pairs so per-batch mean losses average to the full-batch mean
    rng = np.random.default_rng(0)
    pairs = [(rng.integers(7, 20, 4).tolist(), rng.integers(7, 20, 3).tolist()) for _ in range(16)]
    cfg_a = TR.TrainConfig(epochs=1, batch_size=16, grad_accum_steps=1, schedule="constant",
                           valid_bleu=False, clip_norm=0.0)
    cfg_b = TR.TrainConfig(epochs=1, batch_size=4, grad_accum_steps=4, schedule="constant",
                           valid_bleu=False, clip_norm=0.0)
    a, b = M.build(tiny(), seed=1), M.build(tiny(), seed=1)
    TR.train_loop(a, pairs, None, cfg_a)
    TR.train_loop(b, pairs, None, cfg_b)
    for n in a.params:
        np.testing.assert_allclose(a.params[n].data, b.params[n].data, atol=1e-9)


def test_early_stopping_patience(monkeypatch):
    vals = iter([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
    monkeypatch.setattr(TR, "evaluate_loss", lambda *a, **k: next(vals))
    cfg = TR.TrainConfig(epochs=8, batch_size=8, patience=3, valid_bleu=False)
    best, hist = TR.train_loop(M.build(tiny()), toy_pairs(8), toy_pairs(4, 1), cfg)
    assert len(hist) == 4
    assert best.step == hist[0]["step"]


def test_training_deterministic():
    pairs = toy_pairs(24)
    cfg = TR.TrainConfig(epochs=3, batch_size=8, seed=5, valid_bleu=False)
    runs = []
    for _ in range(2):
        m = M.build(tiny(dropout=0.1), seed=5)
        _, hist = TR.train_loop(m, pairs, toy_pairs(6, 1), cfg)
        runs.append((hist, m.state_dict()))
    assert runs[0][0] == runs[1][0]
    for n in runs[0][1]:
        assert np.array_equal(runs[0][1][n], runs[1][1][n])


def test_nan_loss_aborts_with_checkpoint():
    m = M.build(tiny(), seed=0)
    m.params["src_embed"].data[:] = np.nan
    with pytest.raises(NumericalError) as exc:
        TR.train_loop(m, toy_pairs(8), None, TR.TrainConfig(epochs=1, batch_size=8, valid_bleu=False))
    assert isinstance(exc.value.checkpoint, TR.Checkpoint)


def test_mlm_and_denoise_objectives_run():
    pairs = [(x, x) for x, _ in toy_pairs(12)]
    for objective in ("mlm", "denoise"):
        cfg = TR.TrainConfig(epochs=1, batch_size=6, objective=objective, valid_bleu=False)
        _, hist = TR.train_loop(M.build(tiny(), seed=0), pairs, pairs[:4], cfg)
        assert np.isfinite(hist[0]["train_loss"]) and np.isfinite(hist[0]["valid_loss"])


def test_overfit_probe_loss_drops():
    r = E.overfit_probe(n_pairs=8, epochs=120)
    assert r["final_loss"] < 0.05 * r["initial_loss"]


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bytes(tmp_path):
    m = M.build(tiny(), seed=3)
    p1, p2 = tmp_path / "a.nlcf", tmp_path / "b.nlcf"
    TR.save_checkpoint(m, str(p1), step=7, history=[{"epoch": 0}], tokenizers={"src": "s.json"})
    ck = TR.read_checkpoint(str(p1))
    TR.save_checkpoint(ck, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    assert ck.step == 7 and ck.tokenizers == {"src": "s.json"}
    back = TR.load_checkpoint(str(p1))
    for n, arr in m.state_dict().items():
        assert np.array_equal(back.params[n].data, arr.astype(np.float32).astype(np.float64))
    # a float32-representable model round-trips bit-exactly
    back2 = TR.load_checkpoint(str(p2))
    for n in back.params:
        assert np.array_equal(back.params[n].data, back2.params[n].data)


def test_checkpoint_corruption_and_version(tmp_path):
    p = tmp_path / "m.nlcf"
    TR.save_checkpoint(M.build(tiny(), seed=0), str(p))
    blob = p.read_bytes()
    (tmp_path / "trunc.nlcf").write_bytes(blob[:-100])
    with pytest.raises(CorruptionError):
        TR.load_checkpoint(str(tmp_path / "trunc.nlcf"))
    flipped = bytearray(blob)
    flipped[-20] ^= 0xFF
    (tmp_path / "flip.nlcf").write_bytes(bytes(flipped))
    with pytest.raises(CorruptionError):
        TR.load_checkpoint(str(tmp_path / "flip.nlcf"))
    (tmp_path / "v.nlcf").write_bytes(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(IncompatibleVersionError):
        TR.load_checkpoint(str(tmp_path / "v.nlcf"))
    (tmp_path / "junk.nlcf").write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CorruptionError):
        TR.load_checkpoint(str(tmp_path / "junk.nlcf"))


def test_finetune_resume_starts_lower(tmp_path):
    task = synthetic.pretrain_task(0, n_mined=600, n_labeled=40, n_valid=40, n_test=10)
    mined, labeled, valid = (task[k].pairs() for k in ("mined", "labeled", "valid"))
    src_tok, tgt_tok = P.train_pair_tokenizers("rule_code", None, mined + labeled)
    cfg = tiny(src_vocab_size=len(src_tok), tgt_vocab_size=len(tgt_tok), max_len=32)
    enc = lambda ps: P.encode_pairs(src_tok, tgt_tok, ps, cfg.max_len)  # noqa: E731
    tc = TR.TrainConfig(epochs=12, batch_size=16, lr=5e-3, valid_bleu=False)
    best, _ = TR.train_loop(M.build(cfg, seed=0), enc(mined), enc(valid), tc)
    path = str(tmp_path / "pre.nlcf")
    TR.save_checkpoint(best, path)
    resumed = TR.load_checkpoint(path)
    fresh = M.build(cfg, seed=0)
    assert TR.evaluate_loss(resumed, enc(valid), tc) < 0.5 * TR.evaluate_loss(fresh, enc(valid), tc)
