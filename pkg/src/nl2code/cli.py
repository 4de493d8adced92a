"""Command line front end: ``nl2code <subcommand> [--config PATH] [--section.key VALUE ...]``."""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import augment as A
from . import corpus as C
from . import evaluation as E
from . import model as M
from . import pipeline as P
from . import tensor as T
from . import tokenizers as TK
from . import train as TR
from .decode import DecodeConfig
from .errors import ConfigurationError, DataError, EnvironmentProblem, NL2CodeError, UsageError

log = logging.getLogger("nl2code")

MASK_LITERAL = "<mask>"

DEFAULTS = {
    "data": {"train": None, "valid": None, "test": None, "format": "labeled", "min_prob": 0.0,
             "field": "intent", "direction": "nl2code", "mlm_side": "snippet", "max_examples": None},
    "tokenizer": {"kind": "bpe", "vocab_size": 8000, "min_frequency": 2, "src": None, "tgt": None},
    "model": {f.name: f.default for f in fields(M.ModelConfig)},
    "train": TR.TrainConfig().to_dict(),
    "decode": DecodeConfig().to_dict(),
    "eval": {"side": "code", "k": 1, "max_n": 4, "checker": "builtin"},
    "augment": {"source_fields": list(A.FIELDS), "top_k": 1, "dedup": False},
}


# ------------------------------------------------------------------- config

def _merge(base, update, path=""):
    for key, val in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and not path:
            if not isinstance(val, dict):
                raise ConfigurationError(f"config section {where!r} must be an object")
            _merge(base[key], val, where)
        else:
            base[key] = val
    return base


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(tokens):
    """``--section.key VALUE`` pairs into a nested dict; values parsed as JSON when possible."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"override {tok} needs a value")
            raw = tokens[i + 1]
            i += 2
        section, _, name = key.partition(".")
        out.setdefault(section, {})[name] = _parse_value(raw)
    return out


def resolve_config(path=None, overrides=None, seed=None):
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be an object")
        _merge(cfg, doc)
    _merge(cfg, overrides or {})
    if seed is not None:
        cfg["train"]["seed"] = seed
        cfg["decode"]["seed"] = seed
    log.info("resolved config %s", json.dumps(cfg, sort_keys=True))
    return cfg


# --------------------------------------------------------------------- data

def _load_dataset(path, dcfg):
    if path is None:
        return None
    if dcfg["format"] == "mined":
        ds = C.load_mined(path, dcfg["min_prob"], direction=dcfg["direction"])
    else:
        ds = C.load_labeled(path, direction=dcfg["direction"])
    if dcfg["max_examples"]:
        ds = C.Dataset(ds.examples[: dcfg["max_examples"]], ds.name, ds.direction)
    return ds


def _pairs(ds, cfg):
    if ds is None:
        return []
    if cfg["train"]["objective"] == "mlm":
        side = cfg["data"]["mlm_side"]
        texts = [ex.snippet if side == "snippet" else ex.intent for ex in ds]
        return [(t, t) for t in texts]
    if cfg["train"]["objective"] == "denoise":
        return [(t, t) for _, t in ds.pairs(cfg["data"]["field"])]
    return ds.pairs(cfg["data"]["field"])


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not UTF-8 (byte {exc.start})") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# --------------------------------------------------------------- tokenizers

def _tokenizers(cfg, pairs):
    tc = cfg["tokenizer"]
    shared = cfg["train"]["objective"] in ("mlm", "denoise")
    if tc["src"]:
        src = TK.load_tokenizer(tc["src"])
    else:
        texts = [s for s, _ in pairs] + ([t for _, t in pairs] if shared else [])
        src = TK.train(tc["kind"], texts, tc["vocab_size"], tc["min_frequency"])
    if shared:
        return src, src
    if tc["tgt"]:
        return src, TK.load_tokenizer(tc["tgt"])
    return src, TK.train(tc["kind"], [t for _, t in pairs], tc["vocab_size"], tc["min_frequency"])


def _save_run(out_dir, best, history, src_tok, tgt_tok, cfg):
    os.makedirs(out_dir, exist_ok=True)
    TK.save_tokenizer(src_tok, os.path.join(out_dir, "src_tokenizer.json"))
    TK.save_tokenizer(tgt_tok, os.path.join(out_dir, "tgt_tokenizer.json"))
    refs = {"src": "src_tokenizer.json", "tgt": "tgt_tokenizer.json"}
    TR.save_checkpoint(best, os.path.join(out_dir, "model.nlcf"), history=history, tokenizers=refs)
    _write(os.path.join(out_dir, "history.json"), json.dumps(history, indent=1) + "\n")
    _write(os.path.join(out_dir, "config.json"), json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def load_run(path):
    """(model, src tokenizer, tgt tokenizer) from a checkpoint file or run directory."""
    ckpt_path = os.path.join(path, "model.nlcf") if os.path.isdir(path) else path
    if not os.path.exists(ckpt_path):
        raise DataError(f"checkpoint {ckpt_path} not found")
    ckpt = TR.read_checkpoint(ckpt_path)
    base = os.path.dirname(ckpt_path)
    toks = []
    for side in ("src", "tgt"):
        ref = ckpt.tokenizers.get(side)
        if ref is None:
            raise DataError(f"{ckpt_path}: no {side} tokenizer reference in header")
        tp = os.path.join(base, ref)
        if not os.path.exists(tp):
            raise DataError(f"tokenizer file {tp} referenced by {ckpt_path} is missing")
        toks.append(TK.load_tokenizer(tp))
    return ckpt.to_model(), toks[0], toks[1]


# -------------------------------------------------------------- subcommands

def cmd_tokenizer_train(args, cfg):
    tc = cfg["tokenizer"]
    if args.corpus.endswith(".json"):
        ds = C.load_labeled(args.corpus)
        texts = [ex.snippet if args.side == "code" else ex.intent for ex in ds]
    else:
        texts = _read_lines(args.corpus)
    kind = args.kind or tc["kind"]
    size = args.vocab_size or tc["vocab_size"]
    tok = TK.train(kind, texts, size, tc["min_frequency"])
    out = args.out or "tokenizer.json"
    TK.save_tokenizer(tok, out)
    log.info("wrote %s tokenizer with %d entries to %s", kind, len(tok), out)


def _run_training(cfg, out_dir, init=None):
    train_ds = _load_dataset(cfg["data"]["train"], cfg["data"])
    if train_ds is None:
        raise ConfigurationError("data.train is required")
    valid_ds = _load_dataset(cfg["data"]["valid"], cfg["data"])
    train_pairs, valid_pairs = _pairs(train_ds, cfg), _pairs(valid_ds, cfg)
    if init is not None:
        model, src_tok, tgt_tok = load_run(init)
    else:
        src_tok, tgt_tok = _tokenizers(cfg, train_pairs)
        mcfg = dict(cfg["model"], src_vocab_size=len(src_tok), tgt_vocab_size=len(tgt_tok))
        model = M.build(M.ModelConfig.from_dict(mcfg), seed=cfg["train"]["seed"])
    tcfg = TR.TrainConfig.from_dict(cfg["train"])
    L = model.config.max_len
    tr = P.encode_pairs(src_tok, tgt_tok, train_pairs, L)
    va = P.encode_pairs(src_tok, tgt_tok, valid_pairs, L)
    best, history = TR.train_loop(model, tr, va, tcfg)
    _save_run(out_dir, best, history, src_tok, tgt_tok, cfg)
    log.info("saved checkpoint to %s", out_dir)


def cmd_train(args, cfg):
    _run_training(cfg, args.out or "run")


def cmd_finetune(args, cfg):
    _run_training(cfg, args.out or "run-ft", init=args.init)


def cmd_translate(args, cfg):
    model, src_tok, tgt_tok = load_run(args.checkpoint)
    dcfg = DecodeConfig.from_dict(dict(cfg["decode"], bos_id=model.config.bos_id,
                                       eos_id=model.config.eos_id))
    lines = _read_lines(args.input)
    results = P.translate(model, src_tok, tgt_tok, lines, dcfg)
    rows = [json.dumps({"source": src, "candidates": [{"text": t, "score": s} for t, s in cands]},
                       ensure_ascii=False)
            for src, cands in zip(lines, results)]
    _write(args.out, "".join(r + "\n" for r in rows))


def cmd_augment(args, cfg):
    base = C.load_labeled(args.base)
    ac = cfg["augment"]
    fields_ = tuple(ac["source_fields"])
    dcfg = DecodeConfig.from_dict(cfg["decode"])
    paths = {"intent": args.intent_model, "rewritten_intent": args.rewritten_model}
    models = {}
    for f in fields_:
        if paths.get(f):
            model, st, tt = load_run(paths[f])
            models[f] = A.ModelTranslator(model, st, tt, dcfg)
    acfg = A.AugmentConfig(fields_, args.top_k or ac["top_k"], dcfg, ac["dedup"])
    sets = A.back_translate(models, base, acfg)
    out_dir = args.out or "augmented"
    os.makedirs(out_dir, exist_ok=True)
    for ds in sets:
        C.export(ds, os.path.join(out_dir, ds.name.split(":", 1)[1].replace(":", "_") + ".json"))
    merged = C.assemble_augmented(base, sets)
    C.export(merged, os.path.join(out_dir, "assembled.json"))
    log.info("assembled %d examples from base %d", len(merged), len(base))


def cmd_eval(args, cfg):
    ec = cfg["eval"]
    hyps, refs = _read_lines(args.hyps), _read_lines(args.refs)
    cands = None
    if args.candidates:
        cands = [[c["text"] for c in json.loads(line)["candidates"]]
                 for line in _read_lines(args.candidates) if line.strip()]
    checker = ec["checker"]
    report = E.evaluate(hyps, refs, side=args.side or ec["side"], candidate_lists=cands,
                        k=args.k or ec["k"], checker=None if checker == "builtin" else checker,
                        max_n=ec["max_n"])
    _write(args.out, report.to_json() + "\n")


def cmd_bootstrap(args, cfg):
    a, b, refs = _read_lines(args.hyps_a), _read_lines(args.hyps_b), _read_lines(args.refs)
    side = args.side or cfg["eval"]["side"]
    tok = lambda xs: [E.tokenize_side(x, side) for x in xs]  # noqa: E731
    seed = args.seed if args.seed is not None else 0
    res = E.paired_bootstrap(None, tok(a), tok(b), tok(refs), n_samples=args.samples, seed=seed)
    _write(args.out, res.to_json() + "\n")


def fill_mask(model, tok, text, top_k=5):
    """Ranked (token, probability) candidates for the single mask in ``text``."""
    if text.count(MASK_LITERAL) != 1:
        raise UsageError(f"text must contain exactly one {MASK_LITERAL} marker")
    left, right = text.split(MASK_LITERAL)
    ids = tok.encode(left) + [tok.mask_id] + tok.encode(right)
    pos = len(tok.encode(left))
    model.eval()
    with T.no_grad():
        logits = M.mlm_logits(model, np.asarray(ids[: model.config.max_len]))
    logp = T.log_softmax_np(logits.data[pos])
    probs = np.exp(logp)
    n_special = len(TK.SPECIAL_NAMES)
    order = [i for i in np.lexsort((np.arange(probs.size), -probs)) if i >= n_special][:top_k]
    return [(tok.vocab.id_to_token[i], float(probs[i])) for i in order]


def cmd_fill_mask(args, cfg):
    model, tok, _ = load_run(args.checkpoint)
    ranked = fill_mask(model, tok, args.text, args.top_k)
    _write(args.out, json.dumps([{"token": t, "probability": p} for t, p in ranked],
                                ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------- main

def build_parser():
    p = argparse.ArgumentParser(prog="nl2code", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("tokenizer-train", cmd_tokenizer_train, "train a tokenizer on a corpus")
    sp.add_argument("--corpus", required=True, help="text file (one item per line) or labeled JSON")
    sp.add_argument("--kind", choices=TK.KINDS)
    sp.add_argument("--vocab-size", type=int)
    sp.add_argument("--side", choices=("nl", "code"), default="code")
    add("train", cmd_train, "train a model from scratch")
    sp = add("finetune", cmd_finetune, "continue training from a checkpoint")
    sp.add_argument("--init", required=True)
    sp = add("translate", cmd_translate, "decode one source per input line")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp = add("augment", cmd_augment, "back-translate snippets into new intents")
    sp.add_argument("--base", required=True)
    sp.add_argument("--intent-model")
    sp.add_argument("--rewritten-model")
    sp.add_argument("--top-k", type=int)
    sp = add("eval", cmd_eval, "score hypotheses against references")
    sp.add_argument("--hyps", required=True)
    sp.add_argument("--refs", required=True)
    sp.add_argument("--candidates", help="translate output (JSON lines) for top-k accuracy")
    sp.add_argument("--side", choices=("code", "nl"))
    sp.add_argument("--k", type=int)
    sp = add("bootstrap", cmd_bootstrap, "paired bootstrap significance test")
    sp.add_argument("--hyps-a", required=True)
    sp.add_argument("--hyps-b", required=True)
    sp.add_argument("--refs", required=True)
    sp.add_argument("--samples", type=int, default=10000)
    sp.add_argument("--side", choices=("code", "nl"))
    sp = add("fill-mask", cmd_fill_mask, "rank candidates for one <mask> in a text")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--text", required=True)
    sp.add_argument("--top-k", type=int, default=5)
    return p


def _error_line(exc, code):
    return json.dumps({"error": getattr(exc, "kind", type(exc).__name__), "exit_code": code,
                       "message": str(exc)}, ensure_ascii=False)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        try:
            args, rest = parser.parse_known_args(argv)
        except SystemExit as exc:
            if exc.code in (0, None):
                return 0
            raise UsageError("invalid command line (see --help)") from None
        cfg = resolve_config(args.config, parse_overrides(rest), args.seed)
        args.fn(args, cfg)
    except NL2CodeError as exc:
        print(_error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        err = DataError(str(exc)) if isinstance(exc, FileNotFoundError) else EnvironmentProblem(str(exc))
        print(_error_line(err, err.exit_code), file=sys.stderr)
        return err.exit_code
    except TypeError as exc:
        # dataclass constructors reject wrongly typed or unknown config values this way
        print(_error_line(ConfigurationError(str(exc)), 2), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
