"""Optimisation: one-cycle schedule, Adam, the training loop and checkpoint files."""
from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import model as M
from . import objectives as O
from . import tensor as T
from .errors import (ConfigurationError, CorruptionError, IncompatibleVersionError,
                     NumericalError, UsageError)

log = logging.getLogger(__name__)

MAGIC = b"NLCF"
FORMAT_VERSION = 1


# ----------------------------------------------------------------- schedules

@dataclass
class OneCycleSchedule:
    lr_max: float = 1e-3
    div_factor: float = 25.0
    mom_max: float = 0.95
    mom_min: float = 0.85
    total_steps: int = 1000
    peak_fraction: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.peak_fraction < 1.0:
            raise ConfigurationError("peak_fraction must lie in (0, 1)")
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")

    def boundaries(self):
        """Step positions (float) where phase 1 ends and phase 2 ends."""
        peak = self.peak_fraction * self.total_steps
        # phase 2 mirrors phase 1 when there is room, otherwise splits the remainder
        down = peak + min(peak, (self.total_steps - peak) / 2.0)
        return peak, down


def _cos_interp(start, end, frac):
    w = 0.5 * (1.0 + math.cos(math.pi * frac))
    return start * w + end * (1.0 - w)


def one_cycle_at(step, schedule):
    """(lr, momentum) at ``step`` of a three-phase cosine one-cycle schedule."""
    s = schedule
    if not 0 <= step <= s.total_steps:
        raise UsageError(f"step {step} outside [0, {s.total_steps}]")
    lr_start = s.lr_max / s.div_factor
    lr_end = s.lr_max / (s.div_factor * 100)
    peak, down = s.boundaries()
    if step <= peak:
        f = step / peak
        return _cos_interp(lr_start, s.lr_max, f), _cos_interp(s.mom_max, s.mom_min, f)
    if step <= down:
        f = (step - peak) / (down - peak)
        return _cos_interp(s.lr_max, lr_start, f), _cos_interp(s.mom_min, s.mom_max, f)
    f = (step - down) / (s.total_steps - down)
    return _cos_interp(lr_start, lr_end, f), s.mom_max


# -------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    grad_accum_steps: int = 1
    clip_norm: float = 1.0
    patience: int = 3
    seed: int = 0
    lr: float = 1e-3
    schedule: str = "one_cycle"  # or "constant"
    div_factor: float = 25.0
    peak_fraction: float = 0.3
    mom_max: float = 0.95
    mom_min: float = 0.85
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    objective: str = "seq2seq"  # seq2seq | denoise | mlm
    noise_kinds: tuple = ("infill",)
    noise: dict = field(default_factory=dict)
    valid_bleu: bool = True
    valid_bleu_max: int = 200
    decode_max_length: int = 48

    def __post_init__(self):
        if self.grad_accum_steps < 1:
            raise ConfigurationError("grad_accum_steps must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if self.objective not in ("seq2seq", "denoise", "mlm"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.schedule not in ("one_cycle", "constant"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        self.noise_kinds = tuple(self.noise_kinds)

    def to_dict(self):
        d = asdict(self)
        d["noise_kinds"] = list(self.noise_kinds)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def updates_per_epoch(n_examples, batch_size, grad_accum_steps):
    n_batches = math.ceil(n_examples / batch_size)
    return math.ceil(n_batches / grad_accum_steps)


# ---------------------------------------------------------------------- adam

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update applied in place to ``params`` (name -> Tensor)."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}", parameter=name)
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values() if g is not None))
    if max_norm > 0 and total > max_norm:
        s = max_norm / total
        for g in grads.values():
            if g is not None:
                g *= s
    return total


# --------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    config: M.ModelConfig
    params: OrderedDict
    step: int = 0
    history: list = field(default_factory=list)
    tokenizers: dict = field(default_factory=dict)

    def to_model(self):
        m = M.build(self.config, seed=0)
        m.load_state_dict(self.params)
        return m

    @classmethod
    def from_model(cls, model, step=0, history=None, tokenizers=None):
        return cls(model.config, model.state_dict(), step, list(history or []), dict(tokenizers or {}))


def save_checkpoint(obj, path, step=None, history=None, tokenizers=None):
    """Write a model or Checkpoint in the NLCF binary format."""
    ckpt = obj if isinstance(obj, Checkpoint) else Checkpoint.from_model(obj)
    if step is not None:
        ckpt.step = step
    if history is not None:
        ckpt.history = list(history)
    if tokenizers is not None:
        ckpt.tokenizers = dict(tokenizers)
    manifest = []
    payload = bytearray()
    for name, arr in ckpt.params.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(raw)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.config.to_dict(),
        "tokenizers": ckpt.tokenizers,
        "step": ckpt.step,
        "history": ckpt.history,
        "manifest": manifest,
    }
    hbytes = json.dumps(header, indent=1, sort_keys=True).encode("utf-8")
    blob = (MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(hbytes)) + hbytes
            + bytes(payload) + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    with open(path, "wb") as fh:
        fh.write(blob)


def read_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CorruptionError(f"{path}: not an NLCF checkpoint")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise IncompatibleVersionError(
            f"{path}: checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen + 4 > len(blob):
        raise CorruptionError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptionError(f"{path}: unreadable header") from None
    payload = blob[16 + hlen:-4]
    (crc,) = struct.unpack("<I", blob[-4:])
    config = M.ModelConfig.from_dict(header["model_config"])
    expected = M.param_shapes(config)
    size = sum(4 * int(np.prod(s)) for s in expected.values())
    if len(payload) != size or zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CorruptionError(f"{path}: payload checksum or size mismatch")
    params = OrderedDict()
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        if expected.get(entry["name"]) != shape:
            raise CorruptionError(f"{path}: manifest entry {entry['name']} does not match config")
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=entry["offset"])
        params[entry["name"]] = arr.astype(np.float64).reshape(shape)
    if set(params) != set(expected):
        raise CorruptionError(f"{path}: manifest does not cover every parameter")
    return Checkpoint(config, params, header.get("step", 0), header.get("history", []),
                      header.get("tokenizers", {}))


def load_checkpoint(path):
    """Model rebuilt from an NLCF file (parameters at float32 precision, stored as float64)."""
    return read_checkpoint(path).to_model()


# --------------------------------------------------------------------- batches

def make_batch(pairs, pad_id, bos_id, eos_id):
    """Pad (src, tgt) id lists: src, decoder input (bos + y), decoder target (y + eos)."""
    b = len(pairs)
    s = max(1, max(len(p[0]) for p in pairs))
    t = max(len(p[1]) for p in pairs) + 1
    src = np.full((b, s), pad_id, dtype=np.int64)
    tin = np.full((b, t), pad_id, dtype=np.int64)
    tout = np.full((b, t), pad_id, dtype=np.int64)
    for i, (x, y) in enumerate(pairs):
        src[i, :len(x)] = x
        tin[i, 0] = bos_id
        tin[i, 1:len(y) + 1] = y
        tout[i, :len(y)] = y
        tout[i, len(y)] = eos_id
    return src, tin, tout


def batches(pairs, batch_size, rng=None):
    """Length-bucketed batches; with ``rng`` the bucket contents and order are shuffled."""
    idx = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    chunk = batch_size * 20
    out = []
    for c in range(0, len(idx), chunk):
        part = sorted(idx[c:c + chunk], key=lambda i: (len(pairs[i][0]), len(pairs[i][1])))
        out.extend(part[k:k + batch_size] for k in range(0, len(part), batch_size))
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return [[pairs[i] for i in b] for b in out]


def _rng(seed, name):
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def batch_loss(model, batch, cfg, rng=None):
    """Loss Tensor for one batch under ``cfg.objective`` (and the token count it covers)."""
    mc = model.config
    if cfg.objective == "mlm":
        noise = O.NoiseConfig(**cfg.noise)
        seqs = [x for x, _ in batch]
        L = max(len(x) for x in seqs)
        ids = np.full((len(seqs), L), mc.pad_id, dtype=np.int64)
        labels = np.full((len(seqs), L), O.IGNORE, dtype=np.int64)
        for i, x in enumerate(seqs):
            c, lab = O.mlm_mask(x, noise, rng, mc.src_vocab_size)
            ids[i, :len(x)] = c
            labels[i, :len(x)] = lab
        if np.all(labels == O.IGNORE):
            # guarantee at least one prediction per batch
            labels[0, 0] = seqs[0][0]
            ids[0, 0] = O.MASK_ID
        logits = M.mlm_logits(model, ids)
        return T.cross_entropy(logits, labels, O.IGNORE), int((labels != O.IGNORE).sum())
    if cfg.objective == "denoise":
        noise = O.NoiseConfig(**cfg.noise)
        batch = [O.denoise_pair(y, noise, rng, cfg.noise_kinds) for _, y in batch]
    src, tin, tout = make_batch(batch, mc.pad_id, mc.bos_id, mc.eos_id)
    logits = M.forward(model, src, tin)
    return O.seq2seq_nll(logits, tout, mc.pad_id), int((tout != mc.pad_id).sum())


def evaluate_loss(model, pairs, cfg, batch_size=64):
    """Token-weighted mean loss over ``pairs`` (deterministic, no dropout)."""
    model.eval()
    total, count = 0.0, 0
    rng = _rng(cfg.seed, "valid")
    with T.no_grad():
        for b in batches(pairs, batch_size):
            loss, n = batch_loss(model, b, cfg, rng)
            total += float(loss.data) * n
            count += n
    return total / max(count, 1)


def token_accuracy_tf(model, pairs, batch_size=64):
    """Teacher-forced argmax accuracy over target tokens (eos included)."""
    mc = model.config
    model.eval()
    hit = tot = 0
    with T.no_grad():
        for b in batches(pairs, batch_size):
            src, tin, tout = make_batch(b, mc.pad_id, mc.bos_id, mc.eos_id)
            pred = M.forward(model, src, tin).data.argmax(-1)
            mask = tout != mc.pad_id
            hit += int(((pred == tout) & mask).sum())
            tot += int(mask.sum())
    return hit / max(tot, 1)


def _valid_bleu(model, pairs, cfg):
    from .decode import DecodeConfig, greedy_batch
    from .evaluation import corpus_bleu

    sub = pairs[: cfg.valid_bleu_max]
    dc = DecodeConfig(strategy="greedy", max_length=min(cfg.decode_max_length, model.config.max_len - 1))
    hyps = greedy_batch(model, [x for x, _ in sub], dc)
    refs = [[str(t) for t in y] for _, y in sub]
    return corpus_bleu([[str(t) for t in h.tokens] for h in hyps], refs)


def train_loop(model, train_pairs, valid_pairs, cfg, on_epoch=None):
    """Train ``model`` in place; returns (best-validation Checkpoint, history).

    ``train_pairs``/``valid_pairs`` are lists of (source ids, target ids)
    without special tokens. History holds one dict per epoch.
    """
    if not train_pairs:
        raise ConfigurationError("empty training set")
    mc = model.config
    if cfg.objective == "denoise" and mc.src_vocab_size != mc.tgt_vocab_size:
        raise ConfigurationError("denoising needs a shared source/target vocabulary")
    data_rng = _rng(cfg.seed, "shuffle")
    noise_rng = _rng(cfg.seed, "masking")
    model.train(_rng(cfg.seed, "dropout"))
    params = model.parameters()
    state = AdamState()
    n_updates = updates_per_epoch(len(train_pairs), cfg.batch_size, cfg.grad_accum_steps)
    total = max(1, n_updates * cfg.epochs)
    sched = OneCycleSchedule(cfg.lr, cfg.div_factor, cfg.mom_max, cfg.mom_min, total, cfg.peak_fraction)
    history = []
    best_loss = math.inf
    best = Checkpoint.from_model(model, 0, [])
    bad_epochs = 0
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        ep_loss, ep_tok, micro = 0.0, 0, 0
        epoch_batches = batches(train_pairs, cfg.batch_size, data_rng)
        model.zero_grad()
        for bi, b in enumerate(epoch_batches):
            loss, ntok = batch_loss(model, b, cfg, noise_rng)
            if not np.isfinite(loss.data):
                raise NumericalError(f"loss diverged at epoch {epoch}, step {step}", checkpoint=best)
            ep_loss += float(loss.data) * ntok
            ep_tok += ntok
            T.backward(T.scale(loss, 1.0 / cfg.grad_accum_steps))
            micro += 1
            if micro == cfg.grad_accum_steps or bi == len(epoch_batches) - 1:
                grads = {n: p.grad for n, p in params.items()}
                norm = clip_grad_norm(grads, cfg.clip_norm)
                if cfg.schedule == "one_cycle":
                    lr, beta1 = one_cycle_at(min(step, total), sched)
                else:
                    lr, beta1 = cfg.lr, cfg.beta1
                try:
                    adam_step(params, grads, state, lr, beta1, cfg.beta2, cfg.adam_eps)
                except NumericalError as exc:
                    exc.checkpoint = best
                    raise
                step += 1
                micro = 0
                model.zero_grad()
        rec = {"epoch": epoch, "step": step, "train_loss": ep_loss / max(ep_tok, 1),
               "grad_norm": norm}
        if valid_pairs:
            rec["valid_loss"] = evaluate_loss(model, valid_pairs, cfg)
            if cfg.valid_bleu and cfg.objective == "seq2seq":
                rec["valid_bleu"] = _valid_bleu(model, valid_pairs, cfg)
        history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 4) if isinstance(v, float) else v for k, v in rec.items()})
        if on_epoch is not None:
            on_epoch(rec, model)
        monitored = rec.get("valid_loss", rec["train_loss"])
        if monitored < best_loss:
            best_loss = monitored
            best = Checkpoint.from_model(model, step, [])
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                log.info("early stop after epoch %d", epoch)
                break
    best.history = list(history)
    model.eval()
    return best, history
