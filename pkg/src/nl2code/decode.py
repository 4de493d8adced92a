"""Greedy, beam and sampling decoders.

A ``model`` is either a trained ``Model`` or any callable
``f(src_ids, prefixes) -> logits`` returning one row of next-token logits per
prefix; the latter makes toy distributions easy to decode exactly.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ConfigurationError
from .tensor import log_softmax_np


@dataclass
class DecodeConfig:
    strategy: str = "beam"
    beam_size: int = 4
    num_return_sequences: int = 1
    max_length: int = 48
    min_length: int = 0
    length_penalty: float = 1.0
    no_repeat_ngram_size: int = 3
    temperature: float = 1.0
    top_k: int = 50
    top_p: float = 1.0
    seed: int = 0
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        if self.strategy not in ("greedy", "beam", "sample"):
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.beam_size < 1:
            raise ConfigurationError("beam_size must be >= 1")
        if self.strategy == "beam" and self.num_return_sequences > self.beam_size:
            raise ConfigurationError("num_return_sequences cannot exceed beam_size")
        if self.min_length > self.max_length:
            raise ConfigurationError("min_length cannot exceed max_length")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if not 0.0 < self.top_p <= 1.0:
            raise ConfigurationError("top_p must lie in (0, 1]")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown decode config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Hypothesis:
    ids: list
    logprob: float
    finished: bool = True
    score: float = 0.0
    saturated: bool = False
    eos_id: int = field(default=2, repr=False)

    @property
    def tokens(self):
        """Generated ids without the leading bos and trailing eos."""
        out = self.ids[1:]
        return out[:-1] if out and out[-1] == self.eos_id else out


def _stepper(model, src_ids, cfg):
    if isinstance(model, M.Model):
        mc = model.config
        src = np.asarray(src_ids, dtype=np.int64).reshape(1, -1)
        if src.shape[1] == 0:
            src = np.full((1, 1), mc.pad_id, dtype=np.int64)
        pad = src == mc.pad_id
        model.eval()
        with T.no_grad():
            memory = M.encode(model, src, pad)

        def step(prefixes):
            with T.no_grad():
                return M.decode_step(model, memory, np.asarray(prefixes, dtype=np.int64), pad).data

        max_len = min(cfg.max_length, mc.max_len - 1)
        return step, mc.bos_id, mc.eos_id, max_len, (mc.pad_id, mc.bos_id)

    def step(prefixes):
        return np.asarray(model(src_ids, prefixes), dtype=np.float64)

    return step, cfg.bos_id, cfg.eos_id, cfg.max_length, (cfg.pad_id, cfg.bos_id)


def banned_tokens(ids, n):
    """Tokens that would complete an n-gram already present in ``ids``."""
    if n <= 0 or len(ids) < n:
        return set()
    key = tuple(ids[len(ids) - n + 1:])
    out = set()
    for i in range(len(ids) - n + 1):
        if tuple(ids[i:i + n - 1]) == key:
            out.add(ids[i + n - 1])
    return out


def _constrain(row, ids, cfg, eos, never=()):
    row = row.copy()
    # pad and bos are never generated
    row[list(never)] = -np.inf
    if len(ids) - 1 < cfg.min_length:
        row[eos] = -np.inf
    for tok in banned_tokens(ids, cfg.no_repeat_ngram_size):
        row[tok] = -np.inf
    return row


def _argmax_low(row):
    # first maximum -> lowest id on ties
    return int(np.argmax(row))


def _finish(ids, logprob, cfg, eos, saturated=False):
    score = logprob / (len(ids) ** cfg.length_penalty)
    return Hypothesis(list(ids), float(logprob), True, float(score), saturated, eos)


def greedy(model, src_ids, cfg):
    step, bos, eos, max_len, never = _stepper(model, src_ids, cfg)
    ids, lp = [bos], 0.0
    for _ in range(max_len):
        row = _constrain(log_softmax_np(step([ids])[0]), ids, cfg, eos, never)
        if not np.isfinite(row).any():
            return _finish(ids + [eos], lp, cfg, eos, saturated=True)
        tok = _argmax_low(row)
        lp += float(row[tok])
        ids.append(tok)
        if tok == eos:
            break
    return _finish(ids, lp, cfg, eos)


def beam_search(model, src_ids, cfg):
    """Best-first list of ``num_return_sequences`` hypotheses."""
    step, bos, eos, max_len, never = _stepper(model, src_ids, cfg)
    k = cfg.beam_size
    live = [([bos], 0.0)]
    finished = []
    for _ in range(max_len):
        logp = log_softmax_np(step([ids for ids, _ in live]))
        cands = []
        for bi, (ids, lp) in enumerate(live):
            row = _constrain(logp[bi], ids, cfg, eos, never)
            finite = np.nonzero(np.isfinite(row))[0]
            if finite.size == 0:
                finished.append(_finish(ids + [eos], lp, cfg, eos, saturated=True))
                continue
            order = finite[np.lexsort((finite, -row[finite]))][: 2 * k]
            cands.extend((lp + float(row[t]), bi, float(row[t]), int(t)) for t in order)
        cands.sort(key=lambda c: (-c[0], c[1], -c[2], c[3]))
        new_live = []
        for total, bi, _, tok in cands:
            ids = live[bi][0] + [tok]
            if tok == eos:
                finished.append(_finish(ids, total, cfg, eos))
                if len(finished) >= k:
                    break
            else:
                new_live.append((ids, total))
                if len(new_live) == k:
                    break
        live = new_live
        if len(finished) >= k or not live:
            break
    else:
        finished.extend(_finish(ids, lp, cfg, eos) for ids, lp in live)
    if not finished:
        finished.extend(_finish(ids, lp, cfg, eos) for ids, lp in live)
    finished.sort(key=lambda h: -h.score)
    return finished[: cfg.num_return_sequences]


def filter_probs(logits, temperature=1.0, top_k=0, top_p=1.0):
    """Temperature, top-k and nucleus filtering; returns a renormalised distribution."""
    z = np.asarray(logits, dtype=np.float64) / temperature
    order = np.lexsort((np.arange(z.size), -z))
    keep = np.zeros(z.size, dtype=bool)
    kept = order if top_k <= 0 else order[:top_k]
    keep[kept] = True
    z = np.where(keep, z, -np.inf)
    p = np.exp(z - z.max())
    p /= p.sum()
    if top_p < 1.0:
        ranked = p[order]
        cut = int(np.searchsorted(np.cumsum(ranked), top_p)) + 1
        nucleus = np.zeros(z.size, dtype=bool)
        nucleus[order[:cut]] = True
        p = np.where(nucleus, p, 0.0)
        p /= p.sum()
    return p


def sample(model, src_ids, cfg, rng=None):
    step, bos, eos, max_len, never = _stepper(model, src_ids, cfg)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    ids, lp = [bos], 0.0
    for _ in range(max_len):
        logits = _constrain(step([ids])[0].astype(np.float64), ids, cfg, eos, never)
        if not np.isfinite(logits).any():
            return _finish(ids + [eos], lp, cfg, eos, saturated=True)
        p = filter_probs(logits, cfg.temperature, cfg.top_k, cfg.top_p)
        tok = int(rng.choice(p.size, p=p))
        lp += float(np.log(p[tok]))
        ids.append(tok)
        if tok == eos:
            break
    return _finish(ids, lp, cfg, eos)


def generate(model, src_ids, cfg):
    """Dispatch on ``cfg.strategy``; always returns a list of hypotheses."""
    if cfg.strategy == "greedy":
        return [greedy(model, src_ids, cfg)]
    if cfg.strategy == "sample":
        return [sample(model, src_ids, cfg)]
    return beam_search(model, src_ids, cfg)


def greedy_batch(model, srcs, cfg):
    """Greedy decoding of many sources at once (no n-gram constraint); used for validation."""
    mc = model.config
    model.eval()
    out = []
    bs = 64
    for start in range(0, len(srcs), bs):
        chunk = srcs[start:start + bs]
        width = max(1, max(len(s) for s in chunk))
        src = np.full((len(chunk), width), mc.pad_id, dtype=np.int64)
        for i, s in enumerate(chunk):
            src[i, :len(s)] = s
        pad = src == mc.pad_id
        max_len = min(cfg.max_length, mc.max_len - 1)
        with T.no_grad():
            memory = M.encode(model, src, pad)
            ids = np.full((len(chunk), 1), mc.bos_id, dtype=np.int64)
            done = np.zeros(len(chunk), dtype=bool)
            lps = np.zeros(len(chunk))
            for t in range(max_len):
                logp = log_softmax_np(M.decode_step(model, memory, ids, pad).data)
                logp[:, [mc.pad_id, mc.bos_id]] = -np.inf
                if t < cfg.min_length:
                    logp[:, mc.eos_id] = -np.inf
                nxt = logp.argmax(-1)
                nxt = np.where(done, mc.pad_id, nxt)
                lps += np.where(done, 0.0, logp[np.arange(len(chunk)), nxt])
                ids = np.concatenate([ids, nxt[:, None]], axis=1)
                done |= nxt == mc.eos_id
                if done.all():
                    break
        for i in range(len(chunk)):
            row = [int(x) for x in ids[i]]
            if mc.eos_id in row:
                row = row[: row.index(mc.eos_id) + 1]
            out.append(_finish(row, lps[i], cfg, mc.eos_id))
    return out
