"""Training losses and input corruption: MLE, dynamic masking, and the denoising transforms."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, UsageError
from .tokenizers.vocab import EOS_ID, MASK_ID, SEP_ID, SPECIAL_NAMES

IGNORE = -100
NOISE_KINDS = ("token_mask", "token_delete", "infill", "permute_sentences", "rotate")


@dataclass
class NoiseConfig:
    mask_prob: float = 0.15
    mask_token_frac: float = 0.8
    random_token_frac: float = 0.1
    keep_frac: float = 0.1
    poisson_lambda: float = 3.0
    deletion_prob: float = 0.1
    rotation: bool = False
    permute_sentences: bool = False
    seed: int = 0

    def __post_init__(self):
        total = self.mask_token_frac + self.random_token_frac + self.keep_frac
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"mask/random/keep fractions sum to {total}, not 1")
        for name in ("mask_prob", "deletion_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.poisson_lambda <= 0:
            raise ConfigurationError("poisson_lambda must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown noise config keys: {sorted(unknown)}")
        return cls(**d)


def seq2seq_nll(logits, target_ids, pad_id=0):
    """Mean negative log-likelihood of ``target_ids`` over non-pad positions."""
    targets = np.asarray(target_ids, dtype=np.int64)
    if np.all(targets == pad_id):
        raise UsageError("degenerate batch: every target position is padding")
    labels = np.where(targets == pad_id, IGNORE, targets)
    return T.cross_entropy(logits, labels, ignore_index=IGNORE)


def mlm_mask(tokens, cfg, rng, vocab_size, mask_id=MASK_ID, n_special=len(SPECIAL_NAMES)):
    """Dynamic masked-LM corruption; a fresh pattern is drawn from ``rng`` on every call.

    Returns (corrupted ids, labels) where labels hold the original id at
    selected positions and ``IGNORE`` elsewhere. Random replacements are drawn
    from the non-special ids ``[n_special, vocab_size)``.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    selected = rng.random(ids.shape) < cfg.mask_prob
    action = rng.random(ids.shape)
    to_mask = selected & (action < cfg.mask_token_frac)
    to_random = selected & (action >= cfg.mask_token_frac) \
        & (action < cfg.mask_token_frac + cfg.random_token_frac)
    randoms = rng.integers(n_special, vocab_size, size=ids.shape)
    corrupted = np.where(to_mask, mask_id, np.where(to_random, randoms, ids))
    labels = np.where(selected, ids, IGNORE)
    return corrupted, labels


def sample_span_lengths(rng, lam, n):
    return rng.poisson(lam, size=n)


def infill_spans(n_tokens, cfg, rng, max_draws=None):
    """Sample Poisson-length spans until ``mask_prob`` of the positions are covered.

    Returns merged ``(start, length)`` spans sorted by start; zero-length spans
    mark insertion points.
    """
    target = int(round(cfg.mask_prob * n_tokens))
    covered = np.zeros(n_tokens, dtype=bool)
    spans = []
    max_draws = max_draws if max_draws is not None else 10 * n_tokens + 100
    draws = 0
    while covered.sum() < target and draws < max_draws:
        length = int(sample_span_lengths(rng, cfg.poisson_lambda, 1)[0])
        start = int(rng.integers(0, n_tokens + (1 if length == 0 else 1 - min(length, n_tokens))))
        length = min(length, n_tokens - start)
        spans.append((start, length))
        covered[start:start + length] = True
        draws += 1
    return _merge_spans(spans)


def _merge_spans(spans):
    nonzero = sorted((s, s + l) for s, l in spans if l > 0)
    merged = []
    for s, e in nonzero:
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    out = [(s, e - s) for s, e in merged]
    for s, l in spans:
        if l == 0 and not any(a < s < a + b for a, b in out) and (s, 0) not in out:
            out.append((s, 0))
    return sorted(out, key=lambda x: (x[0], x[1]))


def text_infill(tokens, cfg, rng, mask_id=MASK_ID):
    toks = list(tokens)
    spans = infill_spans(len(toks), cfg, rng)
    out = []
    pos = 0
    for start, length in spans:
        out.extend(toks[pos:start])
        out.append(mask_id)
        pos = max(pos, start + length)
    out.extend(toks[pos:])
    return out


def apply_noise(kind, tokens, cfg, rng, mask_id=MASK_ID, boundary_ids=(EOS_ID, SEP_ID),
                vocab_size=None):
    """Corrupt ``tokens`` with one denoising transformation."""
    toks = [int(t) for t in tokens]
    if kind not in NOISE_KINDS:
        raise UsageError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if not toks:
        raise UsageError("cannot corrupt an empty sequence")
    if kind == "token_mask":
        sel = rng.random(len(toks)) < cfg.mask_prob
        return [mask_id if s else t for t, s in zip(toks, sel)]
    if kind == "token_delete":
        keep = rng.random(len(toks)) >= cfg.deletion_prob
        return [t for t, k in zip(toks, keep) if k]
    if kind == "infill":
        return text_infill(toks, cfg, rng, mask_id)
    if kind == "rotate":
        k = int(rng.integers(0, len(toks)))
        return toks[k:] + toks[:k]
    segments, cur = [], []
    for t in toks:
        cur.append(t)
        if t in boundary_ids:
            segments.append(cur)
            cur = []
    if cur:
        segments.append(cur)
    order = rng.permutation(len(segments))
    return [t for i in order for t in segments[i]]


def denoise_pair(tokens, cfg, rng, kinds=("infill",), mask_id=MASK_ID):
    """(corrupted, original) pair by chaining the requested transformations."""
    out = list(tokens)
    for kind in kinds:
        if not out:
            break
        out = apply_noise(kind, out, cfg, rng, mask_id=mask_id)
    return out, list(tokens)
