"""Unigram language-model tokenizer trained by EM with loss-based pruning."""
from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from ..errors import ConfigurationError
from .bpe import WORD_MARK, word_counts
from .vocab import SPECIAL_NAMES, Vocab

EM_ITERATIONS = 2
_FLOOR = 1e-6


def _logsumexp(a, b):
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def _forward(word, logp, max_len, skip=None):
    n = len(word)
    alpha = [-math.inf] * (n + 1)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        acc = -math.inf
        for i in range(max(0, j - max_len), j):
            if alpha[i] == -math.inf:
                continue
            piece = word[i:j]
            lp = logp.get(piece)
            if lp is None or piece == skip:
                continue
            acc = _logsumexp(acc, alpha[i] + lp)
        alpha[j] = acc
    return alpha


def _backward(word, logp, max_len):
    n = len(word)
    beta = [-math.inf] * (n + 1)
    beta[n] = 0.0
    for i in range(n - 1, -1, -1):
        acc = -math.inf
        for j in range(i + 1, min(n, i + max_len) + 1):
            if beta[j] == -math.inf:
                continue
            lp = logp.get(word[i:j])
            if lp is None:
                continue
            acc = _logsumexp(acc, lp + beta[j])
        beta[i] = acc
    return beta


def log_likelihood(words, freqs, logp):
    """Corpus marginal log-likelihood: sum over words of freq * log sum over segmentations."""
    max_len = max(map(len, logp))
    return sum(f * _forward(w, logp, max_len)[-1] for w, f in zip(words, freqs))


def _em_step(words, freqs, logp):
    max_len = max(map(len, logp))
    counts = defaultdict(float)
    for w, f in zip(words, freqs):
        alpha = _forward(w, logp, max_len)
        beta = _backward(w, logp, max_len)
        z = alpha[-1]
        n = len(w)
        for i in range(n):
            if alpha[i] == -math.inf:
                continue
            for j in range(i + 1, min(n, i + max_len) + 1):
                piece = w[i:j]
                lp = logp.get(piece)
                if lp is None or beta[j] == -math.inf:
                    continue
                counts[piece] += f * math.exp(alpha[i] + lp + beta[j] - z)
    total = sum(max(counts.get(p, 0.0), _FLOOR) for p in logp)
    return {p: math.log(max(counts.get(p, 0.0), _FLOOR) / total) for p in logp}


def removal_losses(words, freqs, logp, candidates):
    """Increase of the negative log-likelihood when each candidate piece is removed."""
    max_len = max(map(len, logp))
    base = [_forward(w, logp, max_len)[-1] for w in words]
    out = {}
    for piece in candidates:
        inc = 0.0
        for k, w in enumerate(words):
            if piece in w:
                inc += freqs[k] * (base[k] - _forward(w, logp, max_len, skip=piece)[-1])
        out[piece] = inc
    return out


def seed_pieces(words, freqs, seed_size):
    chars = defaultdict(int)
    subs = defaultdict(int)
    for w, f in zip(words, freqs):
        for i in range(len(w)):
            chars[w[i]] += f
            for j in range(i + 2, len(w) + 1):
                subs[w[i:j]] += f
    top = sorted(subs.items(), key=lambda kv: (-kv[1], kv[0]))[:seed_size]
    return dict(sorted(chars.items())), dict(top)


def train_unigram(corpus, vocab_size, seed_size=1000, prune_fraction=0.2):
    from .base import TokenizerModel

    if not 0.0 < prune_fraction < 1.0:
        raise ConfigurationError("prune_fraction must lie in (0, 1)")
    counts = sorted(word_counts(corpus).items())
    words = [WORD_MARK + w for w, _ in counts]
    freqs = [c for _, c in counts]
    chars, subs = seed_pieces(words, freqs, seed_size)
    floor = len(SPECIAL_NAMES) + len(chars)
    if vocab_size < floor:
        raise ConfigurationError(
            f"vocab_size {vocab_size} is below the {floor} base characters and specials")
    total = sum(chars.values()) + sum(subs.values())
    logp = {p: math.log(c / total) for p, c in {**chars, **subs}.items()}
    base = set(chars)
    target = vocab_size - len(SPECIAL_NAMES)
    while True:
        for _ in range(EM_ITERATIONS):
            logp = _em_step(words, freqs, logp)
        if len(logp) <= target:
            break
        prunable = sorted(p for p in logp if p not in base)
        losses = removal_losses(words, freqs, logp, prunable)
        k = max(1, int(math.floor(prune_fraction * len(prunable))))
        k = min(k, len(logp) - target)
        drop = sorted(prunable, key=lambda p: (losses[p], p))[:k]
        for p in drop:
            del logp[p]
    pieces = sorted(logp, key=lambda p: (-logp[p], p))
    vocab = Vocab(pieces)
    return TokenizerModel(kind="unigram", vocab=vocab, piece_logprob=dict(logp))


def viterbi(word, logp, max_len, unk_score=-1e6):
    """Best segmentation of ``word``; characters outside the model become single unknown pieces."""
    n = len(word)
    best = np.full(n + 1, -np.inf)
    back = [0] * (n + 1)
    best[0] = 0.0
    for j in range(1, n + 1):
        for i in range(max(0, j - max_len), j):
            if best[i] == -np.inf:
                continue
            lp = logp.get(word[i:j])
            if lp is None:
                if j - i != 1:
                    continue
                lp = unk_score
            s = best[i] + lp
            if s > best[j]:
                best[j] = s
                back[j] = i
    pieces = []
    j = n
    while j > 0:
        i = back[j]
        pieces.append(word[i:j])
        j = i
    return pieces[::-1]
