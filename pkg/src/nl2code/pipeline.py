"""Glue between text, tokenizers, models and decoders."""
from __future__ import annotations

import logging

from . import tokenizers as TK
from .decode import DecodeConfig, generate, greedy_batch

log = logging.getLogger(__name__)


def encode_pairs(src_tok, tgt_tok, pairs, max_len):
    """Token-id pairs, truncated so both sides fit the positional table.

    Source keeps ``max_len`` ids, target ``max_len - 1`` (bos or eos takes the
    last slot). The number of truncated pairs is logged.
    """
    out, cut = [], 0
    for src, tgt in pairs:
        x, y = src_tok.encode(src), tgt_tok.encode(tgt)
        if len(x) > max_len or len(y) > max_len - 1:
            cut += 1
        out.append((x[:max_len], y[: max_len - 1]))
    if cut:
        log.info("truncated %d of %d pairs to max_len=%d", cut, len(pairs), max_len)
    return out


def train_pair_tokenizers(kind, vocab_size, pairs, min_frequency=1):
    """Separate source and target tokenizers trained on the two sides of ``pairs``."""
    src = TK.train(kind, [s for s, _ in pairs], vocab_size, min_frequency)
    tgt = TK.train(kind, [t for _, t in pairs], vocab_size, min_frequency)
    return src, tgt


def translate(model, src_tok, tgt_tok, texts, cfg):
    """Per input text, a best-first list of (text, score)."""
    out = []
    mc = model.config
    for text in texts:
        ids = src_tok.encode(text)[: mc.max_len]
        hyps = generate(model, ids, cfg)
        out.append([(tgt_tok.decode(h.tokens), h.score) for h in hyps])
    return out


def greedy_texts(model, src_tok, tgt_tok, texts, max_length=48):
    mc = model.config
    srcs = [src_tok.encode(t)[: mc.max_len] for t in texts]
    hyps = greedy_batch(model, srcs, DecodeConfig(strategy="greedy", max_length=max_length))
    return [tgt_tok.decode(h.tokens) for h in hyps]
