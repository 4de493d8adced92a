"""Byte pair encoding over characters and over raw bytes."""
from __future__ import annotations

import re
from collections import Counter, defaultdict
from functools import lru_cache

from ..errors import ConfigurationError
from .vocab import SPECIAL_NAMES, Vocab

WORD_MARK = "▁"  # prefixed to every whitespace-delimited word

# GPT-2 style chunking with stdlib ``re``: a single leading space stays attached
# to the following letters / digits / punctuation run.
_BYTE_CHUNK = re.compile(r" ?[^\W\d_]+| ?\d+| ?(?:[^\s\w]|_)+|\s+(?!\S)|\s+")


@lru_cache(maxsize=1)
def bytes_to_unicode():
    """Map each byte 0..255 to a printable character (the GPT-2 table)."""
    keep = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) \
        + list(range(ord("®"), ord("ÿ") + 1))
    chars = keep[:]
    n = 0
    for b in range(256):
        if b not in keep:
            keep.append(b)
            chars.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(keep, chars)}


@lru_cache(maxsize=1)
def unicode_to_bytes():
    return {c: b for b, c in bytes_to_unicode().items()}


def byte_chunks(text):
    return _BYTE_CHUNK.findall(text)


def _best_pair(pair_counts):
    best, best_c = None, 0
    for pair, c in pair_counts.items():
        if c > best_c or (c == best_c and pair < best):
            best, best_c = pair, c
    return best, best_c


def _merge_word(word, pair, new):
    a, b = pair
    out = []
    i = 0
    n = len(word)
    while i < n:
        if i + 1 < n and word[i] == a and word[i + 1] == b:
            out.append(new)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


def learn_merges(word_freqs, min_frequency=1, max_merges=None, known=None, max_new_symbols=None):
    """Greedy pair merging over ``{tuple_of_symbols: frequency}``.

    Stops after ``max_merges`` merges, once ``max_new_symbols`` symbols not in
    ``known`` were created, or when no pair reaches ``min_frequency``.
    Equal counts are broken by the lexicographically smallest pair.
    Returns the merge list and the final segmentation of every word.
    """
    words = [list(w) for w in word_freqs]
    freqs = list(word_freqs.values())
    pair_counts = defaultdict(int)
    where = defaultdict(set)
    for wi, w in enumerate(words):
        f = freqs[wi]
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)
    known = set(known or ())
    merges = []
    n_new = 0
    while True:
        if max_merges is not None and len(merges) >= max_merges:
            break
        if max_new_symbols is not None and n_new >= max_new_symbols:
            break
        best, count = _best_pair(pair_counts)
        if best is None or count < min_frequency:
            break
        new = best[0] + best[1]
        merges.append(best)
        if new not in known:
            known.add(new)
            n_new += 1
        for wi in sorted(where.pop(best, ())):
            w = words[wi]
            f = freqs[wi]
            merged = _merge_word(w, best, new)
            if len(merged) == len(w):
                continue
            for pair in zip(w, w[1:]):
                pair_counts[pair] -= f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
            words[wi] = merged
        pair_counts.pop(best, None)
    segmentation = {key: tuple(w) for key, w in zip(word_freqs, words)}
    return merges, segmentation


def apply_merges(symbols, ranks):
    """Repeatedly merge the lowest-ranked adjacent pair (equivalent to replaying in order)."""
    word = list(symbols)
    while len(word) > 1:
        best, best_rank = None, None
        for pair in zip(word, word[1:]):
            r = ranks.get(pair)
            if r is not None and (best_rank is None or r < best_rank):
                best, best_rank = pair, r
        if best is None:
            break
        word = _merge_word(word, best, best[0] + best[1])
    return word


def word_counts(corpus):
    counts = Counter()
    for text in corpus:
        for w in text.split():
            counts[w] += 1
    return counts


def train_bpe(corpus, vocab_size, min_frequency=2):
    """Character-level BPE; every word carries a leading ``WORD_MARK`` symbol."""
    from .base import TokenizerModel

    if min_frequency < 1:
        raise ConfigurationError("min_frequency must be >= 1")
    counts = word_counts(corpus)
    word_freqs = {(WORD_MARK,) + tuple(w): c for w, c in sorted(counts.items())}
    alphabet = sorted({ch for w in word_freqs for ch in w} | {WORD_MARK})
    base = len(SPECIAL_NAMES) + len(alphabet)
    if vocab_size <= base:
        raise ConfigurationError(
            f"vocab_size {vocab_size} must exceed the base alphabet size {base} (specials included)")
    merges, _ = learn_merges(word_freqs, min_frequency=min_frequency, known=alphabet,
                             max_new_symbols=vocab_size - base)
    vocab = Vocab(alphabet)
    for a, b in merges:
        vocab.add(a + b)
    return TokenizerModel(kind="bpe", vocab=vocab, merges=merges)


def train_byte_bpe(corpus, n_merges, min_frequency=1):
    """Byte-level BPE: 256 byte symbols, so any UTF-8 text encodes without unknowns."""
    from .base import TokenizerModel

    if n_merges < 0:
        raise ConfigurationError("n_merges must be >= 0")
    table = bytes_to_unicode()
    counts = Counter()
    for text in corpus:
        for chunk in byte_chunks(text):
            counts[chunk] += 1
    word_freqs = {tuple(table[b] for b in chunk.encode("utf-8")): c
                  for chunk, c in sorted(counts.items())}
    merges, _ = learn_merges(word_freqs, min_frequency=min_frequency, max_merges=n_merges)
    vocab = Vocab(table[b] for b in range(256))
    for a, b in merges:
        vocab.add(a + b)
    return TokenizerModel(kind="byte_bpe", vocab=vocab, merges=merges)


def byte_bpe_vocab_size(n_merges, n_specials):
    """Vocabulary size of a byte-level BPE whose merges all create new symbols."""
    return 256 + n_merges + n_specials
