from __future__ import annotations

from collections import defaultdict

from ..errors import ConfigurationError
from .bpe import word_counts
from .vocab import SPECIAL_NAMES, Vocab

MARKER = "##"


def _split(word, marker):
    return [word[0]] + [marker + ch for ch in word[1:]]


def _join(a, b, marker):
    return a + (b[len(marker):] if b.startswith(marker) else b)


def pair_scores(words, freqs):
    """score(a, b) = freq(ab) / (freq(a) * freq(b)) for every adjacent pair."""
    sym = defaultdict(int)
    pair = defaultdict(int)
    for w, f in zip(words, freqs):
        for s in w:
            sym[s] += f
        for p in zip(w, w[1:]):
            pair[p] += f
    return {p: c / (sym[p[0]] * sym[p[1]]) for p, c in pair.items()}


def train_wordpiece(corpus, vocab_size, marker=MARKER):
    from .base import TokenizerModel

    counts = sorted(word_counts(corpus).items())
    words = [_split(w, marker) for w, _ in counts]
    freqs = [c for _, c in counts]
    alphabet = sorted({s for w in words for s in w})
    base = len(SPECIAL_NAMES) + len(alphabet)
    if vocab_size <= base:
        raise ConfigurationError(
            f"vocab_size {vocab_size} must exceed the base alphabet size {base} (specials included)")
    vocab = Vocab(alphabet)
    while len(vocab) < vocab_size:
        scores = pair_scores(words, freqs)
        if not scores:
            break
        best = min(scores, key=lambda p: (-scores[p], p))
        new = _join(best[0], best[1], marker)
        vocab.add(new)
        for i, w in enumerate(words):
            if len(w) < 2:
                continue
            out, j = [], 0
            while j < len(w):
                if j + 1 < len(w) and (w[j], w[j + 1]) == best:
                    out.append(new)
                    j += 2
                else:
                    out.append(w[j])
                    j += 1
            words[i] = out
    return TokenizerModel(kind="wordpiece", vocab=vocab, continuation_marker=marker)


def encode_word(word, vocab, marker=MARKER, max_chars=100):
    """Greedy longest-match-first; ``None`` when some position has no match."""
    if len(word) > max_chars:
        return None
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while end > start:
            sub = word[start:end]
            if start > 0:
                sub = marker + sub
            if sub in vocab.token_to_id:
                found = sub
                break
            end -= 1
        if found is None:
            return None
        pieces.append(found)
        start = end
    return pieces
