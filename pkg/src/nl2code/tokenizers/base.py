from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from ..errors import ConfigurationError, SchemaError, VocabularyError
from . import bpe, unigram, wordpiece
from .code import code_tokenize
from .vocab import SPECIAL_NAMES, Vocab

KINDS = ("bpe", "byte_bpe", "wordpiece", "unigram", "rule_code")

# decode drops these; other specials are rendered literally
_SILENT = ("pad", "bos", "eos")


@dataclass
class TokenizerModel:
    kind: str
    vocab: Vocab
    merges: list = field(default_factory=list)
    piece_logprob: dict = field(default_factory=dict)
    continuation_marker: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown tokenizer kind {self.kind!r}")
        self.merges = [tuple(m) for m in self.merges]
        self._ranks = {m: i for i, m in enumerate(self.merges)}
        self._cache = {}
        self._max_piece = max(map(len, self.piece_logprob), default=1)

    def __len__(self):
        return len(self.vocab)

    @property
    def specials(self):
        return self.vocab.specials

    @property
    def mask_id(self):
        return self.vocab.specials["mask"]

    # --------------------------------------------------------------- encoding
    def _word_pieces(self, word):
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        if self.kind == "bpe":
            pieces = bpe.apply_merges((bpe.WORD_MARK,) + tuple(word), self._ranks)
        elif self.kind == "byte_bpe":
            table = bpe.bytes_to_unicode()
            pieces = bpe.apply_merges([table[b] for b in word.encode("utf-8")], self._ranks)
        elif self.kind == "wordpiece":
            pieces = wordpiece.encode_word(word, self.vocab, self.continuation_marker)
            if pieces is None:
                pieces = [self.vocab.id_to_token[self.vocab.specials["unk"]]]
        elif self.kind == "unigram":
            pieces = unigram.viterbi(bpe.WORD_MARK + word, self.piece_logprob, self._max_piece)
        else:
            pieces = [word]
        if len(self._cache) < 100_000:
            self._cache[word] = pieces
        return pieces

    def tokenize(self, text):
        """Surface pieces for ``text`` (before the id lookup)."""
        if self.kind == "byte_bpe":
            units = bpe.byte_chunks(text)
        elif self.kind == "rule_code":
            units = code_tokenize(text)
        else:
            units = text.split()
        out = []
        for u in units:
            out.extend(self._word_pieces(u))
        return out

    def encode(self, text):
        return [self.vocab.id(p) for p in self.tokenize(text)]

    def decode(self, ids):
        silent = {self.vocab.specials[n] for n in _SILENT}
        toks = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.vocab):
                raise VocabularyError(f"id {i} outside vocabulary of size {len(self.vocab)}")
            if i not in silent:
                toks.append(self.vocab.id_to_token[i])
        if self.kind == "byte_bpe":
            back = bpe.unicode_to_bytes()
            special = set(self.vocab.id_to_token[:len(SPECIAL_NAMES)])
            parts = []
            buf = bytearray()
            for t in toks:
                if t in special:
                    parts.append(buf.decode("utf-8", errors="replace"))
                    buf = bytearray()
                    parts.append(t)
                else:
                    buf.extend(back[c] for c in t)
            parts.append(buf.decode("utf-8", errors="replace"))
            return "".join(parts)
        if self.kind in ("bpe", "unigram"):
            return "".join(toks).replace(bpe.WORD_MARK, " ").strip()
        if self.kind == "wordpiece":
            m = self.continuation_marker
            out = ""
            for t in toks:
                if t.startswith(m) and out:
                    out += t[len(m):]
                else:
                    out += (" " if out else "") + t
            return out
        return " ".join(toks)

    # ---------------------------------------------------------- serialization
    def to_dict(self):
        d = {"kind": self.kind, "vocab": self.vocab.to_json()}
        if self.kind in ("bpe", "byte_bpe"):
            d["merges"] = [f"{a} {b}" for a, b in self.merges]
        if self.kind == "unigram":
            d["piece_logprob"] = [[p, lp] for p, lp in self.piece_logprob.items()]
        d["specials"] = {n: self.vocab.id_to_token[i] for n, i in self.vocab.specials.items()}
        if self.kind == "wordpiece":
            d["continuation_marker"] = self.continuation_marker
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        try:
            kind = d["kind"]
            vocab = Vocab.from_json(d["vocab"], d["specials"])
        except KeyError as exc:
            raise SchemaError(f"tokenizer file lacks key {exc}") from None
        merges = [tuple(m.split(" ")) for m in d.get("merges", [])]
        if any(len(m) != 2 for m in merges):
            raise SchemaError("malformed merge entry")
        return cls(kind=kind, vocab=vocab, merges=merges,
                   piece_logprob={p: float(lp) for p, lp in d.get("piece_logprob", [])},
                   continuation_marker=d.get("continuation_marker", ""))


def save_tokenizer(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())


def load_tokenizer(path):
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: malformed tokenizer file: {exc.msg}") from None
    return TokenizerModel.from_dict(d)


def train_rule_code(corpus, min_frequency=1, max_size=None):
    """Closed vocabulary over ``code_tokenize`` tokens, most frequent first."""
    counts = Counter()
    for text in corpus:
        counts.update(code_tokenize(text))
    toks = sorted((t for t, c in counts.items() if c >= min_frequency), key=lambda t: (-counts[t], t))
    if max_size is not None:
        toks = toks[: max(0, max_size - len(SPECIAL_NAMES))]
    return TokenizerModel(kind="rule_code", vocab=Vocab(toks))


def encode(model, text):
    return model.encode(text)


def decode(model, ids):
    return model.decode(ids)
