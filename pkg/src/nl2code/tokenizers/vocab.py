from __future__ import annotations

from ..errors import VocabularyError

# Fixed ids 0..6 for every tokenizer kind, so models never need a per-tokenizer remap.
SPECIAL_NAMES = ("pad", "bos", "eos", "unk", "mask", "sep", "cls")
SPECIAL_TOKENS = ("<pad>", "<s>", "</s>", "<unk>", "<mask>", "<sep>", "<cls>")
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID, SEP_ID, CLS_ID = range(7)


class Vocab:
    """Bidirectional token/id table whose first entries are the special tokens."""

    def __init__(self, tokens=(), specials=None):
        specials = dict(zip(SPECIAL_NAMES, SPECIAL_TOKENS)) if specials is None else dict(specials)
        self.specials = {}
        self.id_to_token = []
        self.token_to_id = {}
        for name in SPECIAL_NAMES:
            self.specials[name] = self.add(specials[name])
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        idx = self.token_to_id.get(token)
        if idx is None:
            idx = len(self.id_to_token)
            self.token_to_id[token] = idx
            self.id_to_token.append(token)
        return idx

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token):
        return self.token_to_id.get(token, self.specials["unk"])

    def token(self, idx):
        if not 0 <= idx < len(self.id_to_token):
            raise VocabularyError(f"id {idx} outside vocabulary of size {len(self)}")
        return self.id_to_token[idx]

    @property
    def special_ids(self):
        return frozenset(self.specials.values())

    def to_json(self):
        return [[tok, i] for i, tok in enumerate(self.id_to_token)]

    @classmethod
    def from_json(cls, pairs, specials):
        vocab = cls.__new__(cls)
        ordered = sorted(pairs, key=lambda p: p[1])
        if [p[1] for p in ordered] != list(range(len(ordered))):
            raise VocabularyError("vocabulary ids must be contiguous from 0")
        vocab.id_to_token = [p[0] for p in ordered]
        vocab.token_to_id = {tok: i for i, tok in enumerate(vocab.id_to_token)}
        if len(vocab.token_to_id) != len(vocab.id_to_token):
            raise VocabularyError("duplicate token in vocabulary")
        vocab.specials = {}
        for name in SPECIAL_NAMES:
            tok = specials[name]
            if tok not in vocab.token_to_id:
                raise VocabularyError(f"special {name} ({tok!r}) missing from vocabulary")
            vocab.specials[name] = vocab.token_to_id[tok]
        if len(set(vocab.specials.values())) != len(SPECIAL_NAMES):
            raise VocabularyError("special ids are not distinct")
        return vocab
