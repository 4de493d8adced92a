"""Subword tokenizers (BPE, byte-level BPE, WordPiece, Unigram) and the rule-based code tokenizer."""
from .base import (KINDS, TokenizerModel, decode, encode, load_tokenizer, save_tokenizer,
                   train_rule_code)
from .bpe import byte_bpe_vocab_size, train_bpe, train_byte_bpe
from .code import code_tokenize
from .unigram import train_unigram
from .vocab import (BOS_ID, CLS_ID, EOS_ID, MASK_ID, PAD_ID, SEP_ID, SPECIAL_NAMES,
                    SPECIAL_TOKENS, UNK_ID, Vocab)
from .wordpiece import train_wordpiece


def train(kind, corpus, vocab_size, min_frequency=2, **kwargs):
    """Dispatch to the trainer for ``kind``; byte_bpe reads ``vocab_size`` as a total size."""
    if kind == "bpe":
        return train_bpe(corpus, vocab_size, min_frequency)
    if kind == "byte_bpe":
        n_merges = max(0, vocab_size - 256 - len(SPECIAL_NAMES))
        return train_byte_bpe(corpus, n_merges, min_frequency)
    if kind == "wordpiece":
        return train_wordpiece(corpus, vocab_size)
    if kind == "unigram":
        return train_unigram(corpus, vocab_size, **kwargs)
    if kind == "rule_code":
        return train_rule_code(corpus, min_frequency, max_size=vocab_size)
    from ..errors import ConfigurationError
    raise ConfigurationError(f"unknown tokenizer kind {kind!r}")


__all__ = [
    "BOS_ID", "CLS_ID", "EOS_ID", "KINDS", "MASK_ID", "PAD_ID", "SEP_ID", "SPECIAL_NAMES",
    "SPECIAL_TOKENS", "TokenizerModel", "UNK_ID", "Vocab", "byte_bpe_vocab_size",
    "code_tokenize", "decode", "encode", "load_tokenizer", "save_tokenizer", "train",
    "train_bpe", "train_byte_bpe", "train_rule_code", "train_unigram", "train_wordpiece",
]
