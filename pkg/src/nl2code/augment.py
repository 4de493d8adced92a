"""Back-translation: decode new intents from snippets with Code2NL models."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .corpus import Dataset, ParallelExample
from .decode import DecodeConfig
from .errors import ConfigurationError
from .pipeline import translate

log = logging.getLogger(__name__)

FIELDS = ("intent", "rewritten_intent")


@dataclass
class AugmentConfig:
    source_fields: tuple = FIELDS
    top_k: int = 1
    decode: DecodeConfig = field(default_factory=lambda: DecodeConfig(strategy="beam", beam_size=4))
    dedup: bool = False

    def __post_init__(self):
        self.source_fields = tuple(self.source_fields)
        if not self.source_fields:
            raise ConfigurationError("source_fields must not be empty")
        bad = set(self.source_fields) - set(FIELDS)
        if bad:
            raise ConfigurationError(f"unknown source fields {sorted(bad)}")
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")


class ModelTranslator:
    """Adapts a trained Code2NL model to the ``(snippet, k) -> [intent, ...]`` protocol."""

    def __init__(self, model, src_tok, tgt_tok, decode_cfg):
        self.model, self.src_tok, self.tgt_tok, self.cfg = model, src_tok, tgt_tok, decode_cfg

    def __call__(self, snippet, k):
        cfg = self.cfg
        if cfg.strategy != "beam" or cfg.beam_size < k or cfg.num_return_sequences < k:
            cfg = DecodeConfig(**dict(cfg.to_dict(), strategy="beam", beam_size=max(k, cfg.beam_size),
                                      num_return_sequences=k))
        return [text for text, _ in translate(self.model, self.src_tok, self.tgt_tok, [snippet], cfg)[0]]


def _usable(text):
    return len(text.split()) >= 2


def back_translate(models, base, cfg):
    """One generated Dataset per (field, rank), in field order then rank order.

    ``models`` maps a source field to a translator: any callable
    ``(snippet, k) -> list of intents`` ranked best-first. Base examples
    lacking the field are skipped; empty or single-token predictions are
    dropped and counted.
    """
    if base.direction != "nl2code":
        raise ConfigurationError("back-translation expects an nl2code base dataset")
    missing = [f for f in cfg.source_fields if f not in models]
    if missing:
        raise ConfigurationError(f"no Code2NL model for field(s) {missing}")
    out = []
    for fname in cfg.source_fields:
        translator = models[fname]
        sets = [[] for _ in range(cfg.top_k)]
        dropped = duplicates = 0
        for ex in base.examples:
            if getattr(ex, fname) is None:
                continue
            preds = list(translator(ex.snippet, cfg.top_k))[: cfg.top_k]
            for rank, text in enumerate(preds):
                text = " ".join(text.split())
                if not _usable(text):
                    dropped += 1
                    continue
                if cfg.dedup and text in (ex.intent, ex.rewritten_intent):
                    duplicates += 1
                    continue
                sets[rank].append(ParallelExample(intent=text, snippet=ex.snippet,
                                                  question_id=ex.question_id, origin="generated"))
        if dropped or duplicates:
            log.info("field %s: dropped %d degenerate and %d duplicate predictions",
                     fname, dropped, duplicates)
        out.extend(Dataset(s, f"{base.name}:{fname}:top{r + 1}", "nl2code") for r, s in enumerate(sets))
    return out
