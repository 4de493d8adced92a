"""Parallel (intent, snippet) datasets: loading, splitting, export and augmentation assembly."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ParseError, ProvenanceError, SchemaError

ORIGINS = ("labeled", "mined", "generated")
DIRECTIONS = ("nl2code", "code2nl")


@dataclass(frozen=True)
class ParallelExample:
    intent: str
    snippet: str
    rewritten_intent: Optional[str] = None
    question_id: Optional[int] = None
    prob: Optional[float] = None
    origin: str = "labeled"

    def __post_init__(self):
        if not self.intent.strip():
            raise SchemaError("intent is empty")
        if not self.snippet.strip():
            raise SchemaError("snippet is empty")
        if self.prob is not None and not 0.0 <= self.prob <= 1.0:
            raise SchemaError(f"prob {self.prob} outside [0, 1]")
        if self.origin not in ORIGINS:
            raise SchemaError(f"unknown origin {self.origin!r}")

    def source(self, direction="nl2code", field="intent"):
        """The model input side for ``direction``; ``field`` picks the NL column."""
        nl = self.rewritten_intent if field == "rewritten_intent" else self.intent
        return nl if direction == "nl2code" else self.snippet

    def target(self, direction="nl2code", field="intent"):
        nl = self.rewritten_intent if field == "rewritten_intent" else self.intent
        return self.snippet if direction == "nl2code" else nl


@dataclass
class Dataset:
    examples: list = field(default_factory=list)
    name: str = ""
    direction: str = "nl2code"

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"unknown direction {self.direction!r}")

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def pairs(self, field="intent"):
        """(source, target) strings, skipping examples without the requested NL field."""
        out = []
        for ex in self.examples:
            src, tgt = ex.source(self.direction, field), ex.target(self.direction, field)
            if src is not None and tgt is not None:
                out.append((src, tgt))
        return out

    def reversed(self):
        """Same examples with the translation direction flipped (Code2NL)."""
        other = "code2nl" if self.direction == "nl2code" else "nl2code"
        return Dataset(list(self.examples), self.name, other)


def _read_text(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: invalid UTF-8 at byte {exc.start}", byte_offset=exc.start) from None


def _opt_str(rec, key, where):
    val = rec.get(key)
    if val is not None and not isinstance(val, str):
        raise SchemaError(f"{where}: key {key!r} must be a string or null")
    return val


def _req_str(rec, key, where):
    if key not in rec:
        raise SchemaError(f"{where}: missing required key {key!r}")
    val = rec[key]
    if not isinstance(val, str):
        raise SchemaError(f"{where}: key {key!r} must be a string")
    return val


def load_labeled(path, name=None, direction="nl2code"):
    """Load a JSON array of ``{intent, rewritten_intent, snippet[, question_id]}`` records."""
    text = _read_text(path)
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"{path}: malformed JSON at byte {offset}: {exc.msg}",
                         byte_offset=offset) from None
    if not isinstance(records, list):
        raise SchemaError(f"{path}: top-level value must be a JSON array")
    examples = []
    for i, rec in enumerate(records):
        where = f"{path}: record {i}"
        if not isinstance(rec, dict):
            raise SchemaError(f"{where}: expected an object")
        intent = _req_str(rec, "intent", where)
        snippet = _req_str(rec, "snippet", where)
        if "rewritten_intent" not in rec:
            raise SchemaError(f"{where}: missing required key 'rewritten_intent'")
        qid = rec.get("question_id")
        if qid is not None and (not isinstance(qid, int) or isinstance(qid, bool)):
            raise SchemaError(f"{where}: question_id must be an integer")
        try:
            examples.append(ParallelExample(
                intent=intent, snippet=snippet,
                rewritten_intent=_opt_str(rec, "rewritten_intent", where),
                question_id=qid, origin="labeled"))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    return Dataset(examples, name or os.path.basename(path), direction)


def load_mined(path, min_prob=0.0, name=None, direction="nl2code"):
    """Load a JSON-lines mined corpus keeping records with ``prob >= min_prob``."""
    text = _read_text(path)
    examples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}: line {lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{where}: malformed JSON: {exc.msg}", line=lineno) from None
        if not isinstance(rec, dict):
            raise SchemaError(f"{where}: expected an object")
        intent = _req_str(rec, "intent", where)
        snippet = _req_str(rec, "snippet", where)
        prob = rec.get("prob")
        if isinstance(prob, bool) or not isinstance(prob, (int, float)):
            raise SchemaError(f"{where}: prob must be a number")
        if not 0.0 <= prob <= 1.0:
            raise SchemaError(f"{where}: prob {prob} outside [0, 1]")
        if prob < min_prob:
            continue
        try:
            examples.append(ParallelExample(intent=intent, snippet=snippet,
                                            question_id=rec.get("question_id"),
                                            prob=float(prob), origin="mined"))
        except SchemaError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    return Dataset(examples, name or os.path.basename(path), direction)


def assemble_augmented(base, generated_sets):
    """Base examples followed by every generated set, in the given order."""
    known = {ex.snippet for ex in base.examples}
    out = list(base.examples)
    for gen in generated_sets:
        if gen.direction != base.direction:
            raise ConfigurationError(
                f"direction mismatch: base is {base.direction}, {gen.name!r} is {gen.direction}")
        for i, ex in enumerate(gen.examples):
            if ex.snippet not in known:
                raise ProvenanceError(
                    f"{gen.name!r} example {i} (intent {ex.intent!r}) has a snippet absent from base")
            out.append(ex if ex.origin == "generated" else dataclasses.replace(ex, origin="generated"))
    n_gen = len(out) - len(base)
    name = base.name if n_gen == 0 else f"{base.name}+{n_gen}gen"
    return Dataset(out, name, base.direction)


def to_records(dataset):
    recs = []
    for ex in dataset.examples:
        rec = {"intent": ex.intent, "rewritten_intent": ex.rewritten_intent, "snippet": ex.snippet}
        if ex.question_id is not None:
            rec["question_id"] = ex.question_id
        recs.append(rec)
    return recs


def export(dataset, path):
    """Write ``dataset`` in the labeled JSON schema."""
    payload = json.dumps(to_records(dataset), ensure_ascii=False, indent=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(payload)


def split(dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Shuffle with ``seed`` and cut into consecutive parts sized by ``fractions``."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"split fractions must be non-negative and sum to 1: {fractions}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    bounds = np.round(np.cumsum(fractions) * len(dataset)).astype(int)
    parts, start = [], 0
    for k, end in enumerate(bounds):
        idx = order[start:end]
        parts.append(Dataset([dataset.examples[i] for i in idx],
                             f"{dataset.name}[{k}]", dataset.direction))
        start = end
    return parts
