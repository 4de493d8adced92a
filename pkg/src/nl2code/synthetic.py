"""Seeded synthetic NL -> code corpora standing in for labeled and mined data at desk scale.

Intents are drawn from a fixed set of templates with several phrasings each;
slots are filled from identifier, function, module and number pools. A
"mined" corpus is large and slightly noisy (some snippets misaligned, each
record carries a confidence), a "labeled" corpus is small and clean, which
reproduces the data regime the two-stage pipeline is meant for.
"""
from __future__ import annotations

import numpy as np

from .corpus import Dataset, ParallelExample

NAMES = (
    "x", "y", "z", "a", "b", "n", "i", "j", "k", "s", "df", "data", "items", "values",
    "result", "text", "line", "lines", "words", "count", "total", "my_list", "my_dict",
    "numbers", "names", "path", "url", "key", "value", "row", "rows", "col", "matrix",
    "arr", "lst", "nums", "string", "word", "char", "chars", "user", "users", "config",
    "params", "args", "output", "buffer", "queue", "stack", "node", "tree", "graph",
    "score", "scores", "index", "offset", "size", "width", "height", "name",
)
FUNCS = ("foo", "bar", "process", "update", "render", "parse", "load", "save", "run", "main")
MODULES = ("os", "sys", "re", "json", "time", "math", "random", "collections", "itertools", "numpy")

# (phrasings, snippet); slots: {a} {b} identifiers, {f} function, {m} module, {n} number
TEMPLATES = (
    (("add {a} and {b}", "sum of {a} and {b}", "compute {a} plus {b}"), "{a} + {b}"),
    (("multiply {a} by {b}", "product of {a} and {b}"), "{a} * {b}"),
    (("subtract {b} from {a}", "difference of {a} and {b}"), "{a} - {b}"),
    (("get length of {a}", "number of elements in {a}", "size of list {a}"), "len({a})"),
    (("sort {a} in reverse order", "sort {a} descending"), "sorted({a}, reverse=True)"),
    (("sort list {a}", "get sorted copy of {a}"), "sorted({a})"),
    (("convert {a} to string", "string representation of {a}"), "str({a})"),
    (("convert {a} to integer", "cast {a} to int"), "int({a})"),
    (("print {a}", "display {a}", "output {a} to console"), "print({a})"),
    (("sleep for {n} seconds", "pause execution for {n} seconds"), "time.sleep({n})"),
    (("append {b} to list {a}", "add element {b} to end of {a}"), "{a}.append({b})"),
    (("call {f} with {a}", "invoke function {f} on {a}"), "{f}({a})"),
    (("open file {a} for reading", "open {a} in read mode"), "open({a}, 'r')"),
    (("check if {a} is in {b}", "test membership of {a} in {b}"), "{a} in {b}"),
    (("import module {m}", "import the {m} library"), "import {m}"),
    (("set {a} to {n}", "assign {n} to {a}"), "{a} = {n}"),
    (("get maximum of {a}", "largest element of {a}"), "max({a})"),
    (("reverse string {a}", "reverse the sequence {a}"), "{a}[::-1]"),
    (("join list {a} with commas", "concatenate {a} separated by commas"), "','.join({a})"),
    (("split {a} on spaces", "split string {a} by space"), "{a}.split(' ')"),
    (("get first element of {a}", "first item of {a}"), "{a}[0]"),
    (("get keys of dictionary {a}", "list the keys of {a}"), "list({a}.keys())"),
    (("iterate over {a} with index", "enumerate {a}"), "enumerate({a})"),
    (("check if {a} equals {b}", "test whether {a} is equal to {b}"), "{a} == {b}"),
)


def _fill(template, slots):
    return template.format(**slots)


def make_example(rng, template_ids=None, names=NAMES):
    tid = int(rng.choice(template_ids)) if template_ids is not None else int(rng.integers(len(TEMPLATES)))
    phrasings, snippet = TEMPLATES[tid]
    a, b = rng.choice(len(names), size=2, replace=False)
    slots = {"a": names[a], "b": names[b], "f": FUNCS[rng.integers(len(FUNCS))],
             "m": MODULES[rng.integers(len(MODULES))], "n": str(int(rng.integers(1, 10)))}
    intent = _fill(phrasings[int(rng.integers(len(phrasings)))], slots)
    return intent, _fill(snippet, slots)


def labeled_set(n, seed, names=NAMES, name="labeled"):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        intent, snippet = make_example(rng, names=names)
        out.append(ParallelExample(intent=intent, snippet=snippet, rewritten_intent=intent,
                                   origin="labeled"))
    return Dataset(out, name, "nl2code")


def mined_set(n, seed, misaligned=0.1, names=NAMES, name="mined"):
    """Large noisy corpus: a ``misaligned`` fraction pairs an intent with a random other snippet."""
    rng = np.random.default_rng(seed)
    pairs = [make_example(rng, names=names) for _ in range(n)]
    out = []
    for i, (intent, snippet) in enumerate(pairs):
        bad = rng.random() < misaligned
        if bad:
            snippet = pairs[int(rng.integers(n))][1]
        prob = float(rng.uniform(0.0, 0.5) if bad else rng.uniform(0.4, 1.0))
        out.append(ParallelExample(intent=intent, snippet=snippet, prob=prob, origin="mined"))
    return Dataset(out, name, "nl2code")


def overfit_pairs(n=16, seed=0):
    """``n`` distinct (intent, snippet) pairs, one template each where possible."""
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    tids = list(range(len(TEMPLATES)))
    while len(out) < n:
        intent, snippet = make_example(rng, template_ids=[tids[len(out) % len(tids)]])
        if intent not in seen:
            seen.add(intent)
            out.append((intent, snippet))
    return out


def pretrain_task(seed, n_mined=5000, n_labeled=200, n_valid=100, n_test=200,
                  labeled_names=24):
    """Mined / labeled / valid / test datasets for the two-stage experiment.

    The labeled split only sees ``labeled_names`` identifiers while the test
    split uses the whole pool, so identifiers learnt during pretraining matter.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(NAMES))
    seen = tuple(NAMES[i] for i in order[:labeled_names])
    return {
        "mined": mined_set(n_mined, seed + 1),
        "labeled": labeled_set(n_labeled, seed + 2, names=seen),
        "valid": labeled_set(n_valid, seed + 3, names=seen, name="valid"),
        "test": labeled_set(n_test, seed + 4, name="test"),
    }
