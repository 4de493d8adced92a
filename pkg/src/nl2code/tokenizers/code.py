"""Rule-based code tokenizer: punctuation, CamelCase and letter/digit splits."""
from __future__ import annotations

import re

_CHUNK = re.compile(r"\w+|[^\w\s]")


def _split_word(word):
    parts = []
    start = 0
    for i in range(1, len(word)):
        prev, cur = word[i - 1], word[i]
        camel = prev.islower() and cur.isupper()
        digit = prev.isalpha() and cur.isdigit()
        if camel or digit:
            parts.append(word[start:i])
            start = i
    parts.append(word[start:])
    return parts


def code_tokenize(text):
    """Split ``text`` into code tokens.

    Every punctuation character except ``_`` becomes its own token,
    identifiers are cut at lower-to-upper case changes and at letter-to-digit
    changes, and nothing is ever joined across whitespace.

    >>> code_tokenize("class TirionFordring")
    ['class', 'Tirion', 'Fordring']
    """
    out = []
    for chunk in _CHUNK.findall(text):
        if chunk[0] == "_" or chunk[0].isalnum():
            out.extend(_split_word(chunk))
        else:
            out.append(chunk)
    return out
