"""Tokenization and label vocabulary shared by the corpus, template and embedding code."""

import re

from .errors import UnknownLabel

LABELS = ("negative", "positive")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*|[^\w\s]|_+")


def tokenize(text):
    """Lowercase ``text`` and split it into words, with punctuation as separate tokens.

    >>> tokenize("This movie is NOT bad.")
    ['this', 'movie', 'is', 'not', 'bad', '.']
    """
    return _TOKEN_RE.findall(text.lower())


def parse_label(raw):
    """Map a label string (``positive``/``negative``/``1``/``0``, any case) to its class index."""
    key = raw.strip().lower()
    if key in LABEL_INDEX:
        return LABEL_INDEX[key]
    if key in ("0", "1"):
        return int(key)
    raise UnknownLabel(f"unknown label {raw!r}; expected one of {LABELS}")


def label_name(index):
    return LABELS[index]
