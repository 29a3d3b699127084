"""Word embedding table, L_p geometry, and continuous / discrete epsilon-balls.

The continuous ball around an embedded text ``x`` is every real matrix within
L_p distance ``epsilon``; the discrete ball keeps only the points that are
embeddings of actual vocabulary word sequences.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateWord,
    ExpansionCapExceeded,
    NonFiniteValue,
    NormNotSupported,
    VocabTooSmall,
    WordNotInVocab,
)
from .text import tokenize

__all__ = [
    "BallSpec",
    "EmbeddedText",
    "EmbeddingTable",
    "ball_contains",
    "dball_count",
    "dball_enumerate_sentence",
    "dball_neighbors",
    "diameter",
    "embed_text",
    "load_embeddings",
    "lp_distance",
    "off_vocabulary_point",
    "single_substitutions",
    "tokenize",
]

DEFAULT_ENUMERATION_CAP = 10**6


def _norm_order(p):
    if p in (1, 2):
        return int(p)
    if p in (math.inf, "inf", "linf", "Linf", "∞"):
        return math.inf
    raise NormNotSupported(f"unsupported norm {p!r}; expected 1, 2 or inf")


def parse_norm(p):
    """Normalise a norm spec (``1``, ``2``, ``"inf"``...) to ``1``, ``2`` or ``math.inf``."""
    if isinstance(p, str) and p.strip() in ("1", "2"):
        return int(p)
    return _norm_order(p)


@dataclass(frozen=True)
class BallSpec:
    epsilon: float
    norm: float = math.inf
    scope: str = "whole_sequence"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        object.__setattr__(self, "norm", parse_norm(self.norm))
        if self.scope not in ("per_word", "whole_sequence"):
            raise ValueError(f"unknown scope {self.scope!r}")


@dataclass
class EmbeddingTable:
    vocab: tuple[str, ...]
    vectors: np.ndarray
    duplicate_groups: list[tuple[str, ...]] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise DimensionMismatch(f"vectors must be |V| x d with d >= 1, got {self.vectors.shape}")
        if self.vectors.shape[0] != len(self.vocab):
            raise DimensionMismatch("vocab and vector rows disagree in length")
        if not np.isfinite(self.vectors).all():
            raise NonFiniteValue("embedding contains NaN or Inf")
        self.index = {}
        for i, w in enumerate(self.vocab):
            if w in self.index:
                raise DuplicateWord(f"word {w!r} appears twice")
            self.index[w] = i
        self.vectors.setflags(write=False)
        self.duplicate_groups = self._find_duplicates()
        if self.duplicate_groups:
            warnings.warn(
                f"embedding is not injective: {len(self.duplicate_groups)} groups of words share a vector",
                stacklevel=2,
            )

    def _find_duplicates(self):
        groups: dict[bytes, list[str]] = {}
        for w, row in zip(self.vocab, self.vectors):
            groups.setdefault(row.tobytes(), []).append(w)
        return [tuple(g) for g in groups.values() if len(g) > 1]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.vocab)

    def __contains__(self, word):
        return word in self.index

    def vector(self, word) -> np.ndarray:
        try:
            return self.vectors[self.index[word]]
        except KeyError:
            raise WordNotInVocab(word) from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for w, row in zip(self.vocab, self.vectors):
                fh.write(w + " " + " ".join(repr(float(v)) for v in row) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    """Read ``word f1 ... fd`` lines. Blank lines are skipped."""
    words, rows, seen = [], [], set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim < 1:
                    raise DimensionMismatch(f"{path}:{lineno}: no vector components")
            elif len(values) != dim:
                raise DimensionMismatch(f"{path}:{lineno}: expected {dim} components, got {len(values)}")
            try:
                vec = [float(v) for v in values]
            except ValueError as exc:
                raise NonFiniteValue(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vec):
                raise NonFiniteValue(f"{path}:{lineno}: non-finite component")
            if word in seen:
                raise DuplicateWord(f"{path}:{lineno}: duplicate word {word!r}")
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if dim is None:
        raise DimensionMismatch(f"{path}: empty embedding file")
    return EmbeddingTable(tuple(words), np.array(rows, dtype=np.float64))


@dataclass(frozen=True)
class EmbeddedText:
    matrix: np.ndarray
    words: tuple[str, ...] | None = None
    oov: tuple[bool, ...] = ()

    @property
    def length(self) -> int:
        return self.matrix.shape[0]

    @property
    def flat(self) -> np.ndarray:
        return self.matrix.reshape(-1)


def embed_text(table: EmbeddingTable, words: Sequence[str] | str, length: int) -> EmbeddedText:
    """Map words to rows, zero-padding or truncating to ``length``; OOV words become zero rows."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if isinstance(words, str):
        words = tokenize(words)
    kept = tuple(words[:length])
    matrix = np.zeros((length, table.dim), dtype=np.float64)
    oov = []
    for i, w in enumerate(kept):
        j = table.index.get(w)
        if j is None:
            oov.append(True)
        else:
            matrix[i] = table.vectors[j]
            oov.append(False)
    matrix.setflags(write=False)
    return EmbeddedText(matrix, kept, tuple(oov))


def embed_batch(table: EmbeddingTable, texts: Sequence[Sequence[str]], length: int) -> np.ndarray:
    """Embed many word lists into an ``(n, length * d)`` float array."""
    d = table.dim
    out = np.zeros((len(texts), length, d), dtype=np.float64)
    for n, words in enumerate(texts):
        for i, w in enumerate(words[:length]):
            j = table.index.get(w)
            if j is not None:
                out[n, i] = table.vectors[j]
    return out.reshape(len(texts), length * d)


def _distances(diff: np.ndarray, p) -> np.ndarray:
    a = np.abs(diff)
    if p == math.inf:
        return a.max(axis=-1)
    if p == 1:
        return a.sum(axis=-1)
    return np.sqrt((a * a).sum(axis=-1))


def lp_distance(a, b, p=math.inf) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionMismatch(f"vectors of size {a.size} and {b.size}")
    return float(_distances(a - b, parse_norm(p)))


def _as_matrix(x):
    return x.matrix if isinstance(x, EmbeddedText) else np.asarray(x, dtype=np.float64)


def ball_contains(center, candidate, spec: BallSpec) -> bool:
    c, x = _as_matrix(center), _as_matrix(candidate)
    if c.shape != x.shape:
        raise DimensionMismatch(f"shapes {c.shape} and {x.shape}")
    if spec.scope == "whole_sequence":
        return bool(_distances((c - x).reshape(-1), spec.norm) <= spec.epsilon)
    c2, x2 = c.reshape(c.shape[0], -1), x.reshape(x.shape[0], -1)
    return bool((_distances(c2 - x2, spec.norm) <= spec.epsilon).all())


def dball_neighbors(table: EmbeddingTable, word: str, spec: BallSpec, with_distances: bool = False):
    """Every vocabulary word within ``spec.epsilon`` of ``word`` (itself included), by exhaustive scan."""
    v = table.vector(word)
    dist = _distances(table.vectors - v, spec.norm)
    idx = np.flatnonzero(dist <= spec.epsilon)
    if with_distances:
        return [(table.vocab[i], float(dist[i])) for i in idx]
    return [table.vocab[i] for i in idx]


def _position_options(table: EmbeddingTable, words: Sequence[str], spec: BallSpec) -> list[list[str]]:
    # OOV positions cannot be substituted
    return [dball_neighbors(table, w, spec) if w in table else [w] for w in words]


def _check_enumerable(spec: BallSpec):
    if spec.scope == "whole_sequence" and spec.norm != math.inf:
        raise NormNotSupported(
            "exact whole-sequence enumeration only factorizes under L-inf; "
            "use scope='per_word' or single_substitutions() for p in {1, 2}"
        )


def _words_of(text) -> tuple[str, ...]:
    if isinstance(text, EmbeddedText):
        if text.words is None:
            raise ValueError("text has no word provenance")
        return text.words
    return tuple(text)


def dball_count(table: EmbeddingTable, text, spec: BallSpec) -> int:
    _check_enumerable(spec)
    return math.prod(len(o) for o in _position_options(table, _words_of(text), spec))


def dball_enumerate_sentence(
    table: EmbeddingTable, text, spec: BallSpec, cap: int = DEFAULT_ENUMERATION_CAP
) -> Iterator[tuple[str, ...]]:
    """Stream every word sequence in the product of per-position neighbour sets."""
    _check_enumerable(spec)
    options = _position_options(table, _words_of(text), spec)
    total = math.prod(len(o) for o in options)
    if total > cap:
        raise ExpansionCapExceeded(f"discrete ball holds {total} sequences (cap {cap})")
    return itertools.product(*options)


def single_substitutions(table: EmbeddingTable, text, spec: BallSpec) -> Iterator[tuple[str, ...]]:
    """The original sequence, then every sequence differing from it in exactly one word.

    Valid for any norm: only one row moves, so its distance is the whole-sequence distance.
    """
    words = _words_of(text)
    yield tuple(words)
    for i, w in enumerate(words):
        if w not in table:
            continue
        for u in dball_neighbors(table, w, spec):
            if u != w:
                yield words[:i] + (u,) + words[i + 1 :]


def diameter(table: EmbeddingTable, p=math.inf, chunk: int = 512) -> float:
    """Largest pairwise L_p distance, by exhaustive O(|V|^2 d) scan."""
    if len(table) < 2:
        raise VocabTooSmall("diameter needs at least two words")
    p = parse_norm(p)
    vecs = table.vectors
    best = 0.0
    for start in range(0, len(vecs), chunk):
        block = vecs[start : start + chunk]
        d = _distances(block[:, None, :] - vecs[None, :, :], p)
        best = max(best, float(d.max()))
    return best


def off_vocabulary_point(table: EmbeddingTable, word: str, spec: BallSpec) -> np.ndarray:
    """A vector inside the ball around ``word`` that is the embedding of no vocabulary word.

    Moves from ``word`` toward its nearest distinct neighbour by at most half of
    epsilon.  Requires ``epsilon > 0``.
    """
    if spec.epsilon <= 0:
        raise ValueError("epsilon must be > 0 for a non-trivial ball")
    v = table.vector(word)
    dist = _distances(table.vectors - v, spec.norm)
    dist[table.index[word]] = np.inf
    distinct = dist > 0
    if not distinct.any():
        raise VocabTooSmall("no word with a distinct vector")
    j = int(np.argmin(np.where(distinct, dist, np.inf)))
    step = min(0.5, spec.epsilon / (2 * dist[j]))
    while True:
        point = v + step * (table.vectors[j] - v)
        if not (table.vectors == point).all(axis=1).any() and not np.array_equal(point, v):
            return point
        step /= 2


def write_neighbor_dump(table: EmbeddingTable, words: Sequence[str], spec: BallSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in words:
            for u, dist in dball_neighbors(table, w, spec, with_distances=True):
                fh.write(f"{w}\t{u}\t{dist:.6g}\n")


def synthetic_table(
    vocab: Sequence[str],
    dim: int = 50,
    seed: int = 0,
    polarity: dict[str, float] | None = None,
    scale: float = 0.22,
    polarity_shift: float = 0.6,
) -> EmbeddingTable:
    """Gaussian word vectors with polarity words shifted along a shared sentiment axis.

    ``polarity`` maps a word to a signed strength; the word moves
    ``strength * polarity_shift`` along the axis.  Stands in for a pre-trained
    sentiment embedding: words of the same polarity cluster, weakly polar words
    sit close to the other side, everything else is isotropic noise.
    """
    rng = np.random.default_rng(seed)
    vecs = rng.normal(0.0, scale, size=(len(vocab), dim))
    axis = rng.normal(size=dim)
    axis /= np.linalg.norm(axis)
    for i, w in enumerate(vocab):
        strength = (polarity or {}).get(w, 0.0)
        if strength:
            vecs[i] += strength * polarity_shift * axis
    return EmbeddingTable(tuple(vocab), np.round(vecs, 6))
