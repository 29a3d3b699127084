"""Corpora: TSV loading, stratified splits and rule-corpus augmentation."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding import EmbeddingTable, embed_batch
from .errors import EmptyCorpus, InvalidFraction, UnknownLabel
from .template_engine import LabeledText, write_corpus
from .text import LABELS, parse_label, tokenize


@dataclass
class Corpus:
    samples: list[LabeledText]
    split: str = "train"
    provenance: str = "base"
    malformed: list[tuple[int, str]] = field(default_factory=list)

    def __post_init__(self):
        if not self.samples:
            raise EmptyCorpus("corpus has no samples")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def texts(self) -> list[tuple[str, ...]]:
        return [s.text for s in self.samples]

    def ids(self) -> list[str]:
        return [str(i) for i in range(len(self.samples))]

    def embed(self, table: EmbeddingTable, length: int) -> np.ndarray:
        return embed_batch(table, self.texts, length)

    def by_provenance(self) -> dict[str, "Corpus"]:
        groups: dict[str, list[LabeledText]] = defaultdict(list)
        for s in self.samples:
            groups[s.provenance].append(s)
        return {k: Corpus(v, self.split, k) for k, v in sorted(groups.items())}

    def save(self, path, header: str | None = None, provenance: bool = False) -> None:
        write_corpus(self.samples, path, header, provenance)


def load_corpus(path, split: str = "train") -> Corpus:
    """Read ``label<TAB>text[<TAB>provenance]`` lines; ``#`` lines are comments.

    Lines without a tab-separated text field are collected in ``Corpus.malformed``;
    an unrecognised label raises ``UnknownLabel``.
    """
    samples, malformed = [], []
    provs = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or not parts[1].strip():
                malformed.append((lineno, line))
                continue
            try:
                label = parse_label(parts[0])
            except UnknownLabel as exc:
                raise UnknownLabel(f"{path}:{lineno}: {exc}") from None
            words = tuple(tokenize(parts[1]))
            if not words:
                malformed.append((lineno, line))
                continue
            prov = parts[2].strip() if len(parts) == 3 and parts[2].strip() else "base"
            provs.add(prov)
            samples.append(LabeledText(words, label, (Path(path).name, lineno), prov))
    if not samples:
        raise EmptyCorpus(f"{path}: no samples")
    provenance = provs.pop() if len(provs) == 1 else "mixed"
    return Corpus(samples, split, provenance, malformed)


@dataclass(frozen=True)
class AugmentSpec:
    factor: int
    rule_corpus: Corpus
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.factor < 0 or int(self.factor) != self.factor:
            raise ValueError("factor must be a non-negative integer")


def augment(base: Corpus, spec: AugmentSpec) -> Corpus:
    """Base samples plus ``factor`` replicas of the rule corpus, shuffled once."""
    if base.provenance != "base":
        raise ValueError(f"augment expects a base corpus, got provenance {base.provenance!r}")
    samples = list(base.samples) + list(spec.rule_corpus.samples) * spec.factor
    random.Random(spec.shuffle_seed).shuffle(samples)
    return Corpus(samples, base.split, "base" if spec.factor == 0 else "mixed")


def _allocate(sizes: Sequence[int], fraction: float) -> list[int]:
    """Largest-remainder apportionment of ``round(fraction * n)`` across label groups."""
    target = round(fraction * sum(sizes))
    quotas = [fraction * s for s in sizes]
    counts = [int(q) for q in quotas]
    by_remainder = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_remainder[: target - sum(counts)]:
        counts[i] += 1
    return counts


def split(c: Corpus, fraction: float, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Label-stratified split; the first part receives ``round(fraction * n)`` samples,
    apportioned across labels by largest remainder."""
    if not 0 < fraction < 1:
        raise InvalidFraction(f"fraction must lie strictly between 0 and 1, got {fraction}")
    rng = random.Random(seed)
    groups = [[i for i, s in enumerate(c.samples) if s.label == label] for label in range(len(LABELS))]
    first, second = [], []
    for idx, k in zip(groups, _allocate([len(g) for g in groups], fraction)):
        rng.shuffle(idx)
        first += idx[:k]
        second += idx[k:]
    if not first or not second:
        raise InvalidFraction("split leaves one side empty")
    return (
        Corpus([c.samples[i] for i in sorted(first)], c.split, c.provenance),
        Corpus([c.samples[i] for i in sorted(second)], c.split, c.provenance),
    )


def from_samples(samples: Sequence[LabeledText], split: str = "train", provenance: str | None = None) -> Corpus:
    provs = {s.provenance for s in samples}
    if provenance is None:
        provenance = provs.pop() if len(provs) == 1 else "mixed"
    return Corpus(list(samples), split, provenance)
