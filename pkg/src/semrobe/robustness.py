"""Robustness assessment: discrete word-substitution checks, tau-semantic robustness,
bounded invariance, test-set level assessment and population comparison."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embedding import (
    BallSpec,
    EmbeddedText,
    EmbeddingTable,
    dball_enumerate_sentence,
    embed_batch,
    single_substitutions,
    DEFAULT_ENUMERATION_CAP,
)
from .errors import EmptyCorpus, IdMismatch, InsufficientSamples, InvalidTau
from .model import Classifier, logits
from .text import LABELS, parse_label

DEFAULT_TAU = 0.05
ALPHA = 0.05
# absorbs binary rounding in p - tau (0.9 - 0.05 != 0.85 exactly)
_TOL = 1e-12


# --- discrete robustness -----------------------------------------------------


@dataclass
class DiscreteResult:
    robust: bool
    label: int
    checked: int
    min_margin: float
    counterexample: tuple[str, ...] | None = None


def check_discrete_robustness(
    m: Classifier,
    table: EmbeddingTable,
    text,
    spec: BallSpec,
    cap: int = DEFAULT_ENUMERATION_CAP,
    single_substitution: bool = False,
    batch: int = 4096,
) -> DiscreteResult:
    """Enumerate the discrete ball around ``text`` and look for a prediction change.

    ``single_substitution=True`` restricts the search to one-word swaps, which is
    exact for any norm; otherwise the full per-position product is enumerated
    (whole-sequence scope requires L-inf).
    """
    words = text.words if isinstance(text, EmbeddedText) else tuple(text)
    length = m.input_shape[0]
    words = tuple(words[:length])
    m64 = m.astype(np.float64)
    if single_substitution:
        stream = single_substitutions(table, words, spec)
    else:
        stream = dball_enumerate_sentence(table, words, spec, cap=cap)

    z0 = logits(m64, embed_batch(table, [words], length))[0]
    label = int(np.argmax(z0))
    checked = 0
    min_margin = math.inf
    while True:
        chunk = list(itertools.islice(stream, batch))
        if not chunk:
            break
        z = logits(m64, embed_batch(table, chunk, length))
        margins = z[:, label] - np.delete(z, label, axis=1).max(axis=1)
        preds = np.argmax(z, axis=1)
        bad = np.flatnonzero(preds != label)
        if bad.size:
            checked += int(bad[0]) + 1
            return DiscreteResult(False, label, checked, float(margins[: bad[0] + 1].min()), tuple(chunk[bad[0]]))
        checked += len(chunk)
        min_margin = min(min_margin, float(margins.min()))
    return DiscreteResult(True, label, checked, min_margin)


# --- semantic robustness -------------------------------------------------------


@dataclass(frozen=True)
class PerformancePair:
    p: float
    p_prime: float
    n_base: int = 1
    n_rule: int = 1

    def __post_init__(self):
        if not (0 <= self.p <= 1 and 0 <= self.p_prime <= 1):
            raise ValueError("performances must lie in [0, 1]")
        if self.n_base < 1 or self.n_rule < 1:
            raise ValueError("sample counts must be positive")


def _check_tau(tau):
    if not (isinstance(tau, (int, float)) and tau >= 0 and math.isfinite(tau)):
        raise InvalidTau(f"tau must be a finite non-negative number, got {tau!r}")


def semantic_robustness(pair: PerformancePair, tau: float) -> bool:
    """``p' >= max(0, p - tau)``: the rule set costs at most ``tau`` of performance."""
    _check_tau(tau)
    return pair.p_prime >= max(0.0, pair.p - tau) - _TOL


def bounded_invariance(pair: PerformancePair, tau: float) -> bool:
    """``max(0, p - tau) <= p' <= p + tau``."""
    _check_tau(tau)
    return semantic_robustness(pair, tau) and pair.p_prime <= pair.p + tau + _TOL


# --- prediction files ----------------------------------------------------------


@dataclass
class PredictionFile:
    labels: dict[str, int]
    scores: dict[str, float] = field(default_factory=dict)

    @property
    def ids(self):
        return list(self.labels)

    @classmethod
    def load(cls, path) -> "PredictionFile":
        labels, scores = {}, {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\r\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) not in (2, 3):
                    raise ValueError(f"{path}:{lineno}: expected sample_id<TAB>label[<TAB>score]")
                sid = parts[0]
                if sid in labels:
                    raise IdMismatch(f"{path}:{lineno}: duplicate sample id {sid!r}")
                labels[sid] = parse_label(parts[1])
                if len(parts) == 3 and parts[2]:
                    scores[sid] = float(parts[2])
        return cls(labels, scores)

    def save(self, path, header: str | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if header:
                fh.write(header)
            for sid, lab in self.labels.items():
                row = [sid, LABELS[lab]]
                if sid in self.scores:
                    row.append(f"{self.scores[sid]:.6f}")
                fh.write("\t".join(row) + "\n")


def _as_label_map(obj) -> dict[str, int]:
    if isinstance(obj, PredictionFile):
        return obj.labels
    if isinstance(obj, Mapping):
        return {str(k): int(v) for k, v in obj.items()}
    return {str(i): int(v) for i, v in enumerate(obj)}


def accuracy_from_predictions(predictions, labels) -> tuple[float, int]:
    pred = _as_label_map(predictions)
    gold = _as_label_map(labels)
    if not gold:
        raise EmptyCorpus("no labelled samples")
    if set(pred) != set(gold):
        missing = sorted(set(gold) - set(pred))[:5]
        extra = sorted(set(pred) - set(gold))[:5]
        raise IdMismatch(f"prediction ids do not match corpus ids (missing {missing}, unexpected {extra})")
    correct = sum(pred[k] == gold[k] for k in gold)
    return correct / len(gold), len(gold)


# --- reports ---------------------------------------------------------------------


@dataclass
class PhenomenonResult:
    phenomenon: str
    p: float
    p_prime: float
    n_base: int
    n_rule: int
    tau: float
    semantic_robust: bool
    bounded_invariant: bool
    p_value: float | None = None
    method: str | None = None
    stats: dict = field(default_factory=dict)

    @property
    def pair(self) -> PerformancePair:
        return PerformancePair(self.p, self.p_prime, self.n_base, self.n_rule)

    def recompute(self) -> tuple[bool, bool]:
        return semantic_robustness(self.pair, self.tau), bounded_invariance(self.pair, self.tau)


@dataclass
class RobustnessReport:
    records: list[PhenomenonResult]
    config: dict = field(default_factory=dict)
    models: list[dict] = field(default_factory=list)

    def record(self, phenomenon: str) -> PhenomenonResult:
        for r in self.records:
            if r.phenomenon == phenomenon:
                return r
        raise KeyError(phenomenon)

    def to_dict(self) -> dict:
        return {"config": self.config, "records": [asdict(r) for r in self.records], "models": self.models}

    @classmethod
    def from_dict(cls, d: dict) -> "RobustnessReport":
        return cls([PhenomenonResult(**r) for r in d["records"]], d.get("config", {}), d.get("models", []))

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "RobustnessReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def render(self) -> str:
        lines = ["phenomenon\tp\tp_prime\ttau\tsemantic_robust\tbounded_invariant\tp_value"]
        for r in self.records:
            pv = "" if r.p_value is None else f"{r.p_value:.4g}"
            lines.append(
                f"{r.phenomenon}\t{r.p:.4f}\t{r.p_prime:.4f}\t{r.tau:g}\t"
                f"{str(r.semantic_robust).lower()}\t{str(r.bounded_invariant).lower()}\t{pv}"
            )
        return "\n".join(lines) + "\n"


def assess_global(
    predictions_base,
    predictions_rule,
    labels_base,
    labels_rule,
    tau: float = DEFAULT_TAU,
    phenomenon: str = "rule",
) -> RobustnessReport:
    """Compare accuracy on the base test set (p) with accuracy on the rule set (p')."""
    _check_tau(tau)
    p, n_base = accuracy_from_predictions(predictions_base, labels_base)
    p_prime, n_rule = accuracy_from_predictions(predictions_rule, labels_rule)
    pair = PerformancePair(p, p_prime, n_base, n_rule)
    rec = PhenomenonResult(
        phenomenon, p, p_prime, n_base, n_rule, tau, semantic_robustness(pair, tau), bounded_invariance(pair, tau)
    )
    return RobustnessReport([rec])


def assess_population(
    base_acc: Sequence[float],
    rule_acc: Sequence[float],
    tau: float = DEFAULT_TAU,
    phenomenon: str = "rule",
    n_base: int = 1,
    n_rule: int = 1,
    seed: int = 0,
) -> PhenomenonResult:
    """Verdicts on population means plus a permutation test of p against p'."""
    _check_tau(tau)
    base_acc, rule_acc = np.asarray(base_acc, float), np.asarray(rule_acc, float)
    pair = PerformancePair(float(base_acc.mean()), float(rule_acc.mean()), n_base, n_rule)
    p_value = significance_test(base_acc, rule_acc, seed=seed) if len(base_acc) >= 2 else None
    return PhenomenonResult(
        phenomenon,
        pair.p,
        pair.p_prime,
        n_base,
        n_rule,
        tau,
        semantic_robustness(pair, tau),
        bounded_invariance(pair, tau),
        p_value,
        "permutation" if p_value is not None else None,
        {
            "p_mean": pair.p,
            "p_std": float(base_acc.std()),
            "p_prime_mean": pair.p_prime,
            "p_prime_std": float(rule_acc.std()),
            "n_models": int(len(base_acc)),
        },
    )


# --- significance ------------------------------------------------------------------


def significance_test(acc_a, acc_b, n_resamples: int = 10_000, seed: int = 0, exact: bool | None = None) -> float:
    """Two-sided permutation test on the difference of means of two unpaired samples.

    When the number of distinct group assignments is at most ``n_resamples`` the
    null distribution is enumerated exactly (``exact=None`` picks automatically);
    otherwise ``n_resamples`` seeded random relabelings are drawn and the
    p-value is ``(hits + 1) / (n_resamples + 1)``.
    """
    a = np.asarray(acc_a, dtype=np.float64)
    b = np.asarray(acc_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise InsufficientSamples("each population needs at least 2 values")
    pooled = np.concatenate([a, b])
    n, k = len(pooled), len(a)
    observed = abs(a.mean() - b.mean())
    # relabelings tying the observed statistic count as at least as extreme
    slack = 1e-12 * max(1.0, float(np.abs(pooled).max()))
    total = math.comb(n, k)
    if exact is None:
        exact = total <= n_resamples
    if exact:
        sums = np.array([pooled[list(c)].sum() for c in itertools.combinations(range(n), k)])
        diffs = np.abs(sums / k - (pooled.sum() - sums) / (n - k))
        return float(np.mean(diffs >= observed - slack))
    rng = np.random.default_rng(seed)
    perms = rng.permuted(np.broadcast_to(pooled, (n_resamples, n)), axis=1)
    diffs = np.abs(perms[:, :k].mean(axis=1) - perms[:, k:].mean(axis=1))
    hits = int(np.sum(diffs >= observed - slack))
    return (hits + 1) / (n_resamples + 1)


@dataclass
class ComparisonTable:
    populations: list[str]
    metrics: list[str]
    means: dict
    stds: dict
    stars: dict
    p_values: dict

    def cell(self, metric: str, pop: str) -> str:
        s = f"{self.means[metric, pop]:.4f} ± {self.stds[metric, pop]:.4f}"
        return s + ("*" if self.stars[metric, pop] else "")

    def render(self) -> str:
        rows = [["metric"] + self.populations]
        rows += [[m] + [self.cell(m, p) for p in self.populations] for m in self.metrics]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    def to_tsv(self) -> str:
        out = ["metric\tpopulation\tmean\tstd\tstar\tp_value"]
        for m in self.metrics:
            for p in self.populations:
                pv = self.p_values.get((m, p))
                out.append(
                    f"{m}\t{p}\t{self.means[m, p]:.6f}\t{self.stds[m, p]:.6f}\t"
                    f"{'*' if self.stars[m, p] else ''}\t{'' if pv is None else f'{pv:.6g}'}"
                )
        return "\n".join(out) + "\n"


def compare_populations(
    populations: Mapping[str, Mapping[str, Sequence[float]]],
    metrics: Sequence[str] | None = None,
    reference: str | None = None,
    alpha: float = ALPHA,
    seed: int = 0,
    n_resamples: int = 10_000,
) -> ComparisonTable:
    """Mean ± std per metric and population; significant differences against the
    reference population star whichever side has the higher mean.

    A single population yields a table without stars.
    """
    names = list(populations)
    if not names:
        raise InsufficientSamples("no populations to compare")
    reference = reference or names[0]
    if metrics is None:
        metrics = []
        for name in names:
            metrics += [m for m in populations[name] if m not in metrics]
    means, stds, stars, pvals = {}, {}, {}, {}
    for m in metrics:
        for p in names:
            v = np.asarray(populations[p][m], dtype=float)
            means[m, p], stds[m, p] = float(v.mean()), float(v.std())
            stars[m, p] = False
        ref = populations[reference][m]
        for p in names:
            if p == reference:
                continue
            pv = significance_test(ref, populations[p][m], n_resamples=n_resamples, seed=seed)
            pvals[m, p] = pv
            if pv <= alpha:
                better = p if means[m, p] > means[m, reference] else reference
                stars[m, better] = True
    return ComparisonTable(names, list(metrics), means, stds, stars, pvals)
