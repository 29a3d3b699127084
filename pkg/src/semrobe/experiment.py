"""Desk-scale comparison of vanilla, augmented and IBP-trained populations on a
synthetic template-generated sentiment corpus."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .datasets import AugmentSpec, Corpus, augment, from_samples, split
from .embedding import EmbeddingTable, load_embeddings, synthetic_table
from .ibp import RobustTrainConfig, train_robust
from .model import Classifier, TrainConfig, accuracy, init_model, param_norm, train
from .robustness import ComparisonTable, compare_populations
from .template_engine import (
    PHENOMENA,
    RulePack,
    Template,
    base_rule_pack,
    data_path,
    default_rule_pack,
    expand_sampled,
)
from .text import tokenize


def split_templates(templates: Sequence[Template]) -> tuple[list[Template], list[Template]]:
    """Alternate templates of each phenomenon into (train, eval); no template lands in both."""
    train_t, eval_t = [], []
    seen: dict[str, int] = {}
    for t in templates:
        k = seen.get(t.phenomenon, 0)
        (train_t if k % 2 == 0 else eval_t).append(t)
        seen[t.phenomenon] = k + 1
    return train_t, eval_t


def sample_templates(templates: Sequence[Template], pack: RulePack, per_template: int, seed: int):
    out = []
    for i, t in enumerate(templates):
        out += expand_sampled(t, pack.lexicons, per_template, seed + 7919 * i)
    return out


def demo_vocabulary(packs: Sequence[RulePack]) -> tuple[list[str], dict[str, int]]:
    """Every token a pack can produce, plus polarity signs for the sentiment lexicons."""
    vocab: dict[str, None] = {}
    polarity: dict[str, int] = {}
    for pack in packs:
        for t in pack.templates:
            for part in t.parts:
                if isinstance(part, str):
                    vocab.update((w, None) for w in tokenize(part))
        for tok, lex in pack.lexicons.items():
            for word in lex.words:
                for w in tokenize(word):
                    vocab[w] = None
                    if tok == "POSITIVE":
                        polarity[w] = 1
                    elif tok == "NEGATIVE":
                        polarity[w] = -1
    return sorted(vocab), polarity


def make_demo_embeddings(dim: int = 50, seed: int = 0, min_strength: float = 0.5) -> EmbeddingTable:
    """Synthetic table over the bundled packs' vocabulary.

    Each sentiment word gets a polarity strength drawn uniformly from
    ``[min_strength, 1]``; ``min_strength < 1`` yields weakly polar words.
    """
    vocab, polarity = demo_vocabulary([default_rule_pack(), base_rule_pack()])
    rng = np.random.default_rng(seed + 1)
    strength = {w: sign * rng.uniform(min_strength, 1.0) for w, sign in sorted(polarity.items())}
    return synthetic_table(vocab, dim=dim, seed=seed, polarity=strength)


def demo_embeddings() -> EmbeddingTable:
    """The shipped 50-dimensional demo table."""
    return load_embeddings(data_path("demo_embeddings.txt"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Desk experiment settings.

    ``label_noise`` flips a seeded fraction of base training labels, standing in
    for annotation noise in a real corpus; test and rule corpora stay clean.
    """

    seed: int = 0
    n_models: int = 10
    length: int = 25
    hidden: tuple[int, ...] = (32, 32)
    base_per_template: int = 100
    base_test_fraction: float = 0.25
    label_noise: float = 0.05
    rule_train_per_template: int = 40
    rule_eval_per_template: int = 60
    augment_phenomenon: str = "shallow_negation"
    factor: int = 4
    epsilons: tuple[float, ...] = (0.001, 0.01)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=40))
    kappa: float = 0.5
    jobs: int = 1


@dataclass
class World:
    table: EmbeddingTable
    base_train: Corpus
    base_test: Corpus
    rule_train: dict[str, Corpus]
    rule_eval: dict[str, Corpus]


def build_world(cfg: ExperimentConfig, table: EmbeddingTable | None = None) -> World:
    table = table if table is not None else demo_embeddings()
    base_pack, rules = base_rule_pack(), default_rule_pack()
    base_all = from_samples(sample_templates(base_pack.templates, base_pack, cfg.base_per_template, cfg.seed))
    base_all.provenance = "base"
    base_train, base_test = split(base_all, 1 - cfg.base_test_fraction, seed=cfg.seed)
    base_test.split = "test"
    if cfg.label_noise:
        base_train = flip_labels(base_train, cfg.label_noise, cfg.seed)
    train_t, eval_t = split_templates(rules.templates)
    rule_train, rule_eval = {}, {}
    for ph in PHENOMENA:
        tr = [t for t in train_t if t.phenomenon == ph]
        ev = [t for t in eval_t if t.phenomenon == ph]
        rule_train[ph] = from_samples(sample_templates(tr, rules, cfg.rule_train_per_template, cfg.seed + 1))
        rule_eval[ph] = from_samples(
            sample_templates(ev, rules, cfg.rule_eval_per_template, cfg.seed + 2), split="test"
        )
    return World(table, base_train, base_test, rule_train, rule_eval)


def flip_labels(c: Corpus, fraction: float, seed: int) -> Corpus:
    """Copy of ``c`` with a seeded ``fraction`` of labels flipped (annotation noise)."""
    rng = np.random.default_rng(seed)
    flip = set(rng.choice(len(c), size=round(fraction * len(c)), replace=False).tolist())
    samples = [replace(s, label=1 - s.label) if i in flip else s for i, s in enumerate(c.samples)]
    return Corpus(samples, c.split, c.provenance)


@dataclass
class ModelSummary:
    seed: int
    base_accuracy: float
    phenomenon_accuracy: dict[str, float]
    param_norm: float


def evaluate(m: Classifier, world: World, seed: int = 0) -> ModelSummary:
    l = m.input_shape[0]
    base = accuracy(m, world.base_test.embed(world.table, l), world.base_test.labels)
    phen = {ph: accuracy(m, c.embed(world.table, l), c.labels) for ph, c in world.rule_eval.items()}
    return ModelSummary(seed, base, phen, param_norm(m))


def _train_one(args) -> tuple[Classifier, list]:
    kind, x, y, seed, cfg, eps, dim = args
    m = init_model(cfg.length, dim, cfg.hidden, seed=seed)
    tcfg = TrainConfig(**{**asdict(cfg.train), "seed": seed})
    if kind == "ibp":
        res = train_robust(m, (x, y), RobustTrainConfig(eps, kappa=cfg.kappa, base=tcfg))
    else:
        res = train(m, (x, y), tcfg)
    return res.model, res.log


def train_population(
    kind: str, corpus: Corpus, world: World, cfg: ExperimentConfig, epsilon: float = 0.0
) -> list[Classifier]:
    """``cfg.n_models`` models seeded ``cfg.seed + i``; parallel across models when ``cfg.jobs > 1``."""
    x = corpus.embed(world.table, cfg.length).astype(np.float32)
    y = corpus.labels
    jobs = [(kind, x, y, cfg.seed + i, cfg, epsilon, world.table.dim) for i in range(cfg.n_models)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            results = list(ex.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]
    return [m for m, _ in results]


@dataclass
class PopulationResult:
    name: str
    epsilon: float
    summaries: list[ModelSummary]

    def metric(self, name: str) -> list[float]:
        if name == "accuracy":
            return [s.base_accuracy for s in self.summaries]
        if name == "param_norm":
            return [s.param_norm for s in self.summaries]
        return [s.phenomenon_accuracy[name] for s in self.summaries]

    def metrics(self) -> dict[str, list[float]]:
        names = ["accuracy", *self.summaries[0].phenomenon_accuracy, "param_norm"]
        return {n: self.metric(n) for n in names}

    def mean(self, name: str) -> float:
        return float(np.mean(self.metric(name)))


def run_experiment(cfg: ExperimentConfig, world: World | None = None, log=print) -> dict[str, PopulationResult]:
    world = world or build_world(cfg)
    pops: dict[str, PopulationResult] = {}

    def record(name, kind, corpus, eps=0.0):
        models = train_population(kind, corpus, world, cfg, eps)
        pops[name] = PopulationResult(name, eps, [evaluate(m, world, cfg.seed + i) for i, m in enumerate(models)])
        if log:
            p = pops[name]
            phen = "  ".join(f"{ph}={p.mean(ph):.3f}" for ph in PHENOMENA)
            log(f"{name:>14}: acc={p.mean('accuracy'):.3f}  {phen}  norm={p.mean('param_norm'):.4f}")

    record("vanilla", "vanilla", world.base_train)
    aug = augment(world.base_train, AugmentSpec(cfg.factor, world.rule_train[cfg.augment_phenomenon], cfg.seed))
    record("augmented", "vanilla", aug)
    for eps in cfg.epsilons:
        record(f"ibp_{eps:g}", "ibp", world.base_train, eps)
    return pops


def comparison(pops: dict[str, PopulationResult], seed: int = 0) -> ComparisonTable:
    return compare_populations({k: v.metrics() for k, v in pops.items()}, reference="vanilla", seed=seed)


def plot_rows(pops: Sequence[PopulationResult]) -> list[tuple[float, float, float]]:
    """(epsilon, mean accuracy, mean param_norm) for each distinct epsilon, ascending."""
    by_eps: dict[float, list[PopulationResult]] = {}
    for p in pops:
        by_eps.setdefault(p.epsilon, []).append(p)
    rows = []
    for eps in sorted(by_eps):
        group = by_eps[eps]
        rows.append(
            (
                eps,
                float(np.mean([a for p in group for a in p.metric("accuracy")])),
                float(np.mean([a for p in group for a in p.metric("param_norm")])),
            )
        )
    return rows
