"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line and the verdicts are repeated in
the terminal summary.  The desk experiment (criteria 6 and 7) trains 40 models
and takes around a minute on one CPU.
"""

import contextlib
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_force_discrete_robust, finite_difference_grads, max_relative_error
from semrobe.cli import main
from semrobe.embedding import BallSpec, EmbeddingTable, dball_enumerate_sentence, embed_batch, single_substitutions
from semrobe.experiment import ExperimentConfig, run_experiment
from semrobe.ibp import RobustTrainConfig, certify_continuous, ibp_loss, interval_forward
from semrobe.model import ce_loss_and_grads, init_model, logits, predict
from semrobe.robustness import PerformancePair, bounded_invariance, semantic_robustness, significance_test
from semrobe.template_engine import PHENOMENA, data_path, default_rule_pack, expand_exhaustive, expand_sampled, write_corpus

GOLDEN = Path(__file__).parent / "golden" / "sample_seed0.tsv"


@pytest.fixture
def criterion(record_property, capsys):
    @contextlib.contextmanager
    def check(number, text):
        record_property("criterion", f"{number}: {text}")
        start = time.perf_counter()
        try:
            yield
        except BaseException:
            verdict = "FAIL"
            raise
        else:
            verdict = "PASS"
        finally:
            with capsys.disabled():
                print(f"\n{verdict}  criterion {number}: {text} ({time.perf_counter() - start:.1f} s)")

    return check


# --- 1: discrete balls sit inside continuous balls -------------------------------------


def _random_instance(rng):
    dim = int(rng.integers(1, 5))
    n_words = int(rng.integers(2, min(8, 6**dim) + 1))
    # distinct grid points: balls of modest radius hold several words, the table stays injective
    cells = rng.choice(6**dim, size=n_words, replace=False)
    vecs = np.array([np.unravel_index(c, (6,) * dim) for c in cells]) * 0.1
    vocab = tuple(f"w{i}" for i in range(n_words))
    words = list(rng.choice(vocab + ("<oov>",), size=int(rng.integers(1, 4))))
    eps = 0.0 if rng.random() < 0.15 else float(rng.choice([0.05, 0.1, 0.15, 0.2, 0.3, 0.5]))
    p = [1, 2, math.inf][int(rng.integers(0, 3))]
    return EmbeddingTable(vocab, vecs), words, eps, p


def _dist(a, b, p):
    d = np.abs(a - b)
    return d.max() if p == math.inf else (d.sum() if p == 1 else np.sqrt((d * d).sum()))


def test_criterion_1_discrete_ball_inside_continuous_ball(criterion):
    with criterion(1, "1,000 random D-ball instances embed inside their continuous balls, eps=0 gives singletons"):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            table, words, eps, p = _random_instance(rng)
            length = len(words)
            center = embed_batch(table, [words], length)[0].reshape(length, -1)
            if p == math.inf:
                spec = BallSpec(eps, p, "whole_sequence")
                seqs = list(dball_enumerate_sentence(table, words, spec))
                # completeness against a scan of every vocabulary sequence of this length
                cands = [table.vocab if w in table else (w,) for w in words]
                brute = {
                    c for c in itertools.product(*cands)
                    if _dist(embed_batch(table, [c], length)[0], center.reshape(-1), p) <= eps
                }
                assert set(seqs) == brute
                for s in seqs:
                    assert _dist(embed_batch(table, [s], length)[0], center.reshape(-1), p) <= eps
            else:
                per_word = list(dball_enumerate_sentence(table, words, BallSpec(eps, p, "per_word")))
                for s in per_word:
                    rows = embed_batch(table, [s], length)[0].reshape(length, -1)
                    assert all(_dist(r, c, p) <= eps for r, c in zip(rows, center))
                seqs = list(single_substitutions(table, words, BallSpec(eps, p)))
                for s in seqs:
                    assert _dist(embed_batch(table, [s], length)[0], center.reshape(-1), p) <= eps
            if eps == 0.0:
                assert set(seqs) == {tuple(words)}
        assert time.perf_counter() - start < 30


# --- 2: interval bounds are sound ---------------------------------------------------


def _random_net(seed, n_in, hidden):
    rng = np.random.default_rng(seed)
    m = init_model(1, n_in, hidden, seed=seed, dtype=np.float64)
    for layer in m.layers:
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    return m


def test_criterion_2_ibp_soundness(criterion):
    with criterion(2, "IBP bounds contain 200x1,000 sampled logits; certified verdicts survive exhaustive search"):
        start = time.perf_counter()
        rng = np.random.default_rng(99)
        for i in range(200):
            hidden = [(5,), (6, 4), (4, 4, 3)][i % 3]
            m = _random_net(i, 6, hidden)
            x = rng.normal(size=6)
            eps = float(rng.choice([0.001, 0.01, 0.1, 0.5]))
            iv = interval_forward(m, x, eps)
            pts = np.vstack([
                x + rng.uniform(-eps, eps, size=(900, 6)),
                x + eps * rng.choice([-1.0, 1.0], size=(100, 6)),
            ])
            z = logits(m, pts)
            assert np.all(z >= iv.lo - 1e-12) and np.all(z <= iv.hi + 1e-12)

        # 60-word toy vocabulary in tight clusters so that eps-balls hold several words
        vocab = tuple(f"v{i}" for i in range(60))
        centers = rng.normal(size=(12, 4))
        vecs = np.repeat(centers, 5, axis=0) + rng.uniform(-0.004, 0.004, size=(60, 4))
        table = EmbeddingTable(vocab, vecs)
        certified = multi = 0
        for i in range(200):
            m = init_model(3, 4, (6,), seed=1000 + i, dtype=np.float64)
            words = list(rng.choice(vocab, size=3))
            x = embed_batch(table, [words], 3)[0]
            label = predict(m, x)
            for eps in (0.001, 0.01):
                if certify_continuous(m, x, eps, label).verdict != "certified":
                    continue
                certified += 1
                multi += any(
                    np.sum(np.max(np.abs(vecs - table.vector(w)), axis=1) <= eps) > 1 for w in words
                )
                assert brute_force_discrete_robust(
                    lambda ws: predict(m, embed_batch(table, [ws], 3)[0]), table, words, eps
                )
        assert certified > 0 and multi > 0
        assert time.perf_counter() - start < 120


# --- 3: gradients -------------------------------------------------------------------


@pytest.mark.parametrize("hidden", [(5,), (5, 4)], ids=["2layer", "3layer"])
def test_criterion_3_gradient_checks(criterion, hidden):
    with criterion(3, f"analytic gradients match central differences, hidden={hidden}"):
        rng = np.random.default_rng(len(hidden))
        m = _random_net(7, 6, hidden)
        x = rng.normal(size=(6, 6))
        y = rng.integers(0, 2, size=6)
        _, analytic = ce_loss_and_grads(m, x, y)
        numeric = finite_difference_grads(lambda: ce_loss_and_grads(m, x, y)[0], m.params())
        assert max_relative_error(analytic, numeric) < 1e-4
        for kappa in (0.0, 0.5):
            cfg = RobustTrainConfig(0.05, kappa=kappa, ramp_epochs=0)
            _, analytic = ibp_loss(m, (x, y), cfg, epoch=0)
            numeric = finite_difference_grads(lambda: ibp_loss(m, (x, y), cfg, epoch=0)[0], m.params())
            assert max_relative_error(analytic, numeric) < 1e-4


# --- 4: template combinatorics ------------------------------------------------------------


def test_criterion_4_template_combinatorics(criterion, tmp_path):
    with criterion(4, "shipped packs expand to product-of-lexicon-size counts; seeded sample matches golden file"):
        pack = default_rule_pack()
        assert {t.phenomenon for t in pack.templates} == set(PHENOMENA)
        for t in pack.templates:
            expected = math.prod(len(pack.lexicons[name].words) for name in t.placeholders)
            out = expand_exhaustive(t, pack.lexicons)
            assert len(out) == len(set(out)) == expected
        samples = []
        for ph in PHENOMENA:
            for t in pack.by_phenomenon(ph)[:2]:
                samples += expand_sampled(t, pack.lexicons, 4, seed=0)
        out = tmp_path / "sample.tsv"
        write_corpus(samples, out, provenance=True)
        assert out.read_bytes() == GOLDEN.read_bytes()


# --- 5: metric verdicts ---------------------------------------------------------------


def test_criterion_5_metric_verdicts(criterion):
    with criterion(5, "robustness and invariance verdicts on worked cases; monotone in tau on 10,000 pairs"):
        assert semantic_robustness(PerformancePair(0.9, 0.88), 0.05)
        assert not semantic_robustness(PerformancePair(0.9, 0.84), 0.05)
        assert all(semantic_robustness(PerformancePair(0.9, 0.95), t) for t in (0.0, 0.05, 1.0))
        assert bounded_invariance(PerformancePair(0.9, 0.88), 0.05)
        assert not bounded_invariance(PerformancePair(0.9, 0.97), 0.05)
        rng = np.random.default_rng(5)
        for p, q, t1, t2 in rng.uniform(0, 1, size=(10_000, 4)):
            lo, hi = sorted((t1, t2))
            pair = PerformancePair(p, q)
            assert semantic_robustness(pair, lo) <= semantic_robustness(pair, hi)
            assert bounded_invariance(pair, lo) <= bounded_invariance(pair, hi)
            assert bounded_invariance(pair, lo) <= semantic_robustness(pair, lo)
            # independent restatement of the definitions
            assert semantic_robustness(pair, lo) == (q >= max(0.0, p - lo) - 1e-12)


# --- 6 and 7: the desk experiment ----------------------------------------------------------


@pytest.fixture(scope="module")
def desk():
    start = time.perf_counter()
    pops = run_experiment(ExperimentConfig(), log=None)
    return pops, time.perf_counter() - start


def _p(a, b):
    return significance_test(a, b, n_resamples=10_000, seed=0)


def test_criterion_6_directional_reproduction(criterion, desk):
    with criterion(6, "vanilla phenomenon gap >= 0.15, augmentation lifts negation >= 0.10 (p <= 0.05), IBP no gain"):
        pops, seconds = desk
        van, aug = pops["vanilla"], pops["augmented"]
        for ph in PHENOMENA:
            assert van.mean("accuracy") - van.mean(ph) >= 0.15, ph
        neg = "shallow_negation"
        assert aug.mean(neg) - van.mean(neg) >= 0.10
        assert _p(aug.metric(neg), van.metric(neg)) <= 0.05
        for name, pop in pops.items():
            if not name.startswith("ibp_"):
                continue
            for ph in PHENOMENA:
                improved = pop.mean(ph) > van.mean(ph) and _p(pop.metric(ph), van.metric(ph)) <= 0.05
                assert not improved, (name, ph)
        assert seconds < 15 * 60


def test_criterion_7_regularization_bias(criterion, desk):
    with criterion(7, "IBP parameter norm below vanilla at both radii; accuracy drops at eps=0.01"):
        pops, _ = desk
        van = pops["vanilla"]
        for eps in ExperimentConfig().epsilons:
            assert pops[f"ibp_{eps:g}"].mean("param_norm") < van.mean("param_norm")
        drop = van.mean("accuracy") - pops["ibp_0.01"].mean("accuracy")
        print(f"accuracy drop at eps=0.01: {drop:.4f}")
        assert drop > 0


# --- 8: reproducibility ------------------------------------------------------------------


def test_criterion_8_rerun_is_byte_identical(criterion, tmp_path):
    with criterion(8, "every pipeline artifact is reproduced byte for byte from its config header"):
        d = tmp_path

        def run(*argv):
            assert main([str(a) for a in argv]) == 0

        run("expand", "--templates", data_path("base_templates.tsv"), "--sample", 5, "--seed", 3, "--out", d / "base.tsv")
        run("expand", "--sample", 4, "--template-split", "eval", "--phenomenon", "shallow_negation",
            "--out", d / "neg.tsv")
        common = ("--corpus", d / "base.tsv", "--population", 2, "--epochs", 2, "--hidden", "8")
        run("train", *common, "--out", d / "van")
        run("train", *common, "--ibp", 0.01, "--out", d / "ibp")
        run("certify", "--model", d / "ibp" / "model_001.srm", "--corpus", d / "neg.tsv",
            "--epsilon", 0.001, "--epsilon", 0.01, "--out", d / "cert.tsv")
        run("certify", "--model", d / "ibp" / "model_001.srm", "--corpus", d / "neg.tsv",
            "--epsilon", 0.01, "--mode", "discrete", "--out", d / "disc.tsv")
        for name in ("van", "ibp"):
            run("assess", "--models", d / name, "--base-corpus", d / "base.tsv",
                "--rule", f"shallow_negation={d / 'neg.tsv'}", "--out", d / f"rep_{name}")
        run("report", d / "rep_van.json", d / "rep_ibp.json", "--out", d / "cmp.tsv",
            "--table", d / "cmp.txt", "--plot", d / "plot.tsv")

        artifacts = sorted(p for p in d.rglob("*") if p.is_file())
        before = {p: p.read_bytes() for p in artifacts}
        for target in ("base.tsv", "neg.tsv", "van", "ibp", "cert.tsv", "disc.tsv",
                       "rep_van.json", "rep_ibp.json", "cmp.tsv"):
            run("rerun", d / target)
        assert sorted(p for p in d.rglob("*") if p.is_file()) == artifacts
        for p in artifacts:
            assert p.read_bytes() == before[p], p.name
