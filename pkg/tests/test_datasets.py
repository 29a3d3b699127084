from collections import Counter

import pytest
from hypothesis import given, strategies as st

from semrobe.datasets import AugmentSpec, Corpus, augment, from_samples, load_corpus, split
from semrobe.errors import EmptyCorpus, InvalidFraction, UnknownLabel
from semrobe.experiment import demo_embeddings
from semrobe.template_engine import LabeledText


def texts(n, label=None, provenance="base"):
    return [LabeledText((f"w{i}",), (i % 2 if label is None else label), (), provenance) for i in range(n)]


def test_load_two_lines(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("positive\tA fine film.\nNEGATIVE\tDull!\n", encoding="utf-8")
    c = load_corpus(f)
    assert len(c) == 2
    assert c.labels.tolist() == [1, 0]
    assert c.samples[0].text == ("a", "fine", "film", ".")


def test_load_only_comments(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("# nothing\n# here\n", encoding="utf-8")
    with pytest.raises(EmptyCorpus):
        load_corpus(f)


def test_load_collects_malformed(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("positive\tok\nno tab here\nnegative\t\nnegative\tbad\n", encoding="utf-8")
    c = load_corpus(f)
    assert len(c) == 2
    assert [lineno for lineno, _ in c.malformed] == [2, 3]


def test_load_unknown_label(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("positive\tok\nmeh\tso so\n", encoding="utf-8")
    with pytest.raises(UnknownLabel, match=":2"):
        load_corpus(f)


def test_provenance_column(tmp_path):
    c = from_samples(texts(3) + texts(2, provenance="rule:sarcasm"))
    c.save(tmp_path / "c.tsv", provenance=True)
    back = load_corpus(tmp_path / "c.tsv")
    assert back.provenance == "mixed"
    assert {k: len(v) for k, v in back.by_provenance().items()} == {"base": 3, "rule:sarcasm": 2}


def test_corpus_must_be_nonempty():
    with pytest.raises(EmptyCorpus):
        Corpus([])


def test_embed_shape():
    c = from_samples(texts(4))
    assert c.embed(demo_embeddings(), 25).shape == (4, 1250)


# --- augmentation ---------------------------------------------------------------------


def test_factor_zero_is_base():
    base = from_samples(texts(10))
    out = augment(base, AugmentSpec(0, from_samples(texts(3, provenance="rule:x")), 1))
    assert Counter(out.samples) == Counter(base.samples)
    assert out.provenance == "base"


def test_footnote_sizes():
    base = Corpus([LabeledText(("x",), 0)] * 112_000)
    rule = Corpus([LabeledText(("y",), 1, (), "rule:shallow_negation")] * 1000, provenance="rule:shallow_negation")
    assert len(augment(base, AugmentSpec(1, rule))) == 113_000
    assert len(augment(base, AugmentSpec(750, rule))) == 862_000


@given(st.integers(1, 30), st.integers(1, 10), st.integers(0, 5), st.integers(0, 100))
def test_augment_size_and_provenance(n_base, n_rule, factor, seed):
    base = from_samples(texts(n_base))
    rule = from_samples(texts(n_rule, provenance="rule:x"))
    out = augment(base, AugmentSpec(factor, rule, seed))
    assert len(out) == n_base + factor * n_rule
    groups = Counter(s.provenance for s in out)
    assert groups["base"] == n_base and groups.get("rule:x", 0) == factor * n_rule


def test_augment_shuffle_seeded():
    base, rule = from_samples(texts(20)), from_samples(texts(5, provenance="rule:x"))
    a = augment(base, AugmentSpec(2, rule, 3)).samples
    assert a == augment(base, AugmentSpec(2, rule, 3)).samples
    assert a != augment(base, AugmentSpec(2, rule, 4)).samples


def test_augment_requires_base_provenance():
    rule = from_samples(texts(2, provenance="rule:x"))
    with pytest.raises(ValueError):
        augment(rule, AugmentSpec(1, rule))
    with pytest.raises(ValueError):
        AugmentSpec(-1, rule)


# --- splitting -------------------------------------------------------------------------


def test_split_balanced_halves():
    c = from_samples(texts(10))
    a, b = split(c, 0.5, seed=0)
    assert len(a) == len(b) == 5
    # five per class cannot halve evenly; each side gets a 3/2 mix
    assert sorted(Counter(a.labels.tolist()).values()) == [2, 3]
    assert sorted(Counter(b.labels.tolist()).values()) == [2, 3]


@given(st.integers(4, 60), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_split_disjoint_union_and_reproducible(n, fraction, seed):
    c = from_samples(texts(n))
    try:
        a, b = split(c, fraction, seed)
    except InvalidFraction:
        return
    assert Counter(a.samples) + Counter(b.samples) == Counter(c.samples)
    assert not set(a.samples) & set(b.samples)
    assert len(a) == round(fraction * n)
    again = split(c, fraction, seed)
    assert again[0].samples == a.samples and again[1].samples == b.samples


@pytest.mark.parametrize("fraction", [0, 1, -0.5, 1.5])
def test_split_invalid_fraction(fraction):
    with pytest.raises(InvalidFraction):
        split(from_samples(texts(10)), fraction)
