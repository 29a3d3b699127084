"""Template DSL: label-fixed sentence patterns expanded over token lexicons.

A template line is ``pattern<TAB>label<TAB>phenomenon``; placeholders inside the
pattern are written ``@NAME@`` (case-insensitive).  A lexicon line is
``TOKEN: w1, w2, ...``.  Every expansion of a template carries the template's
label, so generated texts are label-consistent by construction.
"""

from __future__ import annotations

import itertools
import math
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import (
    DuplicateToken,
    EmptyWordList,
    ExpansionCapExceeded,
    MalformedTemplate,
    UnknownLabel,
    UnresolvedToken,
)
from .text import LABELS, parse_label, tokenize

DEFAULT_EXPANSION_CAP = 10**6
PHENOMENA = ("shallow_negation", "mixed_sentiment", "sarcasm")

_PLACEHOLDER_RE = re.compile(r"@([A-Za-z][A-Za-z0-9_]*)@")


@dataclass(frozen=True)
class Placeholder:
    name: str


@dataclass(frozen=True)
class Template:
    pattern: str
    label: int
    phenomenon: str
    parts: tuple = ()
    id: str = ""

    @property
    def placeholders(self) -> list[str]:
        """Placeholder names in order of occurrence (repeats included)."""
        return [p.name for p in self.parts if isinstance(p, Placeholder)]

    @property
    def label_name(self) -> str:
        return LABELS[self.label]


@dataclass(frozen=True)
class Lexicon:
    token: str
    words: tuple[str, ...]

    def __len__(self):
        return len(self.words)


@dataclass(frozen=True)
class LabeledText:
    text: tuple[str, ...]
    label: int
    source: tuple = ()
    provenance: str = "base"

    def __post_init__(self):
        if not self.text:
            raise ValueError("LabeledText.text must be non-empty")
        if self.label not in (0, 1):
            raise ValueError(f"label {self.label} outside the task label set")

    @property
    def sentence(self) -> str:
        return " ".join(self.text)


def _split_pattern(pattern: str) -> tuple:
    parts: list = []
    pos = 0
    for m in _PLACEHOLDER_RE.finditer(pattern):
        literal = pattern[pos : m.start()]
        if "@" in literal:
            raise MalformedTemplate(f"unterminated or invalid placeholder in {pattern!r}")
        if literal:
            parts.append(literal)
        parts.append(Placeholder(m.group(1).upper()))
        pos = m.end()
    tail = pattern[pos:]
    if "@" in tail:
        raise MalformedTemplate(f"unterminated or invalid placeholder in {pattern!r}")
    if tail:
        parts.append(tail)
    return tuple(parts)


def parse_template(line: str, template_id: str = "") -> Template:
    """Parse one ``pattern<TAB>label<TAB>phenomenon`` line."""
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 3:
        raise MalformedTemplate(f"expected 3 tab-separated fields, got {len(fields)}: {line!r}")
    pattern, raw_label, phenomenon = (f.strip() for f in fields)
    if not pattern:
        raise MalformedTemplate("empty pattern")
    if not phenomenon:
        raise MalformedTemplate("empty phenomenon tag")
    label = parse_label(raw_label)
    return Template(pattern, label, phenomenon, _split_pattern(pattern), template_id)


def parse_lexicon(content: str) -> dict[str, Lexicon]:
    """Parse lexicon text (one ``TOKEN: w1, w2`` per line) into an uppercase-keyed map."""
    out: dict[str, Lexicon] = {}
    for lineno, raw in enumerate(content.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise MalformedTemplate(f"line {lineno}: expected 'TOKEN: words', got {raw!r}")
        name, _, rest = line.partition(":")
        token = name.strip().strip("@").upper()
        if not token:
            raise MalformedTemplate(f"line {lineno}: empty token name")
        words = [w.strip() for w in rest.split(",") if w.strip()]
        if not words:
            raise EmptyWordList(f"line {lineno}: token {token} has no words")
        if len(set(words)) != len(words):
            raise MalformedTemplate(f"line {lineno}: token {token} lists a word twice")
        if any("@" in w for w in words):
            raise MalformedTemplate(f"line {lineno}: lexicon words may not contain '@'")
        if token in out:
            raise DuplicateToken(f"line {lineno}: token {token} defined twice")
        out[token] = Lexicon(token, tuple(words))
    return out


def load_lexicons(path) -> dict[str, Lexicon]:
    return parse_lexicon(Path(path).read_text(encoding="utf-8"))


def load_templates(path, lexicons: Mapping[str, Lexicon] | None = None) -> list[Template]:
    """Read a template TSV; parse errors are re-raised with the offending line number."""
    path = Path(path)
    templates = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        try:
            t = parse_template(raw, template_id=f"{path.stem}:{lineno}")
            if lexicons is not None:
                _resolve(t, lexicons)
        except (MalformedTemplate, UnknownLabel, UnresolvedToken) as exc:
            raise type(exc)(f"{path}:{lineno}: {exc}") from exc
        templates.append(t)
    return templates


def _resolve(t: Template, lex: Mapping[str, Lexicon]) -> list[Lexicon]:
    try:
        return [lex[name] for name in t.placeholders]
    except KeyError as exc:
        raise UnresolvedToken(f"template {t.id or t.pattern!r} uses undefined token {exc.args[0]}") from None


def count_expansions(t: Template, lex: Mapping[str, Lexicon]) -> int:
    return math.prod(len(l) for l in _resolve(t, lex))


def _render(t: Template, choice: Sequence[str], provenance: str, assignment: tuple) -> LabeledText:
    it = iter(choice)
    rendered = "".join(next(it) if isinstance(p, Placeholder) else p for p in t.parts)
    return LabeledText(tuple(tokenize(rendered)), t.label, (t.id, assignment), provenance)


def _provenance(t: Template) -> str:
    return f"rule:{t.phenomenon}"


def iter_expansions(t: Template, lex: Mapping[str, Lexicon]) -> Iterator[LabeledText]:
    """Stream expansions in lexicographic (placeholder position, lexicon index) order."""
    lexes = _resolve(t, lex)
    prov = _provenance(t)
    for assignment in itertools.product(*(range(len(l)) for l in lexes)):
        words = [l.words[i] for l, i in zip(lexes, assignment)]
        yield _render(t, words, prov, assignment)


def expand_exhaustive(t: Template, lex: Mapping[str, Lexicon], cap: int = DEFAULT_EXPANSION_CAP) -> list[LabeledText]:
    n = count_expansions(t, lex)
    if n > cap:
        raise ExpansionCapExceeded(f"template {t.id or t.pattern!r} expands to {n} texts (cap {cap})")
    return list(iter_expansions(t, lex))


def _decode(index: int, radices: Sequence[int]) -> tuple[int, ...]:
    # mixed radix, first placeholder most significant
    digits = []
    for r in reversed(radices):
        index, d = divmod(index, r)
        digits.append(d)
    return tuple(reversed(digits))


def expand_sampled(t: Template, lex: Mapping[str, Lexicon], n: int, seed: int) -> list[LabeledText]:
    """Draw ``n`` expansions uniformly; without replacement unless ``n`` exceeds the total.

    Without replacement the result is returned in exhaustive order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lexes = _resolve(t, lex)
    radices = [len(l) for l in lexes]
    total = math.prod(radices)
    rng = random.Random(seed)
    if n <= total:
        indices = sorted(rng.sample(range(total), n))
    else:
        indices = [rng.randrange(total) for _ in range(n)]
    prov = _provenance(t)
    out = []
    for idx in indices:
        assignment = _decode(idx, radices)
        out.append(_render(t, [l.words[i] for l, i in zip(lexes, assignment)], prov, assignment))
    return out


@dataclass
class RulePack:
    """Templates plus the lexicons they draw from."""

    templates: list[Template]
    lexicons: dict[str, Lexicon] = field(default_factory=dict)

    def by_phenomenon(self, phenomenon: str) -> list[Template]:
        return [t for t in self.templates if t.phenomenon == phenomenon]

    @property
    def phenomena(self) -> list[str]:
        return sorted({t.phenomenon for t in self.templates})

    @classmethod
    def load(cls, templates_path, lexicons_path) -> "RulePack":
        lex = load_lexicons(lexicons_path)
        return cls(load_templates(templates_path, lex), lex)


def data_path(name: str) -> Path:
    return Path(str(resources.files("semrobe") / "data" / name))


def default_rule_pack() -> RulePack:
    """The shipped shallow negation / mixed sentiment / sarcasm templates."""
    return RulePack.load(data_path("templates.tsv"), data_path("lexicons.txt"))


def base_rule_pack() -> RulePack:
    """Plain-polarity templates used to synthesize the base sentiment corpus."""
    return RulePack.load(data_path("base_templates.tsv"), data_path("lexicons.txt"))


def write_corpus(samples: Sequence[LabeledText], path, header: str | None = None, provenance: bool = False) -> None:
    """Write ``label<TAB>text`` lines (with a third provenance column when requested)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(header)
        for s in samples:
            row = [LABELS[s.label], s.sentence]
            if provenance:
                row.append(s.provenance)
            fh.write("\t".join(row) + "\n")
