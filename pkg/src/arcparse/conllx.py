"""CoNLL-X treebank reading, writing, validation and statistics.

Only the ID, FORM, POSTAG, HEAD and DEPREL columns carry information; the
remaining five columns are written back as ``_``.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class Relation(str, enum.Enum):
    """The closed set of 14 dependency relations."""

    SBV = "SBV"  # subject - predicate
    VOB = "VOB"  # object - predicate
    POB = "POB"  # preposition - object
    ADV = "ADV"  # adverbial modifier
    CMP = "CMP"  # complement
    ATT = "ATT"  # attribute
    F = "F"  # directional word
    COO = "COO"  # coordination
    DBL = "DBL"  # subject-predicate phrase as object
    DOB = "DOB"  # double object
    VV = "VV"  # serial predicates sharing a subject
    IC = "IC"  # independent clause
    MT = "MT"  # empty / function word
    HED = "HED"  # sentence head, attached to the pseudo root

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, label: str) -> "Relation":
        try:
            return cls(label)
        except ValueError:
            raise ValueError(f"unknown relation label {label!r}") from None


RELATIONS: tuple[Relation, ...] = tuple(Relation)
NUM_RELATIONS = len(RELATIONS)

N_COLUMNS = 10
PLACEHOLDER = "_"


class ConllError(ValueError):
    """Malformed CoNLL-X input; ``line`` is 1-based."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class Token:
    id: int
    form: str
    head: int | None
    rel: Relation | None
    pos: str | None = None

    def __post_init__(self):
        if not self.form or any(c.isspace() for c in self.form):
            raise ValueError(f"token {self.id}: form must be non-empty without whitespace")
        if self.pos is not None and (not self.pos or any(c.isspace() for c in self.pos)):
            raise ValueError(f"token {self.id}: pos must be non-empty without whitespace")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def heads(self) -> list[int | None]:
        return [t.head for t in self.tokens]

    @property
    def rels(self) -> list[Relation | None]:
        return [t.rel for t in self.tokens]

    @property
    def tags(self) -> list[str | None]:
        return [t.pos for t in self.tokens]

    @classmethod
    def from_columns(
        cls,
        forms: Sequence[str],
        heads: Sequence[int | None],
        rels: Sequence[Relation | str | None],
        tags: Sequence[str | None] | None = None,
    ) -> "Sentence":
        if tags is None:
            tags = [None] * len(forms)
        if not len(forms) == len(heads) == len(rels) == len(tags):
            raise ValueError("column lengths differ")
        tokens = []
        for i, (form, head, rel, tag) in enumerate(zip(forms, heads, rels, tags), 1):
            if isinstance(rel, str) and not isinstance(rel, Relation):
                rel = Relation.parse(rel)
            tokens.append(Token(i, form, head, rel, tag))
        return cls(tuple(tokens))

    def with_annotation(self, heads: Sequence[int], rels: Sequence[Relation]) -> "Sentence":
        """Copy of the sentence with HEAD and DEPREL replaced."""
        if len(heads) != len(self) or len(rels) != len(self):
            raise ValueError("annotation length differs from sentence length")
        return Sentence(
            tuple(Token(t.id, t.form, int(h), r, t.pos) for t, h, r in zip(self.tokens, heads, rels))
        )


def _parse_int(text: str, column: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConllError(lineno, f"{column} is not an integer: {text!r}") from None


def parse_conllx(text: str, allow_placeholders: bool = False) -> list[Sentence]:
    """Parse CoNLL-X text into sentences.

    Tree well-formedness is not checked here; see :func:`validate`. With
    ``allow_placeholders`` a ``_`` in HEAD or DEPREL is read as ``None``
    (input to be parsed rather than gold data).
    """
    sentences: list[Sentence] = []
    block: list[Token] = []
    block_start = 0

    def flush():
        if block:
            sentences.append(Sentence(tuple(block)))
            block.clear()

    for lineno, raw in enumerate(text.split("\n"), 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush()
            continue
        if not block:
            block_start = lineno
        cols = line.split("\t")
        if len(cols) != N_COLUMNS:
            raise ConllError(lineno, f"expected {N_COLUMNS} tab-separated columns, got {len(cols)}")
        tid = _parse_int(cols[0], "ID", lineno)
        if tid != len(block) + 1:
            raise ConllError(
                lineno, f"ID {tid} out of sequence (sentence starting at line {block_start})"
            )
        if allow_placeholders and cols[6] == PLACEHOLDER:
            head = None
        else:
            head = _parse_int(cols[6], "HEAD", lineno)
        if allow_placeholders and cols[7] == PLACEHOLDER:
            rel = None
        else:
            try:
                rel = Relation.parse(cols[7])
            except ValueError as e:
                raise ConllError(lineno, str(e)) from None
        pos = None if cols[4] == PLACEHOLDER else cols[4]
        try:
            block.append(Token(tid, cols[1], head, rel, pos))
        except ValueError as e:
            raise ConllError(lineno, str(e)) from None
    flush()
    return sentences


def write_conllx(sentences: Iterable[Sentence]) -> str:
    lines: list[str] = []
    for sentence in sentences:
        for t in sentence.tokens:
            head = PLACEHOLDER if t.head is None else str(t.head)
            rel = PLACEHOLDER if t.rel is None else t.rel.value
            pos = PLACEHOLDER if t.pos is None else t.pos
            lines.append(f"{t.id}\t{t.form}\t_\t_\t{pos}\t_\t{head}\t{rel}\t_\t_\n")
        lines.append("\n")
    return "".join(lines)


def reannotate(text: str, sentences: Sequence[Sentence]) -> str:
    """Rewrite only HEAD and DEPREL of ``text`` from ``sentences``.

    Every other byte, including the eight remaining columns, blank-line runs
    and line endings, is copied through. ``sentences`` must come from
    ``parse_conllx(text, ...)``.
    """
    tokens = iter([t for s in sentences for t in s.tokens])
    out = []
    for raw in text.split("\n"):
        body = raw.rstrip("\r")
        if not body.strip():
            out.append(raw)
            continue
        try:
            tok = next(tokens)
        except StopIteration:
            raise ValueError("text has more token lines than the sentences") from None
        if tok.head is None or tok.rel is None:
            raise ValueError(f"token {tok.id} ({tok.form}) is not annotated")
        cols = body.split("\t")
        cols[6], cols[7] = str(tok.head), tok.rel.value
        out.append("\t".join(cols) + raw[len(body):])
    if next(tokens, None) is not None:
        raise ValueError("sentences have more tokens than the text")
    return "\n".join(out)


def read_treebank(path, allow_placeholders: bool = False) -> list[Sentence]:
    with open(path, encoding="utf-8", newline="") as f:
        return parse_conllx(f.read(), allow_placeholders=allow_placeholders)


def write_treebank(path, sentences: Iterable[Sentence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(write_conllx(sentences))


# -- validation ---------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    token: int
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] token {self.token}: {self.message}"


@dataclass
class ValidationReport:
    sentence_index: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


def _cycle_members(heads: Sequence[int | None]) -> set[int]:
    """Token ids lying on a head cycle. Out-of-range heads end a walk."""
    n = len(heads)
    state = [0] * (n + 1)  # 0 unseen, 1 on current path, 2 finished
    on_cycle: set[int] = set()
    for start in range(1, n + 1):
        path = []
        node = start
        while 1 <= node <= n and state[node] == 0:
            state[node] = 1
            path.append(node)
            nxt = heads[node - 1]
            node = nxt if nxt is not None else -1
        if 1 <= node <= n and state[node] == 1:
            on_cycle.update(path[path.index(node):])
        for p in path:
            state[p] = 2
    return on_cycle


def validate(sentence: Sentence, index: int = 0) -> ValidationReport:
    """Check tree and label rules; every problem becomes a report entry."""
    report = ValidationReport(index)
    add = report.violations.append
    n = len(sentence)
    heads = sentence.heads

    roots = []
    for t in sentence.tokens:
        if t.head is None:
            add(Violation("missing-head", t.id, "HEAD is unset"))
        elif not 0 <= t.head <= n:
            add(Violation("head-range", t.id, f"head {t.head} outside [0, {n}]"))
        elif t.head == t.id:
            add(Violation("self-loop", t.id, "token is its own head"))
        elif t.head == 0:
            roots.append(t.id)
        if t.rel is None:
            add(Violation("missing-rel", t.id, "DEPREL is unset"))
        elif t.head == 0 and t.rel is not Relation.HED:
            add(Violation("root-not-hed", t.id, f"root arc labelled {t.rel.value}, expected HED"))
        elif t.head != 0 and t.rel is Relation.HED:
            add(Violation("hed-off-root", t.id, "HED used on a non-root arc"))

    if not roots:
        add(Violation("no-root", 0, "no token is attached to the root"))
    elif len(roots) > 1:
        for tid in roots:
            add(Violation("multiple-roots", tid, f"{len(roots)} tokens attached to the root"))

    for tid in sorted(_cycle_members([h if h != i + 1 else None for i, h in enumerate(heads)])):
        add(Violation("cycle", tid, "token lies on a head cycle"))
    return report


# -- statistics ---------------------------------------------------------------

@dataclass
class TreebankStats:
    sentence_count: int
    token_count: int
    relation_histogram: dict[Relation, int]
    projective_fraction: float
    length_histogram: dict[int, int]

    def format(self) -> str:
        out = [
            f"sentences\t{self.sentence_count}",
            f"tokens\t{self.token_count}",
            f"projective_fraction\t{self.projective_fraction:.6f}",
            "relations:",
        ]
        for rel, count in self.relation_histogram.items():
            out.append(f"  {rel.value}\t{count}")
        out.append("lengths:")
        for length, count in sorted(self.length_histogram.items()):
            out.append(f"  {length}\t{count}")
        return "\n".join(out) + "\n"


def treebank_stats(sentences: Sequence[Sentence]) -> TreebankStats:
    from arcparse.decoder import check_projective_tree

    relations = Counter(t.rel for s in sentences for t in s.tokens)
    projective = sum(check_projective_tree(s.heads) for s in sentences)
    return TreebankStats(
        sentence_count=len(sentences),
        token_count=sum(len(s) for s in sentences),
        relation_histogram={r: relations.get(r, 0) for r in RELATIONS},
        projective_fraction=projective / len(sentences) if sentences else 1.0,
        length_histogram=dict(sorted(Counter(len(s) for s in sentences).items())),
    )
