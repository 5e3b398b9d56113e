"""Unlabeled and labeled attachment scores."""

from __future__ import annotations

import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from arcparse.conllx import RELATIONS, Relation, Sentence

LENGTH_BUCKET = 10


class AlignmentError(ValueError):
    """Gold and predicted treebanks do not describe the same tokens."""


def is_punctuation(form: str) -> bool:
    return bool(form) and all(unicodedata.category(c).startswith("P") for c in form)


@dataclass
class Tally:
    total: int = 0
    heads: int = 0
    labeled: int = 0

    def add(self, head_ok: bool, label_ok: bool) -> None:
        self.total += 1
        self.heads += head_ok
        self.labeled += head_ok and label_ok


@dataclass
class EvalResult:
    uas: float
    las: float
    token_count: int
    head_correct: int
    labeled_correct: int
    per_relation: dict[Relation, Tally] = field(default_factory=dict)
    per_length: dict[str, Tally] = field(default_factory=dict)

    def key_values(self) -> str:
        return f"uas={self.uas:.6f}\nlas={self.las:.6f}\ntokens={self.token_count}\n"

    def report(self) -> str:
        lines = [
            f"UAS: {100 * self.uas:.2f}% ({self.head_correct}/{self.token_count})",
            f"LAS: {100 * self.las:.2f}% ({self.labeled_correct}/{self.token_count})",
            "",
            f"{'relation':<10}{'total':>8}{'UAS':>9}{'LAS':>9}",
        ]
        for rel, t in self.per_relation.items():
            if t.total:
                lines.append(f"{rel.value:<10}{t.total:>8}{100 * t.heads / t.total:>8.2f}%"
                             f"{100 * t.labeled / t.total:>8.2f}%")
        lines += ["", f"{'length':<10}{'total':>8}{'UAS':>9}{'LAS':>9}"]
        for bucket, t in self.per_length.items():
            lines.append(f"{bucket:<10}{t.total:>8}{100 * t.heads / t.total:>8.2f}%"
                         f"{100 * t.labeled / t.total:>8.2f}%")
        return "\n".join(lines) + "\n"


def _bucket(length: int) -> str:
    low = (length - 1) // LENGTH_BUCKET * LENGTH_BUCKET + 1
    return f"{low}-{low + LENGTH_BUCKET - 1}"


def attachment_scores(gold: Sequence[Sentence], pred: Sequence[Sentence],
                      exclude_mt_punct: bool = False) -> EvalResult:
    """Micro-averaged UAS/LAS over all scored tokens.

    With ``exclude_mt_punct`` tokens whose gold relation is MT and whose form
    consists only of punctuation characters are left out entirely.
    """
    if len(gold) != len(pred):
        raise AlignmentError(f"gold has {len(gold)} sentences, prediction has {len(pred)}")
    per_relation = {r: Tally() for r in RELATIONS}
    per_length: dict[str, Tally] = defaultdict(Tally)
    overall = Tally()
    for i, (g, p) in enumerate(zip(gold, pred), 1):
        if len(g) != len(p):
            raise AlignmentError(f"sentence {i}: gold has {len(g)} tokens, prediction has {len(p)}")
        for gt, pt in zip(g.tokens, p.tokens):
            if gt.form != pt.form:
                raise AlignmentError(f"sentence {i}, token {gt.id}: form {gt.form!r} != {pt.form!r}")
            if exclude_mt_punct and gt.rel is Relation.MT and is_punctuation(gt.form):
                continue
            head_ok = gt.head == pt.head
            label_ok = gt.rel == pt.rel
            overall.add(head_ok, label_ok)
            per_relation[gt.rel].add(head_ok, label_ok)
            per_length[_bucket(len(g))].add(head_ok, label_ok)
    n = overall.total
    return EvalResult(
        uas=overall.heads / n if n else 0.0,
        las=overall.labeled / n if n else 0.0,
        token_count=n,
        head_correct=overall.heads,
        labeled_correct=overall.labeled,
        per_relation=per_relation,
        per_length=dict(sorted(per_length.items(), key=lambda kv: int(kv[0].split("-")[0]))),
    )
