"""Projective tree decoding from arc and relation scores.

Score matrices are indexed ``arc[dependent, head]`` and
``rel[dependent, head, label]`` with row/column 0 standing for the pseudo
root. Ties are always resolved toward the smaller index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from arcparse.conllx import RELATIONS, Relation

HED_INDEX = RELATIONS.index(Relation.HED)


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class ScorePair:
    arc: np.ndarray  # [n+1, n+1]
    rel: np.ndarray  # [n+1, n+1, n_labels]

    def __post_init__(self):
        m = self.arc.shape[0]
        if self.arc.shape != (m, m) or self.rel.shape[:2] != (m, m):
            raise ValueError(f"inconsistent score shapes {self.arc.shape}, {self.rel.shape}")

    @property
    def length(self) -> int:
        return self.arc.shape[0] - 1


@dataclass(frozen=True)
class DecodeResult:
    heads: list[int]
    rels: list[Relation]
    used_fast_path: bool
    score: float


def tree_score(arc: np.ndarray, heads: Sequence[int]) -> float:
    """Sum of ``arc[d, heads[d-1]]`` accumulated in dependent order."""
    total = 0.0
    for d, h in enumerate(heads, 1):
        total += float(arc[d, h])
    return total


def greedy_heads(arc: np.ndarray) -> list[int]:
    n = arc.shape[0] - 1
    heads = []
    for d in range(1, n + 1):
        row = np.array(arc[d], dtype=np.float64)
        row[d] = -np.inf
        heads.append(int(np.argmax(row)))
    return heads


def _is_single_root_tree(heads: Sequence[int]) -> bool:
    n = len(heads)
    if sum(1 for h in heads if h == 0) != 1:
        return False
    if any(not 0 <= h <= n or h == d for d, h in enumerate(heads, 1)):
        return False
    reaches_root = [False] * (n + 1)
    reaches_root[0] = True
    for start in range(1, n + 1):
        path = []
        node = start
        while not reaches_root[node]:
            if node in path:
                return False
            path.append(node)
            node = heads[node - 1]
        for p in path:
            reaches_root[p] = True
    return True


def check_projective_tree(heads: Sequence[int]) -> bool:
    """True iff ``heads`` is a single-root tree whose in-order traversal
    visits 0, 1, ..., n in order."""
    if not _is_single_root_tree(heads):
        return False
    n = len(heads)
    children: list[list[int]] = [[] for _ in range(n + 1)]
    for d, h in enumerate(heads, 1):
        children[h].append(d)  # ascending by construction

    expected = 0
    # stack items: (node, emitted-self flag); left deps, self, right deps
    stack: list[tuple[int, bool]] = [(0, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            if node != expected:
                return False
            expected += 1
            continue
        left = [c for c in children[node] if c < node]
        right = [c for c in children[node] if c > node]
        for c in reversed(right):
            stack.append((c, False))
        stack.append((node, True))
        for c in reversed(left):
            stack.append((c, False))
    return expected == n + 1


def eisner(arc: np.ndarray) -> tuple[list[int], float]:
    """Best projective tree with exactly one dependent of the root.

    Spans cover the words 1..n only; the root attachment is chosen last as
    ``arc[r, 0] + left-complete(1..r) + right-complete(r..n)``, which
    enforces the single-root constraint in O(n^3).
    """
    arc = np.asarray(arc, dtype=np.float64)
    n = arc.shape[0] - 1
    if n < 1:
        raise DecodeError("cannot decode an empty sentence")
    if not np.any(np.isfinite(arc[1:, 0])):
        raise DecodeError("no word can attach to the root")

    # complete[s, t, 0]: span headed at t (left-facing); [.., 1]: headed at s
    complete = np.full((n + 2, n + 2, 2), -np.inf)
    incomplete = np.full((n + 2, n + 2, 2), -np.inf)
    complete_split = np.zeros((n + 2, n + 2, 2), dtype=int)
    incomplete_split = np.zeros((n + 2, n + 2, 2), dtype=int)
    for s in range(1, n + 1):
        complete[s, s] = 0.0

    for width in range(1, n):
        for s in range(1, n - width + 1):
            t = s + width
            inner = complete[s, s:t, 1] + complete[s + 1:t + 1, t, 0]
            k = int(np.argmax(inner))
            incomplete[s, t, 0] = inner[k] + arc[s, t]  # t -> s
            incomplete[s, t, 1] = inner[k] + arc[t, s]  # s -> t
            incomplete_split[s, t] = s + k

            left = complete[s, s:t, 0] + incomplete[s:t, t, 0]
            k = int(np.argmax(left))
            complete[s, t, 0] = left[k]
            complete_split[s, t, 0] = s + k

            right = incomplete[s, s + 1:t + 1, 1] + complete[s + 1:t + 1, t, 1]
            k = int(np.argmax(right))
            complete[s, t, 1] = right[k]
            complete_split[s, t, 1] = s + 1 + k

    roots = np.array([arc[r, 0] + complete[1, r, 0] + complete[r, n, 1] for r in range(1, n + 1)])
    best = int(np.argmax(roots))
    if not np.isfinite(roots[best]):
        raise DecodeError("no finite-scoring projective tree")
    root = best + 1

    heads = [0] * n
    heads[root - 1] = 0

    stack = [("c", 1, root, 0), ("c", root, n, 1)]
    while stack:
        kind, s, t, direction = stack.pop()
        if s == t:
            continue
        if kind == "c":
            k = complete_split[s, t, direction]
            if direction == 0:
                stack += [("c", s, k, 0), ("i", k, t, 0)]
            else:
                stack += [("i", s, k, 1), ("c", k, t, 1)]
        else:
            if direction == 0:
                heads[s - 1] = t
            else:
                heads[t - 1] = s
            k = incomplete_split[s, t, direction]
            stack += [("c", s, k, 1), ("c", k + 1, t, 0)]
    return heads, tree_score(arc, heads)


def assign_labels(rel: np.ndarray, heads: Sequence[int]) -> list[Relation]:
    """Masked argmax: HED only on the root arc, and only HED there."""
    labels = []
    for d, h in enumerate(heads, 1):
        if h == 0:
            labels.append(Relation.HED)
            continue
        row = np.array(rel[d, h], dtype=np.float64)
        row[HED_INDEX] = -np.inf
        labels.append(RELATIONS[int(np.argmax(row))])
    return labels


def decode(scores: ScorePair) -> DecodeResult:
    heads = greedy_heads(scores.arc)
    fast = check_projective_tree(heads)
    if fast:
        score = tree_score(scores.arc, heads)
    else:
        heads, score = eisner(scores.arc)
    return DecodeResult(heads, assign_labels(scores.rel, heads), fast, score)
