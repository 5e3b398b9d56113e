"""Random well-formed treebanks for tests and smoke runs."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from arcparse.conllx import RELATIONS, Relation, Sentence

NON_ROOT = [r for r in RELATIONS if r is not Relation.HED]
SYLLABLES = ["ba", "di", "ku", "me", "no", "ra", "si", "to", "we", "zu", "书", "他", "送"]
TAGS = ["n", "v", "p", "a", "d", "u", "w"]


def random_projective_heads(n: int, rng: np.random.Generator) -> list[int]:
    """Uniformly-shaped random single-root projective tree over 1..n."""
    heads = [0] * n

    def attach(lo: int, hi: int, head: int) -> None:
        # split [lo, hi] into consecutive blocks, each a subtree under ``head``
        pos = lo
        while pos <= hi:
            end = int(rng.integers(pos, hi + 1))
            root = int(rng.integers(pos, end + 1))
            heads[root - 1] = head
            attach(pos, root - 1, root)
            attach(root + 1, end, root)
            pos = end + 1

    root = int(rng.integers(1, n + 1))
    heads[root - 1] = 0
    attach(1, root - 1, root)
    attach(root + 1, n, root)
    return heads


def random_heads(n: int, rng: np.random.Generator) -> list[int]:
    """Random single-root tree, not necessarily projective."""
    order = [int(i) for i in rng.permutation(np.arange(1, n + 1))]
    heads = [0] * n
    for k, node in enumerate(order[1:], 1):
        heads[node - 1] = order[int(rng.integers(0, k))]
    return heads


def random_form(rng: np.random.Generator, syllables: Sequence[str] = SYLLABLES) -> str:
    return "".join(syllables[int(i)] for i in rng.integers(0, len(syllables), size=int(rng.integers(1, 4))))


def random_sentence(rng: np.random.Generator, n: int, projective: bool = True,
                    with_tags: bool = False, vocabulary: Sequence[str] | None = None) -> Sentence:
    heads = random_projective_heads(n, rng) if projective else random_heads(n, rng)
    rels = [Relation.HED if h == 0 else NON_ROOT[int(rng.integers(0, len(NON_ROOT)))] for h in heads]
    if vocabulary is None:
        forms = [random_form(rng) for _ in range(n)]
    else:
        forms = [vocabulary[int(i)] for i in rng.integers(0, len(vocabulary), size=n)]
    tags = [TAGS[int(rng.integers(0, len(TAGS)))] for _ in range(n)] if with_tags else None
    return Sentence.from_columns(forms, heads, rels, tags)


def random_treebank(count: int, seed: int = 0, min_len: int = 1, max_len: int = 12,
                    projective: bool = True, with_tags: bool = False) -> list[Sentence]:
    rng = np.random.default_rng(seed)
    return [random_sentence(rng, int(rng.integers(min_len, max_len + 1)), projective, with_tags)
            for _ in range(count)]


def overfit_treebank(count: int = 32, seed: int = 0, min_len: int = 2, max_len: int = 8,
                     with_tags: bool = True) -> list[Sentence]:
    """Projective corpus in which every one of the 14 relations occurs.

    Non-root labels are dealt round-robin from a shuffled cycle so that all
    13 of them appear as soon as the corpus has 13 non-root arcs.
    """
    rng = np.random.default_rng(seed)
    deck: list[Relation] = []
    sentences = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        heads = random_projective_heads(n, rng)
        rels = []
        for h in heads:
            if h == 0:
                rels.append(Relation.HED)
                continue
            if not deck:
                deck = [NON_ROOT[int(i)] for i in rng.permutation(len(NON_ROOT))]
            rels.append(deck.pop())
        forms = [random_form(rng) for _ in range(n)]
        tags = [TAGS[int(rng.integers(0, len(TAGS)))] for _ in range(n)] if with_tags else None
        sentences.append(Sentence.from_columns(forms, heads, rels, tags))
    return sentences
