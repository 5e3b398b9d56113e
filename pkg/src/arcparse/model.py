"""Biaffine dependency scorer.

Pipeline for one sentence of n words (row 0 is the pseudo root)::

    embed_tokens  -> [n+1, d_in]       word ⊕ char-BiLSTM (or word ⊕ POS)
    encode        -> [n+1, 2*lstm]     stacked BiLSTM
    score         -> arc [n+1, n+1], rel [n+1, n+1, 14]

All computation is recorded on a :class:`~arcparse.numerics.Trace` so the
same code path serves training (with gradients) and inference.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from arcparse.conllx import NUM_RELATIONS, RELATIONS, Relation, Sentence
from arcparse.decoder import ScorePair
from arcparse.numerics import Node, Trace

PAD, UNK = 0, 1
PAD_SYMBOL, UNK_SYMBOL = "<pad>", "<unk>"
INPUT_MODES = ("char", "pos")


@dataclass
class HyperParams:
    word_emb_dim: int = 300
    char_emb_dim: int = 50
    char_lstm_hidden: int = 50
    pos_emb_dim: int = 100
    lstm_hidden: int = 400
    lstm_depth: int = 3
    arc_mlp: int = 500
    rel_mlp: int = 100
    mlp_depth: int = 1
    word_dropout: float = 0.33
    char_dropout: float = 0.33
    pos_dropout: float = 0.33
    lstm_dropout: float = 0.33
    arc_mlp_dropout: float = 0.33
    rel_mlp_dropout: float = 0.33
    learning_rate: float = 2e-3
    input_mode: str = "char"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.endswith("_dropout"):
                if not 0.0 <= value < 1.0:
                    raise ValueError(f"{f.name}={value} must lie in [0, 1)")
            elif f.name == "learning_rate":
                if not value > 0:
                    raise ValueError("learning_rate must be positive")
            elif f.name == "input_mode":
                if value not in INPUT_MODES:
                    raise ValueError(f"input_mode must be one of {INPUT_MODES}, got {value!r}")
            elif not (isinstance(value, int) and value > 0):
                raise ValueError(f"{f.name}={value!r} must be a positive integer")
        if self.mlp_depth != 1:
            raise ValueError("only mlp_depth=1 is supported")

    @property
    def input_dim(self) -> int:
        if self.input_mode == "char":
            return self.word_emb_dim + 2 * self.char_lstm_hidden
        return self.word_emb_dim + self.pos_emb_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "HyperParams":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise KeyError(f"unknown hyperparameter(s): {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, raw in values.items():
            kind = type(getattr(cls(), key))
            kwargs[key] = kind(raw) if not isinstance(raw, kind) else raw
        return cls(**kwargs)


# -- vocabulary ---------------------------------------------------------------

@dataclass
class Vocab:
    words: list[str]
    chars: list[str]
    tags: list[str]
    relations: list[Relation] = field(default_factory=lambda: list(RELATIONS))

    def __post_init__(self):
        for name in ("words", "chars", "tags"):
            symbols = getattr(self, name)
            if symbols[:2] != [PAD_SYMBOL, UNK_SYMBOL]:
                raise ValueError(f"{name} vocabulary must start with PAD and UNK")
            if len(set(symbols)) != len(symbols):
                raise ValueError(f"{name} vocabulary has duplicates")
        if list(self.relations) != list(RELATIONS):
            raise ValueError("relation vocabulary must be the fixed 14-label set")
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.char_index = {c: i for i, c in enumerate(self.chars)}
        self.tag_index = {t: i for i, t in enumerate(self.tags)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}

    def word_ids(self, forms: Sequence[str]) -> list[int]:
        return [self.word_index.get(w, UNK) for w in forms]

    def char_ids(self, form: str) -> list[int]:
        return [self.char_index.get(c, UNK) for c in form]

    def tag_ids(self, tags: Sequence[str | None]) -> list[int]:
        if any(t is None for t in tags):
            raise ValueError("POS input mode needs a tag on every token")
        return [self.tag_index.get(t, UNK) for t in tags]


def build_vocab(treebank: Sequence[Sentence], min_freq: int = 1) -> Vocab:
    if not treebank:
        raise ValueError("cannot build a vocabulary from an empty treebank")
    if min_freq < 1:
        raise ValueError("min_freq must be positive")
    words = Counter(t.form for s in treebank for t in s.tokens)
    chars = Counter(c for s in treebank for t in s.tokens for c in t.form)
    tags = Counter(t.pos for s in treebank for t in s.tokens if t.pos is not None)

    def ordered(counts, threshold=1):
        kept = [sym for sym, c in counts.items() if c >= threshold]
        return [PAD_SYMBOL, UNK_SYMBOL] + sorted(kept, key=lambda s: (-counts[s], s))

    return Vocab(ordered(words, min_freq), ordered(chars), ordered(tags))


# -- parameters ---------------------------------------------------------------

def _glorot(rng, fan_in, fan_out, shape=None):
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def _lstm_params(prefix, rng, d_in, hidden):
    return {
        f"{prefix}.w_ih": _glorot(rng, d_in, 4 * hidden),
        f"{prefix}.w_hh": _glorot(rng, hidden, 4 * hidden),
        f"{prefix}.b": np.zeros(4 * hidden),
    }


def parameter_shapes(hp: HyperParams, vocab: Vocab) -> dict[str, tuple[int, ...]]:
    """Expected shape of every parameter, in canonical order."""
    shapes: dict[str, tuple[int, ...]] = {
        "embed.word": (len(vocab.words), hp.word_emb_dim),
        "embed.root": (1, hp.input_dim),
    }
    if hp.input_mode == "char":
        shapes["embed.char"] = (len(vocab.chars), hp.char_emb_dim)
        for side in ("fwd", "bwd"):
            shapes[f"char_lstm.{side}.w_ih"] = (hp.char_emb_dim, 4 * hp.char_lstm_hidden)
            shapes[f"char_lstm.{side}.w_hh"] = (hp.char_lstm_hidden, 4 * hp.char_lstm_hidden)
            shapes[f"char_lstm.{side}.b"] = (4 * hp.char_lstm_hidden,)
    else:
        shapes["embed.pos"] = (len(vocab.tags), hp.pos_emb_dim)
    d_in = hp.input_dim
    for layer in range(hp.lstm_depth):
        for side in ("fwd", "bwd"):
            shapes[f"encoder.{layer}.{side}.w_ih"] = (d_in, 4 * hp.lstm_hidden)
            shapes[f"encoder.{layer}.{side}.w_hh"] = (hp.lstm_hidden, 4 * hp.lstm_hidden)
            shapes[f"encoder.{layer}.{side}.b"] = (4 * hp.lstm_hidden,)
        d_in = 2 * hp.lstm_hidden
    for head, width in (("arc_dep", hp.arc_mlp), ("arc_head", hp.arc_mlp),
                        ("rel_dep", hp.rel_mlp), ("rel_head", hp.rel_mlp)):
        shapes[f"mlp.{head}.w"] = (2 * hp.lstm_hidden, width)
        shapes[f"mlp.{head}.b"] = (width,)
    shapes["biaffine.arc"] = (hp.arc_mlp + 1, hp.arc_mlp)
    shapes["biaffine.rel"] = (hp.rel_mlp + 1, NUM_RELATIONS, hp.rel_mlp + 1)
    return shapes


@dataclass
class ParserModel:
    vocab: Vocab
    hp: HyperParams
    params: dict[str, np.ndarray]

    def __post_init__(self):
        expected = parameter_shapes(self.hp, self.vocab)
        if set(expected) != set(self.params):
            missing = set(expected) - set(self.params)
            extra = set(self.params) - set(expected)
            raise ValueError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: shape {self.params[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, vocab: Vocab, hp: HyperParams, seed: int = 0) -> "ParserModel":
        """Glorot-uniform weights, U(-0.1, 0.1) embeddings, zero biases and biaffine tensors."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in parameter_shapes(hp, vocab).items():
            if name.startswith("embed."):
                params[name] = rng.uniform(-0.1, 0.1, size=shape)
            elif name.startswith("biaffine.") or name.endswith(".b"):
                params[name] = np.zeros(shape)
            elif ".w_hh" in name or ".w_ih" in name or name.endswith(".w"):
                params[name] = _glorot(rng, shape[0], shape[1])
            else:  # pragma: no cover - every parameter kind is listed above
                raise AssertionError(name)
        params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        return cls(vocab, hp, params)

    def copy(self) -> "ParserModel":
        return ParserModel(self.vocab, self.hp, {k: v.copy() for k, v in self.params.items()})

    def scores(self, sentence: Sentence) -> ScorePair:
        """Inference-mode scores with the root row of ``arc`` masked to -inf."""
        tr = Trace()
        arc, rel = forward(tr, self, sentence)
        arc_values = np.array(arc.value)
        arc_values[0, :] = -np.inf
        return ScorePair(arc_values, np.array(rel.value))


# -- forward pass -------------------------------------------------------------

def _dropout_mask(rng, shape, rate) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _unk_replace(ids, rate, rng):
    from arcparse.trainer import apply_token_dropout

    return apply_token_dropout(ids, rate, rng)


def _p(tr: Trace, model: ParserModel, name: str) -> Node:
    return tr.param(name, model.params[name])


def _char_vectors(tr, model, forms, train_mode, rng):
    hp, vocab = model.hp, model.vocab
    table = _p(tr, model, "embed.char")
    fwd = [_p(tr, model, f"char_lstm.fwd.{k}") for k in ("w_ih", "w_hh", "b")]
    bwd = [_p(tr, model, f"char_lstm.bwd.{k}") for k in ("w_ih", "w_hh", "b")]
    rows = []
    for form in forms:
        ids = vocab.char_ids(form)
        if train_mode and hp.char_dropout > 0:
            ids = _unk_replace(ids, hp.char_dropout, rng)
        chars = tr.gather_rows(table, ids)
        last = len(ids) - 1
        h_fwd = tr.gather_rows(tr.lstm(chars, *fwd), [last])
        h_bwd = tr.gather_rows(tr.lstm(chars, *bwd, reverse=True), [0])
        rows.append(tr.concat([h_fwd, h_bwd], axis=1))
    return tr.concat(rows, axis=0)


def embed_tokens(tr: Trace, model: ParserModel, sentence: Sentence,
                 train_mode: bool = False, rng: np.random.Generator | None = None) -> Node:
    """Input matrix [n+1, d_in]; row 0 is the learned root vector."""
    hp, vocab = model.hp, model.vocab
    if train_mode and rng is None:
        raise ValueError("train_mode needs an rng")
    word_ids = vocab.word_ids(sentence.forms)
    if train_mode and hp.word_dropout > 0:
        word_ids = _unk_replace(word_ids, hp.word_dropout, rng)
    words = tr.gather_rows(_p(tr, model, "embed.word"), word_ids)
    if hp.input_mode == "char":
        extra = _char_vectors(tr, model, sentence.forms, train_mode, rng)
    else:
        tag_ids = vocab.tag_ids(sentence.tags)
        if train_mode and hp.pos_dropout > 0:
            tag_ids = _unk_replace(tag_ids, hp.pos_dropout, rng)
        extra = tr.gather_rows(_p(tr, model, "embed.pos"), tag_ids)
    tokens = tr.concat([words, extra], axis=1)
    out = tr.concat([_p(tr, model, "embed.root"), tokens], axis=0)
    assert out.shape == (len(sentence) + 1, hp.input_dim), out.shape
    return out


def encode(tr: Trace, model: ParserModel, inputs: Node,
           train_mode: bool = False, rng: np.random.Generator | None = None) -> Node:
    """Stacked BiLSTM; row i is forward ⊕ backward state of the top layer."""
    hp = model.hp
    x = inputs
    for layer in range(hp.lstm_depth):
        fwd = [_p(tr, model, f"encoder.{layer}.fwd.{k}") for k in ("w_ih", "w_hh", "b")]
        bwd = [_p(tr, model, f"encoder.{layer}.bwd.{k}") for k in ("w_ih", "w_hh", "b")]
        x = tr.concat([tr.lstm(x, *fwd), tr.lstm(x, *bwd, reverse=True)], axis=1)
        if train_mode and hp.lstm_dropout > 0:
            x = tr.dropout(x, _dropout_mask(rng, x.shape, hp.lstm_dropout))
    assert x.shape == (inputs.shape[0], 2 * hp.lstm_hidden), x.shape
    return x


def _mlp(tr, model, name, r, rate, train_mode, rng):
    h = tr.leaky_relu(tr.add(tr.matmul(r, _p(tr, model, f"mlp.{name}.w")), _p(tr, model, f"mlp.{name}.b")))
    if train_mode and rate > 0:
        h = tr.dropout(h, _dropout_mask(rng, h.shape, rate))
    return h


def score(tr: Trace, model: ParserModel, r: Node,
          train_mode: bool = False, rng: np.random.Generator | None = None) -> tuple[Node, Node]:
    """Biaffine arc scores [n+1, n+1] and relation scores [n+1, n+1, 14].

    ``arc[d, h] = [h_d^dep; 1] U_arc h_h^head`` and
    ``rel[d, h, l] = [g_d^dep; 1] U_rel[:, l, :] [g_h^head; 1]``.
    """
    hp = model.hp
    m = r.shape[0]
    arc_dep = _mlp(tr, model, "arc_dep", r, hp.arc_mlp_dropout, train_mode, rng)
    arc_head = _mlp(tr, model, "arc_head", r, hp.arc_mlp_dropout, train_mode, rng)
    rel_dep = _mlp(tr, model, "rel_dep", r, hp.rel_mlp_dropout, train_mode, rng)
    rel_head = _mlp(tr, model, "rel_head", r, hp.rel_mlp_dropout, train_mode, rng)
    assert arc_dep.shape == (m, hp.arc_mlp) and rel_dep.shape == (m, hp.rel_mlp)

    arc = tr.matmul(tr.matmul(tr.append_ones(arc_dep), _p(tr, model, "biaffine.arc")),
                    tr.transpose(arc_head))

    k = hp.rel_mlp + 1
    u_rel = tr.reshape(_p(tr, model, "biaffine.rel"), (k, NUM_RELATIONS * k))
    left = tr.reshape(tr.matmul(tr.append_ones(rel_dep), u_rel), (m * NUM_RELATIONS, k))
    rel = tr.matmul(left, tr.transpose(tr.append_ones(rel_head)))  # [(d, l), h]
    rel = tr.permute(tr.reshape(rel, (m, NUM_RELATIONS, m)), (0, 2, 1))
    assert arc.shape == (m, m) and rel.shape == (m, m, NUM_RELATIONS)
    return arc, rel


def forward(tr: Trace, model: ParserModel, sentence: Sentence,
            train_mode: bool = False, rng: np.random.Generator | None = None) -> tuple[Node, Node]:
    inputs = embed_tokens(tr, model, sentence, train_mode, rng)
    r = encode(tr, model, inputs, train_mode, rng)
    return score(tr, model, r, train_mode, rng)


def loss(tr: Trace, arc: Node, rel: Node, gold: Sentence) -> Node:
    """Mean head cross-entropy plus mean label cross-entropy at gold heads."""
    n = len(gold)
    m = n + 1
    heads = gold.heads
    labels = [RELATIONS.index(r) for r in gold.rels]
    arc_loss = tr.cross_entropy(tr.gather_rows(arc, range(1, m)), heads)
    flat = tr.reshape(rel, (m * m, rel.shape[2]))
    rel_rows = tr.gather_rows(flat, [d * m + h for d, h in enumerate(heads, 1)])
    return tr.add(arc_loss, tr.cross_entropy(rel_rows, labels))


def sentence_loss(model: ParserModel, sentence: Sentence, train_mode: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[Trace, Node]:
    tr = Trace()
    arc, rel = forward(tr, model, sentence, train_mode, rng)
    return tr, loss(tr, arc, rel, sentence)
