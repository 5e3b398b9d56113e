"""Training loop, Adam, token dropout and the binary checkpoint container."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from arcparse.conllx import RELATIONS, Sentence
from arcparse.model import PAD, UNK, HyperParams, ParserModel, Vocab, build_vocab, sentence_loss
from arcparse.numerics import NumericsError, backward

log = logging.getLogger(__name__)


# -- regularization -----------------------------------------------------------

def apply_token_dropout(ids: Sequence[int], rate: float, rng: np.random.Generator) -> list[int]:
    """Replace each non-PAD id by UNK with probability ``rate``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return list(ids)
    draws = rng.random(len(ids))
    return [UNK if (i != PAD and u < rate) else int(i) for i, u in zip(ids, draws)]


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.9
    eps: float = 1e-12

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray], **kwargs) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if params[name].shape != g.shape or state.m[name].shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * scale
    return norm


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    epochs: int = 50
    batch_size: int = 32
    min_freq: int = 2
    seed: int = 1
    patience: int = 10
    clip_norm: float | None = None
    checkpoint: str | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1 or self.min_freq < 1:
            raise ValueError("epochs, batch_size, patience and min_freq must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    @classmethod
    def from_mapping(cls, values: dict[str, str], base: "TrainConfig | None" = None) -> "TrainConfig":
        """Build from flat key=value strings; keys are TrainConfig or HyperParams fields."""
        base = base or cls()
        own = {f.name for f in fields(cls)} - {"hp"}
        hp_keys = {f.name for f in fields(HyperParams)}
        unknown = sorted(set(values) - own - hp_keys)
        if unknown:
            raise KeyError(f"unknown config key(s): {', '.join(unknown)}")
        hp = base.hp.to_dict()
        hp.update({k: v for k, v in values.items() if k in hp_keys})
        kwargs = {f.name: getattr(base, f.name) for f in fields(cls) if f.name != "hp"}
        for key in own & set(values):
            raw = values[key]
            if key in ("clip_norm",):
                kwargs[key] = None if str(raw).lower() in ("", "none", "off") else float(raw)
            elif key == "checkpoint":
                kwargs[key] = str(raw)
            else:
                kwargs[key] = int(raw)
        return cls(hp=HyperParams.from_dict(hp), **kwargs)


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_uas: float | None = None
    dev_las: float | None = None


@dataclass
class TrainResult:
    model: ParserModel
    checkpoint: bytes
    history: list[EpochRecord]
    best_epoch: int


def batch_gradients(model: ParserModel, batch: Sequence[Sentence], rng: np.random.Generator | None,
                    train_mode: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Summed loss and summed gradients over a batch of sentences."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    for sentence in batch:
        tr, node = sentence_loss(model, sentence, train_mode=train_mode, rng=rng)
        value = float(node.value)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss on sentence {' '.join(sentence.forms)!r}")
        total += value
        for name, g in backward(tr, node).items():
            grads[name] += g
    return total, grads


def train(config: TrainConfig, train_set: Sequence[Sentence], dev_set: Sequence[Sentence] = (),
          on_epoch=None) -> TrainResult:
    """Train with Adam; keep the checkpoint with the best dev LAS.

    Without a dev set every epoch runs and the final model is returned.
    ``on_epoch`` is called with each :class:`EpochRecord`.
    """
    from arcparse.evaluator import attachment_scores
    from arcparse.parsing import parse_sentences

    if not train_set:
        raise TrainingError("empty training set")
    if config.hp.input_mode == "pos" and any(t.pos is None for s in train_set for t in s.tokens):
        raise TrainingError("input_mode=pos but the training data lacks POS tags")
    rng = np.random.default_rng(config.seed)
    vocab = build_vocab(train_set, config.min_freq)
    model = ParserModel.initialize(vocab, config.hp, seed=config.seed)
    state = AdamState.zeros_like(model.params)

    history: list[EpochRecord] = []
    best_las, best_epoch, best_params = -1.0, 0, None
    stale = 0
    order = np.arange(len(train_set))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            try:
                batch_loss, grads = batch_gradients(model, batch, rng)
            except NumericsError as e:
                raise TrainingError(f"epoch {epoch}: {e}") from e
            if config.clip_norm is not None:
                clip_gradients(grads, config.clip_norm)
            with np.errstate(over="ignore", invalid="ignore"):
                adam_step(model.params, grads, state, config.hp.learning_rate)
            if not all(np.isfinite(v).all() for v in model.params.values()):
                raise TrainingError(f"epoch {epoch}: parameters became non-finite")
            epoch_loss += batch_loss
        record = EpochRecord(epoch, epoch_loss / len(train_set))

        if dev_set:
            result = attachment_scores(dev_set, parse_sentences(model, dev_set))
            record.dev_uas, record.dev_las = result.uas, result.las
            if result.las > best_las:
                best_las, best_epoch, stale = result.las, epoch, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                stale += 1
        history.append(record)
        log.info("epoch %d loss=%.6f dev_uas=%s dev_las=%s", epoch, record.loss, record.dev_uas, record.dev_las)
        if on_epoch is not None:
            on_epoch(record)
        if dev_set and stale >= config.patience:
            break

    if best_params is not None:
        model = ParserModel(vocab, config.hp, best_params)
    else:
        best_epoch = history[-1].epoch
    blob = save(model)
    if config.checkpoint:
        Path(config.checkpoint).write_bytes(blob)
    return TrainResult(model, blob, history, best_epoch)


# -- checkpoint container -----------------------------------------------------
#
# "DDPM" | u32 version | str hyperparams (key=value lines)
# | 4 x symbol list (words, chars, tags, relations): u32 count, str*
# | u32 tensor count | per tensor: str name, u32 rank, u32 dims*, f32 data
# All integers little-endian u32; str = u32 byte length + UTF-8.

MAGIC = b"DDPM"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save(model: ParserModel) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    hp_text = "".join(f"{k}={v}\n" for k, v in model.hp.to_dict().items())
    parts.append(_pack_str(hp_text))
    vocab = model.vocab
    for symbols in (vocab.words, vocab.chars, vocab.tags, [r.value for r in vocab.relations]):
        parts.append(struct.pack("<I", len(symbols)))
        parts.extend(_pack_str(s) for s in symbols)
    names = list(model.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        value = model.params[name]
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncatedError(f"checkpoint truncated at byte {self.pos} (wanted {size} more)")
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        try:
            return self.take(self.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"invalid UTF-8 in checkpoint: {e}") from None


def load(data: bytes) -> ParserModel:
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise BadMagicError("not a parser checkpoint (bad magic)")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    hp_values = dict(line.split("=", 1) for line in reader.string().splitlines() if line)
    try:
        hp = HyperParams.from_dict(hp_values)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"bad hyperparameters: {e}") from None
    lists = []
    for _ in range(4):
        lists.append([reader.string() for _ in range(reader.u32())])
    words, chars, tags, rels = lists
    if rels != [r.value for r in RELATIONS]:
        raise CheckpointError("relation inventory differs from the 14-label set")
    try:
        vocab = Vocab(words, chars, tags)
    except ValueError as e:
        raise CheckpointError(str(e)) from None

    from arcparse.model import parameter_shapes

    expected = parameter_shapes(hp, vocab)
    params = {}
    for _ in range(reader.u32()):
        name = reader.string()
        rank = reader.u32()
        dims = tuple(reader.u32() for _ in range(rank))
        if name not in expected:
            raise ShapeMismatchError(f"unexpected tensor {name!r}")
        if dims != expected[name]:
            raise ShapeMismatchError(f"{name}: stored shape {dims}, expected {expected[name]}")
        count = int(np.prod(dims)) if dims else 1
        raw = reader.take(4 * count)
        params[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    missing = set(expected) - set(params)
    if missing:
        raise ShapeMismatchError(f"missing tensors: {', '.join(sorted(missing))}")
    if reader.pos != len(data):
        raise CheckpointError(f"{len(data) - reader.pos} trailing bytes after checkpoint")
    return ParserModel(vocab, hp, params)


def save_model(model: ParserModel, path) -> None:
    Path(path).write_bytes(save(model))


def load_model(path) -> ParserModel:
    return load(Path(path).read_bytes())
