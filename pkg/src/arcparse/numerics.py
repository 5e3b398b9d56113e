"""Dense float64 tensors with a recorded trace and reverse-mode gradients.

A :class:`Trace` records every operation as a :class:`Node`. Forward values
are computed eagerly; :func:`backward` walks the trace in reverse and
:meth:`Trace.replay` recomputes it with substituted parameter values, which
is what :func:`grad_check` uses for central differences.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, marked
read-only once they enter a trace.

Every op's forward is written over a leading batch axis ``K`` so that a
replay can evaluate many perturbed copies of a parameter at once. Node
values themselves are stored without that axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class NumericsError(Exception):
    pass


class ShapeError(NumericsError, ValueError):
    def __init__(self, op: str, shapes: Sequence[tuple[int, ...]], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class NumericOverflowError(NumericsError, ArithmeticError):
    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: non-finite value in output")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# -- op definitions -----------------------------------------------------------
#
# forward(values, attrs) -> (output, cache); every value carries a leading
#     batch axis, all inputs share the same batch size.
# backward(grad, values, output, cache, attrs) -> per-input gradients
#     (None = not differentiable); unbatched.
# check(shapes, attrs) raises ShapeError on mismatch (unbatched shapes).


@dataclass(frozen=True)
class Op:
    name: str
    forward: Callable
    backward: Callable
    check: Callable | None = None


def _check_matmul(shapes, attrs):
    a, b = shapes
    if len(a) != 2 or len(b) != 2 or a[1] != b[0]:
        raise ShapeError("matmul", shapes)


def _check_same(name):
    def check(shapes, attrs):
        if any(s != shapes[0] for s in shapes[1:]):
            raise ShapeError(name, shapes)
    return check


def _check_matrix(name):
    def check(shapes, attrs):
        if len(shapes[0]) != 2:
            raise ShapeError(name, shapes, "expected a matrix")
    return check


def _check_add(shapes, attrs):
    a, b = shapes
    # b may be a bias matching the trailing shape of a
    if a != b and not (len(b) <= len(a) and a[len(a) - len(b):] == b):
        raise ShapeError("add", shapes)


def _add_forward(v, attrs):
    a, b = v
    b = b.reshape(b.shape[:1] + (1,) * (a.ndim - b.ndim) + b.shape[1:])
    return a + b, None


def _add_backward(g, vals, out, cache, attrs):
    b = vals[1]
    gb = g
    if b.shape != g.shape:
        gb = g.reshape(-1, *b.shape).sum(axis=0)
    return g, gb


def _check_concat(shapes, attrs):
    axis = attrs["axis"]
    if not shapes:
        raise ShapeError("concat", shapes, "no inputs")
    ref = shapes[0]
    if not 0 <= axis < len(ref):
        raise ShapeError("concat", shapes, f"axis {axis}")
    for s in shapes:
        if len(s) != len(ref) or s[:axis] + s[axis + 1:] != ref[:axis] + ref[axis + 1:]:
            raise ShapeError("concat", shapes, f"axis {axis}")


def _concat_forward(v, attrs):
    axis = attrs["axis"]
    return np.concatenate(v, axis=axis + 1), np.cumsum([x.shape[axis + 1] for x in v])[:-1]


def _concat_backward(g, vals, out, cache, attrs):
    return tuple(np.split(g, cache, axis=attrs["axis"]))


def _check_gather(shapes, attrs):
    (x,) = shapes
    idx = attrs["index"]
    if len(x) < 1 or not idx or min(idx) < 0 or max(idx) >= x[0]:
        raise ShapeError("gather_rows", shapes, f"indices {min(idx, default=None)}..{max(idx, default=None)}")


def _gather_backward(g, vals, out, cache, attrs):
    gx = np.zeros_like(vals[0])
    np.add.at(gx, np.asarray(attrs["index"]), g)
    return (gx,)


def _append_ones_forward(v, attrs):
    (x,) = v
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,), x.dtype)], axis=-1), None


def _softmax_forward(v, attrs):
    return np.exp(_log_softmax(v[0])), None


def _softmax_backward(g, vals, out, cache, attrs):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _check_ce(shapes, attrs):
    (x,) = shapes
    gold = attrs["gold"]
    if len(x) != 2 or x[0] == 0 or len(gold) != x[0]:
        raise ShapeError("cross_entropy", shapes, f"{len(gold)} gold indices")
    if min(gold) < 0 or max(gold) >= x[1]:
        raise ShapeError("cross_entropy", shapes, "gold index out of range")


def _ce_forward(v, attrs):
    logp = _log_softmax(v[0])
    gold = np.asarray(attrs["gold"])
    nll = -logp[:, np.arange(len(gold)), gold]
    return nll.mean(axis=1), logp


def _ce_backward(g, vals, out, logp, attrs):
    logp = logp[0]
    m = logp.shape[0]
    grad = np.exp(logp)
    grad[np.arange(m), np.asarray(attrs["gold"])] -= 1.0
    return (grad * (g / m),)


def _check_reshape(shapes, attrs):
    if int(np.prod(shapes[0])) != int(np.prod(attrs["shape"])):
        raise ShapeError("reshape", shapes, f"target {tuple(attrs['shape'])}")


def _check_permute(shapes, attrs):
    if sorted(attrs["axes"]) != list(range(len(shapes[0]))):
        raise ShapeError("permute", shapes, f"axes {tuple(attrs['axes'])}")


def _check_lstm(shapes, attrs):
    x, w_ih, w_hh, b = shapes
    ok = (
        len(x) == 2 and len(w_ih) == 2 and len(w_hh) == 2 and len(b) == 1
        and x[0] >= 1 and w_ih[0] == x[1] and w_hh[1] == w_ih[1] == b[0]
        and w_hh[1] == 4 * w_hh[0]
    )
    if not ok:
        raise ShapeError("lstm", shapes)


def _lstm_forward(v, attrs):
    """Unidirectional LSTM from a zero state; gate order i, f, g, o."""
    x, w_ih, w_hh, b = v
    batch, steps = x.shape[:2]
    hidden = w_hh.shape[1]
    order = range(steps - 1, -1, -1) if attrs["reverse"] else range(steps)
    proj = x @ w_ih + b[:, None, :]
    dtype = np.result_type(*v)
    gates = np.empty((batch, steps, 4 * hidden), dtype)
    cells = np.empty((batch, steps, hidden), dtype)
    out = np.empty((batch, steps, hidden), dtype)
    h = np.zeros((batch, 1, hidden), dtype)
    c = np.zeros((batch, hidden), dtype)
    for t in order:
        z = proj[:, t] + (h @ w_hh)[:, 0]
        act = _sigmoid(z)
        act[:, 2 * hidden: 3 * hidden] = np.tanh(z[:, 2 * hidden: 3 * hidden])
        i, f, g, o = np.split(act, 4, axis=1)
        c = f * c + i * g
        h = (o * np.tanh(c))[:, None, :]
        gates[:, t], cells[:, t], out[:, t] = act, c, h[:, 0]
    return out, (gates[0], cells[0])


def _lstm_backward(grad, vals, out, cache, attrs):
    x, w_ih, w_hh, b = vals
    gates, cells = cache
    hidden = w_hh.shape[0]
    steps = x.shape[0]
    order = list(range(steps - 1, -1, -1) if attrs["reverse"] else range(steps))
    dz = np.zeros((steps, 4 * hidden))
    h_prev = np.zeros((steps, hidden))
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    for k in range(steps - 1, -1, -1):
        t = order[k]
        c_prev = cells[order[k - 1]] if k > 0 else np.zeros(hidden)
        if k > 0:
            h_prev[t] = out[order[k - 1]]
        i, f, g, o = np.split(gates[t], 4)
        tc = np.tanh(cells[t])
        dh = grad[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz[t] = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ])
        dh_next = dz[t] @ w_hh.T
        dc_next = dc * f
    return dz @ w_ih.T, x.T @ dz, h_prev.T @ dz, dz.sum(axis=0)


OPS: dict[str, Op] = {
    "matmul": Op(
        "matmul",
        lambda v, a: (v[0] @ v[1], None),
        lambda g, v, o, c, a: (g @ v[1].T, v[0].T @ g),
        _check_matmul,
    ),
    "add": Op("add", _add_forward, _add_backward, _check_add),
    "mul": Op(
        "mul",
        lambda v, a: (v[0] * v[1], None),
        lambda g, v, o, c, a: (g * v[1], g * v[0]),
        _check_same("mul"),
    ),
    "concat": Op("concat", _concat_forward, _concat_backward, _check_concat),
    "tanh": Op(
        "tanh", lambda v, a: (np.tanh(v[0]), None), lambda g, v, o, c, a: (g * (1.0 - o * o),)
    ),
    "sigmoid": Op(
        "sigmoid", lambda v, a: (_sigmoid(v[0]), None), lambda g, v, o, c, a: (g * o * (1.0 - o),)
    ),
    "leaky_relu": Op(
        "leaky_relu",
        lambda v, a: (np.where(v[0] > 0, v[0], a["slope"] * v[0]), None),
        lambda g, v, o, c, a: (np.where(v[0] > 0, g, a["slope"] * g),),
    ),
    "softmax_rows": Op("softmax_rows", _softmax_forward, _softmax_backward, _check_matrix("softmax_rows")),
    "gather_rows": Op(
        "gather_rows", lambda v, a: (v[0][:, np.asarray(a["index"])], None), _gather_backward, _check_gather
    ),
    "append_ones": Op(
        "append_ones", _append_ones_forward, lambda g, v, o, c, a: (g[:, :-1],), _check_matrix("append_ones")
    ),
    "dropout": Op(
        "dropout",
        lambda v, a: (v[0] * v[1], None),
        lambda g, v, o, c, a: (g * v[1], None),
        _check_same("dropout"),
    ),
    "cross_entropy": Op("cross_entropy", _ce_forward, _ce_backward, _check_ce),
    "sum": Op(
        "sum",
        lambda v, a: (v[0].reshape(v[0].shape[0], -1).sum(axis=1), None),
        lambda g, v, o, c, a: (np.full(v[0].shape, float(g)),),
    ),
    "transpose": Op(
        "transpose",
        lambda v, a: (v[0].swapaxes(1, 2), None),
        lambda g, v, o, c, a: (g.T,),
        _check_matrix("transpose"),
    ),
    "reshape": Op(
        "reshape",
        lambda v, a: (v[0].reshape((v[0].shape[0],) + a["shape"]), None),
        lambda g, v, o, c, a: (g.reshape(v[0].shape),),
        _check_reshape,
    ),
    "permute": Op(
        "permute",
        lambda v, a: (v[0].transpose((0,) + tuple(x + 1 for x in a["axes"])), None),
        lambda g, v, o, c, a: (g.transpose(np.argsort(a["axes"])),),
        _check_permute,
    ),
    "lstm": Op("lstm", _lstm_forward, _lstm_backward, _check_lstm),
}


# -- trace --------------------------------------------------------------------

@dataclass(eq=False)
class Node:
    trace: "Trace"
    index: int
    op: str  # "param", "const" or a key of OPS
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict[str, Any] = field(default_factory=dict)
    cache: Any = None
    name: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node({self.index}, {self.name or self.op}, shape={self.shape})"


class Trace:
    """Records operations in declaration order.

    Parameters are leaf nodes registered by name; plain arrays passed to an
    operation become constants.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _leaf(self, op, value, name=None) -> Node:
        node = Node(self, len(self.nodes), op, (), _frozen(value), name=name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        """Register a parameter; a second call with the same name returns the first node."""
        if name in self.params:
            return self.params[name]
        node = self._leaf("param", value, name)
        if not np.all(np.isfinite(node.value)):
            raise NumericOverflowError(f"param {name}")
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._leaf("const", value)

    def _node(self, x) -> Node:
        if isinstance(x, Node):
            if x.trace is not self:
                raise ValueError("node belongs to a different trace")
            return x
        return self.const(x)

    def _apply(self, name: str, args, **attrs) -> Node:
        inputs = [self._node(a) for a in args]
        op = OPS[name]
        if op.check is not None:
            op.check([n.shape for n in inputs], attrs)
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = op.forward([n.value[None] for n in inputs], attrs)
        out = _frozen(out[0])
        if not np.all(np.isfinite(out)):
            raise NumericOverflowError(name)
        node = Node(self, len(self.nodes), name, tuple(n.index for n in inputs), out, attrs, cache)
        self.nodes.append(node)
        return node

    # -- operations --
    def matmul(self, a, b) -> Node:
        return self._apply("matmul", (a, b))

    def add(self, a, b) -> Node:
        """Elementwise sum; ``b`` may instead match only the trailing shape of ``a``."""
        return self._apply("add", (a, b))

    def mul(self, a, b) -> Node:
        return self._apply("mul", (a, b))

    def concat(self, xs: Sequence, axis: int = 0) -> Node:
        return self._apply("concat", tuple(xs), axis=axis)

    def tanh(self, x) -> Node:
        return self._apply("tanh", (x,))

    def sigmoid(self, x) -> Node:
        return self._apply("sigmoid", (x,))

    def leaky_relu(self, x, slope: float = 0.1) -> Node:
        return self._apply("leaky_relu", (x,), slope=slope)

    def softmax_rows(self, x) -> Node:
        return self._apply("softmax_rows", (x,))

    def gather_rows(self, x, index: Sequence[int]) -> Node:
        return self._apply("gather_rows", (x,), index=tuple(int(i) for i in index))

    def append_ones(self, x) -> Node:
        """[r, c] -> [r, c + 1] with a last column of ones."""
        return self._apply("append_ones", (x,))

    def dropout(self, x, mask) -> Node:
        """Multiply by a fixed mask whose entries are 0 or 1/keep."""
        return self._apply("dropout", (x, mask))

    def cross_entropy(self, logits, gold: Sequence[int]) -> Node:
        """Mean over rows of ``-log softmax(logits)[row, gold[row]]``; a scalar."""
        return self._apply("cross_entropy", (logits,), gold=tuple(int(g) for g in gold))

    def sum(self, x) -> Node:
        return self._apply("sum", (x,))

    def transpose(self, x) -> Node:
        return self._apply("transpose", (x,))

    def reshape(self, x, shape: Sequence[int]) -> Node:
        return self._apply("reshape", (x,), shape=tuple(shape))

    def permute(self, x, axes: Sequence[int]) -> Node:
        return self._apply("permute", (x,), axes=tuple(axes))

    def lstm(self, x, w_ih, w_hh, b, reverse: bool = False) -> Node:
        """Hidden states [T, h] of an LSTM run over the rows of ``x``."""
        return self._apply("lstm", (x, w_ih, w_hh, b), reverse=bool(reverse))

    # -- re-evaluation --
    def replay(self, name: str, values: np.ndarray, upto: Node | None = None) -> np.ndarray:
        """Re-evaluate with parameter ``name`` replaced by each of ``values``.

        ``values`` has shape [K, *param.shape]; returns the K corresponding
        values of ``upto`` (default: the last node). Only nodes downstream of
        the parameter are recomputed. The trace itself is not modified.
        """
        source = self.params[name]
        values = np.asarray(values)
        if values.dtype.kind != "f":
            values = values.astype(np.float64)
        if values.shape[1:] != source.shape:
            raise ShapeError("replay", [values.shape[1:], source.shape])
        batch = values.shape[0]
        stop = len(self.nodes) if upto is None else upto.index + 1
        changed: dict[int, np.ndarray] = {source.index: values}
        for node in self.nodes[source.index + 1:stop]:
            if node.op in ("param", "const") or not any(i in changed for i in node.inputs):
                continue
            inputs = [
                changed[i] if i in changed else np.broadcast_to(self.nodes[i].value, (batch,) + self.nodes[i].shape)
                for i in node.inputs
            ]
            with np.errstate(over="ignore", invalid="ignore"):
                out, _ = OPS[node.op].forward(inputs, node.attrs)
            if not np.all(np.isfinite(out)):
                raise NumericOverflowError(node.op)
            if not np.all(out == node.value):
                changed[node.index] = out
        last = self.nodes[stop - 1]
        if last.index in changed:
            return changed[last.index]
        return np.broadcast_to(last.value, (batch,) + last.shape).copy()


GradientMap = dict[str, np.ndarray]


def backward(trace: Trace, loss: Node) -> GradientMap:
    """Gradients of a scalar ``loss`` for every registered parameter.

    Parameters that do not influence ``loss`` get zeros.
    """
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise NumericsError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    for node in reversed(trace.nodes[: loss.index + 1]):
        if node.op in ("param", "const") or node.index not in grads:
            continue
        g = grads.pop(node.index)
        inputs = [trace.nodes[i].value for i in node.inputs]
        parts = OPS[node.op].backward(g, inputs, node.value, node.cache, node.attrs)
        for i, part in zip(node.inputs, parts):
            if part is None or trace.nodes[i].op == "const":
                continue
            grads[i] = grads[i] + part if i in grads else np.array(part, dtype=np.float64)
    return {
        name: grads.get(node.index, np.zeros_like(node.value)).reshape(node.shape)
        for name, node in trace.params.items()
    }


def grad_check(trace: Trace, loss: Node, epsilon: float = 1e-5, chunk: int = 256,
               dtype=np.float64) -> float:
    """Max relative error between :func:`backward` and central differences.

    Every coordinate of every parameter is perturbed by ``±epsilon``; the
    error of one coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.

    ``dtype`` sets the precision of the perturbed re-evaluations only; the
    analytic gradients are always float64. In float64 the difference
    quotient carries an absolute error of roughly ``ulp(loss) / epsilon``,
    so coordinates with gradients below ~1e-7 can exceed 1e-4 relative
    error on rounding alone; ``np.longdouble`` removes that floor on
    platforms where it is wider than float64.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    analytic = backward(trace, loss)
    step = np.asarray(epsilon, dtype=dtype)
    worst = 0.0
    for name, node in trace.params.items():
        flat = node.value.reshape(-1).astype(dtype)
        expected = analytic[name].reshape(-1)
        for start in range(0, flat.size, chunk):
            coords = np.arange(start, min(start + chunk, flat.size))
            rows = np.arange(len(coords))
            probes = np.tile(flat, (len(coords), 1))
            probes[rows, coords] = flat[coords] + step
            up = trace.replay(name, probes.reshape((-1,) + node.shape), upto=loss).reshape(-1)
            probes[rows, coords] = flat[coords] - step
            down = trace.replay(name, probes.reshape((-1,) + node.shape), upto=loss).reshape(-1)
            numeric = ((up - down) / (2 * step)).astype(np.float64)
            a = expected[coords]
            err = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
            worst = max(worst, float(err.max()))
    return worst
