import numpy as np
import pytest

from arcparse.numerics import (
    NumericOverflowError,
    NumericsError,
    ShapeError,
    Trace,
    backward,
    grad_check,
)

SEEDS = range(50)


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """Textbook LSTM step, gate order i, f, g, o."""
    z = x @ w_ih + h @ w_hh + b
    k = len(h)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(z[:k]), sig(z[k:2 * k]), np.tanh(z[2 * k:3 * k]), sig(z[3 * k:])
    c = f * c + i * g
    return o * np.tanh(c), c


class TestForward:
    def test_identity_matmul(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 5))
        tr = Trace()
        np.testing.assert_array_equal(tr.matmul(np.eye(2), x).value, x)

    def test_hand_product(self):
        tr = Trace()
        out = tr.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
        np.testing.assert_array_equal(out.value, [[17.0], [39.0]])

    def test_softmax_uniform(self):
        tr = Trace()
        np.testing.assert_allclose(tr.softmax_rows(np.zeros((1, 3))).value, [[1 / 3] * 3], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_softmax_and_cross_entropy_identities(self, seed):
        rng = np.random.default_rng(seed)
        m, k = rng.integers(1, 6, size=2)
        x = rng.normal(scale=5.0, size=(m, k))
        gold = rng.integers(0, k, size=m)
        tr = Trace()
        p = tr.softmax_rows(x).value
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        ce = float(tr.cross_entropy(x, gold).value)
        direct = np.mean([-np.log(p[r, gold[r]]) for r in range(m)])
        assert ce >= 0
        assert abs(ce - direct) <= 1e-12

    def test_append_ones(self):
        tr = Trace()
        out = tr.append_ones(np.arange(6.0).reshape(3, 2)).value
        assert out.shape == (3, 3)
        assert np.all(out[:, -1] == 1.0)

    def test_bitwise_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            tr = Trace()
            w = tr.param("w", rng.normal(size=(4, 16)))
            x = tr.lstm(rng.normal(size=(5, 4)), w, rng.normal(size=(4, 16)), np.zeros(16))
            return tr.softmax_rows(tr.matmul(x, rng.normal(size=(4, 3)))).value

        assert run().tobytes() == run().tobytes()

    def test_lstm_matches_cell_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))
        w_ih, w_hh, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
        tr = Trace()
        fwd = tr.lstm(x, w_ih, w_hh, b).value
        bwd = tr.lstm(x, w_ih, w_hh, b, reverse=True).value
        h, c = np.zeros(2), np.zeros(2)
        for t in range(4):
            h, c = lstm_cell(x[t], h, c, w_ih, w_hh, b)
            np.testing.assert_allclose(fwd[t], h, rtol=1e-12, atol=1e-14)
        h, c = np.zeros(2), np.zeros(2)
        for t in reversed(range(4)):
            h, c = lstm_cell(x[t], h, c, w_ih, w_hh, b)
            np.testing.assert_allclose(bwd[t], h, rtol=1e-12, atol=1e-14)


class TestErrors:
    def test_shape_error_names_op(self):
        tr = Trace()
        with pytest.raises(ShapeError) as info:
            tr.matmul(np.ones((2, 3)), np.ones((2, 3)))
        assert info.value.op == "matmul"
        assert info.value.shapes == [(2, 3), (2, 3)]

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError):
            Trace().concat([np.ones((2, 3)), np.ones((3, 3))], axis=1)

    def test_overflow(self):
        with pytest.raises(NumericOverflowError):
            Trace().matmul([[1e200]], [[1e200]])

    def test_non_scalar_loss(self):
        tr = Trace()
        x = tr.param("x", np.ones((2, 2)))
        with pytest.raises(NumericsError):
            backward(tr, x)


class TestBackward:
    def test_sum_gives_ones(self):
        tr = Trace()
        x = tr.param("x", np.arange(6.0).reshape(2, 3))
        grads = backward(tr, tr.sum(x))
        np.testing.assert_array_equal(grads["x"], np.ones((2, 3)))

    def test_disconnected_parameter(self):
        tr = Trace()
        tr.param("w", np.ones(3))
        loss = tr.sum(tr.const(np.ones(2)))
        assert backward(tr, loss)["w"].tolist() == [0.0, 0.0, 0.0]
        assert grad_check(tr, loss) == 0.0

    def test_quadratic(self):
        tr = Trace()
        theta = tr.param("theta", [3.0])
        loss = tr.sum(tr.mul(theta, theta))
        assert backward(tr, loss)["theta"][0] == 6.0
        assert grad_check(tr, loss, 1e-5) <= 1e-6

    def test_epsilon_range(self):
        tr = Trace()
        loss = tr.sum(tr.param("a", [1.0]))
        with pytest.raises(ValueError):
            grad_check(tr, loss, 1e-2)

    def test_shared_parameter_accumulates(self):
        tr = Trace()
        w = tr.param("w", [[2.0]])
        loss = tr.sum(tr.matmul(w, w))  # w^2
        assert backward(tr, loss)["w"][0, 0] == 4.0
        assert tr.param("w", [[9.0]]) is w


def _random_case(op, rng):
    """Build (trace, loss) exercising one op on random shapes."""
    tr = Trace()
    r, c = (int(v) for v in rng.integers(1, 5, size=2))

    def p(name, shape, scale=1.0):
        return tr.param(name, rng.normal(scale=scale, size=shape))

    if op == "matmul":
        k = int(rng.integers(1, 5))
        out = tr.matmul(p("a", (r, k)), p("b", (k, c)))
    elif op == "add":
        out = tr.add(p("a", (r, c)), p("b", (c,) if rng.integers(2) else (r, c)))
    elif op == "mul":
        out = tr.mul(p("a", (r, c)), p("b", (r, c)))
    elif op == "concat":
        axis = int(rng.integers(2))
        other = (int(rng.integers(1, 4)), c) if axis == 0 else (r, int(rng.integers(1, 4)))
        out = tr.concat([p("a", (r, c)), p("b", other)], axis=axis)
    elif op in ("tanh", "sigmoid", "leaky_relu", "softmax_rows", "append_ones", "transpose"):
        out = getattr(tr, op)(p("a", (r, c), 2.0))
    elif op == "gather_rows":
        out = tr.gather_rows(p("a", (r, c)), rng.integers(0, r, size=int(rng.integers(1, 6))))
    elif op == "dropout":
        mask = (rng.random((r, c)) < 0.67) / 0.67
        out = tr.dropout(p("a", (r, c)), mask)
    elif op == "cross_entropy":
        return tr, tr.cross_entropy(p("a", (r, c), 2.0), rng.integers(0, c, size=r))
    elif op == "reshape":
        out = tr.reshape(p("a", (r, c)), (c, r))
    elif op == "permute":
        out = tr.permute(p("a", (r, c, 2)), tuple(int(i) for i in rng.permutation(3)))
    elif op == "sum":
        return tr, tr.sum(p("a", (r, c)))
    elif op == "lstm":
        h = int(rng.integers(1, 4))
        out = tr.lstm(p("x", (r, c)), p("w_ih", (c, 4 * h)), p("w_hh", (h, 4 * h)), p("b", (4 * h,)),
                      reverse=bool(rng.integers(2)))
    else:
        raise AssertionError(op)
    weights = rng.normal(size=out.shape)
    return tr, tr.sum(tr.mul(out, weights))


OP_NAMES = ["matmul", "add", "mul", "concat", "tanh", "sigmoid", "leaky_relu", "softmax_rows",
            "gather_rows", "append_ones", "dropout", "cross_entropy", "sum", "transpose",
            "reshape", "permute", "lstm"]


@pytest.mark.parametrize("op", OP_NAMES)
def test_op_gradients_match_finite_differences(op):
    worst = 0.0
    for seed in SEEDS:
        tr, loss = _random_case(op, np.random.default_rng(seed))
        worst = max(worst, grad_check(tr, loss, 1e-5))
    assert worst <= 1e-4, worst


def test_replay_does_not_mutate_trace():
    rng = np.random.default_rng(0)
    tr, loss = _random_case("lstm", rng)
    before = [n.value.copy() for n in tr.nodes]
    grad_check(tr, loss)
    for node, old in zip(tr.nodes, before):
        np.testing.assert_array_equal(node.value, old)


def test_replay_batches_match_individual_traces():
    rng = np.random.default_rng(4)
    w0 = rng.normal(size=(3, 4))
    x = rng.normal(size=(2, 3))

    def build(w):
        tr = Trace()
        wn = tr.param("w", w)
        return tr, tr.cross_entropy(tr.leaky_relu(tr.matmul(x, wn)), [1, 3])

    tr, loss = build(w0)
    probes = rng.normal(size=(5, 3, 4))
    batched = tr.replay("w", probes, upto=loss)
    for k in range(5):
        assert batched[k] == pytest.approx(float(build(probes[k])[1].value), rel=1e-14)
