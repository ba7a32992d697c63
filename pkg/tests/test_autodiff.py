"""Forward semantics and gradient exactness of every primitive.

The gradient oracle throughout is central finite differences with step 1e-4
on float64: for a scalar probe L = sum(weights * op(inputs)), the analytic
gradient of every input entry must match (L(x+h) - L(x-h)) / 2h with
relative error below 1e-4 (an absolute comparison when both are below 1).
"""

import numpy as np
import pytest

from frozenhist import autodiff as ad

FD_STEP = 1e-4
FD_TOL = 1e-4


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def fd_check(build, tensors, rng, samples_per_tensor=6):
    """Compare analytic grads of L = sum(w * build(tensors)) against FD."""
    probe_w = None

    def loss_value():
        out = build(*tensors)
        return float(np.sum(probe_w * out.data))

    tape = ad.Tape()
    with tape:
        out = build(*tensors)
    probe_w = rng.standard_normal(out.data.shape)
    tape.backward(out, probe_w)

    worst = 0.0
    for t in tensors:
        if not t.requires_grad:
            continue
        flat_idx = rng.integers(0, t.data.size, size=min(samples_per_tensor, t.data.size))
        for fi in flat_idx:
            idx = np.unravel_index(fi, t.data.shape)
            old = t.data[idx]
            t.data[idx] = old + FD_STEP
            lp = loss_value()
            t.data[idx] = old - FD_STEP
            lm = loss_value()
            t.data[idx] = old
            fd = (lp - lm) / (2 * FD_STEP)
            an = 0.0 if t.grad is None else t.grad[idx]
            worst = max(worst, _rel_err(fd, an))
    return worst


def _leaf(rng, *shape):
    return ad.parameter(rng.standard_normal(shape), "x")


class TestForwardSemantics:
    def test_softmax_uniform_on_equal_logits(self):
        out = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 5))
        out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_layernorm_standardizes(self):
        # oracle: (x - mean) / sqrt(var + eps) computed directly
        x = np.array([1.0, 2.0, 3.0])
        expected = (x - x.mean()) / np.sqrt(x.var() + 1e-5)
        out = ad.layernorm(ad.Tensor(x), ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)
        assert abs(out.data.mean()) < 1e-12
        assert abs(out.data.var() - 1.0) < 1e-4

    def test_softmax_rows_are_probabilities(self):
        rng = np.random.default_rng(1)
        out = ad.softmax(ad.Tensor(rng.standard_normal((20, 7)) * 30))
        assert np.all(out.data >= 0)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_forward_deterministic(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 6))
        a = ad.softmax(ad.tanh(ad.Tensor(x)))
        b = ad.softmax(ad.tanh(ad.Tensor(x.copy())))
        np.testing.assert_array_equal(a.data, b.data)

    def test_shape_error_names_op_and_shapes(self):
        with pytest.raises(ad.ShapeError, match=r"matmul.*\(2, 3\).*\(4, 2\)"):
            ad.matmul(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))))
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 5))))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = ad.parameter(np.arange(6.0).reshape(2, 3), "x")
        tape = ad.Tape()
        with tape:
            out = ad.sum_(x)
        tape.backward(out)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_softmax_cross_entropy_at_uniform_logits(self):
        # analytic gradient of CE(softmax(z), onehot) is softmax(z) - onehot
        n = 5
        z = ad.parameter(np.zeros(n), "z")
        tape = ad.Tape()
        with tape:
            ls = ad.log_softmax(z)
            loss = ad.neg(ad.sum_(ad.mul(ls, np.eye(n)[2])))
        tape.backward(loss)
        np.testing.assert_allclose(z.grad, np.full(n, 1 / n) - np.eye(n)[2], atol=1e-12)

    def test_backward_before_forward_raises(self):
        tape = ad.Tape()
        with pytest.raises(RuntimeError, match="before"):
            tape.backward(ad.Tensor([1.0]))

    def test_untaped_output_raises(self):
        x = ad.parameter(np.ones(3), "x")
        tape = ad.Tape()
        with tape:
            ad.relu(x)
        stray = ad.relu(x)  # created outside the tape
        with pytest.raises(RuntimeError, match="not recorded"):
            tape.backward(stray)

    def test_grad_accumulates_across_shared_use(self):
        x = ad.parameter(np.array([2.0]), "x")
        tape = ad.Tape()
        with tape:
            out = ad.add(ad.mul(x, 3.0), ad.mul(x, 4.0))
        tape.backward(out)
        np.testing.assert_allclose(x.grad, [7.0])


class TestFiniteDifferences:
    """Every primitive against the central-difference oracle."""

    def test_all_primitives(self):
        rng = np.random.default_rng(42)
        cases = [
            ("add", lambda a, b: ad.add(a, b), [(3, 4), (3, 4)]),
            ("add-broadcast", lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
            ("sub", lambda a, b: ad.sub(a, b), [(3, 4), (3, 4)]),
            ("mul", lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)]),
            ("div", lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)), [(3, 4), (3, 4)]),
            ("neg", lambda a: ad.neg(a), [(5,)]),
            ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 5)]),
            ("matmul-batched", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
            ("matmul-bcast", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)]),
            ("relu", lambda a: ad.relu(a), [(4, 4)]),
            ("tanh", lambda a: ad.tanh(a), [(4, 4)]),
            ("sigmoid", lambda a: ad.sigmoid(a), [(4, 4)]),
            ("exp", lambda a: ad.exp(a), [(4, 4)]),
            ("log", lambda a: ad.log(ad.add(ad.mul(a, a), 0.5)), [(4, 4)]),
            ("minimum", lambda a, b: ad.minimum(a, b), [(4, 4), (4, 4)]),
            ("clip", lambda a: ad.clip(a, -0.5, 0.5), [(4, 4)]),
            ("sum", lambda a: ad.sum_(a, axis=-1), [(3, 5)]),
            ("sum-all", lambda a: ad.reshape(ad.sum_(a), (1,)), [(3, 5)]),
            ("mean", lambda a: ad.mean(a, axis=0), [(3, 5)]),
            ("reshape", lambda a: ad.reshape(a, (2, 6)), [(3, 4)]),
            ("transpose", lambda a: ad.transpose(a, (1, 0)), [(3, 4)]),
            ("concat", lambda a, b: ad.concat([a, b], axis=-1), [(3, 2), (3, 5)]),
            ("softmax", lambda a: ad.softmax(a), [(4, 6)]),
            ("log_softmax", lambda a: ad.log_softmax(a), [(4, 6)]),
            ("layernorm", lambda a, g, b: ad.layernorm(a, g, b), [(4, 6), (6,), (6,)]),
        ]
        for name, build, shapes in cases:
            tensors = [_leaf(rng, *s) for s in shapes]
            worst = fd_check(build, tensors, rng)
            assert worst < FD_TOL, f"{name}: worst relative error {worst}"

    def test_gather_primitives(self):
        rng = np.random.default_rng(7)
        table = _leaf(rng, 9, 4)
        ids = rng.integers(0, 9, size=(3, 5))
        worst = fd_check(lambda t: ad.embedding(t, ids), [table], rng)
        assert worst < FD_TOL

        x = _leaf(rng, 6, 4)
        picks = rng.integers(0, 4, size=6)
        worst = fd_check(lambda t: ad.take_along(t, picks), [x], rng)
        assert worst < FD_TOL

    def test_composite_graph(self):
        rng = np.random.default_rng(11)
        w1, b1 = _leaf(rng, 6, 8), _leaf(rng, 8)
        w2 = _leaf(rng, 8, 3)
        x = ad.Tensor(rng.standard_normal((5, 6)))

        def build(w1, b1, w2):
            hidden = ad.relu(ad.add(ad.matmul(x, w1), b1))
            return ad.log_softmax(ad.matmul(hidden, w2))

        worst = fd_check(build, [w1, b1, w2], rng, samples_per_tensor=10)
        assert worst < FD_TOL
