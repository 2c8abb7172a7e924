"""Tensor core: forward semantics, adjoints vs. finite differences, tape behavior."""

import math

import numpy as np
import pytest

from longspan import autodiff as ad
from longspan.errors import ContractError, DegenerateRowError, DimensionError


def loop_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Element-wise triple-loop product; the independent oracle for matmul."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def check_grad_fd(f, tensors, h=1e-5, tol=1e-4, max_coords=6, seed=0):
    """Compare tape gradients of scalar f() against sampled central differences."""
    with ad.Tape() as tape:
        loss = f()
        tape.backward(loss)
    grads = {id(t): (t.grad.copy() if t.grad is not None else None) for t in tensors}
    tape.zero_grads()  # leave no stale buffers for later checks on the same model
    rng = np.random.default_rng(seed)
    for t in tensors:
        saved = grads[id(t)]
        grad = saved if saved is not None else np.zeros(t.shape)
        flat = t.data.reshape(-1)
        n_probe = min(max_coords, flat.size)
        coords = rng.choice(flat.size, size=n_probe, replace=False)
        scale = max(np.abs(grad).max(), 1.0)
        for c in coords:
            idx = np.unravel_index(int(c), t.shape)
            fd = ad.finite_diff_coordinate(f, t, idx, h=h)
            err = abs(grad[idx] - fd) / max(abs(fd), scale)
            assert err < tol, f"grad mismatch at {idx}: analytic {grad[idx]}, fd {fd}"


class TestMatmul:
    def test_identity(self):
        b = ad.Tensor(np.arange(9.0).reshape(3, 3))
        out = ad.matmul(ad.Tensor(np.eye(3)), b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_zeros(self):
        a = ad.Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        out = ad.matmul(a, ad.Tensor(np.zeros((4, 2))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 2)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(4, 5))
        b = rng.normal(size=(5, 3))
        out = ad.matmul(ad.Tensor(a), ad.Tensor(b))
        assert np.abs(out.data - loop_matmul(a, b)).max() < 1e-12

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = ad.Tensor(rng.normal(size=(4, 6)))
            b = ad.Tensor(rng.normal(size=(6, 5)))
            c = ad.Tensor(rng.normal(size=(5, 3)))
            left = ad.matmul(ad.matmul(a, b), c).data
            right = ad.matmul(a, ad.matmul(b, c)).data
            assert rel_err(left, right) < 1e-9

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
            ad.matmul(ad.Tensor(np.zeros((3, 4))), ad.Tensor(np.zeros((3, 2))))

    def test_batched_and_vector_forms(self):
        rng = np.random.default_rng(11)
        a3 = rng.normal(size=(2, 3, 4))
        b3 = rng.normal(size=(2, 4, 5))
        out = ad.matmul(ad.Tensor(a3), ad.Tensor(b3))
        np.testing.assert_allclose(out.data, a3 @ b3, atol=1e-14)
        v = rng.normal(size=4)
        np.testing.assert_allclose(
            ad.matmul(ad.Tensor(a3[0]), ad.Tensor(v)).data, a3[0] @ v, atol=1e-14
        )
        np.testing.assert_allclose(
            ad.matmul(ad.Tensor(v), ad.Tensor(b3[0])).data, v @ b3[0], atol=1e-14
        )


class TestMaskedSoftmax:
    def test_uniform_on_equal_logits(self):
        out = ad.masked_softmax(ad.Tensor([0.0, 0.0, 0.0]), np.array([True, True, True]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_single_permitted_entry(self):
        out = ad.masked_softmax(ad.Tensor([5.0, -2.0, 0.3]), np.array([False, False, True]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 1.0])

    def test_matches_high_precision_oracle(self):
        import mpmath

        mpmath.mp.dps = 50
        logits = [1.0, 2.0, 3.0]
        exps = [mpmath.exp(x) for x in logits]
        total = sum(exps)
        expected = np.array([float(e / total) for e in exps])
        out = ad.masked_softmax(ad.Tensor(logits), np.ones(3, dtype=bool))
        assert np.abs(out.data - expected).max() < 1e-12

    def test_rows_sum_to_one_and_masked_exactly_zero(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            logits = rng.normal(scale=30.0, size=(6, 9))
            mask = rng.random((6, 9)) < 0.6
            mask[:, 0] = True  # keep every row permitted
            out = ad.masked_softmax(ad.Tensor(logits), mask).data
            np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
            assert (out[~mask] == 0.0).all()

    def test_fully_masked_row_raises(self):
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(DegenerateRowError, match="row"):
            ad.masked_softmax(ad.Tensor(np.zeros((2, 2))), mask)


class TestGruCell:
    @staticmethod
    def zero_params(d_in, d_h):
        zeros = lambda *s: ad.parameter(np.zeros(s))
        return ad.GruParams(
            zeros(d_in, d_h), zeros(d_h, d_h), zeros(d_h),
            zeros(d_in, d_h), zeros(d_h, d_h), zeros(d_h),
            zeros(d_in, d_h), zeros(d_h, d_h), zeros(d_h),
        )

    def test_zero_params_zero_state(self):
        p = self.zero_params(3, 4)
        out = ad.gru_cell(ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(4)), p)
        np.testing.assert_array_equal(out.data, np.zeros(4))

    def test_saturated_update_gate_passes_state_through(self):
        p = self.zero_params(3, 4)
        p.b_z.data[:] = 50.0  # update gate ~1 keeps the previous state
        h_prev = np.array([0.3, -1.2, 0.5, 2.0])
        out = ad.gru_cell(ad.Tensor(np.ones(3)), ad.Tensor(h_prev), p)
        np.testing.assert_allclose(out.data, h_prev, atol=1e-6)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(21)
        d_in, d_h = 3, 4
        p = ad.GruParams.init(d_in, d_h, rng)
        for t in p.tensors():
            t.data[:] = rng.normal(scale=0.7, size=t.shape)
        x = rng.normal(size=d_in)
        h = rng.normal(size=d_h)

        def sig(v):
            return 1.0 / (1.0 + math.exp(-v))

        expected = np.zeros(d_h)
        for j in range(d_h):
            ar = sum(x[i] * p.wx_r.data[i, j] for i in range(d_in))
            ar += sum(h[i] * p.wh_r.data[i, j] for i in range(d_h)) + p.b_r.data[j]
            az = sum(x[i] * p.wx_z.data[i, j] for i in range(d_in))
            az += sum(h[i] * p.wh_z.data[i, j] for i in range(d_h)) + p.b_z.data[j]
            an = sum(x[i] * p.wx_n.data[i, j] for i in range(d_in))
            an += sig(ar) * sum(h[i] * p.wh_n.data[i, j] for i in range(d_h)) + p.b_n.data[j]
            n = math.tanh(an)
            expected[j] = (1.0 - sig(az)) * n + sig(az) * h[j]

        out = ad.gru_cell(ad.Tensor(x), ad.Tensor(h), p)
        assert np.abs(out.data - expected).max() < 1e-10

    def test_shape_mismatch(self):
        p = self.zero_params(3, 4)
        with pytest.raises(DimensionError):
            ad.gru_cell(ad.Tensor(np.zeros(5)), ad.Tensor(np.zeros(4)), p)


class TestBackward:
    def test_grad_of_sum_is_ones(self):
        x = ad.parameter(np.arange(6.0).reshape(2, 3))
        with ad.Tape() as tape:
            loss = ad.tsum(x)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_grad_of_sum_of_squares(self):
        x = ad.parameter([1.0, -2.0, 0.5])
        with ad.Tape() as tape:
            tape.backward(ad.tsum(ad.mul(x, x)))
        np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-15)

    def test_non_scalar_loss_rejected(self):
        x = ad.parameter(np.ones(3))
        with ad.Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(ContractError, match="scalar"):
                tape.backward(y)

    def test_fanout_accumulates(self):
        x = ad.parameter([1.0, 2.0])
        with ad.Tape() as tape:
            y = ad.add(ad.mul(x, x), x)  # x used twice
            tape.backward(ad.tsum(y))
        np.testing.assert_allclose(x.grad, 2 * x.data + 1.0)

    def test_double_backward_bit_identical_after_reset(self):
        rng = np.random.default_rng(9)
        x = ad.parameter(rng.normal(size=(4, 4)))
        w = ad.parameter(rng.normal(size=(4, 4)))
        with ad.Tape() as tape:
            y = ad.tanh(ad.matmul(x, w))
            loss = ad.tsum(ad.mul(y, y))
            tape.backward(loss)
            gx1, gw1 = x.grad.copy(), w.grad.copy()
            tape.zero_grads()
            tape.backward(loss)
        assert np.array_equal(gx1, x.grad)
        assert np.array_equal(gw1, w.grad)

    def test_composed_graph_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        x = ad.parameter(rng.normal(size=(3, 5)))
        w = ad.parameter(rng.normal(size=(5, 4)))

        def f():
            h = ad.tanh(ad.matmul(x, w))
            p = ad.softmax(h)
            return ad.tsum(ad.mul(p, h))

        check_grad_fd(f, [x, w], max_coords=10)

    def test_tracked_leaves_get_same_shape_grads(self):
        rng = np.random.default_rng(19)
        tensors = [ad.parameter(rng.normal(size=s)) for s in [(2, 3), (3,), (3, 1)]]
        with ad.Tape() as tape:
            y = ad.add(ad.matmul(tensors[0], tensors[1]), ad.tsum(tensors[2]))
            tape.backward(ad.tsum(y))
        for t in tensors:
            assert t.grad is not None
            assert t.grad.shape == t.shape


class TestFiniteDiff:
    def test_sum_gives_ones(self):
        x = ad.Tensor(np.array([0.3, -1.0, 2.0]))
        g = ad.finite_diff_grad(lambda t: ad.tsum(t), x)
        np.testing.assert_allclose(g.data, np.ones(3), atol=1e-9)

    def test_half_norm_gives_x(self):
        x = ad.Tensor(np.array([[0.4, -0.7], [1.3, 0.0]]))
        g = ad.finite_diff_grad(lambda t: 0.5 * float(ad.tsum(ad.mul(t, t))), x, h=1e-5)
        np.testing.assert_allclose(g.data, x.data, atol=1e-8)

    def test_masked_attention_sum_agrees_with_backward(self):
        rng = np.random.default_rng(23)
        n = 5
        mask = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) <= 1
        v = rng.normal(size=(n, n))
        logits = ad.parameter(rng.normal(size=(n, n)))

        def f(t):
            att = ad.masked_softmax(t, mask)
            return ad.tsum(ad.matmul(att, ad.Tensor(v)))

        fd = ad.finite_diff_grad(f, logits, h=1e-5)
        with ad.Tape() as tape:
            tape.backward(f(logits))
        assert rel_err(logits.grad, fd.data) < 1e-4


class TestPerOpGradients:
    """Every differentiable op vs. central differences over >= 20 seeds."""

    CASES = {
        "add": lambda a, b: ad.tsum(ad.add(a, b)),
        "sub": lambda a, b: ad.tsum(ad.mul(ad.sub(a, b), ad.sub(a, b))),
        "mul": lambda a, b: ad.tsum(ad.mul(a, b)),
        "div": lambda a, b: ad.tsum(ad.div(a, ad.add(ad.mul(b, b), ad.Tensor(np.ones(b.shape))))),
        "matmul": lambda a, b: ad.tsum(ad.matmul(a, ad.transpose(b))),
        "exp": lambda a, b: ad.tsum(ad.exp(ad.mul(a, ad.Tensor(np.full(a.shape, 0.3))))),
        "log": lambda a, b: ad.tsum(ad.log(ad.add(ad.mul(a, a), ad.Tensor(np.ones(a.shape))))),
        "tanh": lambda a, b: ad.tsum(ad.tanh(a)),
        "sigmoid": lambda a, b: ad.tsum(ad.sigmoid(a)),
        "gelu": lambda a, b: ad.tsum(ad.gelu(a)),
        "power": lambda a, b: ad.tsum(ad.power(ad.add(ad.mul(a, a), ad.Tensor(np.ones(a.shape))), 1.5)),
        "mean": lambda a, b: ad.tmean(ad.mul(a, b)),
        "softmax": lambda a, b: ad.tsum(ad.mul(ad.softmax(a), b)),
        "log_softmax": lambda a, b: ad.tsum(ad.mul(ad.log_softmax(a), b)),
        "reshape": lambda a, b: ad.tsum(ad.mul(ad.reshape(a, (a.size,)), ad.reshape(b, (b.size,)))),
        "transpose": lambda a, b: ad.tsum(ad.mul(ad.transpose(a), ad.transpose(b))),
        "getitem": lambda a, b: ad.tsum(ad.getitem(a, (slice(1, 3), slice(0, 2)))),
        "concat": lambda a, b: ad.tsum(ad.mul(ad.concat([a, b], axis=0), ad.concat([b, a], axis=0))),
        "stack": lambda a, b: ad.tsum(ad.mul(ad.stack([a, b], axis=0), ad.stack([b, a], axis=0))),
        "clip": lambda a, b: ad.tsum(ad.clip(a, -0.5, 0.5)),
        "where": lambda a, b: ad.tsum(ad.where(a.data > 0, ad.mul(a, b), ad.mul(b, b))),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_op_gradient(self, name):
        fn = self.CASES[name]
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            a = ad.parameter(rng.normal(size=(3, 4)))
            b = ad.parameter(rng.normal(size=(3, 4)))
            check_grad_fd(lambda: fn(a, b), [a, b], max_coords=4, seed=seed)

    def test_gru_gradient(self):
        for seed in range(20):
            rng = np.random.default_rng(2000 + seed)
            p = ad.GruParams.init(3, 4, rng)
            x = ad.parameter(rng.normal(size=3))
            h = ad.parameter(rng.normal(size=4))
            weights = ad.parameter(rng.normal(size=4))

            def f():
                out = ad.gru_cell(x, h, p)
                return ad.tsum(ad.mul(out, weights))

            check_grad_fd(f, [x, h, *p.tensors()], max_coords=3, seed=seed)

    def test_masked_softmax_gradient(self):
        for seed in range(20):
            rng = np.random.default_rng(3000 + seed)
            mask = rng.random((4, 5)) < 0.7
            mask[:, 2] = True
            logits = ad.parameter(rng.normal(size=(4, 5)))
            mix = rng.normal(size=(4, 5))

            def f():
                return ad.tsum(ad.mul(ad.masked_softmax(logits, mask), ad.Tensor(mix)))

            check_grad_fd(f, [logits], max_coords=5, seed=seed)


class TestCrossEntropy:
    def test_uniform_logits_give_log_vocab(self):
        logits = ad.Tensor(np.zeros((4, 7)))
        loss = ad.cross_entropy_logits(logits, [0, 3, 6, 2])
        assert abs(loss.item() - 4 * math.log(7)) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(31)
        logits = ad.parameter(rng.normal(size=(3, 6)))
        targets = np.array([1, 4, 0])
        check_grad_fd(lambda: ad.cross_entropy_logits(logits, targets), [logits], max_coords=8)


class TestThreadConfinement:
    def test_tapes_are_per_thread(self):
        import threading

        results = {}

        def worker(name, seed):
            rng = np.random.default_rng(seed)
            x = ad.parameter(rng.normal(size=(6, 6)))
            with ad.Tape() as tape:
                loss = ad.tsum(ad.mul(ad.tanh(x), ad.tanh(x)))
                tape.backward(loss)
            results[name] = (x.data.copy(), x.grad.copy())

        threads = [threading.Thread(target=worker, args=(f"t{i}", i)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(results) == 4
        for name, (data, grad) in results.items():
            expected = 2 * np.tanh(data) * (1 - np.tanh(data) ** 2)
            np.testing.assert_allclose(grad, expected, atol=1e-12)


class TestDropoutAndNoGrad:
    def test_dropout_disabled_is_identity(self):
        x = ad.Tensor(np.ones((3, 3)))
        out = ad.dropout(x, 0.5, np.random.default_rng(0), training=False)
        assert out is x

    def test_dropout_seeded_deterministic(self):
        x = ad.Tensor(np.ones((8, 8)))
        a = ad.dropout(x, 0.4, np.random.default_rng(42)).data
        b = ad.dropout(x, 0.4, np.random.default_rng(42)).data
        np.testing.assert_array_equal(a, b)

    def test_no_grad_suppresses_recording(self):
        x = ad.parameter(np.ones(3))
        with ad.Tape() as tape:
            with ad.no_grad():
                y = ad.mul(x, x)
            assert len(tape) == 0
            assert not y.requires_grad
