"""Tensor/tape core: exact cases, finite-difference oracles, invariants."""

import numpy as np
import pytest

from kgrank.autodiff import DimensionError, Tape, TapeError, Tensor, param
from kgrank.gradcheck import compare_gradients, numeric_grad, relative_error


def _project(tape, out, weights):
    """Reduce a matrix output to a scalar via a fixed random projection."""
    return tape.sum_all(tape.mul(out, Tensor(weights)))


class TestMatmul:
    def test_identity(self):
        tape = Tape()
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = tape.matmul(a, b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_basis_selection(self):
        tape = Tape()
        out = tape.matmul(Tensor([[1.0, 0.0]]), Tensor([[2.0], [5.0]]))
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_shape_mismatch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            tape.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradients_match_finite_differences(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            a = param(rng.normal(size=(3, 4)))
            b = param(rng.normal(size=(4, 2)))
            w = rng.normal(size=(3, 2))

            def forward():
                tape = Tape()
                return _project(tape, tape.matmul(a, b), w), tape

            loss, tape = forward()
            tape.backward(loss)
            analytic = {"a": a.grad.copy(), "b": b.grad.copy()}
            a.zero_grad(), b.zero_grad()
            report = compare_gradients(lambda: forward()[0].item(),
                                       [("a", a), ("b", b)], analytic)
            worst = max(worst, report.max_rel_err)
        assert worst < 1e-5


class TestSoftmaxRows:
    def test_uniform_row(self):
        tape = Tape()
        out = tape.softmax_rows(Tensor([[1.0, 1.0, 1.0, 1.0]]))
        np.testing.assert_allclose(out.data, [[0.25] * 4])

    def test_forced_ratio(self):
        tape = Tape()
        out = tape.softmax_rows(Tensor([[0.0, np.log(2.0)]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-12)

    def test_rows_sum_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            m = rng.normal(scale=3.0, size=(4, 5))
            tape = Tape()
            out = tape.softmax_rows(Tensor(m)).data
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)
            shifted = tape.softmax_rows(Tensor(m + rng.normal())).data
            np.testing.assert_allclose(out, shifted, atol=1e-12)
            assert (out >= 0).all()

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = param(rng.normal(size=(4, 4)))
        # full Jacobian, one output entry at a time
        for oi in range(4):
            for oj in range(4):
                tape = Tape()
                out = tape.softmax_rows(x)
                pick = np.zeros((4, 4))
                pick[oi, oj] = 1.0
                loss = _project(tape, out, pick)
                tape.backward(loss)
                analytic = x.grad.copy()
                x.zero_grad()

                def f():
                    t2 = Tape()
                    return _project(t2, t2.softmax_rows(x), pick).item()

                numeric = numeric_grad(f, x)
                for ij, num in numeric.items():
                    assert relative_error(analytic[ij], num) < 1e-5

    def test_grad_random_projections(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            x = param(rng.normal(size=(4, 4)))
            w = rng.normal(size=(4, 4))
            tape = Tape()
            loss = _project(tape, tape.softmax_rows(x), w)
            tape.backward(loss)
            analytic = {"x": x.grad.copy()}
            x.zero_grad()
            report = compare_gradients(lambda: (lambda t: _project(
                t, t.softmax_rows(x), w))(Tape()).item(), [("x", x)], analytic)
            worst = max(worst, report.max_rel_err)
        assert worst < 1e-5


class TestLayerNorm:
    def test_constant_row_maps_to_bias(self):
        tape = Tape()
        out = tape.layer_norm(Tensor([[5.0, 5.0, 5.0, 5.0]]),
                              Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-2)

    def test_already_normalized(self):
        tape = Tape()
        out = tape.layer_norm(Tensor([[1.0, -1.0]]),
                              Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2))),
                              eps=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)

    def test_rejects_single_column(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            tape.layer_norm(Tensor([[1.0], [2.0]]),
                            Tensor([[1.0]]), Tensor([[0.0]]))

    def test_output_row_statistics(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = rng.normal(scale=2.0, size=(3, 8))
            tape = Tape()
            out = tape.layer_norm(Tensor(m), Tensor(np.ones((1, 8))),
                                  Tensor(np.zeros((1, 8)))).data
            np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-9)
            np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_gradients_match_finite_differences(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(200 + seed)
            x = param(rng.normal(size=(3, 8)))
            gain = param(rng.normal(size=(1, 8)))
            bias = param(rng.normal(size=(1, 8)))
            w = rng.normal(size=(3, 8))

            def f():
                tape = Tape()
                return _project(tape, tape.layer_norm(x, gain, bias), w)

            loss = f()
            tape = Tape()
            out = tape.layer_norm(x, gain, bias)
            loss = _project(tape, out, w)
            tape.backward(loss)
            analytic = {"x": x.grad.copy(), "gain": gain.grad.copy(),
                        "bias": bias.grad.copy()}
            for t in (x, gain, bias):
                t.zero_grad()
            report = compare_gradients(
                lambda: (lambda t: _project(t, t.layer_norm(x, gain, bias), w))(
                    Tape()).item(),
                [("x", x), ("gain", gain), ("bias", bias)], analytic)
            worst = max(worst, report.max_rel_err)
        assert worst < 1e-4


class TestAffine:
    def test_identity(self):
        tape = Tape()
        x = Tensor([[1.0, 2.0, 3.0]])
        out = tape.affine(x, Tensor(np.eye(3)), Tensor(np.zeros((1, 3))))
        np.testing.assert_array_equal(out.data, x.data)

    def test_bias_passthrough(self):
        tape = Tape()
        out = tape.affine(Tensor([[4.0, 5.0]]), Tensor(np.zeros((1, 2))),
                          Tensor([[3.0]]))
        np.testing.assert_array_equal(out.data, [[3.0]])

    def test_shape_mismatch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            tape.affine(Tensor([[1.0, 2.0]]), Tensor(np.zeros((3, 5))),
                        Tensor(np.zeros((1, 3))))

    def test_gradients_match_finite_differences(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            q, r = int(rng.integers(2, 7)), int(rng.integers(1, 6))
            x = param(rng.normal(size=(1, q)))
            w = param(rng.normal(size=(r, q)))
            b = param(rng.normal(size=(1, r)))
            proj = rng.normal(size=(1, r))

            def f():
                tape = Tape()
                return _project(tape, tape.affine(x, w, b), proj)

            tape = Tape()
            loss = _project(tape, tape.affine(x, w, b), proj)
            tape.backward(loss)
            analytic = {"x": x.grad.copy(), "w": w.grad.copy(), "b": b.grad.copy()}
            for t in (x, w, b):
                t.zero_grad()
            report = compare_gradients(lambda: f().item(),
                                       [("x", x), ("w", w), ("b", b)], analytic)
            worst = max(worst, report.max_rel_err)
        assert worst < 1e-5


class TestElementwise:
    def test_symmetry_points(self):
        tape = Tape()
        assert tape.tanh(Tensor([[0.0]])).item() == 0.0
        assert tape.sigmoid(Tensor([[0.0]])).item() == 0.5

    def test_tanh_saturation(self):
        tape = Tape()
        out = tape.tanh(Tensor([[30.0, -30.0]]))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)

    def test_sigmoid_extremes_stay_finite(self):
        tape = Tape()
        out = tape.sigmoid(Tensor([[800.0, -800.0]]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [[1.0, 0.0]], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(400 + seed)
            x = param(rng.normal(size=(1, 6)))
            w = rng.normal(size=(1, 6))
            for op in ("tanh", "sigmoid"):
                def f():
                    tape = Tape()
                    return _project(tape, getattr(tape, op)(x), w)

                tape = Tape()
                loss = _project(tape, getattr(tape, op)(x), w)
                tape.backward(loss)
                analytic = {"x": x.grad.copy()}
                x.zero_grad()
                report = compare_gradients(lambda: f().item(), [("x", x)], analytic)
                worst = max(worst, report.max_rel_err)
        assert worst < 1e-6


class TestLayoutOps:
    def test_stack_and_vec_layout(self):
        tape = Tape()
        stacked = tape.stack_rows([Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])])
        np.testing.assert_array_equal(stacked.data, [[1.0, 2.0], [3.0, 4.0]])
        flat = tape.vec_rows(stacked)
        np.testing.assert_array_equal(flat.data, [[1.0, 2.0, 3.0, 4.0]])

    def test_concat_cols(self):
        tape = Tape()
        out = tape.concat_cols([Tensor([[1.0]]), Tensor([[2.0]]), Tensor([[3.0]])])
        np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_width_mismatch(self):
        tape = Tape()
        with pytest.raises(DimensionError):
            tape.stack_rows([Tensor([[1.0, 2.0]]), Tensor([[3.0]])])

    def test_vec_of_stack_gradcheck(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(500 + seed)
            vs = [param(rng.normal(size=(1, 3))) for _ in range(4)]
            w = rng.normal(size=(1, 12))

            def f():
                tape = Tape()
                return _project(tape, tape.vec_rows(tape.stack_rows(vs)), w)

            tape = Tape()
            loss = _project(tape, tape.vec_rows(tape.stack_rows(vs)), w)
            tape.backward(loss)
            analytic = {f"v{i}": v.grad.copy() for i, v in enumerate(vs)}
            for v in vs:
                v.zero_grad()
            report = compare_gradients(
                lambda: f().item(),
                [(f"v{i}", v) for i, v in enumerate(vs)], analytic)
            worst = max(worst, report.max_rel_err)
        assert worst < 1e-5

    def test_gather_and_mean_rows_gradcheck(self):
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(600 + seed)
            table = param(rng.normal(size=(10, 4)))
            idx = [1, 3, 3, 7]
            w = rng.normal(size=(1, 4))

            def f():
                tape = Tape()
                return _project(tape, tape.mean_rows(tape.gather_rows(table, idx)), w)

            tape = Tape()
            loss = _project(tape, tape.mean_rows(tape.gather_rows(table, idx)), w)
            tape.backward(loss)
            analytic = {"table": table.grad.copy()}
            table.zero_grad()
            report = compare_gradients(lambda: f().item(), [("table", table)],
                                       analytic)
            worst = max(worst, report.max_rel_err)
            # untouched rows carry exactly zero gradient
            tape = Tape()
            loss = _project(tape, tape.mean_rows(tape.gather_rows(table, idx)), w)
            tape.backward(loss)
            assert np.all(table.grad[0] == 0.0) and np.all(table.grad[9] == 0.0)
            table.zero_grad()
        assert worst < 1e-5


class TestBackward:
    def test_sum_gradient(self):
        x = param([[1.0, 2.0, 3.0]])
        tape = Tape()
        loss = tape.sum_all(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0, 1.0]])

    def test_quadratic_gradient(self):
        x = param([[1.0, 2.0]])
        tape = Tape()
        loss = tape.matmul(x, tape.transpose(x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [[2.0, 4.0]])

    def test_non_scalar_loss_rejected(self):
        x = param([[1.0, 2.0]])
        tape = Tape()
        out = tape.tanh(x)
        with pytest.raises(TapeError):
            tape.backward(out)

    def test_double_backward_rejected(self):
        x = param([[1.0, 2.0]])
        tape = Tape()
        loss = tape.sum_all(x)
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)
        tape.reset()
        loss = tape.sum_all(x)
        tape.backward(loss)  # fine after reset

    def test_foreign_loss_rejected(self):
        x = param([[1.0]])
        t1, t2 = Tape(), Tape()
        loss = t1.sum_all(x)
        with pytest.raises(TapeError):
            t2.backward(loss)

    def test_unreachable_tensor_gets_zero_grad(self):
        x = param([[1.0, 2.0]])
        y = param([[3.0, 4.0]])
        tape = Tape()
        tape.tanh(y)  # recorded but never feeds the loss
        loss = tape.sum_all(x)
        tape.backward(loss)
        np.testing.assert_array_equal(y.grad, [[0.0, 0.0]])

    def test_chain_rule_matches_manual_composition(self):
        # two-op pipeline: grad equals the product of the op Jacobians
        rng = np.random.default_rng(42)
        x = param(rng.normal(size=(1, 3)))
        w = param(rng.normal(size=(3, 3)))
        tape = Tape()
        h = tape.matmul(x, w)
        out = tape.tanh(h)
        loss = tape.sum_all(out)
        tape.backward(loss)
        t = np.tanh(x.data @ w.data)
        manual_x = ((1 - t * t) @ w.data.T)
        np.testing.assert_allclose(x.grad, manual_x, atol=1e-12)

    def test_shared_subexpression_accumulates(self):
        x = param([[2.0]])
        tape = Tape()
        loss = tape.add(tape.scale(x, 3.0), tape.scale(x, 4.0))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [[7.0]])


class TestCheckedMode:
    def test_nan_raises(self):
        tape = Tape(check_finite=True)
        with np.errstate(invalid="ignore"):
            with pytest.raises(FloatingPointError):
                tape.scale(Tensor([[np.inf]]), 0.0)

    def test_finite_inputs_pass(self):
        rng = np.random.default_rng(0)
        tape = Tape(check_finite=True)
        a = Tensor(rng.normal(size=(3, 3)))
        out = tape.softmax_rows(tape.matmul(a, tape.transpose(a)))
        assert np.all(np.isfinite(out.data))


class TestHingePieces:
    def test_relu_saturation_gradient_zero(self):
        x = param([[-1.5]])
        tape = Tape()
        loss = tape.relu(x)
        tape.backward(loss)
        assert loss.item() == 0.0
        np.testing.assert_array_equal(x.grad, [[0.0]])

    def test_scale_sub_grads(self):
        a, b = param([[2.0]]), param([[5.0]])
        tape = Tape()
        loss = tape.sub(tape.scale(a, 2.0), b)
        tape.backward(loss)
        np.testing.assert_array_equal(a.grad, [[2.0]])
        np.testing.assert_array_equal(b.grad, [[-1.0]])
