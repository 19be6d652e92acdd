"""Numeric core: op semantics, tape gradients against finite differences,
optimizer arithmetic, and parameter file round-trips."""

import math

import numpy as np
import pytest

import multiparse.tensor as nc
from multiparse.tensor import Parameter, Tape, Tensor

from oracles import central_difference, rel_err


def fd_against_tape(build_loss, arrays, tol=1e-6, h=1e-5):
    """Wrap plain arrays as Parameters, diff the loss both ways, compare."""
    params = [Parameter(f"p{i}", a) for i, a in enumerate(arrays)]
    with Tape() as tape:
        loss = build_loss(params)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def f():
        return build_loss(params).item()

    numeric = central_difference(f, [p.data for p in params], h=h)
    worst = max(rel_err(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e}"


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 4)))
        out = nc.matmul(a, Tensor(np.eye(4)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_zero(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.ones((3, 5)))
        np.testing.assert_array_equal(nc.matmul(a, b).data, np.zeros((2, 5)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matmul"):
            nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
        with pytest.raises(ValueError, match="matmul"):
            nc.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))

    def test_gradients(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        fd_against_tape(
            lambda ps: nc.sum_all(nc.matmul(ps[0], ps[1])), [a, b], tol=1e-6)


class TestElementwise:
    def test_values(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[10.0, 20.0], [30.0, 40.0]])
        np.testing.assert_array_equal(nc.add(a, b).data, [[11, 22], [33, 44]])
        np.testing.assert_array_equal(nc.sub(b, a).data, [[9, 18], [27, 36]])
        np.testing.assert_array_equal(nc.mul(a, a).data, [[1, 4], [9, 16]])

    def test_row_broadcast(self):
        a = Tensor(np.arange(6, dtype=float).reshape(2, 3))
        row = Tensor([[1.0, 10.0, 100.0]])
        np.testing.assert_array_equal(nc.add(a, row).data, [[1, 11, 102], [4, 14, 105]])
        vec = Tensor([1.0, 10.0, 100.0])
        np.testing.assert_array_equal(nc.add(vec, a).data, [[1, 11, 102], [4, 14, 105]])

    def test_general_broadcast_rejected(self):
        col = Tensor(np.ones((2, 1)))
        mat = Tensor(np.ones((2, 3)))
        with pytest.raises(ValueError, match="row broadcast"):
            nc.add(col, mat)
        with pytest.raises(ValueError):
            nc.mul(Tensor(np.ones(4)), Tensor(np.ones((2, 3))))

    def test_tanh_sigmoid_values(self):
        x = Tensor([-2.0, 0.0, 3.0])
        np.testing.assert_allclose(nc.tanh(x).data, np.tanh(x.data), atol=1e-15)
        np.testing.assert_allclose(
            nc.sigmoid(x).data, 1.0 / (1.0 + np.exp(-x.data)), atol=1e-15)

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = nc.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        row = rng.normal(size=(1, 4))

        fd_against_tape(lambda ps: nc.sum_all(nc.mul(nc.add(ps[0], ps[1]), ps[0])),
                        [a, b], tol=1e-6)
        fd_against_tape(lambda ps: nc.sum_all(nc.tanh(nc.sub(ps[0], ps[1]))),
                        [a, row], tol=1e-6)
        fd_against_tape(lambda ps: nc.sum_all(nc.sigmoid(nc.mul(ps[0], ps[1]))),
                        [a, row], tol=1e-6)

    def test_broadcast_gradient_sums_over_rows(self):
        bias = Parameter("b", np.zeros((1, 3)))
        x = Tensor(np.ones((4, 3)))
        with Tape() as tape:
            loss = nc.sum_all(nc.add(x, bias))
        tape.backward(loss)
        np.testing.assert_array_equal(bias.grad, np.full((1, 3), 4.0))


class TestSoftmax:
    def test_uniform(self):
        p = nc.softmax(Tensor([0.5, 0.5, 0.5, 0.5])).data
        np.testing.assert_allclose(p, 0.25, atol=1e-15)

    def test_singleton_is_exactly_one(self):
        assert nc.softmax(Tensor([123.4])).data[0] == 1.0

    def test_extreme_values_no_overflow(self):
        p = nc.softmax(Tensor([1000.0, 0.0])).data
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p, [1.0, 0.0], atol=1e-12)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(3)
        for n in (1, 2, 7, 40):
            v = rng.normal(scale=30.0, size=n)
            p = nc.softmax(Tensor(v)).data
            assert abs(p.sum() - 1.0) <= 1e-12
            q = nc.softmax(Tensor(v + 777.0)).data
            np.testing.assert_allclose(p, q, atol=1e-12)

    def test_masked_positions_exactly_zero(self):
        rng = np.random.default_rng(4)
        v = rng.normal(size=9)
        mask = rng.random(9) < 0.6
        mask[0] = True
        p = nc.softmax(Tensor(v), mask=mask).data
        assert (p[~mask] == 0.0).all()
        assert abs(p.sum() - 1.0) <= 1e-12

    def test_all_masked_rejected(self):
        with pytest.raises(ValueError, match="masked"):
            nc.softmax(Tensor([1.0, 2.0]), mask=[False, False])

    def test_non_vector_rejected(self):
        with pytest.raises(ValueError, match="1-D"):
            nc.softmax(Tensor(np.ones((2, 2))))

    def test_gradients_with_and_without_mask(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=6)
        w = rng.normal(size=6)
        mask = np.array([True, False, True, True, False, True])

        fd_against_tape(
            lambda ps: nc.sum_all(nc.mul(nc.softmax(ps[0]), Tensor(w))), [v], tol=1e-6)
        fd_against_tape(
            lambda ps: nc.sum_all(nc.mul(nc.softmax(ps[0], mask=mask), Tensor(w))),
            [v], tol=1e-6)


class TestShapeOps:
    def test_concat_values_and_axis(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0, 4.0]])
        np.testing.assert_array_equal(nc.concat(a, b, axis=0).data, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(nc.concat(a, b, axis=1).data, [[1, 2, 3, 4]])
        with pytest.raises(ValueError, match="axis"):
            nc.concat(a, b, axis=2)
        with pytest.raises(ValueError, match="differ"):
            nc.concat(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))), axis=0)

    def test_concat_gradient_splits(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=4)
        b = rng.normal(size=3)
        w = rng.normal(size=7)
        fd_against_tape(
            lambda ps: nc.sum_all(nc.mul(nc.concat(ps[0], ps[1]), Tensor(w))),
            [a, b], tol=1e-6)

    def test_stack_rows(self):
        rng = np.random.default_rng(7)
        xs = [rng.normal(size=(1, 3)) for _ in range(4)]
        out = nc.stack_rows([Tensor(x) for x in xs])
        np.testing.assert_array_equal(out.data, np.concatenate(xs, axis=0))
        w = rng.normal(size=(4, 3))
        fd_against_tape(
            lambda ps: nc.sum_all(nc.mul(nc.stack_rows(ps), Tensor(w))), xs, tol=1e-6)

    def test_rows_gather_and_scatter_grad(self):
        table = Parameter("E", np.arange(12, dtype=float).reshape(4, 3))
        out = nc.rows(table, [2, 0, 2])
        np.testing.assert_array_equal(out.data, table.data[[2, 0, 2]])
        with Tape() as tape:
            loss = nc.sum_all(nc.rows(table, [2, 0, 2]))
        tape.backward(loss)
        np.testing.assert_array_equal(table.grad, [[1, 1, 1], [0, 0, 0], [2, 2, 2], [0, 0, 0]])
        with pytest.raises(ValueError, match="out of range"):
            nc.rows(table, [4])

    def test_take_and_scalar_chain(self):
        rng = np.random.default_rng(8)
        v = rng.random(6) + 0.5
        fd_against_tape(
            lambda ps: nc.scale(nc.log(nc.sum_all(nc.take(ps[0], [1, 4]))), -1.0),
            [v], tol=1e-6)
        with pytest.raises(ValueError, match="out of range"):
            nc.take(Tensor(v), [6])

    def test_reshape_roundtrip_grad(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(2, 3))
        w = rng.normal(size=6)
        fd_against_tape(
            lambda ps: nc.sum_all(nc.mul(nc.reshape(ps[0], (6,)), Tensor(w))),
            [a], tol=1e-6)

    def test_log_floor_clamps_with_zero_grad(self):
        x = Parameter("x", np.array([1e-40, 2.0]))
        with Tape() as tape:
            loss = nc.sum_all(nc.log(x, floor=1e-30))
        tape.backward(loss)
        assert loss.data[0] == pytest.approx(math.log(1e-30) + math.log(2.0))
        assert x.grad[0] == 0.0
        assert x.grad[1] == pytest.approx(0.5)
        with pytest.raises(nc.NumericError):
            nc.log(Tensor([-1.0]))

    def test_dropout_inference_identity_and_train_scaling(self):
        x = Tensor(np.ones((50, 40)))
        assert nc.dropout(x, 0.0, np.random.default_rng(0)) is x
        out = nc.dropout(x, 0.3, np.random.default_rng(10)).data
        kept = out != 0.0
        assert 0.6 < kept.mean() < 0.8
        np.testing.assert_allclose(out[kept], 1.0 / 0.7, atol=1e-12)
        with pytest.raises(ValueError):
            nc.dropout(x, 1.0, np.random.default_rng(0))


class TestTapeMechanics:
    def test_ops_outside_tape_do_not_record(self):
        a = Parameter("a", np.ones((2, 2)))
        out = nc.mul(a, a)
        assert out.shape == (2, 2)
        assert (a.grad == 0).all()

    def test_reused_tensor_accumulates(self):
        a = Parameter("a", np.array([3.0]))
        with Tape() as tape:
            loss = nc.sum_all(nc.mul(a, a))
        tape.backward(loss)
        assert a.grad[0] == pytest.approx(6.0)

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError, match="already active"):
                with Tape():
                    pass

    def test_backward_requires_scalar(self):
        a = Parameter("a", np.ones(3))
        with Tape() as tape:
            out = nc.mul(a, a)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(out)

    def test_backward_does_not_mutate_forward_values(self):
        rng = np.random.default_rng(11)
        a = Parameter("a", rng.normal(size=(3, 3)))
        b = Parameter("b", rng.normal(size=(3, 3)))

        def forward():
            h = nc.tanh(nc.matmul(a, b))
            return nc.sum_all(nc.mul(nc.softmax(nc.reshape(h, (9,))), Tensor(np.arange(9.0))))

        with Tape() as tape:
            loss = forward()
        before = loss.item()
        tape.backward(loss)
        with Tape():
            again = forward().item()
        assert again == before  # bit-identical rerun


class TestGradCheck:
    def test_quadratic_passes_tightly(self):
        p = Parameter("w", np.array([1.5, -2.0, 0.5]))
        res = nc.grad_check(lambda: nc.sum_all(nc.mul(p, p)), [p], tol=1e-8)
        assert res.passed
        assert res.max_rel_err < 1e-8
        # values untouched and grads cleared afterwards
        np.testing.assert_array_equal(p.data, [1.5, -2.0, 0.5])
        assert (p.grad == 0).all()

    def test_corrupted_gradient_detected(self):
        p = Parameter("w", np.array([0.3, 0.7]))

        def bad_identity(x):
            out = Tensor(x.data.copy())
            nc.record(out, (x,), lambda g: (g + 0.1,))
            return out

        res = nc.grad_check(lambda: nc.sum_all(nc.mul(bad_identity(p), p)), [p], tol=1e-4)
        assert not res.passed
        assert res.max_rel_err > 1e-2

    def test_non_finite_loss_rejected(self):
        p = Parameter("w", np.array([np.nan]))
        with pytest.raises(nc.NumericError):
            nc.grad_check(lambda: nc.sum_all(nc.mul(p, p)), [p])


class TestSgdStep:
    def test_plain_update_and_grad_reset(self):
        p = Parameter("w", np.array([1.0, 2.0]))
        p.grad[...] = [0.5, -1.0]
        norm = nc.sgd_step([p], lr=0.1, clip_norm=100.0)
        np.testing.assert_allclose(p.data, [0.95, 2.1], atol=1e-15)
        assert norm == pytest.approx(math.sqrt(1.25))
        assert (p.grad == 0).all()

    def test_lr_zero_is_identity(self):
        p = Parameter("w", np.array([1.0, -3.0]))
        p.grad[...] = [100.0, 100.0]
        before = p.data.copy()
        nc.sgd_step([p], lr=0.0)
        np.testing.assert_array_equal(p.data, before)

    def test_global_norm_clipping(self):
        # grads of joint norm 10 against clip 5: the applied update halves
        p1 = Parameter("a", np.zeros(2))
        p2 = Parameter("b", np.zeros(1))
        p1.grad[...] = [6.0, 0.0]
        p2.grad[...] = [8.0]
        nc.sgd_step([p1, p2], lr=1.0, clip_norm=5.0)
        applied = np.concatenate([-p1.data, -p2.data])
        np.testing.assert_allclose(applied, [3.0, 0.0, 4.0], atol=1e-12)
        assert np.linalg.norm(applied) == pytest.approx(5.0)

    def test_below_clip_untouched(self):
        p = Parameter("w", np.zeros(2))
        p.grad[...] = [3.0, 0.0]
        nc.sgd_step([p], lr=1.0, clip_norm=5.0)
        np.testing.assert_allclose(p.data, [-3.0, 0.0], atol=1e-15)

    def test_infinite_clip_disables(self):
        p = Parameter("w", np.zeros(1))
        p.grad[...] = [1000.0]
        nc.sgd_step([p], lr=1.0, clip_norm=math.inf)
        assert p.data[0] == -1000.0

    def test_non_finite_gradient_rejected_without_update(self):
        p = Parameter("w", np.array([1.0]))
        q = Parameter("v", np.array([2.0]))
        p.grad[...] = [np.nan]
        q.grad[...] = [1.0]
        with pytest.raises(nc.NumericError, match="non-finite"):
            nc.sgd_step([p, q], lr=0.5)
        assert p.data[0] == 1.0 and q.data[0] == 2.0


class TestRandomSweeps:
    def test_composite_chains_match_finite_differences(self):
        """Random shapes and values through mixed op chains, rel err < 1e-4."""
        rng = np.random.default_rng(12)
        for trial in range(8):
            m, k, n = rng.integers(1, 5, size=3)
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            c = rng.normal(size=(1, n))
            w = rng.normal(size=int(m * n))

            def build(ps):
                h = nc.tanh(nc.add(nc.matmul(ps[0], ps[1]), ps[2]))
                s = nc.softmax(nc.reshape(h, (h.data.size,)))
                return nc.sum_all(nc.mul(s, Tensor(w)))

            fd_against_tape(build, [a, b, c], tol=1e-4)


class TestParamFiles:
    def test_roundtrip_bytes_identical(self, tmp_path):
        rng = np.random.default_rng(13)
        params = [
            Parameter("enc/w", rng.normal(size=(4, 3))),
            Parameter("enc/b", rng.normal(size=(1, 3))),
            Parameter("out/v", rng.normal(size=5)),
        ]
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        nc.save_params(params, p1)
        state = nc.load_params(p1)
        assert list(state) == ["enc/w", "enc/b", "out/v"]
        nc.save_params(state, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_restore_matches_by_name(self, tmp_path):
        src = [Parameter("a", np.array([1.0, 2.0])), Parameter("b", np.eye(2))]
        path = tmp_path / "p.bin"
        nc.save_params(src, path)
        dst = [Parameter("b", np.zeros((2, 2))), Parameter("a", np.zeros(2))]
        nc.restore_params(dst, nc.load_params(path))
        np.testing.assert_array_equal(dst[0].data, np.eye(2))
        np.testing.assert_array_equal(dst[1].data, [1.0, 2.0])

    def test_restore_rejects_mismatch(self, tmp_path):
        path = tmp_path / "p.bin"
        nc.save_params([Parameter("a", np.zeros(2))], path)
        with pytest.raises(ValueError, match="missing"):
            nc.restore_params([Parameter("other", np.zeros(2))], nc.load_params(path))
        with pytest.raises(ValueError, match="shape"):
            nc.restore_params([Parameter("a", np.zeros(3))], nc.load_params(path))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a parameter file"):
            nc.load_params(path)
