import threading

import numpy as np
import pytest

from pydefgen.exceptions import (
    PydefgenAllMasked,
    PydefgenInvalidConfig,
    PydefgenNonFiniteValue,
    PydefgenNonScalarLoss,
    PydefgenShapeMismatch,
    PydefgenTapeError,
    PydefgenTapeReused,
    PydefgenZeroNorm,
)
from pydefgen.gradcheck import op_checks
from pydefgen.numerics import (
    Tape,
    Tensor,
    active_tape,
    backward,
    cosine_sim,
    cosine_similarity_matrix,
    exp,
    finite_diff_check,
    log,
    matmul,
    max_pool_rows,
    mean_pool_rows,
    normalize_rows,
    set_finite_checks,
    softmax_rows,
    tsum,
)
from pydefgen.seeding import make_rng


@pytest.mark.parametrize("name", sorted(op_checks()))
def test_op_gradient_matches_finite_differences(name):
    f, params = op_checks()[name](make_rng(0, "test", name))
    assert finite_diff_check(f, params, eps=1e-5) <= 1e-6


def test_matmul_gradient_contract():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    with Tape() as tape:
        loss = tsum(matmul(a, b))
    backward(loss, tape)
    np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.values.T)
    np.testing.assert_allclose(b.grad, a.values.T @ np.ones((3, 2)))


def test_broadcast_gradients_are_reduced():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    with Tape() as tape:
        loss = tsum(a * b)
    backward(loss, tape)
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_gradients_accumulate_over_reuse():
    x = Tensor(2.0, requires_grad=True)
    with Tape() as tape:
        loss = x * x + x
    backward(loss, tape)
    assert x.grad == pytest.approx(5.0)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    out = exp(x)
    assert not out.requires_grad
    assert active_tape() is None


def test_constants_stay_off_the_tape():
    with Tape() as tape:
        out = exp(Tensor(np.ones(3)))
    assert len(tape) == 0
    assert out not in tape


def test_tape_reuse_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = tsum(x * 2.0)
    backward(loss, tape)
    with pytest.raises(PydefgenTapeReused):
        backward(loss, tape)
    with pytest.raises(PydefgenTapeReused):
        with tape:
            tsum(x)


def test_non_scalar_loss_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        out = x * 2.0
    with pytest.raises(PydefgenNonScalarLoss):
        backward(out, tape)
    with pytest.raises(PydefgenNonScalarLoss):
        out.item()


def test_foreign_loss_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape():
        loss = tsum(x)
    with Tape() as other:
        tsum(x)
    with pytest.raises(PydefgenTapeError):
        backward(loss, other)


def test_tapes_are_thread_local():
    seen = []

    def worker():
        seen.append(active_tape())

    with Tape():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen == [None]


def test_non_finite_output_raises():
    with pytest.raises(PydefgenNonFiniteValue) as error:
        log(Tensor(np.array([1.0, 0.0])))
    assert error.value.op_name == "log"
    set_finite_checks(False)
    try:
        assert np.isneginf(log(Tensor(np.array([0.0]))).values).all()
    finally:
        set_finite_checks(True)


def test_shape_errors():
    with pytest.raises(PydefgenShapeMismatch):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))
    with pytest.raises(PydefgenShapeMismatch):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(PydefgenShapeMismatch):
        cosine_sim(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(PydefgenShapeMismatch):
        cosine_similarity_matrix(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))
    with pytest.raises(PydefgenShapeMismatch):
        max_pool_rows(Tensor(np.ones((2, 3))), np.array([True]))


def test_zero_norm_raises():
    with pytest.raises(PydefgenZeroNorm):
        normalize_rows(Tensor(np.zeros((2, 3))))
    with pytest.raises(PydefgenZeroNorm):
        cosine_sim(Tensor(np.zeros(3)), Tensor(np.ones(3)))


def test_cosine_similarity():
    u = Tensor(np.array([1.0, 0.0]))
    assert cosine_sim(u, Tensor(np.array([3.0, 0.0]))).item() == pytest.approx(1.0)
    assert cosine_sim(u, Tensor(np.array([0.0, 2.0]))).item() == pytest.approx(0.0)
    assert cosine_sim(u, Tensor(np.array([-1.0, 0.0]))).item() == pytest.approx(-1.0)
    matrix = cosine_similarity_matrix(
        Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])),
        Tensor(np.array([[2.0, 0.0], [1.0, 1.0]])),
    )
    np.testing.assert_allclose(matrix.values, [[1.0, 2**-0.5], [0.0, 2**-0.5]])


def test_pooling_respects_mask():
    rows = Tensor(np.array([[1.0, 9.0], [5.0, 2.0], [100.0, 100.0]]))
    mask = np.array([True, True, False])
    np.testing.assert_allclose(max_pool_rows(rows, mask).values, [5.0, 9.0])
    np.testing.assert_allclose(mean_pool_rows(rows, mask).values, [3.0, 5.5])
    with pytest.raises(PydefgenAllMasked):
        max_pool_rows(rows, np.zeros(3, dtype=bool))
    with pytest.raises(PydefgenAllMasked):
        mean_pool_rows(rows, np.zeros(3, dtype=bool))


def test_max_pool_ties_route_to_first_row():
    rows = Tensor(np.array([[2.0, 1.0], [2.0, 3.0]]), requires_grad=True)
    with Tape() as tape:
        loss = tsum(max_pool_rows(rows))
    backward(loss, tape)
    np.testing.assert_array_equal(rows.grad, [[1.0, 0.0], [0.0, 1.0]])


def test_finite_diff_check_rejects_bad_step():
    x = Tensor(np.ones(2))
    with pytest.raises(PydefgenInvalidConfig):
        finite_diff_check(lambda p: tsum(p[0]), [x], eps=0.0)


def test_finite_diff_check_restores_params():
    x = Tensor(np.array([0.3, -0.2]))
    before = x.values.copy()
    finite_diff_check(lambda p: tsum(exp(p[0])), [x])
    np.testing.assert_array_equal(x.values, before)
    assert not x.requires_grad
    assert x.grad is None


def test_softmax_rows_of_zeros_is_uniform():
    out = softmax_rows(Tensor(np.zeros((2, 4)))).values
    np.testing.assert_array_equal(out, np.full((2, 4), 0.25))


def test_softmax_rows_is_stable_for_large_scores():
    out = softmax_rows(Tensor(np.array([[1000.0, 0.0]]))).values
    assert np.isfinite(out).all()
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


def test_softmax_rows_sum_to_one():
    scores = np.random.default_rng(5).normal(scale=10.0, size=(50, 7))
    out = softmax_rows(Tensor(scores)).values
    assert np.abs(out.sum(axis=-1) - 1.0).max() <= 1e-12
    assert (out >= 0).all()


def test_backward_is_linear():
    rng = np.random.default_rng(6)
    values = rng.normal(size=(3, 4))
    weights = rng.normal(size=(4, 2))
    alpha, beta = 0.7, -1.3

    def grad_of(build):
        x = Tensor(values.copy(), requires_grad=True)
        with Tape() as tape:
            loss = build(x)
        backward(loss, tape)
        return x.grad

    def first(x):
        return tsum(exp(matmul(x, Tensor(weights))))

    def second(x):
        return tsum(x * x)

    combined = grad_of(lambda x: first(x) * alpha + second(x) * beta)
    separate = alpha * grad_of(first) + beta * grad_of(second)
    np.testing.assert_allclose(combined, separate, rtol=0, atol=1e-12)
