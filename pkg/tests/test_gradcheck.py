import pytest

from pydefgen.gradcheck import (
    DEFAULT_TOLERANCE,
    OP_TOLERANCE,
    CheckResult,
    full_loss_check,
    op_checks,
    op_names,
    run_gradcheck,
)


def test_every_op_has_a_check():
    assert set(op_names()) <= set(op_checks())


def test_check_result_threshold():
    assert CheckResult("add", 1e-5, 1e-4).passed
    assert CheckResult("add", 1e-4, 1e-4).passed
    assert not CheckResult("add", 2e-4, 1e-4).passed


def test_all_checks_pass_at_default_tolerance():
    results = run_gradcheck(num_samples=40)

    assert [r.name for r in results] == list(op_checks()) + ["full_loss"]
    failed = [(r.name, r.error) for r in results if not r.passed]
    assert failed == []
    assert {r.tolerance for r in results[:-1]} == {OP_TOLERANCE}
    assert results[-1].tolerance == DEFAULT_TOLERANCE


def test_explicit_tolerance_applies_to_every_check():
    results = run_gradcheck(tolerance=1e-3, num_samples=20)

    assert {r.tolerance for r in results} == {1e-3}


def test_full_loss_check_is_deterministic():
    first = full_loss_check(seed=3, num_samples=20)
    assert full_loss_check(seed=3, num_samples=20) == first


@pytest.mark.parametrize("op", ["matmul", "softmax_rows", "layer_norm", "neg"])
def test_corrupted_gradient_is_caught(op):
    results = {r.name: r for r in run_gradcheck(corrupt_op=op, num_samples=40)}

    assert not results[op].passed
    assert results[op].error > 0.1
    assert results["add"].passed
    assert results["exp"].passed


def test_fault_is_removed_after_the_run():
    run_gradcheck(corrupt_op="gelu", num_samples=20)

    assert all(r.passed for r in run_gradcheck(num_samples=20))
