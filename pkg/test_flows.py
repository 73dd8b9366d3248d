"""
Tests for the velocity field catalog and the reference oracle
"""
import numpy as np
import pytest

from abm_flow.core.exceptions import ContractViolation, DomainError, UnsupportedFieldError
from abm_flow.core.flows import (
    FIELD_NAMES,
    RectifiedPair,
    constant_field,
    decay_field,
    evaluate,
    exact_solution,
    field_catalog,
    get_field,
    ground_truth,
    pushforward_field,
    rectified_field,
    reference_solve,
    rotation_field,
    surrogate_field,
    time_varying_field,
    zero_field,
)


def test_evaluate_constant_field():
    assert evaluate(constant_field([2.0]), [1.0], 0.3) == pytest.approx([2.0])


def test_evaluate_decay_flips_sign():
    np.testing.assert_array_equal(evaluate(decay_field(dim=2), [1.0, -2.0], 0.5), [-1.0, 2.0])


def test_evaluate_rectified_field_is_endpoint_difference():
    field = rectified_field(RectifiedPair(z0=[0.0, 0.0], z1=[1.0, 3.0]))
    for z, t in [([5.0, -1.0], 0.0), ([0.2, 0.4], 0.7), ([0.0, 0.0], 1.0)]:
        np.testing.assert_array_equal(evaluate(field, z, t), [1.0, 3.0])


def test_evaluate_rejects_dimension_mismatch():
    with pytest.raises(ContractViolation):
        evaluate(decay_field(dim=2), [1.0, 2.0, 3.0], 0.5)


@pytest.mark.parametrize("t", [-0.01, 1.01, 2.0])
def test_evaluate_rejects_time_outside_unit_interval(t):
    with pytest.raises(DomainError):
        evaluate(decay_field(), [1.0], t)


def test_evaluate_snaps_times_within_tolerance():
    field = time_varying_field()
    np.testing.assert_array_equal(evaluate(field, [1.0], 1.0 + 1e-13), evaluate(field, [1.0], 1.0))
    np.testing.assert_array_equal(evaluate(field, [1.0], -1e-13), evaluate(field, [1.0], 0.0))


def test_evaluate_does_not_mutate_input():
    z = np.array([1.0, 2.0])
    evaluate(decay_field(dim=2), z, 0.1)
    np.testing.assert_array_equal(z, [1.0, 2.0])


@pytest.mark.parametrize("name", FIELD_NAMES)
def test_evaluate_is_bit_identical_across_calls(name):
    field = get_field(name)
    z = np.linspace(0.3, 1.1, field.dim)
    first = evaluate(field, z, 0.37)
    for _ in range(5):
        np.testing.assert_array_equal(evaluate(field, z, 0.37), first)


@pytest.mark.parametrize("name", FIELD_NAMES)
def test_exact_identity_at_equal_times(name):
    field = get_field(name)
    if not field.has_exact:
        pytest.skip("no closed form")
    z = np.linspace(-1.0, 2.0, field.dim)
    np.testing.assert_array_equal(field.exact(z, 0.4, 0.4), z)


def test_reference_solve_decay_matches_closed_form():
    assert reference_solve(decay_field(), [1.0], 0.0, 1.0, 100_000) == pytest.approx([np.exp(-1.0)], rel=1e-10)


def test_reference_solve_constant_field_is_exact():
    assert reference_solve(constant_field([2.0]), [1.0], 0.0, 1.0, 7) == pytest.approx([3.0], abs=1e-14)


def test_reference_solve_rotation_quarter_turn():
    z = reference_solve(rotation_field(), [1.0, 0.0], 0.0, 1.0, 100_000)
    np.testing.assert_allclose(z, [np.cos(np.pi / 2), np.sin(np.pi / 2)], atol=1e-10)


@pytest.mark.parametrize("name", ["constant", "decay", "rotation", "time_varying", "rectified"])
def test_reference_solve_agrees_with_exact(name):
    field = get_field(name, dim=None if name == "rotation" else 3)
    z = np.linspace(0.5, 1.5, field.dim)
    oracle = reference_solve(field, z, 0.0, 1.0, 100_000)
    exact = exact_solution(field, z, 0.0, 1.0)
    assert np.linalg.norm(oracle - exact) <= 1e-10 * max(np.linalg.norm(exact), 1.0)


def test_reference_solve_runs_backwards():
    z1 = reference_solve(decay_field(), [1.0], 0.0, 1.0, 10_000)
    z0 = reference_solve(decay_field(), z1, 1.0, 0.0, 10_000)
    assert z0 == pytest.approx([1.0], rel=1e-11)


def test_reference_solve_rejects_nonpositive_steps():
    with pytest.raises(ContractViolation):
        reference_solve(decay_field(), [1.0], 0.0, 1.0, 0)


def test_ground_truth_uses_oracle_without_closed_form():
    field = surrogate_field(dim=2)
    z = np.array([0.5, -0.5])
    np.testing.assert_array_equal(ground_truth(field, z, 0.0, 1.0, 2000),
                                  reference_solve(field, z, 0.0, 1.0, 2000))


def test_exact_solution_unavailable_for_surrogate():
    with pytest.raises(UnsupportedFieldError):
        exact_solution(surrogate_field(), np.ones(4), 0.0, 1.0)


def test_surrogate_accepts_matrix_coefficients():
    A = np.array([[0.5, 0.1], [0.0, 0.3]])
    field = surrogate_field(A=A, b=[0.1, 0.2], dim=2)
    z = np.array([0.2, -0.4])
    expected = A @ np.tanh(z) + np.array([0.1, 0.2]) * np.cos(2 * np.pi * 0.25)
    np.testing.assert_allclose(evaluate(field, z, 0.25), expected, atol=1e-15)
    assert field.lipschitz_bound == pytest.approx(np.linalg.norm(A, 2))


def test_surrogate_rejects_shape_mismatch():
    with pytest.raises(ContractViolation):
        surrogate_field(A=np.eye(3), dim=2)


def test_rectified_pair_length_mismatch():
    with pytest.raises(ContractViolation):
        RectifiedPair(z0=[0.0], z1=[1.0, 2.0])


def test_zero_field_keeps_state():
    assert exact_solution(zero_field(3), [1.0, 2.0, 3.0], 0.0, 1.0) == pytest.approx([1.0, 2.0, 3.0])


def test_get_field_rejects_unknown_name():
    with pytest.raises(ContractViolation, match="known fields"):
        get_field("vortex")


def test_get_field_rectified_from_seed_is_deterministic():
    a = get_field("rectified", dim=4, seed=7)
    b = get_field("rectified", dim=4, seed=7)
    np.testing.assert_array_equal(a.pair.z0, b.pair.z0)
    np.testing.assert_array_equal(a.pair.z1, b.pair.z1)


def test_field_catalog_builds_every_name():
    catalog = field_catalog(dim=2)
    assert sorted(catalog) == sorted(FIELD_NAMES)
    assert catalog["decay"].dim == 2
    assert catalog["rotation"].dim == 2


def test_pushforward_transports_exact_solution():
    M = np.array([[2.0, 1.0], [0.0, 1.0]])
    b = np.array([0.5, -1.0])
    field = rotation_field()
    pushed = pushforward_field(field, M, b)
    z = np.array([1.0, 0.5])
    np.testing.assert_allclose(pushed.exact(M @ z + b, 0.0, 1.0),
                               M @ field.exact(z, 0.0, 1.0) + b, atol=1e-12)


def test_pushforward_rejects_wrong_map_shape():
    with pytest.raises(ContractViolation):
        pushforward_field(decay_field(dim=2), np.eye(3), np.zeros(3))
