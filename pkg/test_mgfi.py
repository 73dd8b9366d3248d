"""
Tests for mask guided feature injection
"""
import numpy as np
import pytest

from abm_flow.core.exceptions import ContractViolation
from abm_flow.core.mgfi import (
    cosine_similarity_map,
    feature_trajectory,
    format_mask,
    mask_density,
    masked_blend,
    mgfi_apply,
    mgfi_trajectory,
    parse_mask,
    parse_tensor,
    read_mask,
    read_tensor,
    synthetic_edit_region,
    synthetic_feature_pair,
    threshold_mask,
    write_mask,
    write_tensor,
)
from abm_flow.core.models import BinaryMask, FeatureTensor, SimilarityMap

PAIRS = 1000


def _random_pair(rng):
    P = int(rng.integers(1, 65))
    C = int(rng.integers(1, 17))
    a = rng.standard_normal((P, C))
    b = rng.standard_normal((P, C))
    # Some rows share a direction so similarities reach the upper end
    shared = rng.random(P) < 0.3
    b[shared] = a[shared] * rng.uniform(0.1, 3.0, (int(shared.sum()), 1))
    return FeatureTensor(a), FeatureTensor(b)


# SIMILARITY =============================================================================

def test_similarity_identical_rows():
    a = FeatureTensor(np.array([[1.0, 2.0], [-3.0, 0.5]]))
    np.testing.assert_allclose(cosine_similarity_map(a, a).values, [1.0, 1.0], atol=1e-15)


def test_similarity_antiparallel_rows():
    a = FeatureTensor(np.array([[1.0, 2.0], [-3.0, 0.5]]))
    b = FeatureTensor(-a.data)
    np.testing.assert_allclose(cosine_similarity_map(a, b).values, [-1.0, -1.0], atol=1e-15)


def test_similarity_forty_five_degrees():
    s = cosine_similarity_map(FeatureTensor([[1.0, 0.0]]), FeatureTensor([[1.0, 1.0]]))
    assert s.values[0] == pytest.approx(0.7071067811865476, abs=1e-15)


def test_similarity_zero_norm_rows_are_zero():
    a = FeatureTensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
    b = FeatureTensor(np.array([[1.0, 1.0], [1e-13, 0.0]]))
    np.testing.assert_array_equal(cosine_similarity_map(a, b).values, [0.0, 0.0])


def test_similarity_shape_mismatch():
    with pytest.raises(ContractViolation):
        cosine_similarity_map(FeatureTensor(np.ones((2, 3))), FeatureTensor(np.ones((3, 3))))


@pytest.mark.parametrize("scale", [1e-3, 1e200, 1e300])
def test_similarity_extreme_magnitudes_stay_in_range(scale):
    a = FeatureTensor(np.array([[1.0, 1.0], [2.0, -1.0], [1.0, 0.0]]) * scale)
    b = FeatureTensor(np.array([[1.0, 1.0], [-2.0, 1.0], [1.0, 1.0]]) * scale)
    values = cosine_similarity_map(a, b).values
    assert np.all(np.isfinite(values))
    np.testing.assert_allclose(values, [1.0, -1.0, 0.7071067811865476], atol=1e-15)


def test_similarity_mixed_magnitude_rows():
    a = FeatureTensor(np.array([[1e200, 1e200], [1e-5, 2e-5]]))
    mask = threshold_mask(cosine_similarity_map(a, a), 0.2)
    assert mask.bits.tolist() == [1, 1]


# THRESHOLD ==============================================================================

def test_threshold_boundary_is_kept():
    mask = threshold_mask(SimilarityMap(np.array([0.2, 0.1999, 1.0, -1.0])), 0.2)
    np.testing.assert_array_equal(mask.bits, [1, 0, 1, 0])
    assert mask.tau == 0.2


@pytest.mark.parametrize("tau", [-1.0, 0.0, 0.2, 0.9, 1.0])
def test_threshold_all_ones_map(tau):
    mask = threshold_mask(SimilarityMap(np.ones(5)), tau)
    assert mask.bits.tolist() == [1] * 5


@pytest.mark.parametrize("tau", [-1.5, 1.01])
def test_threshold_rejects_tau_outside_range(tau):
    with pytest.raises(ContractViolation):
        threshold_mask(SimilarityMap(np.zeros(3)), tau)


# BLEND ==================================================================================

def test_masked_blend_all_ones_and_all_zeros():
    inv = FeatureTensor(np.arange(6.0).reshape(3, 2))
    smp = FeatureTensor(-np.arange(6.0).reshape(3, 2))
    ones = BinaryMask(np.ones(3, dtype=np.uint8))
    zeros = BinaryMask(np.zeros(3, dtype=np.uint8))
    np.testing.assert_array_equal(masked_blend(ones, inv, smp).data, inv.data)
    np.testing.assert_array_equal(masked_blend(zeros, inv, smp).data, smp.data)


def test_masked_blend_mixed_rows():
    inv = FeatureTensor([[1.0, 1.0], [1.0, 1.0]])
    smp = FeatureTensor([[5.0, 5.0], [5.0, 5.0]])
    mask = BinaryMask(np.array([1, 0], dtype=np.uint8))
    np.testing.assert_array_equal(masked_blend(mask, inv, smp).data, [[1.0, 1.0], [5.0, 5.0]])


def test_masked_blend_mask_length_mismatch():
    inv = FeatureTensor(np.ones((3, 2)))
    with pytest.raises(ContractViolation):
        masked_blend(BinaryMask(np.ones(2, dtype=np.uint8)), inv, inv)


# APPLY ==================================================================================

def test_mgfi_apply_identical_current_pair_keeps_inversion_features(rng):
    curr = FeatureTensor(rng.standard_normal((8, 4)))
    inv_next = FeatureTensor(rng.standard_normal((8, 4)))
    smp_next = FeatureTensor(rng.standard_normal((8, 4)))
    np.testing.assert_array_equal(mgfi_apply(curr, curr, inv_next, smp_next).data, inv_next.data)


def test_mgfi_apply_opposite_current_pair_keeps_sampling_features(rng):
    curr = FeatureTensor(rng.standard_normal((8, 4)) + 0.1)
    inv_next = FeatureTensor(rng.standard_normal((8, 4)))
    smp_next = FeatureTensor(rng.standard_normal((8, 4)))
    result = mgfi_apply(curr, FeatureTensor(-curr.data), inv_next, smp_next)
    np.testing.assert_array_equal(result.data, smp_next.data)


def test_mgfi_apply_mixed_case():
    inv_curr = FeatureTensor([[1.0, 0.0], [0.0, 1.0]])
    smp_curr = FeatureTensor([[2.0, 0.0], [0.0, -3.0]])
    inv_next = FeatureTensor([[1.0, 1.0], [1.0, 1.0]])
    smp_next = FeatureTensor([[5.0, 5.0], [5.0, 5.0]])
    result = mgfi_apply(inv_curr, smp_curr, inv_next, smp_next, 0.2)
    np.testing.assert_array_equal(result.data, [[1.0, 1.0], [5.0, 5.0]])


def test_mgfi_apply_shape_mismatch():
    a = FeatureTensor(np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        mgfi_apply(a, a, a, FeatureTensor(np.ones((2, 3))))


# PROPERTIES OVER SEEDED PAIRS ===========================================================

def test_similarity_range_property(rng):
    for _ in range(PAIRS):
        a, b = _random_pair(rng)
        values = cosine_similarity_map(a, b).values
        assert np.all(values >= -1.0) and np.all(values <= 1.0)


def test_selection_exactness_property(rng):
    for _ in range(PAIRS):
        inv, smp = _random_pair(rng)
        mask = threshold_mask(cosine_similarity_map(inv, smp), float(rng.uniform(-1.0, 1.0)))
        blended = masked_blend(mask, inv, smp).data
        for p in range(inv.positions):
            from_inv = np.array_equal(blended[p], inv.data[p])
            from_smp = np.array_equal(blended[p], smp.data[p])
            assert from_inv or from_smp
            assert from_inv if mask.bits[p] else from_smp


def test_threshold_monotonicity_property(rng):
    for _ in range(PAIRS):
        a, b = _random_pair(rng)
        s = cosine_similarity_map(a, b)
        tau_low, tau_high = np.sort(rng.uniform(-1.0, 1.0, 2))
        assert np.all(threshold_mask(s, tau_high).bits <= threshold_mask(s, tau_low).bits)
        # Boundary values count as kept
        assert threshold_mask(s, float(s.values[0])).bits[0] == 1


def test_scale_invariance_property(rng):
    for _ in range(PAIRS):
        a, b = _random_pair(rng)
        c = float(rng.uniform(1e-3, 1e3))
        scaled = FeatureTensor(c * a.data)
        np.testing.assert_allclose(cosine_similarity_map(scaled, b).values,
                                   cosine_similarity_map(a, b).values, atol=1e-12)


def test_idempotence_property(rng):
    for _ in range(PAIRS):
        inv_curr, smp_curr = _random_pair(rng)
        same = FeatureTensor(rng.standard_normal(inv_curr.shape))
        tau = float(rng.uniform(-1.0, 1.0))
        np.testing.assert_array_equal(mgfi_apply(inv_curr, smp_curr, same, same, tau).data, same.data)


# SYNTHETIC FEATURES =====================================================================

def test_synthetic_pair_is_seeded():
    a = synthetic_feature_pair(16, 4, 0.5, seed=3, edit_fraction=0.25)
    b = synthetic_feature_pair(16, 4, 0.5, seed=3, edit_fraction=0.25)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_synthetic_identical_pair_gives_all_ones_mask():
    inv, smp = synthetic_feature_pair(64, 16, 0.0, seed=0)
    mask = threshold_mask(cosine_similarity_map(inv, smp))
    assert mask_density(mask) == 1.0


def test_density_non_increasing_with_perturbation():
    densities = []
    for perturbation in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]:
        inv, smp = synthetic_feature_pair(64, 16, perturbation, seed=0, edit_fraction=0.25)
        densities.append(mask_density(threshold_mask(cosine_similarity_map(inv, smp), 0.2)))
    assert all(b <= a for a, b in zip(densities, densities[1:]))
    assert densities[0] >= 0.75


def test_density_non_increasing_in_tau():
    inv, smp = synthetic_feature_pair(64, 16, 0.5, seed=0, edit_fraction=0.25)
    s = cosine_similarity_map(inv, smp)
    densities = [threshold_mask(s, tau).density for tau in [0.0, 0.2, 0.9]]
    assert all(b <= a for a, b in zip(densities, densities[1:]))


def test_synthetic_pair_rejects_bad_arguments():
    with pytest.raises(ContractViolation):
        synthetic_feature_pair(0, 4)
    with pytest.raises(ContractViolation):
        synthetic_feature_pair(4, 4, perturbation=-1.0)
    with pytest.raises(ContractViolation):
        synthetic_feature_pair(4, 4, edit_fraction=1.5)


def test_synthetic_edit_region_marks_replaced_rows():
    inv, smp = synthetic_feature_pair(64, 16, 0.0, seed=2, edit_fraction=0.25)
    region = synthetic_edit_region(64, 16, 0.0, seed=2, edit_fraction=0.25)
    assert region.sum() == 16
    changed = np.any(inv.data != smp.data, axis=1)
    np.testing.assert_array_equal(changed, region)


def test_synthetic_edit_region_empty_without_edits():
    assert not synthetic_edit_region(8, 4, 0.5, seed=1).any()


def test_mgfi_trajectory_uses_previous_mask():
    pairs = feature_trajectory(32, 8, 4, 0.5, seed=2, edit_fraction=0.25)
    results = mgfi_trajectory(pairs, 0.2)
    assert len(results) == 3
    for i, (mask, blended) in enumerate(results):
        expected = mgfi_apply(pairs[i][0], pairs[i][1], pairs[i + 1][0], pairs[i + 1][1], 0.2)
        np.testing.assert_array_equal(blended.data, expected.data)
        assert mask.bits.shape == (32,)


# TEXT FORMAT ============================================================================

def test_tensor_file_round_trip(tmp_path, rng):
    tensor = FeatureTensor(rng.standard_normal((5, 3)))
    path = write_tensor(tensor, tmp_path / "tensors" / "t.txt")
    assert path.read_text(encoding="utf-8").splitlines()[0] == "5 3"
    np.testing.assert_array_equal(read_tensor(path).data, tensor.data)


def test_mask_file_round_trip(tmp_path):
    mask = BinaryMask(np.array([1, 0, 0, 1, 1], dtype=np.uint8))
    path = write_mask(mask, tmp_path / "m.txt")
    assert path.read_text(encoding="utf-8") == "10011\n"
    np.testing.assert_array_equal(read_mask(path).bits, mask.bits)
    assert format_mask(mask) == "10011\n"


def test_parse_tensor_rejects_header_mismatch():
    with pytest.raises(ContractViolation):
        parse_tensor("2 2\n1.0 2.0\n")


def test_parse_mask_rejects_other_characters():
    with pytest.raises(ContractViolation):
        parse_mask("1021\n")
