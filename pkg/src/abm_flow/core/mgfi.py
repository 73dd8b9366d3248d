"""
Mask Guided Feature Injection

Per-position cosine similarity between inversion-side and sampling-side
features, thresholded into a binary keep mask that blends the features of
the following timestep. Feature tensors at this scale come from a seeded
synthetic generator; nothing here touches a real transformer.
"""

from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
import structlog

from ..utils.helpers import atomic_write_text
from .exceptions import ContractViolation
from .models import BinaryMask, FeatureTensor, SimilarityMap

logger = structlog.get_logger(__name__)

DEFAULT_TAU = 0.2
# Rows with a smaller norm have no direction; their similarity is 0
ZERO_NORM = 1e-12


def _check_same_shape(*tensors: FeatureTensor):
    shapes = {tensor.shape for tensor in tensors}
    if len(shapes) != 1:
        raise ContractViolation(f"feature tensors differ in shape: {sorted(shapes)}")


def _unit_rows(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(rows scaled to unit length, row norms); rows are pre-scaled by max |x| so norms never overflow"""
    scale = np.max(np.abs(x), axis=1)
    scaled = x / np.where(scale > 0, scale, 1.0)[:, None]
    norm = np.linalg.norm(scaled, axis=1)
    unit = scaled / np.where(norm > 0, norm, 1.0)[:, None]
    with np.errstate(over="ignore"):
        return unit, scale * norm


def cosine_similarity_map(a: FeatureTensor, b: FeatureTensor) -> SimilarityMap:
    """dot(a_p, b_p) / (|a_p| |b_p|) per position, 0 where either norm vanishes"""
    _check_same_shape(a, b)
    unit_a, norm_a = _unit_rows(a.data)
    unit_b, norm_b = _unit_rows(b.data)
    degenerate = (norm_a < ZERO_NORM) | (norm_b < ZERO_NORM)
    values = np.where(degenerate, 0.0, np.einsum("pc,pc->p", unit_a, unit_b))
    return SimilarityMap(values=np.clip(values, -1.0, 1.0))


def threshold_mask(s: SimilarityMap, tau: float = DEFAULT_TAU) -> BinaryMask:
    """1 where S >= tau, 0 elsewhere"""
    if not -1.0 <= tau <= 1.0:
        raise ContractViolation(f"tau must lie in [-1, 1], got {tau}")
    return BinaryMask(bits=(s.values >= tau).astype(np.uint8), tau=tau)


def masked_blend(mask: BinaryMask, inv: FeatureTensor, smp: FeatureTensor) -> FeatureTensor:
    """M * inv + (1 - M) * smp with M broadcast across channels"""
    _check_same_shape(inv, smp)
    if mask.bits.shape != (inv.positions,):
        raise ContractViolation(f"mask of length {mask.bits.size} does not match {inv.positions} positions")
    keep = mask.bits.astype(bool)[:, None]
    return FeatureTensor(np.where(keep, inv.data, smp.data))


def mgfi_apply(inv_curr: FeatureTensor, smp_curr: FeatureTensor, inv_next: FeatureTensor,
               smp_next: FeatureTensor, tau: float = DEFAULT_TAU) -> FeatureTensor:
    """Mask from the t_i pair blends the t_{i-1} pair"""
    _check_same_shape(inv_curr, smp_curr, inv_next, smp_next)
    mask = threshold_mask(cosine_similarity_map(inv_curr, smp_curr), tau)
    return masked_blend(mask, inv_next, smp_next)


def mask_density(mask: BinaryMask) -> float:
    return mask.density


# SYNTHETIC FEATURES ====================================================================

def _synthetic_draw(positions: int, channels: int, perturbation: float, seed: int,
                    edit_fraction: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if positions < 1 or channels < 1:
        raise ContractViolation("positions and channels must be positive")
    if perturbation < 0 or not 0.0 <= edit_fraction <= 1.0:
        raise ContractViolation("perturbation >= 0 and edit_fraction in [0, 1] required")
    rng = np.random.default_rng(seed)
    inv = rng.standard_normal((positions, channels))
    smp = inv + perturbation * rng.standard_normal((positions, channels))
    edited = rng.permutation(positions)[: int(round(edit_fraction * positions))]
    smp[edited] = rng.standard_normal((edited.size, channels))
    return inv, smp, edited


def synthetic_feature_pair(positions: int, channels: int, perturbation: float = 0.0,
                           seed: int = 0, edit_fraction: float = 0.0
                           ) -> Tuple[FeatureTensor, FeatureTensor]:
    """Seeded (inversion, sampling) pair.

    smp = inv + perturbation * noise on every row; the first edit_fraction
    of a seeded permutation of rows is replaced by independent draws.
    """
    inv, smp, _ = _synthetic_draw(positions, channels, perturbation, seed, edit_fraction)
    return FeatureTensor(inv), FeatureTensor(smp)


def synthetic_edit_region(positions: int, channels: int, perturbation: float = 0.0,
                          seed: int = 0, edit_fraction: float = 0.0) -> np.ndarray:
    """Boolean length-P array, True on the rows synthetic_feature_pair replaced"""
    _, _, edited = _synthetic_draw(positions, channels, perturbation, seed, edit_fraction)
    region = np.zeros(positions, dtype=bool)
    region[edited] = True
    return region


def feature_trajectory(positions: int, channels: int, steps: int, perturbation: float = 0.0,
                       seed: int = 0, edit_fraction: float = 0.0, drift: float = 0.1
                       ) -> List[Tuple[FeatureTensor, FeatureTensor]]:
    """One (inv, smp) pair per timestep, drifting smoothly along the step index"""
    if steps < 1:
        raise ContractViolation("steps must be positive")
    inv0, smp0 = synthetic_feature_pair(positions, channels, perturbation, seed, edit_fraction)
    rng = np.random.default_rng(seed + 1)
    direction = rng.standard_normal((positions, channels))
    return [
        (FeatureTensor(inv0.data + k * drift * direction), FeatureTensor(smp0.data + k * drift * direction))
        for k in range(steps)
    ]


def mgfi_trajectory(pairs: Sequence[Tuple[FeatureTensor, FeatureTensor]],
                    tau: float = DEFAULT_TAU) -> List[Tuple[BinaryMask, FeatureTensor]]:
    """Masks from step i blend step i + 1 along a whole trajectory"""
    results = []
    for (inv_curr, smp_curr), (inv_next, smp_next) in zip(pairs, pairs[1:]):
        _check_same_shape(inv_curr, smp_curr, inv_next, smp_next)
        mask = threshold_mask(cosine_similarity_map(inv_curr, smp_curr), tau)
        results.append((mask, masked_blend(mask, inv_next, smp_next)))
        logger.debug("mgfi_step", density=mask.density, tau=tau)
    return results


# TEXT FORMAT ===========================================================================

def format_tensor(tensor: FeatureTensor) -> str:
    """'P C' header then P rows of C decimals"""
    lines = [f"{tensor.positions} {tensor.channels}"]
    lines.extend(" ".join(repr(float(x)) for x in row) for row in tensor.data)
    return "\n".join(lines) + "\n"


def parse_tensor(text: str) -> FeatureTensor:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ContractViolation("empty tensor document")
    try:
        positions, channels = (int(x) for x in lines[0].split())
        rows = [[float(x) for x in line.split()] for line in lines[1:]]
    except ValueError as e:
        raise ContractViolation(f"malformed tensor document: {e}") from e
    data = np.array(rows, dtype=float)
    if data.shape != (positions, channels):
        raise ContractViolation(f"tensor header says {positions} x {channels}, body is {data.shape}")
    return FeatureTensor(data)


def format_mask(mask: BinaryMask) -> str:
    return "".join(str(int(bit)) for bit in mask.bits) + "\n"


def parse_mask(text: str, tau: float = DEFAULT_TAU) -> BinaryMask:
    line = text.strip()
    if not line or set(line) - {"0", "1"}:
        raise ContractViolation("mask document must be one line of 0/1 characters")
    return BinaryMask(bits=np.array([int(c) for c in line], dtype=np.uint8), tau=tau)


PathLike = Union[str, Path]


def write_tensor(tensor: FeatureTensor, path: PathLike) -> Path:
    return atomic_write_text(path, format_tensor(tensor))


def read_tensor(path: PathLike) -> FeatureTensor:
    return parse_tensor(Path(path).read_text(encoding="utf-8"))


def write_mask(mask: BinaryMask, path: PathLike) -> Path:
    return atomic_write_text(path, format_mask(mask))


def read_mask(path: PathLike, tau: float = DEFAULT_TAU) -> BinaryMask:
    return parse_mask(Path(path).read_text(encoding="utf-8"), tau)
