"""
Velocity Fields

Catalog of velocity fields v(Z, t) on t in [0, 1] with exact solutions or a
fourth-order reference oracle. Fields are immutable; evaluation counting is
left to the solvers.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Union

import numpy as np
import structlog

from .exceptions import ContractViolation, DomainError, UnsupportedFieldError
from .models import TIME_TOL

logger = structlog.get_logger(__name__)

EvalFn = Callable[[np.ndarray, float], np.ndarray]
ExactFn = Callable[[np.ndarray, float, float], np.ndarray]


@dataclass(frozen=True)
class RectifiedPair:
    """Data endpoint z0 and noise endpoint z1 of a straight path"""
    z0: np.ndarray
    z1: np.ndarray

    def __post_init__(self):
        z0 = _as_state(self.z0)
        z1 = _as_state(self.z1)
        if z0.shape != z1.shape:
            raise ContractViolation(f"RectifiedPair endpoints differ in length: {z0.size} vs {z1.size}")
        object.__setattr__(self, "z0", z0)
        object.__setattr__(self, "z1", z1)

    @property
    def velocity(self) -> np.ndarray:
        return self.z1 - self.z0


@dataclass(frozen=True)
class VelocityField:
    """Pure evaluator v(Z, t) with known dimension"""
    name: str
    dim: int
    eval: EvalFn
    lipschitz_bound: Optional[float] = None
    exact: Optional[ExactFn] = None
    pair: Optional[RectifiedPair] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ContractViolation(f"field dimension must be positive, got {self.dim}")

    @property
    def has_exact(self) -> bool:
        return self.exact is not None


def _as_state(z) -> np.ndarray:
    state = np.array(z, dtype=float).reshape(-1)
    state.setflags(write=False)
    return state


def check_time(t: float) -> float:
    """Validate t against [0, 1], snapping values within TIME_TOL of an end"""
    if t < -TIME_TOL or t > 1.0 + TIME_TOL:
        raise DomainError(f"time {t!r} outside [0, 1]")
    return min(max(float(t), 0.0), 1.0)


def evaluate(field: VelocityField, z, t: float) -> np.ndarray:
    """Return v(z, t); raises on dimension mismatch or t outside [0, 1]"""
    state = np.asarray(z, dtype=float)
    if state.shape != (field.dim,):
        raise ContractViolation(
            f"state of shape {state.shape} does not match field '{field.name}' of dim {field.dim}"
        )
    t = check_time(t)
    velocity = np.asarray(field.eval(state.copy(), t), dtype=float)
    if velocity.shape != (field.dim,):
        raise ContractViolation(
            f"field '{field.name}' returned shape {velocity.shape}, expected ({field.dim},)"
        )
    return velocity


def reference_solve(
    field: VelocityField,
    z_start,
    t_start: float,
    t_end: float,
    oracle_steps: int = 100_000,
) -> np.ndarray:
    """Classical fourth-order Runge-Kutta on a uniform grid of oracle_steps"""
    if oracle_steps < 1:
        raise ContractViolation(f"oracle_steps must be positive, got {oracle_steps}")
    t_start, t_end = check_time(t_start), check_time(t_end)
    z = np.array(z_start, dtype=float)
    evaluate(field, z, t_start)
    if t_start == t_end:
        return z

    f = field.eval
    h = (t_end - t_start) / oracle_steps
    for k in range(oracle_steps):
        t = t_start + k * h
        k1 = f(z, t)
        k2 = f(z + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(z + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(z + h * k3, t + h)
        z = z + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return z


def ground_truth(field: VelocityField, z_start, t_start: float, t_end: float,
                 oracle_steps: int = 100_000) -> np.ndarray:
    """Exact solution when the field has one, otherwise the RK4 oracle"""
    if field.has_exact:
        return np.asarray(field.exact(np.array(z_start, dtype=float), t_start, t_end), dtype=float)
    logger.debug("oracle_solve", field=field.name, oracle_steps=oracle_steps)
    return reference_solve(field, z_start, t_start, t_end, oracle_steps)


def exact_solution(field: VelocityField, z_start, t_start: float, t_end: float) -> np.ndarray:
    """Closed-form solution; raises UnsupportedFieldError when there is none"""
    if not field.has_exact:
        raise UnsupportedFieldError(f"field '{field.name}' has no closed-form solution")
    return np.asarray(field.exact(np.array(z_start, dtype=float), t_start, t_end), dtype=float)


# CATALOG ===============================================================================

def constant_field(c) -> VelocityField:
    c = _as_state(c)

    return VelocityField(
        name="constant",
        dim=c.size,
        eval=lambda z, t: c.copy(),
        lipschitz_bound=0.0,
        exact=lambda z, t0, t1: z + (t1 - t0) * c,
    )


def zero_field(dim: int = 1) -> VelocityField:
    field = constant_field(np.zeros(dim))
    return VelocityField(name="zero", dim=field.dim, eval=field.eval,
                         lipschitz_bound=0.0, exact=field.exact)


def decay_field(lambda_: float = 1.0, dim: int = 1) -> VelocityField:
    """v = -lambda Z"""
    return VelocityField(
        name="decay",
        dim=dim,
        eval=lambda z, t: -lambda_ * z,
        lipschitz_bound=abs(lambda_),
        exact=lambda z, t0, t1: z * np.exp(-lambda_ * (t1 - t0)),
    )


def rotation_field(omega: float = np.pi / 2) -> VelocityField:
    """Planar rotation v = omega (-z2, z1); over [0, 1] the default turns a quarter circle"""

    def exact(z, t0, t1):
        angle = omega * (t1 - t0)
        c, s = np.cos(angle), np.sin(angle)
        return np.array([c * z[0] - s * z[1], s * z[0] + c * z[1]])

    return VelocityField(
        name="rotation",
        dim=2,
        eval=lambda z, t: omega * np.array([-z[1], z[0]]),
        lipschitz_bound=abs(omega),
        exact=exact,
    )


def time_varying_field(dim: int = 1) -> VelocityField:
    """v = sin(2 pi t) Z"""
    two_pi = 2 * np.pi

    def exact(z, t0, t1):
        return z * np.exp((np.cos(two_pi * t0) - np.cos(two_pi * t1)) / two_pi)

    return VelocityField(
        name="time_varying",
        dim=dim,
        eval=lambda z, t: np.sin(two_pi * t) * z,
        lipschitz_bound=1.0,
        exact=exact,
    )


def surrogate_field(A: Union[float, np.ndarray] = 0.5, b: Union[float, np.ndarray] = 0.3,
                    dim: int = 4) -> VelocityField:
    """v = A tanh(Z) + b cos(2 pi t); no closed form, graded against the oracle"""
    A = np.array(A, dtype=float)
    if A.ndim == 0:
        A = float(A) * np.eye(dim)
    b = np.array(b, dtype=float)
    if b.ndim == 0:
        b = float(b) * np.ones(dim)
    if A.shape != (dim, dim) or b.shape != (dim,):
        raise ContractViolation(f"surrogate needs A of shape ({dim}, {dim}) and b of length {dim}")
    A.setflags(write=False)
    b.setflags(write=False)
    two_pi = 2 * np.pi

    return VelocityField(
        name="surrogate",
        dim=dim,
        eval=lambda z, t: A @ np.tanh(z) + b * np.cos(two_pi * t),
        lipschitz_bound=float(np.linalg.norm(A, 2)),
    )


def rectified_field(pair: RectifiedPair) -> VelocityField:
    """Straight-path field v = z1 - z0 induced by a RectifiedPair"""
    field = constant_field(pair.velocity)
    return VelocityField(name="rectified", dim=field.dim, eval=field.eval,
                         lipschitz_bound=0.0, exact=field.exact, pair=pair)


def random_pair(dim: int, seed: int = 0) -> RectifiedPair:
    """Seeded (data, noise) pair"""
    rng = np.random.default_rng(seed)
    return RectifiedPair(z0=rng.standard_normal(dim), z1=rng.standard_normal(dim))


def pushforward_field(field: VelocityField, M, b) -> VelocityField:
    """Affine push-forward v'(z, t) = M v(M^-1 (z - b), t)"""
    M = np.array(M, dtype=float)
    b = np.array(b, dtype=float)
    if M.shape != (field.dim, field.dim) or b.shape != (field.dim,):
        raise ContractViolation("affine map does not match the field dimension")
    M_inv = np.linalg.inv(M)

    def pulled(z):
        return M_inv @ (z - b)

    exact = None
    if field.has_exact:
        def exact(z, t0, t1):
            return M @ field.exact(pulled(z), t0, t1) + b

    return VelocityField(
        name=f"{field.name}_affine",
        dim=field.dim,
        eval=lambda z, t: M @ field.eval(pulled(z), t),
        exact=exact,
    )


FIELD_NAMES = ("constant", "zero", "decay", "rotation", "time_varying", "surrogate", "rectified")


def get_field(name: str, **params) -> VelocityField:
    """Build a catalog field by name"""
    dim = params.get("dim")
    if name == "constant":
        value = params.get("c", params.get("value", 1.0))
        if np.ndim(value) == 0:
            value = np.full(dim or 1, float(value))
        return constant_field(value)
    if name == "zero":
        return zero_field(dim or 1)
    if name == "decay":
        return decay_field(params.get("lambda_", 1.0), dim or 1)
    if name == "rotation":
        return rotation_field(params.get("omega", np.pi / 2))
    if name == "time_varying":
        return time_varying_field(dim or 1)
    if name == "surrogate":
        return surrogate_field(params.get("A", 0.5), params.get("b", 0.3), dim or 4)
    if name == "rectified":
        if "z0" in params and "z1" in params:
            pair = RectifiedPair(params["z0"], params["z1"])
        else:
            pair = random_pair(dim or 4, params.get("seed", 0))
        return rectified_field(pair)
    raise ContractViolation(f"unknown field '{name}'; known fields: {', '.join(FIELD_NAMES)}")


def field_catalog(**params) -> Dict[str, VelocityField]:
    """Every catalog field built with shared parameters"""
    return {name: get_field(name, **params) for name in FIELD_NAMES}
