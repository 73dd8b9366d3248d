"""
Fixed-Grid Solvers

Euler and midpoint baselines, RK2 initialization, the AB2 predictor, the AM2
corrector and the two-step ABM driver. Every velocity evaluation goes
through a per-run FieldEvaluator so SolverRun.nfe is exact.

Direction is carried by the sign of h: inversion integrates 0 -> 1 with
h > 0, reconstruction integrates 1 -> 0 with h < 0 along the same field.
"""

from typing import Callable, Optional, Tuple, Union

import numpy as np
import structlog

from .exceptions import ContractViolation, SolverStateError, UnsupportedFieldError
from .flows import VelocityField, check_time, evaluate
from .models import (
    AB2Mode,
    HistoryPair,
    PCMode,
    SolverKind,
    SolverRun,
    StepRecord,
    TimeGrid,
)

logger = structlog.get_logger(__name__)

# Relative difference above which consecutive steps count as non-uniform
UNIFORM_RTOL = 1e-12


class FieldEvaluator:
    """Counts evaluate() calls for one run"""

    def __init__(self, field: VelocityField):
        self.field = field
        self.nfe = 0

    @property
    def dim(self) -> int:
        return self.field.dim

    @property
    def name(self) -> str:
        return self.field.name

    def __call__(self, z: np.ndarray, t: float) -> np.ndarray:
        self.nfe += 1
        return evaluate(self.field, z, t)


FieldLike = Union[VelocityField, FieldEvaluator]


def _evaluator(field: FieldLike) -> FieldEvaluator:
    return field if isinstance(field, FieldEvaluator) else FieldEvaluator(field)


def _state(z) -> np.ndarray:
    return np.array(z, dtype=float)


def _target_time(t: float, h: float) -> float:
    check_time(t)
    return check_time(t + h)


def uniform_grid(t_start: float, t_end: float, steps: int) -> TimeGrid:
    """Uniform grid with exact endpoints; ascending for inversion"""
    if steps < 1:
        raise ContractViolation(f"steps must be positive, got {steps}")
    times = np.linspace(t_start, t_end, steps + 1)
    times[0], times[-1] = t_start, t_end
    return TimeGrid(times)


# ONE-STEP BASELINES ====================================================================

def euler_step(field: FieldLike, z, t: float, h: float) -> np.ndarray:
    """z + h v(z, t); one evaluation"""
    f = _evaluator(field)
    _target_time(t, h)
    z = _state(z)
    return z + h * f(z, t)


def midpoint_step(field: FieldLike, z, t: float, h: float) -> np.ndarray:
    """Classical midpoint rule; two evaluations"""
    f = _evaluator(field)
    _target_time(t, h)
    z = _state(z)
    k1 = f(z, t)
    return z + h * f(z + 0.5 * h * k1, t + 0.5 * h)


# ABM BUILDING BLOCKS ===================================================================

def rk2_init(field: FieldLike, z, t: float, h: float,
             mode: PCMode = PCMode.PECE) -> Tuple[np.ndarray, HistoryPair]:
    """Heun step that seeds the two-step history.

    PECE re-evaluates at the new state (3 evaluations) so history holds
    velocities at accepted states; PEC keeps k2 from the Euler-predicted
    point (2 evaluations), matching how PEC stores predicted-point values.
    """
    f = _evaluator(field)
    t_next = _target_time(t, h)
    z = _state(z)
    k1 = f(z, t)
    k2 = f(z + h * k1, t_next)
    z_next = z + 0.5 * h * (k1 + k2)
    if mode is PCMode.PECE:
        v_next = f(z_next, t_next)
    else:
        v_next = k2
    return z_next, HistoryPair(prev=(t, k1), curr=(t_next, v_next))


def ab2_predict(z, history: Optional[HistoryPair], h: float,
                mode: AB2Mode = AB2Mode.UNIFORM) -> np.ndarray:
    """Two-step Adams-Bashforth extrapolation; no evaluations"""
    if history is None or history.prev is None or history.curr is None:
        raise SolverStateError("AB2 predictor needs two history entries; run rk2_init first")
    z = _state(z)
    v_prev, v_curr = history.prev[1], history.curr[1]
    if mode is AB2Mode.UNIFORM:
        return z + (h / 2) * (3 * v_curr - v_prev)
    h_prev = history.h_prev
    if h_prev == 0:
        raise SolverStateError("history entries share a time; previous step size is zero")
    ratio = h / (2 * h_prev)
    return z + h * ((1 + ratio) * v_curr - ratio * v_prev)


def am2_correct(field: FieldLike, z, z_pred, t_next: float, v_curr,
                h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Trapezoidal Adams-Moulton correction applied once; one evaluation"""
    f = _evaluator(field)
    v_pred = f(_state(z_pred), t_next)
    return _state(z) + (h / 2) * (v_pred + v_curr), v_pred


def coefficient_mode(h: float, history: HistoryPair) -> AB2Mode:
    """Uniform coefficients unless consecutive steps differ beyond UNIFORM_RTOL"""
    if abs(h - history.h_prev) > UNIFORM_RTOL * abs(h):
        return AB2Mode.VARIABLE
    return AB2Mode.UNIFORM


def predict_correct(field: FieldLike, z, t: float, h: float,
                    history: HistoryPair) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One P + EC pass; returns (z_pred, z_corr, v at z_pred)"""
    t_next = _target_time(t, h)
    z_pred = ab2_predict(z, history, h, coefficient_mode(h, history))
    z_corr, v_pred = am2_correct(field, z, z_pred, t_next, history.curr[1], h)
    return z_pred, z_corr, v_pred


def advance_history(field: FieldLike, history: HistoryPair, t_next: float, z_corr: np.ndarray,
                    v_pred: np.ndarray, mode: PCMode) -> HistoryPair:
    """PECE stores v at the corrected state (one evaluation), PEC reuses v_pred"""
    if mode is PCMode.PECE:
        return history.push(t_next, _evaluator(field)(z_corr, t_next))
    return history.push(t_next, v_pred)


def discrepancy(z_pred: np.ndarray, z_corr: np.ndarray) -> float:
    return float(np.linalg.norm(z_pred - z_corr))


# DRIVERS ===============================================================================

def _check_start(f: FieldEvaluator, z_start) -> np.ndarray:
    z = _state(z_start)
    if z.shape != (f.dim,):
        raise ContractViolation(f"initial state of shape {z.shape} does not match dim {f.dim}")
    return z


def fixed_step_solve(field: VelocityField, z_start, grid: TimeGrid,
                     step: Callable[[FieldLike, np.ndarray, float, float], np.ndarray]) -> SolverRun:
    """Drive a one-step rule over every interval of the grid"""
    f = FieldEvaluator(field)
    z = _check_start(f, z_start)
    run = SolverRun(trajectory=[(grid.t_start, z)])
    times = grid.times
    for i in range(grid.steps):
        t, t_next = float(times[i]), float(times[i + 1])
        h = t_next - t
        z = step(f, z, t, h)
        run.trajectory.append((t_next, z))
        run.per_step.append(StepRecord(t=t_next, h=h))
    run.nfe = f.nfe
    return run


def abm_solve(field: VelocityField, z_start, grid: TimeGrid,
              mode: PCMode = PCMode.PECE) -> SolverRun:
    """Second-order ABM: RK2 on the first interval, then predict/correct.

    NFE is 2N + 1 in PECE mode and N + 1 in PEC mode for N intervals.
    """
    if grid.steps < 2:
        raise ContractViolation(f"ABM needs at least 2 intervals, grid has {grid.steps}")
    f = FieldEvaluator(field)
    z = _check_start(f, z_start)
    run = SolverRun(trajectory=[(grid.t_start, z)])
    times = grid.times

    t0, t1 = float(times[0]), float(times[1])
    z, history = rk2_init(f, z, t0, t1 - t0, mode)
    run.trajectory.append((t1, z))
    run.per_step.append(StepRecord(t=t1, h=t1 - t0))

    for i in range(1, grid.steps):
        t, t_next = float(times[i]), float(times[i + 1])
        h = t_next - t
        z_pred, z_corr, v_pred = predict_correct(f, z, t, h, history)
        history = advance_history(f, history, t_next, z_corr, v_pred, mode)
        error = discrepancy(z_pred, z_corr)
        logger.debug("abm_step", t=t_next, h=h, error=error, nfe=f.nfe)
        z = z_corr
        run.trajectory.append((t_next, z))
        run.per_step.append(StepRecord(t=t_next, h=h, predictor_state=z_pred, error_estimate=error))

    run.nfe = f.nfe
    return run


def solve(field: VelocityField, z_start, grid: TimeGrid,
          solver: SolverKind = SolverKind.ABM, mode: PCMode = PCMode.PECE) -> SolverRun:
    """Fixed-grid dispatcher used by the harness"""
    if solver is SolverKind.EULER:
        return fixed_step_solve(field, z_start, grid, euler_step)
    if solver is SolverKind.MIDPOINT:
        return fixed_step_solve(field, z_start, grid, midpoint_step)
    if solver is SolverKind.ABM:
        return abm_solve(field, z_start, grid, mode)
    raise ContractViolation(f"solver '{solver.value}' does not run on a fixed grid")


def nfe_for_steps(solver: SolverKind, steps: int, mode: PCMode = PCMode.PECE) -> int:
    """Evaluations a fixed-grid run over `steps` intervals costs"""
    if solver is SolverKind.EULER:
        return steps
    if solver is SolverKind.MIDPOINT:
        return 2 * steps
    if solver is SolverKind.ABM:
        return 2 * steps + 1 if mode is PCMode.PECE else steps + 1
    raise ContractViolation(f"no fixed NFE formula for solver '{solver.value}'")


def matched_nfe_steps(solver: SolverKind, budget: int, mode: PCMode = PCMode.PECE) -> int:
    """Largest step count whose NFE stays within budget"""
    if solver is SolverKind.EULER:
        steps = budget
    elif solver is SolverKind.MIDPOINT:
        steps = budget // 2
    elif solver is SolverKind.ABM:
        steps = (budget - 1) // 2 if mode is PCMode.PECE else budget - 1
    else:
        raise ContractViolation(f"no fixed NFE formula for solver '{solver.value}'")
    minimum = 2 if solver is SolverKind.ABM else 1
    if steps < minimum:
        raise ContractViolation(f"NFE budget {budget} too small for solver '{solver.value}'")
    return steps


def local_truncation_probe(field: VelocityField, t: float, h: float, z_ref=None) -> float:
    """One predict + correct step from exact history; L2 distance to the exact solution.

    History is seeded with exact states at t - h and t (z_ref is the state at
    t, ones by default), so the result is the local truncation error at t + h.
    """
    if not field.has_exact:
        raise UnsupportedFieldError(f"field '{field.name}' has no exact solution to measure against")
    z_curr = np.ones(field.dim) if z_ref is None else _state(z_ref)
    t_next = _target_time(t, h)
    h = t_next - t
    t_prev = _target_time(t, -h)
    z_prev = field.exact(z_curr, t, t_prev)
    history = HistoryPair(prev=(t_prev, evaluate(field, z_prev, t_prev)),
                          curr=(t, evaluate(field, z_curr, t)))
    z_pred = ab2_predict(z_curr, history, h, AB2Mode.UNIFORM)
    z_corr, _ = am2_correct(field, z_curr, z_pred, t_next, history.curr[1], h)
    return float(np.linalg.norm(z_corr - field.exact(z_curr, t, t_next)))


def invert_then_reconstruct(field: VelocityField, z_data, grid: TimeGrid,
                            solver: SolverKind = SolverKind.ABM,
                            mode: PCMode = PCMode.PECE) -> Tuple[np.ndarray, np.ndarray, int]:
    """Integrate along the grid, then back along the reversed grid"""
    forward = solve(field, z_data, grid, solver, mode)
    backward = solve(field, forward.terminal_state, grid.reversed(), solver, mode)
    logger.debug("round_trip", field=field.name, solver=solver.value,
                 nfe=forward.nfe + backward.nfe)
    return forward.terminal_state, backward.terminal_state, forward.nfe + backward.nfe
