"""
Adaptive Step Size Adjustment

Error-controlled step sizes around the ABM solver. The predictor-corrector
discrepancy E drives h_next = h (eps / E)^(1/(p+1)), clamped to
[h_init, h_max_factor * h_init]. The first warmup_steps and the cooldown
region (remaining span <= cooldown_steps * h_init) run at h_init.
"""

import dataclasses
from typing import Tuple

import numpy as np
import structlog

from .exceptions import ContractViolation
from .flows import VelocityField, check_time
from .models import (
    TIME_TOL,
    ErrorNorm,
    PCMode,
    RejectionPolicy,
    SolverRun,
    StepController,
    StepDecision,
    StepRecord,
)
from .solvers import FieldEvaluator, advance_history, predict_correct, rk2_init

logger = structlog.get_logger(__name__)


def error_estimate(z_pred, z_corr, norm: ErrorNorm = ErrorNorm.L2_TOTAL) -> float:
    """Predictor-corrector discrepancy"""
    z_pred = np.asarray(z_pred, dtype=float)
    z_corr = np.asarray(z_corr, dtype=float)
    if z_pred.shape != z_corr.shape:
        raise ContractViolation(f"states differ in shape: {z_pred.shape} vs {z_corr.shape}")
    distance = float(np.linalg.norm(z_pred - z_corr))
    if norm is ErrorNorm.L2_RMS:
        return distance / np.sqrt(z_pred.size)
    return distance


def next_step_size(h: float, E: float, ctrl: StepController) -> float:
    """h (eps / E)^(1/(p+1)) clamped to [h_min, h_max]; E = 0 saturates at h_max"""
    if not h > 0:
        raise ContractViolation(f"step size must be positive, got {h}")
    if E <= 0:
        return ctrl.h_max
    proposal = h * (ctrl.epsilon / E) ** ctrl.exponent
    return float(min(max(proposal, ctrl.h_min), ctrl.h_max))


def controller_for(ctrl: StepController, t_start: float, t_end: float,
                   nominal_steps: int) -> StepController:
    """Copy of ctrl with h_init = |t_end - t_start| / nominal_steps"""
    if nominal_steps < ctrl.warmup_steps + ctrl.cooldown_steps + 1:
        raise ContractViolation(
            f"nominal_steps={nominal_steps} leaves no adjustable steps after "
            f"{ctrl.warmup_steps} warmup and {ctrl.cooldown_steps} cooldown steps"
        )
    return dataclasses.replace(ctrl, h_init=abs(t_end - t_start) / nominal_steps)


def adaptive_abm_solve(field: VelocityField, z_start, t_start: float, t_end: float,
                       ctrl: StepController, nominal_steps: int,
                       mode: PCMode = PCMode.PECE) -> SolverRun:
    """ABM with per-step error control.

    A non-frozen step that would cross into the cooldown region is truncated
    to land on its boundary, and the last cooldown step is snapped onto
    t_end; both carry truncated=True. In reject_retry mode a step with
    E > epsilon is redone at the reduced size, each attempt costing one
    evaluation.
    """
    t_start, t_end = check_time(t_start), check_time(t_end)
    if t_start == t_end:
        raise ContractViolation("adaptive solve needs t_start != t_end")
    ctrl = controller_for(ctrl, t_start, t_end, nominal_steps)
    sign = 1.0 if t_end > t_start else -1.0
    span = abs(t_end - t_start)
    h_init = ctrl.h_init
    cooldown_span = ctrl.cooldown_steps * h_init

    f = FieldEvaluator(field)
    z = np.array(z_start, dtype=float)
    if z.shape != (field.dim,):
        raise ContractViolation(f"initial state of shape {z.shape} does not match dim {field.dim}")
    run = SolverRun(trajectory=[(t_start, z)])

    def time_at(covered: float) -> float:
        return t_end if span - covered <= TIME_TOL else t_start + sign * covered

    # RK2 seeds the history and counts as the first warmup step
    covered = h_init
    t = time_at(covered)
    z, history = rk2_init(f, z, t_start, t - t_start, mode)
    run.trajectory.append((t, z))
    run.per_step.append(StepRecord(
        t=t, h=sign * h_init, frozen=True,
        decision=StepDecision(error_estimate=None, next_h=h_init, frozen=True),
    ))
    accepted = 1
    h_next = h_init

    while span - covered > TIME_TOL:
        remaining = span - covered
        frozen = accepted < ctrl.warmup_steps or remaining <= cooldown_span + TIME_TOL
        truncated = False
        if frozen:
            h = h_init
            if remaining <= h_init + TIME_TOL:
                h, truncated = remaining, remaining != h_init
        else:
            h = h_next
            boundary = remaining - cooldown_span
            if h >= boundary - TIME_TOL:
                h, truncated = boundary, abs(boundary - h_next) > TIME_TOL

        while True:
            t_next = time_at(covered + h)
            z_pred, z_corr, v_pred = predict_correct(f, z, t, t_next - t, history)
            E = error_estimate(z_pred, z_corr, ctrl.error_norm)
            proposal = next_step_size(h, E, ctrl)
            retry = (not frozen and ctrl.rejection is RejectionPolicy.REJECT_RETRY
                     and E > ctrl.epsilon and proposal < h - TIME_TOL)
            if not retry:
                break
            logger.debug("step_rejected", t=t, h=h, error=E, retry_h=proposal, nfe=f.nfe)
            run.per_step.append(StepRecord(
                t=t_next, h=sign * h, predictor_state=z_pred, error_estimate=E, accepted=False,
                decision=StepDecision(error_estimate=E, next_h=proposal, accepted=False),
            ))
            h, truncated = proposal, False

        history = advance_history(f, history, t_next, z_corr, v_pred, mode)
        covered += h
        t, z = t_next, z_corr
        accepted += 1
        h_next = proposal
        logger.debug("adaptive_step", t=t, h=h, error=E, next_h=proposal, frozen=frozen, nfe=f.nfe)
        run.trajectory.append((t, z))
        run.per_step.append(StepRecord(
            t=t, h=sign * h, predictor_state=z_pred, error_estimate=E,
            frozen=frozen, truncated=truncated,
            decision=StepDecision(error_estimate=E, next_h=h_init if frozen else proposal, frozen=frozen),
        ))

    run.nfe = f.nfe
    return run


def adaptive_invert_then_reconstruct(field: VelocityField, z_data, ctrl: StepController,
                                     nominal_steps: int, mode: PCMode = PCMode.PECE
                                     ) -> Tuple[np.ndarray, np.ndarray, int, SolverRun, SolverRun]:
    """Adaptive inversion 0 -> 1 then reconstruction 1 -> 0.

    Returns (z_noise, z_recon, total_nfe, forward_run, backward_run).
    """
    forward = adaptive_abm_solve(field, z_data, 0.0, 1.0, ctrl, nominal_steps, mode)
    backward = adaptive_abm_solve(field, forward.terminal_state, 1.0, 0.0, ctrl, nominal_steps, mode)
    return (forward.terminal_state, backward.terminal_state,
            forward.nfe + backward.nfe, forward, backward)
