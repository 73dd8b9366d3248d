"""
Study Runners

Convergence, round-trip, adaptive (tolerance sweep and order preservation),
feature-injection (masks and ablation) and matched-NFE comparison studies.
Runners return plain report objects; writing them is the job of
harness.reports so report assembly stays serialized.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..core.adaptive import adaptive_abm_solve, adaptive_invert_then_reconstruct
from ..core.config import StudyConfig
from ..core.exceptions import InsufficientPointsError, UnsupportedFieldError
from ..core.flows import VelocityField, ground_truth
from ..core.mgfi import (
    cosine_similarity_map,
    feature_trajectory,
    mgfi_apply,
    synthetic_edit_region,
    threshold_mask,
)
from ..core.models import (
    BinaryMask,
    ConvergenceReport,
    ConvergenceRow,
    FeatureTensor,
    SolverKind,
    StepController,
)
from ..core.solvers import invert_then_reconstruct, matched_nfe_steps, nfe_for_steps, solve, uniform_grid
from ..utils.helpers import psnr_proxy, run_points

logger = structlog.get_logger(__name__)

# Errors at or below this are treated as round-off in log-log fits
FIT_FLOOR = 1e-14
# A study whose errors all sit below this is reported as exact
EXACT_TOL = 1e-12
# The oracle needs this many steps per solver step
ORACLE_FACTOR = 1000


def fit_loglog_slope(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares line through (log h, log error); returns (slope, intercept)"""
    usable = [(h, e) for h, e in points if h > 0 and e > FIT_FLOOR]
    if len(usable) < 3:
        raise InsufficientPointsError(
            f"log-log fit needs at least 3 points with error > {FIT_FLOOR}, got {len(usable)}"
        )
    log_h = np.log([h for h, _ in usable])
    log_e = np.log([e for _, e in usable])
    slope, intercept = np.polyfit(log_h, log_e, 1)
    return float(slope), float(intercept)


def in_window(value: Optional[float], window: Tuple[float, float]) -> bool:
    return value is not None and window[0] <= value <= window[1]


def _truth(cfg: StudyConfig, field: VelocityField, z_start: np.ndarray, t_end: float,
           finest_steps: int) -> np.ndarray:
    if not field.has_exact and cfg.oracle_steps < ORACLE_FACTOR * finest_steps:
        raise UnsupportedFieldError(
            f"field '{field.name}' has no closed form and oracle_steps={cfg.oracle_steps} "
            f"is below {ORACLE_FACTOR} x {finest_steps} steps"
        )
    return ground_truth(field, z_start, 0.0, t_end, cfg.oracle_steps)


# CONVERGENCE ===========================================================================

def run_convergence_study(cfg: StudyConfig) -> ConvergenceReport:
    """Terminal error against ground truth for every N in steps_list"""
    field = cfg.build_field()
    z_start = cfg.initial_state(field)
    truth = _truth(cfg, field, z_start, 1.0, max(cfg.steps_list))

    def point(steps: int) -> ConvergenceRow:
        if cfg.solver is SolverKind.ABM_ADAPTIVE:
            run = adaptive_abm_solve(field, z_start, 0.0, 1.0, cfg.step_controller(), steps, cfg.mode)
            h = run.max_accepted_step
        else:
            run = solve(field, z_start, uniform_grid(0.0, 1.0, steps), cfg.solver, cfg.mode)
            h = 1.0 / steps
        error = float(np.linalg.norm(run.terminal_state - truth))
        logger.info("convergence_point", field=field.name, solver=cfg.solver.value,
                    steps=steps, error=error, nfe=run.nfe)
        return ConvergenceRow(steps=steps, h=h, terminal_error=error, nfe=run.nfe)

    report = ConvergenceReport(rows=run_points(point, cfg.steps_list, cfg.workers))
    if all(row.terminal_error <= EXACT_TOL for row in report.rows):
        report.exact = True
    else:
        report.fitted_slope, report.fitted_intercept = fit_loglog_slope(
            [(row.h, row.terminal_error) for row in report.rows]
        )
    return report


# ROUND TRIP ============================================================================

@dataclass
class RoundTripRow:
    steps: int
    h: float
    recon_error: float
    psnr_proxy: float
    nfe: int


@dataclass
class RoundTripReport:
    rows: List[RoundTripRow] = field(default_factory=list)
    fitted_slope: Optional[float] = None
    fitted_intercept: Optional[float] = None
    exact: bool = False


def _round_trip(cfg: StudyConfig, field: VelocityField, z_data: np.ndarray, solver: SolverKind,
                steps: int) -> Tuple[np.ndarray, int, float]:
    """(z_recon, total NFE, largest step) for one inversion + reconstruction"""
    if solver is SolverKind.ABM_ADAPTIVE:
        _, z_recon, nfe, forward, _ = adaptive_invert_then_reconstruct(
            field, z_data, cfg.step_controller(), steps, cfg.mode)
        return z_recon, nfe, forward.max_accepted_step
    _, z_recon, nfe = invert_then_reconstruct(field, z_data, uniform_grid(0.0, 1.0, steps), solver, cfg.mode)
    return z_recon, nfe, 1.0 / steps


def run_roundtrip_study(cfg: StudyConfig) -> RoundTripReport:
    """Invert 0 -> 1, reconstruct 1 -> 0 and compare with the data state"""
    field = cfg.build_field()
    z_data = cfg.initial_state(field)

    def point(steps: int) -> RoundTripRow:
        z_recon, nfe, h = _round_trip(cfg, field, z_data, cfg.solver, steps)
        error = float(np.linalg.norm(z_recon - z_data))
        logger.info("roundtrip_point", field=field.name, solver=cfg.solver.value,
                    steps=steps, recon_error=error, nfe=nfe)
        return RoundTripRow(steps=steps, h=h, recon_error=error,
                            psnr_proxy=psnr_proxy(z_data, z_recon), nfe=nfe)

    report = RoundTripReport(rows=run_points(point, cfg.roundtrip_steps_list, cfg.workers))
    if all(row.recon_error <= EXACT_TOL for row in report.rows):
        report.exact = True
    elif sum(row.recon_error > FIT_FLOOR for row in report.rows) >= 3:
        report.fitted_slope, report.fitted_intercept = fit_loglog_slope(
            [(row.h, row.recon_error) for row in report.rows]
        )
    return report


# ADAPTIVE ==============================================================================

@dataclass
class AdaptiveRow:
    epsilon: float
    nfe: int
    inversion_nfe: int
    terminal_error: float
    recon_error: float
    steps_taken: int
    rejections: int
    max_step: float


def run_adaptive_study(cfg: StudyConfig) -> List[AdaptiveRow]:
    """Adaptive round trip for every tolerance in cfg.epsilons"""
    field = cfg.build_field()
    z_data = cfg.initial_state(field)
    truth = _truth(cfg, field, z_data, 1.0, cfg.nominal_steps)

    def point(epsilon: float) -> AdaptiveRow:
        z_noise, z_recon, nfe, forward, backward = adaptive_invert_then_reconstruct(
            field, z_data, cfg.step_controller(epsilon), cfg.nominal_steps, cfg.mode)
        row = AdaptiveRow(
            epsilon=epsilon,
            nfe=nfe,
            inversion_nfe=forward.nfe,
            terminal_error=float(np.linalg.norm(z_noise - truth)),
            recon_error=float(np.linalg.norm(z_recon - z_data)),
            steps_taken=forward.steps_taken,
            rejections=forward.rejections + backward.rejections,
            max_step=forward.max_accepted_step,
        )
        logger.info("adaptive_point", field=field.name, epsilon=epsilon, nfe=nfe,
                    terminal_error=row.terminal_error, steps=row.steps_taken)
        return row

    return run_points(point, cfg.epsilons, cfg.workers)


@dataclass
class AdaptiveOrderRow:
    nominal_steps: int
    epsilon: float
    max_step: float
    terminal_error: float
    nfe: int
    steps_taken: int


@dataclass
class AdaptiveOrderReport:
    rows: List[AdaptiveOrderRow] = field(default_factory=list)
    fitted_slope: Optional[float] = None
    fitted_intercept: Optional[float] = None
    exact: bool = False


def run_adaptive_order_study(cfg: StudyConfig) -> AdaptiveOrderReport:
    """Terminal error against the largest accepted step while epsilon shrinks with h_init^3"""
    field = cfg.build_field()
    z_start = cfg.initial_state(field)
    truth = _truth(cfg, field, z_start, 1.0, max(cfg.order_steps_list))

    def point(nominal: int) -> AdaptiveOrderRow:
        epsilon = cfg.order_epsilon_scale / nominal ** 3
        edge = max(1, nominal // 8)
        ctrl = StepController(epsilon=epsilon, h_init=1.0 / nominal, h_max_factor=cfg.h_max_factor,
                              warmup_steps=edge, cooldown_steps=edge, rejection=cfg.rejection,
                              error_norm=cfg.error_norm)
        run = adaptive_abm_solve(field, z_start, 0.0, 1.0, ctrl, nominal, cfg.mode)
        row = AdaptiveOrderRow(nominal_steps=nominal, epsilon=epsilon, max_step=run.max_accepted_step,
                               terminal_error=float(np.linalg.norm(run.terminal_state - truth)),
                               nfe=run.nfe, steps_taken=run.steps_taken)
        logger.info("adaptive_order_point", field=field.name, nominal_steps=nominal,
                    max_step=row.max_step, error=row.terminal_error)
        return row

    report = AdaptiveOrderReport(rows=run_points(point, cfg.order_steps_list, cfg.workers))
    if all(row.terminal_error <= EXACT_TOL for row in report.rows):
        report.exact = True
    else:
        report.fitted_slope, report.fitted_intercept = fit_loglog_slope(
            [(row.max_step, row.terminal_error) for row in report.rows]
        )
    return report


# FEATURE INJECTION =====================================================================

@dataclass
class MgfiRow:
    name: str
    sweep: str
    perturbation: float
    tau: float
    density: float


@dataclass
class MgfiReport:
    rows: List[MgfiRow] = field(default_factory=list)
    masks: Dict[str, BinaryMask] = field(default_factory=dict)
    tensors: Dict[str, FeatureTensor] = field(default_factory=dict)


def run_mgfi_demo(cfg: StudyConfig) -> MgfiReport:
    """Identical pair, perturbation sweep at cfg.tau, and tau sweep on a fixed pair"""
    report = MgfiReport()
    P, C = cfg.positions, cfg.channels

    def record(name: str, sweep: str, perturbation: float, tau: float, edit_fraction: float):
        (inv_curr, smp_curr), (inv_next, smp_next) = feature_trajectory(
            P, C, 2, perturbation, cfg.seed, edit_fraction)
        mask = threshold_mask(cosine_similarity_map(inv_curr, smp_curr), tau)
        report.masks[name] = mask
        report.tensors[name] = mgfi_apply(inv_curr, smp_curr, inv_next, smp_next, tau)
        report.rows.append(MgfiRow(name=name, sweep=sweep, perturbation=perturbation,
                                   tau=tau, density=mask.density))
        logger.info("mgfi_point", name=name, density=mask.density)

    record("identical", "identical", 0.0, cfg.tau, 0.0)
    for i, perturbation in enumerate(cfg.perturbations):
        record(f"perturbation_{i:02d}", "perturbation", perturbation, cfg.tau, cfg.edit_fraction)
    fixed = cfg.perturbations[len(cfg.perturbations) // 2] if cfg.perturbations else 0.5
    for i, tau in enumerate(cfg.taus):
        record(f"tau_{i:02d}", "tau", fixed, tau, cfg.edit_fraction)
    return report


@dataclass
class MgfiAblationRow:
    variant: str
    preserve_error: float
    edit_error: float
    density: float


# Row order of the ablation table
ABLATION_VARIANTS = ("without_mgfi", "injection_without_mask", "mgfi")


def _region_rms(out: np.ndarray, ref: np.ndarray, rows: np.ndarray) -> float:
    """RMS over the selected rows of the per-row L2 distance; 0 for an empty region"""
    if not rows.any():
        return 0.0
    return float(np.sqrt(np.mean(np.sum((out[rows] - ref[rows]) ** 2, axis=1))))


def run_mgfi_ablation(cfg: StudyConfig, perturbation: Optional[float] = None) -> List[MgfiAblationRow]:
    """Sampling alone, injection everywhere and masked injection on one edited pair.

    preserve_error is measured against inv_next on the unedited rows and
    edit_error against smp_next on the edited rows.
    """
    P, C = cfg.positions, cfg.channels
    if perturbation is None:
        perturbation = cfg.perturbations[len(cfg.perturbations) // 2] if cfg.perturbations else 0.5
    (inv_curr, smp_curr), (inv_next, smp_next) = feature_trajectory(
        P, C, 2, perturbation, cfg.seed, cfg.edit_fraction)
    edited = synthetic_edit_region(P, C, perturbation, cfg.seed, cfg.edit_fraction)
    mask = threshold_mask(cosine_similarity_map(inv_curr, smp_curr), cfg.tau)
    outputs = {
        "without_mgfi": (smp_next, 0.0),
        "injection_without_mask": (inv_next, 1.0),
        "mgfi": (mgfi_apply(inv_curr, smp_curr, inv_next, smp_next, cfg.tau), mask.density),
    }
    rows = []
    for variant in ABLATION_VARIANTS:
        tensor, density = outputs[variant]
        row = MgfiAblationRow(
            variant=variant,
            preserve_error=_region_rms(tensor.data, inv_next.data, ~edited),
            edit_error=_region_rms(tensor.data, smp_next.data, edited),
            density=density,
        )
        logger.info("mgfi_ablation_point", variant=variant, preserve_error=row.preserve_error,
                    edit_error=row.edit_error)
        rows.append(row)
    return rows


# MATCHED-NFE COMPARISON ================================================================

@dataclass
class ComparisonRow:
    solver: str
    steps: int
    nfe: int
    recon_error: float
    psnr_proxy: float


def run_comparison_study(cfg: StudyConfig) -> List[ComparisonRow]:
    """Round trips of every solver at the per-direction NFE of ABM with nominal_steps"""
    field = cfg.build_field()
    z_data = cfg.initial_state(field)
    budget = nfe_for_steps(SolverKind.ABM, cfg.nominal_steps, cfg.mode)
    plan = [
        (SolverKind.EULER, matched_nfe_steps(SolverKind.EULER, budget)),
        (SolverKind.MIDPOINT, matched_nfe_steps(SolverKind.MIDPOINT, budget)),
        (SolverKind.ABM, cfg.nominal_steps),
        (SolverKind.ABM_ADAPTIVE, cfg.nominal_steps),
    ]

    def point(item: Tuple[SolverKind, int]) -> ComparisonRow:
        solver, steps = item
        z_recon, nfe, _ = _round_trip(cfg, field, z_data, solver, steps)
        row = ComparisonRow(solver=solver.value, steps=steps, nfe=nfe,
                            recon_error=float(np.linalg.norm(z_recon - z_data)),
                            psnr_proxy=psnr_proxy(z_data, z_recon))
        logger.info("comparison_point", solver=solver.value, steps=steps, nfe=nfe,
                    recon_error=row.recon_error)
        return row

    return run_points(point, plan, cfg.workers)


# SUMMARIES =============================================================================

def _base_summary(cfg: StudyConfig, study: str) -> Dict[str, Any]:
    return {
        "study": study,
        "field": cfg.field_name,
        "solver": cfg.solver.value,
        "mode": cfg.mode.value,
        "seed": cfg.seed,
    }


def convergence_summary(cfg: StudyConfig, report: ConvergenceReport) -> Dict[str, Any]:
    window = tuple(cfg.slope_windows.get(cfg.solver.value, (0.0, float("inf"))))
    summary = _base_summary(cfg, "convergence")
    summary.update({
        "steps_list": list(cfg.steps_list),
        "exact": report.exact,
        "fitted_slope": report.fitted_slope,
        "fitted_intercept": report.fitted_intercept,
        "slope_window": list(window),
        "passed": report.exact or in_window(report.fitted_slope, window),
    })
    return summary


def roundtrip_summary(cfg: StudyConfig, report: RoundTripReport) -> Dict[str, Any]:
    summary = _base_summary(cfg, "roundtrip")
    summary.update({
        "steps_list": list(cfg.roundtrip_steps_list),
        "exact": report.exact,
        "fitted_slope": report.fitted_slope,
        "fitted_intercept": report.fitted_intercept,
        "slope_window": list(cfg.roundtrip_window),
        "passed": report.exact or in_window(report.fitted_slope, cfg.roundtrip_window),
    })
    return summary


def adaptive_summary(cfg: StudyConfig, rows: List[AdaptiveRow]) -> Dict[str, Any]:
    ordered = sorted(rows, key=lambda row: -row.epsilon)
    errors = [row.terminal_error for row in ordered]
    nfes = [row.nfe for row in ordered]
    summary = _base_summary(cfg, "adaptive")
    summary.update({
        "nominal_steps": cfg.nominal_steps,
        "warmup_steps": cfg.warmup_steps,
        "cooldown_steps": cfg.cooldown_steps,
        "h_max_factor": cfg.h_max_factor,
        "rejection": cfg.rejection.value,
        "error_norm": cfg.error_norm.value,
        "nfe_window": list(cfg.nfe_window),
        "nfe_in_window": {repr(row.epsilon): in_window(row.nfe, cfg.nfe_window) for row in ordered},
        "error_non_increasing": all(b <= a for a, b in zip(errors, errors[1:])),
        "nfe_non_decreasing": all(b >= a for a, b in zip(nfes, nfes[1:])),
    })
    return summary


def adaptive_order_summary(cfg: StudyConfig, report: AdaptiveOrderReport) -> Dict[str, Any]:
    window = tuple(cfg.slope_windows.get(SolverKind.ABM_ADAPTIVE.value, (1.8, 2.2)))
    summary = _base_summary(cfg, "adaptive_order")
    summary.update({
        "solver": SolverKind.ABM_ADAPTIVE.value,
        "order_steps_list": list(cfg.order_steps_list),
        "order_epsilon_scale": cfg.order_epsilon_scale,
        "exact": report.exact,
        "fitted_slope": report.fitted_slope,
        "fitted_intercept": report.fitted_intercept,
        "slope_window": list(window),
        "passed": report.exact or in_window(report.fitted_slope, window),
    })
    return summary


def mgfi_summary(cfg: StudyConfig, report: MgfiReport) -> Dict[str, Any]:
    def densities(sweep):
        return [row.density for row in report.rows if row.sweep == sweep]

    by_perturbation = densities("perturbation")
    by_tau = densities("tau")
    return {
        "study": "mgfi",
        "seed": cfg.seed,
        "positions": cfg.positions,
        "channels": cfg.channels,
        "tau": cfg.tau,
        "edit_fraction": cfg.edit_fraction,
        "identical_all_ones": densities("identical") == [1.0],
        "density_non_increasing_in_perturbation": all(
            b <= a for a, b in zip(by_perturbation, by_perturbation[1:])),
        "density_non_increasing_in_tau": all(b <= a for a, b in zip(by_tau, by_tau[1:])),
    }


def mgfi_ablation_summary(cfg: StudyConfig, rows: List[MgfiAblationRow]) -> Dict[str, Any]:
    by_variant = {row.variant: row for row in rows}
    full = by_variant["mgfi"]
    return {
        "study": "mgfi_ablation",
        "seed": cfg.seed,
        "tau": cfg.tau,
        "edit_fraction": cfg.edit_fraction,
        "mgfi_preserves_better_than_sampling":
            full.preserve_error < by_variant["without_mgfi"].preserve_error,
        "mgfi_edits_better_than_unmasked_injection":
            full.edit_error < by_variant["injection_without_mask"].edit_error,
    }


def comparison_summary(cfg: StudyConfig, rows: List[ComparisonRow]) -> Dict[str, Any]:
    summary = _base_summary(cfg, "compare")
    errors = {row.solver: row.recon_error for row in rows}
    summary.update({
        "nominal_steps": cfg.nominal_steps,
        "nfe_budget_per_direction": nfe_for_steps(SolverKind.ABM, cfg.nominal_steps, cfg.mode),
        "abm_beats_euler": errors["abm"] < errors["euler"],
        "best_solver": min(errors, key=errors.get),
    })
    return summary
