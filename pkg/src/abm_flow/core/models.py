"""
Core Models for ABM-Flow

Data models shared by the solvers, the step controller and the harness.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ContractViolation, DomainError

# Absolute tolerance on times and step sizes
TIME_TOL = 1e-12


class Direction(Enum):
    """Integration direction"""
    INVERSION = "inversion"  # 0 -> 1
    SAMPLING = "sampling"    # 1 -> 0


class SolverKind(Enum):
    """Solver enumeration"""
    EULER = "euler"
    MIDPOINT = "midpoint"
    ABM = "abm"
    ABM_ADAPTIVE = "abm_adaptive"


class PCMode(Enum):
    """Predictor-corrector evaluation mode"""
    PECE = "PECE"
    PEC = "PEC"


class AB2Mode(Enum):
    """Adams-Bashforth coefficient set"""
    UNIFORM = "uniform"
    VARIABLE = "variable"


class RejectionPolicy(Enum):
    """What the step controller does when E exceeds epsilon"""
    ACCEPT_ALWAYS = "accept_always"
    REJECT_RETRY = "reject_retry"


class ErrorNorm(Enum):
    """Norm applied to the predictor-corrector discrepancy"""
    L2_TOTAL = "l2_total"
    L2_RMS = "l2_rms"


@dataclass(frozen=True)
class TimeGrid:
    """Strictly monotone schedule of integration times inside [0, 1]"""
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ContractViolation("TimeGrid needs at least two times")
        if times.min() < -TIME_TOL or times.max() > 1.0 + TIME_TOL:
            raise DomainError(f"TimeGrid leaves [0, 1]: [{times.min()}, {times.max()}]")
        steps = np.diff(times)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ContractViolation("TimeGrid must be strictly monotone")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def direction(self) -> Direction:
        return Direction.INVERSION if self.times[-1] > self.times[0] else Direction.SAMPLING

    @property
    def steps(self) -> int:
        """Number of intervals N"""
        return self.times.size - 1

    @property
    def step_sizes(self) -> np.ndarray:
        """Positive step sizes h_i"""
        return np.abs(np.diff(self.times))

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def reversed(self) -> "TimeGrid":
        """Same nodes traversed in the opposite direction"""
        return TimeGrid(self.times[::-1].copy())


@dataclass(frozen=True)
class HistoryPair:
    """The two (time, velocity) entries a two-step method keeps"""
    prev: Tuple[float, np.ndarray]
    curr: Tuple[float, np.ndarray]

    @property
    def h_prev(self) -> float:
        """Signed size of the step that produced curr"""
        return self.curr[0] - self.prev[0]

    def push(self, t: float, v: np.ndarray) -> "HistoryPair":
        """Drop prev, shift curr back and append (t, v)"""
        return HistoryPair(prev=self.curr, curr=(t, v))


@dataclass
class StepDecision:
    """Step controller verdict for one attempted step"""
    error_estimate: Optional[float]
    next_h: float
    accepted: bool = True
    frozen: bool = False


@dataclass
class StepRecord:
    """Per-step record kept by every solver"""
    t: float
    h: float
    predictor_state: Optional[np.ndarray] = None
    error_estimate: Optional[float] = None
    accepted: bool = True
    frozen: bool = False
    truncated: bool = False
    decision: Optional[StepDecision] = None


@dataclass
class SolverRun:
    """Trajectory, step records and NFE counter of one solver run"""
    trajectory: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    nfe: int = 0
    per_step: List[StepRecord] = field(default_factory=list)

    @property
    def terminal_state(self) -> np.ndarray:
        return self.trajectory[-1][1]

    @property
    def terminal_time(self) -> float:
        return self.trajectory[-1][0]

    @property
    def accepted_steps(self) -> List[StepRecord]:
        return [record for record in self.per_step if record.accepted]

    @property
    def steps_taken(self) -> int:
        return len(self.accepted_steps)

    @property
    def rejections(self) -> int:
        return len(self.per_step) - self.steps_taken

    @property
    def max_accepted_step(self) -> float:
        return max(abs(record.h) for record in self.accepted_steps)


@dataclass
class StepController:
    """Adaptive step-size state around the ABM solver"""
    epsilon: float = 0.1
    h_init: float = 1.0 / 15
    order_p: int = 2
    h_max_factor: float = 4.0
    warmup_steps: int = 5
    cooldown_steps: int = 5
    rejection: RejectionPolicy = RejectionPolicy.ACCEPT_ALWAYS
    error_norm: ErrorNorm = ErrorNorm.L2_TOTAL

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractViolation(f"epsilon must be positive, got {self.epsilon}")
        if self.order_p != 2:
            raise ContractViolation("only the second-order ABM pair is supported (order_p = 2)")
        if not self.h_init > 0:
            raise ContractViolation(f"h_init must be positive, got {self.h_init}")
        if self.h_max_factor < 1:
            raise ContractViolation("h_max_factor must be at least 1")
        if self.warmup_steps < 1 or self.cooldown_steps < 0:
            raise ContractViolation("warmup_steps >= 1 and cooldown_steps >= 0 required")

    @property
    def h_min(self) -> float:
        return self.h_init

    @property
    def h_max(self) -> float:
        return self.h_max_factor * self.h_init

    @property
    def exponent(self) -> float:
        return 1.0 / (self.order_p + 1)


@dataclass(frozen=True)
class FeatureTensor:
    """Position x channel real array"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ContractViolation(f"FeatureTensor must be a non-empty P x C array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ContractViolation("FeatureTensor entries must be finite")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def positions(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class SimilarityMap:
    """Per-position cosine similarity"""
    values: np.ndarray


@dataclass(frozen=True)
class BinaryMask:
    """Per-position keep/edit mask"""
    bits: np.ndarray
    tau: float = 0.2

    @property
    def density(self) -> float:
        """Fraction of ones"""
        return float(np.mean(self.bits))


@dataclass
class ConvergenceRow:
    """One refinement level of a convergence study"""
    steps: int
    h: float
    terminal_error: float
    nfe: int


@dataclass
class ConvergenceReport:
    """Terminal errors per refinement plus the fitted log-log line"""
    rows: List[ConvergenceRow] = field(default_factory=list)
    fitted_slope: Optional[float] = None
    fitted_intercept: Optional[float] = None
    exact: bool = False
