"""
Configuration Management

Loads study configuration from a JSON key-value file and merges command-line
overrides on top. Precedence: CLI > file > defaults.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import structlog
from decouple import config
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .exceptions import ConfigError
from .flows import FIELD_NAMES, VelocityField, get_field
from .models import ErrorNorm, PCMode, RejectionPolicy, SolverKind, StepController

logger = structlog.get_logger(__name__)

Window = Tuple[float, float]


class StudyConfig(BaseModel):
    """Validated configuration for one study run"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    field_name: str = "decay"
    solver: SolverKind = SolverKind.ABM
    steps_list: List[int] = [20, 40, 80, 160]
    # Round trips reach their asymptotic rate later than one-way runs
    roundtrip_steps_list: List[int] = [40, 80, 160, 320]
    # Order-preservation runs: nominal N, epsilon = scale * (1/N)^3, warmup = cooldown = N // 8
    order_steps_list: List[int] = [40, 80, 160, 320]
    order_epsilon_scale: float = 2.4
    epsilon: float = 0.1
    mode: PCMode = PCMode.PECE
    seed: int = 0
    output_dir: Path = Path("results")

    # Field parameters
    dim: Optional[int] = None
    decay_rate: float = 1.0
    omega: float = math.pi / 2
    surrogate_a: float = 0.5
    surrogate_b: float = 0.3
    constant_value: float = 2.0
    oracle_steps: int = 160_000

    # Step controller
    epsilons: List[float] = [1e-1, 1e-2, 1e-3, 1e-4]
    nominal_steps: int = 15
    warmup_steps: int = 5
    cooldown_steps: int = 5
    h_max_factor: float = 4.0
    rejection: RejectionPolicy = RejectionPolicy.ACCEPT_ALWAYS
    error_norm: ErrorNorm = ErrorNorm.L2_TOTAL

    # Feature injection
    tau: float = 0.2
    taus: List[float] = [0.0, 0.2, 0.9]
    perturbations: List[float] = [0.0, 0.25, 0.5, 1.0, 2.0]
    positions: int = 64
    channels: int = 16
    edit_fraction: float = 0.25

    # Execution and artifacts
    workers: int = 1
    plot: bool = False

    # Versioned acceptance windows
    slope_windows: Dict[str, Window] = {
        "euler": (0.9, 1.1),
        "midpoint": (1.8, 2.2),
        "abm": (1.8, 2.2),
        "abm_adaptive": (1.8, 2.2),
    }
    roundtrip_window: Window = (1.8, 3.3)
    local_order_window: Window = (2.7, 3.3)
    nfe_window: Window = (40, 60)

    @field_validator("field_name")
    @classmethod
    def _known_field(cls, value: str) -> str:
        if value not in FIELD_NAMES:
            raise ValueError(f"unknown field '{value}'; known fields: {', '.join(FIELD_NAMES)}")
        return value

    @field_validator("steps_list", "roundtrip_steps_list", "order_steps_list")
    @classmethod
    def _valid_steps(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("step lists must not be empty")
        if any(n < 4 for n in value):
            raise ValueError("step counts must be at least 4")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("step counts must be strictly increasing")
        return value

    @field_validator("epsilon", "decay_rate", "order_epsilon_scale")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be positive")
        return value

    @field_validator("epsilons")
    @classmethod
    def _positive_list(cls, value: List[float]) -> List[float]:
        if not value or any(not eps > 0 for eps in value):
            raise ValueError("epsilons must be a non-empty list of positive tolerances")
        return value

    @field_validator("tau")
    @classmethod
    def _valid_tau(cls, value: float) -> float:
        if not -1.0 <= value <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")
        return value

    @field_validator("taus")
    @classmethod
    def _valid_taus(cls, value: List[float]) -> List[float]:
        if any(not -1.0 <= tau <= 1.0 for tau in value):
            raise ValueError("taus must lie in [-1, 1]")
        return value

    @model_validator(mode="after")
    def _positive_counts(self) -> "StudyConfig":
        for name in ("oracle_steps", "nominal_steps", "positions", "channels", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.dim is not None and self.dim < 1:
            raise ValueError("dim must be positive")
        return self

    def field_params(self) -> Dict[str, Any]:
        params: Dict[str, Any] = {
            "lambda_": self.decay_rate,
            "omega": self.omega,
            "A": self.surrogate_a,
            "b": self.surrogate_b,
            "seed": self.seed,
        }
        if self.dim is not None:
            params["dim"] = self.dim
        if self.field_name == "constant":
            params["c"] = self.constant_value
        return params

    def build_field(self) -> VelocityField:
        return get_field(self.field_name, **self.field_params())

    def initial_state(self, field: VelocityField) -> np.ndarray:
        """Seeded start state; a rectified field starts from its data endpoint"""
        if field.pair is not None:
            return np.array(field.pair.z0)
        rng = np.random.default_rng(self.seed)
        return rng.uniform(0.5, 1.5, field.dim)

    def step_controller(self, epsilon: Optional[float] = None) -> StepController:
        return StepController(
            epsilon=self.epsilon if epsilon is None else epsilon,
            h_init=1.0 / self.nominal_steps,
            h_max_factor=self.h_max_factor,
            warmup_steps=self.warmup_steps,
            cooldown_steps=self.cooldown_steps,
            rejection=self.rejection,
            error_norm=self.error_norm,
        )


class ConfigManager:
    """Configuration manager for ABM-Flow studies"""

    def __init__(self, config_path: Optional[Path] = None):
        """Initialize configuration manager"""
        if config_path is None:
            env_path = config('ABM_FLOW_CONFIG', default='')
            if env_path:
                self.config_path = Path(env_path)
            else:
                self.config_path = Path(__file__).parent.parent.parent.parent / "study_config.json"
            self.explicit = bool(env_path)
        else:
            self.config_path = Path(config_path)
            self.explicit = True

    def load_file(self) -> Dict[str, Any]:
        """Load the key-value config file; a missing default file means defaults only"""
        if not self.config_path.exists():
            if self.explicit:
                raise ConfigError(f"Config file not found: {self.config_path}")
            logger.info("config_defaults", reason="no config file", path=str(self.config_path))
            return {}

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config file {self.config_path}: {e}") from e

        if not isinstance(data, dict):
            raise ConfigError(f"Config file {self.config_path} must hold a JSON object")
        return data

    def load_study_config(self, overrides: Optional[Dict[str, Any]] = None) -> StudyConfig:
        """Defaults, then file values, then non-None CLI overrides"""
        merged = self.load_file()
        merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
        try:
            study_config = StudyConfig(**merged)
        except ValidationError as e:
            raise ConfigError(_first_error(e)) from e
        logger.debug("config_loaded", path=str(self.config_path), keys=sorted(merged))
        return study_config

    def get_log_level(self) -> str:
        """Get log level from configuration"""
        return config('ABM_FLOW_LOG_LEVEL', default='INFO')


def _first_error(error: ValidationError) -> str:
    detail = error.errors()[0]
    location = ".".join(str(part) for part in detail.get("loc", ())) or "config"
    return f"invalid config value for {location}: {detail.get('msg')}"
