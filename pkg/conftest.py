"""
Shared pytest fixtures for the ABM-Flow test suite
"""
import json
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path
sys.path.insert(0, str(Path(__file__).parent.absolute() / "src"))

from abm_flow.core.flows import VelocityField, decay_field, get_field  # noqa: E402
from abm_flow.utils.helpers import setup_logging  # noqa: E402

setup_logging("WARNING")


class CountingField:
    """Wraps a VelocityField and counts eval calls on its own"""

    def __init__(self, field: VelocityField):
        self.calls = 0
        self.inner = field
        self.field = VelocityField(
            name=field.name,
            dim=field.dim,
            eval=self._eval,
            lipschitz_bound=field.lipschitz_bound,
            exact=field.exact,
            pair=field.pair,
        )

    def _eval(self, z, t):
        self.calls += 1
        return self.inner.eval(z, t)


@pytest.fixture
def counting():
    return CountingField


@pytest.fixture
def decay():
    return decay_field()


@pytest.fixture
def surrogate():
    return get_field("surrogate")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config_file(tmp_path):
    """Write a JSON study config and return its path"""
    def _write(**values):
        path = tmp_path / "study_config.json"
        path.write_text(json.dumps(values), encoding="utf-8")
        return path

    return _write
