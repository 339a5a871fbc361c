import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochfsi.cli import build_problem, parse_config


def make_config(**overrides):
    """Small noisy default scenario used across the suite."""
    base = {
        "domain": {"L": 1.0, "R": 1.0, "nz": 8, "nr": 4},
        "physics": {"nu": 1.0, "delta": 0.1, "epsilon": 1e-3, "s": 1.75},
        "time": {"T": 0.5, "N": 16},
        "pressure": {"kind": "constant", "P_in": 1.0, "P_out": 0.0},
        "initial": {
            "eta0": {"kind": "sine2", "amplitude": 0.1},
            "v0": {"kind": "zero"},
            "u0": {"kind": "parabolic", "amplitude": 0.5},
        },
        "noise": {
            "K": 4,
            "q": [1.0, 0.25, 1.0 / 9.0, 0.0625],
            "amplitude": [1.0, 0.5, 0.3, 0.2],
            "seed": 1234,
        },
    }

    def deep_update(dst, src):
        for k, v in src.items():
            if isinstance(v, dict) and isinstance(dst.get(k), dict):
                deep_update(dst[k], v)
            else:
                dst[k] = v

    deep_update(base, overrides)
    return parse_config(base)


def make_problem(**overrides):
    return build_problem(make_config(**overrides))


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
