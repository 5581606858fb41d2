"""Input checks shared by the estimators and the simulator."""
from __future__ import annotations

import numbers

import numpy as np


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_probability(value, name: str, allow_zero: bool = True) -> float:
    lo_ok = value >= 0 if allow_zero else value > 0
    if not isinstance(value, numbers.Real) or not (lo_ok and value <= 1):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_on_simplex(values, groups: np.ndarray, name: str, atol: float = 1e-9) -> None:
    """Raise if any padded group of ``values`` is negative or does not sum to 1."""
    values = np.asarray(values, dtype=float)
    if np.any(values < -atol):
        raise ValueError(f"{name} has negative entries")
    mask = groups >= 0
    sums = np.where(mask, values[groups], 0.0).sum(axis=1)
    if not np.allclose(sums, 1.0, atol=atol):
        raise ValueError(f"{name} does not sum to 1 over every group")


def as_problem(obj, coding_depth=None):
    """Coerce a Scenario, a (hypergraph, catalog) pair or a Problem to a Problem."""
    from .numopt.problem import Problem
    from .topology import Scenario

    if isinstance(obj, Problem):
        return obj
    if isinstance(obj, Scenario):
        return Problem.from_scenario(obj, coding_depth)
    if isinstance(obj, tuple) and len(obj) == 2:
        return Problem.build(*obj)
    raise TypeError(f"cannot build a NUM problem from {type(obj).__name__}")
