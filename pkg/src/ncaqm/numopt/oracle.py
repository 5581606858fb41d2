"""Exhaustive reference optimum for small instances.

For fixed splits the per-hyperarc load is positively homogeneous in the rate
vector, so airtime can be eliminated: along a direction ``d`` the largest
feasible scale is ``gamma / max_clique usage(d)``. The search therefore only
grids rate directions and split fractions.
"""
from __future__ import annotations

import itertools

import numpy as np

from .._validation import as_problem, check_positive
from .problem import Problem


def simplex_grid(n: int, step: float) -> np.ndarray:
    """All points of the ``n``-simplex whose coordinates are multiples of ``step``."""
    k = int(round(1.0 / step))
    if n == 1:
        return np.ones((1, 1))
    axes = np.meshgrid(*[np.arange(k + 1)] * (n - 1), indexing="ij")
    free = np.stack([a.ravel() for a in axes], axis=1)
    free = free[free.sum(axis=1) <= k]
    return np.column_stack([free, k - free.sum(axis=1)]) / k


def _batch_code_load(problem: Problem, alpha: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``code_load`` for a batch of rate vectors ``x`` (rows)."""
    ex = alpha[None, :] * x[:, problem.entry_flow]
    groups = problem.code_groups
    vals = np.where(groups[None] >= 0, ex[:, np.maximum(groups, 0)], -np.inf).max(axis=2)
    load = np.zeros((x.shape[0], problem.n_hyperarcs))
    for g, h in enumerate(problem.code_hyperarc):
        load[:, h] += vals[:, g]
    return load


def brute_force_optimum(problem, grid_step: float = 0.01, coding_depth=None, max_flows: int = 3,
                        overprovision: float | None = None):
    """Best grid point of total log utility.

    Returns ``(x, objective)``. Raises ``ValueError`` for more than
    ``max_flows`` flows or when no grid point is feasible.
    """
    problem = as_problem(problem, coding_depth)
    check_positive(grid_step, "grid_step")
    if problem.n_flows > max_flows:
        raise ValueError(f"brute force supports at most {max_flows} flows, got {problem.n_flows}")
    gamma = problem.overprovision if overprovision is None else overprovision
    dirs = simplex_grid(problem.n_flows, grid_step)
    dirs = dirs[(dirs > 0).all(axis=1)]
    if len(dirs) == 0:
        raise ValueError("grid_step too coarse for the number of flows")
    cm = problem.clique_matrix.astype(float)
    group_sets = []
    for row in problem.split_groups:
        parts = row[row >= 0]
        group_sets.append((parts, simplex_grid(len(parts), grid_step)))
    best = (-np.inf, None)
    for choice in itertools.product(*(range(len(g)) for _, g in group_sets)):
        beta = np.zeros(problem.n_partitions)
        for (parts, grid), c in zip(group_sets, choice):
            beta[parts] = grid[c]
        alpha = beta[problem.entry_partition]
        usage = _batch_code_load(problem, alpha, dirs) / problem.rates[None, :] @ cm.T
        peak = usage.max(axis=1)
        ok = peak > 0
        if not ok.any():
            continue
        scale = gamma / peak[ok]
        obj = np.log(dirs[ok]).sum(axis=1) + problem.n_flows * np.log(scale)
        i = int(np.argmax(obj))
        if obj[i] > best[0]:
            best = (float(obj[i]), dirs[ok][i] * scale[i])
    if best[1] is None:
        raise ValueError("no feasible grid point")
    return best[1], best[0]
