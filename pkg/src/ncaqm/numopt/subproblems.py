"""The decomposed subproblems: dominance, traffic splitting, rate control,
scheduling and the h-queue (dual) update."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linprog

from .problem import Problem

_PAD = -1e30


def project_simplex(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto the probability simplex (sort based)."""
    v = np.asarray(v, dtype=float)
    v = np.maximum(v - v.max(), -1.0)   # shift-invariant; entries <= -1 project to 0
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    j = np.arange(1, len(v) + 1)
    rho = j[u - css / j > 0][-1]
    return np.maximum(v - css[rho - 1] / rho, 0.0)


def project_groups(values: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Project ``values`` onto one simplex per row of the padded index matrix."""
    mask = groups >= 0
    vals = np.where(mask, values[groups], -np.inf)
    # after the shift theta >= -1, so anything at or below -1 projects to 0;
    # clipping there keeps the cumulative sums finite for huge spreads
    vals = np.maximum(vals - vals.max(axis=1, keepdims=True), -1.0)
    vals = np.where(mask, vals, _PAD)
    u = -np.sort(-vals, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    j = np.arange(1, groups.shape[1] + 1)
    counts = mask.sum(axis=1)
    cond = (u - css / j > 0) & (j[None, :] <= counts[:, None])
    rho = groups.shape[1] - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(len(groups)), rho - 1] / rho
    out = np.empty_like(values, dtype=float)
    proj = np.maximum(vals - theta[:, None], 0.0)
    out[groups[mask]] = proj[mask]
    return out


def _vertex_groups(scores: np.ndarray, groups: np.ndarray, maximize: bool) -> np.ndarray:
    """Linear objective over simplices: all mass on the best members, ties split."""
    mask = groups >= 0
    s = scores if maximize else -scores
    vals = np.where(mask, s[groups], -np.inf)
    best = vals.max(axis=1, keepdims=True)
    hit = mask & np.isclose(vals, best, rtol=1e-12, atol=1e-15)
    share = hit / hit.sum(axis=1, keepdims=True)
    out = np.empty_like(scores, dtype=float)
    out[groups[mask]] = share[mask]
    return out


def solve_dominance(problem: Problem, alpha, x, mu_m, proximal_c: float) -> np.ndarray:
    """Dominance weights m maximizing sum(H alpha x m) - c (m - mu)^2 per code.

    With c > 0 the maximizer is the simplex projection of mu + alpha x / (2c);
    with c = 0 it is the vertex on the flow(s) with the largest allocated rate.
    """
    v = np.asarray(alpha) * np.asarray(x)[problem.entry_flow]
    if proximal_c > 0:
        with np.errstate(over="ignore"):
            target = np.asarray(mu_m) + v / (2.0 * proximal_c)
        if np.isfinite(target).all():
            return project_groups(target, problem.code_groups)
    # c = 0, or c so small the proximal step overflows: the linear-program vertex
    return _vertex_groups(v, problem.code_groups, maximize=True)


def entry_prices(problem: Problem, q, m) -> np.ndarray:
    return np.asarray(q)[problem.entry_hyperarc] * np.asarray(m)


def _split(problem: Problem, partition_price: np.ndarray, mu, proximal_c: float):
    target = None
    if proximal_c > 0:
        with np.errstate(over="ignore"):
            target = np.asarray(mu) - partition_price / (2.0 * proximal_c)
    if target is not None and np.isfinite(target).all():
        beta = project_groups(target, problem.split_groups)
    else:
        beta = _vertex_groups(partition_price, problem.split_groups, maximize=False)
    return beta, beta[problem.entry_partition]


def solve_split_onehop(problem: Problem, q, m, x, mu_alpha, proximal_c: float) -> np.ndarray:
    """Per flow and node, split the flow across codes minimizing q H m alpha plus
    the proximal term. ``x`` does not move the minimizer and is accepted only to
    mirror the decomposition's inputs."""
    if not problem.is_one_hop:
        raise ValueError("one-hop splitting needs single-entry partitions; use solve_split_multihop")
    price = np.zeros(problem.n_partitions)
    np.add.at(price, problem.entry_partition, entry_prices(problem, q, m))
    _, alpha = _split(problem, price, mu_alpha, proximal_c)
    return alpha


def solve_split_multihop(problem: Problem, q, m, mu_beta, proximal_c: float):
    """Per flow and coding path, split across partitions by their aggregated
    price (sum of q H m over the partition's hyperarcs). Returns (beta, alpha)."""
    price = np.zeros(problem.n_partitions)
    np.add.at(price, problem.entry_partition, entry_prices(problem, q, m))
    return _split(problem, price, mu_beta, proximal_c)


def path_price(problem: Problem, q, alpha, m) -> np.ndarray:
    """Sum over the flow's path of q_h weighted by alpha and m (the rate-control price)."""
    return np.bincount(problem.entry_flow, weights=entry_prices(problem, q, m) * np.asarray(alpha),
                       minlength=problem.n_flows)


def solve_rate(problem: Problem, q, alpha, m, x_min: float = 1e-4, x_max: float | None = None) -> np.ndarray:
    """Log-utility rate control: x_s = 1 / price_s, clamped."""
    if x_max is None:
        x_max = 10.0 * float(problem.rates.max())
    price = path_price(problem, q, alpha, m)
    with np.errstate(divide="ignore"):
        x = np.where(price > 0, 1.0 / np.maximum(price, 1e-300), x_max)
    return np.clip(x, x_min, x_max)


def _disjoint_cliques(cm: np.ndarray) -> bool:
    return bool(np.all(cm.sum(axis=0) == 1))


def solve_schedule(problem: Problem, q, overprovision: float | None = None) -> np.ndarray:
    """Airtime shares maximizing sum(q_h R_h tau_h) under the clique constraints.

    Disjoint cliques are solved exactly per clique (all airtime to the best
    hyperarc, ties split equally); overlapping cliques go to an LP solver.
    All-zero prices return all-zero airtime.
    """
    gamma = problem.overprovision if overprovision is None else overprovision
    w = np.asarray(q, dtype=float) * problem.rates
    tau = np.zeros(problem.n_hyperarcs)
    if not np.any(w > 0):
        return tau
    cm = problem.clique_matrix
    if _disjoint_cliques(cm):
        for members in cm:
            idx = np.flatnonzero(members)
            best = w[idx].max()
            if best <= 0:
                continue
            winners = idx[np.isclose(w[idx], best, rtol=1e-12, atol=0)]
            tau[winners] = gamma / len(winners)
        return tau
    res = linprog(-w, A_ub=cm.astype(float), b_ub=np.full(len(cm), gamma),
                  bounds=[(0, gamma)] * len(w), method="highs")
    return np.clip(res.x, 0.0, gamma)


def update_duals(q, inflow, rates, tau, step: float) -> np.ndarray:
    """Projected subgradient step on the h-queues: q + step (inflow - R tau), floored at 0."""
    return np.maximum(np.asarray(q) + step * (np.asarray(inflow) - np.asarray(rates) * np.asarray(tau)), 0.0)
