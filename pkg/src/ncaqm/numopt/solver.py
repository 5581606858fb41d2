"""Dual-decomposition solver for the coded NUM problem."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .._validation import as_problem, check_positive
from .problem import Problem
from .subproblems import (path_price, solve_dominance, solve_rate, solve_schedule,
                          solve_split_multihop, update_duals)

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    step_size: float = 0.1
    step_schedule: str = "sqrt"          # "sqrt": c0/sqrt(t), "harmonic": c0/t, "constant"
    proximal_c: float = 1.0
    anchor_period: int = 5
    max_iters: int = 2_000_000
    tol: float = 5e-4
    overprovision: float | None = None
    x_min: float = 1e-4
    x_max: float | None = None
    window: int = 50
    max_records: int = 20000
    tail: int = 200

    def __post_init__(self):
        check_positive(self.step_size, "step_size")
        check_positive(self.tol, "tol")
        if self.proximal_c < 0:
            raise ValueError("proximal_c must be >= 0")
        if self.step_schedule not in ("sqrt", "harmonic", "constant"):
            raise ValueError(f"unknown step schedule {self.step_schedule!r}")
        if self.anchor_period < 1 or self.max_iters < 1:
            raise ValueError("anchor_period and max_iters must be >= 1")

    def step(self, t: int) -> float:
        if self.step_schedule == "sqrt":
            return self.step_size / np.sqrt(t)
        if self.step_schedule == "harmonic":
            return self.step_size / t
        return self.step_size


@dataclass
class SolverState:
    x: np.ndarray
    alpha: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    mu_m: np.ndarray
    mu_beta: np.ndarray
    tau: np.ndarray
    q: np.ndarray
    iter: int = 0

    @classmethod
    def initial(cls, problem: Problem, x_max: float) -> "SolverState":
        beta = problem.uniform_split()
        m = problem.uniform_dominance()
        return cls(x=np.full(problem.n_flows, x_max), alpha=beta[problem.entry_partition].copy(),
                   m=m, beta=beta, mu_m=m.copy(), mu_beta=beta.copy(),
                   tau=np.zeros(problem.n_hyperarcs), q=np.zeros(problem.n_hyperarcs))


@dataclass
class ConvergenceTrace:
    """Recorded iterates. Long runs keep every ``stride``-th iteration plus the full tail."""
    iters: list[int] = field(default_factory=list)
    x: list[np.ndarray] = field(default_factory=list)
    q: list[np.ndarray] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    m: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.x)

    def append(self, t: int, state: SolverState, objective: float, residual: float) -> None:
        self.iters.append(t)
        self.x.append(state.x.copy())
        self.q.append(state.q.copy())
        self.m.append(state.m.copy())
        self.objective.append(objective)
        self.residual.append(residual)

    @property
    def total_rate(self) -> np.ndarray:
        return np.array([x.sum() for x in self.x])

    def last(self, n: int) -> "ConvergenceTrace":
        """Records covering the final ``n`` iterations."""
        if not self.iters:
            return ConvergenceTrace()
        cut = self.iters[-1] - n
        idx = [i for i, t in enumerate(self.iters) if t > cut]
        return ConvergenceTrace([self.iters[i] for i in idx], [self.x[i] for i in idx],
                                [self.q[i] for i in idx], [self.objective[i] for i in idx],
                                [self.residual[i] for i in idx], [self.m[i] for i in idx])

    def max_dual_change(self, n: int = 50) -> float:
        """Largest per-iteration change of any h-queue over the final ``n`` iterations."""
        tail = self.last(n + 1)
        if len(tail) < 2:
            return 0.0
        q = np.array(tail.q)
        return float(np.abs(np.diff(q, axis=0)).max())

    def to_csv(self, path: str | Path) -> None:
        """Columns: iter, x_<flow>..., sum_x, q_<hyperarc>..., objective, residual."""
        n_flows = len(self.x[0]) if self.x else 0
        n_h = len(self.q[0]) if self.q else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", *[f"x_{s}" for s in range(n_flows)], "sum_x",
                        *[f"q_{h}" for h in range(n_h)], "objective", "residual"])
            for t, x, q, obj, res in zip(self.iters, self.x, self.q, self.objective, self.residual):
                w.writerow([t, *[f"{v:.10g}" for v in x], f"{x.sum():.10g}",
                            *[f"{v:.10g}" for v in q], f"{obj:.10g}", f"{res:.10g}"])


def capacity_residual(problem: Problem, alpha: np.ndarray, x: np.ndarray, gamma: float,
                      q: np.ndarray | None = None) -> float:
    """Clique airtime overshoot; with prices, also slack on cliques holding a positive price."""
    usage = problem.clique_usage(alpha, x)
    gap = usage - gamma
    if q is not None:
        priced = (problem.clique_matrix & (q > 0)[None, :]).any(axis=1)
        gap = np.where(priced, np.abs(gap), gap)
    return float(max(0.0, gap.max(initial=0.0)))


def _disjoint_cliques(problem: Problem) -> np.ndarray | None:
    """Clique index per hyperarc when every hyperarc sits in exactly one clique."""
    cm = problem.clique_matrix
    if cm.size == 0 or not np.all(cm.sum(axis=0) == 1):
        return None
    return np.argmax(cm, axis=0).astype(np.intp)


def _resolve(problem: Problem, cfg: SolverConfig):
    gamma = problem.overprovision if cfg.overprovision is None else cfg.overprovision
    x_max = cfg.x_max if cfg.x_max is not None else 10.0 * float(problem.rates.max())
    return gamma, x_max


def _solve_numpy(problem: Problem, cfg: SolverConfig):
    gamma, x_max = _resolve(problem, cfg)
    st = SolverState.initial(problem, x_max)
    trace = ConvergenceTrace()
    calm = 0
    converged = False
    stride = max(1, cfg.max_iters // cfg.max_records)
    for t in range(1, cfg.max_iters + 1):
        st.iter = t
        st.m = solve_dominance(problem, st.alpha, st.x, st.mu_m, cfg.proximal_c)
        st.beta, st.alpha = solve_split_multihop(problem, st.q, st.m, st.mu_beta, cfg.proximal_c)
        x_new = solve_rate(problem, st.q, st.alpha, st.m, cfg.x_min, x_max)
        dx = float(np.abs(x_new - st.x).max())
        st.x = x_new
        st.tau = solve_schedule(problem, st.q, gamma)
        inflow = problem.code_load(st.alpha, st.x)
        q_new = update_duals(st.q, inflow, problem.rates, st.tau, cfg.step(t))
        dq = float(np.abs(q_new - st.q).max())
        st.q = q_new
        if t % cfg.anchor_period == 0:
            st.mu_m = st.m.copy()
            st.mu_beta = st.beta.copy()
        residual = capacity_residual(problem, st.alpha, st.x, gamma, st.q)
        if t % stride == 0 or t > cfg.max_iters - cfg.tail:
            trace.append(t, st, float(np.log(st.x).sum()), residual)
        calm = calm + 1 if max(dx, residual, dq) < cfg.tol else 0
        if calm >= cfg.window:
            converged = True
            break
    if trace.iters and trace.iters[-1] != st.iter:
        trace.append(st.iter, st, float(np.log(st.x).sum()), residual)
    return st, trace, converged


def _solve_compiled(problem: Problem, cfg: SolverConfig, clique_of: np.ndarray):
    from . import _kernel

    gamma, x_max = _resolve(problem, cfg)
    st = SolverState.initial(problem, x_max)
    stride = max(1, cfg.max_iters // cfg.max_records)
    n_rec = cfg.max_iters // stride + 1
    nf, nh, ne = problem.n_flows, problem.n_hyperarcs, problem.n_entries
    rec = dict(x=np.zeros((n_rec, nf)), q=np.zeros((n_rec, nh)), m=np.zeros((n_rec, ne)),
               obj=np.zeros(n_rec), res=np.zeros(n_rec), it=np.zeros(n_rec, dtype=np.int64))
    tail = max(2, cfg.tail)
    tl = dict(x=np.zeros((tail, nf)), q=np.zeros((tail, nh)), m=np.zeros((tail, ne)),
              obj=np.zeros(tail), res=np.zeros(tail))
    t_end, got, converged = _kernel.run(
        problem.entry_flow, problem.entry_hyperarc, problem.entry_partition,
        problem.code_groups, problem.code_hyperarc, problem.split_groups,
        clique_of, int(clique_of.max()) + 1, problem.rates.astype(float),
        st.x, st.alpha, st.m, st.beta, st.mu_m, st.mu_beta, st.tau, st.q,
        float(cfg.step_size), _kernel.SCHEDULES[cfg.step_schedule], float(cfg.proximal_c),
        int(cfg.anchor_period), int(cfg.max_iters), float(cfg.tol), float(gamma),
        float(cfg.x_min), float(x_max), int(cfg.window), stride, tail,
        rec["x"], rec["q"], rec["m"], rec["obj"], rec["res"], rec["it"],
        tl["x"], tl["q"], tl["m"], tl["obj"], tl["res"])
    st.iter = int(t_end)
    rows = {int(rec["it"][i]): (rec["x"][i], rec["q"][i], rec["m"][i], rec["obj"][i], rec["res"][i])
            for i in range(got)}
    for t in range(max(1, t_end - tail + 1), t_end + 1):
        s = t % tail
        rows[t] = (tl["x"][s], tl["q"][s], tl["m"][s], tl["obj"][s], tl["res"][s])
    trace = ConvergenceTrace()
    for t in sorted(rows):
        x, q, m, obj, res = rows[t]
        trace.iters.append(t)
        trace.x.append(x.copy())
        trace.q.append(q.copy())
        trace.m.append(m.copy())
        trace.objective.append(float(obj))
        trace.residual.append(float(res))
    return st, trace, bool(converged)


def solve(problem: Problem, config: SolverConfig | None = None, backend: str = "auto"):
    """Iterate dominance, splitting, rate, schedule and dual updates.

    Returns ``(state, trace, converged)``. Convergence means that over the last
    ``config.window`` iterations the rate change, the h-queue change and the
    capacity residual all stayed below ``tol``.

    ``backend="auto"`` runs the compiled loop when the cliques are disjoint and
    the numpy reference otherwise; ``"numpy"`` forces the reference.
    """
    cfg = config or SolverConfig()
    if backend not in ("auto", "numpy", "compiled"):
        raise ValueError(f"unknown backend {backend!r}")
    clique_of = _disjoint_cliques(problem)
    if backend == "compiled" and clique_of is None:
        raise ValueError("the compiled loop needs disjoint cliques")
    if backend != "numpy" and clique_of is not None:
        st, trace, converged = _solve_compiled(problem, cfg, clique_of)
    else:
        st, trace, converged = _solve_numpy(problem, cfg)
    if not converged:
        logger.info("solver stopped at max_iters=%d without meeting tol=%g", cfg.max_iters, cfg.tol)
    return st, trace, converged


class NUMSolver(BaseEstimator):
    """Estimator wrapper around :func:`solve`.

    ``fit`` accepts a :class:`~ncaqm.topology.Scenario`, a ``(hypergraph,
    catalog)`` pair or a prepared :class:`Problem`. After fitting, ``x_``,
    ``q_``, ``alpha_``, ``m_``, ``beta_``, ``tau_``, ``trace_`` and
    ``converged_`` hold the solution; ``predict(q)`` gives the rate response
    to arbitrary h-queue prices under the fitted splits and dominance weights.
    """

    def __init__(self, step_size=0.1, step_schedule="sqrt", proximal_c=1.0, anchor_period=5,
                 max_iters=2_000_000, tol=5e-4, overprovision=None, x_min=1e-4, x_max=None,
                 window=50, backend="auto", coding_depth=None):
        self.step_size = step_size
        self.step_schedule = step_schedule
        self.proximal_c = proximal_c
        self.anchor_period = anchor_period
        self.max_iters = max_iters
        self.tol = tol
        self.overprovision = overprovision
        self.x_min = x_min
        self.x_max = x_max
        self.window = window
        self.backend = backend
        self.coding_depth = coding_depth

    def _config(self) -> SolverConfig:
        return SolverConfig(step_size=self.step_size, step_schedule=self.step_schedule,
                            proximal_c=self.proximal_c, anchor_period=self.anchor_period,
                            max_iters=self.max_iters, tol=self.tol, overprovision=self.overprovision,
                            x_min=self.x_min, x_max=self.x_max, window=self.window)

    def fit(self, problem, y=None):
        self.problem_ = as_problem(problem, self.coding_depth)
        state, trace, converged = solve(self.problem_, self._config(), self.backend)
        self.state_ = state
        self.x_ = state.x
        self.q_ = state.q
        self.alpha_ = state.alpha
        self.m_ = state.m
        self.beta_ = state.beta
        self.tau_ = state.tau
        self.trace_ = trace
        self.converged_ = converged
        self.n_iter_ = state.iter
        return self

    def predict(self, q=None) -> np.ndarray:
        check_is_fitted(self, "x_")
        q = self.q_ if q is None else np.asarray(q, dtype=float)
        if q.shape != self.q_.shape:
            raise ValueError(f"expected {self.q_.shape[0]} h-queue prices, got {q.shape}")
        x_max = self.x_max if self.x_max is not None else 10.0 * float(self.problem_.rates.max())
        return solve_rate(self.problem_, q, self.alpha_, self.m_, self.x_min, x_max)

    def score(self, problem=None, y=None) -> float:
        """Total log utility of the fitted rates."""
        check_is_fitted(self, "x_")
        return float(np.log(self.x_).sum())

    @property
    def total_rate_(self) -> float:
        check_is_fitted(self, "x_")
        return float(self.x_.sum())

    def path_prices(self) -> np.ndarray:
        check_is_fitted(self, "x_")
        return path_price(self.problem_, self.q_, self.alpha_, self.m_)
