from .problem import Problem
from .solver import ConvergenceTrace, NUMSolver, SolverConfig, SolverState, solve
from .subproblems import (project_simplex, solve_dominance, solve_rate, solve_schedule,
                          solve_split_multihop, solve_split_onehop, update_duals)
from .oracle import brute_force_optimum, simplex_grid
