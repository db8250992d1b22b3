import numpy as np
import pytest

from hjbqvi.exceptions import NonConvergenceError
from hjbqvi.grid import build_uniform_grid
from hjbqvi.operators import discretize_controls
from hjbqvi.oracle import (
    brute_force_residual,
    brute_force_residual_stationary,
    solve_iterated_optimal_stopping,
)
from hjbqvi.penalty import solve_finite_horizon, solve_infinite_horizon
from hjbqvi.problem import builtin

OUTER_TOL = 1e-6


class TestIteratedOptimalStopping:
    def test_constant_converges_at_first_pass(self):
        p = builtin("constant", {"c": 5})
        g = build_uniform_grid(Q=2, M=8, N=8, T=1)
        sol = solve_iterated_optimal_stopping(p, g, outer_tol=OUTER_TOL)
        # The obstacle c - 1 never binds, so the first obstacle pass changes
        # nothing and the outer loop stops immediately.
        assert sol.diagnostics.outer_iterations == 1
        assert np.abs(sol.surface - 5.0).max() <= 1e-12

    def test_heat_matches_direct_solve(self):
        p = builtin("heat")
        g = build_uniform_grid(Q=4, M=32, N=8, T=1)
        c = discretize_controls(p, g.rho)
        sol_ios = solve_iterated_optimal_stopping(p, g, c, outer_tol=OUTER_TOL)
        sol_pen = solve_finite_horizon(p, g, c)
        assert sol_ios.diagnostics.outer_iterations == 1
        assert np.abs(sol_ios.surface - sol_pen.surface).max() <= OUTER_TOL

    def test_cash_monotone_iterates_and_agreement(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=16, N=12, T=3)   # rho = 0.25
        c = discretize_controls(p, g.rho)
        eps = 0.25
        sol_ios = solve_iterated_optimal_stopping(p, g, c, epsilon=eps,
                                                  outer_tol=OUTER_TOL)
        assert sol_ios.diagnostics.outer_iterations >= 2
        assert min(sol_ios.diagnostics.outer_min_increments) >= -1e-8
        sol_pen = solve_finite_horizon(p, g, c, epsilon=eps)
        gap = np.abs(sol_ios.surface - sol_pen.surface).max()
        assert gap <= 10 * (eps + OUTER_TOL)

    def test_exhausted_outer_budget_raises(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=8, N=6, T=3)
        with pytest.raises(NonConvergenceError, match="k_max"):
            solve_iterated_optimal_stopping(p, g, outer_tol=1e-14, k_max=1)

    def test_requires_finite_horizon(self):
        p = builtin("constant", {"beta": 0.5})
        g = build_uniform_grid(Q=2, M=4, N=1, T=1)
        with pytest.raises(ValueError, match="finite-horizon"):
            solve_iterated_optimal_stopping(p, g)


class TestBruteForceResidual:
    def test_penalty_solution_within_tolerance(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=12, N=9, T=3)
        c = discretize_controls(p, g.rho)
        sol = solve_finite_horizon(p, g, c, epsilon=0.2)
        assert brute_force_residual(sol, p, g, c, 0.2) <= 1e-8

    def test_constant_exact_surface_is_zero(self):
        # Dyadic spacing keeps every stencil cancellation exact in floats.
        p = builtin("constant", {"c": 5})
        g = build_uniform_grid(Q=2, M=8, N=4, T=1)
        c = discretize_controls(p, g.rho)
        surface = np.full((g.N + 1, g.n_nodes), 5.0)
        assert brute_force_residual(surface, p, g, c, 0.25) == 0.0

    def test_perturbation_is_detected_at_time_scale(self):
        # Bumping one entry shifts the time-difference term of the previous
        # row by 0.1/dt exactly; everything else is O(1).
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=12, N=9, T=3)
        c = discretize_controls(p, g.rho)
        sol = solve_finite_horizon(p, g, c, epsilon=0.2)
        surface = sol.surface.copy()
        surface[4][g.offset(0)] += 0.1
        value = brute_force_residual(surface, p, g, c, 0.2)
        assert value >= 0.1 / g.dt - 1.0

    def test_stationary_variant(self):
        p = builtin("constant", {"beta": 0.5})
        g = build_uniform_grid(Q=2, M=8, N=1, T=0.25)
        c = discretize_controls(p, g.rho)
        sol = solve_infinite_horizon(p, g, c)
        assert brute_force_residual_stationary(sol, p, g, c, sol.epsilon) <= 1e-8

    def test_terminal_mismatch_contributes(self):
        p = builtin("constant", {"c": 5})
        g = build_uniform_grid(Q=2, M=6, N=4, T=1)
        c = discretize_controls(p, g.rho)
        surface = np.full((g.N + 1, g.n_nodes), 5.0)
        surface[g.N][0] = 4.0
        assert brute_force_residual(surface, p, g, c, 0.25) >= 1.0
