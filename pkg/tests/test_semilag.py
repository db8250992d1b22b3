from dataclasses import replace

import numpy as np
import pytest

from hjbqvi.exceptions import SolverError
from hjbqvi.grid import build_boundary_refined_grid, build_uniform_grid
from hjbqvi.harness import Window, sup_error
from hjbqvi.matrices import analyze_matrix
from hjbqvi.operators import discretize_controls
from hjbqvi.penalty import solve_finite_horizon
from hjbqvi.problem import ProblemSpec, builtin
from hjbqvi.semilag import (
    TridiagonalMatrix,
    assemble_A,
    detect_inward_drift,
    overstep_threshold,
    sl_rhs,
    solve_semi_lagrangian,
    thomas_solve,
)


def drift_problem(drift, diffusion=1.0, b_bounds=(0.0, 0.0)):
    return ProblemSpec(
        drift=drift,
        diffusion=lambda x, b, s=diffusion: s + 0.0 * x,
        running_reward=lambda t, x, b: 0.0,
        terminal_reward=lambda x: 0.0 * x,
        impulse_shift=lambda t, x, z: z - x,
        impulse_cost=lambda t, x, z: -2.0 + 0.0 * z,
        impulse_bounds=lambda t, x: (-1.0, 1.0),
        control_bounds=b_bounds,
        horizon=1.0,
        diffusion_control_independent=True,
    )


class TestAssembleA:
    def test_zero_diffusion_gives_identity(self):
        p = drift_problem(lambda x, b: 0.0, diffusion=0.0)
        g = build_uniform_grid(Q=2, M=4, N=4, T=1)
        A = assemble_A(g, p)
        assert np.array_equal(A.to_dense(), np.eye(g.n_nodes))

    def test_unit_coefficients_three_node(self):
        p = drift_problem(lambda x, b: 0.0, diffusion=1.0)
        g = build_uniform_grid(Q=1, M=1, N=1, T=1)   # dt = dx = 1
        A = assemble_A(g, p)
        expected = np.array([
            [1.0, 0.0, 0.0],
            [-0.5, 2.0, -0.5],
            [0.0, 0.0, 1.0],
        ])
        assert np.allclose(A.to_dense(), expected)

    def test_always_strictly_dominant(self):
        p = builtin("cash")
        for M, N in [(8, 6), (16, 12), (32, 24)]:
            g = build_uniform_grid(Q=4, M=M, N=N, T=3)
            report = analyze_matrix(assemble_A(g, p).to_dense())
            assert report.strictly_dominant_ok and report.passed

    def test_rejects_control_dependent_diffusion(self):
        p = replace(builtin("cash"), diffusion_control_independent=False)
        g = build_uniform_grid(Q=4, M=8, N=6, T=3)
        with pytest.raises(ValueError, match="control-independent"):
            assemble_A(g, p)

    def test_inverse_is_nonnegative(self):
        # Monotonicity of the implicit step: solving against every basis
        # vector recovers the columns of the inverse.
        p = drift_problem(lambda x, b: 0.0, diffusion=1.3)
        g = build_uniform_grid(Q=2, M=5, N=4, T=1)
        A = assemble_A(g, p)
        for k in range(g.n_nodes):
            e = np.zeros(g.n_nodes)
            e[k] = 1.0
            col = thomas_solve(A, e)
            assert col.min() >= -1e-14


class TestSlRhs:
    def test_constant_data(self):
        p = builtin("constant", {"c": 7})
        g = build_uniform_grid(Q=2, M=8, N=8, T=1)
        c = discretize_controls(p, g.rho)
        step = sl_rhs(np.full(g.n_nodes, 7.0), 0.0, g, p, c)
        assert np.allclose(step.rhs, 7.0)
        assert not step.policy.intervene.any()

    def test_overstepping_clamps_and_counts(self):
        # Strong outward drift at the right edge: every foot point past Q
        # clamps to the boundary value and is counted.
        p = drift_problem(lambda x, b: 4.0 + 0.0 * x, diffusion=0.0)
        g = build_uniform_grid(Q=1, M=4, N=2, T=1)   # dt = 0.5, feet move +2
        c = discretize_controls(p, g.rho)
        u_next = g.nodes.copy()
        step = sl_rhs(u_next, 0.0, g, p, c)
        assert step.oversteps > 0
        assert step.interior_oversteps > 0
        # Foot of the right boundary node clamps to u at Q exactly.
        assert step.rhs[-1] == pytest.approx(max(1.0, -2.0 + u_next.max()))

    def test_matches_brute_force(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=10, N=6, T=3)
        c = discretize_controls(p, g.rho)
        rng = np.random.default_rng(9)
        for _ in range(5):
            u_next = rng.normal(size=g.n_nodes)
            t = float(rng.uniform(0, 2.5))
            step = sl_rhs(u_next, t, g, p, c)
            for i, x in enumerate(g.nodes):
                best = -np.inf
                for b in c.controls:
                    foot = x + float(p.drift(x, float(b))) * g.dt
                    best = max(best, float(np.interp(foot, g.nodes, u_next))
                               + float(p.running_reward(t, x, float(b))) * g.dt)
                jump = -np.inf
                for z in c.impulse_values(t + g.dt, float(x)):
                    target = x + float(p.impulse_shift(t + g.dt, x, float(z)))
                    jump = max(jump, float(np.interp(target, g.nodes, u_next))
                               + float(p.impulse_cost(t + g.dt, x, float(z))))
                assert step.rhs[i] == pytest.approx(max(best, jump), abs=1e-12)

    def test_monotone_in_next_values(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=10, N=6, T=3)
        c = discretize_controls(p, g.rho)
        rng = np.random.default_rng(31)
        for _ in range(10):
            lo = rng.normal(size=g.n_nodes)
            hi = lo + rng.uniform(0, 1, size=g.n_nodes)
            assert np.all(sl_rhs(lo, 0.0, g, p, c).rhs
                          <= sl_rhs(hi, 0.0, g, p, c).rhs + 1e-12)


class TestThomasSolve:
    def test_identity(self):
        n = 7
        A = TridiagonalMatrix(lower=np.zeros(n), diag=np.ones(n), upper=np.zeros(n))
        rhs = np.arange(n, dtype=float)
        assert np.array_equal(thomas_solve(A, rhs), rhs)

    def test_constant_vector_preserved(self):
        # Interior row sums equal one, so constants are reproduced exactly.
        p = drift_problem(lambda x, b: 0.0, diffusion=1.0)
        g = build_uniform_grid(Q=1, M=1, N=1, T=1)
        A = assemble_A(g, p)
        assert np.allclose(thomas_solve(A, np.ones(3)), 1.0)

    def test_against_dense_solver(self):
        rng = np.random.default_rng(12)
        for n in (3, 9, 33):
            lower = np.concatenate(([0.0], rng.uniform(-1, 0, n - 1)))
            upper = np.concatenate((rng.uniform(-1, 0, n - 1), [0.0]))
            diag = np.abs(lower) + np.abs(upper) + rng.uniform(0.5, 2.0, n)
            A = TridiagonalMatrix(lower=lower, diag=diag, upper=upper)
            rhs = rng.normal(size=n)
            x = thomas_solve(A, rhs)
            ref = np.linalg.solve(A.to_dense(), rhs)
            assert np.abs(x - ref).max() <= 1e-12

    def test_zero_pivot_is_internal_error(self):
        A = TridiagonalMatrix(lower=np.array([0.0, 1.0]),
                              diag=np.array([0.0, 1.0]),
                              upper=np.array([1.0, 0.0]))
        with pytest.raises(SolverError, match="pivot"):
            thomas_solve(A, np.ones(2))

    def test_size_mismatch(self):
        A = TridiagonalMatrix(lower=np.zeros(3), diag=np.ones(3), upper=np.zeros(3))
        with pytest.raises(ValueError):
            thomas_solve(A, np.ones(4))


class TestSolveSemiLagrangian:
    def test_constant_surface_exact(self):
        p = builtin("constant", {"c": 5})
        g = build_uniform_grid(Q=2, M=16, N=16, T=1)
        sol = solve_semi_lagrangian(p, g)
        assert np.abs(sol.surface - 5.0).max() <= 1e-12

    def test_heat_first_order(self):
        p = builtin("heat")
        window = Window((0.0, 1.0), (-2.0, 2.0))
        errors = []
        for M, N in [(40, 10), (80, 20)]:
            g = build_uniform_grid(Q=4, M=M, N=N, T=1)
            sol = solve_semi_lagrangian(p, g)
            errors.append(sup_error(sol, p.exact, window))
        assert errors[1] < errors[0]
        assert np.log2(errors[0] / errors[1]) == pytest.approx(1.0, abs=0.35)

    def test_stability_bound_every_step(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=16, N=12, T=3)
        sol = solve_semi_lagrangian(p, g)
        bound = 2.0 + 2.0 * 3.0   # |g| <= 2, |f| <= 2, T = 3
        assert max(abs(v) for v in sol.diagnostics.step_min) <= bound + 1e-8
        assert max(abs(v) for v in sol.diagnostics.step_max) <= bound + 1e-8

    def test_agrees_with_penalty_under_refinement(self):
        p = builtin("cash")
        window = Window((0.0, 3.0), (-2.0, 2.0))
        diffs = []
        for rho in (0.2, 0.1):
            g = build_uniform_grid(Q=4, M=int(4 / rho), N=int(3 / rho), T=3)
            c = discretize_controls(p, g.rho)
            diffs.append(sup_error(solve_finite_horizon(p, g, c),
                                   solve_semi_lagrangian(p, g, c), window))
        assert diffs[1] < diffs[0]

    def test_requires_finite_horizon(self):
        p = builtin("cash", {"beta": 0.5})
        g = build_uniform_grid(Q=4, M=8, N=1, T=1)
        with pytest.raises(ValueError, match="finite-horizon"):
            solve_semi_lagrangian(p, g)


class TestOverstepping:
    def test_uniform_grid_boundary_feet_clamp(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=20, N=15, T=3)
        sol = solve_semi_lagrangian(p, g)
        assert sol.diagnostics.oversteps >= 1
        assert sol.diagnostics.interior_oversteps == 0

    def test_refined_grid_has_no_interior_oversteps_below_threshold(self):
        p = builtin("cash")
        for rho in (0.2, 0.1, 0.05):
            g = build_boundary_refined_grid(Q=4, rho=rho, c_b=1.0,
                                            N=int(3 / rho), T=3)
            c = discretize_controls(p, g.rho)
            threshold = overstep_threshold(p, g, c)
            assert rho <= threshold
            sol = solve_semi_lagrangian(p, g, c)
            assert sol.diagnostics.interior_oversteps == 0

    def test_threshold_formula(self):
        # c_b rho^{3/4} >= |drift| c_t rho  <=>  rho <= (c_b / (|drift| c_t))^4.
        p = builtin("cash")   # |drift| = b_max = 0.5
        g = build_boundary_refined_grid(Q=4, rho=0.1, c_b=1.0, N=30, T=3)
        c = discretize_controls(p, g.rho)
        assert overstep_threshold(p, g, c) == pytest.approx((1.0 / (0.5 * g.c_t)) ** 4)

    def test_inward_drift_detected(self):
        pulled_in = drift_problem(lambda x, b: -x, diffusion=1.0)
        g = build_uniform_grid(Q=2, M=8, N=4, T=1)
        c = discretize_controls(pulled_in, g.rho)
        assert detect_inward_drift(pulled_in, g, c)
        sol = solve_semi_lagrangian(pulled_in, g, c)
        assert sol.diagnostics.inward_drift is True
        assert sol.diagnostics.oversteps == 0

    def test_outward_drift_not_inward(self):
        p = builtin("cash")
        g = build_uniform_grid(Q=4, M=8, N=6, T=3)
        c = discretize_controls(p, g.rho)
        assert not detect_inward_drift(p, g, c)
