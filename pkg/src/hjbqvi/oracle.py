"""Reference computations used to audit the direct solvers.

Two independent routes:

* :func:`solve_iterated_optimal_stopping` solves the quasi-variational
  inequality as the monotone limit of variational inequalities: iterate k
  solves the problem with the obstacle frozen at the best-jump values of
  iterate k-1, so each pass is an optimal-stopping problem.  Iterates are
  pointwise nondecreasing.  The inner solves reuse the penalty timestep
  with a frozen obstacle, memory be damned: every iterate keeps its full
  surface, which is exactly the cost that motivates the direct schemes.

* :func:`brute_force_residual` re-evaluates the discrete penalty equations
  with plain scalar loops that share no code with the solver's assembled
  systems (only the problem data and the discrete control sets).
"""

from __future__ import annotations

from bisect import bisect_right

import numpy as np

from .exceptions import NonConvergenceError
from .grid import SpaceTimeGrid
from .operators import DiscreteControls, InterventionTable, discretize_controls
from .penalty import default_epsilon, penalty_timestep
from .problem import ProblemSpec, eval_on
from .solution import FINITE, PenaltyPolicy, SolveDiagnostics, Solution, SolverConfig


def solve_iterated_optimal_stopping(problem: ProblemSpec, grid: SpaceTimeGrid,
                                    controls: DiscreteControls | None = None,
                                    epsilon: float | None = None,
                                    outer_tol: float = 1e-6,
                                    k_max: int = 50,
                                    cfg: SolverConfig | None = None) -> Solution:
    """Iterated optimal stopping up to sup-norm tolerance between iterates.

    The textbook iteration starts from minus infinity; numerically the first
    iterate is the no-intervention solve (a frozen obstacle of -inf), which
    still lies below the solution, so the monotone bracketing survives.  The
    terminal row of each pass is max(g, frozen obstacle at T), which under
    the terminal no-gain hypothesis is just g.
    """
    if not problem.finite_horizon:
        raise ValueError("iterated optimal stopping needs a finite-horizon problem")
    cfg = cfg or SolverConfig()
    controls = controls or discretize_controls(problem, grid.rho)
    epsilon = default_epsilon(grid, cfg) if epsilon is None else float(epsilon)
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")

    n_nodes = grid.n_nodes
    dt = grid.dt
    tables = [InterventionTable(problem, grid, controls, n * dt) for n in range(grid.N + 1)]
    g_vals = eval_on(problem.terminal_reward, grid.nodes)
    diagnostics = SolveDiagnostics()

    def solve_frozen(obstacles, terminal):
        surface = np.empty((grid.N + 1, n_nodes))
        surface[grid.N] = terminal
        policies: list[PenaltyPolicy | None] = [None] * (grid.N + 1)
        u = terminal
        for n in range(grid.N - 1, -1, -1):
            u, step_diag = penalty_timestep(u, n * dt, grid, problem, controls,
                                            epsilon, cfg, obstacle=obstacles[n])
            surface[n] = u
            policies[n] = step_diag.policy
            diagnostics.record_step(step_diag)
        return surface, policies

    no_obstacle = [np.full(n_nodes, -np.inf)] * grid.N
    surface, policies = solve_frozen(no_obstacle, g_vals)

    converged = False
    for _ in range(k_max):
        obstacles = [tables[n].apply(surface[n]).values for n in range(grid.N + 1)]
        terminal = np.maximum(g_vals, obstacles[grid.N])
        new_surface, policies = solve_frozen(obstacles, terminal)
        diff = new_surface - surface
        diagnostics.outer_changes.append(float(np.abs(diff).max()))
        diagnostics.outer_min_increments.append(float(diff.min()))
        diagnostics.outer_iterations += 1
        surface = new_surface
        if diagnostics.outer_changes[-1] < outer_tol:
            converged = True
            break
    if not converged:
        raise NonConvergenceError(
            f"iterated optimal stopping: k_max={k_max} passes left a sup change "
            f"of {diagnostics.outer_changes[-1]:.3g} (outer_tol {outer_tol:.3g})",
            history=diagnostics.outer_changes,
        )
    return Solution(grid=grid, scheme="ios", horizon=FINITE, surface=surface,
                    policies=policies, diagnostics=diagnostics, epsilon=epsilon)


def _interp_scalar(nodes, values, x):
    if x <= nodes[0]:
        return values[0]
    if x >= nodes[-1]:
        return values[-1]
    k = bisect_right(nodes, x) - 1
    weight = (x - nodes[k]) / (nodes[k + 1] - nodes[k])
    return (1.0 - weight) * values[k] + weight * values[k + 1]


def _row_residual(problem, nodes, n_nodes, zs, t, dt_term, i, x, u, u_next, bs, epsilon):
    best = -np.inf
    for b in bs:
        mu = float(problem.drift(x, b))
        sg = float(problem.diffusion(x, b))
        if 0 < i < n_nodes - 1:
            if mu >= 0.0:
                first = (u[i + 1] - u[i]) / (nodes[i + 1] - nodes[i])
            else:
                first = (u[i] - u[i - 1]) / (nodes[i] - nodes[i - 1])
            hm = nodes[i] - nodes[i - 1]
            hp = nodes[i + 1] - nodes[i]
            second = 2.0 * (u[i - 1] / (hm * (hm + hp))
                            - u[i] / (hm * hp)
                            + u[i + 1] / (hp * (hm + hp)))
        else:
            first = second = 0.0
        if dt_term is not None:
            time_part = (u_next[i] - u[i]) / dt_term
        else:
            time_part = -problem.discount * u[i]
        val = time_part + mu * first + 0.5 * sg * sg * second \
            + float(problem.running_reward(t, x, b))
        if val > best:
            best = val
    jump_best = -np.inf
    for z in zs:
        z = float(z)
        target = x + float(problem.impulse_shift(t, x, z))
        gain = _interp_scalar(nodes, u, target) + float(problem.impulse_cost(t, x, z))
        if gain > jump_best:
            jump_best = gain
    penalty_part = max(jump_best - u[i], 0.0) / epsilon
    return -best - penalty_part


def brute_force_residual(sol, problem: ProblemSpec, grid: SpaceTimeGrid,
                         controls: DiscreteControls, epsilon: float) -> float:
    """Loop-based re-evaluation of the penalty equations over a full surface.

    Returns the worst residual over all interior-time rows plus the worst
    terminal mismatch |u^N_j - g(x_j)|.  Accepts a Solution or a bare
    surface array.
    """
    surface = getattr(sol, "surface", sol)
    nodes = [float(x) for x in grid.nodes]
    n_nodes = len(nodes)
    n_steps = surface.shape[0] - 1
    dt = float(grid.dt)
    bs = [float(b) for b in controls.controls]

    terminal_gap = 0.0
    for i, x in enumerate(nodes):
        gap = abs(float(surface[n_steps][i]) - float(problem.terminal_reward(x)))
        terminal_gap = max(terminal_gap, gap)

    worst = 0.0
    for n in range(n_steps):
        t = n * dt
        u = [float(v) for v in surface[n]]
        u_next = [float(v) for v in surface[n + 1]]
        for i, x in enumerate(nodes):
            zs = [float(z) for z in controls.impulse_values(t, x)]
            row = _row_residual(problem, nodes, n_nodes, zs, t, dt, i, x,
                                u, u_next, bs, epsilon)
            worst = max(worst, abs(row))
    return worst + terminal_gap


def brute_force_residual_stationary(sol, problem: ProblemSpec, grid: SpaceTimeGrid,
                                    controls: DiscreteControls, epsilon: float) -> float:
    """Same re-evaluation for a stationary (discounted) solve."""
    surface = getattr(sol, "surface", sol)
    u = [float(v) for v in np.atleast_2d(surface)[0]]
    nodes = [float(x) for x in grid.nodes]
    n_nodes = len(nodes)
    bs = [float(b) for b in controls.controls]
    worst = 0.0
    for i, x in enumerate(nodes):
        zs = [float(z) for z in controls.impulse_values(0.0, x)]
        row = _row_residual(problem, nodes, n_nodes, zs, 0.0, None, i, x,
                            u, u, bs, epsilon)
        worst = max(worst, abs(row))
    return worst
