"""Semi-Lagrangian scheme for control-independent diffusion.

Advection is discretized along characteristics: the time-plus-drift part of
the generator is replaced by the difference quotient

    ( interp(u^{n+1}, x_j + drift(x_j, b) dt) - u^n_j ) / dt,

and the intervention maximum is taken from the already-known time level
n+1.  What remains implicit is only the diffusion, so each timestep reduces
to one tridiagonal solve A u^n = rhs with

    (A u^n)_j = u^n_j - 1/2 diffusion(x_j)^2 (D2 u^n)_j dt,
    rhs_j     = max( max_b { interp(u^{n+1}, x_j + drift dt) + f dt },
                     (M u^{n+1})_j ).

A has identity boundary rows (zero boundary stencils) and is strictly
diagonally dominant, hence nonsingular.

Foot points x_j + drift dt can leave [-Q, Q] on fixed-Q uniform grids; the
interpolant then clamps and the step is counted as an overstep.  Grids with
shrinking-sublinear boundary cells remove interior oversteps once rho drops
below ``overstep_threshold``; inward drift at both ends removes them on any
grid and is detected and reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SolverError
from .grid import BOUNDARY_REFINED, UNIFORM, SpaceTimeGrid
from .matrices import analyze_matrix
from .operators import DiscreteControls, InterventionTable, discretize_controls, interp_weights
from .problem import ProblemSpec, eval_on
from .solution import FINITE, PenaltyPolicy, SolveDiagnostics, Solution, SolverConfig


@dataclass(frozen=True)
class TridiagonalMatrix:
    lower: np.ndarray   # entry i couples row i to column i-1 (lower[0] unused)
    diag: np.ndarray
    upper: np.ndarray   # entry i couples row i to column i+1 (upper[-1] unused)

    @property
    def size(self) -> int:
        return self.diag.size

    def matvec(self, u: np.ndarray) -> np.ndarray:
        out = self.diag * u
        out[1:] += self.lower[1:] * u[:-1]
        out[:-1] += self.upper[:-1] * u[1:]
        return out

    def to_dense(self) -> np.ndarray:
        n = self.size
        dense = np.diag(self.diag)
        dense[np.arange(1, n), np.arange(n - 1)] = self.lower[1:]
        dense[np.arange(n - 1), np.arange(1, n)] = self.upper[:-1]
        return dense


def _diffusion_values(problem: ProblemSpec, grid: SpaceTimeGrid) -> np.ndarray:
    b_ref = problem.control_bounds[0]
    return eval_on(problem.diffusion, grid.nodes, b_ref)


def assemble_A(grid: SpaceTimeGrid, problem: ProblemSpec) -> TridiagonalMatrix:
    """Implicit diffusion matrix; identity rows at j = +-M."""
    if not problem.diffusion_control_independent:
        raise ValueError(
            "the semi-Lagrangian scheme requires a control-independent "
            "diffusion coefficient (diffusion(x, b) = diffusion(x))"
        )
    n = grid.n_nodes
    lower = np.zeros(n)
    diag = np.ones(n)
    upper = np.zeros(n)
    if n >= 3:
        h = np.diff(grid.nodes)
        h_minus, h_plus = h[:-1], h[1:]
        s2dt = _diffusion_values(problem, grid)[1:-1] ** 2 * grid.dt
        diag[1:-1] += s2dt / (h_minus * h_plus)
        lower[1:-1] = -s2dt / (h_minus * (h_minus + h_plus))
        upper[1:-1] = -s2dt / (h_plus * (h_minus + h_plus))
    A = TridiagonalMatrix(lower=lower, diag=diag, upper=upper)
    report = analyze_matrix(A.to_dense())
    if not (report.passed and report.strictly_dominant_ok):
        raise SolverError(f"semi-Lagrangian matrix lost strict dominance: {report.witness}")
    return A


@dataclass
class SLStep:
    """Explicit right-hand side of one timestep, with its policy record and
    the clamped-foot-point counts."""

    rhs: np.ndarray
    policy: PenaltyPolicy
    oversteps: int
    interior_oversteps: int


def sl_rhs(u_next, t, grid: SpaceTimeGrid, problem: ProblemSpec,
           controls: DiscreteControls) -> SLStep:
    """max( best continuation along characteristics, best jump ) per node.

    Continuation and jump candidates both read u^{n+1}.  Ties inside either
    maximum go to the smallest control or impulse; a tie between the two
    branches counts as continuation, matching the strict-intervention rule
    of the penalty scheme.
    """
    u_next = np.asarray(u_next, dtype=float)
    nodes = grid.nodes
    n = nodes.size
    dt = grid.dt
    Q = grid.Q

    best_cont = np.full(n, -np.inf)
    best_b = np.zeros(n)
    oversteps = 0
    interior_oversteps = 0
    interior = np.zeros(n, dtype=bool)
    interior[1:-1] = True
    for b in controls.controls:
        feet = nodes + eval_on(problem.drift, nodes, b) * dt
        outside = np.abs(feet) > Q
        oversteps += int(outside.sum())
        interior_oversteps += int((outside & interior).sum())
        values = np.interp(feet, nodes, u_next) \
            + eval_on(problem.running_reward, t, nodes, b) * dt
        better = values > best_cont
        best_cont = np.where(better, values, best_cont)
        best_b[better] = b

    jump = InterventionTable(problem, grid, controls, t + dt).apply(u_next)
    intervene = jump.values > best_cont
    rhs = np.where(intervene, jump.values, best_cont)
    policy = PenaltyPolicy(controls=best_b, intervene=intervene, impulses=jump.impulses)
    return SLStep(rhs=rhs, policy=policy, oversteps=oversteps,
                  interior_oversteps=interior_oversteps)


def thomas_solve(A: TridiagonalMatrix, rhs: np.ndarray) -> np.ndarray:
    """Tridiagonal elimination with a residual guard.

    Pivots cannot vanish for strictly dominant input; a zero pivot or a
    residual above 1e-10 * (1 + |rhs|) is escalated as an internal error.
    """
    n = A.size
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size != n:
        raise ValueError(f"rhs length {rhs.size} does not match matrix size {n}")
    diag = A.diag.copy()
    out = rhs.copy()
    for i in range(1, n):
        if diag[i - 1] == 0.0:
            raise SolverError(f"zero pivot in tridiagonal elimination at row {i - 1}")
        w = A.lower[i] / diag[i - 1]
        diag[i] -= w * A.upper[i - 1]
        out[i] -= w * out[i - 1]
    if diag[-1] == 0.0:
        raise SolverError(f"zero pivot in tridiagonal elimination at row {n - 1}")
    out[-1] /= diag[-1]
    for i in range(n - 2, -1, -1):
        out[i] = (out[i] - A.upper[i] * out[i + 1]) / diag[i]
    residual = float(np.abs(A.matvec(out) - rhs).max())
    if residual > 1e-10 * (1.0 + float(np.abs(rhs).max())):
        raise SolverError(f"tridiagonal solve residual {residual:.3g} too large")
    return out


def norm_drift(problem: ProblemSpec, grid: SpaceTimeGrid,
               controls: DiscreteControls) -> float:
    """max |drift| over the grid nodes and the discrete control set."""
    worst = 0.0
    for b in controls.controls:
        worst = max(worst, float(np.abs(eval_on(problem.drift, grid.nodes, b)).max()))
    return worst


def detect_inward_drift(problem: ProblemSpec, grid: SpaceTimeGrid,
                        controls: DiscreteControls) -> bool:
    """True when drift points inward at both ends for every discrete control,
    in which case no foot point can leave [-Q, Q] from an interior node."""
    left = eval_on(problem.drift, -grid.Q, controls.controls)
    right = eval_on(problem.drift, grid.Q, controls.controls)
    return bool(np.all(left >= 0.0) and np.all(right <= 0.0))


def overstep_threshold(problem: ProblemSpec, grid: SpaceTimeGrid,
                       controls: DiscreteControls) -> float:
    """Largest rho at which no interior foot point can leave [-Q, Q].

    Boundary-refined grids: the outer cell width c_b rho**(3/4) must beat the
    maximal step |drift| c_t rho, giving rho <= (c_b / (|drift| c_t))**4.
    Uniform grids: the margin is the rho-proportional cell itself, so the
    answer is all rho or none depending on whether |drift| c_t <= c_x.
    """
    mu_max = norm_drift(problem, grid, controls)
    if mu_max == 0.0:
        return np.inf
    if grid.mode == BOUNDARY_REFINED:
        return (grid.c_b / (mu_max * grid.c_t)) ** 4
    if grid.mode == UNIFORM:
        return np.inf if mu_max * grid.c_t <= grid.c_x else 0.0
    raise ValueError(f"no overstep threshold for grid mode {grid.mode!r}")


def solve_semi_lagrangian(problem: ProblemSpec, grid: SpaceTimeGrid,
                          controls: DiscreteControls | None = None,
                          cfg: SolverConfig | None = None) -> Solution:
    """Backward induction: one tridiagonal solve per timestep from u^N = g."""
    if not problem.finite_horizon:
        raise ValueError("the semi-Lagrangian scheme is finite-horizon only")
    controls = controls or discretize_controls(problem, grid.rho)
    A = assemble_A(grid, problem)

    diagnostics = SolveDiagnostics()
    diagnostics.matrix_systems_checked = 1
    diagnostics.matrix_systems_passed = 1
    report = analyze_matrix(A.to_dense())
    diagnostics.min_dominance_margin = report.min_margin
    diagnostics.inward_drift = detect_inward_drift(problem, grid, controls)

    n_nodes = grid.n_nodes
    surface = np.empty((grid.N + 1, n_nodes))
    surface[grid.N] = eval_on(problem.terminal_reward, grid.nodes)
    policies: list[PenaltyPolicy | None] = [None] * (grid.N + 1)
    u = surface[grid.N]
    for n in range(grid.N - 1, -1, -1):
        step = sl_rhs(u, n * grid.dt, grid, problem, controls)
        u = thomas_solve(A, step.rhs)
        surface[n] = u
        policies[n] = step.policy
        diagnostics.oversteps += step.oversteps
        diagnostics.interior_oversteps += step.interior_oversteps
        diagnostics.step_min.append(float(u.min()))
        diagnostics.step_max.append(float(u.max()))
    epsilon = float((cfg or SolverConfig()).c_eps * grid.rho)
    return Solution(grid=grid, scheme="semilagrangian", horizon=FINITE,
                    surface=surface, policies=policies,
                    diagnostics=diagnostics, epsilon=epsilon)


def scheme_row(j, center, u_n, u_next, obstacle_value, t, grid, problem,
               controls) -> float:
    """Semi-Lagrangian scheme value at one node with node value and obstacle
    pinned; used by the monotonicity checker (min of the two branches)."""
    i = grid.offset(j)
    u_loc = np.array(u_n, dtype=float)
    u_loc[i] = center
    x = grid.node(j)
    dt = grid.dt
    if abs(j) == grid.M:
        d2 = 0.0
    else:
        h_minus = grid.nodes[i] - grid.nodes[i - 1]
        h_plus = grid.nodes[i + 1] - grid.nodes[i]
        d2 = 2.0 * (
            u_loc[i - 1] / (h_minus * (h_minus + h_plus))
            - center / (h_minus * h_plus)
            + u_loc[i + 1] / (h_plus * (h_minus + h_plus))
        )
    s2 = float(problem.diffusion(x, problem.control_bounds[0])) ** 2
    best = -np.inf
    for b in controls.controls:
        foot = x + float(problem.drift(x, float(b))) * dt
        k, alpha = interp_weights(grid.nodes, foot)
        moved = (1.0 - alpha) * u_next[k] + alpha * u_next[min(k + 1, u_next.size - 1)]
        val = (float(moved) - center) / dt + 0.5 * s2 * d2 \
            + float(problem.running_reward(t, x, float(b)))
        best = max(best, val)
    return min(-best, center - obstacle_value - 0.5 * s2 * d2 * dt)
