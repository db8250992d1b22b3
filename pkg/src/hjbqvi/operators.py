"""Discrete spatial operators on grid functions.

A grid function is a plain float array of length 2M+1; entry ``i`` holds the
value at node ``x_{i-M}``.  Public operations take the signed node index
``j`` in [-M, M].

The stencils follow the monotone implicit discretization:

* three-point (divided-difference) second difference, zero at j = +-M,
* first difference upwinded on the sign of the local drift, zero at j = +-M
  (zero boundary stencils impose a Neumann condition at +-Q),
* linear interpolation with convex weights, clamped to the boundary values
  outside [-Q, Q],
* intervention maximum over the discretized impulse set,
  (max_z { interp(u, x_j + shift) + cost }), ties to the smallest z.

Everything here is pure given immutable inputs; per-node work can run in
parallel with no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .grid import SpaceTimeGrid
from .problem import ProblemSpec, eval_on


def second_difference(u: np.ndarray, grid: SpaceTimeGrid, j: int) -> float:
    """Three-point second difference at node j; 0 at j = +-M.

    On uniform grids this is (u_{j-1} - 2 u_j + u_{j+1}) / dx^2; on
    non-uniform grids the standard divided-difference generalization.
    """
    i = grid.offset(j)
    if abs(j) == grid.M:
        return 0.0
    h_minus = grid.nodes[i] - grid.nodes[i - 1]
    h_plus = grid.nodes[i + 1] - grid.nodes[i]
    return 2.0 * (
        u[i - 1] / (h_minus * (h_minus + h_plus))
        - u[i] / (h_minus * h_plus)
        + u[i + 1] / (h_plus * (h_minus + h_plus))
    )


def upwind_first_difference(u: np.ndarray, grid: SpaceTimeGrid, j: int, drift: float) -> float:
    """Forward difference for drift >= 0, backward for drift < 0; 0 at j = +-M."""
    i = grid.offset(j)
    if abs(j) == grid.M:
        return 0.0
    if drift >= 0.0:
        return (u[i + 1] - u[i]) / (grid.nodes[i + 1] - grid.nodes[i])
    return (u[i] - u[i - 1]) / (grid.nodes[i] - grid.nodes[i - 1])


def interp_weights(nodes: np.ndarray, x: float) -> tuple[int, float]:
    """Index k and weight a with interp = (1-a) u_k + a u_{k+1}, a in [0, 1).

    Outside the grid the value clamps: the returned weight is 0 and k is the
    nearest boundary offset, so the single coupling carries full weight.
    """
    if x <= nodes[0]:
        return 0, 0.0
    if x >= nodes[-1]:
        return nodes.size - 1, 0.0
    k = int(np.searchsorted(nodes, x, side="right")) - 1
    alpha = (x - nodes[k]) / (nodes[k + 1] - nodes[k])
    return k, float(alpha)


def interp_weights_many(nodes: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`interp_weights` with identical clamp semantics."""
    xs = np.asarray(xs, dtype=float)
    k = np.searchsorted(nodes, xs, side="right") - 1
    k = np.clip(k, 0, nodes.size - 2)
    alpha = (xs - nodes[k]) / (nodes[k + 1] - nodes[k])
    left = xs <= nodes[0]
    right = xs >= nodes[-1]
    k[left] = 0
    alpha[left] = 0.0
    k[right] = nodes.size - 1
    alpha[right] = 0.0
    return k, alpha


def interp(u: np.ndarray, grid: SpaceTimeGrid, x: float) -> float:
    """Monotone linear interpolation of a grid function, clamped outside [-Q, Q]."""
    k, alpha = interp_weights(grid.nodes, x)
    if alpha == 0.0:
        return float(u[k])
    return float((1.0 - alpha) * u[k] + alpha * u[k + 1])


def apply_generator(u: np.ndarray, grid: SpaceTimeGrid, j: int, b: float,
                    problem: ProblemSpec) -> float:
    """Discrete generator drift u_x + 1/2 diffusion^2 u_xx at node j, control b."""
    x = grid.node(j)
    drift = float(problem.drift(x, b))
    diffusion = float(problem.diffusion(x, b))
    return drift * upwind_first_difference(u, grid, j, drift) \
        + 0.5 * diffusion * diffusion * second_difference(u, grid, j)


def generator_rows(u: np.ndarray, grid: SpaceTimeGrid, drift: np.ndarray,
                   diffusion: np.ndarray) -> np.ndarray:
    """Vector of generator values at every node for given coefficient vectors.

    ``drift`` and ``diffusion`` are per-node coefficient arrays (for one
    fixed control).  Boundary entries are zero.
    """
    out = np.zeros_like(u)
    if u.size < 3:
        return out
    h = np.diff(grid.nodes)
    h_minus, h_plus = h[:-1], h[1:]
    forward = (u[2:] - u[1:-1]) / h_plus
    backward = (u[1:-1] - u[:-2]) / h_minus
    mu = drift[1:-1]
    first = np.where(mu >= 0.0, forward, backward)
    second = 2.0 * (
        u[:-2] / (h_minus * (h_minus + h_plus))
        - u[1:-1] / (h_minus * h_plus)
        + u[2:] / (h_plus * (h_minus + h_plus))
    )
    out[1:-1] = mu * first + 0.5 * diffusion[1:-1] ** 2 * second
    return out


def uniform_sample(lo: float, hi: float, resolution: float) -> np.ndarray:
    """Endpoints-included uniform sample with ceil(width / resolution) + 1 points."""
    if hi <= lo:
        return np.array([float(lo)])
    count = int(np.ceil((hi - lo) / resolution)) + 1
    return np.linspace(lo, hi, count)


@dataclass
class DiscreteControls:
    """Finite control and impulse sets at refinement rho.

    ``controls`` samples the control interval; ``impulse_values(t, x)``
    samples the impulse interval at that point (memoized, since the solvers
    revisit the same (t, x) many times per timestep).  Both include their
    interval endpoints, and their spacing is at most rho, so the Hausdorff
    distance to the continuous sets is at most rho / 2.
    """

    problem: ProblemSpec
    rho: float
    controls: np.ndarray
    _impulse_cache: dict = field(default_factory=dict, repr=False)

    def impulse_values(self, t: float, x: float) -> np.ndarray:
        key = (float(t), float(x))
        cached = self._impulse_cache.get(key)
        if cached is None:
            lo, hi = self.problem.impulse_bounds(t, x)
            if hi < lo:
                raise ValueError(f"empty impulse set at (t={t!r}, x={x!r}): [{lo!r}, {hi!r}]")
            cached = uniform_sample(float(lo), float(hi), self.rho)
            self._impulse_cache[key] = cached
        return cached


def discretize_controls(problem: ProblemSpec, rho: float) -> DiscreteControls:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    lo, hi = problem.control_bounds
    return DiscreteControls(problem=problem, rho=float(rho),
                            controls=uniform_sample(float(lo), float(hi), rho))


class InterventionResult(NamedTuple):
    values: np.ndarray    # best jump value per node
    impulses: np.ndarray  # achieving z per node (smallest on ties)


class InterventionTable:
    """Precomputed jump targets and costs for one time level.

    The impulse candidates, their interpolation weights and their costs
    depend only on (t, x_j); building them once lets repeated applications
    to changing iterates run as pure array arithmetic.  When every node has
    the same number of impulse candidates (the usual case), construction and
    application are fully vectorized over nodes; ragged impulse sets fall
    back to a per-node loop.
    """

    def __init__(self, problem: ProblemSpec, grid: SpaceTimeGrid,
                 controls: DiscreteControls, t: float):
        self.grid = grid
        self.t = float(t)
        nodes = grid.nodes
        zs_all = [controls.impulse_values(t, float(x)) for x in nodes]
        sizes = {zs.size for zs in zs_all}
        if len(sizes) == 1:
            per_node = sizes.pop()
            impulse_grid = np.vstack(zs_all)                      # (n, K)
            x_col = nodes[:, np.newaxis]
            targets = x_col + eval_on(problem.impulse_shift, t, x_col, impulse_grid)
            costs = eval_on(problem.impulse_cost, t, x_col, impulse_grid)
            self._stride = per_node
            self._impulse_grid = impulse_grid
            self.offsets = np.arange(nodes.size + 1) * per_node
            self.costs = costs.ravel()
            self.k, self.alpha = interp_weights_many(nodes, targets.ravel())
        else:
            offsets = [0]
            cost_all, k_all, a_all = [], [], []
            for x, zs in zip(nodes, zs_all):
                targets = x + eval_on(problem.impulse_shift, t, x, zs)
                costs = eval_on(problem.impulse_cost, t, x, zs)
                k, alpha = interp_weights_many(nodes, np.atleast_1d(targets))
                k_all.append(k)
                a_all.append(alpha)
                cost_all.append(np.atleast_1d(costs))
                offsets.append(offsets[-1] + zs.size)
            self._stride = None
            self._impulse_grid = None
            self.offsets = np.array(offsets)
            self.costs = np.concatenate(cost_all)
            self.k = np.concatenate(k_all)
            self.alpha = np.concatenate(a_all)
        self.impulses = zs_all
        self.k_next = np.minimum(self.k + 1, nodes.size - 1)

    def candidate_values(self, u: np.ndarray) -> np.ndarray:
        return (1.0 - self.alpha) * u[self.k] + self.alpha * u[self.k_next] + self.costs

    def apply(self, u: np.ndarray) -> InterventionResult:
        cand = self.candidate_values(u)
        n = self.grid.n_nodes
        if self._stride is not None:
            block = cand.reshape(n, self._stride)
            best = block.argmax(axis=1)
            rows = np.arange(n)
            return InterventionResult(values=block[rows, best],
                                      impulses=self._impulse_grid[rows, best])
        values = np.empty(n)
        impulses = np.empty(n)
        for i in range(n):
            seg = cand[self.offsets[i]:self.offsets[i + 1]]
            k = int(seg.argmax())
            values[i] = seg[k]
            impulses[i] = self.impulses[i][k]
        return InterventionResult(values=values, impulses=impulses)


def apply_intervention(u: np.ndarray, grid: SpaceTimeGrid, t: float,
                       problem: ProblemSpec, controls: DiscreteControls) -> InterventionResult:
    """Best-impulse value max_z { interp(u, x_j + shift) + cost } at every node."""
    return InterventionTable(problem, grid, controls, t).apply(u)
