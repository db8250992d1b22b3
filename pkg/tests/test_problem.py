import numpy as np
import pytest

from hjbqvi.grid import build_uniform_grid
from hjbqvi.problem import ProblemSpec, builtin, eval_on, validate


def flat_problem(impulse_cost=-1.0, **overrides):
    fields = dict(
        drift=lambda x, b: 0.0,
        diffusion=lambda x, b: 1.0,
        running_reward=lambda t, x, b: 0.0,
        terminal_reward=lambda x: 5.0 + 0.0 * x,
        impulse_shift=lambda t, x, z: 0.0 * z,
        impulse_cost=lambda t, x, z: impulse_cost + 0.0 * z,
        impulse_bounds=lambda t, x: (0.0, 1.0),
        control_bounds=(0.0, 0.0),
        horizon=1.0,
    )
    fields.update(overrides)
    return ProblemSpec(**fields)


class TestEvalOn:
    def test_vectorized_callable(self):
        out = eval_on(lambda x, b: x * b, np.array([1.0, 2.0]), 3.0)
        assert np.array_equal(out, [3.0, 6.0])

    def test_constant_return_broadcasts(self):
        out = eval_on(lambda x, b: -1.0, np.array([1.0, 2.0, 3.0]), 0.0)
        assert np.array_equal(out, [-1.0, -1.0, -1.0])

    def test_scalar_only_callable_falls_back(self):
        def picky(x, b):
            if x > 0:
                return 1.0
            return -1.0
        out = eval_on(picky, np.array([-2.0, 3.0]), 0.0)
        assert np.array_equal(out, [-1.0, 1.0])


class TestValidate:
    def test_constant_problem_passes(self):
        grid = build_uniform_grid(Q=2, M=8, N=8, T=1)
        report = validate(flat_problem(), grid, samples=16)
        assert report.passed
        cost = next(c for c in report.checks if c.name == "impulse_cost_negative")
        assert cost.worst_value == -1.0

    def test_zero_impulse_cost_fails_with_witness(self):
        grid = build_uniform_grid(Q=2, M=8, N=8, T=1)
        report = validate(flat_problem(impulse_cost=0.0), grid, samples=16)
        failed = report.failures()
        assert [c.name for c in failed] == ["impulse_cost_negative"]
        assert failed[0].worst_value == 0.0
        assert len(failed[0].witness) == 3

    def test_heat_terminal_margin(self):
        # Brute-force check of the intervention-vs-terminal margin: jumping
        # lands anywhere in [-1, 1] at cost -3, so the gain over g = sin is
        # at most sin(1) - 3 + 1 <= -1 on every sampled node.
        problem = builtin("heat")
        grid = build_uniform_grid(Q=4, M=16, N=8, T=1)
        report = validate(problem, grid, samples=32)
        assert report.passed
        margin = next(c for c in report.checks if c.name == "terminal_intervention_no_gain")
        assert margin.worst_value <= -1.0

    def test_cash_passes(self):
        problem = builtin("cash")
        grid = build_uniform_grid(Q=4, M=16, N=12, T=3)
        report = validate(problem, grid, samples=32)
        assert report.passed
        assert report.lipschitz_estimate < 100.0

    def test_samples_precondition(self):
        grid = build_uniform_grid(Q=2, M=4, N=4, T=1)
        with pytest.raises(ValueError):
            validate(flat_problem(), grid, samples=0)

    @pytest.mark.parametrize("name", ["constant", "heat", "cash"])
    @pytest.mark.parametrize("make_grid", [
        lambda T: build_uniform_grid(Q=2, M=8, N=8, T=T),
        lambda T: build_uniform_grid(Q=4, M=20, N=12, T=T),
    ])
    def test_every_builtin_passes_on_every_grid(self, name, make_grid):
        problem = builtin(name)
        report = validate(problem, make_grid(problem.horizon), samples=24)
        assert report.passed, [str(c) for c in report.failures()]


class TestBuiltins:
    def test_constant_exact_value(self):
        problem = builtin("constant", {"c": 5})
        assert problem.exact(0.3, 0.7) == 5.0
        # u = c forces the variational form: the best jump is worth c - 1,
        # so min(0, u - best jump) = min(0, 1) = 0.
        assert problem.impulse_cost(0.0, 0.0, 0.5) == -1.0

    def test_heat_closed_form_values(self):
        problem = builtin("heat", {"s": 1.0, "T": 1.0})
        assert problem.exact(0.0, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert problem.exact(0.0, np.pi / 2) == pytest.approx(0.6065306597126334, abs=1e-15)

    def test_heat_closed_form_solves_pde(self):
        # Oracle self-check: finite differences of the closed form against
        # u_t + (s^2/2) u_xx at pseudo-random points.
        problem = builtin("heat", {"s": 1.3, "T": 2.0})
        rng = np.random.default_rng(42)
        h = 1e-5
        for _ in range(25):
            t = rng.uniform(0.1, 1.9)
            x = rng.uniform(-3, 3)
            u = problem.exact
            u_t = (u(t + h, x) - u(t - h, x)) / (2 * h)
            u_xx = (u(t, x - h) - 2 * u(t, x) + u(t, x + h)) / (h * h)
            assert abs(u_t + 0.5 * 1.3 ** 2 * u_xx) < 1e-5

    def test_cash_defaults(self):
        problem = builtin("cash")
        assert problem.horizon == 3.0
        assert problem.control_bounds == (-0.5, 0.5)
        assert problem.running_reward(0.0, 3.0, 0.0) == -2.0  # clipped at G
        assert problem.impulse_cost(0.0, 1.0, 0.0) == -2.5    # c0 + lam * |z - x|

    def test_cash_rejects_profitable_terminal_jump(self):
        with pytest.raises(ValueError, match="c0 >= G"):
            builtin("cash", {"c0": 1.0, "G": 2.0})

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown builtin"):
            builtin("nope")

    def test_unknown_parameter(self):
        with pytest.raises(ValueError, match="unknown problem parameters"):
            builtin("heat", {"sigma": 2.0})

    def test_beta_switches_to_discounted(self):
        problem = builtin("constant", {"c": 5, "beta": 0.5})
        assert not problem.finite_horizon
        assert problem.discount == 0.5


class TestProblemSpecInvariants:
    def test_exactly_one_horizon(self):
        with pytest.raises(ValueError):
            flat_problem(horizon=None)
        with pytest.raises(ValueError):
            flat_problem(discount=0.5)  # both set

    def test_empty_control_interval_rejected(self):
        with pytest.raises(ValueError):
            flat_problem(control_bounds=(1.0, -1.0))
