"""Tests for src/solvers/primal_dual.py."""

import math

import numpy as np
import pytest

from src.core.errors import ConfigError, DimensionMismatchError
from src.core.metric_algebra import MetricSchedule, ScalarMetric
from src.core.operators import (
    LinearMap,
    LipschitzMap,
    ProxKind,
    Proximable,
    ProxResolvent,
    ResolventOperator,
    abs_prox,
    box01_prox,
    conjugate_prox,
    quadratic_gradient,
    sample_lipschitz,
    zero_prox,
)
from src.core.sequences import parse_sequence_rule
from src.solvers.fbf_solver import (
    ErrorSchedule,
    InclusionProblem,
    IterateState,
    SolverConfig,
    StopRule,
    step_tseng_ep,
)
from src.solvers.primal_dual import (
    Block,
    PrimalDualProblem,
    build_product_inclusion,
    initial_state,
    join_product,
    lipschitz_aggregate,
    product_config,
    product_errors,
    recover_certificates,
    run_blocks,
    split_product,
    step_blocks,
)


def half_square_conj():
    """prox of gamma * (1/2)||.||^2, the conjugate of itself."""
    return Proximable(lambda gamma, y: y / (1.0 + gamma), ProxKind.CUSTOM, "half_sq")


def abs_block(dim=1, L=None, r=None, **kwargs):
    L = L or LinearMap.identity(dim)
    return Block(L, np.zeros(L.out_dim) if r is None else r, g_conj_prox=conjugate_prox(abs_prox()), **kwargs)


def toy_problem(z=0.5, h=None):
    """min over [0, 1] of h(x) + |x| - z x."""
    return PrimalDualProblem.minimization(
        box01_prox(), h or LipschitzMap.zero(), np.array([z]), [abs_block()], name="toy"
    )


def random_problem(rng, with_metrics=True):
    dim = 4
    L1 = LinearMap.from_matrix(rng.standard_normal((3, dim)) / 3.0)
    L2 = LinearMap.from_matrix(rng.standard_normal((2, dim)) / 3.0)
    skew = rng.standard_normal((dim, dim))
    psd = rng.standard_normal((dim, dim))
    C = LipschitzMap.from_matrix(0.2 * (skew - skew.T) + 0.1 * psd @ psd.T)
    primal_schedule = dual1 = dual2 = None
    if with_metrics:
        primal_schedule = MetricSchedule.from_sequence(parse_sequence_rule("k-over-k1"), dim)
        dual1 = MetricSchedule.constant(ScalarMetric(0.8, 3))
        dual2 = MetricSchedule.from_sequence(parse_sequence_rule("one-minus-inv-k2"), 2)
    blocks = [
        Block(L1, rng.standard_normal(3), g_conj_prox=conjugate_prox(abs_prox()),
              dual_metric_schedule=dual1, name="l1"),
        Block(L2, rng.standard_normal(2), g_conj_prox=half_square_conj(),
              dual_metric_schedule=dual2, name="quad"),
    ]
    return PrimalDualProblem.minimization(
        box01_prox(), C, rng.standard_normal(dim), blocks, primal_schedule, name="random"
    )


class TestConstruction:
    def test_block_needs_one_operator(self):
        with pytest.raises(ConfigError):
            Block(LinearMap.identity(2), np.zeros(2))
        with pytest.raises(ConfigError):
            Block(LinearMap.identity(2), np.zeros(2), B_inv_resolvent=ResolventOperator.zero(),
                  g_conj_prox=zero_prox())

    def test_block_shift_dimension(self):
        with pytest.raises(DimensionMismatchError):
            abs_block(dim=2, r=np.zeros(3))

    def test_zero_linear_operator_rejected(self):
        L = LinearMap(lambda x: 0 * x, lambda y: 0 * y, 2, 2, 0.0)
        with pytest.raises(ConfigError):
            Block(L, np.zeros(2), g_conj_prox=zero_prox())

    def test_domain_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(3), [abs_block(dim=2)])

    def test_dual_schedule_dimension(self):
        with pytest.raises(DimensionMismatchError):
            abs_block(dim=2, dual_metric_schedule=MetricSchedule.identity(3))

    def test_dimensions(self, rng):
        prob = random_problem(rng)
        assert prob.dim == 4
        assert prob.total_dim == 9
        assert prob.mu == 1.0

    def test_initial_state_defaults(self, rng):
        prob = random_problem(rng)
        state = initial_state(prob, np.ones(4))
        np.testing.assert_array_equal(state.p1_prev, np.ones(4))
        assert [v.shape[0] for v in state.v] == [3, 2]
        assert all(np.all(p == 0) for p in state.p2_prev)

    def test_initial_state_block_count(self, rng):
        prob = random_problem(rng)
        with pytest.raises(DimensionMismatchError):
            initial_state(prob, np.ones(4), v0=[np.zeros(3)])


class TestLipschitzAggregate:
    def test_deblur_constant(self):
        blocks = [
            abs_block(dim=2),
            abs_block(L=LinearMap.from_matrix(np.eye(2), norm_bound=math.sqrt(8.0))),
        ]
        prob = PrimalDualProblem(ResolventOperator.zero(), quadratic_gradient(0.003), np.zeros(2), blocks)
        assert lipschitz_aggregate(prob) == pytest.approx(3.006)

    def test_no_blocks(self):
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap(lambda x: 7.0 * x, 7.0), np.zeros(1))
        assert lipschitz_aggregate(prob) == 7.0

    def test_single_identity_block(self):
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(2), [abs_block(dim=2)])
        assert lipschitz_aggregate(prob) == 1.0


class TestProductInclusion:
    def test_skew_example(self):
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(2), [abs_block(dim=2)])
        B = build_product_inclusion(prob).B
        w = np.array([1.0, 0.0, 0.0, 1.0])
        out = B.apply(w)
        np.testing.assert_array_equal(out, [0.0, 1.0, -1.0, 0.0])
        assert float(out @ w) == 0.0

    def test_skew_random(self, rng):
        blocks = [
            abs_block(L=LinearMap.from_matrix(rng.standard_normal((3, 4)))),
            abs_block(L=LinearMap.from_matrix(rng.standard_normal((2, 4)))),
        ]
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(4), blocks)
        B = build_product_inclusion(prob).B
        for _ in range(50):
            w = rng.standard_normal(9)
            assert abs(float(B.apply(w) @ w)) < 1e-12 * max(1.0, float(w @ w))

    def test_sampled_lipschitz_matches_aggregate(self):
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(3), [abs_block(dim=3)])
        product = build_product_inclusion(prob)
        assert product.beta == 1.0
        assert sample_lipschitz(product.B, 6) == pytest.approx(1.0, rel=0.05)

    def test_sampled_lipschitz_below_aggregate(self, rng):
        prob = random_problem(rng)
        product = build_product_inclusion(prob)
        assert sample_lipschitz(product.B, prob.total_dim, seed=1) <= product.beta * (1 + 1e-12)

    def test_no_blocks_is_plain_problem(self, rng):
        matrix = np.array([[2.0, 1.0], [-1.0, 2.0]])
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.from_matrix(matrix), np.array([1.0, -1.0]))
        product = build_product_inclusion(prob)
        w = rng.standard_normal(2)
        np.testing.assert_array_equal(product.B.apply(w), matrix @ w)
        # resolvent of A - z with A = 0 is a shift by gamma z
        out = product.A.resolvent(0.5, ScalarMetric(1.0, 2), w)
        np.testing.assert_allclose(out, w + 0.5 * np.array([1.0, -1.0]))

    def test_split_join(self, rng):
        prob = random_problem(rng)
        w = rng.standard_normal(prob.total_dim)
        x, vs = split_product(prob, w)
        np.testing.assert_array_equal(join_product(prob, x, vs), w)
        with pytest.raises(DimensionMismatchError):
            split_product(prob, w[:-1])


class TestStepBlocks:
    def test_no_blocks_zero_operators(self):
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(3))
        x = np.array([0.3, -1.0, 2.0])
        state = step_blocks(prob, initial_state(prob, x), SolverConfig.constant_gamma(0.4, 10))
        np.testing.assert_array_equal(state.x, x)
        np.testing.assert_array_equal(state.p1_prev, x)

    def test_zero_state_unchanged(self):
        block = Block(LinearMap.identity(2), np.zeros(2), B_inv_resolvent=ResolventOperator.zero())
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(2), [block])
        state = step_blocks(prob, initial_state(prob, np.zeros(2)), SolverConfig.constant_gamma(0.4, 10))
        np.testing.assert_array_equal(state.x, np.zeros(2))
        np.testing.assert_array_equal(state.v[0], np.zeros(2))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_product_path(self, seed):
        rng = np.random.default_rng(seed)
        prob = random_problem(rng)
        beta = lipschitz_aggregate(prob)
        errors = ErrorSchedule.from_sequence(lambda n: 1e-2 / (n + 1) ** 2, 1e-2 * math.pi ** 2 / 6)
        config = SolverConfig.constant_gamma(0.9 / (math.sqrt(10.0) * prob.mu * beta), 100, errors=errors)

        x0 = rng.uniform(0.0, 1.0, prob.dim)
        v0 = [rng.standard_normal(b.dim) for b in prob.blocks]
        state = initial_state(prob, x0, v0)
        product = build_product_inclusion(prob)
        flat_config = product_config(prob, config)
        flat = IterateState(join_product(prob, state.x, state.v), join_product(prob, state.p1_prev, state.p2_prev))

        for _ in range(100):
            state = step_blocks(prob, state, config)
            flat = step_tseng_ep(product, flat, flat_config)
            np.testing.assert_allclose(join_product(prob, state.x, state.v), flat.x, rtol=1e-13, atol=1e-13)
            np.testing.assert_allclose(
                join_product(prob, state.p1_prev, state.p2_prev), flat.p_prev, rtol=1e-13, atol=1e-13
            )

    def test_zero_dual_reduces_to_plain_iteration(self, rng):
        matrix = np.array([[1.0, 0.5], [-0.5, 1.0]])
        C = LipschitzMap.from_matrix(matrix)
        A = ProxResolvent(abs_prox())
        null = ResolventOperator(lambda gamma, metric, y: np.zeros_like(y), "zero-dual")
        prob = PrimalDualProblem(A, C, np.zeros(2), [Block(LinearMap.identity(2), np.zeros(2), B_inv_resolvent=null)])
        plain = InclusionProblem(A, C, 2)
        config = SolverConfig.constant_gamma(0.2, 50)

        x0 = rng.standard_normal(2)
        state = initial_state(prob, x0)
        flat = IterateState(x0.copy(), x0.copy())
        for _ in range(50):
            state = step_blocks(prob, state, config)
            flat = step_tseng_ep(plain, flat, config)
            np.testing.assert_allclose(state.p1_prev, flat.p_prev, rtol=1e-13, atol=1e-13)

    def test_config_metric_rejected(self):
        prob = toy_problem()
        config = SolverConfig.constant_gamma(0.3, 10, metric_schedule=MetricSchedule.identity(1))
        with pytest.raises(ConfigError):
            run_blocks(prob, config, initial_state(prob, np.array([0.466])))

    def test_errors_certified_on_stacked_vector(self, rng):
        # dim 4 primal, 3 + 2 dual: per-term norms 2s and 3s against a 2.5s certificate
        prob = random_problem(rng, with_metrics=False)
        basel = math.pi ** 2 / 6
        errors = ErrorSchedule(a=lambda n, d: np.full(d, 1e-2 / (n + 1) ** 2), summability_bound=2.5e-2 * basel)
        assert errors.check(1000, prob.dim) == []
        assert product_errors(prob, errors).check(1000, prob.total_dim)

        config = SolverConfig.constant_gamma(0.01, 1000, errors=errors)
        with pytest.raises(ConfigError, match="exceeds"):
            run_blocks(prob, config, initial_state(prob, np.full(prob.dim, 0.5)))

    def test_per_coordinate_errors_scale_with_stacked_dimension(self, rng):
        prob = random_problem(rng, with_metrics=False)
        errors = ErrorSchedule.from_sequence(lambda n: 1e-2 / (n + 1) ** 2, 1e-2 * math.pi ** 2 / 6)
        stacked = product_errors(prob, errors)
        assert stacked.per_coordinate
        assert stacked.certificate(prob.total_dim) == pytest.approx(3e-2 * math.pi ** 2 / 6)
        assert stacked.check(1000, prob.total_dim) == []


class TestToyProblems:
    def test_literal_toy_matches_grid_search(self):
        prob = toy_problem(z=0.5)
        grid = np.linspace(0.0, 1.0, 100001)
        oracle = grid[np.argmin(np.abs(grid) - 0.5 * grid)]
        result = run_blocks(prob, SolverConfig.constant_gamma(0.3, 10000, trace_every=1000),
                            initial_state(prob, np.array([0.466])))
        assert 0.0 <= result.solution[0] <= 1.0
        assert result.solution[0] == pytest.approx(oracle, abs=1e-4)
        assert recover_certificates(prob, result.state).ok

    def test_interior_toy(self):
        # min over [0, 1] of x^2/2 + |x| - 1.5 x has its minimizer at 0.5
        prob = toy_problem(z=1.5, h=LipschitzMap(lambda x: x.copy(), 1.0, "grad_half_sq"))
        config = SolverConfig.constant_gamma(0.2, 100000, stop=StopRule.parse("step:1e-12"))
        result = run_blocks(prob, config, initial_state(prob, np.array([0.466])))
        assert result.solution[0] == pytest.approx(0.5, abs=1e-6)
        report = recover_certificates(prob, result.state)
        assert report.max_residual < 1e-6
        assert report.to_dict()["ok"]

    def test_objective_and_extras(self):
        prob = toy_problem(z=1.5, h=LipschitzMap(lambda x: x.copy(), 1.0))
        result = run_blocks(
            prob, SolverConfig.constant_gamma(0.2, 200), initial_state(prob, np.array([0.466])),
            objective=lambda x: 0.5 * x[0] ** 2 + abs(x[0]) - 1.5 * x[0],
            extras={"distance": lambda x: abs(x[0] - 0.5)},
        )
        assert len(result.trace) == 200
        assert all(r.fval is not None for r in result.trace)
        assert result.trace[-1].extras["distance"] < result.trace[0].extras["distance"]


class TestCertificates:
    def test_stationary_zero(self):
        block = Block(LinearMap.identity(2), np.zeros(2), B_inv_resolvent=ResolventOperator.zero())
        prob = PrimalDualProblem(ResolventOperator.zero(), LipschitzMap.zero(), np.zeros(2), [block])
        report = recover_certificates(prob, initial_state(prob, np.zeros(2)))
        assert report.primal_residual == 0.0
        assert report.dual_residuals == [0.0]
        assert report.ok

    def test_quadratic_kkt(self, rng):
        dim = 4
        M = rng.standard_normal((dim, dim))
        Q = M @ M.T / dim + np.eye(dim)
        Ls = [rng.standard_normal((3, dim)) / 3.0, rng.standard_normal((2, dim)) / 3.0]
        rs = [rng.standard_normal(3), rng.standard_normal(2)]
        z = rng.standard_normal(dim)
        blocks = [
            Block(LinearMap.from_matrix(L), r, g_conj_prox=half_square_conj(), name=f"q{i}")
            for i, (L, r) in enumerate(zip(Ls, rs))
        ]
        prob = PrimalDualProblem.minimization(zero_prox(), LipschitzMap.from_matrix(Q), z, blocks)

        # Q x + sum L^T (L x - r) = z
        system = Q + sum(L.T @ L for L in Ls)
        x_star = np.linalg.solve(system, z + sum(L.T @ r for L, r in zip(Ls, rs)))

        gamma = 0.9 / (2.0 * lipschitz_aggregate(prob))
        result = run_blocks(prob, SolverConfig.constant_gamma(gamma, 5000, trace_every=500),
                            initial_state(prob, np.zeros(dim)))
        np.testing.assert_allclose(result.solution, x_star, atol=1e-6)
        for L, r, v in zip(Ls, rs, result.state.p2_prev):
            np.testing.assert_allclose(v, L @ x_star - r, atol=1e-6)
        assert recover_certificates(prob, result.state).max_residual < 1e-6
