"""Tests for src/core/metric_algebra.py and src/core/sequences.py."""

import math

import numpy as np
import pytest

from src.core.errors import ConfigError, DimensionMismatchError, MetricError
from src.core.metric_algebra import (
    BlockDiagonalMetric,
    DenseMetric,
    DiagonalMetric,
    MetricSchedule,
    ScalarMetric,
    as_vec,
    check_loewner_step,
    identity_metric,
    inverse_weighted_norm,
    weighted_inner,
    weighted_norm,
)
from src.core.sequences import RULE_NAMES, constant, parse_sequence_rule


def _random_spd(rng, dim):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    eig = np.linspace(0.5, 3.0, dim)
    return (q * eig) @ q.T, 0.5, 3.0


class TestVectors:
    def test_scalar_promoted(self):
        assert as_vec(2.0).shape == (1,)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            as_vec([1.0, float("nan")])

    def test_rejects_matrix(self):
        with pytest.raises(ValueError):
            as_vec(np.ones((2, 2)))


class TestWeightedInner:
    def test_identity(self):
        x = np.array([3.0, 4.0])
        assert weighted_inner(x, x, identity_metric(2)) == 25.0

    def test_scalar_doubles(self):
        x = np.array([3.0, 4.0])
        assert weighted_inner(x, x, ScalarMetric(2.0, 2)) == 50.0

    def test_diagonal_off_diagonal_vanishes(self):
        assert weighted_inner(np.array([1.0, 0.0]), np.array([0.0, 1.0]), DiagonalMetric([5.0, 7.0])) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            weighted_inner(np.ones(3), np.ones(3), identity_metric(2))

    def test_symmetric_dense(self, rng):
        matrix, alpha, bound = _random_spd(rng, 6)
        U = DenseMetric(matrix, alpha, bound)
        x, y = rng.standard_normal(6), rng.standard_normal(6)
        assert weighted_inner(x, y, U) == pytest.approx(weighted_inner(y, x, U), rel=1e-12)


class TestWeightedNorm:
    def test_identity(self):
        assert weighted_norm(np.array([3.0, 4.0]), identity_metric(2)) == 5.0

    def test_half_scalar(self):
        assert weighted_norm(np.array([3.0, 4.0]), ScalarMetric(0.5, 2)) == pytest.approx(math.sqrt(12.5))

    def test_dense_matches_matrix(self, rng):
        matrix, alpha, bound = _random_spd(rng, 5)
        x = rng.standard_normal(5)
        assert weighted_norm(x, DenseMetric(matrix, alpha, bound)) == pytest.approx(
            math.sqrt(x @ matrix @ x), rel=1e-12
        )

    def test_spectral_sandwich(self, rng):
        matrix, alpha, bound = _random_spd(rng, 8)
        metrics = [ScalarMetric(1.7, 8), DiagonalMetric(rng.uniform(0.2, 4.0, 8)), DenseMetric(matrix, alpha, bound)]
        for U in metrics:
            for _ in range(200):
                x = rng.standard_normal(8)
                sq = float(x @ x)
                quad = weighted_inner(x, x, U)
                assert U.alpha * sq * (1 - 1e-12) <= quad <= U.norm_bound * sq * (1 + 1e-12)
                inv = inverse_weighted_norm(x, U)
                assert math.sqrt(sq / U.norm_bound) * (1 - 1e-12) <= inv
                assert inv <= math.sqrt(sq / U.alpha) * (1 + 1e-12)
                assert inverse_weighted_norm(U.apply(x), U) == pytest.approx(weighted_norm(x, U), rel=1e-10)

    def test_inverse_round_trip(self, rng):
        matrix, alpha, bound = _random_spd(rng, 6)
        U = DenseMetric(matrix, alpha, bound)
        x = rng.standard_normal(6)
        np.testing.assert_allclose(U.apply_inverse(U.apply(x)), x, rtol=1e-12, atol=1e-12)


class TestMetricConstruction:
    def test_nonpositive_scalar(self):
        with pytest.raises(MetricError):
            ScalarMetric(0.0, 3)

    def test_nonpositive_diagonal(self):
        with pytest.raises(MetricError):
            DiagonalMetric([1.0, -1.0])

    def test_asymmetric_dense(self):
        with pytest.raises(MetricError):
            DenseMetric(np.array([[2.0, 1.0], [0.0, 2.0]]), 1.0, 3.0)

    def test_indefinite_dense(self):
        with pytest.raises(MetricError):
            DenseMetric(np.array([[1.0, 2.0], [2.0, 1.0]]), 0.1, 3.0)

    def test_wrong_declared_bounds(self):
        with pytest.raises(MetricError):
            DenseMetric(np.diag([1.0, 10.0]), 1.0, 2.0)

    def test_block_metric(self):
        U = BlockDiagonalMetric([ScalarMetric(2.0, 2), DiagonalMetric([0.5, 4.0, 1.0])])
        assert U.dim == 5
        assert U.alpha == 0.5
        assert U.norm_bound == 4.0
        x = np.arange(1.0, 6.0)
        np.testing.assert_array_equal(U.apply(x), [2.0, 4.0, 1.5, 16.0, 5.0])
        np.testing.assert_array_equal(U.to_dense(), np.diag([2.0, 2.0, 0.5, 4.0, 1.0]))


class TestLoewnerStep:
    def test_equal_metrics(self):
        assert check_loewner_step(identity_metric(3), identity_metric(3), 0.0)

    def test_eta_compensates(self):
        assert check_loewner_step(ScalarMetric(0.9, 3), identity_metric(3), 0.2)

    def test_eta_too_small(self):
        assert not check_loewner_step(ScalarMetric(0.9, 3), identity_metric(3), 0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            check_loewner_step(identity_metric(2), identity_metric(3), 0.0)

    def test_dense_against_scalar(self):
        dense = DenseMetric(np.diag([1.0, 2.0]), 1.0, 2.0)
        assert check_loewner_step(dense, identity_metric(2), 0.0)
        assert not check_loewner_step(identity_metric(2), dense, 0.0)

    def test_block_metrics(self):
        a = BlockDiagonalMetric([ScalarMetric(1.0, 2), ScalarMetric(0.9, 1)])
        b = BlockDiagonalMetric([ScalarMetric(1.0, 2), ScalarMetric(1.0, 1)])
        assert not check_loewner_step(a, b, 0.0)
        assert check_loewner_step(a, b, 0.12)


class TestSequences:
    def test_constant(self):
        seq = constant(0.5)
        assert seq(0) == seq(100) == 0.5
        assert seq.inf == seq.sup == 0.5

    def test_constant_rejects_zero(self):
        with pytest.raises(ConfigError):
            constant(0.0)

    def test_one_minus_inv_k_starts_positive(self):
        seq = parse_sequence_rule("one-minus-inv-k")
        assert seq(0) == 0.5
        assert seq(1) == pytest.approx(2.0 / 3.0)
        assert seq.inf == 0.5 and seq.sup == 1.0

    def test_k_over_k1(self):
        seq = parse_sequence_rule("k-over-k1")
        assert seq(0) == 0.5
        assert seq(3) == 0.8

    def test_one_plus_inv_k_pow_k(self):
        seq = parse_sequence_rule("one-plus-inv-k-pow-k")
        assert seq(0) == 2.0
        assert seq(1000) < math.e
        assert seq.sup == math.e

    def test_all_rules_within_bounds(self):
        for name in RULE_NAMES:
            seq = parse_sequence_rule("const:0.7" if name.startswith("const") else name)
            values = [seq(n) for n in range(500)]
            assert min(values) >= seq.inf - 1e-15
            assert max(values) <= seq.sup + 1e-15
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_unknown_rule(self):
        with pytest.raises(ConfigError, match="Unknown sequence rule"):
            parse_sequence_rule("golden-ratio")

    def test_bad_constant(self):
        with pytest.raises(ConfigError):
            parse_sequence_rule("const:abc")


class TestMetricSchedule:
    def test_constant_schedule_valid(self):
        schedule = MetricSchedule.constant(ScalarMetric(0.8, 4))
        assert schedule.validate(50) == []
        assert schedule.mu == 0.8

    def test_increasing_sequence_valid(self):
        schedule = MetricSchedule.from_sequence(parse_sequence_rule("one-minus-inv-k2"), 3)
        assert schedule.validate(200) == []
        assert schedule.eta_at(5) == 0.0
        assert schedule.mu == 1.0
        assert schedule.alpha == 0.75

    def test_decreasing_sequence_needs_tail_bound(self):
        from src.core.sequences import ScalarSequence

        seq = ScalarSequence("decay", lambda n: 1.0 + 1.0 / (n + 1) ** 2, 1.0, 2.0, nondecreasing=False)
        loose = MetricSchedule.from_sequence(seq, 2, eta_tail_bound=0.0)
        assert loose.validate(20)
        tight = MetricSchedule.from_sequence(seq, 2, eta_tail_bound=2.0)
        assert tight.validate(20) == []

    def test_block_diagonal(self):
        schedule = MetricSchedule.block_diagonal([
            MetricSchedule.from_sequence(parse_sequence_rule("k-over-k1"), 2),
            MetricSchedule.constant(ScalarMetric(1.5, 3)),
        ])
        assert schedule.dim == 5
        assert schedule.mu == 1.5
        assert schedule.alpha == 0.5
        assert schedule.metric_at(0).dim == 5
        assert schedule.validate(30) == []
