"""Basis blocks: designs, penalties, centering, re-evaluation, tensors."""

import itertools

import numpy as np
import pytest

from gamevo.basis import (
    build_categorical,
    build_univariate,
    flatten_index,
    tensor_product,
)

RNG = np.random.default_rng(11)


def psd_check(matrix):
    assert np.allclose(matrix, matrix.T)
    assert np.linalg.eigvalsh(matrix).min() >= -1e-10


class TestLinear:
    def test_centered_column(self):
        x = RNG.normal(size=200)
        block = build_univariate("linear", 1, x)
        assert block.ncols == 1
        assert abs(block.design.sum()) < 1e-9
        assert np.allclose(block.design[:, 0], x - x.mean())
        assert np.all(block.penalty == 0.0)

    def test_reevaluation_uses_training_mean(self):
        x = np.array([0.0, 2.0, 4.0])
        block = build_univariate("linear", 1, x)
        out, unseen = block.evaluate(np.array([10.0]))
        assert unseen == 0
        assert out[0, 0] == 8.0

    def test_constant_column_rejected(self):
        with pytest.raises(ValueError):
            build_univariate("linear", 1, np.ones(10))


class TestCubicSpline:
    def test_shape_and_penalty(self):
        x = RNG.uniform(0, 1, 300)
        q = 10
        block = build_univariate("cubic-spline", q, x)
        assert block.ncols == q - 1          # one column absorbed
        psd_check(block.penalty)
        # sum-to-zero centering over the training rows
        assert np.max(np.abs(block.design.sum(axis=0))) < 1e-8

    def test_uncentered_partition_of_unity(self):
        x = RNG.uniform(0, 1, 300)
        block = build_univariate("cubic-spline", 10, x, center=False)
        assert np.allclose(block.design.sum(axis=1), 1.0)

    def test_penalty_rank(self):
        block = build_univariate("cubic-spline", 10, RNG.uniform(0, 1, 300),
                                 center=False)
        # second-order difference penalty: nullspace = linear functions
        assert np.linalg.matrix_rank(block.penalty) == 10 - 2

    def test_reevaluation_reproduces_training_design(self):
        x = RNG.uniform(-3, 5, 250)
        block = build_univariate("cubic-spline", 8, x)
        out, unseen = block.evaluate(x)
        assert unseen == 0
        assert np.max(np.abs(out - block.design)) <= 1e-12

    def test_out_of_range_values_are_clamped(self):
        x = np.linspace(0, 1, 100)
        block = build_univariate("cubic-spline", 6, x)
        lo, _ = block.evaluate(np.array([-5.0]))
        at_min, _ = block.evaluate(np.array([0.0]))
        hi, _ = block.evaluate(np.array([7.0]))
        at_max, _ = block.evaluate(np.array([1.0]))
        assert np.allclose(lo, at_min)
        assert np.allclose(hi, at_max)

    def test_minimal_size_falls_back_to_quadratic(self):
        block = build_univariate("cubic-spline", 3, RNG.uniform(0, 1, 50))
        assert block.degree == 2
        assert block.ncols == 2

    def test_too_few_distinct_values(self):
        with pytest.raises(ValueError):
            build_univariate("cubic-spline", 10, np.tile(np.arange(5.0), 20))
        with pytest.raises(ValueError):
            build_univariate("cubic-spline", 2, RNG.uniform(0, 1, 50))


class TestCyclicSpline:
    def test_periodicity(self):
        x = RNG.uniform(0, 1, 200)
        block = build_univariate("cyclic-cubic-spline", 8, x, period=1.0)
        a, _ = block.evaluate(x)
        b, _ = block.evaluate(x + 1.0)
        c, _ = block.evaluate(x - 3.0)
        assert np.max(np.abs(a - b)) < 1e-10
        assert np.max(np.abs(a - c)) < 1e-10

    def test_continuity_at_the_seam(self):
        block = build_univariate("cyclic-cubic-spline", 8,
                                 RNG.uniform(0, 1, 200), period=1.0)
        before, _ = block.evaluate(np.array([1.0 - 1e-9]))
        after, _ = block.evaluate(np.array([1e-9]))
        assert np.max(np.abs(before - after)) < 1e-6

    def test_uncentered_partition_of_unity(self):
        x = RNG.uniform(0, 1, 200)
        block = build_univariate("cyclic-cubic-spline", 8, x, period=1.0,
                                 center=False)
        assert block.ncols == 8
        assert np.allclose(block.design.sum(axis=1), 1.0)

    def test_wrapped_penalty(self):
        block = build_univariate("cyclic-cubic-spline", 8,
                                 RNG.uniform(0, 1, 200), period=1.0,
                                 center=False)
        psd_check(block.penalty)
        # circulant: every row is a rotation of the first
        p = block.penalty
        for i in range(1, 8):
            assert np.allclose(p[i], np.roll(p[0], i))
        # wrapped differences never vanish: full-rank minus the constant
        assert np.linalg.matrix_rank(p) == 8 - 1


class TestCategorical:
    def test_reference_is_most_frequent(self):
        x = np.array([0, 1, 1, 1, 2, 3, 3])
        block = build_categorical(4, x)
        assert block.reference == 1
        assert block.levels == (2, 3)
        assert np.array_equal(block.design[:, 0],
                              (x == 2).astype(float))
        assert np.array_equal(block.design[:, 1],
                              (x == 3).astype(float))

    def test_default_level_is_the_zero_row(self):
        block = build_categorical(3, np.array([0, 1, 2, 2]))
        assert np.array_equal(block.design[0], np.zeros(block.ncols))

    def test_unseen_levels(self):
        block = build_categorical(5, np.array([0, 1, 1, 2]))
        with pytest.raises(ValueError):
            block.evaluate(np.array([4]), strict=True)
        out, unseen = block.evaluate(np.array([4, 4, 1]), strict=False)
        assert unseen == 2
        assert np.array_equal(out[0], np.zeros(block.ncols))

    def test_errors(self):
        with pytest.raises(ValueError):
            build_categorical(3, np.array([1, 1, 1]))   # single level
        with pytest.raises(ValueError):
            build_categorical(3, np.array([0, 4]))      # out of range


class TestTensorProduct:
    def setup_method(self):
        self.x = RNG.uniform(0, 1, 150)
        self.z = RNG.uniform(0, 1, 150)
        self.a = build_univariate("cubic-spline", 5, self.x, center=False)
        self.b = build_univariate("cubic-spline", 4, self.z, center=False)

    def test_rowwise_products_match_double_loop(self):
        block = tensor_product(self.a, self.b, center=False)
        n, pa, pb = 150, self.a.ncols, self.b.ncols
        want = np.empty((n, pa * pb))
        col = 0
        for i in range(pa):                 # row-major: last index fastest
            for j in range(pb):
                want[:, col] = self.a.design[:, i] * self.b.design[:, j]
                col += 1
        assert np.array_equal(block.design, want)

    def test_penalty_is_sum_of_kroneckers(self):
        block = tensor_product(self.a, self.b, center=False)
        pa, pb = self.a.ncols, self.b.ncols
        want0 = np.kron(self.a.penalty, np.eye(pb))
        want1 = np.kron(np.eye(pa), self.b.penalty)
        assert np.array_equal(block.penalty_parts[0], want0)
        assert np.array_equal(block.penalty_parts[1], want1)
        assert np.array_equal(block.penalty, want0 + want1)
        psd_check(block.penalty)

    def test_centering_and_reevaluation(self):
        block = tensor_product(self.a, self.b)
        assert block.ncols == self.a.ncols * self.b.ncols - 1
        assert np.max(np.abs(block.design.sum(axis=0))) < 1e-8
        psd_check(block.penalty_parts[0])
        psd_check(block.penalty_parts[1])
        out, unseen = block.evaluate((self.x, self.z))
        assert unseen == 0
        assert np.max(np.abs(out - block.design)) < 1e-12

    def test_categorical_marginal(self):
        day = RNG.integers(0, 4, 150)
        cat = build_categorical(3, day, center=False)
        block = tensor_product(self.a, cat)
        out, unseen = block.evaluate((self.x, day))
        assert unseen == 0
        assert np.max(np.abs(out - block.design)) < 1e-12

    def test_mismatched_rows_rejected(self):
        short = build_univariate("cubic-spline", 4, self.z[:100], center=False)
        with pytest.raises(ValueError):
            tensor_product(self.a, short)

    def test_centered_marginals_rejected(self):
        centered = build_univariate("cubic-spline", 4, self.z)
        with pytest.raises(ValueError):
            tensor_product(self.a, centered)


class TestFlattenIndex:
    def test_exhaustive_against_nested_loops(self):
        pairs = [(qa, qb) for qa in range(1, 15) for qb in range(1, 15)
                 if qa * qb <= 200]
        triples = [(qa, qb, qc)
                   for qa in range(1, 7) for qb in range(1, 7)
                   for qc in range(1, 7) if qa * qb * qc <= 200]
        for dims in pairs + triples:
            flat = 1
            for multi in itertools.product(*(range(1, q + 1) for q in dims)):
                assert flatten_index(flat, dims) == multi
                flat += 1

    def test_bounds(self):
        with pytest.raises(ValueError):
            flatten_index(0, (3, 4))
        with pytest.raises(ValueError):
            flatten_index(13, (3, 4))
