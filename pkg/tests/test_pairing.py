import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aacca.datasets import generate_arc_toy
from aacca.errors import DegenerateScaleError, InconsistentLabelError, ShapeError
from aacca.linalg import FeatureMatrix, center_columns
from aacca.pairing import (
    Label,
    PairingMode,
    RbfKernel,
    build_dense_crosssim_D,
    build_relaxed_D,
    build_strict_D,
    build_strict_semisup_D,
    rbf,
    rbf_matrix,
    rbf_scale_from_quantile,
)


def fm(cols):
    a = np.asarray(cols, dtype=np.float64)
    return FeatureMatrix(a, np.zeros(a.shape[0]))


class TestLabel:
    @pytest.mark.parametrize("text,expected", [
        ("no-change", Label.NO_CHANGE), ("change", Label.CHANGE), ("unlabeled", Label.UNLABELED),
        ("-1", Label.CHANGE), ("1", Label.NO_CHANGE), (0, Label.UNLABELED),
    ])
    def test_parse(self, text, expected):
        assert Label.parse(text) is expected


class TestQuantileScale:
    def test_singletons(self):
        for q in (0.1, 0.5, 0.9):
            assert rbf_scale_from_quantile(fm([[0.0]]), fm([[3.0]]), q).sigma == pytest.approx(3.0)

    def test_full_sort_oracle(self):
        rng = np.random.default_rng(4)
        x, y = fm(rng.standard_normal((3, 10))), fm(rng.standard_normal((3, 10)))
        dist = np.sort(np.linalg.norm(x.data[:, :, None] - y.data[:, None, :], axis=0).ravel())
        pos = 0.1 * (dist.size - 1)
        lo = int(np.floor(pos))
        oracle = dist[lo] + (pos - lo) * (dist[lo + 1] - dist[lo])
        assert rbf_scale_from_quantile(x, y, 0.1).sigma == pytest.approx(oracle, abs=1e-12)

    def test_same_object_excludes_self_pairs(self):
        x = fm(np.random.default_rng(8).standard_normal((2, 7)))
        d = np.linalg.norm(x.data[:, :, None] - x.data[:, None, :], axis=0)
        off = d[~np.eye(7, dtype=bool)]
        assert rbf_scale_from_quantile(x, x, 0.5).sigma == pytest.approx(np.quantile(off, 0.5), abs=1e-12)

    def test_subsample_is_seeded(self):
        rng = np.random.default_rng(0)
        x, y = fm(rng.standard_normal((2, 60))), fm(rng.standard_normal((2, 60)))
        a = rbf_scale_from_quantile(x, y, 0.1, max_pairs=500, seed=3).sigma
        b = rbf_scale_from_quantile(x, y, 0.1, max_pairs=500, seed=3).sigma
        assert a == b

    def test_all_zero_distances(self):
        with pytest.raises(DegenerateScaleError):
            rbf_scale_from_quantile(fm(np.zeros((2, 3))), fm(np.zeros((2, 3))), 0.5)

    def test_bad_quantile(self):
        with pytest.raises(ValueError):
            rbf_scale_from_quantile(fm([[0.0]]), fm([[1.0]]), 1.0)


class TestRbf:
    def test_identical_points(self):
        assert rbf([1.0, 2.0], [1.0, 2.0], RbfKernel(0.7)) == 1.0

    def test_sigma_sqrt2(self):
        k = RbfKernel(2.0)
        assert rbf([0.0, 0.0], [2.0 * math.sqrt(2.0), 0.0], k) == pytest.approx(math.exp(-1.0))

    def test_formula(self):
        rng = np.random.default_rng(1)
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        k = RbfKernel(1.3)
        assert rbf(u, v, k) == pytest.approx(np.exp(-np.sum((u - v) ** 2) / (2 * 1.3**2)), rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            rbf([0.0], [0.0, 1.0], RbfKernel(1.0))

    def test_nonpositive_sigma(self):
        with pytest.raises(DegenerateScaleError):
            RbfKernel(0.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 5.0), st.floats(0.01, 5.0), st.floats(0.1, 3.0))
    def test_symmetric_and_decreasing(self, a, step, sigma):
        k = RbfKernel(sigma)
        near, far = np.array([a]), np.array([a + step])
        assert rbf([0.0], near, k) == rbf(near, [0.0], k)
        assert rbf([0.0], far, k) <= rbf([0.0], near, k)


class TestStrict:
    def test_labels(self):
        d = build_strict_D(["no-change", "change", "unlabeled"])
        np.testing.assert_array_equal(d.toarray(), np.diag([1.0, -1.0, 0.0]))
        assert d.mode is PairingMode.STRICT

    def test_all_unlabeled(self):
        assert not build_strict_D([0, 0, 0]).toarray().any()

    def test_all_no_change_is_identity(self):
        np.testing.assert_array_equal(build_strict_D([1] * 4, 4).toarray(), np.eye(4))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            build_strict_D([1, 1], n=3)

    def test_sparse_storage(self):
        d = build_strict_D([1] * 30)
        assert d.is_sparse and d.nnz == 30

    def test_strict_semisup(self):
        u = fm([[0.0, 1.0, 2.0]])
        v = fm([[0.0, 1.0, 2.0 + math.sqrt(2.0)]])
        d = build_strict_semisup_D([1, -1, 0], u, v, RbfKernel(1.0))
        np.testing.assert_allclose(d.toarray(), np.diag([1.0, -1.0, 2 * math.exp(-1) - 1]))
        assert d.includes_unlabeled


class TestRelaxed:
    def test_no_change_identical(self):
        u = fm([[1.0, 2.0]])
        d = build_relaxed_D(u, u, [(0, 0, "no-change")], RbfKernel(1.0))
        assert d.toarray()[0, 0] == 1.0

    def test_change_identical(self):
        u = fm([[1.0, 2.0]])
        d = build_relaxed_D(u, u, [(0, 0, Label.CHANGE)], RbfKernel(1.0))
        assert d.toarray()[0, 0] == 0.0

    def test_semisup_unlabeled_value(self):
        u = fm([[0.0]])
        v = fm([[math.sqrt(2.0)]])
        d = build_relaxed_D(u, v, [], RbfKernel(1.0), semisup=True, unlabeled_pairs=[(0, 0)])
        assert d.toarray()[0, 0] == pytest.approx(2 * math.exp(-1) - 1, abs=1e-12)
        assert d.toarray()[0, 0] == pytest.approx(-0.2642, abs=1e-4)

    def test_unlabeled_ignored_without_semisup(self):
        u = fm([[0.0, 1.0]])
        d = build_relaxed_D(u, u, [], RbfKernel(1.0), unlabeled_pairs=[(0, 1)])
        assert not d.toarray().any() and not d.includes_unlabeled

    def test_conflicting_labels(self):
        u = fm([[0.0, 1.0]])
        with pytest.raises(InconsistentLabelError):
            build_relaxed_D(u, u, [(0, 1, 1), (0, 1, -1)], RbfKernel(1.0))

    def test_labeled_and_unlabeled_conflict(self):
        u = fm([[0.0, 1.0]])
        with pytest.raises(InconsistentLabelError):
            build_relaxed_D(u, u, [(0, 1, 1)], RbfKernel(1.0), semisup=True, unlabeled_pairs=[(0, 1)])

    def test_out_of_bounds(self):
        u = fm([[0.0, 1.0]])
        with pytest.raises(ShapeError):
            build_relaxed_D(u, u, [(0, 5, 1)], RbfKernel(1.0))

    def test_entries_in_range(self):
        rng = np.random.default_rng(9)
        u, v = fm(rng.standard_normal((3, 12))), fm(rng.standard_normal((3, 12)))
        lab = [(i, j, rng.choice([-1, 1])) for i in range(6) for j in range(6)]
        unl = [(i, j) for i in range(6, 12) for j in range(6, 12)]
        d = build_relaxed_D(u, v, lab, RbfKernel(0.8), semisup=True, unlabeled_pairs=unl).toarray()
        assert d.min() >= -1 and d.max() <= 1


class TestDense:
    def test_identical_pair(self):
        u = fm([[1.0, 1.0], [2.0, 2.0]])
        np.testing.assert_array_equal(build_dense_crosssim_D(u, u, RbfKernel(1.0)).toarray(), np.ones((2, 2)))

    def test_two_clusters_block_structure(self):
        rng = np.random.default_rng(2)
        a = np.hstack([rng.normal(0, 0.1, (2, 5)), rng.normal(50, 0.1, (2, 5))])
        d = build_dense_crosssim_D(fm(a), fm(a), RbfKernel(1.0)).toarray()
        assert d[:5, 5:].max() < 1e-6 and d[5:, :5].max() < 1e-6
        assert not build_dense_crosssim_D(fm(a), fm(a), RbfKernel(1.0)).is_sparse

    def test_formula(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((2, 4)), rng.standard_normal((2, 5))
        k = RbfKernel(0.9)
        expected = [[rbf(x[:, i], y[:, j], k) for j in range(5)] for i in range(4)]
        np.testing.assert_allclose(rbf_matrix(x, y, k), expected, rtol=1e-13)

    def test_noiseless_arc_row_maxima(self):
        toy = generate_arc_toy(100, coord_noise=0.0, color_noise=0.0, seed=0)
        u, v = center_columns(toy.colors_r), center_columns(toy.colors_t)
        d = build_dense_crosssim_D(u, v, rbf_scale_from_quantile(u, v, 0.1)).toarray()
        np.testing.assert_array_equal(np.argmax(d, axis=1), toy.truth_pairing)
