import math

import numpy as np
import pytest

from oracles import brute_objective, exhaustive_optimum, reference_lloyd

from fdcluster.mixtures import MeanModel, kmeans_allocate
from fdcluster.tclust import (TrimSpec, allocate_all, component_log_score,
                              tclust_objective, tclust_step, trimmed_kmeans)

LOG_2PI = math.log(2 * math.pi)


# --- TrimSpec ----------------------------------------------------------------

class TestTrimSpec:
    def test_retained_counts(self):
        assert TrimSpec(0.0).retained_count(10) == 10
        assert TrimSpec(0.25).retained_count(4) == 3
        assert TrimSpec(0.5).retained_count(5) == 2

    def test_float_dust_snaps_to_intended_integer(self):
        # 10 * (1 - 0.9) = 0.9999999999999998 in floats; the rule means 1
        assert TrimSpec(0.9).retained_count(10) == 1
        assert TrimSpec(0.9).retained_count(100) == 10
        assert TrimSpec(0.9).retained_count(1785000) == 178500

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            TrimSpec(1.0)
        with pytest.raises(ValueError):
            TrimSpec(-0.1)


# --- component_log_score -----------------------------------------------------

class TestComponentLogScore:
    def test_at_mean_single_component(self):
        model = MeanModel(np.zeros((1, 4)))
        assert component_log_score(np.zeros(4), model, 1) == pytest.approx(-2 * LOG_2PI)

    def test_argmax_matches_kmeans_allocate(self):
        rng = np.random.default_rng(0)
        model = MeanModel(rng.normal(size=(4, 3)))
        for u in rng.normal(size=(50, 3)):
            scores = [component_log_score(u, model, c) for c in range(1, 5)]
            assert int(np.argmax(scores)) + 1 == kmeans_allocate(u, model)

    def test_plug_in_arithmetic(self):
        # d=2, lam=1, k=2, squared distance 4
        model = MeanModel(np.array([[0.0, 0.0], [9.0, 9.0]]))
        val = component_log_score(np.array([2.0, 0.0]), model, 1)
        assert val == pytest.approx(-math.log(2) - LOG_2PI - 2.0, abs=1e-12)

    def test_component_out_of_range(self):
        model = MeanModel(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            component_log_score(np.zeros(2), model, 3)


# --- tclust_objective --------------------------------------------------------

class TestObjective:
    def test_untrimmed_single_cluster_matches_brute(self):
        rng = np.random.default_rng(1)
        U = rng.normal(size=(12, 3))
        model = MeanModel(U.mean(axis=0, keepdims=True))
        mine = tclust_objective(U, model, TrimSpec(0.0))
        assert mine == pytest.approx(brute_objective(U, model.means, 0.0), abs=1e-10)

    def test_floor_rule_keeps_three_of_four(self):
        U = np.array([[0.0], [1.0], [2.0], [100.0]])
        model = MeanModel(np.array([[1.0]]))
        mine = tclust_objective(U, model, TrimSpec(0.25))
        assert mine == pytest.approx(brute_objective(U, model.means, 0.25), abs=1e-12)
        # the far point is the single trimmed one: value matches 3-point sum
        kept = [-0.5 * LOG_2PI - (u - 1.0) ** 2 / 2 for u in (0.0, 1.0, 2.0)]
        assert mine == pytest.approx(sum(kept) / 4, abs=1e-12)

    def test_far_outlier_does_not_move_trimmed_objective(self):
        rng = np.random.default_rng(2)
        U = rng.normal(size=(9, 2))
        model = MeanModel(np.zeros((1, 2)))
        base = tclust_objective(U, model, TrimSpec(0.1))      # keeps 8 of 9
        spiked = np.vstack([U, [1e6, 1e6]])
        spiked_obj = tclust_objective(spiked, model, TrimSpec(0.2))  # keeps 8 of 10
        assert spiked_obj * 10 == pytest.approx(base * 9, abs=1e-9)

    def test_trim_everything_rejected(self):
        with pytest.raises(ValueError):
            tclust_objective(np.zeros((1, 1)), MeanModel(np.zeros((1, 1))),
                             TrimSpec(0.99))


# --- tclust_step -------------------------------------------------------------

class TestStep:
    def test_fixed_point_at_group_centroids(self):
        rng = np.random.default_rng(3)
        a = rng.normal(-10, 0.5, (20, 2))
        b = rng.normal(10, 0.5, (20, 2))
        U = np.vstack([a, b])
        centroids = np.vstack([a.mean(axis=0), b.mean(axis=0)])
        updated, state = tclust_step(U, MeanModel(centroids), TrimSpec(0.0))
        np.testing.assert_allclose(updated.means, centroids, atol=1e-12)
        assert state.retained_idx.size == 40

    def test_single_cluster_moves_to_grand_mean(self):
        rng = np.random.default_rng(4)
        U = rng.normal(size=(15, 3))
        updated, _ = tclust_step(U, MeanModel(rng.normal(size=(1, 3))), TrimSpec(0.0))
        np.testing.assert_allclose(updated.means[0], U.mean(axis=0), atol=1e-12)

    def test_outlier_trimmed_and_centroids_recovered(self):
        # n=5, one extreme outlier, alpha=0.2 trims exactly one point;
        # oracle: enumerate all 4-subsets and assignments
        U = np.array([[0.0, 0.0], [0.2, 0.0], [5.0, 5.0], [5.2, 5.0], [80.0, -40.0]])
        trim = TrimSpec(0.2)
        model = MeanModel(np.array([[0.0, 0.0], [5.0, 5.0]]))
        updated, state = tclust_step(U, model, trim)
        assert 4 not in state.retained_idx
        np.testing.assert_allclose(
            updated.means, [[0.1, 0.0], [5.1, 5.0]], atol=1e-12)
        assert tclust_objective(U, updated, trim) == pytest.approx(
            exhaustive_optimum(U, 2, 0.2), abs=1e-9)

    def test_objective_monotone_along_iterations(self):
        rng = np.random.default_rng(5)
        U = np.vstack([rng.normal(-3, 1, (30, 2)), rng.normal(3, 1, (30, 2))])
        trim = TrimSpec(0.25)
        model = MeanModel(U[rng.choice(60, 2, replace=False)])
        prev = tclust_objective(U, model, trim)
        for _ in range(10):
            model, state = tclust_step(U, model, trim)
            assert state.objective >= prev - 1e-10
            prev = state.objective

    def test_h_below_k_rejected(self):
        with pytest.raises(ValueError):
            tclust_step(np.zeros((4, 1)), MeanModel(np.zeros((3, 1))), TrimSpec(0.5))


# --- trimmed_kmeans ----------------------------------------------------------

class TestTrimmedKmeans:
    def test_k1_returns_grand_mean(self):
        rng = np.random.default_rng(6)
        U = rng.normal(size=(25, 2))
        fit = trimmed_kmeans(U, 1, TrimSpec(0.0), restarts=3, seed=0)
        np.testing.assert_allclose(fit.model.means[0], U.mean(axis=0), atol=1e-12)
        assert fit.objective == pytest.approx(
            tclust_objective(U, fit.model, TrimSpec(0.0)), abs=1e-12)

    def test_recovers_separated_centers_under_any_seed(self):
        rng = np.random.default_rng(7)
        centers = np.array([[-5.0] * 3, [5.0] * 3])
        U = np.vstack([c + rng.normal(0, 1, (250, 3)) for c in centers])
        for seed in (0, 1, 99):
            fit = trimmed_kmeans(U, 2, TrimSpec(0.0), restarts=5, seed=seed)
            got = fit.model.means[np.argsort(fit.model.means[:, 0])]
            assert np.abs(got - centers).max() < 0.2

    def test_alpha0_matches_reference_lloyd(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            U = rng.normal(size=(120, 2)) + rng.integers(0, 3, 120)[:, None] * 4.0
            init = U[rng.choice(120, 3, replace=False)]
            fit = trimmed_kmeans(U, 3, TrimSpec(0.0), init_means=init)
            ref_labels, ref_means = reference_lloyd(U, init)
            order = np.lexsort(ref_means.T[::-1])
            relabel = np.empty(3, dtype=int)
            relabel[order] = np.arange(3)
            np.testing.assert_array_equal(fit.labels, relabel[ref_labels - 1] + 1)

    def test_trim_count_exact(self):
        rng = np.random.default_rng(9)
        U = rng.normal(size=(101, 2))
        for alpha in (0.0, 0.1, 0.25, 0.5, 0.9):
            fit = trimmed_kmeans(U, 2, TrimSpec(alpha), restarts=2, seed=3)
            h = TrimSpec(alpha).retained_count(101)
            assert int(fit.trimmed.sum()) == 101 - h

    def test_seed_determinism(self):
        rng = np.random.default_rng(10)
        U = rng.normal(size=(200, 3))
        a = trimmed_kmeans(U, 4, TrimSpec(0.2), restarts=6, seed=77)
        b = trimmed_kmeans(U, 4, TrimSpec(0.2), restarts=6, seed=77)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.model.means, b.model.means)
        assert a.objective == b.objective
        assert a.restart_index == b.restart_index

    def test_means_sorted_lexicographically(self):
        rng = np.random.default_rng(11)
        U = rng.normal(size=(60, 2)) + rng.integers(0, 4, 60)[:, None] * 6.0
        fit = trimmed_kmeans(U, 4, TrimSpec(0.0), restarts=8, seed=1)
        means = fit.model.means
        for i in range(3):
            assert tuple(means[i]) <= tuple(means[i + 1])

    def test_small_instance_exhaustive_optimality(self):
        rng = np.random.default_rng(12)
        for trial in range(6):
            n = int(rng.integers(4, 9))
            d = int(rng.integers(1, 3))
            k = int(rng.integers(1, 3))
            alpha = float(rng.choice([0.0, 0.25]))
            if TrimSpec(alpha).retained_count(n) < k:
                continue
            U = rng.normal(size=(n, d))
            fit = trimmed_kmeans(U, k, TrimSpec(alpha), restarts=50, seed=trial)
            oracle = exhaustive_optimum(U, k, alpha)
            assert fit.objective == pytest.approx(oracle, abs=1e-9)

    def test_retained_labels_match_nearest_mean(self):
        rng = np.random.default_rng(13)
        U = rng.normal(size=(80, 2))
        fit = trimmed_kmeans(U, 3, TrimSpec(0.3), restarts=4, seed=5)
        nearest = kmeans_allocate(U, fit.model)
        np.testing.assert_array_equal(fit.labels[~fit.trimmed], nearest[~fit.trimmed])

    def test_k_larger_than_h_rejected(self):
        with pytest.raises(ValueError):
            trimmed_kmeans(np.zeros((3, 1)), 2, TrimSpec(0.5))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            trimmed_kmeans(np.zeros((0, 2)), 1, TrimSpec(0.0))


# --- allocate_all ------------------------------------------------------------

class TestAllocateAll:
    def test_alpha0_identical_to_fit_labels(self):
        rng = np.random.default_rng(14)
        U = rng.normal(size=(90, 2))
        fit = trimmed_kmeans(U, 3, TrimSpec(0.0), restarts=4, seed=2)
        np.testing.assert_array_equal(allocate_all(U, fit), fit.labels)

    def test_trimmed_points_get_nearest_mean(self):
        rng = np.random.default_rng(15)
        U = np.vstack([rng.normal(0, 1, (40, 2)), [[50.0, 50.0]]])
        fit = trimmed_kmeans(U, 2, TrimSpec(0.1), restarts=4, seed=4)
        labels = allocate_all(U, fit)
        assert labels[-1] == kmeans_allocate(U[-1], fit.model)

    def test_heavy_trimming_still_labels_everything(self):
        rng = np.random.default_rng(16)
        U = rng.normal(size=(100, 2))
        fit = trimmed_kmeans(U, 2, TrimSpec(0.9), restarts=4, seed=6)
        labels = allocate_all(U, fit)
        assert labels.shape == (100,)
        assert set(np.unique(labels)) <= {1, 2}
        assert int(fit.trimmed.sum()) == 90
