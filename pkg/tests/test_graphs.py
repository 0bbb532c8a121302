import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedasta.data import synth_two_cluster
from fedasta.decomposition import moving_average
from fedasta.errors import ConfigurationError, RangeError
from fedasta.graphs import (
    DynamicGraphSchedule,
    StaticGraph,
    build_dynamic_mask,
    build_static_mask,
    identity_mask,
    intra_cluster_fraction,
    neighbor_sets,
    period_bounds,
    schedule_graphs,
)
from fedasta.nn import NEG_INF, masked_softmax_rows
from fedasta.spectral import SparseSpectrum, Threshold, filtered_ft


def brute_k_smallest(row, i, k):
    cands = sorted((row[j], j) for j in range(len(row)) if j != i)
    return sorted(j for _, j in cands[:k])


def sym_distances(rng, n):
    a = rng.random((n, n))
    a = a + a.T
    np.fill_diagonal(a, 0)
    return a


class TestStaticMask:
    def test_zero_distance_weight_one(self):
        m = build_static_mask(StaticGraph(2, ((0, 1, 0.0), (1, 0, 2.0))))
        assert m[0, 1] == 1.0

    def test_weight_at_sigma(self):
        # distances {1, 3} have standard deviation 1, so the distance-1 edge sits at sigma
        g = StaticGraph(2, ((0, 1, 1.0), (1, 0, 3.0)))
        assert build_static_mask(g, 0.0)[0, 1] == pytest.approx(np.exp(-1), abs=1e-12)

    def test_no_edges_identity(self):
        m = build_static_mask(StaticGraph(3, ()))
        assert np.array_equal(m, identity_mask(3))
        assert np.diag(m).tolist() == [1, 1, 1]
        assert (m[~np.eye(3, dtype=bool)] == NEG_INF).all()

    def test_kappa_filters(self):
        g = StaticGraph(3, ((0, 1, 0.1), (1, 2, 5.0)))
        m = build_static_mask(g, 0.1)
        assert m[0, 1] > 0 and m[1, 2] == NEG_INF

    def test_equal_distances_use_unit_sigma(self):
        m = build_static_mask(StaticGraph(2, ((0, 1, 0.5), (1, 0, 0.5))), 0.0)
        assert m[0, 1] == pytest.approx(np.exp(-0.25))

    def test_symmetric_for_symmetric_edges(self, rng):
        edges = []
        for a in range(6):
            for b in range(a + 1, 6):
                if rng.random() < 0.5:
                    d = float(rng.random())
                    edges += [(a, b, d), (b, a, d)]
        m = build_static_mask(StaticGraph(6, tuple(edges)), 0.1)
        assert np.array_equal(m, m.T)

    def test_bad_edges(self):
        with pytest.raises(ConfigurationError):
            StaticGraph(2, ((0, 2, 1.0),))
        with pytest.raises(ConfigurationError):
            StaticGraph(2, ((0, 1, -1.0),))


class TestDynamicMask:
    def test_single_neighbour(self):
        a = np.array([[0, 1, 5], [1, 0, 2], [5, 2, 0]], dtype=float)
        m = build_dynamic_mask(a, 1)
        assert m[0, 1] == 0 and m[0, 2] == NEG_INF and m[0, 0] == 0

    def test_all_zero_distances(self):
        m = build_dynamic_mask(np.zeros((4, 4)), 2)
        for i, nb in enumerate(neighbor_sets(m)):
            assert nb.tolist() == [j for j in range(4) if j != i][:2]
            assert (m[i, nb] == 0).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        a = sym_distances(r, 8)
        for k in (1, 3, 7):
            m = build_dynamic_mask(a, k)
            for i, nb in enumerate(neighbor_sets(m)):
                assert nb.tolist() == brute_k_smallest(a[i], i, k)
                closer = nb[np.argsort(a[i, nb], kind="stable")]
                vals = m[i, closer]
                assert np.all(np.diff(vals) <= 0)
                assert vals.min() >= -1 and vals.max() <= 0

    def test_k_out_of_range(self):
        with pytest.raises(ConfigurationError):
            build_dynamic_mask(np.zeros((3, 3)), 3)
        with pytest.raises(ConfigurationError):
            build_dynamic_mask(np.zeros((3, 3)), 0)

    def test_tie_break_lower_index(self):
        a = np.array([[0, 2, 1, 1], [2, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]], dtype=float)
        assert neighbor_sets(build_dynamic_mask(a, 1))[0].tolist() == [2]

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.integers(1, 6))
    def test_scale_invariance(self, seed, c, k):
        a = sym_distances(np.random.default_rng(seed), 7)
        m1, m2 = build_dynamic_mask(a, k), build_dynamic_mask(a * c, k)
        for i in range(7):
            n1, n2 = neighbor_sets(m1)[i], neighbor_sets(m2)[i]
            assert n1.tolist() == n2.tolist()
            assert np.argsort(-m1[i, n1], kind="stable").tolist() == np.argsort(-m2[i, n2], kind="stable").tolist()

    @settings(max_examples=100)
    @given(arrays(np.float64, (6, 6), elements=st.floats(0, 100)), st.integers(1, 5))
    def test_rows_always_softmaxable(self, a, k):
        m = build_dynamic_mask(a, k)
        assert (np.diag(m) == 0).all()
        assert [len(s) for s in neighbor_sets(m)] == [k] * 6
        np.testing.assert_allclose(masked_softmax_rows(m).sum(1), 1.0)


class TestSchedule:
    def _spectra(self, values, k=4, periods=4):
        b = period_bounds(0, values.shape[1], periods)
        per = [[filtered_ft(moving_average(values[i, b[p]:b[p + 1]], 5), Threshold()) for i in range(values.shape[0])]
               for p in range(periods)]
        return schedule_graphs(per, k, b), b

    def test_single_period(self):
        s = SparseSpectrum(np.array([0]), np.array([1.0]), 4, 0)
        t = SparseSpectrum(np.array([0]), np.array([3.0]), 4, 0)
        sched = schedule_graphs([[s, t, s]], 1, np.array([0, 10]))
        assert sched.n_periods == 1
        for step in range(10):
            assert sched.mask_at(step) is sched.masks[0]

    def test_identical_periods_equal_masks(self, rng):
        sp = [SparseSpectrum(np.array([0, 1]), rng.normal(size=2) + 0j, 8, 0) for _ in range(5)]
        sched = schedule_graphs([sp, sp], 2)
        assert np.array_equal(sched.masks[0], sched.masks[1])

    def test_out_of_range(self):
        sched = DynamicGraphSchedule(np.array([0, 5, 10]), (identity_mask(2), identity_mask(2)))
        assert sched.period_of(4) == 0 and sched.period_of(5) == 1
        with pytest.raises(RangeError):
            sched.period_of(10)
        with pytest.raises(RangeError):
            sched.period_of(-1)
        assert sched.period_or_last(50) == 1

    def test_membership_swap_tracked(self):
        ds = synth_two_cluster(8, 2016, 4, 0.05, seed=3, swap=True)
        sched, _ = self._spectra(ds.values[:, :, 0])
        for p in range(4):
            m = sched.masks[p]
            assert intra_cluster_fraction(m, ds.labels[p]) >= 0.9
        # period 1 groups node 0 with the other cluster
        assert intra_cluster_fraction(sched.masks[1], ds.labels[0]) < 0.9

    def test_period_bounds_partition(self):
        b = period_bounds(0, 103, 4)
        assert b[0] == 0 and b[-1] == 103 and np.all(np.diff(b) > 0)
        with pytest.raises(ConfigurationError):
            period_bounds(0, 3, 4)
