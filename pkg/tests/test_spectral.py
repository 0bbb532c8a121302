import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedasta.errors import AsymmetricSpectrumError, ConfigurationError, EmptySpectrumError
from fedasta.spectral import (
    SparseSpectrum,
    Spectrum,
    Threshold,
    UnionBasis,
    dft,
    distance_matrix,
    filter_spectrum,
    filtered_ft,
    fsd,
    inverse_dft,
    restore_conjugate_symmetry,
    union_basis,
    wasserstein_oracle,
)


def naive_dft(x):
    L = len(x)
    t = np.arange(L)
    return np.array([np.sum(x * np.exp(-2j * np.pi * k * t / L)) for k in range(L)])


def direct_fsd(a: SparseSpectrum, b: SparseSpectrum) -> float:
    """Dictionary-based summation over the index union."""
    da = dict(zip(a.indices.tolist(), a.values.tolist()))
    db = dict(zip(b.indices.tolist(), b.values.tolist()))
    keys = set(da) | set(db)
    total = 0.0
    for k in keys:
        d = da.get(k, 0j) - db.get(k, 0j)
        total += d.real * d.real + d.imag * d.imag
    return (total / len(keys)) ** 0.5


def random_sparse(rng, L=16, max_k=6):
    k = int(rng.integers(1, max_k + 1))
    idx = np.sort(rng.choice(L, size=k, replace=False))
    vals = rng.normal(size=k) + 1j * rng.normal(size=k)
    return SparseSpectrum(idx, vals, L, 0.0)


@st.composite
def sparse_spectra(draw, L=12):
    idx = sorted(draw(st.sets(st.integers(0, L - 1), min_size=1, max_size=L)))
    re = draw(arrays(np.float64, len(idx), elements=st.floats(-10, 10)))
    im = draw(arrays(np.float64, len(idx), elements=st.floats(-10, 10)))
    return SparseSpectrum(np.array(idx), re + 1j * im, L, 0.0)


class TestDft:
    def test_constant(self):
        np.testing.assert_allclose(dft(np.ones(4)).coefficients, [4, 0, 0, 0], atol=1e-15)

    def test_impulse(self):
        np.testing.assert_allclose(dft(np.array([1.0, 0, 0, 0])).coefficients, [1, 1, 1, 1], atol=1e-15)

    @pytest.mark.parametrize("L", [1, 2, 7, 64, 100])
    def test_matches_naive_sum(self, L, rng):
        x = rng.normal(size=L)
        np.testing.assert_allclose(dft(x).coefficients, naive_dft(x), atol=1e-9 * max(L, 1))

    @pytest.mark.parametrize("L", [4, 5, 64, 1000, 4096])
    def test_round_trip(self, L, rng):
        x = rng.normal(size=L)
        assert np.abs(inverse_dft(dft(x)) - x).max() < 1e-9

    def test_inverse_trivial(self):
        np.testing.assert_allclose(inverse_dft(np.array([4, 0, 0, 0], dtype=complex)), np.ones(4), atol=1e-15)
        assert not inverse_dft(np.zeros(5, dtype=complex)).any()

    def test_asymmetric_rejected(self):
        with pytest.raises(AsymmetricSpectrumError):
            inverse_dft(np.array([0, 1, 0, 0], dtype=complex))

    def test_conjugate_symmetry_of_real_input(self, rng):
        c = dft(rng.normal(size=9)).coefficients
        for k in range(1, 9):
            assert abs(c[k] - np.conj(c[9 - k])) < 1e-9

    def test_frequency_indices(self):
        assert dft(np.zeros(5)).frequency_indices.tolist() == [0, 1, 2, -2, -1]


class TestFilter:
    def test_strict_threshold(self):
        s = filter_spectrum(Spectrum(np.array([4, 0.5, 0, 0.5], dtype=complex)), 1.0)
        assert s.indices.tolist() == [0]
        assert s.values.tolist() == [4]

    def test_tie_dropped(self):
        s = filter_spectrum(Spectrum(np.array([4, 1.0, 2.0], dtype=complex)), 1.0)
        assert s.indices.tolist() == [0, 2]

    def test_zero_threshold_keeps_nonzero(self):
        c = np.array([1, 2, 3j, -1], dtype=complex)
        assert filter_spectrum(Spectrum(c), 0.0).indices.tolist() == [0, 1, 2, 3]

    def test_two_tone(self):
        L = 64
        t = np.arange(L)
        x = 10 * np.cos(2 * np.pi * 3 * t / L) + np.cos(2 * np.pi * 7 * t / L)
        s = filter_spectrum(dft(x), 2 * L / 2)
        assert s.indices.tolist() == [3, L - 3]
        rec = inverse_dft(s.dense())
        strong = 10 * np.cos(2 * np.pi * 3 * t / L)
        assert np.linalg.norm(rec - strong) / np.linalg.norm(strong) < 1e-9

    def test_empty_raises_without_fallback(self):
        with pytest.raises(EmptySpectrumError):
            filter_spectrum(Spectrum(np.array([1, 1], dtype=complex)), 5.0)

    def test_fallback_keeps_largest(self):
        s = filtered_ft(np.array([0.0, 1.0, 0.0, 0.0]), Threshold("absolute", 100.0))
        assert s.indices.size == 1

    def test_relative_threshold(self):
        x = np.ones(8)
        s = filtered_ft(x)
        assert s.indices.tolist() == [0]
        assert s.values[0] == pytest.approx(8.0)

    @given(arrays(np.float64, 16, elements=st.floats(-10, 10)), st.floats(0, 50), st.floats(0, 50))
    def test_energy_monotone_and_strict(self, x, m1, m2):
        spec = dft(x)
        lo, hi = sorted((m1, m2))
        try:
            a = filter_spectrum(spec, lo)
        except EmptySpectrumError:
            return
        assert (np.abs(a.values) > lo).all()
        try:
            b = filter_spectrum(spec, hi)
        except EmptySpectrumError:
            return
        assert b.energy <= a.energy + 1e-9


class TestUnionAndFsd:
    def test_union_small(self):
        a = SparseSpectrum(np.array([0, 3]), np.ones(2), 8, 0)
        b = SparseSpectrum(np.array([0, 5]), np.ones(2), 8, 0)
        u = union_basis([a, b])
        assert u.indices.tolist() == [0, 3, 5] and u.size == 3
        assert union_basis([a, a]).indices.tolist() == [0, 3]

    def test_union_random_against_sets(self, rng):
        sp = [random_sparse(rng) for _ in range(8)]
        expect = sorted(set().union(*[set(s.indices.tolist()) for s in sp]))
        assert union_basis(sp).indices.tolist() == expect

    def test_union_length_mismatch(self):
        a = SparseSpectrum(np.array([0]), np.ones(1), 8, 0)
        b = SparseSpectrum(np.array([0]), np.ones(1), 9, 0)
        with pytest.raises(ConfigurationError):
            union_basis([a, b])

    def test_fsd_analytic(self):
        a = SparseSpectrum(np.array([0]), np.array([2.0]), 4, 0)
        b = SparseSpectrum(np.array([1]), np.array([2.0]), 4, 0)
        assert fsd(a, b, union_basis([a, b])) == pytest.approx(2.0, abs=1e-15)

    def test_fsd_index_outside_basis(self):
        a = SparseSpectrum(np.array([2]), np.array([1.0]), 4, 0)
        with pytest.raises(ConfigurationError):
            fsd(a, a, UnionBasis(np.array([0, 1])))

    @pytest.mark.parametrize("seed", range(50))
    def test_fsd_matches_direct_summation(self, seed):
        r = np.random.default_rng(seed)
        a, b = random_sparse(r), random_sparse(r)
        assert abs(fsd(a, b, union_basis([a, b])) - direct_fsd(a, b)) < 1e-12

    @settings(max_examples=200)
    @given(sparse_spectra(), sparse_spectra(), sparse_spectra())
    def test_pseudometric(self, a, b, c):
        u = union_basis([a, b, c])
        assert fsd(a, a, u) == 0
        assert fsd(a, b, u) == fsd(b, a, u)
        assert fsd(a, b, u) >= 0
        assert fsd(a, c, u) <= fsd(a, b, u) + fsd(b, c, u) + 1e-9

    @settings(max_examples=100)
    @given(st.integers(1, 6).flatmap(lambda n: st.tuples(
        arrays(np.complex128, n, elements=st.complex_numbers(max_magnitude=10)),
        arrays(np.complex128, n, elements=st.complex_numbers(max_magnitude=10)))))
    def test_wasserstein_below_fsd(self, pair):
        a, b = pair
        n = a.size
        sa = SparseSpectrum(np.arange(n), a, n, 0)
        sb = SparseSpectrum(np.arange(n), b, n, 0)
        assert wasserstein_oracle(a, b) <= fsd(sa, sb, union_basis([sa, sb])) + 1e-9


class TestWassersteinOracle:
    def test_identity(self):
        a = np.array([1 + 1j, 2, 3])
        assert wasserstein_oracle(a, a) == 0

    def test_swap(self):
        assert wasserstein_oracle(np.array([1, 3]), np.array([3, 1])) == 0

    def test_size_limit(self):
        with pytest.raises(ConfigurationError):
            wasserstein_oracle(np.zeros(9), np.zeros(9))


class TestDistanceMatrix:
    def test_identical(self):
        s = SparseSpectrum(np.array([0, 2]), np.array([1, 2j]), 4, 0)
        assert not distance_matrix([s, s, s]).any()

    def test_pair(self, rng):
        a, b = random_sparse(rng), random_sparse(rng)
        d = fsd(a, b, union_basis([a, b]))
        np.testing.assert_allclose(distance_matrix([a, b]), [[0, d], [d, 0]], atol=1e-15)

    def test_matches_loop_oracle(self, rng):
        sp = [random_sparse(rng) for _ in range(8)]
        u = union_basis(sp)
        ref = np.array([[fsd(a, b, u) for b in sp] for a in sp])
        got = distance_matrix(sp)
        np.testing.assert_allclose(got, ref, atol=1e-12)
        assert np.array_equal(got, got.T)
        assert not np.diag(got).any()

    def test_permutation_equivariance(self, rng):
        sp = [random_sparse(rng) for _ in range(6)]
        perm = rng.permutation(6)
        d = distance_matrix(sp)
        dp = distance_matrix([sp[i] for i in perm])
        np.testing.assert_allclose(dp, d[np.ix_(perm, perm)], atol=1e-12)


class TestConjugateSymmetry:
    def test_lower_index_wins(self):
        c = np.array([1, 2 + 1j, 0, 5 + 5j], dtype=complex)
        out = restore_conjugate_symmetry(c)
        assert out[1] == 2 + 1j and out[3] == 2 - 1j
        assert np.abs(np.fft.ifft(out).imag).max() < 1e-12

    def test_upper_mirrored_when_lower_absent(self):
        out = restore_conjugate_symmetry(np.array([0, 0, 0, 1 + 2j]))
        assert out[1] == 1 - 2j and out[3] == 1 + 2j

    def test_real_spectrum_unchanged(self, rng):
        c = dft(rng.normal(size=10)).coefficients
        np.testing.assert_allclose(restore_conjugate_symmetry(c), c, atol=1e-12)

    @pytest.mark.parametrize("combo", list(itertools.product([0, 1], repeat=3)))
    def test_always_real(self, combo, rng):
        c = (rng.normal(size=6) + 1j * rng.normal(size=6)) * np.array([1, *combo, 1, 1])
        assert np.abs(np.fft.ifft(restore_conjugate_symmetry(c)).imag).max() < 1e-12
