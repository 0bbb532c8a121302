"""Fourier analysis of trend windows and the Fourier sparse distance.

A trend window is transformed with an unnormalised forward DFT, components
whose modulus does not exceed a threshold are dropped, and the surviving
coefficients of all nodes are compared on the union of their index sets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    AsymmetricSpectrumError,
    ConfigurationError,
    DimensionError,
    EmptySpectrumError,
)

IMAG_TOLERANCE = 1e-6
ORACLE_MAX_LEN = 8


@dataclass(frozen=True)
class Spectrum:
    coefficients: np.ndarray  # complex, length L

    @property
    def length(self) -> int:
        return self.coefficients.shape[0]

    @property
    def frequency_indices(self) -> np.ndarray:
        """Signed frequencies ``0, 1, ..., -2, -1`` aligned with the coefficients."""
        L = self.length
        return np.rint(np.fft.fftfreq(L) * L).astype(np.int64)


@dataclass(frozen=True)
class SparseSpectrum:
    indices: np.ndarray  # int64, strictly increasing, within [0, source_length)
    values: np.ndarray  # complex, aligned with indices
    source_length: int
    threshold: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.complex128)
        if idx.shape != vals.shape or idx.ndim != 1:
            raise DimensionError("sparse spectrum indices and values must be aligned 1-D arrays")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.source_length):
            raise ConfigurationError("sparse spectrum indices must be strictly increasing in [0, L)")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def dense(self) -> np.ndarray:
        """Embed into a length-``source_length`` coefficient vector (zeros elsewhere)."""
        out = np.zeros(self.source_length, dtype=np.complex128)
        out[self.indices] = self.values
        return out

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))


@dataclass(frozen=True)
class UnionBasis:
    indices: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class Threshold:
    """How the filtering threshold is chosen.

    ``relative``: ``mu = value * max |coef|`` per spectrum.
    ``absolute``: ``mu = value``.
    """

    mode: str = "relative"
    value: float = 0.1

    def __post_init__(self):
        if self.mode not in ("relative", "absolute"):
            raise ConfigurationError(f"threshold mode must be relative or absolute, got {self.mode!r}")
        if not self.value >= 0:
            raise ConfigurationError("threshold value must be non-negative")

    def resolve(self, spectrum: Spectrum) -> float:
        if self.mode == "absolute":
            return float(self.value)
        return float(self.value * np.abs(spectrum.coefficients).max(initial=0.0))


def dft(x: np.ndarray) -> Spectrum:
    """Forward transform, ``coef[k] = sum_t x[t] exp(-2 pi i k t / L)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError("dft expects a non-empty 1-D series")
    if not np.isfinite(x).all():
        raise ConfigurationError("dft input contains non-finite values")
    return Spectrum(np.fft.fft(x))


def inverse_dft(s: Spectrum | np.ndarray) -> np.ndarray:
    """Inverse transform with ``1/L`` scaling; the result must be real."""
    coef = s.coefficients if isinstance(s, Spectrum) else np.asarray(s, dtype=np.complex128)
    x = np.fft.ifft(coef)
    resid = np.abs(x.imag).max(initial=0.0)
    if resid >= IMAG_TOLERANCE:
        raise AsymmetricSpectrumError(f"imaginary residue {resid:.3g} after inverse transform")
    return x.real.copy()


def filter_spectrum(s: Spectrum, mu: float, *, fallback: bool = False) -> SparseSpectrum:
    """Keep components with ``|coef| > mu`` (strict).

    With ``fallback=True`` an empty result keeps the single largest component
    instead of raising.
    """
    if not mu >= 0:
        raise ConfigurationError(f"threshold must be non-negative, got {mu}")
    mod = np.abs(s.coefficients)
    keep = np.flatnonzero(mod > mu)
    if keep.size == 0:
        if not fallback:
            raise EmptySpectrumError(f"no component exceeds threshold {mu}")
        keep = np.array([int(np.argmax(mod))])
    return SparseSpectrum(keep, s.coefficients[keep], s.length, float(mu))


def filtered_ft(x: np.ndarray, threshold: Threshold = Threshold()) -> SparseSpectrum:
    """DFT followed by thresholding, never returning an empty spectrum."""
    spec = dft(x)
    return filter_spectrum(spec, threshold.resolve(spec), fallback=True)


def union_basis(spectra: Sequence[SparseSpectrum]) -> UnionBasis:
    if not spectra:
        raise ConfigurationError("union_basis needs at least one spectrum")
    lengths = {s.source_length for s in spectra}
    if len(lengths) != 1:
        raise ConfigurationError(f"spectra come from different lengths: {sorted(lengths)}")
    idx = np.unique(np.concatenate([s.indices for s in spectra]))
    return UnionBasis(idx.astype(np.int64))


def embed(s: SparseSpectrum, basis: UnionBasis) -> np.ndarray:
    """Coordinates of ``s`` on ``basis`` (zero where ``s`` has no component)."""
    pos = np.searchsorted(basis.indices, s.indices)
    if s.indices.size and (
        np.any(pos >= basis.size) or np.any(basis.indices[np.minimum(pos, basis.size - 1)] != s.indices)
    ):
        raise ConfigurationError("spectrum index outside the union basis")
    out = np.zeros(basis.size, dtype=np.complex128)
    out[pos] = s.values
    return out


def fsd(a: SparseSpectrum, b: SparseSpectrum, basis: UnionBasis) -> float:
    """Root-mean-square complex difference over the union basis."""
    if basis.size < 1:
        raise ConfigurationError("empty union basis")
    diff = embed(a, basis) - embed(b, basis)
    return float(np.sqrt(np.sum(diff.real**2 + diff.imag**2) / basis.size))


def distance_matrix(spectra: Sequence[SparseSpectrum]) -> np.ndarray:
    """Pairwise FSD between all spectra on their common union basis."""
    if len(spectra) < 2:
        raise ConfigurationError("distance_matrix needs at least two spectra")
    basis = union_basis(spectra)
    coords = np.stack([embed(s, basis) for s in spectra])
    diff = coords[:, None, :] - coords[None, :, :]
    sq = (diff.real**2 + diff.imag**2).sum(axis=-1) / basis.size
    return np.sqrt(sq)


def wasserstein_oracle(a: np.ndarray, b: np.ndarray, p: float = 2.0) -> float:
    """Minimum over index permutations of the mean p-th power difference.

    Brute force over all ``len(a)!`` maps; only meant for tiny validation cases.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("oracle inputs must be equal-length vectors")
    n = a.size
    if n > ORACLE_MAX_LEN:
        raise ConfigurationError(f"oracle limited to length {ORACLE_MAX_LEN}, got {n}")
    best = np.inf
    for perm in itertools.permutations(range(n)):
        cost = np.mean(np.abs(a - b[list(perm)]) ** p)
        best = min(best, cost)
    return float(best ** (1.0 / p))


def restore_conjugate_symmetry(coef: np.ndarray) -> np.ndarray:
    """Make ``coef`` the spectrum of a real signal.

    For every mirrored pair ``(k, L-k)`` the lower index wins when present;
    otherwise the upper one is mirrored down. DC and Nyquist keep their real part.
    """
    coef = np.asarray(coef, dtype=np.complex128)
    L = coef.size
    out = np.zeros_like(coef)
    out[0] = coef[0].real
    for k in range(1, L // 2 + 1):
        j = L - k
        if k == j:
            out[k] = coef[k].real
            continue
        v = coef[k] if coef[k] != 0 else np.conj(coef[j])
        out[k] = v
        out[j] = np.conj(v)
    return out
