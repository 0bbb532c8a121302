"""Stable-noise perturbation of uploads and the reconstruction-attack harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .spectral import SparseSpectrum, inverse_dft, restore_conjugate_symmetry

TARGETS = ("off", "hidden", "spectrum", "both")


@dataclass(frozen=True)
class NoisePolicy:
    """Parameters of the alpha-stable noise ``S(alpha, beta, c, shift)``.

    ``scale`` is the absolute scale used for hidden states; ``intensity`` is
    the relative factor ``E`` applied to spectrum amplitudes.
    """

    alpha: float = 1.0
    beta: float = 0.0
    scale: float = 0.0
    intensity: float = 0.0
    shift: float = 0.0
    target: str = "off"

    def __post_init__(self):
        if not 0 < self.alpha <= 2:
            raise ConfigurationError(f"alpha must lie in (0, 2], got {self.alpha}")
        if not -1 <= self.beta <= 1:
            raise ConfigurationError(f"beta must lie in [-1, 1], got {self.beta}")
        if self.scale < 0 or self.intensity < 0:
            raise ConfigurationError("noise scale and intensity must be non-negative")
        if self.target not in TARGETS:
            raise ConfigurationError(f"noise target must be one of {TARGETS}, got {self.target!r}")

    @property
    def noises_hidden(self) -> bool:
        return self.target in ("hidden", "both")

    @property
    def noises_spectrum(self) -> bool:
        return self.target in ("spectrum", "both")


@dataclass(frozen=True)
class DpBudget:
    epsilon: float
    delta: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if not 0 < self.delta < 0.5:
            raise ConfigurationError(f"delta must lie in (0, 1/2), got {self.delta}")
        if not self.sensitivity > 0:
            raise ConfigurationError("sensitivity must be positive")


def stable_transform(u: np.ndarray, w: np.ndarray, alpha: float, beta: float = 0.0) -> np.ndarray:
    """Chambers-Mallows-Stuck map from ``u ~ U(0, 1)``, ``w ~ Exp(1)`` to a
    standard stable variate ``S(alpha, beta, 1, 0)``."""
    v = np.pi * (np.asarray(u, dtype=np.float64) - 0.5)
    w = np.asarray(w, dtype=np.float64)
    if alpha == 1.0:
        half_pi = np.pi / 2
        bv = half_pi + beta * v
        return (2 / np.pi) * (bv * np.tan(v) - beta * np.log(half_pi * w * np.cos(v) / bv))
    t = beta * np.tan(np.pi * alpha / 2)
    b = np.arctan(t) / alpha
    s = (1 + t * t) ** (1 / (2 * alpha))
    return (
        s
        * np.sin(alpha * (v + b))
        / np.cos(v) ** (1 / alpha)
        * (np.cos(v - alpha * (v + b)) / w) ** ((1 - alpha) / alpha)
    )


def sample_stable(
    policy: NoisePolicy, n: int | tuple[int, ...], rng: np.random.Generator, scale: float | np.ndarray | None = None
) -> np.ndarray:
    """Draw i.i.d. stable noise. ``scale`` overrides ``policy.scale`` and may be
    an array broadcastable to the output shape."""
    c = policy.scale if scale is None else scale
    u = rng.uniform(0.0, 1.0, size=n)
    # exclude the open-interval endpoints where the transform is singular
    u = np.clip(u, 1e-300, 1 - 1e-16)
    w = rng.standard_exponential(size=n)
    x = stable_transform(u, w, policy.alpha, policy.beta)
    c = np.asarray(c, dtype=np.float64)
    if policy.alpha == 1.0 and policy.beta != 0.0:
        safe = np.where(c > 0, c, 1.0)
        return c * x + (2 / np.pi) * policy.beta * c * np.log(safe) + policy.shift
    return c * x + policy.shift


def cauchy_min_scale(budget: DpBudget) -> float:
    """Lower bound on the Cauchy scale for an ``(epsilon, delta)`` guarantee:
    ``df (1 + e^(eps/2)) / ((e^eps - 1) (1/2 + tan(pi delta)))``."""
    eps, delta, df = budget.epsilon, budget.delta, budget.sensitivity
    return df * (1 + math.exp(eps / 2)) / (math.expm1(eps) * (0.5 + math.tan(math.pi * delta)))


def noise_hidden(h: np.ndarray, policy: NoisePolicy, rng: np.random.Generator) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if policy.scale == 0:
        return h.copy()
    return h + sample_stable(policy, h.shape, rng)


def noise_spectrum(
    s: SparseSpectrum, intensity: float, rng: np.random.Generator, policy: NoisePolicy | None = None
) -> SparseSpectrum:
    """Perturb amplitudes only: ``|v| -> max(0, |v| + n)`` with ``n`` drawn at
    scale ``intensity * |v|``. Phases and the index set are untouched.

    ``beta`` and ``shift`` are forced to zero.
    """
    if intensity < 0:
        raise ConfigurationError("noise intensity must be non-negative")
    if intensity == 0:
        return s
    alpha = 1.0 if policy is None else policy.alpha
    pol = NoisePolicy(alpha=alpha, beta=0.0, shift=0.0, target="spectrum")
    amp = np.abs(s.values)
    phase = np.angle(s.values)
    noisy = np.maximum(0.0, amp + sample_stable(pol, amp.shape, rng, scale=intensity * amp))
    return replace(s, values=noisy * np.exp(1j * phase))


# ----------------------------------------------------------------------------
# attack harness


def attack_reconstruct(spectra: list[SparseSpectrum], L: int | None = None) -> np.ndarray:
    """Invert each period's sparse spectrum and concatenate the segments."""
    parts = []
    for s in spectra:
        n = s.source_length if L is None else L
        if n != s.source_length:
            raise ConfigurationError(f"spectrum of length {s.source_length} cannot embed at length {n}")
        parts.append(inverse_dft(restore_conjugate_symmetry(s.dense())))
    return np.concatenate(parts) if parts else np.zeros(0)


def attack_success_rate(predictions: np.ndarray, truth: np.ndarray, threshold: float) -> float:
    """Fraction of predictions within ``threshold`` of the truth."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape:
        raise ConfigurationError(f"shape mismatch {predictions.shape} vs {truth.shape}")
    if not threshold > 0:
        raise ConfigurationError("threshold must be positive")
    if predictions.size == 0:
        return 0.0
    return float(np.mean(np.abs(predictions - truth) <= threshold))
