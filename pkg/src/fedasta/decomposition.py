"""Moving-average trend/seasonal split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class DecomposedWindow:
    trend: np.ndarray
    seasonal: np.ndarray
    window: int


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered mean over ``window`` steps with edge values replicated.

    Operates along axis 0, so ``x`` may be ``(L,)`` or ``(L, ...)``.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.shape[0]
    if window < 1 or window % 2 == 0:
        raise ConfigurationError(f"moving-average window must be odd and positive, got {window}")
    if window > L:
        raise ConfigurationError(f"window {window} exceeds series length {L}")
    if window == 1:
        return x.copy()
    half = window // 2
    padded = np.concatenate([np.repeat(x[:1], half, axis=0), x, np.repeat(x[-1:], half, axis=0)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    return windows.mean(axis=-1)


def decompose(x: np.ndarray, window: int = 5) -> DecomposedWindow:
    """Split ``x`` into a smoothed trend and the seasonal residual ``x - trend``."""
    x = np.asarray(x, dtype=np.float64)
    trend = moving_average(x, window)
    return DecomposedWindow(trend=trend, seasonal=x - trend, window=window)
