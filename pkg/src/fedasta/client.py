"""Per-node forecasting model.

A window is split into trend and seasonal parts. The seasonal part (plus any
auxiliary channels) goes through a stacked GRU whose final state ``h`` is
uploaded. The trend part feeds a linear projection locally and, once per
period, a filtered Fourier transform whose sparse spectrum is uploaded for
graph construction. The seasonal forecast comes from an affine head on
``concat(h, h_agg)``; the final forecast is seasonal plus trend.

Windows are batch-first here: ``(B, L, D)``. Channel 0 is the forecast target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .decomposition import moving_average
from .errors import ConfigurationError, DimensionError, NumericOverflowError, ProtocolError
from .nn import GruCache, Params, gru_backward, gru_sequence_forward, init_gru, init_linear
from .spectral import SparseSpectrum, Threshold, filtered_ft


@dataclass(frozen=True)
class ClientSpec:
    input_len: int = 12
    horizon: int = 12
    input_dim: int = 1
    hidden: int = 100
    layers: int = 2
    server_hidden: int = 100
    window: int = 5
    decompose: bool = True

    def __post_init__(self):
        if self.window % 2 == 0 or not 1 <= self.window <= self.input_len:
            raise ConfigurationError(f"decomposition window {self.window} invalid for input length {self.input_len}")


def init_client(spec: ClientSpec, rng: np.random.Generator) -> Params:
    params = init_gru(spec.input_dim, spec.hidden, spec.layers, rng, prefix="enc")
    init_linear(params, "head", spec.hidden + spec.server_hidden, spec.horizon, rng)
    if spec.decompose:
        init_linear(params, "trend", spec.input_len, spec.horizon, rng)
    return params


@dataclass
class Encoding:
    h: np.ndarray  # (B, H)
    trend: np.ndarray  # (B, L) target-channel trend (zeros without decomposition)
    spectra: list[SparseSpectrum] | None
    cache: GruCache


@dataclass
class Forecast:
    seasonal_pred: np.ndarray
    trend_pred: np.ndarray
    y_hat: np.ndarray


@dataclass
class PredictCache:
    params: Params
    combined: np.ndarray  # concat(h, h_agg)
    trend: np.ndarray
    hidden: int
    used: bool = False


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :, None], True
    if x.ndim == 2:
        return x[None], True
    if x.ndim != 3:
        raise DimensionError(f"client windows must be (L,), (L, D) or (B, L, D), got {x.shape}")
    return x, False


def split_window(x: np.ndarray, spec: ClientSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(encoder_input (B, L, D), trend (B, L))`` for a batch of windows."""
    if x.shape[1] != spec.input_len:
        raise DimensionError(f"window length {x.shape[1]} != configured input length {spec.input_len}")
    if x.shape[2] != spec.input_dim:
        raise DimensionError(f"window has {x.shape[2]} channels, model expects {spec.input_dim}")
    if not spec.decompose:
        return x, np.zeros(x.shape[:2])
    trend = moving_average(x[:, :, 0].T, spec.window).T
    enc_in = x.copy()
    enc_in[:, :, 0] = x[:, :, 0] - trend
    return enc_in, trend


def client_encode(
    x: np.ndarray,
    params: Params,
    spec: ClientSpec,
    threshold: Threshold | None = None,
) -> Encoding:
    """Encode one window ``(L, D)`` or a batch ``(B, L, D)``.

    When ``threshold`` is given, each window's trend (or raw target without
    decomposition) is also reduced to a sparse spectrum.
    """
    xb, _ = _as_batch(x)
    enc_in, trend = split_window(xb, spec)
    h, cache = gru_sequence_forward(np.transpose(enc_in, (1, 0, 2)), params, prefix="enc")
    spectra = None
    if threshold is not None:
        source = trend if spec.decompose else xb[:, :, 0]
        spectra = [filtered_ft(row, threshold) for row in source]
    return Encoding(h, trend, spectra, cache)


def client_predict(
    h: np.ndarray, h_agg: np.ndarray, trend: np.ndarray, params: Params
) -> tuple[Forecast, PredictCache]:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    h_agg = np.atleast_2d(np.asarray(h_agg, dtype=np.float64))
    trend = np.atleast_2d(np.asarray(trend, dtype=np.float64))
    w = params["head.w"]
    if h.shape[1] + h_agg.shape[1] != w.shape[0] or h.shape[0] != h_agg.shape[0]:
        raise DimensionError(
            f"head expects width {w.shape[0]}, got h {h.shape} and h_agg {h_agg.shape}"
        )
    combined = np.concatenate([h, h_agg], axis=1)
    seasonal = combined @ w + params["head.b"]
    if "trend.w" in params:
        if trend.shape[1] != params["trend.w"].shape[0]:
            raise DimensionError(f"trend window {trend.shape} does not match projection {params['trend.w'].shape}")
        trend_pred = trend @ params["trend.w"] + params["trend.b"]
    else:
        trend_pred = np.zeros_like(seasonal)
    fc = Forecast(seasonal, trend_pred, seasonal + trend_pred)
    return fc, PredictCache(params, combined, trend, h.shape[1])


def mse(y_hat: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((y_hat - y) ** 2))


def client_loss_and_grads(
    forecast: Forecast, y: np.ndarray, cache: PredictCache, node_id: int | None = None
) -> tuple[float, Params]:
    """MSE over the horizon (and batch) with gradients for the head/trend
    parameters plus ``"d_h"`` and ``"d_h_agg"`` for the two inputs."""
    if cache.used:
        raise ProtocolError("prediction cache already consumed")
    cache.used = True
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape != forecast.y_hat.shape:
        raise DimensionError(f"target {y.shape} does not match forecast {forecast.y_hat.shape}")
    err = forecast.y_hat - y
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NumericOverflowError(f"non-finite loss on node {node_id}")
    d_y = 2.0 * err / err.size
    p = cache.params
    grads: Params = {
        "head.w": cache.combined.T @ d_y,
        "head.b": d_y.sum(axis=0),
    }
    if "trend.w" in p:
        grads["trend.w"] = cache.trend.T @ d_y
        grads["trend.b"] = d_y.sum(axis=0)
    d_comb = d_y @ p["head.w"].T
    grads["d_h"] = d_comb[:, : cache.hidden]
    grads["d_h_agg"] = d_comb[:, cache.hidden :]
    return loss, grads


def client_encoder_backward(encoding: Encoding, d_h: np.ndarray) -> Params:
    grads, _ = gru_backward(encoding.cache, d_h)
    return grads


def period_spectrum(series: np.ndarray, spec: ClientSpec, threshold: Threshold) -> SparseSpectrum:
    """Sparse spectrum of a node's target series over one graph period."""
    series = np.asarray(series, dtype=np.float64)
    source = moving_average(series, spec.window) if spec.decompose else series
    return filtered_ft(source, threshold)
