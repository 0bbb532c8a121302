"""Dense numeric kernel with hand-written reverse-mode gradients.

Everything here operates on float64 numpy arrays. Parameters of a model are
kept in a flat ``dict[str, np.ndarray]`` so that optimizers, averaging and
checkpointing can treat every model the same way.

GRU sequences are laid out time-major: ``(L, B, D)``. A 2-D ``(L, D)`` input
is treated as a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateRowError,
    DimensionError,
    NumericOverflowError,
    ProtocolError,
)

Params = dict[str, np.ndarray]

# Sentinel for excluded attention pairs. Arithmetic on finite data never yields it.
NEG_INF = np.finfo(np.float64).min

_GATES = ("z", "r", "n")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ----------------------------------------------------------------------------
# linear layers


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Affine map ``x @ w + b`` applied to every row of ``x``.

    ``x`` may carry leading batch axes; only its last axis is contracted.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0] or np.shape(b)[-1] != w.shape[1]:
        raise DimensionError(
            f"linear: x {x.shape} @ w {w.shape} + b {np.shape(b)} do not align"
        )
    return x @ w + b


def linear_backward(
    x: np.ndarray, w: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dx, dw, db)`` for ``out = x @ w + b``."""
    x2 = x.reshape(-1, x.shape[-1])
    d2 = d_out.reshape(-1, d_out.shape[-1])
    dw = x2.T @ d2
    db = d2.sum(axis=0)
    dx = d_out @ w.T
    return dx, dw, db


def init_linear(
    params: Params, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator
) -> None:
    bound = 1.0 / np.sqrt(fan_in)
    params[f"{prefix}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    params[f"{prefix}.b"] = rng.uniform(-bound, bound, size=(fan_out,))


# ----------------------------------------------------------------------------
# GRU


def init_gru(
    input_dim: int,
    hidden: int,
    layers: int,
    rng: np.random.Generator,
    prefix: str = "gru",
) -> Params:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised stacked GRU."""
    if input_dim < 1 or hidden < 1 or layers < 1:
        raise ConfigurationError("GRU dimensions must be positive")
    params: Params = {}
    for layer in range(layers):
        d_in = input_dim if layer == 0 else hidden
        bw, bu = 1.0 / np.sqrt(d_in), 1.0 / np.sqrt(hidden)
        for g in _GATES:
            params[f"{prefix}.{layer}.w_{g}"] = rng.uniform(-bw, bw, size=(d_in, hidden))
            params[f"{prefix}.{layer}.u_{g}"] = rng.uniform(-bu, bu, size=(hidden, hidden))
            params[f"{prefix}.{layer}.b_{g}"] = rng.uniform(-bu, bu, size=(hidden,))
    return params


def gru_layers(params: Params, prefix: str = "gru") -> int:
    n = 0
    while f"{prefix}.{n}.w_z" in params:
        n += 1
    if n == 0:
        raise ConfigurationError(f"no GRU parameters under prefix {prefix!r}")
    return n


def gru_cell(
    x: np.ndarray, h: np.ndarray, p: Params, prefix: str, layer: int = 0
) -> np.ndarray:
    """One GRU step. Used directly in tests; the sequence path inlines it."""
    k = f"{prefix}.{layer}."
    z = sigmoid(x @ p[k + "w_z"] + h @ p[k + "u_z"] + p[k + "b_z"])
    r = sigmoid(x @ p[k + "w_r"] + h @ p[k + "u_r"] + p[k + "b_r"])
    n = np.tanh(x @ p[k + "w_n"] + (r * h) @ p[k + "u_n"] + p[k + "b_n"])
    return (1.0 - z) * n + z * h


def _fingerprint(params: Params, prefix: str) -> tuple:
    return tuple(
        (k, float(v.sum()), v.shape) for k, v in sorted(params.items()) if k.startswith(prefix + ".")
    )


@dataclass
class GruCache:
    """Per-step activations stored by :func:`gru_sequence_forward`."""

    params: Params
    prefix: str
    squeeze: bool
    fingerprint: tuple
    inputs: list[np.ndarray] = field(default_factory=list)  # per layer, (L, B, D_l)
    h_prev: list[np.ndarray] = field(default_factory=list)  # per layer, (L, B, H)
    z: list[np.ndarray] = field(default_factory=list)
    r: list[np.ndarray] = field(default_factory=list)
    n: list[np.ndarray] = field(default_factory=list)
    used: bool = False


def _as_sequence(seq: np.ndarray) -> tuple[np.ndarray, bool]:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        return seq[:, None, :], True
    if seq.ndim != 3:
        raise DimensionError(f"GRU input must be (L, D) or (L, B, D), got {seq.shape}")
    return seq, False


def gru_sequence_forward(
    seq: np.ndarray,
    params: Params,
    h0: np.ndarray | list[np.ndarray] | None = None,
    prefix: str = "gru",
) -> tuple[np.ndarray, GruCache]:
    """Run a stacked GRU and return the top layer's final hidden state.

    Layer ``l`` consumes the full output sequence of layer ``l - 1``.
    ``h0`` is one ``(B, H)`` (or ``(1, H)``) state per layer, zeros if omitted.
    """
    x, squeeze = _as_sequence(seq)
    n_layers = gru_layers(params, prefix)
    L, B, D = x.shape
    if L < 1:
        raise DimensionError("GRU sequence must have at least one step")
    if params[f"{prefix}.0.w_z"].shape[0] != D:
        raise DimensionError(
            f"GRU input width {D} != parameter input width {params[f'{prefix}.0.w_z'].shape[0]}"
        )
    H = params[f"{prefix}.0.u_z"].shape[0]
    cache = GruCache(params, prefix, squeeze, _fingerprint(params, prefix))
    for layer in range(n_layers):
        k = f"{prefix}.{layer}."
        if h0 is None:
            h = np.zeros((B, H))
        else:
            h = np.broadcast_to(np.asarray(h0[layer], dtype=np.float64), (B, H)).copy()
        xz = x @ params[k + "w_z"] + params[k + "b_z"]
        xr = x @ params[k + "w_r"] + params[k + "b_r"]
        xn = x @ params[k + "w_n"] + params[k + "b_n"]
        u_z, u_r, u_n = params[k + "u_z"], params[k + "u_r"], params[k + "u_n"]
        hs = np.empty((L, B, H))
        zs, rs, ns, outs = np.empty_like(hs), np.empty_like(hs), np.empty_like(hs), np.empty_like(hs)
        for t in range(L):
            hs[t] = h
            z = sigmoid(xz[t] + h @ u_z)
            r = sigmoid(xr[t] + h @ u_r)
            n = np.tanh(xn[t] + (r * h) @ u_n)
            h = (1.0 - z) * n + z * h
            if not np.isfinite(h).all():
                raise NumericOverflowError(f"GRU layer {layer} non-finite at step {t}")
            zs[t], rs[t], ns[t], outs[t] = z, r, n, h
        cache.inputs.append(x)
        cache.h_prev.append(hs)
        cache.z.append(zs)
        cache.r.append(rs)
        cache.n.append(ns)
        x = outs
    h_final = x[-1]
    return (h_final if not squeeze else h_final.reshape(1, H)), cache


def gru_backward(cache: GruCache, d_h_final: np.ndarray) -> tuple[Params, np.ndarray]:
    """Reverse-mode pass through a cached GRU run.

    Returns ``(grads, d_seq)`` where ``grads`` has one entry per GRU parameter
    and ``d_seq`` matches the shape of the forward input sequence.
    """
    if cache.used:
        raise ProtocolError("GRU cache already consumed by a backward pass")
    if _fingerprint(cache.params, cache.prefix) != cache.fingerprint:
        raise ProtocolError("GRU parameters changed since the forward pass (stale cache)")
    cache.used = True
    p, prefix = cache.params, cache.prefix
    n_layers = len(cache.inputs)
    L, B, H = cache.h_prev[-1].shape
    d_out = np.zeros((L, B, H))
    d_out[-1] = np.asarray(d_h_final, dtype=np.float64).reshape(B, H)
    grads: Params = {}
    for layer in reversed(range(n_layers)):
        k = f"{prefix}.{layer}."
        x, hs = cache.inputs[layer], cache.h_prev[layer]
        zs, rs, ns = cache.z[layer], cache.r[layer], cache.n[layer]
        u_z, u_r, u_n = p[k + "u_z"], p[k + "u_r"], p[k + "u_n"]
        da_z = np.empty((L, B, H))
        da_r = np.empty((L, B, H))
        da_n = np.empty((L, B, H))
        du_z = np.zeros_like(u_z)
        du_r = np.zeros_like(u_r)
        du_n = np.zeros_like(u_n)
        dh = np.zeros((B, H))
        for t in reversed(range(L)):
            dh = dh + d_out[t]
            h, z, r, n = hs[t], zs[t], rs[t], ns[t]
            dn = dh * (1.0 - z)
            dz = dh * (h - n)
            dh_prev = dh * z
            an = dn * (1.0 - n * n)
            rh = r * h
            d_rh = an @ u_n.T
            du_n += rh.T @ an
            dr = d_rh * h
            dh_prev += d_rh * r
            az = dz * z * (1.0 - z)
            ar = dr * r * (1.0 - r)
            du_z += h.T @ az
            du_r += h.T @ ar
            dh_prev += az @ u_z.T + ar @ u_r.T
            da_z[t], da_r[t], da_n[t] = az, ar, an
            dh = dh_prev
        x2 = x.reshape(L * B, -1)
        for g, da in (("z", da_z), ("r", da_r), ("n", da_n)):
            da2 = da.reshape(L * B, H)
            grads[k + f"w_{g}"] = x2.T @ da2
            grads[k + f"b_{g}"] = da2.sum(axis=0)
        grads[k + "u_z"], grads[k + "u_r"], grads[k + "u_n"] = du_z, du_r, du_n
        d_out = da_z @ p[k + "w_z"].T + da_r @ p[k + "w_r"].T + da_n @ p[k + "w_n"].T
    d_seq = d_out[:, 0, :] if cache.squeeze else d_out
    return grads, d_seq


# ----------------------------------------------------------------------------
# attention helpers


def masked_softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax that maps :data:`NEG_INF` entries to exactly zero.

    Works on ``(N, N)`` or stacked ``(..., N, N)`` masks.
    """
    m = np.asarray(m, dtype=np.float64)
    keep = m != NEG_INF
    rows_ok = keep.any(axis=-1)
    if not rows_ok.all():
        bad = np.argwhere(~rows_ok)[0]
        raise DegenerateRowError(int(bad[-1]))
    shifted = np.where(keep, m, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(shifted), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=axis, keepdims=True)


# ----------------------------------------------------------------------------
# optimisation


class SGDMomentum:
    """Heavy-ball SGD: ``v = m * v + g``; ``p -= lr * v``.

    Updates the owning parameter dict in place.
    """

    def __init__(self, params: Params, lr: float, momentum: float = 0.9):
        if not lr >= 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {lr}")
        if not 0 <= momentum < 1:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {momentum}")
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Params) -> None:
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise NumericOverflowError(f"non-finite gradient for parameter {name!r}")
        for name, g in grads.items():
            v = self.velocity[name]
            v *= self.momentum
            v += g
            self.params[name] -= self.lr * v


def sgd_momentum_step(
    params: Params, grads: Params, velocity: Params, lr: float, momentum: float
) -> Params:
    """Functional form of one :class:`SGDMomentum` update, returning new params."""
    if not lr >= 0 or not 0 <= momentum < 1:
        raise ConfigurationError("lr must be >= 0 and momentum in [0, 1)")
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p.copy()
            continue
        if not np.isfinite(g).all():
            raise NumericOverflowError(f"non-finite gradient for parameter {name!r}")
        velocity[name] = momentum * velocity.get(name, np.zeros_like(p)) + g
        out[name] = p - lr * velocity[name]
    return out


def zeros_like_params(params: Params) -> Params:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_grads(into: Params, other: Params) -> Params:
    for k, v in other.items():
        if k in into:
            into[k] = into[k] + v
        else:
            into[k] = v
    return into
