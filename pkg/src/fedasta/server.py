"""Server-side spatial encoder built from mask-driven value attention.

Each encoder layer runs one value-attention branch per mask, concatenates the
branch outputs, projects them back to the hidden width and adds the result to
its input. The attention weights come straight from ``softmax(mask)``; there
are no query/key projections on the production path.

Branch names: ``static`` (distance mask), ``dynamic`` (FSD mask) and
``plain`` (all-zero mask, i.e. uniform attention over every node), the last
one only used by the graph-free ablation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, ProtocolError
from .nn import Params, init_linear, linear_forward, masked_softmax_rows, softmax

FULL_BRANCHES = ("static", "dynamic")


def branches_for(no_static: bool = False, no_dynamic: bool = False) -> tuple[str, ...]:
    if no_static and no_dynamic:
        return ("plain",)
    if no_static:
        return ("dynamic",)
    if no_dynamic:
        return ("static",)
    return FULL_BRANCHES


def init_server(
    hidden: int, layers: int, rng: np.random.Generator, branches: tuple[str, ...] = FULL_BRANCHES
) -> Params:
    if hidden < 1 or layers < 1:
        raise ConfigurationError("server hidden width and layer count must be positive")
    params: Params = {}
    for layer in range(layers):
        for br in branches:
            init_linear(params, f"server.{layer}.{br}", hidden, hidden, rng)
        init_linear(params, f"server.{layer}.out", len(branches) * hidden, hidden, rng)
    return params


def server_layout(params: Params) -> tuple[int, tuple[str, ...]]:
    """Infer ``(layers, branches)`` from parameter names."""
    layers = 0
    while f"server.{layers}.out.w" in params:
        layers += 1
    if layers == 0:
        raise ConfigurationError("no server parameters found")
    branches = tuple(b for b in ("static", "dynamic", "plain") if f"server.0.{b}.w" in params)
    return layers, branches


def masked_value_attention(
    h: np.ndarray, mask: np.ndarray, w_v: np.ndarray, b_v: np.ndarray | None = None
) -> np.ndarray:
    """``softmax(mask) @ (h @ w_v + b_v)`` with row-wise masked softmax."""
    h = np.asarray(h, dtype=np.float64)
    if mask.shape[-1] != h.shape[-2]:
        raise DimensionError(f"mask {mask.shape} does not match {h.shape[-2]} nodes")
    if b_v is None:
        b_v = np.zeros(w_v.shape[1])
    return masked_softmax_rows(mask) @ linear_forward(h, w_v, b_v)


def full_masked_attention(
    h: np.ndarray, mask01: np.ndarray, w_q: np.ndarray, w_k: np.ndarray, w_v: np.ndarray
) -> np.ndarray:
    """Query/key attention with a multiplicative 0/1 mask on the scaled logits.

    Masked logits become 0 rather than being excluded, so a masked pair still
    receives weight ``exp(0)`` relative to its row.
    """
    mask01 = np.asarray(mask01, dtype=np.float64)
    if not np.isin(mask01, (0.0, 1.0)).all():
        raise ConfigurationError("mask01 entries must be 0 or 1")
    q, k, v = h @ w_q, h @ w_k, h @ w_v
    logits = (q @ k.T) / np.sqrt(k.shape[1])
    return softmax(logits * mask01, axis=-1) @ v


@dataclass
class AggregatedFeatures:
    branch_outputs: dict[str, np.ndarray]  # last layer, per branch
    h_agg: np.ndarray

    @property
    def h_static(self) -> np.ndarray | None:
        return self.branch_outputs.get("static")

    @property
    def h_dynamic(self) -> np.ndarray | None:
        return self.branch_outputs.get("dynamic")


@dataclass
class ServerCache:
    params: Params
    layers: int
    branches: tuple[str, ...]
    probs: dict[str, np.ndarray]
    xs: list[np.ndarray] = field(default_factory=list)
    concats: list[np.ndarray] = field(default_factory=list)
    used: bool = False


def attention_weights(
    branches: tuple[str, ...], n: int, mask_dis: np.ndarray | None, mask_dyn: np.ndarray | None
) -> dict[str, np.ndarray]:
    probs = {}
    for br in branches:
        if br == "static":
            m = mask_dis
        elif br == "dynamic":
            m = mask_dyn
        else:
            m = np.zeros((n, n))
        if m is None:
            raise ConfigurationError(f"branch {br!r} needs a mask")
        if m.shape[-1] != n or m.shape[-2] != n:
            raise DimensionError(f"{br} mask {m.shape} does not match {n} nodes")
        probs[br] = masked_softmax_rows(m)
    return probs


def server_forward(
    h: np.ndarray,
    mask_dis: np.ndarray | None,
    mask_dyn: np.ndarray | None,
    params: Params,
) -> tuple[AggregatedFeatures, ServerCache]:
    """Run every encoder layer over node features ``h``.

    ``h`` is ``(N, H)`` or a batch ``(B, N, H)``; masks are ``(N, N)`` or one
    per batch element ``(B, N, N)``.
    """
    h = np.asarray(h, dtype=np.float64)
    layers, branches = server_layout(params)
    hidden = params["server.0.out.w"].shape[1]
    if h.shape[-1] != hidden:
        raise DimensionError(f"node features width {h.shape[-1]} != server width {hidden}")
    probs = attention_weights(branches, h.shape[-2], mask_dis, mask_dyn)
    cache = ServerCache(params, layers, branches, probs)
    x = h
    outs: dict[str, np.ndarray] = {}
    for layer in range(layers):
        outs = {}
        for br in branches:
            v = x @ params[f"server.{layer}.{br}.w"] + params[f"server.{layer}.{br}.b"]
            outs[br] = probs[br] @ v
        c = np.concatenate([outs[br] for br in branches], axis=-1)
        cache.xs.append(x)
        cache.concats.append(c)
        x = x + c @ params[f"server.{layer}.out.w"] + params[f"server.{layer}.out.b"]
    return AggregatedFeatures(outs, x), cache


def server_backward(cache: ServerCache, d_h_agg: np.ndarray) -> tuple[Params, np.ndarray]:
    """Exact gradients for the server parameters and the uploaded features."""
    if cache.used:
        raise ProtocolError("server cache already consumed")
    cache.used = True
    p = cache.params
    dx = np.asarray(d_h_agg, dtype=np.float64)
    if dx.shape != cache.xs[0].shape:
        raise ProtocolError(f"gradient shape {dx.shape} does not match forward input {cache.xs[0].shape}")
    grads: Params = {}
    hidden = dx.shape[-1]
    for layer in reversed(range(cache.layers)):
        x, c = cache.xs[layer], cache.concats[layer]
        w_out = p[f"server.{layer}.out.w"]
        grads[f"server.{layer}.out.w"] = c.reshape(-1, c.shape[-1]).T @ dx.reshape(-1, hidden)
        grads[f"server.{layer}.out.b"] = dx.reshape(-1, hidden).sum(axis=0)
        d_c = dx @ w_out.T
        d_x = dx.copy()
        for j, br in enumerate(cache.branches):
            d_o = d_c[..., j * hidden : (j + 1) * hidden]
            d_v = np.swapaxes(cache.probs[br], -1, -2) @ d_o
            grads[f"server.{layer}.{br}.w"] = x.reshape(-1, hidden).T @ d_v.reshape(-1, hidden)
            grads[f"server.{layer}.{br}.b"] = d_v.reshape(-1, hidden).sum(axis=0)
            d_x += d_v @ p[f"server.{layer}.{br}.w"].T
        dx = d_x
    return grads, dx
