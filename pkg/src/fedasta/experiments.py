"""Experiment drivers shared by the CLI and the demos: ablations, the
edge-count sweep, graph building summaries and the privacy attack sweep."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .client import ClientSpec, period_spectrum
from .data import Dataset, Metrics, Normalizer, metrics, split_bounds
from .decomposition import moving_average
from .graphs import DynamicGraphSchedule, intra_cluster_fraction, neighbor_sets, period_bounds
from .nn import SGDMomentum, gru_backward, gru_sequence_forward, init_gru, init_linear, linear_backward, linear_forward
from .privacy import NoisePolicy, attack_reconstruct, attack_success_rate, noise_spectrum
from .protocol import Federation, TrainConfig
from .spectral import SparseSpectrum

ABLATIONS = {
    "full": {},
    "w/o Decomp.": {"no_decomposition": True},
    "w/o static graph": {"no_static_graph": True},
    "w/o adapt. graph": {"no_dynamic_graph": True},
    "w/o all graph": {"no_static_graph": True, "no_dynamic_graph": True},
}

# best published edge count and its RMSE; kept for display only
EDGE_REFERENCE = (32, 32.61)


def train_and_score(ds: Dataset, cfg: TrainConfig, split: str = "val") -> tuple[Federation, Metrics]:
    fed = Federation(ds, cfg)
    fed.train()
    return fed, fed.evaluate(split).metrics


def run_ablation(ds: Dataset, cfg: TrainConfig, seeds=(0,), variants=None, split: str = "val") -> dict[str, list[Metrics]]:
    """Train every variant for every seed; returns metrics per variant."""
    variants = ABLATIONS if variants is None else {v: ABLATIONS[v] for v in variants}
    out: dict[str, list[Metrics]] = {}
    for name, flags in variants.items():
        out[name] = [train_and_score(ds, replace(cfg, seed=s, **flags), split)[1] for s in seeds]
    return out


def mean_metrics(ms: list[Metrics]) -> Metrics:
    return Metrics(*(float(np.mean([getattr(m, f) for m in ms])) for f in ("mae", "mape", "rmse")))


def ablation_table(results: dict[str, list[Metrics]]) -> str:
    lines = [f"{'variant':<20}{'MAE':>10}{'MAPE(%)':>10}{'RMSE':>10}"]
    for name, ms in results.items():
        m = mean_metrics(ms)
        lines.append(f"{name:<20}{m.mae:>10.4f}{m.mape:>10.2f}{m.rmse:>10.4f}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# edge-count sweep


def edge_sweep(ds: Dataset, cfg: TrainConfig, ks, split: str = "test") -> dict[int, Metrics]:
    return {int(k): train_and_score(ds, replace(cfg, k=int(k)), split)[1] for k in ks}


def edge_table(results: dict[int, Metrics], reference: tuple[int, float] | None = EDGE_REFERENCE) -> str:
    """Rows RMSE / MAE / MAPE, one column per edge count."""
    ks = sorted(results)
    lines = ["#edges" + "".join(f"{k:>10d}" for k in ks)]
    for label, attr, fmt in (("RMSE", "rmse", "{:>10.4f}"), ("MAE", "mae", "{:>10.4f}"), ("MAPE", "mape", "{:>10.2f}")):
        lines.append(f"{label:<6}" + "".join(fmt.format(getattr(results[k], attr)) for k in ks))
    if reference is not None:
        lines.append(f"reference (full-scale, not reproduced): #edges={reference[0]} RMSE {reference[1]}")
    return "\n".join(lines) + "\n"


def edge_sweep_csv(results: dict[int, Metrics]) -> str:
    rows = ["k,mae,mape,rmse"]
    rows += [f"{k},{m.mae!r},{m.mape!r},{m.rmse!r}" for k, m in sorted(results.items())]
    return "\n".join(rows) + "\n"


# ----------------------------------------------------------------------------
# graph summaries


def _labels_for(ds: Dataset, bounds: np.ndarray) -> list[np.ndarray | None]:
    """Ground-truth labels for each graph period, taken at its midpoint."""
    if ds.labels is None:
        return [None] * (len(bounds) - 1)
    lb = period_bounds(0, ds.n_steps, ds.labels.shape[0])
    out = []
    for p in range(len(bounds) - 1):
        mid = (int(bounds[p]) + int(bounds[p + 1]) - 1) // 2
        out.append(ds.labels[int(np.searchsorted(lb, mid, side="right")) - 1])
    return out


def graph_summary(ds: Dataset, schedule: DynamicGraphSchedule) -> str:
    lines = []
    for p, (mask, labels) in enumerate(zip(schedule.masks, _labels_for(ds, schedule.period_boundaries))):
        counts = [len(s) for s in neighbor_sets(mask)]
        lo, hi = schedule.period_boundaries[p], schedule.period_boundaries[p + 1]
        line = f"period {p} steps [{lo}, {hi}) neighbours per row: {counts}"
        if labels is not None:
            line += f" intra-cluster fraction: {intra_cluster_fraction(mask, labels):.4f}"
        lines.append(line)
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# privacy attack


@dataclass(frozen=True)
class PrivacyRow:
    intensity: float
    threshold: float
    reconstruction_mse: float
    model_rmse: float
    success_rate: float


def _windows(series: np.ndarray, in_len: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """All (input, target) windows of a set of 1-D series, stacked."""
    xs, ys = [], []
    for s in series:
        idx = np.arange(len(s) - in_len - out_len + 1)[:, None]
        xs.append(s[idx + np.arange(in_len)])
        ys.append(s[idx + in_len + np.arange(out_len)])
    return np.concatenate(xs), np.concatenate(ys)


def train_attack_model(
    series: np.ndarray, in_len: int, out_len: int, steps: int, lr: float, seed: int,
    hidden: int = 32, batch: int = 64,
):
    """Fit a 1-layer GRU forecaster on (reconstructed) series; returns a predict function."""
    x, y = _windows(series, in_len, out_len)
    rng = np.random.default_rng([seed, 7])
    params = init_gru(1, hidden, 1, rng, prefix="atk")
    init_linear(params, "head", hidden, out_len, rng)
    opt = SGDMomentum(params, lr, 0.9)
    order = np.random.default_rng([seed, 8])
    for _ in range(steps):
        idx = order.integers(0, len(x), size=batch)
        seq = x[idx].T[:, :, None]  # (L, B, 1)
        h, cache = gru_sequence_forward(seq, params, prefix="atk")
        pred = linear_forward(h, params["head.w"], params["head.b"])
        d = 2.0 * (pred - y[idx]) / pred.size
        dh, dw, db = linear_backward(h, params["head.w"], d)
        grads, _ = gru_backward(cache, dh)
        grads["head.w"], grads["head.b"] = dw, db
        opt.step(grads)

    def predict(xq: np.ndarray) -> np.ndarray:
        h, _ = gru_sequence_forward(xq.T[:, :, None], params, prefix="atk")
        return linear_forward(h, params["head.w"], params["head.b"])

    return predict


def client_trend_spectra(
    ds: Dataset, cfg: TrainConfig
) -> tuple[list[list[SparseSpectrum]], np.ndarray]:
    """Per-node, per-period trend spectra over the train span, plus the true
    trends they came from (normalized scale), shape (N, span)."""
    hi, _ = split_bounds(ds.n_steps, cfg.ratios)
    norm = Normalizer.fit(ds.values, hi)
    values = norm.forward(ds.values)[:, :, 0]
    bounds = period_bounds(0, hi, cfg.periods)
    spec = ClientSpec(window=cfg.window, decompose=True)
    spectra, truth = [], []
    for i in range(ds.n_nodes):
        per, tr = [], []
        for p in range(cfg.periods):
            seg = values[i, bounds[p] : bounds[p + 1]]
            per.append(period_spectrum(seg, spec, cfg.threshold))
            tr.append(moving_average(seg, cfg.window))
        spectra.append(per)
        truth.append(np.concatenate(tr))
    return spectra, np.stack(truth)


def privacy_sim(
    ds: Dataset,
    cfg: TrainConfig,
    intensities=(0.0, 0.1, 0.5, 1.0),
    thresholds=(0.1, 0.25, 0.5),
    attack_steps: int = 1000,
    attack_lr: float = 0.05,
    seed: int = 0,
    policy: NoisePolicy | None = None,
) -> list[PrivacyRow]:
    """Noise the uploaded trend spectra at each intensity, reconstruct them as
    the server would, train an attack forecaster on the reconstruction and
    score it against the true trends.

    Draws are common across intensities (same generator seeds), so a larger
    intensity scales the same perturbation.
    """
    spectra, truth = client_trend_spectra(ds, cfg)
    xt, yt = _windows(truth, cfg.input_len, cfg.horizon)
    rows = []
    for e in intensities:
        recon = []
        for i, per in enumerate(spectra):
            noisy = [
                noise_spectrum(s, float(e), np.random.default_rng([seed, 5, i, p]), policy)
                for p, s in enumerate(per)
            ]
            recon.append(attack_reconstruct(noisy))
        recon = np.stack(recon)
        rec_mse = float(np.mean((recon - truth) ** 2))
        predict = train_attack_model(recon, cfg.input_len, cfg.horizon, attack_steps, attack_lr, seed)
        pred = predict(xt)
        rmse = metrics(pred, yt).rmse
        for t in thresholds:
            rows.append(PrivacyRow(float(e), float(t), rec_mse, rmse, attack_success_rate(pred, yt, t)))
    return rows


def privacy_csv(rows: list[PrivacyRow]) -> str:
    out = ["E,threshold,reconstruction_mse,model_rmse,success_rate"]
    out += [f"{r.intensity!r},{r.threshold!r},{r.reconstruction_mse!r},{r.model_rmse!r},{r.success_rate!r}" for r in rows]
    return "\n".join(out) + "\n"
