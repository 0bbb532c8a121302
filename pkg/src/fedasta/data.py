"""Dataset ingestion, chronological splits, windowing, scaling and metrics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .graphs import StaticGraph, period_bounds

log = logging.getLogger(__name__)

MAPE_EPS = 1e-3

# (nodes, edges, steps); edges None where no sensor geometry is published
PRESETS: dict[str, tuple[int, int | None, int]] = {
    "PEMS03": (358, 304, 26208),
    "PEMS04": (307, 340, 16992),
    "PEMS08": (170, 295, 17856),
    "METR-LA": (270, 1515, 34272),
    "Solar": (137, None, 52560),
    "ECL": (321, None, 26304),
}


@dataclass
class Dataset:
    name: str
    values: np.ndarray  # (N, T, D)
    graph: StaticGraph | None = None
    step_minutes: float = 5.0
    node_ids: list[str] = field(default_factory=list)
    # per-period cluster labels (P, N) for synthetic data
    labels: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]

    def check_preset(self) -> None:
        if self.name in PRESETS:
            n, _, t = PRESETS[self.name]
            if (self.n_nodes, self.n_steps) != (n, t):
                raise IngestionError(
                    f"{self.name} expects {n} nodes x {t} steps, got {self.n_nodes} x {self.n_steps}"
                )


def load_csv(path: str | Path, graph_path: str | Path | None = None, name: str | None = None,
             symmetrize: bool = True) -> Dataset:
    """Read a values CSV (``timestamp,node_0,...``) and optional adjacency CSV
    (``from,to,distance``). Empty cells are forward-filled."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if len(header) < 2:
            raise IngestionError(f"{path}: header needs a timestamp column and at least one node")
        node_ids = [h.strip() for h in header[1:]]
        rows = []
        filled = 0
        last: list[float] | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            vals = []
            for j, cell in enumerate(row[1:]):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    if last is None:
                        raise IngestionError(f"{path}:{lineno}: missing value with nothing to forward-fill")
                    vals.append(last[j])
                    filled += 1
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise IngestionError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
            rows.append(vals)
            last = vals
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    if filled:
        log.info("%s: forward-filled %d missing cells", path, filled)
    values = np.array(rows, dtype=np.float64).T[:, :, None]
    graph = None
    if graph_path is not None:
        graph = load_adjacency(graph_path, node_ids)
        if symmetrize:
            graph = graph.symmetrized()
    ds = Dataset(name or path.stem, values, graph, node_ids=node_ids)
    ds.check_preset()
    return ds


def load_adjacency(path: str | Path, node_ids: list[str]) -> StaticGraph:
    lookup = {nid: i for i, nid in enumerate(node_ids)}
    edges = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["from", "to", "distance"]:
            raise IngestionError(f"{path}: header must be from,to,distance")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise IngestionError(f"{path}:{lineno}: expected 3 cells")
            a, b, d = (c.strip() for c in row)
            for nid in (a, b):
                if nid not in lookup:
                    raise IngestionError(f"{path}:{lineno}: unknown node id {nid!r}")
            try:
                dist = float(d)
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric distance {d!r}") from None
            edges.append((lookup[a], lookup[b], dist))
    return StaticGraph(len(node_ids), tuple(edges))


def write_csv(ds: Dataset, path: str | Path, graph_path: str | Path | None = None) -> None:
    """Inverse of :func:`load_csv` for the target channel."""
    ids = ds.node_ids or [f"node_{i}" for i in range(ds.n_nodes)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", *ids])
        for t in range(ds.n_steps):
            w.writerow([t, *(repr(float(v)) for v in ds.values[:, t, 0])])
    if graph_path is not None and ds.graph is not None:
        with Path(graph_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "distance"])
            for a, b, d in ds.graph.edges:
                w.writerow([ids[a], ids[b], repr(float(d))])


# ----------------------------------------------------------------------------
# splits and windows


@dataclass(frozen=True)
class SampleWindow:
    node_id: int
    input: np.ndarray
    target: np.ndarray
    start: int


@dataclass(frozen=True)
class SampleSet:
    """Window start steps inside one split ``[lo, hi)``.

    A window starting at ``s`` reads inputs ``[s, s + in_len)`` and targets
    ``[s + in_len, s + in_len + out_len)``.
    """

    lo: int
    hi: int
    starts: np.ndarray
    in_len: int
    out_len: int

    def __len__(self) -> int:
        return int(self.starts.size)

    def inputs(self, values: np.ndarray, starts: np.ndarray | None = None) -> np.ndarray:
        """``(B, N, in_len, D)`` block for the given starts."""
        s = self.starts if starts is None else starts
        idx = s[:, None] + np.arange(self.in_len)
        return np.transpose(values[:, idx, :], (1, 0, 2, 3))

    def targets(self, values: np.ndarray, starts: np.ndarray | None = None) -> np.ndarray:
        """``(B, N, out_len)`` block of the target channel."""
        s = self.starts if starts is None else starts
        idx = s[:, None] + self.in_len + np.arange(self.out_len)
        return np.transpose(values[:, idx, 0], (1, 0, 2))

    def windows(self, values: np.ndarray, node_id: int):
        for s in self.starts:
            yield SampleWindow(
                node_id,
                values[node_id, s : s + self.in_len, :],
                values[node_id, s + self.in_len : s + self.in_len + self.out_len, 0:1],
                int(s),
            )


@dataclass(frozen=True)
class Splits:
    train: SampleSet
    val: SampleSet
    test: SampleSet


def split_bounds(T: int, ratios: tuple[float, float, float]) -> tuple[int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    a = int(np.floor(T * ratios[0] + 1e-9))
    b = int(np.floor(T * (ratios[0] + ratios[1]) + 1e-9))
    return a, b


def split_and_window(
    ds: Dataset,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    in_len: int = 12,
    out_len: int = 12,
) -> Splits:
    """Chronological split, then every full window inside each split."""
    T = ds.n_steps
    a, b = split_bounds(T, ratios)
    sets = []
    for name, lo, hi in (("train", 0, a), ("val", a, b), ("test", b, T)):
        count = hi - lo - in_len - out_len + 1
        if count < 1:
            raise ConfigurationError(f"{name} split [{lo}, {hi}) too short for one {in_len}+{out_len} window")
        sets.append(SampleSet(lo, hi, np.arange(lo, lo + count), in_len, out_len))
    return Splits(*sets)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray  # (N,)
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, hi: int) -> "Normalizer":
        target = values[:, :hi, 0]
        mean = target.mean(axis=1)
        std = target.std(axis=1)
        if np.any(std <= 0):
            log.warning("%d node(s) have zero variance in the train split; using std 1", int(np.sum(std <= 0)))
            std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Scale the target channel of ``(N, T, D)`` values."""
        out = np.array(values, dtype=np.float64, copy=True)
        out[:, :, 0] = (out[:, :, 0] - self.mean[:, None]) / self.std[:, None]
        return out

    def inverse(self, values: np.ndarray) -> np.ndarray:
        out = np.array(values, dtype=np.float64, copy=True)
        out[:, :, 0] = out[:, :, 0] * self.std[:, None] + self.mean[:, None]
        return out

    def inverse_target(self, y: np.ndarray) -> np.ndarray:
        """Undo scaling on ``(..., N, H)`` target arrays."""
        return y * self.std[:, None] + self.mean[:, None]


# ----------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float  # percent; nan when no entry passes the zero guard
    rmse: float


def metrics(y_hat: np.ndarray, y: np.ndarray) -> Metrics:
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.shape != y.shape:
        raise ConfigurationError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    e = y_hat - y
    mae = float(np.mean(np.abs(e)))
    rmse = float(np.sqrt(np.mean(e**2)))
    keep = np.abs(y) > MAPE_EPS
    mape = float(100 * np.mean(np.abs(e[keep]) / np.abs(y[keep]))) if keep.any() else float("nan")
    return Metrics(mae, mape, rmse)


# ----------------------------------------------------------------------------
# synthetic data


def synth_two_cluster(
    n_per_cluster: int = 8,
    T: int = 2016,
    periods: int = 4,
    noise_sd: float = 0.05,
    seed: int = 0,
    swap: bool = False,
    shared_sd: float = 0.3,
    lag: int = 0,
) -> Dataset:
    """Two node clusters with different daily shapes.

    Cluster A follows ``sin(2 pi t / 24)``, cluster B ``sin(2 pi t / 12)``.
    Each cluster adds a level, a slow trend and a shared stochastic
    oscillation (AR(2), common to all members) so neighbours carry
    information about each other. With ``lag > 0`` the j-th member of a
    cluster sees that oscillation ``lag * j`` steps late, like a wave moving
    down a road, so upstream members lead downstream ones. Every node adds i.i.d. noise of
    ``noise_sd``. With ``swap`` the first half of each cluster trades
    membership in every odd period.

    Nodes sit on a line (cluster A at 0.., cluster B far away), which gives
    the static graph: consecutive nodes within a cluster are linked.
    """
    if min(n_per_cluster, T, periods) < 1 or noise_sd < 0 or lag < 0:
        raise ConfigurationError("synthetic recipe needs positive sizes and non-negative noise")
    rng = np.random.default_rng(seed)
    n = 2 * n_per_cluster
    t = np.arange(T, dtype=np.float64)

    def shared_process() -> np.ndarray:
        # damped oscillation with period ~6 steps
        r, theta = 0.9, 2 * np.pi / 6
        a1, a2 = 2 * r * np.cos(theta), -(r**2)
        m = T + lag * n_per_cluster
        out = np.zeros(m)
        eta = rng.normal(0.0, 1.0, size=m)
        for i in range(2, m):
            out[i] = a1 * out[i - 1] + a2 * out[i - 2] + eta[i]
        return shared_sd * out / max(out.std(), 1e-12)

    base = [
        np.sin(2 * np.pi * t / 24) + 0.5 + 0.3 * np.sin(2 * np.pi * t / 288),
        np.sin(2 * np.pi * t / 12) - 0.5 + 0.3 * np.cos(2 * np.pi * t / 288),
    ]
    shared = [shared_process(), shared_process()]
    head = lag * n_per_cluster

    def latent(c: int, pos: int) -> np.ndarray:
        d = lag * pos
        return base[c] + shared[c][head - d : head - d + T]

    bounds = period_bounds(0, T, periods)
    labels = np.zeros((periods, n), dtype=np.int64)
    for p in range(periods):
        lab = np.repeat([0, 1], n_per_cluster)
        if swap and p % 2 == 1:
            h = n_per_cluster // 2
            lab[:h] = 1
            lab[n_per_cluster : n_per_cluster + h] = 0
        labels[p] = lab

    values = np.empty((n, T))
    for p in range(periods):
        lo, hi = bounds[p], bounds[p + 1]
        for i in range(n):
            values[i, lo:hi] = latent(labels[p, i], i % n_per_cluster)[lo:hi]
    values += rng.normal(0.0, noise_sd, size=values.shape) if noise_sd > 0 else 0.0

    edges = []
    for c in range(2):
        for j in range(n_per_cluster - 1):
            a, b = c * n_per_cluster + j, c * n_per_cluster + j + 1
            d = 0.05 + 0.95 * ((a * 7 + b * 3) % 5) / 4
            edges += [(a, b, d), (b, a, d)]
    return Dataset(
        "synthetic",
        values[:, :, None],
        StaticGraph(n, tuple(edges)),
        node_ids=[f"node_{i}" for i in range(n)],
        step_minutes=5.0,
        labels=labels,
    )
