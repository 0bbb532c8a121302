"""Static distance masks, FSD top-k dynamic masks and per-period schedules.

Masks are dense ``(N, N)`` float arrays. Excluded pairs hold
:data:`fedasta.nn.NEG_INF`; the diagonal is always finite so every row can be
fed to :func:`fedasta.nn.masked_softmax_rows`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, RangeError
from .nn import NEG_INF
from .spectral import SparseSpectrum, distance_matrix

log = logging.getLogger(__name__)

RANGE_EPS = 1e-12


@dataclass(frozen=True)
class StaticGraph:
    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        for a, b, d in self.edges:
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ConfigurationError(f"edge ({a}, {b}) references a node outside [0, {self.n})")
            if not (np.isfinite(d) and d >= 0):
                raise ConfigurationError(f"edge ({a}, {b}) has invalid distance {d}")

    def symmetrized(self) -> "StaticGraph":
        seen = {(a, b): d for a, b, d in self.edges}
        for a, b, d in self.edges:
            seen.setdefault((b, a), d)
        return StaticGraph(self.n, tuple((a, b, d) for (a, b), d in sorted(seen.items())))


def identity_mask(n: int) -> np.ndarray:
    m = np.full((n, n), NEG_INF)
    np.fill_diagonal(m, 1.0)
    return m


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise ConfigurationError(f"mask must be square, got {mask.shape}")
    if np.any(np.diag(mask) == NEG_INF):
        raise ConfigurationError("mask diagonal must be finite")
    return mask


def build_static_mask(g: StaticGraph, kappa: float = 0.1) -> np.ndarray:
    """Thresholded Gaussian kernel ``exp(-d^2 / sigma^2)`` over the edge list.

    ``sigma`` is the standard deviation of all edge distances. Weights below
    ``kappa`` are excluded; the diagonal is forced to 1.
    """
    if not 0 <= kappa < 1:
        raise ConfigurationError(f"kappa must lie in [0, 1), got {kappa}")
    mask = identity_mask(g.n)
    if not g.edges:
        return mask
    dist = np.array([d for _, _, d in g.edges], dtype=np.float64)
    sigma = dist.std()
    if sigma == 0:
        log.warning("all edge distances equal; using sigma = 1")
        sigma = 1.0
    weights = np.exp(-(dist**2) / sigma**2)
    for (a, b, _), w in zip(g.edges, weights):
        if w >= kappa and a != b:
            mask[a, b] = w
    return mask


def build_dynamic_mask(a: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` nearest neighbours per row from a distance matrix.

    Selected entries hold the negated min-max normalised distance (closest
    neighbour 0, farthest selected -1); the diagonal is 0; everything else is
    excluded. Distance ties resolve to the lower node index.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ConfigurationError(f"distance matrix must be square, got {a.shape}")
    if not 1 <= k < n:
        raise ConfigurationError(f"k must satisfy 1 <= k < n={n}, got {k}")
    mask = np.full((n, n), NEG_INF)
    for i in range(n):
        others = np.array([j for j in range(n) if j != i])
        # lexsort: last key is primary
        order = np.lexsort((others, a[i, others]))
        chosen = others[order[:k]]
        d = a[i, chosen]
        lo, hi = d.min(), d.max()
        mask[i, chosen] = -(d - lo) / (hi - lo + RANGE_EPS)
        mask[i, i] = 0.0
    return mask


def neighbor_sets(mask: np.ndarray) -> list[np.ndarray]:
    """Off-diagonal finite entries per row."""
    mask = np.asarray(mask)
    out = []
    for i in range(mask.shape[0]):
        row = np.flatnonzero(mask[i] != NEG_INF)
        out.append(row[row != i])
    return out


def intra_cluster_fraction(mask: np.ndarray, labels: np.ndarray) -> float:
    """Share of selected neighbours that carry the row node's label."""
    labels = np.asarray(labels)
    same = total = 0
    for i, nb in enumerate(neighbor_sets(mask)):
        same += int(np.sum(labels[nb] == labels[i]))
        total += nb.size
    return same / total if total else 1.0


def period_bounds(start: int, stop: int, periods: int) -> np.ndarray:
    """``periods + 1`` integer boundaries splitting ``[start, stop)`` evenly."""
    if periods < 1 or stop - start < periods:
        raise ConfigurationError(f"cannot split [{start}, {stop}) into {periods} periods")
    return np.linspace(start, stop, periods + 1).round().astype(np.int64)


@dataclass(frozen=True)
class DynamicGraphSchedule:
    period_boundaries: np.ndarray  # length P + 1
    masks: tuple[np.ndarray, ...]

    def __post_init__(self):
        b = np.asarray(self.period_boundaries)
        if b.ndim != 1 or b.size != len(self.masks) + 1 or np.any(np.diff(b) <= 0):
            raise ConfigurationError("period boundaries must be increasing with one more entry than masks")

    @property
    def n_periods(self) -> int:
        return len(self.masks)

    def period_of(self, step: int) -> int:
        b = self.period_boundaries
        if not b[0] <= step < b[-1]:
            raise RangeError(f"time step {step} outside scheduled range [{b[0]}, {b[-1]})")
        return int(np.searchsorted(b, step, side="right") - 1)

    def mask_at(self, step: int) -> np.ndarray:
        return self.masks[self.period_of(step)]

    def period_or_last(self, step: int) -> int:
        """Covering period, or the latest one for steps past the scheduled range."""
        if step >= self.period_boundaries[-1]:
            return self.n_periods - 1
        return self.period_of(step)


def schedule_graphs(
    trend_spectra_by_period: Sequence[Sequence[SparseSpectrum]],
    k: int,
    period_boundaries: np.ndarray | None = None,
) -> DynamicGraphSchedule:
    """One dynamic mask per period from that period's uploaded spectra."""
    if not trend_spectra_by_period:
        raise ConfigurationError("need at least one period")
    masks = []
    for p, spectra in enumerate(trend_spectra_by_period):
        if not spectra:
            raise ConfigurationError(f"period {p} has no spectra")
        masks.append(build_dynamic_mask(distance_matrix(spectra), k))
    if period_boundaries is None:
        period_boundaries = np.arange(len(masks) + 1)
    return DynamicGraphSchedule(np.asarray(period_boundaries, dtype=np.int64), tuple(masks))
