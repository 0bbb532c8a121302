"""
Trend spectra and per-period neighbour graphs
=============================================

Two groups of sensors follow different daily shapes. Halfway through the
record some sensors change group. Each sensor summarises the trend of a
period by a handful of Fourier coefficients, and the server links sensors
whose summaries are close.
"""

import numpy as np

from fedasta.data import synth_two_cluster
from fedasta.decomposition import moving_average
from fedasta.graphs import intra_cluster_fraction, neighbor_sets, period_bounds, schedule_graphs
from fedasta.spectral import Threshold, distance_matrix, filtered_ft

# 8 + 8 sensors, one week of 5-minute steps, four periods; in odd periods
# the first half of each group swaps sides
ds = synth_two_cluster(n_per_cluster=8, T=2016, periods=4, noise_sd=0.05, seed=0, swap=True)
print("values:", ds.values.shape, "labels per period:\n", ds.labels)

# one sensor, first period: how many coefficients survive the 10% cut?
bounds = period_bounds(0, ds.n_steps, 4)
seg = ds.values[0, bounds[0]:bounds[1], 0]
spec = filtered_ft(moving_average(seg, 5), Threshold("relative", 0.1))
print(f"\nsensor 0 keeps {spec.indices.size} of {seg.size} coefficients:", spec.indices.tolist())

# every sensor, every period
per_period = [
    [filtered_ft(moving_average(ds.values[i, bounds[p]:bounds[p + 1], 0], 5)) for i in range(ds.n_nodes)]
    for p in range(4)
]

# distances inside a group are small, across groups large
d = distance_matrix(per_period[0])
same = ds.labels[0][:, None] == ds.labels[0][None, :]
off = ~np.eye(ds.n_nodes, dtype=bool)
print(f"\nperiod 0 mean distance within groups {d[same & off].mean():.2f}, across {d[~same].mean():.2f}")

# keep the 4 closest sensors per row, separately in every period
sched = schedule_graphs(per_period, k=4, period_boundaries=bounds)
for p, mask in enumerate(sched.masks):
    frac = intra_cluster_fraction(mask, ds.labels[p])
    print(f"period {p}: sensor 0 links to {neighbor_sets(mask)[0].tolist()}, same-group share {frac:.2f}")
