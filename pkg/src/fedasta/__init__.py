"""Federated spatio-temporal forecasting with adaptive per-period graphs,
built on numpy."""

from .client import ClientSpec, client_encode, client_predict
from .data import Dataset, Metrics, load_csv, metrics, split_and_window, synth_two_cluster
from .decomposition import decompose, moving_average
from .errors import ConfigurationError, FedastaError
from .graphs import StaticGraph, build_dynamic_mask, build_static_mask, schedule_graphs
from .privacy import DpBudget, NoisePolicy, cauchy_min_scale, noise_hidden, noise_spectrum, sample_stable
from .protocol import Federation, TrainConfig, comm_accounting
from .spectral import SparseSpectrum, Threshold, dft, filtered_ft, fsd, inverse_dft, union_basis

__all__ = [
    "ClientSpec", "client_encode", "client_predict",
    "Dataset", "Metrics", "load_csv", "metrics", "split_and_window", "synth_two_cluster",
    "decompose", "moving_average",
    "ConfigurationError", "FedastaError",
    "StaticGraph", "build_dynamic_mask", "build_static_mask", "schedule_graphs",
    "DpBudget", "NoisePolicy", "cauchy_min_scale", "noise_hidden", "noise_spectrum", "sample_stable",
    "Federation", "TrainConfig", "comm_accounting",
    "SparseSpectrum", "Threshold", "dft", "filtered_ft", "fsd", "inverse_dft", "union_basis",
]

__version__ = "0.1.0"
