"""Plain-text experiment configuration.

Grammar (one setting per line)::

    # comment
    section.key = value
    section.sub.key = value

Values are parsed by the type of the field they land in: ints, floats,
booleans (``true/false/yes/no/1/0``), strings, and comma-separated lists for
sweep fields. Unknown keys are errors. Sections:

``data``
    ``source`` (``synthetic`` or ``csv``), ``path``, ``graph_path``, ``name``,
    and ``synthetic.*`` recipe fields (``n_per_cluster``, ``T``, ``periods``,
    ``noise_sd``, ``seed``, ``swap``, ``shared_sd``, ``lag``).
``train``
    any :class:`fedasta.protocol.TrainConfig` field, plus
    ``threshold_mode`` / ``threshold_value``. Unset fields take the
    desk-scale values in ``DESK_TRAIN``.
``ablation``
    ``no_decomposition``, ``no_static_graph``, ``no_dynamic_graph``,
    ``no_all_graph``.
``noise``
    :class:`fedasta.privacy.NoisePolicy` fields.
``privacy``
    ``intensities``, ``thresholds``, ``attack_steps``, ``attack_lr``, ``seed``.
``sweep``
    ``k`` (list of edge counts).
``output``
    ``dir`` (overridden by the ``FEDASTA_OUTPUT_DIR`` environment variable).
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .data import Dataset, load_csv, synth_two_cluster
from .errors import ConfigurationError, FedastaError
from .privacy import NoisePolicy
from .protocol import TrainConfig
from .spectral import Threshold

OUTPUT_ENV = "FEDASTA_OUTPUT_DIR"

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass(frozen=True)
class SyntheticRecipe:
    n_per_cluster: int = 8
    T: int = 2016
    periods: int = 4
    noise_sd: float = 0.3
    seed: int = 0
    swap: bool = False
    shared_sd: float = 0.6
    lag: int = 2


@dataclass(frozen=True)
class DataSource:
    source: str = "synthetic"
    path: str = ""
    graph_path: str = ""
    name: str = ""
    synthetic: SyntheticRecipe = SyntheticRecipe()

    def load(self) -> Dataset:
        if self.source == "synthetic":
            r = self.synthetic
            return synth_two_cluster(r.n_per_cluster, r.T, r.periods, r.noise_sd, r.seed, r.swap, r.shared_sd, r.lag)
        return load_csv(self.path, self.graph_path or None, self.name or None)


@dataclass(frozen=True)
class Ablation:
    no_decomposition: bool = False
    no_static_graph: bool = False
    no_dynamic_graph: bool = False
    no_all_graph: bool = False

    @property
    def drops_static(self) -> bool:
        return self.no_static_graph or self.no_all_graph

    @property
    def drops_dynamic(self) -> bool:
        return self.no_dynamic_graph or self.no_all_graph


@dataclass(frozen=True)
class PrivacySweep:
    intensities: tuple[float, ...] = (0.0, 0.1, 0.5, 1.0)
    thresholds: tuple[float, ...] = (0.1, 0.25, 0.5)
    attack_steps: int = 1000
    attack_lr: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class Sweep:
    k: tuple[int, ...] = (1, 4, 8, 12)


# desk-scale training defaults for the 16-node synthetic set
DESK_TRAIN = TrainConfig(rounds=50, batch_size=32, batches_per_round=16, lr=0.05, k=4, hidden=32)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSource = DataSource()
    train: TrainConfig = DESK_TRAIN
    ablation: Ablation = Ablation()
    noise: NoisePolicy = NoisePolicy()
    privacy: PrivacySweep = PrivacySweep()
    sweep: Sweep = Sweep()
    output_dir: str = "runs"
    raw: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def train_config(self) -> TrainConfig:
        """TrainConfig with ablation flags and noise policy folded in."""
        a = self.ablation
        return replace(
            self.train,
            no_decomposition=a.no_decomposition or self.train.no_decomposition,
            no_static_graph=a.drops_static or self.train.no_static_graph,
            no_dynamic_graph=a.drops_dynamic or self.train.no_dynamic_graph,
            noise=self.noise,
        )

    def output_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def config_hash(self) -> str:
        return hashlib.sha256(render(self).encode()).hexdigest()[:16]


# ----------------------------------------------------------------------------
# parsing


def _coerce(path: str, text: str, default: Any, ftype: Any) -> Any:
    t = text.strip()
    ftype = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    try:
        if ftype == "bool":
            low = t.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(t)
        if ftype.startswith("tuple"):
            inner = int if "int" in ftype else float
            return tuple(inner(p) for p in t.split(",") if p.strip())
        if "None" in ftype and t.lower() in ("", "none"):
            return None
        if ftype.startswith("int"):
            return int(t)
        if ftype.startswith("float"):
            return float(t)
        return t
    except ValueError:
        raise ConfigurationError(f"{path}: cannot parse {text.strip()!r}") from None


def _set(obj: Any, parts: list[str], text: str, path: str) -> Any:
    names = {f.name: f for f in fields(obj)}
    head = parts[0]
    if head not in names or head == "raw":
        raise ConfigurationError(f"{path}: unknown key")
    current = getattr(obj, head)
    if len(parts) > 1:
        if not dataclasses.is_dataclass(current):
            raise ConfigurationError(f"{path}: unknown key")
        return replace(obj, **{head: _set(current, parts[1:], text, path)})
    if dataclasses.is_dataclass(current):
        raise ConfigurationError(f"{path}: is a section, not a value")
    return replace(obj, **{head: _coerce(path, text, current, names[head].type)})


def parse_config(text: str) -> ExperimentConfig:
    """Parse the key=value grammar into an :class:`ExperimentConfig`.

    Errors are :class:`ConfigurationError` naming the dotted field path.
    """
    cfg_parts: dict[str, Any] = {}
    sections = {
        "data": DataSource(),
        "ablation": Ablation(),
        "noise": NoisePolicy(),
        "privacy": PrivacySweep(),
        "sweep": Sweep(),
    }
    train_items: list[tuple[str, str, str]] = []
    output_dir = "runs"
    raw = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in s.split("=", 1))
        raw.append((key, value))
        parts = key.split(".")
        if len(parts) < 2:
            raise ConfigurationError(f"{key}: keys need a section prefix")
        sec = parts[0]
        if sec == "output":
            if parts[1:] != ["dir"]:
                raise ConfigurationError(f"{key}: unknown key")
            output_dir = value
        elif sec == "train":
            train_items.append((key, parts[1], value))
        elif sec in sections:
            try:
                sections[sec] = _set(sections[sec], parts[1:], value, key)
            except FedastaError as e:
                raise ConfigurationError(f"{key}: {e}") if not str(e).startswith(key) else e
        else:
            raise ConfigurationError(f"{key}: unknown section {sec!r}")

    train_kwargs: dict[str, Any] = {}
    defaults = DESK_TRAIN
    thr_mode, thr_value = defaults.threshold.mode, defaults.threshold.value
    tfields = {f.name: f for f in fields(TrainConfig)}
    for key, name, value in train_items:
        if name == "threshold_mode":
            thr_mode = value
        elif name == "threshold_value":
            thr_value = _coerce(key, value, 0.1, "float")
        elif name in tfields and name not in ("threshold", "noise"):
            train_kwargs[name] = _coerce(key, value, getattr(defaults, name), tfields[name].type)
        else:
            raise ConfigurationError(f"{key}: unknown key")
    try:
        train_kwargs["threshold"] = Threshold(thr_mode, thr_value)
    except FedastaError as e:
        raise ConfigurationError(f"train.threshold_mode: {e}") from None
    try:
        train = replace(defaults, **train_kwargs)
    except ConfigurationError as e:
        raise ConfigurationError(f"train: {e}") from None
    data = sections["data"]
    if data.source not in ("synthetic", "csv"):
        raise ConfigurationError(f"data.source: must be 'synthetic' or 'csv', got {data.source!r}")
    if data.source == "csv" and not data.path:
        raise ConfigurationError("data.path: required when data.source = csv")
    cfg_parts.update(sections)
    return ExperimentConfig(train=train, output_dir=output_dir, raw=tuple(raw), **cfg_parts)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text)


def _flatten(prefix: str, obj: Any) -> list[tuple[str, str]]:
    out = []
    for f in fields(obj):
        if f.name == "raw":
            continue
        v = getattr(obj, f.name)
        key = f"{prefix}.{f.name}" if prefix else f.name
        if isinstance(v, Threshold):
            out += [(f"{prefix}.threshold_mode", v.mode), (f"{prefix}.threshold_value", repr(v.value))]
        elif dataclasses.is_dataclass(v):
            if not (prefix == "train" and f.name == "noise"):
                out += _flatten(key, v)
        elif isinstance(v, tuple):
            out.append((key, ", ".join(repr(x) for x in v)))
        elif isinstance(v, bool):
            out.append((key, "true" if v else "false"))
        elif isinstance(v, float):
            out.append((key, repr(v)))
        else:
            out.append((key, "none" if v is None else str(v)))
    return out


def render(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(render(c)) == c``."""
    items = []
    for sec in ("data", "train", "ablation", "noise", "privacy", "sweep"):
        items += _flatten(sec, getattr(cfg, sec))
    items.append(("output.dir", cfg.output_dir))
    return "".join(f"{k} = {v}\n" for k, v in items)
