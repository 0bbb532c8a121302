"""Round-synchronous federated simulation.

Clients own their series and parameters; the server owns the attention
encoder, the static mask and the per-period dynamic graph schedule. The two
sides only talk through :class:`fedasta.messages.Channel`.

Stages
------
``J`` (joint split training)
    per batch: feature up, aggregate down, ``d h_agg`` up, ``d h`` down;
    both sides step.
``A`` (local)
    clients train alone with ``h_agg`` fixed at zero; at the end of the round
    every client uploads its weights, the server averages them and broadcasts
    the mean back.
``B`` (server)
    client weights frozen; per batch: feature up, aggregate down,
    ``d h_agg`` up; only the server steps.

Round 0 is the graph phase: each client uploads one filtered trend spectrum
per period and the server builds the dynamic schedule from them.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace

import numpy as np

from .client import (
    ClientSpec,
    Encoding,
    client_encode,
    client_encoder_backward,
    client_loss_and_grads,
    client_predict,
    init_client,
    period_spectrum,
)
from .data import Dataset, Metrics, Normalizer, SampleSet, Splits, metrics, split_and_window
from .errors import ConfigurationError, ProtocolError
from .graphs import (
    DynamicGraphSchedule,
    build_static_mask,
    identity_mask,
    period_bounds,
    schedule_graphs,
)
from .messages import Channel, DownloadMessage, GradMessage, ParamMessage, UploadMessage
from .nn import Params, SGDMomentum
from .privacy import NoisePolicy, noise_hidden, noise_spectrum
from .server import ServerCache, branches_for, init_server, server_backward, server_forward
from .spectral import Threshold

log = logging.getLogger(__name__)

STRATEGIES = ("joint", "two-stage")


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 100
    strategy: str = "joint"
    stage_a_rounds: int | None = None  # two-stage only; default rounds // 2
    batch_size: int = 32
    batches_per_round: int | None = None  # None: one pass over the train windows
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    k: int = 32
    threshold: Threshold = Threshold()
    periods: int = 4
    noise: NoisePolicy = NoisePolicy()
    hidden: int = 100
    layers: int = 2
    server_layers: int = 2
    window: int = 5
    input_len: int = 12
    horizon: int = 12
    kappa: float = 0.1
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    no_decomposition: bool = False
    no_static_graph: bool = False
    no_dynamic_graph: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("rounds", "batch_size", "k", "periods", "hidden", "layers", "server_layers",
                     "window", "input_len", "horizon"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.batches_per_round is not None and self.batches_per_round < 1:
            raise ConfigurationError("batches_per_round must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("lr must be >= 0 and momentum in [0, 1)")

    @property
    def branches(self) -> tuple[str, ...]:
        return branches_for(self.no_static_graph, self.no_dynamic_graph)

    def stage_schedule(self) -> list[str]:
        if self.strategy == "joint":
            return ["J"] * self.rounds
        a = self.rounds // 2 if self.stage_a_rounds is None else self.stage_a_rounds
        if not 0 <= a <= self.rounds:
            raise ConfigurationError("stage_a_rounds must lie in [0, rounds]")
        return ["A"] * a + ["B"] * (self.rounds - a)

    def client_spec(self, input_dim: int = 1) -> ClientSpec:
        return ClientSpec(
            input_len=self.input_len,
            horizon=self.horizon,
            input_dim=input_dim,
            hidden=self.hidden,
            layers=self.layers,
            server_hidden=self.hidden,
            window=self.window,
            decompose=not self.no_decomposition,
        )


@dataclass
class RoundReport:
    round: int
    stage: str
    loss: float
    up_bytes: int
    down_bytes: int
    messages: int = 0


REPORT_COLUMNS = ("round", "stage", "loss", "up_bytes", "down_bytes")


def reports_to_csv(reports: list[RoundReport], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        w.writerow([r.round, r.stage, repr(float(r.loss)), r.up_bytes, r.down_bytes])
    return buf.getvalue()


def fedavg_merge(all_params: list[Params]) -> Params:
    """Unweighted elementwise mean of identically shaped parameter sets."""
    if not all_params:
        raise ConfigurationError("nothing to average")
    names = set(all_params[0])
    for p in all_params[1:]:
        if set(p) != names or any(p[k].shape != all_params[0][k].shape for k in names):
            raise ConfigurationError("client parameter sets differ in names or shapes")
    return {k: np.mean([p[k] for p in all_params], axis=0) for k in sorted(names)}


# ----------------------------------------------------------------------------
# participants


class ClientNode:
    """One edge node. Holds only its own ``(T, D)`` series."""

    def __init__(self, node_id: int, series: np.ndarray, spec: ClientSpec, params: Params,
                 cfg: TrainConfig):
        self.node_id = node_id
        self.series = series
        self.spec = spec
        self.params = params
        self.cfg = cfg
        self.optimizer = SGDMomentum(params, cfg.lr, cfg.momentum)
        self.noise_rng = np.random.default_rng([cfg.seed, 17, node_id])
        self._enc: Encoding | None = None
        self._starts: np.ndarray | None = None
        self._pending: Params | None = None
        self.last_loss = float("nan")

    # data access stays local
    def _windows(self, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        L, Hz = self.spec.input_len, self.spec.horizon
        idx = starts[:, None] + np.arange(L)
        x = self.series[idx]  # (B, L, D)
        y = self.series[starts[:, None] + L + np.arange(Hz), 0]
        return x, y

    def period_upload(self, rnd: int, period: int, lo: int, hi: int) -> UploadMessage:
        spec = period_spectrum(self.series[lo:hi, 0], self.spec, self.cfg.threshold)
        if self.cfg.noise.noises_spectrum:
            spec = noise_spectrum(spec, self.cfg.noise.intensity, self.noise_rng, self.cfg.noise)
        return UploadMessage(self.node_id, rnd, 0, None, spec, period)

    def upload_features(self, rnd: int, batch: int, starts: np.ndarray, rng=None) -> UploadMessage:
        x, _ = self._windows(starts)
        self._enc = client_encode(x, self.params, self.spec)
        self._starts = starts
        h = self._enc.h
        if self.cfg.noise.noises_hidden:
            h = noise_hidden(h, self.cfg.noise, self.noise_rng if rng is None else rng)
        return UploadMessage(self.node_id, rnd, batch, h)

    def receive_aggregate(self, msg: DownloadMessage) -> GradMessage:
        if self._enc is None or msg.node_id != self.node_id:
            raise ProtocolError(f"node {self.node_id}: aggregate without a pending upload")
        _, y = self._windows(self._starts)
        fc, pc = client_predict(self._enc.h, msg.h_agg, self._enc.trend, self.params)
        loss, grads = client_loss_and_grads(fc, y, pc, self.node_id)
        self.last_loss = loss
        self._pending = grads
        return GradMessage(self.node_id, msg.round, msg.batch, grads["d_h_agg"], True)

    def receive_grad(self, msg: GradMessage) -> None:
        if self._pending is None or self._enc is None:
            raise ProtocolError(f"node {self.node_id}: gradient without a pending forward")
        pending = self._pending
        d_h = pending["d_h"] + msg.payload
        grads = {k: v for k, v in pending.items() if not k.startswith("d_")}
        grads.update(client_encoder_backward(self._enc, d_h))
        self.optimizer.step(grads)
        self._enc = self._pending = None

    def drop_pending(self) -> None:
        self._enc = self._pending = None

    def local_step(self, starts: np.ndarray) -> float:
        """Train on one batch with the aggregate input fixed at zero."""
        x, y = self._windows(starts)
        enc = client_encode(x, self.params, self.spec)
        zeros = np.zeros((len(starts), self.spec.server_hidden))
        fc, pc = client_predict(enc.h, zeros, enc.trend, self.params)
        loss, grads = client_loss_and_grads(fc, y, pc, self.node_id)
        d_h = grads["d_h"]
        grads = {k: v for k, v in grads.items() if not k.startswith("d_")}
        grads.update(client_encoder_backward(enc, d_h))
        self.optimizer.step(grads)
        return loss

    def upload_params(self, rnd: int) -> ParamMessage:
        return ParamMessage(self.node_id, rnd, self.params, True)

    def load_params(self, msg: ParamMessage) -> None:
        for k, v in msg.params.items():
            self.params[k][...] = v

    def predict(self, starts: np.ndarray, h_agg: np.ndarray | None, enc: Encoding) -> np.ndarray:
        if h_agg is None:
            h_agg = np.zeros((len(starts), self.spec.server_hidden))
        fc, _ = client_predict(enc.h, h_agg, enc.trend, self.params)
        return fc.y_hat


class ServerNode:
    def __init__(self, params: Params, n_nodes: int, static_mask: np.ndarray,
                 cfg: TrainConfig, input_len: int):
        self.params = params
        self.n = n_nodes
        self.static_mask = static_mask
        self.cfg = cfg
        self.input_len = input_len
        self.optimizer = SGDMomentum(params, cfg.lr, cfg.momentum)
        self.schedule: DynamicGraphSchedule | None = None
        self._cache: ServerCache | None = None

    def build_schedule(self, uploads: list[UploadMessage], bounds: np.ndarray) -> DynamicGraphSchedule:
        periods = len(bounds) - 1
        by_period: list[list] = [[None] * self.n for _ in range(periods)]
        for m in uploads:
            if m.spectrum is None or not 0 <= m.period < periods:
                raise ProtocolError(f"bad spectrum upload from node {m.node_id}")
            by_period[m.period][m.node_id] = m.spectrum
        for p, row in enumerate(by_period):
            missing = [i for i, s in enumerate(row) if s is None]
            if missing:
                raise ProtocolError(f"period {p}: no spectrum from nodes {missing}")
        self.schedule = schedule_graphs(by_period, self.cfg.k, bounds)
        return self.schedule

    def dynamic_masks(self, starts: np.ndarray) -> np.ndarray | None:
        if self.schedule is None:
            return None
        masks = np.stack(self.schedule.masks)
        periods = [self.schedule.period_or_last(int(s) + self.input_len - 1) for s in starts]
        return masks[periods]

    def aggregate(self, uploads: list[UploadMessage], starts: np.ndarray) -> list[DownloadMessage]:
        if len(uploads) != self.n:
            missing = sorted(set(range(self.n)) - {m.node_id for m in uploads})
            raise ProtocolError(f"round {uploads[0].round if uploads else '?'}: missing uploads from {missing}")
        ordered = sorted(uploads, key=lambda m: m.node_id)
        h = np.stack([m.h for m in ordered], axis=1)  # (B, N, H)
        agg, self._cache = server_forward(h, self.static_mask, self.dynamic_masks(starts), self.params)
        rnd, batch = ordered[0].round, ordered[0].batch
        return [DownloadMessage(i, rnd, batch, agg.h_agg[:, i, :]) for i in range(self.n)]

    def backward(self, grads: list[GradMessage], step: bool = True) -> list[GradMessage]:
        if self._cache is None:
            raise ProtocolError("server backward without a forward pass")
        if len(grads) != self.n:
            raise ProtocolError(f"expected {self.n} gradient uploads, got {len(grads)}")
        ordered = sorted(grads, key=lambda m: m.node_id)
        d_agg = np.stack([m.payload for m in ordered], axis=1)
        g, d_h = server_backward(self._cache, d_agg)
        self._cache = None
        if step:
            self.optimizer.step(g)
        rnd, batch = ordered[0].round, ordered[0].batch
        return [GradMessage(i, rnd, batch, d_h[:, i, :], False) for i in range(self.n)]

    def merge(self, uploads: list[ParamMessage]) -> list[ParamMessage]:
        mean = fedavg_merge([m.params for m in sorted(uploads, key=lambda m: m.node_id)])
        rnd = uploads[0].round
        return [ParamMessage(i, rnd, mean, False) for i in range(self.n)]


# ----------------------------------------------------------------------------
# federation


@dataclass
class EvalResult:
    metrics: Metrics
    predictions: np.ndarray  # (B, N, horizon), original scale
    targets: np.ndarray


class Federation:
    """Builds clients and server from a dataset and drives the rounds."""

    def __init__(self, ds: Dataset, cfg: TrainConfig, schedule: DynamicGraphSchedule | None = None,
                 static_mask: np.ndarray | None = None):
        self.ds = ds
        self.cfg = cfg
        self.splits: Splits = split_and_window(ds, cfg.ratios, cfg.input_len, cfg.horizon)
        self.normalizer = Normalizer.fit(ds.values, self.splits.train.hi)
        values = self.normalizer.forward(ds.values)
        n = ds.n_nodes
        if "dynamic" in cfg.branches and schedule is None and not 1 <= cfg.k < n:
            raise ConfigurationError(f"k={cfg.k} needs at least k+1 nodes, dataset has {n}")
        self.spec = cfg.client_spec(ds.n_features)
        init_rng = np.random.default_rng([cfg.seed, 1])
        template = init_client(self.spec, init_rng)
        self.clients = [
            ClientNode(i, values[i], self.spec, {k: v.copy() for k, v in template.items()}, cfg)
            for i in range(n)
        ]
        if static_mask is None:
            static_mask = build_static_mask(ds.graph, cfg.kappa) if ds.graph is not None else identity_mask(n)
        server_params = init_server(cfg.hidden, cfg.server_layers, np.random.default_rng([cfg.seed, 2]),
                                    cfg.branches)
        self.server = ServerNode(server_params, n, static_mask, cfg, cfg.input_len)
        self.server.schedule = schedule
        self.channel = Channel()
        self.batch_rng = np.random.default_rng([cfg.seed, 3])
        self.reports: list[RoundReport] = []

    # -- graph phase -------------------------------------------------------
    def graph_bounds(self) -> np.ndarray:
        return period_bounds(0, self.splits.train.hi, self.cfg.periods)

    def build_graphs(self) -> RoundReport:
        bounds = self.graph_bounds()
        uploads = []
        for p in range(len(bounds) - 1):
            for c in self.clients:
                uploads.append(self.channel.send(c.period_upload(0, p, int(bounds[p]), int(bounds[p + 1]))))
        self.server.build_schedule(uploads, bounds)
        up, down = self.channel.totals(0)
        rep = RoundReport(0, "graph", 0.0, up, down, len(self.channel.for_round(0)))
        self.reports.append(rep)
        return rep

    # -- batches -----------------------------------------------------------
    def round_batches(self) -> list[np.ndarray]:
        starts = self.splits.train.starts
        bs = self.cfg.batch_size
        want = self.cfg.batches_per_round
        perm = self.batch_rng.permutation(starts)
        batches = [perm[i : i + bs] for i in range(0, len(perm), bs)]
        if want is not None:
            while len(batches) < want:
                perm = self.batch_rng.permutation(starts)
                batches += [perm[i : i + bs] for i in range(0, len(perm), bs)]
            batches = batches[:want]
        return batches

    # -- stages ------------------------------------------------------------
    def run_joint_round(self, rnd: int, batches: list[np.ndarray]) -> RoundReport:
        ch = self.channel
        losses = []
        for b, starts in enumerate(batches):
            ups = [ch.send(c.upload_features(rnd, b, starts)) for c in self.clients]
            downs = self.server.aggregate(ups, starts)
            grads_up = [ch.send(c.receive_aggregate(ch.send(d))) for c, d in zip(self.clients, downs)]
            losses.append(np.mean([c.last_loss for c in self.clients]))
            grads_down = self.server.backward(grads_up, step=True)
            for c, g in zip(self.clients, grads_down):
                c.receive_grad(ch.send(g))
        return self._report(rnd, "J", losses)

    def run_local_round(self, rnd: int, batches: list[np.ndarray]) -> RoundReport:
        ch = self.channel
        losses = [np.mean([c.local_step(starts) for c in self.clients]) for starts in batches]
        ups = [ch.send(c.upload_params(rnd)) for c in self.clients]
        for c, m in zip(self.clients, self.server.merge(ups)):
            c.load_params(ch.send(m))
        return self._report(rnd, "A", losses)

    def run_server_round(self, rnd: int, batches: list[np.ndarray]) -> RoundReport:
        ch = self.channel
        losses = []
        for b, starts in enumerate(batches):
            ups = [ch.send(c.upload_features(rnd, b, starts)) for c in self.clients]
            downs = self.server.aggregate(ups, starts)
            grads_up = [ch.send(c.receive_aggregate(ch.send(d))) for c, d in zip(self.clients, downs)]
            losses.append(np.mean([c.last_loss for c in self.clients]))
            self.server.backward(grads_up, step=True)
            for c in self.clients:
                c.drop_pending()
        return self._report(rnd, "B", losses)

    def _report(self, rnd: int, stage: str, losses: list[float]) -> RoundReport:
        up, down = self.channel.totals(rnd)
        rep = RoundReport(rnd, stage, float(np.mean(losses)) if losses else 0.0, up, down,
                          len(self.channel.for_round(rnd)))
        self.reports.append(rep)
        return rep

    def train(self) -> list[RoundReport]:
        if "dynamic" in self.cfg.branches and self.server.schedule is None:
            self.build_graphs()
        for rnd, stage in enumerate(self.cfg.stage_schedule(), start=1):
            batches = self.round_batches()
            if stage == "J":
                rep = self.run_joint_round(rnd, batches)
            elif stage == "A":
                rep = self.run_local_round(rnd, batches)
            else:
                rep = self.run_server_round(rnd, batches)
            log.debug("round %d stage %s loss %.5f", rnd, stage, rep.loss)
        return self.reports

    # -- evaluation --------------------------------------------------------
    def evaluate(self, split: str = "val", chunk: int = 512) -> EvalResult:
        """Forecast every window of a split; metrics on the original scale."""
        sset: SampleSet = getattr(self.splits, split)
        preds, targets = [], []
        for lo in range(0, len(sset), chunk):
            starts = sset.starts[lo : lo + chunk]
            encs, ups = [], []
            for c in self.clients:
                x, y = c._windows(starts)
                enc = client_encode(x, c.params, c.spec)
                encs.append(enc)
                h = enc.h
                if self.cfg.noise.noises_hidden:
                    h = noise_hidden(h, self.cfg.noise, np.random.default_rng([self.cfg.seed, 99, c.node_id, lo]))
                ups.append(self.channel.send(UploadMessage(c.node_id, -1, lo, h), record=False))
            downs = self.server.aggregate(ups, starts)
            self.server._cache = None
            preds.append(np.stack([c.predict(starts, d.h_agg, e) for c, d, e in zip(self.clients, downs, encs)], 1))
            targets.append(np.stack([c._windows(starts)[1] for c in self.clients], 1))
        p = self.normalizer.inverse_target(np.concatenate(preds))
        t = self.normalizer.inverse_target(np.concatenate(targets))
        return EvalResult(metrics(p, t), p, t)

    # -- checkpoints -------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for c in self.clients:
            for k, v in c.params.items():
                out[f"client{c.node_id}/{k}"] = v
        for k, v in self.server.params.items():
            out[f"server/{k}"] = v
        out["static_mask"] = self.server.static_mask
        if self.server.schedule is not None:
            out["schedule/bounds"] = self.server.schedule.period_boundaries
            for p, m in enumerate(self.server.schedule.masks):
                out[f"schedule/mask{p}"] = m
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for c in self.clients:
            for k in c.params:
                key = f"client{c.node_id}/{k}"
                if key not in arrays or arrays[key].shape != c.params[k].shape:
                    raise ConfigurationError(f"checkpoint entry {key} missing or mis-shaped")
                c.params[k][...] = arrays[key]
        for k in self.server.params:
            key = f"server/{k}"
            if key not in arrays or arrays[key].shape != self.server.params[k].shape:
                raise ConfigurationError(f"checkpoint entry {key} missing or mis-shaped")
            self.server.params[k][...] = arrays[key]
        self.server.static_mask = np.asarray(arrays["static_mask"])
        if "schedule/bounds" in arrays:
            bounds = np.asarray(arrays["schedule/bounds"])
            masks = tuple(np.asarray(arrays[f"schedule/mask{p}"]) for p in range(len(bounds) - 1))
            self.server.schedule = DynamicGraphSchedule(bounds, masks)


def run_two_stage_training(ds: Dataset, cfg: TrainConfig) -> list[RoundReport]:
    """Train with the local/server alternation instead of joint split rounds."""
    fed = Federation(ds, replace(cfg, strategy="two-stage"))
    return fed.train()


# ----------------------------------------------------------------------------
# communication accounting

MB = 2**20

# published one-round totals for the 307-node setting, in MB
REFERENCE_MB = {"merge-parameters": 353.05, "merge-variables": 11250.0, "two-stage": 801.525}


@dataclass(frozen=True)
class CommSetting:
    nodes: int = 307
    weight_mb: float = 1.15
    hidden_mb: float = 0.024
    train_batches: int = 11872
    stage_a_rounds: int = 1
    stage_b_passes: int = 1
    joint_messages_per_batch: int = 4
    stage_b_messages_per_batch: int = 3


@dataclass(frozen=True)
class CommTotal:
    strategy: str
    total_mb: float
    formula: str
    reference_mb: float | None = None


def comm_accounting(strategy: str, s: CommSetting = CommSetting()) -> CommTotal:
    """One-round training traffic under this package's documented formulas.

    merge-parameters: nodes * weight_mb
    merge-variables:  nodes * hidden_mb * joint_messages_per_batch * train_batches
    two-stage:        nodes * weight_mb * stage_a_rounds
                      + nodes * hidden_mb * stage_b_messages_per_batch * train_batches * stage_b_passes
    """
    ref = REFERENCE_MB.get(strategy)
    if strategy == "merge-parameters":
        total = s.nodes * s.weight_mb
        f = f"{s.nodes} x {s.weight_mb} MB"
    elif strategy == "merge-variables":
        total = s.nodes * s.hidden_mb * s.joint_messages_per_batch * s.train_batches
        f = f"{s.nodes} x {s.hidden_mb} MB x {s.joint_messages_per_batch} msgs x {s.train_batches} batches"
    elif strategy == "two-stage":
        total = (s.nodes * s.weight_mb * s.stage_a_rounds
                 + s.nodes * s.hidden_mb * s.stage_b_messages_per_batch * s.train_batches * s.stage_b_passes)
        f = (f"{s.nodes} x {s.weight_mb} MB x {s.stage_a_rounds} rounds + {s.nodes} x {s.hidden_mb} MB"
             f" x {s.stage_b_messages_per_batch} msgs x {s.train_batches} batches x {s.stage_b_passes} passes")
    else:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    return CommTotal(strategy, round(total, 9), f, ref)


def comm_setting_for(fed: Federation) -> CommSetting:
    """Derive a :class:`CommSetting` from a built federation (float64 payloads)."""
    n_params = sum(v.size for v in fed.clients[0].params.values())
    batches = fed.cfg.batches_per_round or -(-len(fed.splits.train) // fed.cfg.batch_size)
    return CommSetting(
        nodes=fed.ds.n_nodes,
        weight_mb=n_params * 8 / MB,
        hidden_mb=fed.cfg.batch_size * fed.cfg.hidden * 8 / MB,
        train_batches=batches,
    )


def comm_table(s: CommSetting) -> str:
    rows = [comm_accounting(k, s) for k in ("merge-parameters", "merge-variables", "two-stage")]
    lines = [f"{'strategy':<18}{'total (MB)':>16}{'reference (MB)':>16}  formula"]
    for r in rows:
        ref = f"{r.reference_mb:.3f}" if r.reference_mb is not None else "-"
        lines.append(f"{r.strategy:<18}{r.total_mb:>16.3f}{ref:>16}  {r.formula}")
    return "\n".join(lines) + "\n"
