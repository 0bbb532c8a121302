"""Wire format for everything that crosses the client/server boundary.

Every message is a fixed little-endian header followed by a payload::

    int64 node_id | int64 round | int64 kind | int64 batch | int64 payload_len

Payload blocks:

* array    -- ``int64 rows, int64 cols`` then ``rows*cols`` float64
* spectrum -- ``int64 source_length, float64 threshold, int64 period,
  int64 count`` then ``count`` records of ``(int64 index, float64 real,
  float64 imag)``
* params   -- ``int64 count`` then per entry ``int64 name_len, name (utf-8),
  int64 ndim, int64 shape[ndim]`` and the float64 data

``byte_size`` of a message is the length of its encoding, so traffic
accounting is exact by construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

import numpy as np

from .errors import ProtocolError
from .nn import Params
from .spectral import SparseSpectrum

HEADER = struct.Struct("<qqqqq")
_I64 = struct.Struct("<q")
_SPEC_HEAD = struct.Struct("<qdqq")
_SPEC_REC = np.dtype([("index", "<i8"), ("real", "<f8"), ("imag", "<f8")])


class Kind(IntEnum):
    UPLOAD_FEATURE = 1
    UPLOAD_SPECTRUM = 2
    DOWNLOAD_AGG = 3
    GRAD_UP = 4  # d loss / d h_agg, client -> server
    GRAD_DOWN = 5  # d loss / d h, server -> client
    PARAMS_UP = 6
    PARAMS_DOWN = 7


UPSTREAM = {Kind.UPLOAD_FEATURE, Kind.UPLOAD_SPECTRUM, Kind.GRAD_UP, Kind.PARAMS_UP}


@dataclass(frozen=True)
class UploadMessage:
    node_id: int
    round: int
    batch: int = 0
    h: np.ndarray | None = None
    spectrum: SparseSpectrum | None = None
    period: int = -1

    @property
    def kind(self) -> Kind:
        return Kind.UPLOAD_SPECTRUM if self.spectrum is not None else Kind.UPLOAD_FEATURE


@dataclass(frozen=True)
class DownloadMessage:
    node_id: int
    round: int
    batch: int
    h_agg: np.ndarray

    kind = Kind.DOWNLOAD_AGG


@dataclass(frozen=True)
class GradMessage:
    node_id: int
    round: int
    batch: int
    payload: np.ndarray
    upstream: bool  # True: d_h_agg to server, False: d_h to client

    @property
    def kind(self) -> Kind:
        return Kind.GRAD_UP if self.upstream else Kind.GRAD_DOWN


@dataclass(frozen=True)
class ParamMessage:
    node_id: int
    round: int
    params: Params
    upstream: bool

    batch = 0

    @property
    def kind(self) -> Kind:
        return Kind.PARAMS_UP if self.upstream else Kind.PARAMS_DOWN


Message = Union[UploadMessage, DownloadMessage, GradMessage, ParamMessage]


def _pack_array(a: np.ndarray) -> bytes:
    a = np.atleast_2d(np.asarray(a, dtype="<f8"))
    if a.ndim != 2:
        raise ProtocolError(f"array payloads must be 2-D, got {a.shape}")
    return struct.pack("<qq", *a.shape) + a.tobytes()


def _unpack_array(buf: memoryview, off: int) -> tuple[np.ndarray, int]:
    rows, cols = struct.unpack_from("<qq", buf, off)
    off += 16
    n = rows * cols * 8
    a = np.frombuffer(buf[off : off + n], dtype="<f8").reshape(rows, cols).astype(np.float64)
    return a, off + n


def _pack_spectrum(s: SparseSpectrum, period: int) -> bytes:
    rec = np.empty(s.indices.size, dtype=_SPEC_REC)
    rec["index"] = s.indices
    rec["real"] = s.values.real
    rec["imag"] = s.values.imag
    return _SPEC_HEAD.pack(s.source_length, s.threshold, period, rec.size) + rec.tobytes()


def _unpack_spectrum(buf: memoryview, off: int) -> tuple[SparseSpectrum, int, int]:
    length, thr, period, count = _SPEC_HEAD.unpack_from(buf, off)
    off += _SPEC_HEAD.size
    n = count * _SPEC_REC.itemsize
    rec = np.frombuffer(buf[off : off + n], dtype=_SPEC_REC)
    s = SparseSpectrum(rec["index"].astype(np.int64), rec["real"] + 1j * rec["imag"], int(length), float(thr))
    return s, int(period), off + n


def _pack_params(params: Params) -> bytes:
    parts = [_I64.pack(len(params))]
    for name in sorted(params):
        a = np.asarray(params[name], dtype="<f8")
        enc = name.encode()
        parts.append(_I64.pack(len(enc)) + enc + _I64.pack(a.ndim) + struct.pack(f"<{a.ndim}q", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def _unpack_params(buf: memoryview, off: int) -> tuple[Params, int]:
    (count,) = _I64.unpack_from(buf, off)
    off += 8
    out: Params = {}
    for _ in range(count):
        (nlen,) = _I64.unpack_from(buf, off)
        off += 8
        name = bytes(buf[off : off + nlen]).decode()
        off += nlen
        (ndim,) = _I64.unpack_from(buf, off)
        off += 8
        shape = struct.unpack_from(f"<{ndim}q", buf, off)
        off += 8 * ndim
        n = int(np.prod(shape, dtype=np.int64)) * 8
        out[name] = np.frombuffer(buf[off : off + n], dtype="<f8").reshape(shape).astype(np.float64)
        off += n
    return out, off


def encode(msg: Message) -> bytes:
    kind = msg.kind
    if isinstance(msg, UploadMessage):
        payload = b""
        flags = (msg.h is not None) | ((msg.spectrum is not None) << 1)
        payload += _I64.pack(flags)
        if msg.h is not None:
            payload += _pack_array(msg.h)
        if msg.spectrum is not None:
            payload += _pack_spectrum(msg.spectrum, msg.period)
    elif isinstance(msg, DownloadMessage):
        payload = _pack_array(msg.h_agg)
    elif isinstance(msg, GradMessage):
        payload = _pack_array(msg.payload)
    elif isinstance(msg, ParamMessage):
        payload = _pack_params(msg.params)
    else:
        raise ProtocolError(f"cannot encode {type(msg).__name__}")
    return HEADER.pack(msg.node_id, msg.round, int(kind), msg.batch, len(payload)) + payload


def decode(data: bytes) -> Message:
    buf = memoryview(data)
    if len(buf) < HEADER.size:
        raise ProtocolError("truncated message header")
    node_id, rnd, kind, batch, plen = HEADER.unpack_from(buf, 0)
    if HEADER.size + plen != len(buf):
        raise ProtocolError(f"payload length {plen} disagrees with message size {len(buf)}")
    off = HEADER.size
    kind = Kind(kind)
    if kind in (Kind.UPLOAD_FEATURE, Kind.UPLOAD_SPECTRUM):
        (flags,) = _I64.unpack_from(buf, off)
        off += 8
        h = spectrum = None
        period = -1
        if flags & 1:
            h, off = _unpack_array(buf, off)
        if flags & 2:
            spectrum, period, off = _unpack_spectrum(buf, off)
        return UploadMessage(node_id, rnd, batch, h, spectrum, period)
    if kind == Kind.DOWNLOAD_AGG:
        a, _ = _unpack_array(buf, off)
        return DownloadMessage(node_id, rnd, batch, a)
    if kind in (Kind.GRAD_UP, Kind.GRAD_DOWN):
        a, _ = _unpack_array(buf, off)
        return GradMessage(node_id, rnd, batch, a, kind == Kind.GRAD_UP)
    params, _ = _unpack_params(buf, off)
    return ParamMessage(node_id, rnd, params, kind == Kind.PARAMS_UP)


def byte_size(msg: Message) -> int:
    return len(encode(msg))


@dataclass(frozen=True)
class MeterRecord:
    round: int
    node_id: int
    kind: Kind
    batch: int
    size: int

    @property
    def upstream(self) -> bool:
        return self.kind in UPSTREAM


class Channel:
    """Serialises every message, records its size, and hands the receiver a
    decoded copy, so nothing but the wire format crosses the boundary."""

    def __init__(self):
        self.records: list[MeterRecord] = []

    def send(self, msg: Message, record: bool = True) -> Message:
        data = encode(msg)
        if record:
            self.records.append(MeterRecord(msg.round, msg.node_id, msg.kind, msg.batch, len(data)))
        return decode(data)

    def totals(self, round: int) -> tuple[int, int]:
        up = sum(r.size for r in self.records if r.round == round and r.upstream)
        down = sum(r.size for r in self.records if r.round == round and not r.upstream)
        return up, down

    def for_round(self, round: int) -> list[MeterRecord]:
        return [r for r in self.records if r.round == round]
