"""Fixed-length byte-vector encoding of biflows.

Each flow becomes one vector of ``packets_per_flow * bytes_per_packet``
values (default 6 x 256 = 1536): the first 256 bytes of each of the first
six packets, in capture order across both directions, each byte scaled to
[0, 1] by /255 and each packet slot zero-padded to keep byte positions on a
fixed 256-wide grid. Three strip modes control where a packet's bytes start:
the raw frame, the transport header, or the transport payload.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import FormatError
from .flows import BiFlow
from .pcap import IPPROTO_TCP, IPPROTO_UDP, PacketRecord

DATASET_MAGIC = b"APDS0001"


class StripMode(enum.Enum):
    ALL_LAYERS = "all"
    L23_REMOVED = "l23"
    L234_REMOVED = "l234"

    @classmethod
    def parse(cls, name: str) -> "StripMode":
        for mode in cls:
            if name in (mode.value, mode.name, mode.name.lower()):
                return mode
        raise ValueError(f"unknown strip mode {name!r} (expected all|l23|l234)")


@dataclass
class EncodeConfig:
    bytes_per_packet: int = 256
    packets_per_flow: int = 6

    @property
    def feature_length(self) -> int:
        return self.bytes_per_packet * self.packets_per_flow


@dataclass
class EncodeStats:
    missing_offset_packets: int = 0
    degenerate_flows: int = 0


@dataclass
class FeatureVector:
    values: np.ndarray
    mode: StripMode
    n_packets_used: int
    n_parseable: int = 0
    source_flow: BiFlow | None = None

    @property
    def degenerate(self) -> bool:
        """No packet had the layers this mode strips to."""
        return self.n_parseable == 0


def strip_origin(pkt: PacketRecord, mode: StripMode) -> int | None:
    """Byte index in the raw frame where this mode's view starts."""
    if mode is StripMode.ALL_LAYERS:
        return 0
    if mode is StripMode.L23_REMOVED:
        return pkt.l4_offset
    return pkt.payload_offset


def strip_bytes(pkt: PacketRecord, mode: StripMode, stats: EncodeStats | None = None) -> bytes:
    """Packet bytes under a strip mode; empty when the needed layer is absent."""
    origin = strip_origin(pkt, mode)
    if origin is None:
        if stats is not None:
            stats.missing_offset_packets += 1
        return b""
    return pkt.link_bytes[origin:]


def encode_flow(
    flow: BiFlow,
    cfg: EncodeConfig | None = None,
    mode: StripMode = StripMode.L234_REMOVED,
    stats: EncodeStats | None = None,
) -> FeatureVector:
    cfg = cfg or EncodeConfig()
    values = np.zeros(cfg.feature_length, dtype=np.float32)
    used = 0
    parseable = 0
    for slot, pkt in enumerate(flow.packets[: cfg.packets_per_flow]):
        if strip_origin(pkt, mode) is not None:
            parseable += 1
        raw = strip_bytes(pkt, mode, stats)[: cfg.bytes_per_packet]
        if raw:
            base = slot * cfg.bytes_per_packet
            values[base : base + len(raw)] = np.frombuffer(raw, dtype=np.uint8)
        used += 1
    values /= np.float32(255.0)
    if parseable == 0 and stats is not None:
        stats.degenerate_flows += 1
    return FeatureVector(
        values=values, mode=mode, n_packets_used=used, n_parseable=parseable, source_flow=flow
    )


class FlowByteEncoder(BaseEstimator, TransformerMixin):
    """Stateless transformer: list of biflows -> (n_flows, 1536) float32 matrix."""

    def __init__(self, mode="l234", bytes_per_packet=256, packets_per_flow=6):
        self.mode = mode
        self.bytes_per_packet = bytes_per_packet
        self.packets_per_flow = packets_per_flow

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        mode = self.mode if isinstance(self.mode, StripMode) else StripMode.parse(self.mode)
        cfg = EncodeConfig(self.bytes_per_packet, self.packets_per_flow)
        out = np.empty((len(X), cfg.feature_length), dtype=np.float32)
        for i, flow in enumerate(X):
            out[i] = encode_flow(flow, cfg, mode).values
        return out


def row_hexdump(row: np.ndarray, bytes_per_packet: int = 256) -> str:
    """Render one encoded row as one hex line per packet slot."""
    raw = np.rint(np.asarray(row, dtype=np.float64) * 255.0).astype(np.uint8)
    lines = []
    for base in range(0, raw.size, bytes_per_packet):
        lines.append(raw[base : base + bytes_per_packet].tobytes().hex())
    return "\n".join(lines)


@dataclass
class FlowDataset:
    """Encoded rows plus the per-flow metadata the pipeline needs downstream."""

    X: np.ndarray
    y: np.ndarray
    class_names: list[str]
    mode: StripMode
    true_y: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    true_class_names: list[str] = field(default_factory=list)
    start_times: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    flow_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int32))
    protocol: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    service_port: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint16))
    tls_seen: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    source_id: str = ""

    def __post_init__(self) -> None:
        n = len(self.X)
        if len(self.y) != n:
            raise ValueError("rows and labels length mismatch")
        for name in ("true_y", "start_times", "flow_index", "protocol", "service_port", "tls_seen"):
            arr = getattr(self, name)
            if arr.size == 0:
                fill = -1 if name == "true_y" else 0
                dtype = {
                    "true_y": np.int32,
                    "start_times": np.float64,
                    "flow_index": np.int32,
                    "protocol": np.uint8,
                    "service_port": np.uint16,
                    "tls_seen": np.uint8,
                }[name]
                setattr(self, name, np.full(n, fill, dtype=dtype))

    def __len__(self) -> int:
        return len(self.X)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: np.ndarray) -> "FlowDataset":
        return FlowDataset(
            X=self.X[idx],
            y=self.y[idx],
            class_names=self.class_names,
            mode=self.mode,
            true_y=self.true_y[idx],
            true_class_names=self.true_class_names,
            start_times=self.start_times[idx],
            flow_index=self.flow_index[idx],
            protocol=self.protocol[idx],
            service_port=self.service_port[idx],
            tls_seen=self.tls_seen[idx],
            source_id=self.source_id,
        )

    # traffic-type slices used for per-type reporting and occlusion
    def slice_udp(self) -> np.ndarray:
        return np.flatnonzero(self.protocol == IPPROTO_UDP)

    def slice_https(self) -> np.ndarray:
        return np.flatnonzero(self.tls_seen == 1)

    def slice_http(self) -> np.ndarray:
        return np.flatnonzero(
            (self.protocol == IPPROTO_TCP) & (self.tls_seen == 0) & (self.service_port == 80)
        )


def _write_strings(fh, names: list[str]) -> None:
    fh.write(struct.pack("<H", len(names)))
    for name in names:
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)


def _read_strings(fh) -> list[str]:
    (count,) = struct.unpack("<H", fh.read(2))
    out = []
    for _ in range(count):
        (n,) = struct.unpack("<H", fh.read(2))
        out.append(fh.read(n).decode("utf-8"))
    return out


def save_dataset(ds: FlowDataset, path: str | Path) -> None:
    mode_tag = list(StripMode).index(ds.mode)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIB", len(ds.X), ds.X.shape[1], mode_tag))
        _write_strings(fh, ds.class_names)
        _write_strings(fh, ds.true_class_names)
        _write_strings(fh, [ds.source_id])
        fh.write(np.ascontiguousarray(ds.X, dtype=np.float32).tobytes())
        fh.write(np.ascontiguousarray(ds.y, dtype=np.int32).tobytes())
        fh.write(np.ascontiguousarray(ds.true_y, dtype=np.int32).tobytes())
        fh.write(np.ascontiguousarray(ds.start_times, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(ds.flow_index, dtype=np.int32).tobytes())
        fh.write(np.ascontiguousarray(ds.protocol, dtype=np.uint8).tobytes())
        fh.write(np.ascontiguousarray(ds.service_port, dtype=np.uint16).tobytes())
        fh.write(np.ascontiguousarray(ds.tls_seen, dtype=np.uint8).tobytes())


def load_dataset(path: str | Path) -> FlowDataset:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: not a dataset file (magic {magic!r})")
        n, feat, mode_tag = struct.unpack("<IIB", fh.read(9))
        class_names = _read_strings(fh)
        true_class_names = _read_strings(fh)
        source_id = _read_strings(fh)[0]

        def arr(dtype, count, shape=None):
            data = np.frombuffer(fh.read(np.dtype(dtype).itemsize * count), dtype=dtype)
            return data.reshape(shape) if shape else data.copy()

        X = arr(np.float32, n * feat, (n, feat)).copy()
        return FlowDataset(
            X=X,
            y=arr(np.int32, n),
            class_names=class_names,
            mode=list(StripMode)[mode_tag],
            true_y=arr(np.int32, n),
            true_class_names=true_class_names,
            start_times=arr(np.float64, n),
            flow_index=arr(np.int32, n),
            protocol=arr(np.uint8, n),
            service_port=arr(np.uint16, n),
            tls_seen=arr(np.uint8, n),
            source_id=source_id,
        )
