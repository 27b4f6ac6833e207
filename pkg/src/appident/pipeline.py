"""End-to-end plumbing: capture file -> labeled flows -> encoded dataset."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import EncodeConfig, EncodeStats, FlowDataset, StripMode, encode_flow
from .flows import BiFlow, IngestConfig, IngestStats, apply_labels, assemble_flows
from .pcap import IPPROTO_TCP, PcapReader
from .tls import TlsFieldMap, parse_flow_tls


@dataclass
class ExtractResult:
    flows: list[BiFlow]
    dataset: FlowDataset
    ingest_stats: IngestStats
    encode_stats: EncodeStats
    truncated_tail: int = 0


def flows_to_dataset(
    flows: list[BiFlow],
    mode: StripMode = StripMode.L234_REMOVED,
    source_id: str = "",
    encode_cfg: EncodeConfig | None = None,
    use_true_labels_as_y: bool = False,
) -> tuple[FlowDataset, EncodeStats]:
    """Encode flows and collect per-row metadata; unlabeled rows get y = -1."""
    encode_cfg = encode_cfg or EncodeConfig()
    stats = EncodeStats()
    n = len(flows)

    class_names = sorted({f.label for f in flows if f.label is not None})
    true_class_names = sorted({f.true_label for f in flows if f.true_label is not None})
    class_idx = {name: i for i, name in enumerate(class_names)}
    true_idx = {name: i for i, name in enumerate(true_class_names)}

    X = np.empty((n, encode_cfg.feature_length), dtype=np.float32)
    y = np.full(n, -1, dtype=np.int32)
    true_y = np.full(n, -1, dtype=np.int32)
    start_times = np.empty(n, dtype=np.float64)
    flow_index = np.arange(n, dtype=np.int32)
    protocol = np.empty(n, dtype=np.uint8)
    service_port = np.empty(n, dtype=np.uint16)
    tls_seen = np.zeros(n, dtype=np.uint8)

    for i, flow in enumerate(flows):
        X[i] = encode_flow(flow, encode_cfg, mode, stats).values
        if flow.label is not None:
            y[i] = class_idx[flow.label]
        if flow.true_label is not None:
            true_y[i] = true_idx[flow.true_label]
        start_times[i] = flow.start_time
        protocol[i] = flow.key.protocol
        service_port[i] = min(flow.key.port_lo, flow.key.port_hi)
        if flow.key.protocol == IPPROTO_TCP:
            fmap = parse_flow_tls(flow, mode, encode_cfg)
            tls_seen[i] = 1 if fmap.saw_client_hello else 0

    ds = FlowDataset(
        X=X,
        y=y,
        class_names=class_names,
        mode=mode,
        true_y=true_y,
        true_class_names=true_class_names,
        start_times=start_times,
        flow_index=flow_index,
        protocol=protocol,
        service_port=service_port,
        tls_seen=tls_seen,
        source_id=source_id,
    )
    if use_true_labels_as_y:
        ds = dataset_with_true_labels(ds)
    return ds, stats


def dataset_with_true_labels(ds: FlowDataset) -> FlowDataset:
    """Same rows, but y carries the fine true label (app or ambiguous class)."""
    out = ds.subset(np.arange(len(ds)))
    out.y = ds.true_y.copy()
    out.class_names = list(ds.true_class_names)
    return out


def extract(
    pcap_path: str | Path,
    labels_path: str | Path | None = None,
    mode: StripMode = StripMode.L234_REMOVED,
    ingest_cfg: IngestConfig | None = None,
    encode_cfg: EncodeConfig | None = None,
) -> ExtractResult:
    reader = PcapReader(pcap_path)
    ingest_stats = IngestStats()
    flows = assemble_flows(iter(reader), ingest_cfg, ingest_stats)
    if labels_path is not None:
        apply_labels(flows, labels_path)
    ds, encode_stats = flows_to_dataset(flows, mode, source_id=str(pcap_path), encode_cfg=encode_cfg)
    return ExtractResult(
        flows=flows,
        dataset=ds,
        ingest_stats=ingest_stats,
        encode_stats=encode_stats,
        truncated_tail=reader.truncated_tail,
    )


def field_maps(flows: list[BiFlow], mode: StripMode, encode_cfg: EncodeConfig | None = None) -> list[TlsFieldMap | None]:
    """Per-flow TLS maps in dataset row order; None for non-TCP flows."""
    out: list[TlsFieldMap | None] = []
    for flow in flows:
        if flow.key.protocol == IPPROTO_TCP:
            out.append(parse_flow_tls(flow, mode, encode_cfg))
        else:
            out.append(None)
    return out
