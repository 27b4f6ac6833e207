"""Bidirectional flow assembly from parsed packet streams.

A biflow groups every packet of one 5-tuple conversation episode, both
directions interleaved in capture order. TCP episodes end on a completed
FIN exchange or a RST; UDP episodes end after a configurable inactivity
gap, after which the next packet on the same key starts a fresh biflow.
Duplicate ACKs and retransmissions are kept as-is.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import FormatError
from .pcap import IPPROTO_TCP, IPPROTO_UDP, PacketRecord

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_ACK = 0x10

FLOW_STORE_MAGIC = b"AIFS0001"


class FlowKey(NamedTuple):
    """Canonical 5-tuple: endpoints sorted so both directions collide."""

    ip_lo: bytes
    ip_hi: bytes
    port_lo: int
    port_hi: int
    protocol: int


@dataclass
class IngestConfig:
    udp_inactivity_timeout: float = 30.0
    max_packets_per_flow: int = 6
    honor_tcp_fin_rst: bool = True

    def __post_init__(self) -> None:
        if not 15.0 <= self.udp_inactivity_timeout <= 60.0:
            raise ValueError(
                f"udp_inactivity_timeout {self.udp_inactivity_timeout} outside [15, 60]"
            )


@dataclass
class BiFlow:
    key: FlowKey
    packets: list[PacketRecord]
    start_time: float
    end_time: float
    label: str | None = None
    true_label: str | None = None
    saw_syn: bool = False
    n_packets_total: int = 0

    @property
    def opened_midstream(self) -> bool:
        return self.key.protocol == IPPROTO_TCP and not self.saw_syn


def packet_endpoints(pkt: PacketRecord) -> tuple[bytes, bytes, int, int, int] | None:
    """(src_ip, dst_ip, src_port, dst_port, protocol) or None if not TCP/UDP."""
    if pkt.l3_offset is None or pkt.l4_offset is None:
        return None
    frame = pkt.link_bytes
    l3, l4 = pkt.l3_offset, pkt.l4_offset
    version = frame[l3] >> 4
    if version == 4:
        src = frame[l3 + 12 : l3 + 16]
        dst = frame[l3 + 16 : l3 + 20]
        proto = frame[l3 + 9]
    elif version == 6:
        src = frame[l3 + 8 : l3 + 24]
        dst = frame[l3 + 24 : l3 + 40]
        proto = frame[l3 + 6]
    else:
        return None
    if proto not in (IPPROTO_TCP, IPPROTO_UDP) or len(frame) < l4 + 4:
        return None
    sport, dport = struct.unpack_from("!HH", frame, l4)
    return src, dst, sport, dport, proto


def flow_key(pkt: PacketRecord) -> FlowKey | None:
    ep = packet_endpoints(pkt)
    if ep is None:
        return None
    src, dst, sport, dport, proto = ep
    if (src, sport) <= (dst, dport):
        return FlowKey(src, dst, sport, dport, proto)
    return FlowKey(dst, src, dport, sport, proto)


def tcp_flags(pkt: PacketRecord) -> int:
    if pkt.l4_offset is None or len(pkt.link_bytes) < pkt.l4_offset + 14:
        return 0
    return pkt.link_bytes[pkt.l4_offset + 13]


class _OpenFlow:
    __slots__ = ("flow", "fin_dirs", "fin_complete", "closed")

    def __init__(self, flow: BiFlow):
        self.flow = flow
        self.fin_dirs: set[bytes] = set()
        self.fin_complete = False
        self.closed = False


@dataclass
class IngestStats:
    parsed_packets: int = 0
    dropped_packets: int = 0
    flows: int = 0


def assemble_flows(
    packets: Iterable[PacketRecord],
    cfg: IngestConfig | None = None,
    stats: IngestStats | None = None,
) -> list[BiFlow]:
    """Partition TCP/UDP packets into biflows, emitted in start-time order."""
    cfg = cfg or IngestConfig()
    stats = stats if stats is not None else IngestStats()

    ordered = sorted(packets, key=lambda p: p.timestamp)  # stable: ties keep file order
    open_flows: dict[FlowKey, _OpenFlow] = {}
    done: list[BiFlow] = []

    def finish(state: _OpenFlow) -> None:
        done.append(state.flow)

    for pkt in ordered:
        key = flow_key(pkt)
        if key is None:
            stats.dropped_packets += 1
            continue
        stats.parsed_packets += 1

        state = open_flows.get(key)
        if state is not None:
            if key.protocol == IPPROTO_UDP:
                if pkt.timestamp - state.flow.end_time > cfg.udp_inactivity_timeout:
                    finish(state)
                    state = None
            elif state.closed:
                finish(state)
                state = None

        if state is None:
            syn = key.protocol == IPPROTO_TCP and bool(tcp_flags(pkt) & TCP_SYN)
            state = _OpenFlow(
                BiFlow(
                    key=key,
                    packets=[],
                    start_time=pkt.timestamp,
                    end_time=pkt.timestamp,
                    saw_syn=syn,
                )
            )
            open_flows[key] = state

        flow = state.flow
        if len(flow.packets) < cfg.max_packets_per_flow:
            flow.packets.append(pkt)
        flow.n_packets_total += 1
        flow.end_time = pkt.timestamp

        if key.protocol == IPPROTO_TCP and cfg.honor_tcp_fin_rst:
            flags = tcp_flags(pkt)
            if flags & TCP_RST:
                state.closed = True
            elif flags & TCP_FIN:
                ep = packet_endpoints(pkt)
                if ep is not None:
                    state.fin_dirs.add(ep[0])
                if len(state.fin_dirs) >= 2:
                    state.fin_complete = True
            elif state.fin_complete and flags & TCP_ACK:
                state.closed = True

    for state in open_flows.values():
        finish(state)

    done.sort(key=lambda f: f.start_time)
    stats.flows = len(done)
    return done


def apply_labels(flows: list[BiFlow], sidecar_path: str | Path) -> None:
    """Attach labels from a `flow_index<TAB>label<TAB>true_label` sidecar."""
    with open(sidecar_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            idx_s, label, true_label = line.split("\t")
            idx = int(idx_s)
            if not 0 <= idx < len(flows):
                raise IndexError(f"sidecar flow_index {idx} out of range")
            flows[idx].label = label or None
            flows[idx].true_label = true_label or None


def write_labels(flows: list[BiFlow], sidecar_path: str | Path) -> None:
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        for i, flow in enumerate(flows):
            fh.write(f"{i}\t{flow.label or ''}\t{flow.true_label or ''}\n")


def _pack_str(s: str | None) -> bytes:
    if s is None:
        return struct.pack("<H", 0xFFFF)
    raw = s.encode("utf-8")
    if len(raw) >= 0xFFFF:
        raise ValueError("label too long")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf: bytes, off: int) -> tuple[str | None, int]:
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    if n == 0xFFFF:
        return None, off
    return buf[off : off + n].decode("utf-8"), off + n


def save_flow_store(flows: list[BiFlow], path: str | Path) -> None:
    """Serialize biflows to the length-prefixed binary store (see docs/formats.md)."""
    with open(path, "wb") as fh:
        fh.write(FLOW_STORE_MAGIC)
        fh.write(struct.pack("<I", len(flows)))
        for flow in flows:
            rec = bytearray()
            k = flow.key
            rec += struct.pack("<B", len(k.ip_lo))
            rec += k.ip_lo + k.ip_hi
            rec += struct.pack("<HHB", k.port_lo, k.port_hi, k.protocol)
            rec += struct.pack("<ddBI", flow.start_time, flow.end_time, int(flow.saw_syn), flow.n_packets_total)
            rec += _pack_str(flow.label)
            rec += _pack_str(flow.true_label)
            rec += struct.pack("<H", len(flow.packets))
            for pkt in flow.packets:
                rec += struct.pack(
                    "<dIIiii",
                    pkt.timestamp,
                    pkt.caplen,
                    pkt.orig_len,
                    -1 if pkt.l3_offset is None else pkt.l3_offset,
                    -1 if pkt.l4_offset is None else pkt.l4_offset,
                    -1 if pkt.payload_offset is None else pkt.payload_offset,
                )
                rec += struct.pack("<I", len(pkt.link_bytes))
                rec += pkt.link_bytes
            fh.write(struct.pack("<I", len(rec)))
            fh.write(rec)


def load_flow_store(path: str | Path) -> list[BiFlow]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != FLOW_STORE_MAGIC:
            raise FormatError(f"{path}: not a flow store (magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        flows: list[BiFlow] = []
        for _ in range(count):
            (rec_len,) = struct.unpack("<I", fh.read(4))
            buf = fh.read(rec_len)
            off = 0
            (ip_len,) = struct.unpack_from("<B", buf, off)
            off += 1
            ip_lo = buf[off : off + ip_len]
            off += ip_len
            ip_hi = buf[off : off + ip_len]
            off += ip_len
            port_lo, port_hi, proto = struct.unpack_from("<HHB", buf, off)
            off += 5
            start, end, saw_syn, total = struct.unpack_from("<ddBI", buf, off)
            off += 8 + 8 + 1 + 4
            label, off = _unpack_str(buf, off)
            true_label, off = _unpack_str(buf, off)
            (n_pkts,) = struct.unpack_from("<H", buf, off)
            off += 2
            packets = []
            for _ in range(n_pkts):
                ts, caplen, orig_len, l3, l4, payload = struct.unpack_from("<dIIiii", buf, off)
                off += 8 + 4 + 4 + 12
                (blen,) = struct.unpack_from("<I", buf, off)
                off += 4
                data = buf[off : off + blen]
                off += blen
                packets.append(
                    PacketRecord(
                        timestamp=ts,
                        link_bytes=data,
                        caplen=caplen,
                        orig_len=orig_len,
                        l3_offset=None if l3 < 0 else l3,
                        l4_offset=None if l4 < 0 else l4,
                        payload_offset=None if payload < 0 else payload,
                    )
                )
            flows.append(
                BiFlow(
                    key=FlowKey(ip_lo, ip_hi, port_lo, port_hi, proto),
                    packets=packets,
                    start_time=start,
                    end_time=end,
                    label=label,
                    true_label=true_label,
                    saw_syn=bool(saw_syn),
                    n_packets_total=total,
                )
            )
        return flows
