import numpy as np
import pytest

from appident.flows import (
    BiFlow,
    FlowKey,
    IngestConfig,
    IngestStats,
    apply_labels,
    assemble_flows,
    flow_key,
    load_flow_store,
    save_flow_store,
    write_labels,
)
from appident.pcap import read_pcap

from conftest import eth, tcp_frame, udp_frame

FIN = 0x01
SYN = 0x02
RST = 0x04
ACK = 0x10
PSH_ACK = 0x18


def _records(tmp_pcap, packets):
    return list(read_pcap(tmp_pcap(packets)))


def test_single_tcp_conversation_is_one_biflow(tmp_pcap):
    c, s = ("10.0.0.1", "10.0.0.2")
    pkts = [
        (1.00, tcp_frame(c, s, 1111, 443, SYN)),
        (1.01, tcp_frame(s, c, 443, 1111, SYN | ACK)),
        (1.02, tcp_frame(c, s, 1111, 443, ACK)),
        (1.03, tcp_frame(c, s, 1111, 443, PSH_ACK, b"one")),
        (1.04, tcp_frame(s, c, 443, 1111, PSH_ACK, b"two")),
        (1.05, tcp_frame(c, s, 1111, 443, PSH_ACK, b"three")),
        (1.06, tcp_frame(s, c, 443, 1111, PSH_ACK, b"four")),
        (1.07, tcp_frame(c, s, 1111, 443, FIN | ACK)),
        (1.08, tcp_frame(s, c, 443, 1111, FIN | ACK)),
        (1.09, tcp_frame(c, s, 1111, 443, ACK)),
    ]
    flows = assemble_flows(_records(tmp_pcap, pkts))
    assert len(flows) == 1
    flow = flows[0]
    assert flow.n_packets_total == 10
    assert len(flow.packets) == 6  # retained prefix
    assert flow.saw_syn
    assert flow.start_time == pytest.approx(1.00)
    assert flow.end_time == pytest.approx(1.09)


def test_new_episode_after_fin_close(tmp_pcap):
    c, s = ("10.0.0.1", "10.0.0.2")
    pkts = [
        (1.0, tcp_frame(c, s, 1111, 443, SYN)),
        (1.1, tcp_frame(s, c, 443, 1111, FIN | ACK)),
        (1.2, tcp_frame(c, s, 1111, 443, FIN | ACK)),
        (1.3, tcp_frame(s, c, 443, 1111, ACK)),
        # same 5-tuple again after completed close
        (2.0, tcp_frame(c, s, 1111, 443, SYN, seq=9000)),
        (2.1, tcp_frame(s, c, 443, 1111, SYN | ACK)),
    ]
    flows = assemble_flows(_records(tmp_pcap, pkts))
    assert len(flows) == 2
    assert flows[0].n_packets_total == 4
    assert flows[1].n_packets_total == 2


def test_rst_closes_immediately(tmp_pcap):
    c, s = ("10.0.0.1", "10.0.0.2")
    pkts = [
        (1.0, tcp_frame(c, s, 1111, 443, SYN)),
        (1.1, tcp_frame(s, c, 443, 1111, RST)),
        (1.2, tcp_frame(c, s, 1111, 443, SYN)),
    ]
    flows = assemble_flows(_records(tmp_pcap, pkts))
    assert [f.n_packets_total for f in flows] == [2, 1]


def test_udp_timeout_splits_episodes(tmp_pcap):
    a, b = ("10.0.0.5", "10.0.0.6")
    pkts = [
        (10.0, udp_frame(a, b, 5000, 53, b"q1")),
        (11.0, udp_frame(b, a, 53, 5000, b"r1")),
        # 45 s of silence with a 30 s timeout -> new biflow
        (56.0, udp_frame(a, b, 5000, 53, b"q2")),
    ]
    cfg = IngestConfig(udp_inactivity_timeout=30.0)
    flows = assemble_flows(_records(tmp_pcap, pkts), cfg)
    assert len(flows) == 2
    assert flows[0].n_packets_total == 2
    assert flows[1].n_packets_total == 1
    # within the timeout the same key stays one flow
    pkts2 = pkts[:2] + [(40.9, udp_frame(a, b, 5000, 53, b"q2"))]
    flows2 = assemble_flows(_records(tmp_pcap, pkts2), cfg)
    assert len(flows2) == 1


def test_udp_timeout_range_enforced():
    with pytest.raises(ValueError):
        IngestConfig(udp_inactivity_timeout=5.0)
    with pytest.raises(ValueError):
        IngestConfig(udp_inactivity_timeout=90.0)


def test_interleaved_five_tuples_partition(tmp_pcap):
    pkts = []
    t = 1.0
    for i in range(6):
        pkts.append((t, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, PSH_ACK, b"a%d" % i)))
        pkts.append((t + 0.001, tcp_frame("10.0.0.3", "10.0.0.2", 2222, 443, PSH_ACK, b"b%d" % i)))
        t += 0.01
    stats = IngestStats()
    flows = assemble_flows(_records(tmp_pcap, pkts), stats=stats)
    assert len(flows) == 2
    assert sum(f.n_packets_total for f in flows) == stats.parsed_packets == 12


def test_direction_reversed_twin_same_keys(tmp_pcap):
    fwd = [
        (1.0, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, PSH_ACK, b"x")),
        (1.1, udp_frame("10.0.0.3", "10.0.0.4", 1000, 2000, b"y")),
    ]
    rev = [
        (1.0, tcp_frame("10.0.0.2", "10.0.0.1", 443, 1111, PSH_ACK, b"x")),
        (1.1, udp_frame("10.0.0.4", "10.0.0.3", 2000, 1000, b"y")),
    ]
    kf = {f.key for f in assemble_flows(_records(tmp_pcap, fwd))}
    kr = {f.key for f in assemble_flows(_records(tmp_pcap, rev))}
    assert kf == kr


def test_unparseable_packets_counted_not_fatal(tmp_pcap):
    arp = eth(ethertype=0x0806) + b"\x00" * 28
    pkts = [(1.0, arp), (1.1, tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, PSH_ACK, b"k"))]
    stats = IngestStats()
    flows = assemble_flows(_records(tmp_pcap, pkts), stats=stats)
    assert len(flows) == 1
    assert stats.dropped_packets == 1
    assert stats.parsed_packets == 1


def test_determinism_same_bytes_same_flows(tmp_pcap):
    pkts = [
        (1.0, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, SYN)),
        (1.2, udp_frame("10.0.0.3", "10.0.0.4", 1000, 2000, b"y")),
        (1.4, tcp_frame("10.0.0.2", "10.0.0.1", 443, 1111, SYN | ACK)),
    ]
    f1 = assemble_flows(_records(tmp_pcap, pkts))
    f2 = assemble_flows(_records(tmp_pcap, pkts))
    assert [(f.key, f.start_time, f.n_packets_total) for f in f1] == [
        (f.key, f.start_time, f.n_packets_total) for f in f2
    ]


def test_midstream_tcp_flow_flagged(tmp_pcap):
    pkts = [(1.0, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, PSH_ACK, b"data"))]
    (flow,) = assemble_flows(_records(tmp_pcap, pkts))
    assert flow.opened_midstream


def test_label_sidecar_roundtrip(tmp_pcap, tmp_path):
    pkts = [
        (1.0, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, PSH_ACK, b"x")),
        (2.0, udp_frame("10.0.0.3", "10.0.0.4", 1000, 2000, b"y")),
    ]
    flows = assemble_flows(_records(tmp_pcap, pkts))
    flows[0].label, flows[0].true_label = "appA", "ads"
    flows[1].label = "appB"
    sidecar = tmp_path / "labels.tsv"
    write_labels(flows, sidecar)
    reloaded = assemble_flows(_records(tmp_pcap, pkts))
    apply_labels(reloaded, sidecar)
    assert reloaded[0].label == "appA" and reloaded[0].true_label == "ads"
    assert reloaded[1].label == "appB" and reloaded[1].true_label is None


def test_flow_store_roundtrip(tmp_pcap, tmp_path):
    pkts = [
        (1.0, tcp_frame("10.0.0.1", "10.0.0.2", 1111, 443, SYN)),
        (1.1, tcp_frame("10.0.0.2", "10.0.0.1", 443, 1111, SYN | ACK)),
        (1.2, udp_frame("10.0.0.3", "10.0.0.4", 1000, 2000, b"payload")),
    ]
    flows = assemble_flows(_records(tmp_pcap, pkts))
    flows[0].label = "appA"
    store = tmp_path / "flows.bin"
    save_flow_store(flows, store)
    loaded = load_flow_store(store)
    assert len(loaded) == len(flows)
    for orig, back in zip(flows, loaded):
        assert orig.key == back.key
        assert orig.label == back.label
        assert orig.start_time == back.start_time
        assert orig.n_packets_total == back.n_packets_total
        assert [p.link_bytes for p in orig.packets] == [p.link_bytes for p in back.packets]
        assert [p.payload_offset for p in orig.packets] == [p.payload_offset for p in back.packets]
