import struct

import pytest

from appident.pcap import PcapFormatError, PcapReader, read_pcap, write_pcap

from conftest import eth, ipv4, tcp, tcp_frame, udp_frame, write_test_pcap


def test_empty_capture_yields_empty_stream(tmp_pcap):
    path = tmp_pcap([])
    assert list(read_pcap(path)) == []


def test_ipv4_tcp_syn_offsets(tmp_pcap):
    # Ethernet(14) + IPv4(20) + TCP(20) + 20 payload bytes = 74-byte frame
    frame = tcp_frame("10.0.0.1", "10.0.0.2", 1234, 443, flags=0x02, payload=b"A" * 20)
    assert len(frame) == 74
    path = tmp_pcap([(1.0, frame)])
    (rec,) = list(read_pcap(path))
    assert rec.l3_offset == 14
    assert rec.l4_offset == 34
    assert rec.payload_offset == 54
    assert rec.caplen == 74
    assert rec.link_bytes == frame


def test_byteswapped_magic_reads_identically(tmp_pcap):
    packets = [
        (1.5, tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 0x18, b"hello")),
        (2.25, udp_frame("10.0.0.3", "10.0.0.4", 5, 6, b"x" * 30)),
    ]
    native = tmp_pcap(packets, "native.pcap", byteswapped=False)
    swapped = tmp_pcap(packets, "swapped.pcap", byteswapped=True)
    a = list(read_pcap(native))
    b = list(read_pcap(swapped))
    assert len(a) == len(b) == 2
    for ra, rb in zip(a, b):
        assert ra == rb


def test_bad_magic_is_fatal(tmp_path):
    path = tmp_path / "bad.pcap"
    path.write_bytes(b"\xde\xad\xbe\xef" + b"\x00" * 20)
    with pytest.raises(PcapFormatError):
        PcapReader(path)


def test_short_header_is_fatal(tmp_path):
    path = tmp_path / "short.pcap"
    path.write_bytes(b"\xd4\xc3\xb2\xa1")
    with pytest.raises(PcapFormatError):
        PcapReader(path)


def test_non_ethernet_linktype_rejected(tmp_path):
    path = tmp_path / "raw.pcap"
    path.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101))
    with pytest.raises(PcapFormatError):
        PcapReader(path)


def test_truncated_tail_stops_with_warning(tmp_pcap, tmp_path):
    frame = tcp_frame("10.0.0.1", "10.0.0.2", 1, 2, 0x02)
    path = tmp_pcap([(1.0, frame), (2.0, frame)])
    data = path.read_bytes()
    cut = tmp_path / "cut.pcap"
    cut.write_bytes(data[:-7])  # cut into the last record's bytes
    reader = PcapReader(cut)
    records = list(reader)
    assert len(records) == 1
    assert reader.truncated_tail == 1


def test_non_ip_frames_have_no_offsets(tmp_pcap):
    arp = eth(ethertype=0x0806) + b"\x00" * 28
    path = tmp_pcap([(1.0, arp)])
    (rec,) = list(read_pcap(path))
    assert rec.l3_offset is None and rec.l4_offset is None and rec.payload_offset is None


def test_truncated_tcp_header_leaves_payload_offset_absent(tmp_pcap):
    # IP says TCP but the frame ends 8 bytes into the TCP header
    seg = tcp(1, 2, 0x02)[:8]
    frame = eth() + ipv4("10.0.0.1", "10.0.0.2", 6, len(seg)) + seg
    path = tmp_pcap([(1.0, frame)])
    (rec,) = list(read_pcap(path))
    assert rec.l3_offset == 14
    assert rec.l4_offset == 34
    assert rec.payload_offset is None


def test_ipv6_tcp_offsets(tmp_pcap):
    seg = tcp(10, 20, 0x18, b"zz")
    v6 = struct.pack("!IHBB", 6 << 28, len(seg), 6, 64) + bytes(range(16)) + bytes(range(16, 32))
    frame = eth(ethertype=0x86DD) + v6 + seg
    path = tmp_pcap([(1.0, frame)])
    (rec,) = list(read_pcap(path))
    assert rec.l3_offset == 14
    assert rec.l4_offset == 14 + 40
    assert rec.payload_offset == 14 + 40 + 20


def test_writer_reader_roundtrip(tmp_path):
    packets = [(3.000002, tcp_frame("10.0.0.9", "10.0.0.8", 7, 8, 0x10, b"q"))]
    path = tmp_path / "w.pcap"
    write_pcap(path, packets)
    (rec,) = list(read_pcap(path))
    assert rec.timestamp == pytest.approx(3.000002, abs=1e-7)
    assert rec.link_bytes == packets[0][1]
