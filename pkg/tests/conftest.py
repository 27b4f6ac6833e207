"""Hand-rolled frame builders for fixtures.

These deliberately do not reuse the package's synthesis helpers: the byte
layouts are written out by hand so the tests stay an independent check on
the parsing path. Checksums are left zero; the readers never verify them.
"""

import struct

import pytest


def eth(src_ip_tag: int = 1, dst_ip_tag: int = 2, ethertype: int = 0x0800) -> bytes:
    return bytes([0, 0, 0, 0, 0, dst_ip_tag]) + bytes([0, 0, 0, 0, 0, src_ip_tag]) + struct.pack("!H", ethertype)


def ipv4(src: str, dst: str, proto: int, payload_len: int, ihl_words: int = 5) -> bytes:
    header = struct.pack(
        "!BBHHHBBH4s4s",
        (4 << 4) | ihl_words,
        0,
        ihl_words * 4 + payload_len,
        0,
        0,
        64,
        proto,
        0,
        bytes(int(p) for p in src.split(".")),
        bytes(int(p) for p in dst.split(".")),
    )
    return header + b"\x00" * (ihl_words * 4 - 20)


def tcp(sport: int, dport: int, flags: int, payload: bytes = b"", seq: int = 1000, ack: int = 0, doff_words: int = 5) -> bytes:
    header = struct.pack("!HHIIBBHHH", sport, dport, seq, ack, doff_words << 4, flags, 65535, 0, 0)
    return header + b"\x00" * (doff_words * 4 - 20) + payload


def udp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload


def tcp_frame(src: str, dst: str, sport: int, dport: int, flags: int, payload: bytes = b"", seq: int = 1000, ack: int = 0, doff_words: int = 5) -> bytes:
    seg = tcp(sport, dport, flags, payload, seq, ack, doff_words)
    return eth() + ipv4(src, dst, 6, len(seg)) + seg


def udp_frame(src: str, dst: str, sport: int, dport: int, payload: bytes = b"") -> bytes:
    seg = udp(sport, dport, payload)
    return eth() + ipv4(src, dst, 17, len(seg)) + seg


def write_test_pcap(path, packets, byteswapped=False):
    """(timestamp, frame) pairs -> classic pcap; mirrors the on-disk layout."""
    endian = ">" if byteswapped else "<"
    with open(path, "wb") as fh:
        fh.write(struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for ts, frame in packets:
            sec = int(ts)
            usec = int(round((ts - sec) * 1e6))
            fh.write(struct.pack(endian + "IIII", sec, usec, len(frame), len(frame)))
            fh.write(frame)


@pytest.fixture
def tmp_pcap(tmp_path):
    def _write(packets, name="capture.pcap", byteswapped=False):
        path = tmp_path / name
        write_test_pcap(path, packets, byteswapped)
        return path

    return _write
