"""Classic libpcap file reading and writing.

Only the original pcap format is handled (24-byte global header, magic
0xa1b2c3d4 in either byte order, linktype Ethernet). Each captured frame is
returned as a :class:`PacketRecord` with pre-computed layer-boundary offsets
for IPv4/IPv6 over Ethernet carrying TCP or UDP. Frames that are not IP, or
whose headers are cut short by the snap length, keep ``None`` offsets and are
still yielded so callers can count them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import FormatError

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
IPPROTO_TCP = 6
IPPROTO_UDP = 17

_GLOBAL_HEADER_LEN = 24
_RECORD_HEADER_LEN = 16


class PcapFormatError(FormatError):
    """The file is not a classic pcap capture this reader supports."""


@dataclass(frozen=True)
class PacketRecord:
    """One captured frame plus the layer boundaries found inside it.

    Offsets index into ``link_bytes`` and are ``None`` when the layer is
    missing or truncated. Whenever present they satisfy
    ``l3_offset < l4_offset < payload_offset <= caplen``.
    """

    timestamp: float
    link_bytes: bytes
    caplen: int
    orig_len: int
    l3_offset: int | None = None
    l4_offset: int | None = None
    payload_offset: int | None = None


def _layer_offsets(frame: bytes) -> tuple[int | None, int | None, int | None]:
    """Locate IP / transport / payload boundaries in an Ethernet frame."""
    if len(frame) < 14:
        return None, None, None
    ethertype = struct.unpack_from("!H", frame, 12)[0]
    l3 = 14

    if ethertype == ETHERTYPE_IPV4:
        if len(frame) < l3 + 20:
            return l3, None, None
        vihl = frame[l3]
        if vihl >> 4 != 4:
            return l3, None, None
        ihl = (vihl & 0x0F) * 4
        if ihl < 20 or len(frame) < l3 + ihl:
            return l3, None, None
        proto = frame[l3 + 9]
        l4 = l3 + ihl
    elif ethertype == ETHERTYPE_IPV6:
        if len(frame) < l3 + 40:
            return l3, None, None
        proto = frame[l3 + 6]
        l4 = l3 + 40
    else:
        return None, None, None

    if proto == IPPROTO_TCP:
        if len(frame) < l4 + 20:
            return l3, l4, None
        doff = (frame[l4 + 12] >> 4) * 4
        if doff < 20 or len(frame) < l4 + doff:
            return l3, l4, None
        return l3, l4, l4 + doff
    if proto == IPPROTO_UDP:
        if len(frame) < l4 + 8:
            return l3, l4, None
        return l3, l4, l4 + 8
    # other transport: report the network layer only
    return l3, l4, None


class PcapReader:
    """Iterates a capture file, yielding :class:`PacketRecord` in file order.

    A corrupt global header raises :class:`PcapFormatError`; a record cut off
    at end-of-file stops iteration and bumps ``truncated_tail`` instead of
    failing, matching how live captures usually end.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.truncated_tail = 0
        self.packet_count = 0

        with open(self.path, "rb") as fh:
            header = fh.read(_GLOBAL_HEADER_LEN)
        if len(header) < _GLOBAL_HEADER_LEN:
            raise PcapFormatError(f"{self.path}: too short for a pcap global header")
        magic = struct.unpack_from("<I", header, 0)[0]
        if magic == PCAP_MAGIC:
            self._endian = "<"
        elif struct.unpack_from(">I", header, 0)[0] == PCAP_MAGIC:
            self._endian = ">"
        else:
            raise PcapFormatError(f"{self.path}: bad pcap magic 0x{magic:08x}")
        _, _, _, _, self.snaplen, self.linktype = struct.unpack_from(
            self._endian + "HHiIII", header, 4
        )
        if self.linktype != LINKTYPE_ETHERNET:
            raise PcapFormatError(
                f"{self.path}: unsupported linktype {self.linktype} (Ethernet only)"
            )

    def __iter__(self) -> Iterator[PacketRecord]:
        rec_fmt = self._endian + "IIII"
        with open(self.path, "rb") as fh:
            fh.seek(_GLOBAL_HEADER_LEN)
            while True:
                head = fh.read(_RECORD_HEADER_LEN)
                if not head:
                    return
                if len(head) < _RECORD_HEADER_LEN:
                    self.truncated_tail += 1
                    return
                ts_sec, ts_usec, incl_len, orig_len = struct.unpack(rec_fmt, head)
                data = fh.read(incl_len)
                if len(data) < incl_len:
                    self.truncated_tail += 1
                    return
                l3, l4, payload = _layer_offsets(data)
                self.packet_count += 1
                yield PacketRecord(
                    timestamp=ts_sec + ts_usec * 1e-6,
                    link_bytes=data,
                    caplen=incl_len,
                    orig_len=orig_len,
                    l3_offset=l3,
                    l4_offset=l4,
                    payload_offset=payload,
                )


def read_pcap(path: str | Path) -> Iterator[PacketRecord]:
    """Convenience wrapper: stream records from a capture file."""
    return iter(PcapReader(path))


def write_pcap(
    path: str | Path,
    packets: "list[tuple[float, bytes]]",
    snaplen: int = 65535,
    byteswapped: bool = False,
) -> None:
    """Write (timestamp, frame) pairs as a classic Ethernet pcap.

    ``byteswapped`` emits the opposite-endian header variant, used to test
    that both magics read back identically.
    """
    endian = ">" if byteswapped else "<"
    with open(path, "wb") as fh:
        fh.write(struct.pack(endian + "IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
        for ts, frame in packets:
            ts_sec = int(ts)
            ts_usec = int(round((ts - ts_sec) * 1e6))
            if ts_usec >= 1_000_000:
                ts_sec += 1
                ts_usec -= 1_000_000
            fh.write(struct.pack(endian + "IIII", ts_sec, ts_usec, len(frame), len(frame)))
            fh.write(frame)
