"""SSL/TLS handshake field location for occlusion.

The parser walks the TLS record layer of each direction of a TCP flow's
first packets (records may span packet boundaries), reassembles handshake
messages from type-22 fragments, and emits a byte span for every handshake
field of interest: hello versions and randoms, session ids, cipher and
compression info, per-extension spans keyed by extension type, and the
bodies of Certificate / ServerKeyExchange / ClientKeyExchange messages.

Spans are expressed in the coordinates of a chosen strip mode so they can be
zeroed directly inside encoded feature vectors. The parser never raises on
arbitrary bytes: anything that does not look like TLS yields an empty map.

Record layout (RFC 5246 A.1): type(1) version(2) length(2) fragment.
Handshake layout: msg_type(1) length(3) body.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoding import EncodeConfig, FeatureVector, StripMode, strip_origin
from .flows import BiFlow, packet_endpoints
from .pcap import IPPROTO_TCP

# field identifiers; extensions use "extension:<type>"
VERSION = "version"
RECORD_HANDSHAKE_LENGTH = "record_handshake_length"
HANDSHAKE_TYPE = "handshake_type"
RANDOM_CLIENT = "random_client"
RANDOM_SERVER = "random_server"
SESSION_ID_CLIENT = "session_id_client"
SESSION_ID_SERVER = "session_id_server"
COMPRESSION_CLIENT = "compression_client"
COMPRESSION_SERVER = "compression_server"
CIPHER_INFO_CLIENT = "cipher_info_client"
CIPHER_INFO_SERVER = "cipher_info_server"
CERTIFICATE = "certificate"
SERVER_KEY_EXCHANGE = "server_key_exchange"
CLIENT_KEY_EXCHANGE = "client_key_exchange"
ALL_EXTENSIONS = "all_extensions"
# selector-only bucket: matches any extension with type in [54, 65279]
EXTENSION_UNASSIGNED = "extension:unassigned"

UNASSIGNED_RANGE = (54, 65279)

_RECORD_TYPES = frozenset((20, 21, 22, 23))
_HS_CLIENT_HELLO = 1
_HS_SERVER_HELLO = 2
_HS_CERTIFICATE = 11
_HS_SERVER_KEY_EXCHANGE = 12
_HS_CLIENT_KEY_EXCHANGE = 16


def extension_field(ext_type: int) -> str:
    return f"extension:{ext_type}"


@dataclass(frozen=True)
class FieldSpan:
    field_id: str
    packet_index: int
    start: int
    end: int
    ext_type: int | None = None


@dataclass
class TlsFieldMap:
    flow: BiFlow | None
    mode: StripMode
    spans: list[FieldSpan] = field(default_factory=list)
    protocol_version: int | None = None
    saw_client_hello: bool = False
    saw_server_hello: bool = False

    def spans_for(self, field_id: str) -> list[FieldSpan]:
        return [s for s in self.spans if _selector_matches(field_id, s)]


class _ByteStream:
    """Reassembled byte stream that remembers where each byte came from."""

    def __init__(self) -> None:
        self.data = bytearray()
        # (stream_start, stream_end, packet_index, abs_start_in_frame)
        self.chunks: list[tuple[int, int, int, int]] = []

    def append(self, data: bytes, pkt_idx: int, abs_start: int) -> None:
        if not data:
            return
        start = len(self.data)
        self.data += data
        self.chunks.append((start, start + len(data), pkt_idx, abs_start))

    def append_slice(self, other: "_ByteStream", s: int, e: int) -> None:
        """Copy other[s:e] preserving packet provenance (handshake reassembly)."""
        for cs, ce, pkt, abs_start in other.chunks:
            lo, hi = max(s, cs), min(e, ce)
            if lo < hi:
                self.append(bytes(other.data[lo:hi]), pkt, abs_start + (lo - cs))

    def map_span(self, s: int, e: int) -> list[tuple[int, int, int]]:
        """Stream span -> [(packet_index, abs_start, abs_end)] pieces."""
        out = []
        for cs, ce, pkt, abs_start in self.chunks:
            lo, hi = max(s, cs), min(e, ce)
            if lo < hi:
                out.append((pkt, abs_start + (lo - cs), abs_start + (hi - cs)))
        return out


class _SpanCollector:
    def __init__(self, flow: BiFlow, mode: StripMode):
        self.mode = mode
        self.flow = flow
        self.spans: list[FieldSpan] = []

    def emit(self, stream: _ByteStream, field_id: str, s: int, e: int, ext_type: int | None = None) -> None:
        for pkt_idx, abs_s, abs_e in stream.map_span(s, e):
            origin = strip_origin(self.flow.packets[pkt_idx], self.mode)
            if origin is None:
                continue
            self.spans.append(FieldSpan(field_id, pkt_idx, abs_s - origin, abs_e - origin, ext_type))


def _be16(b: bytes | bytearray, off: int) -> int:
    return (b[off] << 8) | b[off + 1]


def _be24(b: bytes | bytearray, off: int) -> int:
    return (b[off] << 16) | (b[off + 1] << 8) | b[off + 2]


def _parse_extensions(
    col: _SpanCollector, hs: _ByteStream, off: int, limit: int
) -> None:
    """Extension block: u16 total length, then type(2) length(2) data entries."""
    if off + 2 > limit:
        return
    block_start = off
    declared_end = off + 2 + _be16(hs.data, off)
    off += 2
    last_full = off
    while off + 4 <= min(declared_end, limit):
        etype = _be16(hs.data, off)
        elen = _be16(hs.data, off + 2)
        ext_end = off + 4 + elen
        if ext_end > min(declared_end, limit):
            break
        col.emit(hs, extension_field(etype), off, ext_end, ext_type=etype)
        off = last_full = ext_end
    all_end = declared_end if declared_end <= limit and last_full == declared_end else last_full
    if all_end > block_start + 2 or declared_end == block_start + 2:
        col.emit(hs, ALL_EXTENSIONS, block_start, all_end)


def _parse_hello(col: _SpanCollector, hs: _ByteStream, body: int, body_end: int, client: bool) -> bool:
    """Common ClientHello/ServerHello walk; True when the fixed part parsed."""
    off = body
    if off + 2 > body_end:
        return False
    col.emit(hs, VERSION, off, off + 2)
    off += 2
    if off + 32 > body_end:
        return True
    col.emit(hs, RANDOM_CLIENT if client else RANDOM_SERVER, off, off + 32)
    off += 32
    if off + 1 > body_end:
        return True
    sid_len = hs.data[off]
    if off + 1 + sid_len > body_end:
        return True
    col.emit(hs, SESSION_ID_CLIENT if client else SESSION_ID_SERVER, off, off + 1 + sid_len)
    off += 1 + sid_len

    if client:
        if off + 2 > body_end:
            return True
        cs_len = _be16(hs.data, off)
        if off + 2 + cs_len > body_end:
            return True
        col.emit(hs, CIPHER_INFO_CLIENT, off, off + 2 + cs_len)
        off += 2 + cs_len
        if off + 1 > body_end:
            return True
        comp_len = hs.data[off]
        if off + 1 + comp_len > body_end:
            return True
        col.emit(hs, COMPRESSION_CLIENT, off, off + 1 + comp_len)
        off += 1 + comp_len
    else:
        if off + 2 > body_end:
            return True
        col.emit(hs, CIPHER_INFO_SERVER, off, off + 2)
        off += 2
        if off + 1 > body_end:
            return True
        col.emit(hs, COMPRESSION_SERVER, off, off + 1)
        off += 1

    _parse_extensions(col, hs, off, body_end)
    return True


def parse_flow_tls(
    flow: BiFlow,
    mode: StripMode = StripMode.L234_REMOVED,
    cfg: EncodeConfig | None = None,
) -> TlsFieldMap:
    """Locate all TLS handshake fields in a flow's first packets.

    Never raises on malformed input; a flow without recognizable TLS records
    simply produces a map with no spans and both hello flags false.
    """
    cfg = cfg or EncodeConfig()
    fmap = TlsFieldMap(flow=flow, mode=mode)
    if flow.key.protocol != IPPROTO_TCP or not flow.packets:
        return fmap

    first_ep = packet_endpoints(flow.packets[0])
    if first_ep is None:
        return fmap
    client_src = (first_ep[0], first_ep[2])

    col = _SpanCollector(flow, mode)
    for from_client in (True, False):
        record_stream = _ByteStream()
        for idx, pkt in enumerate(flow.packets[: cfg.packets_per_flow]):
            if pkt.payload_offset is None:
                continue
            ep = packet_endpoints(pkt)
            if ep is None:
                continue
            if ((ep[0], ep[2]) == client_src) != from_client:
                continue
            record_stream.append(pkt.link_bytes[pkt.payload_offset :], idx, pkt.payload_offset)

        data = record_stream.data
        hs_stream = _ByteStream()
        pos = 0
        while pos + 5 <= len(data):
            ctype = data[pos]
            version = _be16(data, pos + 1)
            rlen = _be16(data, pos + 3)
            if ctype not in _RECORD_TYPES or not 0x0300 <= version <= 0x0304:
                break
            if fmap.protocol_version is None:
                fmap.protocol_version = version
            col.emit(record_stream, VERSION, pos + 1, pos + 3)
            col.emit(record_stream, RECORD_HANDSHAKE_LENGTH, pos + 3, pos + 5)
            frag_end = min(pos + 5 + rlen, len(data))
            if ctype == 22:
                hs_stream.append_slice(record_stream, pos + 5, frag_end)
            pos += 5 + rlen

        hs = hs_stream.data
        hpos = 0
        while hpos + 4 <= len(hs):
            mtype = hs[hpos]
            mlen = _be24(hs, hpos + 1)
            col.emit(hs_stream, HANDSHAKE_TYPE, hpos, hpos + 1)
            col.emit(hs_stream, RECORD_HANDSHAKE_LENGTH, hpos + 1, hpos + 4)
            body = hpos + 4
            body_end = body + mlen
            captured_end = min(body_end, len(hs))
            if mtype == _HS_CLIENT_HELLO:
                if _parse_hello(col, hs_stream, body, captured_end, client=True):
                    fmap.saw_client_hello = True
            elif mtype == _HS_SERVER_HELLO:
                if _parse_hello(col, hs_stream, body, captured_end, client=False):
                    fmap.saw_server_hello = True
            elif mtype in (_HS_CERTIFICATE, _HS_SERVER_KEY_EXCHANGE, _HS_CLIENT_KEY_EXCHANGE):
                if body_end <= len(hs):
                    which = {
                        _HS_CERTIFICATE: CERTIFICATE,
                        _HS_SERVER_KEY_EXCHANGE: SERVER_KEY_EXCHANGE,
                        _HS_CLIENT_KEY_EXCHANGE: CLIENT_KEY_EXCHANGE,
                    }[mtype]
                    col.emit(hs_stream, which, body, body_end)
            hpos = body_end

    fmap.spans = col.spans
    return fmap


def _selector_matches(selector: str, span: FieldSpan) -> bool:
    if selector == span.field_id:
        return True
    if span.ext_type is not None:
        if selector == ALL_EXTENSIONS:
            return True
        if selector == EXTENSION_UNASSIGNED and UNASSIGNED_RANGE[0] <= span.ext_type <= UNASSIGNED_RANGE[1]:
            return True
    return False


def occlude_vector(
    v: FeatureVector | np.ndarray,
    fmap: TlsFieldMap,
    selector: "set[str] | frozenset[str]",
    cfg: EncodeConfig | None = None,
) -> FeatureVector | np.ndarray:
    """Zero every selected field's bytes inside an encoded vector (copy).

    A selector naming a field the flow does not contain is a no-op; spans
    past each packet's 256-byte window are clipped because the model never
    sees those bytes.
    """
    cfg = cfg or EncodeConfig()
    if isinstance(v, FeatureVector):
        if v.mode is not fmap.mode:
            raise ValueError(f"vector mode {v.mode} != field map mode {fmap.mode}")
        values = v.values.copy()
    else:
        values = np.array(v, copy=True)

    w = cfg.bytes_per_packet
    for span in fmap.spans:
        if not any(_selector_matches(sel, span) for sel in selector):
            continue
        start = min(max(span.start, 0), w)
        end = min(max(span.end, 0), w)
        if start < end:
            base = span.packet_index * w
            values[base + start : base + end] = 0.0

    if isinstance(v, FeatureVector):
        return FeatureVector(
            values=values,
            mode=v.mode,
            n_packets_used=v.n_packets_used,
            n_parseable=v.n_parseable,
            source_flow=v.source_flow,
        )
    return values


def format_field_map(fmap: TlsFieldMap, preview_bytes: int = 8) -> str:
    """One line per span: `packet_index field_name start end hex_preview`."""
    lines = []
    for span in fmap.spans:
        preview = ""
        if fmap.flow is not None and span.packet_index < len(fmap.flow.packets):
            pkt = fmap.flow.packets[span.packet_index]
            origin = strip_origin(pkt, fmap.mode)
            if origin is not None:
                raw = pkt.link_bytes[origin + span.start : origin + span.end]
                preview = raw[:preview_bytes].hex()
        lines.append(f"{span.packet_index} {span.field_id} {span.start} {span.end} {preview}")
    return "\n".join(lines)


#: Table rows used by the occlusion report: one selector set per row.
DEFAULT_OCCLUSION_ROWS: list[tuple[str, frozenset[str]]] = [
    ("Version", frozenset({VERSION})),
    ("Record+Handshake Length", frozenset({RECORD_HANDSHAKE_LENGTH})),
    ("Handshake type", frozenset({HANDSHAKE_TYPE})),
    ("Rand (Client Hello)", frozenset({RANDOM_CLIENT})),
    ("Rand (Server Hello)", frozenset({RANDOM_SERVER})),
    ("SID info (Client Hello)", frozenset({SESSION_ID_CLIENT})),
    ("SID info (Server Hello)", frozenset({SESSION_ID_SERVER})),
    ("Compression info (Client Hello)", frozenset({COMPRESSION_CLIENT})),
    ("Compression info (Server Hello)", frozenset({COMPRESSION_SERVER})),
    ("Cipher info (Client Hello)", frozenset({CIPHER_INFO_CLIENT})),
    ("Cipher info (Server Hello)", frozenset({CIPHER_INFO_SERVER})),
    ("Certificate info (type 11)", frozenset({CERTIFICATE})),
    ("Server key exchange info (type 12)", frozenset({SERVER_KEY_EXCHANGE})),
    ("Client key exchange info (type 16)", frozenset({CLIENT_KEY_EXCHANGE})),
    ("All extensions", frozenset({ALL_EXTENSIONS})),
    ("Extension #0 (SNI)", frozenset({extension_field(0)})),
    ("Extension #5 (Status request)", frozenset({extension_field(5)})),
    ("Extension #10 (Supported groups)", frozenset({extension_field(10)})),
    ("Extension #11 (EC point formats)", frozenset({extension_field(11)})),
    ("Extension #13 (Signature algorithms)", frozenset({extension_field(13)})),
    ("Extension #16 (ALPN)", frozenset({extension_field(16)})),
    ("Extension #18 (Signed cert timestamp)", frozenset({extension_field(18)})),
    ("Extension #23 (Extended master secret)", frozenset({extension_field(23)})),
    ("Extension #35 (Session ticket)", frozenset({extension_field(35)})),
    ("Extension #54-65279 (Unassigned)", frozenset({EXTENSION_UNASSIGNED})),
    ("Extension #65281 (Renegotiation info)", frozenset({extension_field(65281)})),
    ("Cipher info (Client), All extensions", frozenset({CIPHER_INFO_CLIENT, ALL_EXTENSIONS})),
    (
        "Cipher info (Client), All extensions, Rand (Client)",
        frozenset({CIPHER_INFO_CLIENT, ALL_EXTENSIONS, RANDOM_CLIENT}),
    ),
]
