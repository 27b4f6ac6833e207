"""Deterministic synthetic traffic corpora.

Generates labeled pcap captures that exhibit the phenomena the pipeline is
built around: apps with distinct TLS ClientHello fingerprints (SNI, cipher
list, extension set), plain-HTTP and UDP apps, and "ambiguous" flows whose
payload bytes come from a fixed shared template so they are byte-identical
no matter which app's session produced them. Sessions are short bursts:
ambiguous flows first, the app-specific flow last, with per-app inter-flow
gap distributions, all inside the two-second association window.

Every random draw comes from one seeded generator consumed in a fixed plan
order, so a given spec always produces a byte-identical capture.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pcap import write_pcap

TLS12 = 0x0303
ETHERTYPE_IPV4 = 0x0800

# --------------------------------------------------------------------------
# frame crafting


def _ip_to_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _mac_for(ip: str) -> bytes:
    return b"\x02\x00" + _ip_to_bytes(ip)


def build_frame(
    src_ip: str,
    dst_ip: str,
    proto: int,
    l4_segment: bytes,
    ident: int,
    ttl: int = 64,
) -> bytes:
    eth = _mac_for(dst_ip) + _mac_for(src_ip) + struct.pack("!H", ETHERTYPE_IPV4)
    total_len = 20 + len(l4_segment)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,
        0,
        total_len,
        ident & 0xFFFF,
        0x4000,
        ttl,
        proto,
        0,
        _ip_to_bytes(src_ip),
        _ip_to_bytes(dst_ip),
    )
    ip = ip[:10] + struct.pack("!H", _checksum(ip)) + ip[12:]
    return eth + ip + l4_segment


def _l4_checksum(src_ip: str, dst_ip: str, proto: int, segment: bytes) -> int:
    pseudo = _ip_to_bytes(src_ip) + _ip_to_bytes(dst_ip) + struct.pack("!BBH", 0, proto, len(segment))
    return _checksum(pseudo + segment)


def tcp_segment(src_ip, dst_ip, sport, dport, seq, ack, flags, payload=b"", window=65535) -> bytes:
    head = struct.pack("!HHIIBBHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, 5 << 4, flags, window, 0, 0)
    csum = _l4_checksum(src_ip, dst_ip, 6, head + payload)
    return head[:16] + struct.pack("!H", csum) + head[18:] + payload


def udp_segment(src_ip, dst_ip, sport, dport, payload=b"") -> bytes:
    head = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0)
    csum = _l4_checksum(src_ip, dst_ip, 17, head + payload)
    return head[:6] + struct.pack("!H", csum) + payload


# --------------------------------------------------------------------------
# TLS message crafting


def _len24(n: int) -> bytes:
    return bytes(((n >> 16) & 0xFF, (n >> 8) & 0xFF, n & 0xFF))


def tls_record(content_type: int, payload: bytes, version: int = TLS12) -> bytes:
    return struct.pack("!BHH", content_type, version, len(payload)) + payload


def handshake_message(msg_type: int, body: bytes) -> bytes:
    return bytes([msg_type]) + _len24(len(body)) + body


def ext_sni(host: str) -> bytes:
    name = host.encode("ascii")
    return struct.pack("!HBH", len(name) + 3, 0, len(name)) + name


def ext_alpn(protocols: tuple[str, ...]) -> bytes:
    entries = b"".join(bytes([len(p)]) + p.encode("ascii") for p in protocols)
    return struct.pack("!H", len(entries)) + entries


def ext_u16_list(values: tuple[int, ...]) -> bytes:
    packed = b"".join(struct.pack("!H", v) for v in values)
    return struct.pack("!H", len(packed)) + packed


def build_extensions(ext_specs: list[tuple[int, bytes]]) -> bytes:
    blob = b"".join(struct.pack("!HH", etype, len(body)) + body for etype, body in ext_specs)
    return struct.pack("!H", len(blob)) + blob


def client_hello(
    random32: bytes,
    session_id: bytes,
    cipher_suites: tuple[int, ...],
    extensions: list[tuple[int, bytes]],
    version: int = TLS12,
) -> bytes:
    body = (
        struct.pack("!H", version)
        + random32
        + bytes([len(session_id)])
        + session_id
        + struct.pack("!H", 2 * len(cipher_suites))
        + b"".join(struct.pack("!H", s) for s in cipher_suites)
        + b"\x01\x00"  # one compression method: null
        + build_extensions(extensions)
    )
    return tls_record(22, handshake_message(1, body), version)


def server_hello_flight(
    random32: bytes,
    session_id: bytes,
    cipher: int,
    extensions: list[tuple[int, bytes]],
    certificate: bytes | None,
    version: int = TLS12,
) -> bytes:
    body = (
        struct.pack("!H", version)
        + random32
        + bytes([len(session_id)])
        + session_id
        + struct.pack("!H", cipher)
        + b"\x00"  # null compression
        + build_extensions(extensions)
    )
    flight = tls_record(22, handshake_message(2, body), version)
    if certificate is not None:
        chain = _len24(len(certificate)) + certificate
        flight += tls_record(22, handshake_message(11, _len24(len(chain)) + chain), version)
    flight += tls_record(22, handshake_message(14, b""), version)
    return flight


def client_key_exchange_flight(keyex: bytes, appdata: bytes, version: int = TLS12) -> bytes:
    out = tls_record(22, handshake_message(16, keyex), version)
    out += tls_record(20, b"\x01", version)
    if appdata:
        out += tls_record(23, appdata, version)
    return out


# --------------------------------------------------------------------------
# profiles and corpus specification

EXTENSION_BUILDERS = {
    0: "sni",
    5: lambda: b"\x01\x00\x00\x00\x00",  # OCSP status request
    10: lambda: ext_u16_list((0x001D, 0x0017, 0x0018)),
    11: lambda: b"\x01\x00",
    13: lambda: ext_u16_list((0x0403, 0x0503, 0x0804, 0x0401)),
    16: "alpn",
    18: lambda: b"",
    23: lambda: b"",
    35: lambda: b"",
    65281: lambda: b"\x00",
}


@dataclass
class SessionShape:
    """How many ambiguous flows precede the app flow, and with what gaps."""

    n_ambiguous: int = 0
    gap_mean: float = 0.5
    gap_sd: float = 0.08
    gap_min: float = 0.05
    gap_max: float = 0.9


@dataclass
class AppProfile:
    name: str
    kind: str = "tls"  # tls | http | udp
    sni: str = ""
    cipher_suites: tuple[int, ...] = (0xC02B, 0xC02F, 0x009E)
    extensions: tuple[int, ...] = (0, 10, 11, 13, 16, 23, 65281)
    alpn: tuple[str, ...] = ("h2", "http/1.1")
    unassigned_ext: int | None = None  # extra extension with a type in 54..65279
    include_certificate: bool = True
    tls_version: int = TLS12
    http_host: str = ""
    http_user_agent: str = "corpus-agent/1.0"
    http_path: str = "/v1/resource"
    http_token: str = ""
    udp_magic: bytes = b""
    app_data_len: int = 160
    session_id_len: int = 16
    fixed_filler: bool = False
    fixed_hello_randoms: bool = False
    session: SessionShape = field(default_factory=SessionShape)

    def fingerprint(self) -> tuple:
        return (
            self.kind,
            self.sni,
            self.cipher_suites,
            self.extensions,
            self.alpn,
            self.unassigned_ext,
            self.tls_version,
            self.http_host,
            self.http_path,
            self.http_token,
            self.udp_magic,
        )


@dataclass
class AmbiguousTemplate:
    """A shared service whose payload bytes never depend on the source app."""

    name: str
    sni: str
    cipher_suites: tuple[int, ...] = (0xC02B, 0xC030)
    extensions: tuple[int, ...] = (0, 10, 13, 16, 65281)
    alpn: tuple[str, ...] = ("h2",)
    app_data_len: int = 96
    script: "list[tuple[str, bytes]] | None" = None  # realized once per corpus


@dataclass
class CorpusSpec:
    apps: list[AppProfile]
    templates: list[AmbiguousTemplate] = field(default_factory=list)
    sessions_per_app: int = 100
    seed: int = 0
    start_time: float = 1_600_000_000.0
    intended_folds: int = 10
    session_spacing: float = 10.0
    class_correlated_ips: bool = False
    gmt_bias: bool = False
    allow_colliding_fingerprints: bool = False
    corpus_id: str = "synthetic"

    def validate(self) -> None:
        if self.sessions_per_app < 10 * self.intended_folds:
            raise ValueError(
                f"sessions_per_app {self.sessions_per_app} < 10 x intended_folds {self.intended_folds}"
            )
        names = [a.name for a in self.apps]
        if len(set(names)) != len(names):
            raise ValueError("duplicate app names")
        if not self.allow_colliding_fingerprints:
            prints = [a.fingerprint() for a in self.apps]
            if len(set(prints)) != len(prints):
                raise ValueError("two apps share an identical fingerprint")
        for app in self.apps:
            if app.session.n_ambiguous > 0 and not self.templates:
                raise ValueError(f"app {app.name} wants ambiguous flows but no templates given")


# --------------------------------------------------------------------------
# payload scripts: ordered (direction, payload) pairs per flow


def _ext_specs(types: tuple[int, ...], sni: str, alpn: tuple[str, ...], unassigned: int | None, rng) -> list[tuple[int, bytes]]:
    specs: list[tuple[int, bytes]] = []
    for etype in types:
        builder = EXTENSION_BUILDERS.get(etype)
        if builder == "sni":
            specs.append((0, ext_sni(sni)))
        elif builder == "alpn":
            specs.append((16, ext_alpn(alpn)))
        elif builder is None:
            specs.append((etype, rng.bytes(4)))
        else:
            specs.append((etype, builder()))
    if unassigned is not None:
        specs.append((unassigned, rng.bytes(6)))
    return specs


FIXED_FILLER = bytes(range(256)) * 4


def tls_script(
    rng: np.random.Generator,
    sni: str,
    cipher_suites: tuple[int, ...],
    extensions: tuple[int, ...],
    alpn: tuple[str, ...],
    unassigned_ext: int | None,
    include_certificate: bool,
    app_data_len: int,
    version: int = TLS12,
    client_random: bytes | None = None,
    session_id_len: int = 16,
    fixed_filler: bool = False,
    fixed_hello_randoms: bool = False,
) -> list[tuple[str, bytes]]:
    if client_random is not None:
        ch_random = client_random
    elif fixed_hello_randoms:
        ch_random = FIXED_FILLER[32:64]
    else:
        ch_random = rng.bytes(32)
    sh_random = FIXED_FILLER[64:96] if fixed_hello_randoms else rng.bytes(32)

    def filler(n: int) -> bytes:
        return FIXED_FILLER[:n] if fixed_filler else rng.bytes(n)

    ch = client_hello(
        ch_random,
        filler(session_id_len),
        cipher_suites,
        _ext_specs(extensions, sni, alpn, unassigned_ext, rng),
        version,
    )
    cert = filler(180) if include_certificate else None
    sh = server_hello_flight(sh_random, filler(session_id_len), cipher_suites[0], [(65281, b"\x00")], cert, version)
    cke = client_key_exchange_flight(filler(64), filler(app_data_len), version)
    return [("c", ch), ("s", sh), ("c", cke)]


def http_script(
    rng: np.random.Generator,
    host: str,
    user_agent: str,
    path: str = "/v1/resource",
    token: str = "",
    body_len: int = 120,
) -> list[tuple[str, bytes]]:
    auth = f"X-App-Token: {token}\r\n" if token else ""
    req = (
        f"GET {path} HTTP/1.1\r\nHost: {host}\r\n"
        f"User-Agent: {user_agent}\r\n{auth}Accept: */*\r\n\r\n"
    ).encode("ascii")
    body = rng.bytes(body_len)
    resp = (
        f"HTTP/1.1 200 OK\r\nServer: origin-{host}\r\nContent-Length: {body_len}\r\n"
        "Connection: keep-alive\r\n\r\n"
    ).encode("ascii") + body
    req2 = (f"POST {path}/events HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {user_agent}\r\n{auth}\r\n").encode("ascii")
    return [("c", req), ("s", resp), ("c", req2)]


def udp_script(rng: np.random.Generator, magic: bytes, payload_len: int = 90) -> list[tuple[str, bytes]]:
    out: list[tuple[str, bytes]] = []
    for i in range(6):
        direction = "c" if i % 2 == 0 else "s"
        head = magic + bytes([i]) + struct.pack("!H", len(magic) + payload_len)
        out.append((direction, head + rng.bytes(max(payload_len - len(head), 16))))
    return out


# --------------------------------------------------------------------------
# corpus generation

TCP_FIN_ACK = 0x11
TCP_PSH_ACK = 0x18
TCP_SYN = 0x02
TCP_SYN_ACK = 0x12
TCP_ACK = 0x10


@dataclass
class _FlowPlan:
    start: float
    label: str
    true_label: str
    proto: int  # 6 tcp / 17 udp
    client_ip: str
    server_ip: str
    sport: int
    dport: int
    script: list[tuple[str, bytes]]


def _tcp_packets(plan: _FlowPlan, rng: np.random.Generator, ident_base: int) -> list[tuple[float, bytes]]:
    seq = {"c": int(rng.integers(1, 2**31)), "s": int(rng.integers(1, 2**31))}
    ack = {"c": 0, "s": 0}
    ips = {"c": (plan.client_ip, plan.server_ip), "s": (plan.server_ip, plan.client_ip)}
    ports = {"c": (plan.sport, plan.dport), "s": (plan.dport, plan.sport)}
    out: list[tuple[float, bytes]] = []
    t = plan.start
    ident = ident_base

    def emit(side: str, flags: int, payload: bytes = b"") -> None:
        nonlocal t, ident
        src, dst = ips[side]
        sport, dport = ports[side]
        seg = tcp_segment(src, dst, sport, dport, seq[side], ack[side], flags, payload)
        out.append((t, build_frame(src, dst, 6, seg, ident, ttl=64 if side == "c" else 58)))
        advance = len(payload) + (1 if flags & (TCP_SYN | 0x01) else 0)
        seq[side] += advance
        other = "s" if side == "c" else "c"
        ack[other] = seq[side]
        t += float(rng.uniform(0.002, 0.008))
        ident += 1

    emit("c", TCP_SYN)
    emit("s", TCP_SYN_ACK)
    emit("c", TCP_ACK)
    for side, payload in plan.script:
        emit(side, TCP_PSH_ACK, payload)
    emit("c", TCP_FIN_ACK)
    emit("s", TCP_FIN_ACK)
    emit("c", TCP_ACK)
    return out


def _udp_packets(plan: _FlowPlan, rng: np.random.Generator, ident_base: int) -> list[tuple[float, bytes]]:
    out: list[tuple[float, bytes]] = []
    t = plan.start
    for i, (side, payload) in enumerate(plan.script):
        if side == "c":
            src, dst, sport, dport = plan.client_ip, plan.server_ip, plan.sport, plan.dport
        else:
            src, dst, sport, dport = plan.server_ip, plan.client_ip, plan.dport, plan.sport
        seg = udp_segment(src, dst, sport, dport, payload)
        out.append((t, build_frame(src, dst, 17, seg, ident_base + i, ttl=64 if side == "c" else 58)))
        t += float(rng.uniform(0.002, 0.01))
    return out


@dataclass
class GenerationReport:
    n_flows: int
    n_packets: int
    n_sessions: int
    labels: dict[str, int]
    true_labels: dict[str, int]


def _realize_template(tpl: AmbiguousTemplate, rng: np.random.Generator) -> None:
    """Fix the template's payload bytes once; every instance reuses them."""
    tpl.script = tls_script(
        rng,
        sni=tpl.sni,
        cipher_suites=tpl.cipher_suites,
        extensions=tpl.extensions,
        alpn=tpl.alpn,
        unassigned_ext=None,
        include_certificate=True,
        app_data_len=tpl.app_data_len,
    )


def generate_corpus(spec: CorpusSpec, pcap_path: str | Path, labels_path: str | Path) -> GenerationReport:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_apps = len(spec.apps)
    n_tpl = len(spec.templates)

    for tpl in spec.templates:
        _realize_template(tpl, rng)

    shared_servers = [f"198.51.100.{10 + i}" for i in range(4)]
    used_ports: set[tuple[str, int, str, int]] = set()

    def draw_port(cip: str, sip: str, dport: int) -> int:
        for _ in range(64):
            port = int(rng.integers(20000, 60000))
            key = (cip, port, sip, dport)
            if key not in used_ports:
                used_ports.add(key)
                return port
        raise RuntimeError("ephemeral port space exhausted")

    plans: list[_FlowPlan] = []
    for app_idx, app in enumerate(spec.apps):
        for sess in range(spec.sessions_per_app):
            base = (
                spec.start_time
                + (sess * n_apps + app_idx) * spec.session_spacing
                + (86400.0 * app_idx if spec.gmt_bias else 0.0)
                + float(rng.uniform(0.0, 0.2))
            )
            if spec.class_correlated_ips:
                cip = f"10.{100 + app_idx}.{sess % 200}.10"
                sip = f"203.0.113.{10 + app_idx}"
            else:
                cip = f"10.0.{int(rng.integers(0, 200))}.{int(rng.integers(2, 250))}"
                sip = shared_servers[int(rng.integers(0, len(shared_servers)))]

            shape = app.session
            t = base
            for slot in range(shape.n_ambiguous):
                tpl = spec.templates[(app_idx + sess + slot) % n_tpl]
                plans.append(
                    _FlowPlan(
                        start=t,
                        label=app.name,
                        true_label=tpl.name,
                        proto=6,
                        client_ip=cip,
                        server_ip=sip,
                        sport=draw_port(cip, sip, 443),
                        dport=443,
                        script=list(tpl.script),
                    )
                )
                gap = float(np.clip(rng.normal(shape.gap_mean, shape.gap_sd), shape.gap_min, shape.gap_max))
                t += gap

            if app.kind == "tls":
                ch_random = None
                if spec.gmt_bias:
                    ch_random = struct.pack("!I", int(t)) + rng.bytes(28)
                script = tls_script(
                    rng,
                    sni=app.sni,
                    cipher_suites=app.cipher_suites,
                    extensions=app.extensions,
                    alpn=app.alpn,
                    unassigned_ext=app.unassigned_ext,
                    include_certificate=app.include_certificate,
                    app_data_len=app.app_data_len,
                    version=app.tls_version,
                    client_random=ch_random,
                    session_id_len=app.session_id_len,
                    fixed_filler=app.fixed_filler,
                    fixed_hello_randoms=app.fixed_hello_randoms,
                )
                proto, dport = 6, 443
            elif app.kind == "http":
                script = http_script(rng, app.http_host, app.http_user_agent, app.http_path, app.http_token)
                proto, dport = 6, 80
            elif app.kind == "udp":
                script = udp_script(rng, app.udp_magic)
                proto, dport = 17, 5004
            else:
                raise ValueError(f"unknown app kind {app.kind}")
            plans.append(
                _FlowPlan(
                    start=t,
                    label=app.name,
                    true_label=app.name,
                    proto=proto,
                    client_ip=cip,
                    server_ip=sip,
                    sport=draw_port(cip, sip, dport),
                    dport=dport,
                    script=script,
                )
            )

    # distinct start times keep the sidecar index unambiguous
    plans.sort(key=lambda p: p.start)
    for i in range(1, len(plans)):
        if plans[i].start <= plans[i - 1].start:
            plans[i].start = plans[i - 1].start + 1e-6

    packets: list[tuple[float, bytes]] = []
    for i, plan in enumerate(plans):
        ident_base = (i * 16) & 0xFFFF
        if plan.proto == 6:
            packets.extend(_tcp_packets(plan, rng, ident_base))
        else:
            packets.extend(_udp_packets(plan, rng, ident_base))
    packets.sort(key=lambda pair: pair[0])
    write_pcap(pcap_path, packets)

    with open(labels_path, "w", encoding="utf-8") as fh:
        for i, plan in enumerate(plans):
            fh.write(f"{i}\t{plan.label}\t{plan.true_label}\n")

    labels: dict[str, int] = {}
    true_labels: dict[str, int] = {}
    for plan in plans:
        labels[plan.label] = labels.get(plan.label, 0) + 1
        true_labels[plan.true_label] = true_labels.get(plan.true_label, 0) + 1
    return GenerationReport(
        n_flows=len(plans),
        n_packets=len(packets),
        n_sessions=n_apps * spec.sessions_per_app,
        labels=labels,
        true_labels=true_labels,
    )


# --------------------------------------------------------------------------
# presets

CIPHER_POOL = (0xC02B, 0xC02C, 0xC02F, 0xC030, 0x009E, 0x009F, 0xC013, 0xC014, 0x002F, 0x0035, 0x1301, 0x1302)
EXT_POOL = (10, 11, 13, 16, 18, 23, 35, 5)


def _tls_profile(i: int, shape: SessionShape | None = None, gap_mean: float | None = None) -> AppProfile:
    suites = tuple(CIPHER_POOL[(i + k) % len(CIPHER_POOL)] for k in range(3 + i % 4))
    exts = (0,) + tuple(sorted({EXT_POOL[(i + k) % len(EXT_POOL)] for k in range(4 + i % 3)})) + (65281,)
    shape = shape or SessionShape()
    if gap_mean is not None:
        shape.gap_mean = gap_mean
    return AppProfile(
        name=f"app{i:02d}",
        kind="tls",
        sni=f"app{i:02d}.example",
        cipher_suites=suites,
        extensions=exts,
        alpn=("h2", "http/1.1") if i % 2 == 0 else ("http/1.1",),
        unassigned_ext=60000 + i if i % 3 == 0 else None,
        app_data_len=120 + 8 * i,
        session=shape,
    )


def make_app_mix_spec(
    n_apps: int = 10,
    sessions_per_app: int = 200,
    seed: int = 0,
    intended_folds: int = 10,
    class_correlated_ips: bool = False,
    gmt_bias: bool = False,
) -> CorpusSpec:
    """Ambiguous-free mixed-protocol corpus: mostly TLS, some HTTP, some UDP."""
    apps: list[AppProfile] = []
    for i in range(n_apps):
        if i % 5 == 3:
            token = np.random.default_rng(7000 + i).bytes(12).hex()
            apps.append(
                AppProfile(
                    name=f"app{i:02d}",
                    kind="http",
                    http_host=f"cdn{i}.app{i:02d}.example",
                    http_user_agent=f"App{i:02d}Client/{i}.2 (build {i * 37})",
                    http_path=f"/api/v{i}/app{i:02d}/sync",
                    http_token=token,
                )
            )
        elif i % 5 == 4:
            magic = bytes([0xD0 + i % 16, i, 0x5A]) + np.random.default_rng(8000 + i).bytes(21)
            apps.append(AppProfile(name=f"app{i:02d}", kind="udp", udp_magic=magic))
        else:
            apps.append(_tls_profile(i))
    return CorpusSpec(
        apps=apps,
        sessions_per_app=sessions_per_app,
        seed=seed,
        intended_folds=intended_folds,
        class_correlated_ips=class_correlated_ips,
        gmt_bias=gmt_bias,
        corpus_id=f"app-mix-{n_apps}x{sessions_per_app}-s{seed}",
    )


DEFAULT_TEMPLATES = (
    ("analytics", "metrics.tracker.example"),
    ("ads", "serve.adnet.example"),
    ("search", "search.shared.example"),
    ("tcp-connect", "edge.shared.example"),
)


def make_association_spec(
    n_apps: int = 7,
    sessions_per_app: int = 60,
    seed: int = 0,
    n_ambiguous: int = 1,
    intended_folds: int = 1,
    n_templates: int = 4,
) -> CorpusSpec:
    """Source-app corpus: sessions are [ambiguous..., app flow] bursts.

    Ambiguous payloads are byte-identical across apps (template rotation is
    balanced), so single-flow source identification of them is chance; the
    per-app gap means make relative timing a usable association signal.
    """
    templates = [
        AmbiguousTemplate(name=name, sni=sni) for name, sni in DEFAULT_TEMPLATES[:n_templates]
    ]
    apps = []
    for i in range(n_apps):
        shape = SessionShape(n_ambiguous=n_ambiguous, gap_mean=0.25 + 0.12 * i, gap_sd=0.06)
        apps.append(_tls_profile(i, shape=shape))
    return CorpusSpec(
        apps=apps,
        templates=templates,
        sessions_per_app=sessions_per_app,
        seed=seed,
        intended_folds=intended_folds,
        corpus_id=f"assoc-{n_apps}x{sessions_per_app}xa{n_ambiguous}-s{seed}",
    )


SNI_WORDS = ("amber", "blaze", "coral", "dusty", "ember", "frost", "grove", "honey", "ivory", "jade0", "karst", "lunar")


def make_sni_only_spec(
    n_apps: int = 8,
    sessions_per_app: int = 50,
    seed: int = 0,
    intended_folds: int = 1,
) -> CorpusSpec:
    """All-TLS corpus whose only class-discriminative content is the SNI.

    Cipher lists, extension sets, lengths and every other field are shared;
    hostnames have equal length so even zero-padding boundaries match.
    """
    if n_apps > len(SNI_WORDS):
        raise ValueError(f"at most {len(SNI_WORDS)} sni-only apps")
    apps = [
        AppProfile(
            name=f"app{i:02d}",
            kind="tls",
            sni=f"{SNI_WORDS[i]}.sni-only.example",
            cipher_suites=(0xC02B, 0xC02F, 0x009E, 0x1301),
            extensions=(0, 10, 11, 13, 16, 65281),
            alpn=("h2",),
            unassigned_ext=None,
            include_certificate=False,
            app_data_len=48,
            session_id_len=0,
            fixed_filler=True,
            fixed_hello_randoms=True,
        )
        for i in range(n_apps)
    ]
    return CorpusSpec(
        apps=apps,
        sessions_per_app=sessions_per_app,
        seed=seed,
        intended_folds=intended_folds,
        corpus_id=f"sni-only-{n_apps}x{sessions_per_app}-s{seed}",
    )


PRESETS = {
    "app-mix": make_app_mix_spec,
    "association": make_association_spec,
    "sni-only": make_sni_only_spec,
}


def spec_from_config(config: dict) -> CorpusSpec:
    """Build a spec from the documented JSON config: {"preset": ..., params}."""
    config = dict(config)
    preset = config.pop("preset", "app-mix")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
    return PRESETS[preset](**config)


def spec_from_file(path: str | Path) -> CorpusSpec:
    return spec_from_config(json.loads(Path(path).read_text(encoding="utf-8")))


def corpus_stats(pcap_path: str | Path, labels_path: str | Path | None = None) -> dict:
    """Reassemble a capture and summarize its class/protocol distribution."""
    from .pipeline import extract

    result = extract(pcap_path, labels_path)
    ds = result.dataset
    n = len(ds)
    label_counts = {
        name: int((ds.y == i).sum()) for i, name in enumerate(ds.class_names)
    }
    true_counts = {
        name: int((ds.true_y == i).sum()) for i, name in enumerate(ds.true_class_names)
    }
    ambiguous = sum(
        count for name, count in true_counts.items() if name not in set(ds.class_names)
    )
    return {
        "flows": n,
        "packets": result.ingest_stats.parsed_packets,
        "labels": label_counts,
        "true_labels": true_counts,
        "udp_share": float(len(ds.slice_udp()) / n) if n else 0.0,
        "https_share": float(len(ds.slice_https()) / n) if n else 0.0,
        "http_share": float(len(ds.slice_http()) / n) if n else 0.0,
        "ambiguous_share": float(ambiguous / n) if n else 0.0,
    }
