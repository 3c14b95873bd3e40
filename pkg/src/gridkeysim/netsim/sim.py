"""Deterministic discrete-event simulation of an AMI running BGKM over PUF meters.

Events sit in a heap ordered by ``(tick, insertion order)``. Broadcasts and
uplink reports travel hop by hop; every intermediate node keeps a copy of the
bytes it handled in ``observed`` so that attack scenarios and tests can
inspect exactly what a compromised router would see. Enrollment and PUF
authentication are atomic round trips, but their messages are still recorded
at every node along the route.
"""

from __future__ import annotations

import enum
import heapq
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set

from .. import aead, bgkm, linkauth, puf
from ..bgkm import Backend, MeterSecret, PublicInfo, SecurityParams
from ..errors import (
    AuthFailure,
    DuplicateMeter,
    GridKeySimError,
    UnknownMeter,
)
from ..linkauth import DOWNLINK, UPLINK, AuthCenter, GprsLink, SimCard
from ..meter import MeterBoard
from ..primitives import (
    TAG_AUDIT_LOG,
    TAG_UPLINK_KEY,
    Drbg,
    be32,
    seed_from,
    tagged_hash,
)
from .topology import NodeKind, NodeSpec, Topology

MODE_CLEAR = 0
MODE_SEALED = 1
BROADCAST_HEADER = b"BCAST"


class Secrecy(enum.Enum):
    FORWARD = "FORWARD"
    BACKWARD = "BACKWARD"
    NONE = "NONE"

    @classmethod
    def parse(cls, v) -> "Secrecy":
        return v if isinstance(v, Secrecy) else cls[str(v).upper()]


class PufMode(enum.Enum):
    BASIC = "basic"
    HARDENED = "hardened"


@dataclass
class SimParams:
    backend: Backend = Backend.ACP
    security: SecurityParams = field(default_factory=SecurityParams)
    iterations: int = puf.DEFAULT_ITERATIONS
    secrecy: Secrecy = Secrecy.FORWARD
    counters: bool = True
    encryption: bool = True
    puf_mode: PufMode = PufMode.BASIC
    session_cap: int = 10
    per_source_sessions: Optional[int] = None
    link_auth: bool = True
    log_mac: bool = True
    probe_collectors: bool = True


@dataclass
class SimMetrics:
    broadcasts: int = 0
    pubinfo_bytes: List[int] = field(default_factory=list)
    rekey_count: int = 0
    meters_touched_per_rekey: List[int] = field(default_factory=list)
    auth_accepts: int = 0
    auth_rejects: int = 0
    envelopes_rejected: int = 0
    reports_accepted: int = 0
    replays_rejected: int = 0
    reports_dropped: int = 0
    # Collectors never hold BGKM secrets in this design.
    collector_secrets: int = 0

    def to_lines(self) -> List[str]:
        out = []
        for name, value in self.__dict__.items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            out.append(f"{name}={value}")
        return out


@dataclass(frozen=True)
class LogEntry:
    tick: int
    node: str
    kind: str
    outcome: str
    size: int

    def line(self) -> str:
        return f"{self.tick}\t{self.node}\t{self.kind}\t{self.outcome}\t{self.size}"


@dataclass
class DeliveryReport:
    seq: Optional[int]
    members: tuple
    outcomes: Dict[str, str] = field(default_factory=dict)
    pubinfo_bytes: int = 0
    packet_bytes: int = 0
    pending: int = 0
    plaintext_holders: Set[str] = field(default_factory=set)
    on_complete: Optional[Callable] = field(default=None, repr=False)

    def delivered(self) -> List[str]:
        return [n for n, o in self.outcomes.items() if o == "OK"]


@dataclass
class UplinkReport:
    meter_id: str
    counter: int
    outcome: Optional[str] = None
    packet: bytes = b""
    pending: int = 1
    plaintext_holders: Set[str] = field(default_factory=set)
    on_complete: Optional[Callable] = field(default=None, repr=False)


class MeterNode:
    def __init__(self, spec: NodeSpec, device: puf.SimPuf, board: MeterBoard):
        self.spec = spec
        self.puf = device
        self.board = board
        self.c0: Optional[bytes] = None
        self.iterations: Optional[int] = None
        self.modulus: Optional[int] = None
        self.counter = 0
        self.installed = False
        self.authenticated = False
        self.pubs: Dict[int, PublicInfo] = {}
        self.received: List[bytes] = []
        self.observed: List[bytes] = []

    @property
    def meter_id(self) -> str:
        return self.spec.node_id

    def regenerate_secret(self) -> bytes:
        if self.spec.legacy:
            return self.board.tables.extended_keys[0]
        return puf.secret_gen_feedback(self.puf, self.c0, self.iterations)

    def meter_secret(self) -> MeterSecret:
        return MeterSecret(self.meter_id, self.regenerate_secret(), self.modulus)

    def at_rest(self) -> dict:
        """Everything the meter keeps in storage between operations."""
        return {
            "c0": self.c0.hex() if self.c0 else None,
            "iterations": self.iterations,
            "modulus": self.modulus,
            "counter": self.counter,
            "tables": self.board.tables.to_json(),
        }


class CollectorNode:
    def __init__(self, spec: NodeSpec, link: GprsLink):
        self.spec = spec
        self.link = link
        self.observed: List[bytes] = []
        self.sessions: Dict[str, int] = {}

    @property
    def open_sessions(self) -> int:
        return sum(self.sessions.values())


class UtilityNode:
    def __init__(self, spec: NodeSpec):
        self.spec = spec
        self.high_water: Dict[str, int] = {}
        self.readings: List[tuple] = []
        self.legacy_keys: Dict[str, bytes] = {}
        self.observed: List[bytes] = []


class Simulation:
    def __init__(self, topology: Topology, params: Optional[SimParams] = None, seed=0):
        self.topology = topology
        self.params = params or SimParams()
        self.seed = seed_from(seed)
        master = Drbg(self.seed)
        self.group = bgkm.setup(self.params.security, master.read(32), self.params.backend)
        self.auc = AuthCenter(master.fork())
        self.rng = master.fork()
        self.adversary_rng = master.fork()
        self.audit_key = master.read(32)
        self.crp = puf.CrpStore()

        self.utility = UtilityNode(topology.nodes[topology.utility])
        self.meters: Dict[str, MeterNode] = {}
        self.collectors: Dict[str, CollectorNode] = {}
        self._by_index: Dict[int, str] = {}
        for node_id, spec in topology.nodes.items():
            self._by_index[spec.index] = node_id
            if spec.kind is NodeKind.METER:
                device = puf.SimPuf(node_id, master.read(32))
                self.meters[node_id] = MeterNode(spec, device, MeterBoard(node_id))
            elif spec.kind is NodeKind.COLLECTOR:
                card = SimCard(f"001010{spec.index:09d}", master.read(16), pin="1234")
                card.unlock("1234")
                self.auc.register(card.imsi, card.ki)
                self.collectors[node_id] = CollectorNode(spec, GprsLink(card, self.auc))

        self.now = 0
        self._queue: list = []
        self._order = 0
        self.log: List[LogEntry] = []
        self.audit_macs: List[bytes] = []
        self._audit_prev = bytes(16)
        self.metrics = SimMetrics()
        self.epoch_members: frozenset = frozenset()
        self.pending_rekey = False
        self.archive: List[bytes] = []
        self._bcast_counter = 0
        self._children = topology.children()
        self.install_tap: Optional[Callable[[str, bytes], None]] = None
        # node id -> fn(bytes) -> bytes, applied to uplink traffic in transit
        self.interceptors: Dict[str, Callable[[bytes], bytes]] = {}
        self.assertion_failures: List[str] = []

        if self.params.link_auth:
            for c in self.collectors:
                link_auth(self, c)

    # -- plumbing -------------------------------------------------------

    def node(self, node_id: str):
        if node_id in self.meters:
            return self.meters[node_id]
        if node_id in self.collectors:
            return self.collectors[node_id]
        if node_id == self.topology.utility:
            return self.utility
        raise UnknownMeter(f"no node {node_id}")

    def meter(self, meter_id: str) -> MeterNode:
        try:
            return self.meters[meter_id]
        except KeyError:
            raise UnknownMeter(f"no meter {meter_id}") from None

    def kind(self, node_id: str) -> NodeKind:
        return self.topology.nodes[node_id].kind

    def schedule(self, delay: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (self.now + delay, self._order, fn, args))
        self._order += 1

    def schedule_at(self, tick: int, fn: Callable, *args) -> None:
        heapq.heappush(self._queue, (tick, self._order, fn, args))
        self._order += 1

    def step(self) -> None:
        tick, _, fn, args = heapq.heappop(self._queue)
        self.now = max(self.now, tick)
        fn(*args)

    def drain(self, report) -> None:
        while report.pending and self._queue:
            self.step()

    def record(self, node: str, kind: str, outcome: str, size: int = 0) -> None:
        entry = LogEntry(self.now, node, kind, outcome, size)
        self.log.append(entry)
        if self.params.log_mac:
            mac = audit_mac(self.audit_key, self._audit_prev, entry.line())
            self.audit_macs.append(mac)
            self._audit_prev = mac

    def log_lines(self) -> List[str]:
        return [e.line() for e in self.log]

    def refresh_routes(self) -> None:
        self._children = self.topology.children()

    def enrolled(self) -> List[str]:
        return list(self.group.secrets)

    def observe(self, node_id: str, data: bytes) -> None:
        self.node(node_id).observed.append(bytes(data))

    def _hop(self, a: str, b: str, data: bytes, then: Callable[[bytes], None]) -> None:
        """Move ``data`` across one link; collector <-> utility goes over GPRS."""
        delay = self.topology.delay(a, b)
        kinds = {self.kind(a), self.kind(b)}
        if kinds == {NodeKind.COLLECTOR, NodeKind.UTILITY}:
            coll = self.collectors[a if self.kind(a) is NodeKind.COLLECTOR else b]
            direction = UPLINK if self.kind(a) is NodeKind.COLLECTOR else DOWNLINK
            frame = coll.link.send(direction, data)
            self.schedule(delay, lambda: then(coll.link.receive(frame)))
        else:
            self.schedule(delay, then, data)

    def send_path(self, path: List[str], data: bytes, deliver, on_drop=None, session_source=None) -> None:
        def arrive(i, payload):
            node_id = path[i]
            if i == len(path) - 1:
                deliver(payload)
                return
            if i > 0:
                self.observe(node_id, payload)
                if node_id in self.interceptors:
                    payload = self.interceptors[node_id](payload)
                if session_source is not None and node_id in self.collectors:
                    if self.collectors[node_id].open_sessions >= self.params.session_cap:
                        self.record(node_id, "REPORT", "DROPPED", len(payload))
                        self.metrics.reports_dropped += 1
                        if on_drop:
                            on_drop()
                        return
            self._hop(node_id, path[i + 1], payload, lambda p: arrive(i + 1, p))

        arrive(0, data)

    def route_delay(self, path: List[str]) -> int:
        return sum(self.topology.delay(a, b) for a, b in zip(path, path[1:]))


def audit_mac(key: bytes, prev: bytes, line: str) -> bytes:
    return tagged_hash(TAG_AUDIT_LOG, key, prev, line.encode())[:16]


def verify_audit_log(key: bytes, lines: List[str], macs: List[bytes]) -> Optional[int]:
    """Index of the first line whose chained MAC fails, or None if intact."""
    if len(lines) != len(macs):
        return min(len(lines), len(macs))
    prev = bytes(16)
    for i, (line, mac) in enumerate(zip(lines, macs)):
        if audit_mac(key, prev, line) != mac:
            return i
        prev = mac
    return None


def uplink_key(secret: bytes, counter: int) -> bytes:
    return tagged_hash(TAG_UPLINK_KEY, secret, be32(counter))[:16]


def frame_packet(mode: int, env: aead.Envelope) -> bytes:
    return bytes([mode]) + env.to_bytes()


def parse_packet(data: bytes):
    if not data:
        raise AuthFailure("empty packet")
    return data[0], aead.Envelope.from_bytes(data[1:])


def pack_broadcast(pub_bytes: bytes, env_bytes: bytes) -> bytes:
    return struct.pack(">I", len(pub_bytes)) + pub_bytes + env_bytes


def unpack_broadcast(data: bytes):
    (n,) = struct.unpack_from(">I", data)
    return data[4:4 + n], data[4 + n:]


# -- operations -----------------------------------------------------------


def link_auth(sim: Simulation, collector_id: str, responder=None) -> puf.Verdict:
    """GPRS authentication of a collector's SIM against the utility's AuC."""
    coll = sim.collectors[collector_id]
    verdict = coll.link.authenticate(responder)
    sim.record(collector_id, "AUTH", "GPRS_" + verdict.value, linkauth.RAND_BYTES + linkauth.SRES_BYTES)
    if verdict:
        sim.metrics.auth_accepts += 1
    else:
        sim.metrics.auth_rejects += 1
    return verdict


def enroll_meter(sim: Simulation, meter_id: str) -> str:
    """Installation-time enrollment: CRP, feedback secret, and registration."""
    m = sim.meter(meter_id)
    if m.installed or meter_id in sim.group.secrets or meter_id in sim.crp:
        raise DuplicateMeter(f"{meter_id} already enrolled")
    crp = puf.enroll(m.puf, sim.crp, sim.rng)
    if m.spec.legacy:
        sec = install_secret(sim, meter_id, None)
        static_key = sim.rng.read(16)
        m.board.tables.keys = [static_key]
        m.board.tables.extended_keys = [sec.s]
        sim.utility.legacy_keys[meter_id] = static_key
    else:
        m.c0 = sim.rng.read(16)
        m.iterations = sim.params.iterations
        sec = install_secret(sim, meter_id, m.regenerate_secret())
    m.modulus = sec.crt_modulus
    m.installed = True
    sim.record(meter_id, "ENROLL", "OK", len(crp.to_bytes()))
    authenticate_meter(sim, meter_id)
    return "OK"


def install_secret(sim: Simulation, meter_id: str, secret: Optional[bytes]) -> MeterSecret:
    """The trusted installation channel: the one place a meter secret crosses to the utility."""
    sec = bgkm.sec_gen(sim.group, meter_id, secret)
    if sim.install_tap is not None:
        sim.install_tap(meter_id, sec.s)
    return sec


def authenticate_meter(sim: Simulation, meter_id: str, responder=None, mode=None) -> puf.Verdict:
    """PUF challenge-response over the meter's route.

    ``responder`` stands in for whatever answers at the meter's position
    (a clone, a replaying attacker). Challenge and reply bytes are recorded
    at every intermediate node.
    """
    m = sim.meter(meter_id)
    mode = PufMode(mode or sim.params.puf_mode)
    path = sim.topology.uplink_route(meter_id)
    transit = path[1:-1]

    label = meter_id.encode() + b":"

    def seen(tag: bytes, *parts: bytes) -> None:
        for hop in transit:
            sim.observe(hop, tag + label + b"".join(parts))

    if mode is PufMode.BASIC:
        inner = responder or puf.genuine_responder(m.puf)

        def relay(challenge):
            seen(b"AUTH-C", challenge)
            reply = inner(challenge)
            seen(b"AUTH-R", reply)
            return reply

        verdict = puf.authenticate(sim.crp, meter_id, relay)
    else:
        inner = responder or puf.genuine_hardened_responder(m.puf)

        def relay(challenge, nonce):
            seen(b"AUTH-C", challenge, nonce)
            reply = inner(challenge, nonce)
            seen(b"AUTH-R", reply)
            return reply

        verdict = puf.authenticate_hardened(sim.crp, meter_id, relay, sim.rng)

    sim.record(meter_id, "AUTH", verdict.value, 32)
    if verdict:
        sim.metrics.auth_accepts += 1
        if responder is None:
            m.authenticated = True
    else:
        sim.metrics.auth_rejects += 1
    return verdict


def _epoch(sim: Simulation, members) -> tuple:
    g = sim.group
    if g.key is None or sim.pending_rekey or frozenset(members) != sim.epoch_members:
        _, pub = bgkm.key_gen(g, members)
        sim.epoch_members = frozenset(members)
        sim.pending_rekey = False
        sim.record(sim.topology.utility, "REKEY", f"EPOCH{pub.seq}", len(pub.to_bytes()))
    return g.key, g.pub


def _meter_open(sim: Simulation, m: MeterNode, pub: PublicInfo, env: aead.Envelope) -> Optional[bytes]:
    try:
        key = bgkm.key_der(m.meter_secret(), pub, sim.params.security)
        return aead.open_envelope(bgkm.payload_key(key), env)
    except GridKeySimError:
        return None


def start_broadcast(sim: Simulation, member_set, message: bytes) -> DeliveryReport:
    members = list(sim.group.secrets) if member_set is None else list(member_set)
    if not members:
        report = DeliveryReport(None, ())
        sim.record(sim.topology.utility, "BROADCAST", "NOOP", 0)
        return report
    message = bytes(message)
    sim._bcast_counter += 1
    nonce = aead.make_nonce(sim.utility.spec.index, sim._bcast_counter)
    if sim.params.encryption:
        key, pub = _epoch(sim, members)
        pub_bytes = pub.to_bytes()
        env = aead.seal(bgkm.payload_key(key), nonce, BROADCAST_HEADER + be32(pub.seq), message)
        packet = bytes([MODE_SEALED]) + pack_broadcast(pub_bytes, env.to_bytes())
        seq = pub.seq
    else:
        pub_bytes = b""
        packet = bytes([MODE_CLEAR]) + pack_broadcast(b"", message)
        seq = None
    report = DeliveryReport(seq, tuple(members), pubinfo_bytes=len(pub_bytes), packet_bytes=len(packet))
    report.plaintext_holders.add(sim.topology.utility)
    sim.metrics.broadcasts += 1
    sim.metrics.pubinfo_bytes.append(len(pub_bytes))
    sim.archive.append(packet)
    sim.record(sim.topology.utility, "BROADCAST", f"SENT{len(members)}", len(packet))

    def finish_one():
        report.pending -= 1
        if report.pending == 0 and report.on_complete:
            report.on_complete(report)

    def receive(node_id: str, data: bytes):
        kind = sim.kind(node_id)
        if kind is NodeKind.COLLECTOR:
            sim.observe(node_id, data)
            outcome = _collector_probe(sim, data) if sim.params.probe_collectors else "FORWARDED"
            report.outcomes[node_id] = outcome
            sim.record(node_id, "BROADCAST", outcome, len(data))
        else:
            m = sim.meters[node_id]
            if sim.topology.nodes[node_id].relay:
                sim.observe(node_id, data)
            outcome = _meter_receive(sim, m, data, report)
            report.outcomes[node_id] = outcome
            sim.record(node_id, "BROADCAST", outcome, len(data))
            finish_one()
        for child in sim._children[node_id]:
            sim._hop(node_id, child, data, lambda p, c=child: receive(c, p))

    report.pending = len(sim.meters)
    for child in sim._children[sim.topology.utility]:
        sim._hop(sim.topology.utility, child, packet, lambda p, c=child: receive(c, p))
    return report


def _meter_receive(sim: Simulation, m: MeterNode, data: bytes, report: DeliveryReport) -> str:
    if not m.installed:
        return "NO_STATE"
    mode = data[0]
    pub_bytes, body = unpack_broadcast(data[1:])
    if mode == MODE_CLEAR:
        m.received.append(body)
        report.plaintext_holders.add(m.meter_id)
        return "OK"
    pub = PublicInfo.from_bytes(pub_bytes)
    m.pubs[pub.seq] = pub
    plaintext = _meter_open(sim, m, pub, aead.Envelope.from_bytes(body))
    if plaintext is None:
        sim.metrics.envelopes_rejected += 1
        return "AUTH_FAILURE"
    m.received.append(plaintext)
    report.plaintext_holders.add(m.meter_id)
    return "OK"


def _collector_probe(sim: Simulation, data: bytes) -> str:
    """A collector has no secret; the best it can do is guess one."""
    if data[0] == MODE_CLEAR:
        return "PLAINTEXT_VISIBLE"
    pub_bytes, body = unpack_broadcast(data[1:])
    pub = PublicInfo.from_bytes(pub_bytes)
    if pub.backend is Backend.ACP:
        guess = MeterSecret("collector", sim.adversary_rng.read(32))
        key = bgkm.key_der(guess, pub, sim.params.security)
    else:
        key = bgkm.GroupKey(sim.adversary_rng.read(sim.params.security.key_bytes), pub.seq)
    if aead.try_open(bgkm.payload_key(key), aead.Envelope.from_bytes(body)) is None:
        sim.metrics.envelopes_rejected += 1
        return "AUTH_FAILURE"
    return "OK"


def broadcast(sim: Simulation, member_set, message: bytes) -> DeliveryReport:
    report = start_broadcast(sim, member_set, message)
    sim.drain(report)
    return report


def start_report(sim: Simulation, meter_id: str, reading) -> UplinkReport:
    m = sim.meter(meter_id)
    if not m.installed:
        raise UnknownMeter(f"{meter_id} is not enrolled")
    m.counter += 1
    plaintext = reading if isinstance(reading, bytes) else str(reading).encode()
    nonce = aead.make_nonce(m.spec.index, m.counter)
    header = meter_id.encode()
    if sim.params.encryption:
        if m.spec.legacy:
            key = m.board.fetch_key(0)
        else:
            key = uplink_key(m.regenerate_secret(), m.counter)
        packet = frame_packet(MODE_SEALED, aead.seal(key, nonce, header, plaintext))
    else:
        packet = frame_packet(MODE_CLEAR, aead.Envelope(nonce, header, plaintext, bytes(16)))
    report = UplinkReport(meter_id, m.counter, packet=packet)
    report.plaintext_holders.add(meter_id)
    path = sim.topology.uplink_route(meter_id)

    def dropped():
        report.outcome = "DROPPED"
        report.pending = 0
        if report.on_complete:
            report.on_complete(report)

    def deliver(data):
        report.outcome = utility_receive(sim, data, report)
        report.pending = 0
        if report.on_complete:
            report.on_complete(report)

    sim.send_path(path, packet, deliver, on_drop=dropped, session_source=meter_id)
    return report


def utility_receive(sim: Simulation, data: bytes, report: Optional[UplinkReport] = None) -> str:
    """Utility-side processing of one uplink packet: MAC, then replay window."""
    u = sim.topology.utility
    sim.utility.observed.append(bytes(data))
    try:
        mode, env = parse_packet(data)
        sender_index, counter = aead.split_nonce(env.nonce)
        meter_id = sim._by_index.get(sender_index)
        if meter_id is None or meter_id not in sim.meters:
            raise AuthFailure("unknown sender")
        if mode == MODE_SEALED:
            if meter_id in sim.utility.legacy_keys and meter_id in sim.group.secrets:
                key = sim.utility.legacy_keys[meter_id]
            elif meter_id in sim.group.secrets:
                key = uplink_key(sim.group.secrets[meter_id].s, counter)
            else:
                raise AuthFailure(f"{meter_id} holds no valid secret")
            plaintext = aead.open_envelope(key, env)
        elif mode == MODE_CLEAR and not sim.params.encryption:
            plaintext = env.ciphertext
        else:
            raise AuthFailure("unexpected packet mode")
    except AuthFailure:
        sim.metrics.envelopes_rejected += 1
        sim.record(u, "REPORT", "AUTH_FAILURE", len(data))
        return "AUTH_FAILURE"

    if sim.params.counters:
        if counter <= sim.utility.high_water.get(meter_id, 0):
            sim.metrics.replays_rejected += 1
            sim.record(u, "REPORT", "REPLAY_REJECTED", len(data))
            return "REPLAY_REJECTED"
        sim.utility.high_water[meter_id] = counter
    sim.utility.readings.append((meter_id, counter, plaintext))
    if report is not None:
        report.plaintext_holders.add(u)
    sim.metrics.reports_accepted += 1
    sim.record(u, "REPORT", "ACCEPTED", len(data))
    return "ACCEPTED"


def report_uplink(sim: Simulation, meter_id: str, reading) -> str:
    report = start_report(sim, meter_id, reading)
    sim.drain(report)
    return report.outcome


def inject_uplink(sim: Simulation, collector_id: str, packet: bytes) -> str:
    """Push raw bytes from a collector's position up to the utility."""
    report = UplinkReport("?", 0, packet=packet)

    def deliver(data):
        report.outcome = utility_receive(sim, data)
        report.pending = 0

    sim.send_path([collector_id, sim.topology.utility], packet, deliver)
    sim.drain(report)
    return report.outcome


def open_sessions(sim: Simulation, collector_id: str, source: str, count: int) -> int:
    """Hold ``count`` sessions open at a collector; returns how many it granted."""
    coll = sim.collectors[collector_id]
    granted = 0
    for _ in range(count):
        if coll.open_sessions >= sim.params.session_cap:
            break
        limit = sim.params.per_source_sessions
        if limit is not None and coll.sessions.get(source, 0) >= limit:
            break
        coll.sessions[source] = coll.sessions.get(source, 0) + 1
        granted += 1
    sim.record(collector_id, "ATTACK", f"SESSIONS{granted}", count)
    return granted


def close_sessions(sim: Simulation, collector_id: str, source: str) -> None:
    sim.collectors[collector_id].sessions.pop(source, None)


def _retained_snapshot(sim: Simulation, keep) -> Dict[str, dict]:
    return {mid: sim.meters[mid].at_rest() for mid in keep if mid in sim.meters}


def rekey(sim: Simulation, member_set=None) -> Optional[PublicInfo]:
    members = list(sim.group.secrets) if member_set is None else list(member_set)
    if not members:
        sim.group.key, sim.group.pub, sim.group.members = None, None, ()
        sim.epoch_members = frozenset()
        return None
    before = _retained_snapshot(sim, members)
    _, pub = bgkm.re_key(sim.group, members)
    after = _retained_snapshot(sim, members)
    touched = sum(1 for mid in before if before[mid] != after[mid])
    sim.epoch_members = frozenset(members)
    sim.pending_rekey = False
    sim.metrics.rekey_count += 1
    sim.metrics.meters_touched_per_rekey.append(touched)
    sim.record(sim.topology.utility, "REKEY", f"EPOCH{pub.seq}", len(pub.to_bytes()))
    return pub


def revoke_meter(sim: Simulation, meter_id: str, secrecy=None) -> str:
    secrecy = Secrecy.parse(secrecy or sim.params.secrecy)
    if meter_id not in sim.group.secrets:
        raise UnknownMeter(f"{meter_id} is not enrolled")
    bgkm.remove_member(sim.group, meter_id)
    sim.crp.remove(meter_id)
    sim.epoch_members = sim.epoch_members - {meter_id}
    sim.record(meter_id, "REVOKE", secrecy.value, 0)
    if secrecy is not Secrecy.NONE:
        rekey(sim)
    return "OK"


def join_meter(sim: Simulation, meter_id: str, secrecy=None) -> str:
    secrecy = Secrecy.parse(secrecy or sim.params.secrecy)
    enroll_meter(sim, meter_id)
    sim.record(meter_id, "JOIN", secrecy.value, 0)
    if secrecy is not Secrecy.NONE:
        rekey(sim)
    return "OK"


def try_open_archived(sim: Simulation, meter_id: str, index: int) -> Optional[bytes]:
    """Let a meter attempt an archived broadcast with whatever it holds now."""
    m = sim.meter(meter_id)
    data = sim.archive[index]
    if not m.installed:
        return None
    pub_bytes, body = unpack_broadcast(data[1:])
    if data[0] == MODE_CLEAR:
        return body
    return _meter_open(sim, m, PublicInfo.from_bytes(pub_bytes), aead.Envelope.from_bytes(body))


@dataclass
class RunResult:
    metrics: SimMetrics
    log: List[str]
    assertion_failures: List[str]


def run(sim: Simulation, until_tick: Optional[int] = None) -> RunResult:
    while sim._queue and (until_tick is None or sim._queue[0][0] <= until_tick):
        sim.step()
    if until_tick is not None:
        sim.now = max(sim.now, until_tick)
    return RunResult(sim.metrics, sim.log_lines(), list(sim.assertion_failures))


def enroll_all(sim: Simulation) -> None:
    for mid in sim.meters:
        if not sim.meters[mid].installed:
            enroll_meter(sim, mid)
