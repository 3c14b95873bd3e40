"""Attack scenarios run against the simulator, each ending in a BLOCKED or SUCCEEDED verdict.

Verdicts are computed from what the simulation actually did: bytes recorded
at compromised nodes, outcomes returned by the utility, verdicts from the
authentication paths. Nothing here decides a verdict from configuration
alone.

The default topology is one utility, one collector and four meters, with M3
relaying for M4::

    U -- C1 -- M1
           \\-- M2
           \\-- M3 -- M4
"""

from __future__ import annotations

import enum
import inspect
import json
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from . import aead, bgkm, linkauth, meter, puf
from .errors import BadPassword, GridKeySimError, UnknownScenario
from .netsim import sim as S
from .netsim.topology import build_network
from .primitives import Drbg, seed_from

FEEDER_TOPOLOGY = {
    "utility": "U",
    "collectors": ["C1"],
    "meters": {"M1": {}, "M2": {}, "M3": {"relay": True}, "M4": {}},
    "links": [["U", "C1"], ["C1", "M1"], ["C1", "M2"], ["C1", "M3"], ["M3", "M4"]],
}

PASSWORD_DICTIONARY = ["00000000", "", "0", "12345678", "password", "admin", "11111111"]


class Outcome(enum.Enum):
    BLOCKED = "BLOCKED"
    SUCCEEDED = "SUCCEEDED"


@dataclass
class AttackReport:
    scenario_id: str
    mode: Dict[str, str]
    verdict: Outcome
    evidence: List[str] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)
    log: List[str] = field(default_factory=list, repr=False)

    @property
    def mode_text(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.mode.items()) or "-"

    def row(self) -> str:
        return f"{self.scenario_id}\t{self.mode_text}\t{self.verdict.value}"

    def record(self) -> str:
        return json.dumps(
            {
                "id": self.scenario_id,
                "mode": self.mode,
                "verdict": self.verdict.value,
                "evidence": self.evidence,
                "metadata": self.metadata,
            },
            sort_keys=True,
        )


def _verdict(succeeded: bool) -> Outcome:
    return Outcome.SUCCEEDED if succeeded else Outcome.BLOCKED


def _onoff(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("on", "true", "1", "yes"):
        return True
    if s in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {v!r}")


def _flag(v: bool) -> str:
    return "on" if v else "off"


def feeder_sim(seed=0, topology=None, enroll=True, **params) -> S.Simulation:
    p = S.SimParams(**params)
    sim = S.Simulation(build_network(topology or FEEDER_TOPOLOGY), p, seed_from(seed))
    if enroll:
        S.enroll_all(sim)
    return sim


def _reading(meter_id: str, n: int) -> bytes:
    return f"reading:{meter_id}:kwh={1000 + 37 * n}.{n % 10}".encode()


def _contains_any(blob: bytes, needles: Dict[str, bytes]) -> Optional[str]:
    for name, needle in needles.items():
        if needle and needle in blob:
            return name
    return None


# -- eavesdropping -------------------------------------------------------


def attack_eavesdrop_collector(seed=0, encryption=True) -> AttackReport:
    """Record everything C1 forwards, then look for readings, messages or keys in it."""
    encryption = _onoff(encryption)
    sim = feeder_sim(seed, encryption=encryption)
    secrets: Dict[str, bytes] = {}
    message = b"tariff-update:peak=0.31/kWh"
    secrets["broadcast"] = message
    S.broadcast(sim, None, message)
    if sim.group.key is not None:
        secrets["group_key"] = sim.group.key.value.to_bytes(16, "big")
        secrets["payload_key"] = bgkm.payload_key(sim.group.key)
    for i, mid in enumerate(sim.meters):
        reading = _reading(mid, i)
        secrets[f"reading:{mid}"] = reading
        S.report_uplink(sim, mid, reading)
        secrets[f"secret:{mid}"] = sim.group.secrets[mid].s
        secrets[f"uplink_key:{mid}"] = S.uplink_key(sim.group.secrets[mid].s, sim.meters[mid].counter)

    coll = sim.collectors["C1"]
    evidence = []
    for blob in coll.observed:
        hit = _contains_any(blob, secrets)
        if hit:
            evidence.append(f"C1 saw {hit}")
    # Traffic analysis: sender identities and volumes stay visible regardless.
    per_sender: Dict[str, int] = {}
    for blob in coll.observed:
        try:
            _, env = S.parse_packet(blob)
        except GridKeySimError:
            continue
        name = env.header.decode(errors="replace")
        per_sender[name] = per_sender.get(name, 0) + 1
    meta = {"frames_observed": len(coll.observed), "reports_by_sender": per_sender, "metadata_leak": True}
    return AttackReport("eavesdrop", {"encryption": _flag(encryption)}, _verdict(bool(evidence)),
                        evidence[:5], meta, sim.log_lines())


# -- replay and modification --------------------------------------------


def _captured_report(sim: S.Simulation, at: str, meter_id: str) -> bytes:
    header = meter_id.encode()
    for blob in reversed(sim.node(at).observed):
        try:
            _, env = S.parse_packet(blob)
        except GridKeySimError:
            continue
        if env.header == header:
            return blob
    raise LookupError(f"{at} never saw a report from {meter_id}")


def _flip_reading(packet: bytes) -> bytes:
    mode, env = S.parse_packet(packet)
    body = bytearray(env.ciphertext)
    body[-1] ^= 0x01
    return S.frame_packet(mode, aead.Envelope(env.nonce, env.header, bytes(body), env.tag))


def attack_replay_report(seed=0, counters=True, modified=False) -> AttackReport:
    """Capture M1's report at C1 and resend it, optionally with one bit changed."""
    counters, modified = _onoff(counters), _onoff(modified)
    sim = feeder_sim(seed, counters=counters)
    first = S.report_uplink(sim, "M1", _reading("M1", 1))
    packet = _captured_report(sim, "C1", "M1")
    if modified:
        packet = _flip_reading(packet)
    again = S.inject_uplink(sim, "C1", packet)
    evidence = [f"original={first}", f"resent={again}"]
    mode = {"counters": _flag(counters)}
    if modified:
        mode["modified"] = "on"
    return AttackReport("replay", mode, _verdict(first == "ACCEPTED" and again == "ACCEPTED"),
                        evidence, {}, sim.log_lines())


def attack_modify_report(seed=0, encryption=True) -> AttackReport:
    """Relay M3 rewrites M4's reading in transit."""
    encryption = _onoff(encryption)
    sim = feeder_sim(seed, encryption=encryption)
    original = _reading("M4", 4)
    forged = original.replace(b"kwh=1", b"kwh=9")
    sim.interceptors["M3"] = _flip_reading if encryption else (
        lambda p: p.replace(original, forged))
    outcome = S.report_uplink(sim, "M4", original)
    stored = [r for (m, _, r) in sim.utility.readings if m == "M4"]
    tampered = any(r != original for r in stored)
    return AttackReport("modify", {"encryption": _flag(encryption)}, _verdict(tampered),
                        [f"utility outcome={outcome}", f"stored={len(stored)}"], {}, sim.log_lines())


# -- masquerade ----------------------------------------------------------


def attack_spoof_meter(seed=0, clone_has_seed=False, replay=False, puf_mode="basic") -> AttackReport:
    """Something other than M1 answers M1's authentication challenge."""
    clone_has_seed, replay = _onoff(clone_has_seed), _onoff(replay)
    mode_enum = S.PufMode(puf_mode)
    sim = feeder_sim(seed, puf_mode=mode_enum)
    target = sim.meters["M1"]
    adversary = sim.adversary_rng
    label = b"M1:"

    if replay:
        # Pull the last reply C1 relayed for M1 during its genuine authentication.
        recorded = [b[len(b"AUTH-R") + len(label):] for b in sim.collectors["C1"].observed
                    if b.startswith(b"AUTH-R" + label)]
        reply = recorded[-1]
        responder = (lambda c: reply) if mode_enum is S.PufMode.BASIC else (lambda c, n: reply)
        evidence = [f"replayed {reply.hex()[:16]}..."]
    else:
        hidden = target.puf.hidden_seed if clone_has_seed else adversary.read(32)
        clone = puf.SimPuf("M1", hidden)
        responder = (puf.genuine_responder(clone) if mode_enum is S.PufMode.BASIC
                     else puf.genuine_hardened_responder(clone))
        evidence = ["clone built from the genuine seed" if clone_has_seed else "clone with guessed seed"]

    verdict = S.authenticate_meter(sim, "M1", responder=responder)
    evidence.append(f"utility verdict={verdict.value}")
    mode = {"puf_mode": mode_enum.value}
    if replay:
        mode["replay"] = "on"
    else:
        mode["clone_has_seed"] = _flag(clone_has_seed)
    return AttackReport("spoof", mode, _verdict(bool(verdict)), evidence, {}, sim.log_lines())


# -- revocation ----------------------------------------------------------


def attack_revoked_access(seed=0, backend="acp", secrecy="FORWARD", stale_pub=False) -> AttackReport:
    """M2 is revoked but keeps everything it had; can it read the next broadcast?"""
    backend = bgkm.Backend.parse(backend)
    secrecy = S.Secrecy.parse(secrecy)
    stale_pub = _onoff(stale_pub)
    sim = feeder_sim(seed, backend=backend)
    S.broadcast(sim, None, b"epoch-one notice")
    old_pub = sim.group.pub
    S.revoke_meter(sim, "M2", secrecy)
    secret_msg = b"post-revocation tariff"
    S.broadcast(sim, None, secret_msg)
    m2 = sim.meters["M2"]
    if stale_pub:
        data = sim.archive[-1]
        _, body = S.unpack_broadcast(data[1:])
        got = S._meter_open(sim, m2, old_pub, aead.Envelope.from_bytes(body))
    else:
        got = S.try_open_archived(sim, "M2", len(sim.archive) - 1)
    ok = got == secret_msg
    mode = {"backend": backend.name.lower(), "secrecy": secrecy.value}
    if stale_pub:
        mode["stale_pub"] = "on"
    evidence = [f"M2 recovered plaintext={ok}", f"epoch={sim.group.key.seq}"]
    return AttackReport("revoked", mode, _verdict(ok), evidence, {}, sim.log_lines())


# -- GPRS one-way authentication -----------------------------------------


def attack_fake_utility(seed=0, rounds=3) -> AttackReport:
    """A rogue base station sends RANDs to C1's SIM and keeps the SRES answers."""
    sim = feeder_sim(seed, link_auth=False)
    # Traffic that goes out before the link is authenticated.
    message = b"pre-auth broadcast"
    S.broadcast(sim, None, message)
    S.report_uplink(sim, "M1", _reading("M1", 7))
    link = sim.collectors["C1"].link
    plain = [p for d, k, p in link.transcript if k == "DATA_PLAINTEXT"]
    payload_exposed = any(message in p or _reading("M1", 7) in p for p in plain)

    rogue = Drbg(sim.adversary_rng.read(32))
    card = link.sim
    harvested = []
    for _ in range(rounds):
        rand = rogue.read(linkauth.RAND_BYTES)
        harvested.append((rand, linkauth.sim_response(card, rand)))
    valid = [r for r, sres in harvested if sres == sim.auc.expected_sres(card.imsi, r)]
    S.link_auth(sim, "C1")
    evidence = [f"valid RAND/SRES pairs harvested={len(valid)}/{rounds}",
                f"pre-auth plaintext frames={len(plain)}"]
    meta = {"preauth_plaintext_frames": len(plain), "payload": _verdict(payload_exposed).value}
    return AttackReport("fake_utility", {}, _verdict(bool(valid)), evidence, meta, sim.log_lines())


# -- physical access -----------------------------------------------------

LEGACY_TOPOLOGY = dict(FEEDER_TOPOLOGY, meters={"M1": {"legacy": True}, "M2": {}, "M3": {"relay": True}, "M4": {}})


def _rotate_passwords(board: meter.MeterBoard, rng: Drbg) -> List[str]:
    session = meter.login(board, meter.Level.L5, board.tables.passwords[4])
    fresh = [rng.read(8).hex() for _ in range(5)]
    meter.table_write(session, meter.PASSWORDS, fresh)
    return fresh


def attack_physical_dump(seed=0, target="M1", goal="login", legacy=False) -> AttackReport:
    """Open the meter case, dump board memory and the serial bus, and use what falls out."""
    legacy = _onoff(legacy)
    sim = feeder_sim(seed, topology=LEGACY_TOPOLOGY if legacy else None)
    m = sim.meters[target]
    _rotate_passwords(m.board, sim.rng)
    S.broadcast(sim, None, b"group notice")
    reading = _reading(target, 3)
    S.report_uplink(sim, target, reading)
    captured_up = _captured_report(sim, "C1", target)
    captured_bcast = sim.archive[-1]

    m.board.physical_access = True
    memory = json.loads(meter.physical_dump(m.board, meter.Surface.MEMORY))
    bus = meter.physical_dump(m.board, meter.Surface.SERIAL_BUS)
    at_rest = m.at_rest()
    evidence = [f"dumped tables {sorted(memory)}", f"serial frames={len(bus.splitlines()) if bus else 0}"]

    if goal == "login":
        pw = memory["42"][4]
        try:
            session = meter.login(m.board, meter.Level.L5, pw)
            meter.execute_command(session, "configure_device", hacked=True)
            ok = True
        except BadPassword:
            ok = False
        evidence.append(f"L5 login with dumped password: {ok}")
        return AttackReport("physical_dump", {"goal": goal, "legacy": _flag(legacy)}, _verdict(ok),
                            evidence, {}, sim.log_lines())

    # Candidate key material: everything hex-looking in the dump, bus and storage.
    candidates = []
    for k in memory["45"] + memory["extended_keys"]:
        candidates.append(bytes.fromhex(k))
    for line in bus.splitlines():
        candidates.append(bytes.fromhex(line.split(b"=", 1)[1].decode()))
    if at_rest["c0"]:
        candidates.append(bytes.fromhex(at_rest["c0"]))

    _, up_env = S.parse_packet(captured_up)
    _, counter = aead.split_nonce(up_env.nonce)
    pub_bytes, body = S.unpack_broadcast(captured_bcast[1:])
    pub = bgkm.PublicInfo.from_bytes(pub_bytes)
    recovered = None
    for cand in candidates:
        for key in (cand[:16], S.uplink_key(cand, counter)):
            if len(key) == 16 and aead.try_open(key, up_env) is not None:
                recovered = "uplink report"
        try:
            gk = bgkm.key_der(bgkm.MeterSecret(target, cand, m.modulus), pub, sim.params.security)
            if aead.try_open(bgkm.payload_key(gk), aead.Envelope.from_bytes(body)) is not None:
                recovered = recovered or "group broadcast"
        except GridKeySimError:
            pass
    evidence.append(f"candidates tried={len(candidates)}")
    evidence.append(f"decrypted={recovered}")
    return AttackReport("physical_dump", {"goal": goal, "legacy": _flag(legacy)}, _verdict(recovered is not None),
                        evidence, {}, sim.log_lines())


def attack_default_password(seed=0, rotated=False) -> AttackReport:
    """Walk a dictionary of factory passwords over the optical port."""
    rotated = _onoff(rotated)
    sim = feeder_sim(seed)
    board = sim.meters["M1"].board
    if rotated:
        _rotate_passwords(board, sim.rng)
    gained = meter.Level.L0
    for level in reversed(list(meter.Level)[1:]):
        for pw in PASSWORD_DICTIONARY:
            try:
                meter.login(board, level, pw, meter.Transport.OPTICAL)
            except BadPassword:
                continue
            gained = max(gained, level)
            break
        if gained:
            break
    l0 = meter.execute_command(meter.login(board, meter.Level.L0), "read_basic")
    meta = {"l0_read": bool(l0), "l0_expected": True}
    return AttackReport("default_password", {"rotated": _flag(rotated)}, _verdict(gained > meter.Level.L0),
                        [f"highest level obtained={gained.name}"], meta, sim.log_lines())


# -- denial of service and repudiation ------------------------------------


def attack_dos(seed=0, throttle=False) -> AttackReport:
    """Hold C1's sessions open, then see whether M1's report still gets through."""
    throttle = _onoff(throttle)
    sim = feeder_sim(seed, per_source_sessions=2 if throttle else None)
    granted = S.open_sessions(sim, "C1", "attacker", sim.params.session_cap)
    outcome = S.report_uplink(sim, "M1", _reading("M1", 2))
    return AttackReport("dos", {"throttle": _flag(throttle)}, _verdict(outcome == "DROPPED"),
                        [f"sessions granted={granted}", f"legit report={outcome}"], {}, sim.log_lines())


def attack_repudiation(seed=0, log_mac=True) -> AttackReport:
    """An insider rewrites one accepted report in the event log."""
    log_mac = _onoff(log_mac)
    sim = feeder_sim(seed, log_mac=log_mac)
    S.report_uplink(sim, "M2", _reading("M2", 5))
    lines = sim.log_lines()
    idx = max(i for i, l in enumerate(lines) if "\tREPORT\tACCEPTED" in l)
    forged = list(lines)
    forged[idx] = forged[idx].replace("ACCEPTED", "AUTH_FAILURE")
    if log_mac:
        bad = S.verify_audit_log(sim.audit_key, forged, sim.audit_macs)
        detected = bad is not None
    else:
        detected = False
    return AttackReport("repudiation", {"log_mac": _flag(log_mac)}, _verdict(not detected),
                        [f"edited line {idx}", f"detected={detected}"], {}, lines)


SCENARIOS: Dict[str, Callable[..., AttackReport]] = {
    "eavesdrop": attack_eavesdrop_collector,
    "replay": attack_replay_report,
    "modify": attack_modify_report,
    "spoof": attack_spoof_meter,
    "revoked": attack_revoked_access,
    "fake_utility": attack_fake_utility,
    "physical_dump": attack_physical_dump,
    "default_password": attack_default_password,
    "dos": attack_dos,
    "repudiation": attack_repudiation,
}

# One line per run: scenario id followed by its mode flags.
MANIFEST = """\
eavesdrop encryption=on
eavesdrop encryption=off
replay counters=on
replay counters=off
replay counters=on modified=on
replay counters=off modified=on
modify encryption=on
modify encryption=off
spoof clone_has_seed=off puf_mode=basic
spoof clone_has_seed=off puf_mode=hardened
spoof replay=on puf_mode=basic
spoof replay=on puf_mode=hardened
revoked backend=acp secrecy=FORWARD
revoked backend=lock secrecy=FORWARD
revoked backend=acp secrecy=NONE
revoked backend=lock secrecy=NONE
revoked backend=acp secrecy=FORWARD stale_pub=on
fake_utility
physical_dump goal=login legacy=off
physical_dump goal=decrypt legacy=on
physical_dump goal=decrypt legacy=off
default_password rotated=off
default_password rotated=on
dos throttle=off
dos throttle=on
repudiation log_mac=on
repudiation log_mac=off
"""


def parse_manifest(text: str) -> List[tuple]:
    runs = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sid, *flags = line.split()
        if sid not in SCENARIOS:
            raise UnknownScenario(f"unknown scenario {sid!r}")
        runs.append((sid, dict(f.split("=", 1) for f in flags)))
    return runs


def _accepts(sid: str, keys) -> bool:
    params = inspect.signature(SCENARIOS[sid]).parameters
    return all(k in params and k != "seed" for k in keys)


def run_suite(ids=None, seed=0, modes: Optional[Dict[str, str]] = None, manifest: str = MANIFEST) -> List[AttackReport]:
    """Run manifest entries, optionally only for ``ids``.

    ``modes`` overrides flags in every entry whose scenario accepts all of
    them; scenarios that do not take those flags are skipped.
    """
    wanted = list(ids) if ids else None
    for sid in wanted or []:
        if sid not in SCENARIOS:
            raise UnknownScenario(f"unknown scenario {sid!r}")
    runs = [(sid, m) for sid, m in parse_manifest(manifest) if wanted is None or sid in wanted]
    if modes:
        merged = []
        for sid, m in runs:
            if _accepts(sid, modes):
                entry = (sid, {**m, **modes})
                if entry not in merged:
                    merged.append(entry)
        if not merged:
            raise ValueError(f"no selected scenario takes {sorted(modes)}")
        runs = merged
    return [SCENARIOS[sid](seed=seed, **m) for sid, m in runs]
