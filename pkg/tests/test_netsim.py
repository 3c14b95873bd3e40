import json
import time
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from gridkeysim import bgkm, netsim
from gridkeysim.bgkm import Backend
from gridkeysim.errors import BadTopology, DuplicateMeter, ScenarioError, UnknownMeter
from gridkeysim.netsim import Secrecy, SimParams, Simulation
from gridkeysim.netsim import sim as S

ROOT = Path(__file__).resolve().parents[1]
FEEDER = {
    "utility": "U",
    "collectors": ["C1"],
    "meters": {"M1": {}, "M2": {}, "M3": {"relay": True}, "M4": {}, "M5": {}},
    "links": [["U", "C1"], ["C1", "M1"], ["C1", "M2"], ["C1", "M3"], ["M3", "M4"], ["M3", "M5"]],
}
FOUR = ["M1", "M2", "M3", "M4"]


def make(backend=Backend.ACP, seed=0, enroll=FOUR, **kw):
    sim = Simulation(netsim.build_network(FEEDER), SimParams(backend=backend, **kw), seed)
    for m in enroll:
        netsim.enroll_meter(sim, m)
    return sim


# -- topology ----------------------------------------------------------------


def test_feeder_topology_routes():
    t = netsim.build_network(FEEDER)
    assert t.uplink_route("M4") == ["M4", "M3", "C1", "U"]
    assert t.collector_of("M5") == "C1"
    assert sorted(t.meters) == ["M1", "M2", "M3", "M4", "M5"]


def test_disconnected_meter_rejected():
    cfg = dict(FEEDER, links=FEEDER["links"][:-1])
    with pytest.raises(BadTopology):
        netsim.build_network(cfg)


def test_meter_cannot_route_through_non_relay():
    cfg = json.loads(json.dumps(FEEDER))
    cfg["meters"]["M3"] = {}
    with pytest.raises(BadTopology):
        netsim.build_network(cfg)


def test_utility_links_only_to_collectors():
    cfg = dict(FEEDER, links=FEEDER["links"] + [["U", "M1"]])
    with pytest.raises(BadTopology):
        netsim.build_network(cfg)


def test_generated_512_tree_builds_fast():
    t0 = time.perf_counter()
    t = netsim.build_network({"generate": {"meters": 512, "collectors": 4, "fanout": 8}})
    assert time.perf_counter() - t0 < 1.0
    assert len(t.meters) == 512
    for m in t.meters[-3:]:
        assert t.uplink_route(m)[-1] == "U"


def test_link_removal_reroutes_over_mesh():
    cfg = json.loads(json.dumps(FEEDER))
    cfg["meters"]["M2"] = {"relay": True}
    cfg["links"].append(["M2", "M4", 3])
    sim = Simulation(netsim.build_network(cfg), SimParams(), 0)
    netsim.enroll_all(sim)
    sim.topology.remove_link("M3", "M4")
    sim.refresh_routes()
    assert sim.topology.uplink_route("M4") == ["M4", "M2", "C1", "U"]
    assert netsim.report_uplink(sim, "M4", b"after reroute") == "ACCEPTED"
    assert "M4" in netsim.broadcast(sim, None, b"x").delivered()


# -- enrollment ------------------------------------------------------------


def test_enroll_four_meters_fills_secret_table():
    sim = make()
    assert sorted(sim.group.secrets) == FOUR
    assert len(sim.crp) == 4
    assert sim.metrics.auth_accepts == 4 + 1  # four meters plus the GPRS link


def test_meter_stores_no_secret_at_rest():
    sim = make()
    for m in FOUR:
        stored = json.dumps(sim.meters[m].at_rest())
        secret = sim.group.secrets[m].s
        assert secret.hex() not in stored
        assert sim.meters[m].regenerate_secret() == secret


def test_reenrollment_rejected():
    sim = make()
    with pytest.raises(DuplicateMeter):
        netsim.enroll_meter(sim, "M1")
    with pytest.raises(UnknownMeter):
        netsim.enroll_meter(sim, "M99")


def test_install_channel_is_the_only_secret_crossing():
    sim = make(enroll=[])
    tapped = {}
    sim.install_tap = lambda mid, s: tapped.__setitem__(mid, s)
    netsim.enroll_all(sim)
    assert {m: s.s for m, s in sim.group.secrets.items()} == tapped


# -- broadcast -------------------------------------------------------------


@pytest.mark.parametrize("backend", list(Backend))
def test_all_members_decrypt_and_collector_fails(backend):
    sim = make(backend)
    r = netsim.broadcast(sim, None, b"tariff")
    assert sorted(r.delivered()) == FOUR
    assert r.outcomes["C1"] == "AUTH_FAILURE"
    assert r.outcomes["M5"] == "NO_STATE"
    assert all(sim.meters[m].received == [b"tariff"] for m in FOUR)


def test_empty_member_set_is_noop():
    sim = make()
    r = netsim.broadcast(sim, [], b"x")
    assert r.seq is None and not r.outcomes and sim.metrics.broadcasts == 0


def test_subset_broadcast_excludes_others():
    sim = make()
    r = netsim.broadcast(sim, ["M1", "M4"], b"subset")
    assert sorted(r.delivered()) == ["M1", "M4"]
    assert r.outcomes["M2"] == r.outcomes["M3"] == "AUTH_FAILURE"


def test_epoch_key_reused_for_same_members():
    sim = make()
    netsim.broadcast(sim, None, b"a")
    seq = sim.group.seq
    netsim.broadcast(sim, None, b"b")
    assert sim.group.seq == seq


# -- uplink ----------------------------------------------------------------


def test_report_accepted_and_relay_sees_only_ciphertext():
    sim = make()
    reading = b"kwh=88231.4"
    assert netsim.report_uplink(sim, "M4", reading) == "ACCEPTED"
    assert sim.utility.readings[-1] == ("M4", 1, reading)
    for hop in ("M3", "C1"):
        assert sim.node(hop).observed
        assert not any(reading in b for b in sim.node(hop).observed)


def test_duplicate_counter_rejected():
    sim = make()
    netsim.report_uplink(sim, "M1", b"r1")
    pkt = sim.collectors["C1"].observed[-1]
    assert netsim.inject_uplink(sim, "C1", pkt) == "REPLAY_REJECTED"
    assert sim.metrics.replays_rejected == 1


def test_revoked_meter_report_fails_auth():
    sim = make()
    netsim.revoke_meter(sim, "M2")
    assert netsim.report_uplink(sim, "M2", b"late") == "AUTH_FAILURE"


def test_uplink_key_definition():
    import oracles
    assert S.uplink_key(b"s" * 32, 5) == oracles.sha(b"\x04", b"s" * 32, (5).to_bytes(4, "big"))[:16]


def test_legacy_meter_uses_table45_and_leaks_on_serial_bus():
    cfg = json.loads(json.dumps(FEEDER))
    cfg["meters"]["M1"] = {"legacy": True}
    sim = Simulation(netsim.build_network(cfg), SimParams(), 0)
    netsim.enroll_all(sim)
    assert netsim.report_uplink(sim, "M1", b"legacy reading") == "ACCEPTED"
    assert sim.meters["M1"].board.serial_bus
    assert "M1" in netsim.broadcast(sim, None, b"x").delivered()


def test_session_cap_drops_reports():
    sim = make(session_cap=3)
    assert netsim.open_sessions(sim, "C1", "flood", 10) == 3
    assert netsim.report_uplink(sim, "M1", b"r") == "DROPPED"
    netsim.close_sessions(sim, "C1", "flood")
    assert netsim.report_uplink(sim, "M1", b"r") == "ACCEPTED"


def test_preauth_frames_are_plaintext():
    sim = make(link_auth=False)
    netsim.broadcast(sim, None, b"early")
    kinds = [k for _, k, _ in sim.collectors["C1"].link.transcript]
    assert "DATA_PLAINTEXT" in kinds
    netsim.link_auth(sim, "C1")
    netsim.broadcast(sim, None, b"later")
    assert sim.collectors["C1"].link.transcript[-1][1] == "DATA_CIPHERED"


# -- revoke / join -----------------------------------------------------------


@pytest.mark.parametrize("backend", list(Backend))
def test_revoke_forward_blocks_revoked_meter(backend):
    sim = make(backend)
    netsim.revoke_meter(sim, "M2", Secrecy.FORWARD)
    r = netsim.broadcast(sim, None, b"after")
    assert r.outcomes["M2"] == "AUTH_FAILURE"
    assert sorted(r.delivered()) == ["M1", "M3", "M4"]
    assert sim.metrics.meters_touched_per_rekey == [0]


def test_revoke_without_rekey_leaks():
    sim = make()
    netsim.broadcast(sim, None, b"before")
    netsim.revoke_meter(sim, "M2", Secrecy.NONE)
    netsim.broadcast(sim, None, b"after")
    assert netsim.try_open_archived(sim, "M2", 1) == b"after"
    assert sim.metrics.rekey_count == 0


def test_revoke_unknown():
    sim = make()
    with pytest.raises(UnknownMeter):
        netsim.revoke_meter(sim, "M5")


def test_join_backward_secrecy():
    sim = make()
    netsim.broadcast(sim, None, b"pre-join")
    netsim.join_meter(sim, "M5", Secrecy.BACKWARD)
    assert len(sim.group.secrets) == 5
    r = netsim.broadcast(sim, None, b"post-join")
    assert "M5" in r.delivered()
    assert netsim.try_open_archived(sim, "M5", 0) is None
    assert netsim.try_open_archived(sim, "M5", 1) == b"post-join"
    with pytest.raises(DuplicateMeter):
        netsim.join_meter(sim, "M5")


# -- whole-run properties -----------------------------------------------------


def scripted(seed, backend=Backend.ACP):
    sim = make(backend, seed)
    netsim.broadcast(sim, None, b"one")
    netsim.report_uplink(sim, "M4", b"r1")
    netsim.revoke_meter(sim, "M2")
    netsim.join_meter(sim, "M5")
    netsim.broadcast(sim, None, b"two")
    netsim.report_uplink(sim, "M5", b"r2")
    return sim


def test_same_seed_identical_logs():
    assert scripted(3).log_lines() == scripted(3).log_lines()


def test_backend_equivalence_of_outcomes():
    strip = lambda lines: [l.rsplit("\t", 1)[0] for l in lines]
    assert strip(scripted(0, Backend.ACP).log_lines()) == strip(scripted(0, Backend.LOCK).log_lines())


def test_log_line_format_and_audit_chain():
    sim = scripted(0)
    lines = sim.log_lines()
    for line in lines:
        tick, node, kind, outcome, size = line.split("\t")
        assert int(tick) >= 0 and int(size) >= 0
        assert kind in {"ENROLL", "AUTH", "BROADCAST", "REPORT", "REVOKE", "JOIN", "REKEY", "ATTACK"}
    ticks = [int(l.split("\t")[0]) for l in lines]
    assert ticks == sorted(ticks)
    assert netsim.verify_audit_log(sim.audit_key, lines, sim.audit_macs) is None
    forged = list(lines)
    forged[3] = forged[3].replace("OK", "KO")
    assert netsim.verify_audit_log(sim.audit_key, forged, sim.audit_macs) == 3


def test_metrics_are_key_value_and_monotone():
    sim = make()
    snapshots = []
    for i in range(3):
        netsim.broadcast(sim, None, b"m%d" % i)
        netsim.report_uplink(sim, "M1", b"r")
        snapshots.append(dict(sim.metrics.__dict__))
    for a, b in zip(snapshots, snapshots[1:]):
        for k, v in a.items():
            if isinstance(v, int):
                assert 0 <= v <= b[k]
    assert all("=" in line for line in sim.metrics.to_lines())
    assert sim.metrics.collector_secrets == 0


def test_end_to_end_plaintext_holders():
    sim = make()
    msg = b"demand response 18:00"
    r = netsim.broadcast(sim, ["M1", "M4"], msg)
    assert r.plaintext_holders == {"U", "M1", "M4"}
    reading = b"reading-M4-xyz"
    up = S.start_report(sim, "M4", reading)
    sim.drain(up)
    assert up.plaintext_holders == {"M4", "U"}
    for node_id in ["C1", "M2", "M3", "M5"]:
        node = sim.node(node_id)
        assert not any(msg in b or reading in b for b in node.observed)
        assert all(msg != x for x in getattr(node, "received", []))


def test_pubinfo_bytes_grow_linearly():
    from gridkeysim.cli import size_fit_r2
    sizes = []
    for n in (8, 64, 512):
        sim = Simulation(netsim.build_network({"generate": {"meters": n}}), SimParams(), 0)
        netsim.enroll_all(sim)
        sizes.append(netsim.broadcast(sim, None, b"x").pubinfo_bytes)
    assert sizes == [16 * (n + 1) + 26 for n in (8, 64, 512)]
    assert size_fit_r2([8, 64, 512], sizes) >= 0.999


def test_1024_meter_run_under_ten_seconds():
    t0 = time.perf_counter()
    sim = Simulation(netsim.build_network({"generate": {"meters": 1024, "collectors": 4, "fanout": 8}}),
                     SimParams(), 0)
    netsim.enroll_all(sim)
    r = netsim.broadcast(sim, None, b"all")
    netsim.revoke_meter(sim, "M0007")
    netsim.broadcast(sim, None, b"all but one")
    for m in ("M0001", "M1024"):
        assert netsim.report_uplink(sim, m, b"r") == "ACCEPTED"
    netsim.run(sim)
    assert len(r.delivered()) == 1024
    assert time.perf_counter() - t0 < 10


ops = st.lists(st.tuples(st.sampled_from(["revoke", "join"]), st.integers(0, 7)), min_size=1, max_size=6)


@settings(max_examples=25, deadline=None)
@given(ops, st.sampled_from(list(Backend)))
def test_rekey_locality_and_epoch_safety(script, backend):
    cfg = {"generate": {"meters": 8}}
    sim = Simulation(netsim.build_network(cfg), SimParams(backend=backend), 1)
    ids = list(sim.meters)
    for m in ids[:4]:
        netsim.enroll_meter(sim, m)
    membership = []
    netsim.broadcast(sim, None, b"epoch-0")
    membership.append(set(sim.group.secrets))
    for op, i in script:
        m = ids[i]
        before = {x: sim.meters[x].at_rest() for x in sim.group.secrets if x != m}
        if op == "revoke" and m in sim.group.secrets and len(sim.group.secrets) > 1:
            netsim.revoke_meter(sim, m, Secrecy.FORWARD)
        elif op == "join" and not sim.meters[m].installed:
            netsim.join_meter(sim, m, Secrecy.BACKWARD)
        else:
            continue
        for x, state in before.items():
            if x in sim.group.secrets:
                assert sim.meters[x].at_rest() == state
        netsim.broadcast(sim, None, b"epoch-%d" % len(membership))
        membership.append(set(sim.group.secrets))
    assert all(t == 0 for t in sim.metrics.meters_touched_per_rekey)
    for e, members in enumerate(membership):
        for m in ids:
            opened = netsim.try_open_archived(sim, m, e)
            assert (opened == b"epoch-%d" % e) == (m in members)


# -- scenarios ---------------------------------------------------------------


def test_feeder_scenario_passes_both_backends():
    for backend in ("acp", "lock"):
        sc = netsim.load_scenario(ROOT / "scenarios" / "feeder.json", backend)
        sim = netsim.run_scenario(sc, 0)
        assert sim.assertion_failures == []


def test_scenario_expectation_mismatch_is_recorded():
    doc = json.loads((ROOT / "scenarios" / "feeder.json").read_text())
    doc["events"][2]["expect"] = {"outcome": "REPLAY_REJECTED"}
    sim = netsim.run_scenario(netsim.parse_scenario(json.dumps(doc)))
    assert len(sim.assertion_failures) == 1 and "REPLAY_REJECTED" in sim.assertion_failures[0]


def test_scenario_parse_error_carries_line():
    text = '{\n  "topology": {},\n  "events": [\n    {"op": "enroll",}\n  ]\n}'
    with pytest.raises(ScenarioError) as exc:
        netsim.parse_scenario(text)
    assert exc.value.line == 4


def test_scenario_unknown_op_and_param():
    with pytest.raises(ScenarioError):
        netsim.parse_scenario('{"topology": {}, "events": [{"op": "explode"}]}')
    with pytest.raises(ScenarioError):
        netsim.parse_scenario('{"topology": {}, "params": {"warp": 9}, "events": []}')
    with pytest.raises(ScenarioError):
        netsim.parse_scenario('{"topology": {}, "params": {"backend": "rsa"}, "events": []}')


def test_toy_profile_scenario_runs():
    doc = json.loads((ROOT / "scenarios" / "feeder.json").read_text())
    doc["params"]["profile"] = "toy97"
    sim = netsim.run_scenario(netsim.parse_scenario(json.dumps(doc)))
    assert sim.params.security.field_prime == 97
