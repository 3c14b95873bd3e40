"""JSON scenario files: a topology, simulation parameters and timed events.

::

    {
      "id": "feeder",
      "topology": {...},                       # see build_network
      "params": {"backend": "acp", "profile": "mersenne127", "iterations": 8,
                 "secrecy": "FORWARD", "counters": true},
      "events": [
        {"tick": 0, "op": "enroll_all"},
        {"tick": 5, "op": "broadcast", "args": {"message": "tariff"},
         "expect": {"delivered": ["M1", "M2", "M3", "M4"]}}
      ],
      "expect_metrics": {"rekey_count": 0}
    }

Each ``expect`` is checked after its event; mismatches are collected as
assertion failures rather than raised, so a run always produces a full log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..bgkm import Backend, SecurityParams
from ..errors import GridKeySimError, ScenarioError
from ..primitives import seed_from
from . import sim as S
from .topology import build_network

PROFILES = {
    "mersenne127": SecurityParams(),
    "toy97": SecurityParams.toy(97),
}


@dataclass
class Event:
    tick: int
    op: str
    args: Dict[str, Any] = field(default_factory=dict)
    expect: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Scenario:
    scenario_id: str
    topology: dict
    params: S.SimParams
    events: List[Event]
    expect_metrics: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None


def _line_of(text: str, needle: str) -> Optional[int]:
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def parse_params(raw: dict, backend_override=None) -> S.SimParams:
    raw = dict(raw or {})
    try:
        profile = raw.pop("profile", "mersenne127")
        if profile not in PROFILES:
            raise ScenarioError(f"unknown profile {profile!r}")
        backend = Backend.parse(backend_override or raw.pop("backend", "acp"))
        raw.pop("backend", None)
        raw.pop("seed", None)
        p = S.SimParams(backend=backend, security=PROFILES[profile])
        for key, value in raw.items():
            if not hasattr(p, key):
                raise ScenarioError(f"unknown parameter {key!r}")
            if key == "secrecy":
                value = S.Secrecy.parse(value)
            elif key == "puf_mode":
                value = S.PufMode(value)
            setattr(p, key, value)
    except (ValueError, KeyError) as exc:
        raise ScenarioError(str(exc)) from None
    return p


def parse_scenario(text: str, backend=None) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object", line=1)
    for section in ("topology", "events"):
        if section not in doc:
            raise ScenarioError(f"missing section {section!r}")
    params = parse_params(doc.get("params"), backend)
    events = []
    for i, ev in enumerate(doc["events"]):
        if not isinstance(ev, dict) or "op" not in ev:
            raise ScenarioError(f"event {i} needs an 'op'", line=_line_of(text, '"events"'))
        if ev["op"] not in OPS:
            raise ScenarioError(f"unknown op {ev['op']!r}", line=_line_of(text, f'"{ev["op"]}"'))
        events.append(Event(int(ev.get("tick", 0)), ev["op"], ev.get("args") or {}, ev.get("expect") or {}))
    seed = (doc.get("params") or {}).get("seed")
    return Scenario(doc.get("id", "scenario"), doc["topology"], params, events, doc.get("expect_metrics") or {}, seed)


def load_scenario(path, backend=None) -> Scenario:
    return parse_scenario(Path(path).read_text(), backend)


# -- ops --------------------------------------------------------------------


def _members(sim, args):
    return args.get("members")


def _op_enroll(sim, a):
    return {"result": S.enroll_meter(sim, a["meter"])}


def _op_enroll_all(sim, a):
    S.enroll_all(sim)
    return {"result": "OK", "enrolled": len(sim.group.secrets)}


def _op_auth(sim, a):
    return {"verdict": S.authenticate_meter(sim, a["meter"]).value}


def _op_broadcast(sim, a):
    r = S.broadcast(sim, _members(sim, a), a.get("message", "").encode())
    return {
        "delivered": sorted(r.delivered()),
        "rejected": sorted(n for n, o in r.outcomes.items() if o == "AUTH_FAILURE"),
        "pubinfo_bytes": r.pubinfo_bytes,
        "seq": r.seq,
    }


def _op_report(sim, a):
    return {"outcome": S.report_uplink(sim, a["meter"], a.get("reading", ""))}


def _op_replay(sim, a):
    """Resend the last uplink packet the meter's collector forwarded."""
    meter_id = a["meter"]
    coll = sim.topology.collector_of(meter_id)
    header = meter_id.encode()
    for data in reversed(sim.collectors[coll].observed):
        try:
            _, env = S.parse_packet(data)
        except GridKeySimError:
            continue
        if env.header == header:
            return {"outcome": S.inject_uplink(sim, coll, data)}
    raise ScenarioError(f"no captured report from {meter_id}")


def _op_revoke(sim, a):
    return {"result": S.revoke_meter(sim, a["meter"], a.get("secrecy"))}


def _op_join(sim, a):
    return {"result": S.join_meter(sim, a["meter"], a.get("secrecy"))}


def _op_rekey(sim, a):
    pub = S.rekey(sim, _members(sim, a))
    return {"result": "OK", "seq": pub.seq if pub else None}


def _op_link_auth(sim, a):
    return {"verdict": S.link_auth(sim, a["collector"]).value}


def _op_remove_link(sim, a):
    sim.topology.remove_link(a["a"], a["b"])
    sim.refresh_routes()
    return {"result": "OK"}


OPS = {
    "enroll": _op_enroll,
    "enroll_all": _op_enroll_all,
    "auth": _op_auth,
    "broadcast": _op_broadcast,
    "report": _op_report,
    "replay": _op_replay,
    "revoke": _op_revoke,
    "join": _op_join,
    "rekey": _op_rekey,
    "link_auth": _op_link_auth,
    "remove_link": _op_remove_link,
}


def _check(expect: dict, got: dict, where: str) -> List[str]:
    failures = []
    for key, want in expect.items():
        have = got.get(key)
        if isinstance(want, list) and isinstance(have, list):
            want = sorted(want)
        if have != want:
            failures.append(f"{where}: expected {key}={want!r}, got {have!r}")
    return failures


def run_scenario(scenario: Scenario, seed=None) -> S.Simulation:
    """Execute every event in tick order and return the finished simulation."""
    if seed is None:
        seed = scenario.seed if scenario.seed is not None else 0
    sim = S.Simulation(build_network(scenario.topology), scenario.params, seed_from(seed))
    for i, ev in enumerate(sorted(scenario.events, key=lambda e: e.tick)):
        S.run(sim, ev.tick)
        where = f"event {i} ({ev.op} @ {ev.tick})"
        try:
            got = OPS[ev.op](sim, ev.args)
        except ScenarioError:
            raise
        except GridKeySimError as exc:
            got = {"error": exc.code}
            if "error" not in ev.expect:
                sim.assertion_failures.append(f"{where}: unexpected {exc.code}: {exc}")
                continue
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing argument {exc.args[0]!r}") from None
        sim.assertion_failures.extend(_check(ev.expect, got, where))
    S.run(sim)
    sim.assertion_failures.extend(_check(scenario.expect_metrics, sim.metrics.__dict__, "metrics"))
    return sim
