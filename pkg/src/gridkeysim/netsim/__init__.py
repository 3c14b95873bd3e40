"""Discrete-event AMI simulator: topology, event engine and scenario runner."""

from .scenario import Event, Scenario, load_scenario, parse_scenario, run_scenario
from .sim import (
    DeliveryReport,
    LogEntry,
    PufMode,
    RunResult,
    Secrecy,
    SimMetrics,
    SimParams,
    Simulation,
    UplinkReport,
    authenticate_meter,
    broadcast,
    enroll_all,
    enroll_meter,
    close_sessions,
    inject_uplink,
    open_sessions,
    install_secret,
    join_meter,
    link_auth,
    rekey,
    report_uplink,
    revoke_meter,
    run,
    try_open_archived,
    uplink_key,
    verify_audit_log,
)
from .topology import NodeKind, NodeSpec, Topology, build_network, compute_routes, tree_config
