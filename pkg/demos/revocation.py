"""Join and revoke churn: the group key moves, retained meters' secrets do not.

    python3 demos/revocation.py [acp|lock]
"""

import sys

from gridkeysim import netsim
from gridkeysim.bgkm import Backend

backend = Backend.parse(sys.argv[1] if len(sys.argv) > 1 else "acp")
sim = netsim.Simulation(netsim.build_network({"generate": {"meters": 6}}),
                        netsim.SimParams(backend=backend), seed=1)
for m in ["M0001", "M0002", "M0003", "M0004"]:
    netsim.enroll_meter(sim, m)
netsim.broadcast(sim, None, b"epoch 0")

steps = [("revoke", "M0002"), ("join", "M0005"), ("revoke", "M0004"), ("join", "M0006")]
for op, meter_id in steps:
    fn = netsim.revoke_meter if op == "revoke" else netsim.join_meter
    fn(sim, meter_id, netsim.Secrecy.FORWARD if op == "revoke" else netsim.Secrecy.BACKWARD)
    r = netsim.broadcast(sim, None, f"after {op} {meter_id}".encode())
    print(f"{op:6s} {meter_id}: seq={r.seq} delivered={','.join(r.delivered())}")

print("revoked M0002 reads newest archived broadcast:",
      netsim.try_open_archived(sim, "M0002", -1))
print("meters touched per rekey:", sim.metrics.meters_touched_per_rekey)
