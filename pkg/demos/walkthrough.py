"""Walk the reference network: enroll, broadcast, report, replay, revoke.

    python3 demos/walkthrough.py
"""

from gridkeysim import netsim, threats

sim = threats.feeder_sim(seed=0)
print("enrolled:", ", ".join(sim.enrolled()))

r = netsim.broadcast(sim, None, b"tariff=peak")
print(f"broadcast seq={r.seq} pubinfo={r.pubinfo_bytes}B")
for node, outcome in sorted(r.outcomes.items()):
    print(f"  {node:4s} {outcome}")

print("report M4:", netsim.report_uplink(sim, "M4", "kwh=17.2"))
packet = sim.collectors["C1"].observed[-1]
print("replay at C1:", netsim.inject_uplink(sim, "C1", packet))

print("revoke M2:", netsim.revoke_meter(sim, "M2", netsim.Secrecy.FORWARD))
r = netsim.broadcast(sim, None, b"tariff=offpeak")
print("after revocation, delivered to:", ", ".join(r.delivered()))

print()
print("\n".join(sim.metrics.to_lines()))
