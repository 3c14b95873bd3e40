"""Run every attack scenario once and print what each one observed.

    python3 demos/attack_tour.py [seed]
"""

import sys

from gridkeysim import threats

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
for report in threats.run_suite(seed=seed):
    print(f"{report.scenario_id:16s} {report.mode_text:42s} {report.verdict.value}")
    for line in report.evidence[:2]:
        print(f"{'':16s}   {line}")
