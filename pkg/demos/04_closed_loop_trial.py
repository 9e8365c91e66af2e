"""One seeded closed-loop trial: sense, intersect, optimize, execute, with
pause-time semantics. Prints the per-cycle decisions and the outcome.

With the degree-4 certificate, obstacles placed between the vehicle and the
goal usually force a braking plan within the first few cycles. For
contrast, the same scenario is then replayed with the obstacles removed.

Run with ``python demos/04_closed_loop_trial.py [seed] [n_obstacles]``.
"""

import dataclasses
import sys
from pathlib import Path

from frsplan.frs import FRSCertificate
from frsplan.simworld import generate_scenario, run_trial

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 3
count = int(sys.argv[2]) if len(sys.argv) > 2 else 4
cert = FRSCertificate.load(Path(__file__).resolve().parents[1] / "data" / "dubins_deg4.json")


def replay(scenario):
    print(f"goal {tuple(round(g, 2) for g in scenario.goal)}, v_des {scenario.v_des:.2f} m/s, "
          f"{len(scenario.obstacles)} obstacles")
    result = run_trial(scenario, cert)
    for c in result.cycles:
        x, y, th = c.pose
        tag = "BRAKE" if c.braking else "plan "
        print(f"t={c.t_plan:5.1f}  pose=({x:5.2f},{y:5.2f},{th:5.2f})  {tag} k=({c.k[0]:5.2f},{c.k[1]:4.2f})  "
              f"points={c.n_points:3d}  intersect {c.intersect_ms:6.1f} ms  optimize {c.optimize_ms:6.1f} ms")
    print("outcome:", result.outcome, "\n")


# %% the seeded trial
scenario = generate_scenario(seed, count)
replay(scenario)

# %% same start, goal and speeds without obstacles
replay(dataclasses.replace(scenario, obstacles=[]))
