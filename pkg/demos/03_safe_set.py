"""Certified safe parameter sets: intersect the stored reachable-set
certificate with a few obstacle points and draw {h >= 0} over K.

Run with ``python demos/03_safe_set.py`` (needs ``data/dubins_deg4.json``,
produced by ``frsplan compute-frs --out data/dubins_deg4.json``).
"""

from pathlib import Path

import numpy as np

from frsplan.frs import FRSCertificate
from frsplan.planner import CostSpec, optimize
from frsplan.safeset import LocalObstacleSet, intersect, x0_center

cert = FRSCertificate.load(Path(__file__).resolve().parents[1] / "data" / "dubins_deg4.json")


def show(h, title):
    """ASCII map of {h >= 0}: rows are k2 (top = fast), columns are k1 (left = right turn)."""
    k1, k2, vals = h.grid(31)
    print(f"{title}: {100 * (vals >= 0).mean():.0f}% of K certified safe")
    for j in range(len(k2) - 1, -1, -3):
        print(f"  k2={k2[j]:4.2f} " + "".join("#" if v >= 0 else "." for v in vals[:, j]))


# %% no obstacles: only the h <= 1 constraint is active
show(intersect(cert, LocalObstacleSet(np.zeros((0, 2)), x0_center(cert))), "no obstacles")

# %% points in the vehicle frame (vehicle at the origin, facing +x)
# The degree-4 certificate is wide in y, so nearby points mostly cap the
# certified speed k2 rather than ruling out turning directions.
for pts in ([[1.3, 0.0]], [[1.3, 0.0], [1.0, 0.6]], [[0.9, -0.4], [1.0, -0.2]]):
    h = intersect(cert, LocalObstacleSet(np.array(pts, dtype=float), x0_center(cert)))
    show(h, f"points {pts}")
    plan = optimize(h, (0.0, 0.0, 0.0), CostSpec((3.0, 0.0), 0.5))
    print(f"  plan toward (3, 0) at 0.5 m/s: k = {np.round(plan.k, 3)}, braking = {plan.braking}\n")
