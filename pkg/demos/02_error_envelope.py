"""Tracking error of the unicycle against the Dubins model, compared with the
error envelope g along the two-phase turn-then-brake scenario and over a
grid of trajectory parameters.

Run with ``python demos/02_error_envelope.py``.
"""

import numpy as np

from frsplan.vehicle import DEFAULT_MODEL, fig2_initial_states, fig2_scenario, validate_error_bound

# %% turn at +0.5 rad/s for one horizon, then brake while switching to -0.5 rad/s
for name, rep in zip(("turn", "brake"), fig2_scenario()):
    worst = rep.max_violation
    print(f"{name:5s}: max(error - |g|) per coordinate = {np.array2string(worst, precision=2)} "
          f"at t = {rep.worst_time}")

# %% the same check over a 20 x 20 parameter grid with worst-case initial offsets
ks, inits = [], []
for k1 in np.linspace(*DEFAULT_MODEL.k1_range, 20):
    for k2 in np.linspace(*DEFAULT_MODEL.k2_range, 20):
        for s in fig2_initial_states((k1, k2)):
            ks.append((k1, k2))
            inits.append(s)
grid = validate_error_bound(np.array(ks), np.array(inits))
viol = grid.max_violation.max(axis=1)
print(f"{len(ks)} runs: worst excess {viol.max():.2e}; "
      f"excess only at t = {np.unique(grid.worst_time[grid.max_violation > 0]).tolist()}")
# The envelope vanishes at t = T while the exponential tracking error does
# not, so the bound is exceeded by ~1e-5 exactly at the end of the horizon.
