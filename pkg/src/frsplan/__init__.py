"""Reachability-based safe trajectory planning.

Offline, an SOS relaxation yields a polynomial ``w`` whose 1-superlevel set
contains every shared state the vehicle can reach within the planning
horizon. Online, ``w`` is intersected with sensed obstacles to certify safe
trajectory parameters, the planner picks among them, and the simulator replays
the receding-horizon loop with a braking fallback.
"""

__version__ = "0.1.0"
