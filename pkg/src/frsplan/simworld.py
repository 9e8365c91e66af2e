"""Closed-loop simulation of the replanning loop and the Monte-Carlo harness.

Every planning period ``tau_plan`` the simulator

1. predicts the pose at the end of the period by integrating the closed-loop
   unicycle under the active plan,
2. localizes the obstacles sensed from that predicted pose,
3. computes the safe set and the next plan (or a braking plan),
4. executes the active plan over the period and swaps plans at the boundary.

With ``pause_time=True`` (the default) the simulation clock is halted while
planning, so outcomes do not depend on host speed; planning times are still
measured and reported. With ``pause_time=False`` a plan that takes longer
than ``tau_plan`` of wall-clock time is replaced by a braking plan.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from . import __version__
from .frs import FRSCertificate
from .planner import CostSpec, PlanResult, TimingConfig, braking_plan, optimize
from .safeset import R_CIRC, SEGMENT_BOUNDS, Obstacle, intersect, localize_for
from .vehicle import simulate_closed_loop

OUTCOMES = ("goal-reached", "braked-safely", "iteration-limit", "CRASH")
TRACE_COLUMNS = ("t", "x", "y", "th", "thdot", "v", "active_k1", "active_k2", "braking_flag")


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioParams:
    """Random-scenario generator bounds (metres, metres per second)."""

    goal_radius: tuple[float, float] = (1.5, 3.0)
    goal_half_angle: float = math.radians(60.0)
    speed: tuple[float, float] = (0.25, 0.75)
    segment_length: tuple[float, float] = SEGMENT_BOUNDS
    corridor_half_width: float = 0.3
    corridor_fraction: tuple[float, float] = (0.3, 0.85)
    min_spacing: float = 0.15
    iteration_limit: int = 60
    goal_tolerance: float = 0.2


@dataclass
class Scenario:
    """One trial: start at the origin facing +x with speed ``v0``."""

    seed: int
    obstacles: list[Obstacle]
    goal: tuple[float, float]
    v0: float
    v_des: float
    iteration_limit: int = 60
    goal_tolerance: float = 0.2

    @property
    def n_obstacles(self) -> int:
        return len(self.obstacles)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "obstacles": [o.to_json() for o in self.obstacles],
            "goal": list(self.goal),
            "v0": self.v0,
            "v_des": self.v_des,
            "iteration_limit": self.iteration_limit,
            "goal_tolerance": self.goal_tolerance,
        }


def _segment_distance(a: Obstacle, b: Obstacle) -> float:
    """Minimum distance between two segments (sampled finely; exact enough for spacing checks)."""
    pa = a.sample(0.005)
    return float(b.distance(pa).min())


def generate_scenario(seed: int, n_obstacles: int, params: ScenarioParams = ScenarioParams()) -> Scenario:
    """Random scenario derived entirely from ``seed``.

    The goal is uniform in the annulus ``goal_radius`` within
    ``goal_half_angle`` of the initial heading; obstacle centres are uniform
    on a corridor around the start-goal segment, kept ``min_spacing`` apart.
    """
    if not 1 <= n_obstacles <= 10:
        raise ValueError("obstacle count must be between 1 and 10")
    rng = np.random.default_rng(seed)
    r = rng.uniform(*params.goal_radius)
    ang = rng.uniform(-params.goal_half_angle, params.goal_half_angle)
    goal = np.array([r * math.cos(ang), r * math.sin(ang)])
    v = float(rng.uniform(*params.speed))
    u = goal / r
    nrm = np.array([-u[1], u[0]])
    obstacles: list[Obstacle] = []
    attempts = 0
    while len(obstacles) < n_obstacles:
        attempts += 1
        if attempts > 10000:
            raise RuntimeError("could not place obstacles with the requested spacing")
        s = rng.uniform(*params.corridor_fraction) * r
        c = s * u + rng.uniform(-params.corridor_half_width, params.corridor_half_width) * nrm
        length = rng.uniform(*params.segment_length)
        phi = rng.uniform(0.0, math.pi)
        d = 0.5 * length * np.array([math.cos(phi), math.sin(phi)])
        cand = Obstacle(tuple(c - d), tuple(c + d))
        if all(_segment_distance(cand, o) >= params.min_spacing for o in obstacles):
            obstacles.append(cand)
    return Scenario(int(seed), obstacles, (float(goal[0]), float(goal[1])), v, v,
                    params.iteration_limit, params.goal_tolerance)


# ---------------------------------------------------------------------------
# collision audit
# ---------------------------------------------------------------------------

@dataclass
class CollisionEvent:
    t: float
    obstacle: int
    distance: float

    def to_json(self) -> dict:
        return {"t": self.t, "obstacle": self.obstacle, "distance": self.distance}


def audit_collision(times, positions, obstacles: Sequence[Obstacle], radius: float = R_CIRC) -> CollisionEvent | None:
    """First sample at which an obstacle lies in the closed disc of ``radius`` around the vehicle centre.

    Examples
    --------
    >>> ob = [Obstacle((1.0, 0.2), (1.0, 0.3))]
    >>> audit_collision([0.0, 1.0], [[0.0, 0.0], [1.0, 0.0]], ob) is None
    True
    """
    times = np.asarray(times, dtype=float)
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if not obstacles or pos.size == 0:
        return None
    dist = np.column_stack([o.distance(pos) for o in obstacles])
    hit = dist <= radius
    rows = np.flatnonzero(hit.any(axis=1))
    if rows.size == 0:
        return None
    i = int(rows[0])
    j = int(np.argmin(dist[i]))
    return CollisionEvent(float(times[i]), j, float(dist[i, j]))


# ---------------------------------------------------------------------------
# the replanning loop
# ---------------------------------------------------------------------------

@dataclass
class CycleRecord:
    """Plan marker for one planning cycle."""

    index: int
    t_plan: float  # time at which the computed plan becomes active
    pose: tuple[float, float, float]  # predicted pose the plan starts from
    k: tuple[float, float]
    braking: bool
    reason: str
    n_points: int
    h_value: float | None
    intersect_ms: float
    optimize_ms: float

    def to_json(self, timing: bool = True) -> dict:
        d = {
            "index": self.index, "t_plan": self.t_plan, "pose": list(self.pose), "k": list(self.k),
            "braking": self.braking, "reason": self.reason, "n_points": self.n_points, "h_value": self.h_value,
        }
        if timing:
            d.update(intersect_ms=self.intersect_ms, optimize_ms=self.optimize_ms)
        return d


@dataclass
class WorldState:
    """Simulation time, unicycle state ``(x, y, th, thdot, v)`` and the active plan."""

    t: float
    state: np.ndarray
    k: tuple[float, float]
    braking: bool = False


@dataclass
class TrialResult:
    seed: int
    n_obstacles: int
    outcome: str
    trace: np.ndarray  # rows (t, x, y, th, thdot, v, k1, k2, braking)
    cycles: list[CycleRecord] = field(default_factory=list)
    collision: CollisionEvent | None = None
    scenario: Scenario | None = None

    @property
    def intersect_ms(self) -> np.ndarray:
        return np.array([c.intersect_ms for c in self.cycles])

    @property
    def optimize_ms(self) -> np.ndarray:
        return np.array([c.optimize_ms for c in self.cycles])

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.trace:
            w.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])
        return buf.getvalue()

    def to_json(self, timing: bool = False) -> dict:
        """JSON summary. Wall-clock timings are omitted unless ``timing`` is set,
        so the default output is reproducible bit for bit."""
        return {
            "tool_version": __version__,
            "seed": self.seed,
            "n_obstacles": self.n_obstacles,
            "outcome": self.outcome,
            "collision": None if self.collision is None else self.collision.to_json(),
            "final_state": [float(v) for v in self.trace[-1, 1:6]],
            "duration": float(self.trace[-1, 0]),
            "scenario": None if self.scenario is None else self.scenario.to_json(),
            "cycles": [c.to_json(timing) for c in self.cycles],
        }


def plan_from(cert: FRSCertificate, obstacles: Sequence[Obstacle], pose, cost: CostSpec, timing: TimingConfig,
              k_prev, budget: float | None = None) -> tuple[PlanResult, int, float]:
    """Intersect and optimize from ``pose``. Returns ``(plan, n_points, intersect_ms)``."""
    t0 = time.perf_counter()
    local = localize_for(cert, obstacles, pose, sense_radius=timing.d_sense)
    h = intersect(cert, local)
    t_int = 1e3 * (time.perf_counter() - t0)
    remaining = None if budget is None else budget - t_int / 1e3
    if remaining is not None and remaining <= 0:
        return (PlanResult(braking_plan(k_prev), True, None, None, "budget-exceeded", budget_exceeded=True),
                len(local), t_int)
    plan = optimize(h, pose, cost, timing.T, k_prev=k_prev, budget=remaining)
    return plan, len(local), t_int


def step_cycle(
    world: WorldState,
    cert: FRSCertificate,
    timing: TimingConfig,
    obstacles: Sequence[Obstacle],
    cost: CostSpec,
    index: int = 0,
    pause_time: bool = True,
) -> tuple[WorldState, np.ndarray, CycleRecord, PlanResult]:
    """One planning period.

    Returns the world at ``t + tau_plan`` with the new plan installed, the
    executed samples ``(t, x, y, th, thdot, v, k1, k2, braking)`` for
    ``[t, t + tau_plan)``, the plan marker and the plan itself.
    """
    model = cert.model_config()
    k_active = np.asarray(world.k, dtype=float)
    times, traj = simulate_closed_loop(world.state, k_active, timing.tau_plan, model, t0=world.t)
    predicted = traj[-1]
    pose = tuple(float(v) for v in predicted[:3])
    budget = None if pause_time else timing.tau_plan
    plan, n_pts, t_int = plan_from(cert, obstacles, pose, cost, timing, world.k, budget)
    if plan.braking:
        # keep the yaw-rate reference of the plan being executed
        plan.k = braking_plan(world.k)
    rec = CycleRecord(index, float(times[-1]), pose, plan.k, plan.braking, plan.reason, n_pts, plan.h_value,
                      t_int, plan.optimize_ms)
    nxt = WorldState(float(times[-1]), predicted, plan.k, plan.braking)
    m = traj.shape[0] - 1
    executed = np.column_stack([times[:m], traj[:m], np.tile(k_active, (m, 1)),
                                np.full(m, 1.0 if world.braking else 0.0)])
    return nxt, executed, rec, plan


def run_trial(
    scenario: Scenario,
    cert: FRSCertificate,
    timing: TimingConfig = TimingConfig(),
    pause_time: bool = True,
    stop_speed: float = 0.01,
) -> TrialResult:
    """Simulate one scenario until an outcome is reached.

    Outcomes: ``goal-reached`` once the vehicle centre is within the goal
    tolerance; ``braked-safely`` once a braking plan has brought the vehicle
    below ``stop_speed`` with no certified plan available;
    ``iteration-limit`` after ``scenario.iteration_limit`` cycles; ``CRASH``
    if the collision audit fires at any sample.
    """
    cost = CostSpec(scenario.goal, scenario.v_des)
    state0 = np.array([0.0, 0.0, 0.0, 0.0, scenario.v0])
    plan, n_pts, t_int = plan_from(cert, scenario.obstacles, (0.0, 0.0, 0.0), cost, timing, (0.0, 0.0))
    if plan.braking:
        plan.k = braking_plan((0.0, 0.0))
    cycles = [CycleRecord(0, 0.0, (0.0, 0.0, 0.0), plan.k, plan.braking, plan.reason, n_pts, plan.h_value,
                          t_int, plan.optimize_ms)]
    world = WorldState(0.0, state0, plan.k, plan.braking)
    chunks = []
    outcome = "iteration-limit"
    collision = None
    goal = np.asarray(scenario.goal)
    for n in range(1, scenario.iteration_limit + 1):
        world_next, executed, rec, _ = step_cycle(world, cert, timing, scenario.obstacles, cost, n, pause_time)
        chunks.append(executed)
        cycles.append(rec)
        collision = audit_collision(executed[:, 0], executed[:, 1:3], scenario.obstacles)
        if collision is not None:
            outcome = "CRASH"
            cut = int(np.searchsorted(executed[:, 0], collision.t, side="right"))
            chunks[-1] = executed[:cut]
            break
        reached = np.hypot(executed[:, 1] - goal[0], executed[:, 2] - goal[1]) <= scenario.goal_tolerance
        if reached.any():
            outcome = "goal-reached"
            chunks[-1] = executed[: int(np.argmax(reached)) + 1]
            break
        world = world_next
        if world.braking and abs(world.state[4]) < stop_speed:
            outcome = "braked-safely"
            break
    trace = np.vstack(chunks) if chunks else np.zeros((0, len(TRACE_COLUMNS)))
    if outcome in ("braked-safely", "iteration-limit"):
        last = np.concatenate([[world.t], world.state, world.k, [1.0 if world.braking else 0.0]])
        trace = np.vstack([trace, last])
    return TrialResult(scenario.seed, scenario.n_obstacles, outcome, trace, cycles, collision, scenario)


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

def trial_plan(n_trials: int, base_seed: int = 0) -> list[tuple[int, int]]:
    """``(seed, obstacle count)`` pairs: counts 1..10 in equal shares, seeds ``base_seed + i``."""
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    return [(base_seed + i, 1 + (i * 10) // n_trials) for i in range(n_trials)]


@dataclass
class BatchReport:
    trials: list[TrialResult]
    seeds: list[int]

    @property
    def crashes(self) -> int:
        return sum(t.outcome == "CRASH" for t in self.trials)

    @property
    def passed(self) -> bool:
        return self.crashes == 0

    def outcome_percentages(self) -> dict[str, float]:
        n = max(len(self.trials), 1)
        return {o: 100.0 * sum(t.outcome == o for t in self.trials) / n for o in OUTCOMES}

    def timing_by_count(self) -> dict[int, dict[str, float]]:
        """Mean intersect/optimize milliseconds per obstacle count (over all cycles)."""
        out = {}
        for c in sorted({t.n_obstacles for t in self.trials}):
            ints = np.concatenate([t.intersect_ms for t in self.trials if t.n_obstacles == c] or [np.zeros(0)])
            opts = np.concatenate([t.optimize_ms for t in self.trials if t.n_obstacles == c] or [np.zeros(0)])
            out[c] = {"intersect_ms": float(ints.mean()) if ints.size else float("nan"),
                      "optimize_ms": float(opts.mean()) if opts.size else float("nan"),
                      "cycles": int(ints.size)}
        return out

    def trend_statistics(self) -> dict:
        """Spearman rank correlation of mean times against obstacle count.

        ``optimize_positive_trend`` uses a one-sided test at the 5% level on
        the per-cycle optimize times.
        """
        tb = self.timing_by_count()
        counts = np.array(sorted(tb))
        out = {}
        if counts.size >= 3:
            rho_i = stats.spearmanr(counts, [tb[c]["intersect_ms"] for c in counts]).statistic
            out["intersect_spearman"] = float(rho_i)
        xs = np.concatenate([np.full(t.optimize_ms.size, t.n_obstacles) for t in self.trials] or [np.zeros(0)])
        ys = np.concatenate([t.optimize_ms for t in self.trials] or [np.zeros(0)])
        if xs.size >= 3 and np.unique(xs).size > 1:
            res = stats.spearmanr(xs, ys, alternative="greater")
            out["optimize_spearman"] = float(res.statistic)
            out["optimize_p_greater"] = float(res.pvalue)
            out["optimize_positive_trend"] = bool(res.pvalue < 0.05)
        return out

    def to_json(self, timing: bool = True) -> dict:
        d = {
            "tool_version": __version__,
            "n_trials": len(self.trials),
            "seeds": self.seeds,
            "passed": self.passed,
            "crashes": self.crashes,
            "outcomes_percent": self.outcome_percentages(),
            "trials": [{"seed": t.seed, "n_obstacles": t.n_obstacles, "outcome": t.outcome} for t in self.trials],
        }
        if timing:
            d["timing_by_count"] = {str(k): v for k, v in self.timing_by_count().items()}
            d["trends"] = self.trend_statistics()
        return d


def _run_one(args):
    seed, count, cert_json, timing, pause_time = args
    cert = FRSCertificate.from_json(cert_json)
    return run_trial(generate_scenario(seed, count), cert, timing, pause_time)


def run_batch(
    n_trials: int,
    cert: FRSCertificate,
    timing: TimingConfig = TimingConfig(),
    base_seed: int = 0,
    workers: int = 1,
    pause_time: bool = True,
    progress=None,
) -> BatchReport:
    """Run seeded trials (equal shares of obstacle counts 1..10).

    ``workers > 1`` distributes trials over processes; results are ordered by
    seed either way, so reports do not depend on scheduling.
    """
    plan = trial_plan(n_trials, base_seed)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        cj = cert.to_json()
        with ProcessPoolExecutor(workers) as ex:
            trials = list(ex.map(_run_one, [(s, c, cj, timing, pause_time) for s, c in plan]))
    else:
        trials = []
        for s, c in plan:
            trials.append(run_trial(generate_scenario(s, c), cert, timing, pause_time))
            if progress:
                progress(trials[-1])
    return BatchReport(trials, [s for s, _ in plan])


def plot_tables(report: BatchReport) -> dict[str, str]:
    """CSV tables for external plotting: per-trial paths and timing vs. obstacle count."""
    paths = io.StringIO()
    w = csv.writer(paths, lineterminator="\n")
    w.writerow(["seed", "n_obstacles", "outcome", "t", "x", "y"])
    for t in report.trials:
        for row in t.trace:
            w.writerow([t.seed, t.n_obstacles, t.outcome, repr(float(row[0])), repr(float(row[1])), repr(float(row[2]))])
    obst = io.StringIO()
    w = csv.writer(obst, lineterminator="\n")
    w.writerow(["seed", "index", "ax", "ay", "bx", "by"])
    for t in report.trials:
        for i, o in enumerate(t.scenario.obstacles if t.scenario else []):
            w.writerow([t.seed, i, *o.a, *o.b])
    timing = io.StringIO()
    w = csv.writer(timing, lineterminator="\n")
    w.writerow(["seed", "n_obstacles", "cycle", "n_points", "intersect_ms", "optimize_ms"])
    for t in report.trials:
        for c in t.cycles:
            w.writerow([t.seed, t.n_obstacles, c.index, c.n_points, f"{c.intersect_ms:.3f}", f"{c.optimize_ms:.3f}"])
    return {"paths.csv": paths.getvalue(), "obstacles.csv": obst.getvalue(), "timing.csv": timing.getvalue()}


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
