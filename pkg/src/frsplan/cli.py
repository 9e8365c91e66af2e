"""Command-line interface: ``frsplan <subcommand> ...``.

Exit codes: 0 on success, 1 on a domain failure (infeasible program, failed
validation, crash detected, timing violation), 2 on usage errors.

Configuration is layered: built-in defaults, then an optional JSON file given
with ``--config``, then explicit flags. Every output file records the tool
version and a hash of the effective configuration. Existing output files are
never overwritten unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .frs import FRSConfig, FRSCertificate, FRSError, compute_frs, config_hash, validate_certificate
from .planner import CostSpec, TimingConfig, check_timing, optimize
from .safeset import intersect, load_obstacles, localize_for
from .simworld import ScenarioParams, generate_scenario, plot_tables, run_batch, run_trial

log = logging.getLogger("frsplan")

DEFAULTS = {
    "frs": FRSConfig().to_dict(),
    "timing": asdict(TimingConfig()),
    "scenario": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(ScenarioParams()).items()},
    "intersect": {"degree": 6},
    "validation": {"trajectories": 1000, "closed_loop": 100, "tol": 1e-4, "seed": 0},
    "seed": 0,
}


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            if k not in out:
                raise UsageError(f"unknown configuration key {k!r}")
            out[k] = v
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    """Defaults < file < flags (``overrides`` holds only flags that were given)."""
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        cfg = _merge(cfg, data)
    return _merge(cfg, overrides)


def _stamp(cfg: dict) -> dict:
    return {"tool_version": __version__, "config_hash": config_hash(cfg)}


def _write(path: str | Path, text: str, force: bool) -> Path:
    p = Path(path)
    if p.exists() and not force:
        raise UsageError(f"{p} exists; artifact files are not overwritten (use --force or a new path)")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_cert(path: str) -> FRSCertificate:
    try:
        return FRSCertificate.load(path)
    except (OSError, KeyError, ValueError) as e:
        raise UsageError(f"cannot load certificate {path}: {e}") from e


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what} must be {n} comma-separated numbers")
    return vals


def _timing(cfg: dict) -> TimingConfig:
    t = TimingConfig(**cfg["timing"])
    rep = check_timing(t)
    if not rep.ok:
        raise DomainError("timing check failed: " + "; ".join(rep.violations))
    return t


def _scenario_params(cfg: dict) -> ScenarioParams:
    return ScenarioParams(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg["scenario"].items()})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_compute_frs(args, cfg):
    frs_cfg = FRSConfig.from_dict(cfg["frs"])
    _write(args.out, "", args.force)  # claim the path early so a long solve cannot clobber it
    try:
        cert = compute_frs(frs_cfg, verbose=args.verbose)
    except FRSError as e:
        Path(args.out).unlink(missing_ok=True)
        raise DomainError(str(e)) from e
    Path(args.out).write_text(json.dumps(cert.to_json(timing=False)))
    stem = Path(args.out).with_suffix("")
    timing_path = stem.parent / (stem.name + "_timing.json")
    seconds = {k: v for k, v in cert.diagnostics.items() if k.endswith("_seconds")}
    _write(timing_path, _dump({**seconds, **_stamp(cfg)}), args.force)
    return {"out": str(args.out), "timing": str(timing_path), "margin": cert.margin,
            "diagnostics": cert.diagnostics, "certificate_config_hash": cert.config_hash}


def cmd_validate_frs(args, cfg):
    cert = _load_cert(args.cert)
    v = cfg["validation"]
    rep = validate_certificate(cert, v["trajectories"], v["closed_loop"], v["tol"], v["seed"])
    out = rep.to_json()
    if not rep.passed:
        raise DomainError(f"{rep.n_violations} of {rep.n_points} samples have w < 1 - {rep.tol}", out)
    return out


def cmd_intersect(args, cfg):
    cert = _load_cert(args.cert)
    obstacles = load_obstacles(args.obstacles)
    pose = _floats(args.pose, 3, "--pose")
    local = localize_for(cert, obstacles, pose, sense_radius=TimingConfig(**cfg["timing"]).d_sense)
    h = intersect(cert, local, degree=cfg["intersect"]["degree"])
    payload = {**h.to_json(), **_stamp(cfg)}
    payload["diagnostics"] = {k: v for k, v in payload["diagnostics"].items() if k != "seconds"}
    if args.out:
        _write(args.out, _dump(payload), args.force)
    k1, k2, vals = h.grid(50)
    summary = {"fallback": h.fallback, "n_points": h.n_points, "safe_fraction": float((vals >= 0).mean()),
               "diagnostics": h.diagnostics, "out": args.out}
    if h.fallback:
        raise DomainError("safe-set program not solved; only braking is certified", summary)
    return summary


def cmd_plan(args, cfg):
    cert = _load_cert(args.cert)
    timing = _timing(cfg)
    obstacles = load_obstacles(args.obstacles) if args.obstacles else []
    pose = _floats(args.pose, 3, "--pose")
    goal = _floats(args.goal, 2, "--goal")
    local = localize_for(cert, obstacles, pose, sense_radius=timing.d_sense)
    h = intersect(cert, local, degree=cfg["intersect"]["degree"])
    res = optimize(h, pose, CostSpec(goal, args.vdes), timing.T)
    out = {**res.to_json(timing=False), **_stamp(cfg), "n_points": len(local)}
    if args.out:
        _write(args.out, _dump(out), args.force)
    return out


def _trial_files(result, cfg, stem: Path, force: bool):
    stamp = _stamp(cfg)
    header = f"# tool_version={stamp['tool_version']} config_hash={stamp['config_hash']}\n"
    _write(stem.with_suffix(".csv"), header + result.trace_csv(), force)
    _write(stem.with_suffix(".json"), _dump({**result.to_json(), **stamp}), force)


def cmd_simulate(args, cfg):
    cert = _load_cert(args.cert)
    timing = _timing(cfg)
    seed = cfg["seed"]
    count = args.obstacles if args.obstacles is not None else 1 + seed % 10
    if not 1 <= count <= 10:
        raise UsageError("--obstacles must be between 1 and 10")
    scen = generate_scenario(seed, count, _scenario_params(cfg))
    res = run_trial(scen, cert, timing, pause_time=not args.wall_clock)
    stem = Path(args.out_dir) / f"trial_{seed}"
    _trial_files(res, cfg, stem, args.force)
    out = {"seed": seed, "n_obstacles": count, "outcome": res.outcome, "trace": str(stem.with_suffix(".csv")),
           "result": str(stem.with_suffix(".json"))}
    if res.outcome == "CRASH":
        raise DomainError(f"collision at t = {res.collision.t:.2f} s", out)
    return out


def cmd_batch(args, cfg):
    cert = _load_cert(args.cert)
    timing = _timing(cfg)
    if not args.skip_validation:
        v = cfg["validation"]
        rep = validate_certificate(cert, v["trajectories"], v["closed_loop"], v["tol"], v["seed"])
        if not rep.passed:
            raise DomainError("certificate fails validation; refusing to run the batch", rep.to_json())
    if args.trials < 1:
        raise UsageError("--trials must be positive")

    def progress(t):
        log.info("seed %d (%d obstacles): %s", t.seed, t.n_obstacles, t.outcome)

    report = run_batch(args.trials, cert, timing, base_seed=cfg["seed"], workers=args.workers,
                       pause_time=not args.wall_clock, progress=progress)
    # the report itself is seed-determined; wall-clock timings go to a sibling file
    out = {**report.to_json(timing=False), **_stamp(cfg)}
    _write(args.out, _dump(out), args.force)
    stem = Path(args.out).with_suffix("")
    trends = report.trend_statistics()
    timing_out = {"timing_by_count": {str(k): v for k, v in report.timing_by_count().items()},
                  "trends": trends, **_stamp(cfg)}
    timing_path = stem.parent / (stem.name + "_timing.json")
    _write(timing_path, _dump(timing_out), args.force)
    trial_dir = stem.parent / (stem.name + "_trials")
    for t in report.trials:
        _trial_files(t, cfg, trial_dir / f"trial_{t.seed}", args.force)
    if args.plot_data:
        for name, text in plot_tables(report).items():
            _write(trial_dir / name, text, args.force)
    summary = {k: out[k] for k in ("n_trials", "crashes", "outcomes_percent", "passed")}
    summary.update(out=str(args.out), timing=str(timing_path), trials_dir=str(trial_dir), trends=trends)
    if not report.passed:
        raise DomainError(f"{report.crashes} crash(es) detected", summary)
    return summary


def cmd_check_timing(args, cfg):
    rep = check_timing(args.tau_plan, args.tau_stop, T=args.T, T_sense=args.T_sense, v_max=args.v_max)
    out = rep.to_json()
    if not rep.ok:
        raise DomainError("; ".join(rep.violations), out)
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="frsplan", description="Reachability-based safe trajectory planning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON configuration file (defaults < file < flags)")
        sp.add_argument("--json", action="store_true", help="machine-readable output on stdout")
        sp.add_argument("--force", action="store_true", help="overwrite existing output files")
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = common(sub.add_parser("compute-frs", help="solve the offline reachability program"))
    sp.add_argument("--degree", type=int, help="degree of v and w")
    sp.add_argument("--out", required=True, help="certificate JSON path")
    sp.set_defaults(func=cmd_compute_frs)

    sp = common(sub.add_parser("validate-frs", help="check a certificate against simulated trajectories"))
    sp.add_argument("--cert", required=True)
    sp.add_argument("--samples", type=int, help="number of disturbed trajectories")
    sp.add_argument("--closed-loop", type=int, help="number of closed-loop trajectories")
    sp.set_defaults(func=cmd_validate_frs)

    sp = common(sub.add_parser("intersect", help="safe parameter set for an obstacle file"))
    sp.add_argument("--cert", required=True)
    sp.add_argument("--obstacles", required=True, help="obstacle JSON (world frame)")
    sp.add_argument("--pose", default="0,0,0", help="vehicle pose x,y,heading")
    sp.add_argument("--out", help="write h(k) JSON here")
    sp.set_defaults(func=cmd_intersect)

    sp = common(sub.add_parser("plan", help="one planning step"))
    sp.add_argument("--cert", required=True)
    sp.add_argument("--obstacles", help="obstacle JSON (world frame)")
    sp.add_argument("--pose", required=True, help="x,y,heading")
    sp.add_argument("--goal", required=True, help="x,y")
    sp.add_argument("--vdes", type=float, required=True, help="desired speed (m/s)")
    sp.add_argument("--out", help="write the PlanResult JSON here")
    sp.set_defaults(func=cmd_plan)

    sp = common(sub.add_parser("simulate", help="one seeded closed-loop trial"))
    sp.add_argument("--cert", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--obstacles", type=int, help="obstacle count 1-10 (default: 1 + seed mod 10)")
    sp.add_argument("--out-dir", default=".", help="directory for trial_<seed>.csv/.json")
    sp.add_argument("--wall-clock", action="store_true", help="enforce the planning budget in wall-clock time")
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("batch", help="seeded Monte-Carlo batch"))
    sp.add_argument("--cert", required=True)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--out", required=True, help="report JSON; per-trial files go to <out>_trials/")
    sp.add_argument("--seed", type=int, help="base seed")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--plot-data", action="store_true", help="also write plotting CSV tables")
    sp.add_argument("--skip-validation", action="store_true", help="do not gate on validate-frs")
    sp.add_argument("--samples", type=int, help="disturbed trajectories for the validation gate")
    sp.add_argument("--closed-loop", type=int, help="closed-loop trajectories for the validation gate")
    sp.add_argument("--wall-clock", action="store_true")
    sp.set_defaults(func=cmd_batch)

    sp = common(sub.add_parser("check-timing", help="check the planning-loop timing inequalities"))
    sp.add_argument("--tau-plan", type=float, required=True)
    sp.add_argument("--tau-stop", type=float, required=True)
    sp.add_argument("--T", type=float)
    sp.add_argument("--T-sense", type=float)
    sp.add_argument("--v-max", type=float, default=1.0)
    sp.set_defaults(func=cmd_check_timing)
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if getattr(args, "degree", None) is not None:
        o.setdefault("frs", {})["degree"] = args.degree
    if getattr(args, "samples", None) is not None:
        o.setdefault("validation", {})["trajectories"] = args.samples
    if getattr(args, "closed_loop", None) is not None:
        o.setdefault("validation", {})["closed_loop"] = args.closed_loop
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    return o


def _print(result, as_json: bool, stream=None):
    stream = stream or sys.stdout
    if as_json:
        stream.write(json.dumps(result, indent=2, sort_keys=True, default=str) + "\n")
        return
    for k, v in result.items():
        if isinstance(v, (dict, list)):
            v = json.dumps(v, sort_keys=True, default=str)
        stream.write(f"{k}: {v}\n")


def main(argv=None) -> int:
    parser = build_parser()
    as_json = "--json" in (argv if argv is not None else sys.argv[1:])
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = load_config(args.config, _overrides(args))
        result = args.func(args, cfg)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 2
    except DomainError as e:
        msg = e.args[0]
        detail = e.args[1] if len(e.args) > 1 else {}
        if as_json:
            _print({"ok": False, "error": msg, **detail}, True)
        else:
            sys.stderr.write(f"error: {msg}\n")
            if detail:
                _print(detail, False, sys.stderr)
        return 1
    _print({"ok": True, **result} if as_json else result, as_json)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
