"""Command line entry point and scenario runner.

Exit status of ``run``: 0 when every experiment passes, 2 when nothing
failed but some statistical verdict lacked power (too few paths), 1 when any
experiment failed or raised, 3 for an invalid scenario or usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .errors import SepControlError, ValidationError
from .experiments import (
    ExperimentReport,
    cost_decomposition_check,
    estimate_cost,
    full_information_cost,
    open_loop_cost,
    optimality_comparison,
    pathwise_ito_identity_check,
    sigma_invariance_experiment,
)
from .loop import (
    ClassL,
    Delayed,
    SeparatedLQG,
    StateFeedback,
    VolterraKernel,
    ZeroLaw,
    causality_check,
    solve_closed_loop,
    uniqueness_check,
)
from .model import TimeGrid
from .noise import Wiener, sample_noise
from .scenario import PRESETS, Scenario, parse_scenario, preset, serialize_scenario
from .shiryaev import ShiryaevLaw, detection_sweep, run_step_change_scenario, scalar_lqg_gain
from .synthesis import solve_control_riccati, solve_filter_riccati, write_schedule_csv

__all__ = ["EXIT", "build_law", "run_scenario", "emit_report", "main"]

EXIT = {"pass": 0, "fail": 1, "insufficient-power": 2, "invalid": 3}


# --------------------------------------------------------------------------- serialisation

def _plain(v):
    """JSON-ready copy: numpy to Python, non-finite floats to None, tuples to lists."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    return v


def _summary(report: ExperimentReport) -> dict:
    return {"name": report.name, "status": report.status, "passed": report.passed, "rule": report.rule,
            "estimates": report.estimates, "standard_errors": report.standard_errors, "M": report.M,
            "seeds": report.seeds, "first_violation": report.first_violation}


def emit_report(report: ExperimentReport, format: str = "summary", destination=None, artifacts=None) -> str:
    """Serialise a report deterministically (sorted keys, no timing) and write it if a destination is given.

    ``full`` adds the component breakdown, the run details and the list of
    per-path files written alongside the report.
    """
    if format not in ("summary", "full"):
        raise ValueError(f"unknown report format {format!r}")
    d = _summary(report)
    if format == "full":
        d.update(components=report.components, details=report.details, artifacts=sorted(artifacts or []))
    text = json.dumps(_plain(d), sort_keys=True, indent=2) + "\n"
    if destination is not None:
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            Path(destination).write_text(text)
    return text


# --------------------------------------------------------------------------- laws

def build_law(s: Scenario, grid: TimeGrid, cfg: dict | None = None):
    """Instantiate the scenario's control law on ``grid`` (gains are synthesised there)."""
    cfg = s.law_config() if cfg is None else cfg
    kind = cfg["kind"]
    scale = float(cfg.get("gain_scale", 1.0))
    if kind == "zero":
        return ZeroLaw()
    if kind == "shiryaev":
        R = float(np.asarray(s.cost.R.at(0.0)).reshape(-1)[0])
        return ShiryaevLaw(cfg["sigma"], scalar_lqg_gain(R, grid))
    if kind == "delayed":
        inner = dict(cfg, kind=cfg["inner"])
        return Delayed(build_law(s, grid, inner), float(cfg["delay"]))
    if kind == "class_l":
        F = np.atleast_2d(np.asarray(cfg["kernel"], dtype=float))
        idx = np.arange(grid.N + 1)
        V = np.where((idx[:, None] > idx[None, :])[:, :, None, None], F, 0.0)
        return ClassL(VolterraKernel(grid, V), cfg.get("offset"))
    ctrl = solve_control_riccati(s.model, s.cost, grid)
    if kind == "state_feedback":
        return StateFeedback(scale * ctrl.K)
    if kind == "separated_lqg":
        return SeparatedLQG(scale * ctrl.K, solve_filter_riccati(s.model, grid))
    raise ValueError(f"unknown law kind {kind!r}")


# --------------------------------------------------------------------------- experiments

def _write_trajectory(dest: Path, grid: TimeGrid, columns: dict) -> None:
    names = list(columns)
    with open(dest, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for k, t in enumerate(grid.nodes):
            w.writerow([repr(float(t))] + [repr(float(columns[n][k])) for n in names])


def _trajectory(s: Scenario, law, out: Path) -> str:
    noise = sample_noise(s.noise, s.grid, s.seed)
    lp = solve_closed_loop(s.model, law, noise)
    cols = {}
    for p in (lp.x, lp.y, lp.u):
        for i in range(p.dim):
            cols[f"{p.name}_{i}"] = p.values[:, i]
    name = f"trajectory_seed{s.seed}.csv"
    _write_trajectory(out / name, s.grid, cols)
    return name


def _gaussian(s: Scenario) -> bool:
    return isinstance(s.noise, Wiener)


def _exp_estimate_cost(s, law, out):
    target = None
    kind, scale = s.law_config()["kind"], float(s.law_config().get("gain_scale", 1.0))
    try:
        if kind == "state_feedback" and scale == 1.0:
            target = full_information_cost(s.model, solve_control_riccati(s.model, s.cost, s.grid), s.noise)
        elif kind == "zero":
            target = open_loop_cost(s.model, s.cost, s.grid, s.noise)
    except SepControlError:
        target = None
    return estimate_cost(s.model, s.cost, law, s.M, s.seed, s.grid, s.noise, target), [_trajectory(s, law, out)]


def _exp_cost_decomposition(s, law, out):
    ctrl = solve_control_riccati(s.model, s.cost, s.grid)
    filt = solve_filter_riccati(s.model, s.grid) if law.observes == "output" and _gaussian(s) else None
    rep = cost_decomposition_check(s.model, s.cost, law, s.M, s.seed, s.grid, ctrl, filt, s.noise)
    files = ["P.csv", "K.csv"]
    write_schedule_csv(out / "P.csv", s.grid, "P", ctrl.P)
    write_schedule_csv(out / "K.csv", s.grid, "K", ctrl.K)
    if filt is not None:
        write_schedule_csv(out / "Sigma.csv", s.grid, "Sigma", filt.Sigma)
        write_schedule_csv(out / "L.csv", s.grid, "L", filt.L)
        files += ["Sigma.csv", "L.csv"]
    return rep, files


def _exp_sigma_invariance(s, law, out):
    delay = float(s.tolerance("delay", 0.05))
    if isinstance(law, ZeroLaw):
        law = build_law(s, s.grid, {"kind": "separated_lqg"})
    laws = [ZeroLaw(), law, Delayed(law, delay)]
    rep = sigma_invariance_experiment(s.model, laws, s.M, s.seed, s.grid, probes=[0.5 * s.grid.T, s.grid.T],
                                      noise_spec=s.noise, path_tol=float(s.tolerance("path", 1e-10)))
    return rep, []


def _exp_optimality(s, law, out):
    perts = s.tolerance("perturbations", [-0.2, 0.2])
    rate = s.tolerance("poisson_rate", 1.0)
    return optimality_comparison(s.model, s.cost, s.M, s.seed, perts, s.grid, rate), []


def _exp_ito_identity(s, law, out):
    levels = (100, 10, 1) if s.grid.N % 100 == 0 else (1,)
    paths = int(s.tolerance("ito_paths", 20))
    seeds = range(s.seed, s.seed + min(paths, s.M))
    rep = pathwise_ito_identity_check(s.model, s.cost, lambda g: build_law(s, g), s.noise, seeds, s.grid, levels,
                                      tol=float(s.tolerance("ito_relative", 0.01)),
                                      min_slope=float(s.tolerance("ito_slope", 0.8)))
    return rep, []


def _check_report(name, chk, M, seeds, t0):
    return ExperimentReport(name, {}, {}, {}, chk.passed, "pass" if chk.passed else "fail", chk.rule, M, seeds,
                            time.perf_counter() - t0, {"checks": chk.details, "error": chk.error},
                            None if chk.passed else {"error": chk.error,
                                                     "first": next((d for d in chk.details
                                                                    if not d.get("agree", d.get("converged", True))),
                                                                   None)})


def _exp_causality(s, law, out):
    t0 = time.perf_counter()
    n = int(s.tolerance("causality_seeds", 2))
    seeds = list(range(s.seed, s.seed + n))
    cuts = s.tolerance("cut_times", [0.25 * s.grid.T, 0.5 * s.grid.T, 0.75 * s.grid.T])
    chk = causality_check(s.model, law, seeds, cuts, s.noise, s.grid)
    return _check_report("causality_check", chk, len(seeds), (seeds[0], seeds[-1]), t0), []


def _exp_uniqueness(s, law, out):
    t0 = time.perf_counter()
    noise = sample_noise(s.noise, s.grid, s.seed)
    chk = uniqueness_check(s.model, law, noise, starts=[s.seed, s.seed + 1], tol=float(s.tolerance("picard", 1e-8)))
    return _check_report("uniqueness_check", chk, 1, (s.seed, s.seed), t0), []


def _exp_step_change(s, law, out):
    t0 = time.perf_counter()
    cfg = s.law_config()
    if cfg["kind"] != "shiryaev":
        raise ValueError("the step_change experiment needs law.kind = shiryaev")
    sigma = float(cfg["sigma"])
    R = float(np.asarray(s.cost.R.at(0.0)).reshape(-1)[0])
    sweep = detection_sweep(sigma, R, range(s.seed, s.seed + s.M), s.grid)
    one = run_step_change_scenario(sigma, R, s.seed, s.grid)
    name = f"step_change_seed{s.seed}.csv"
    _write_trajectory(out / name, s.grid, one.paths)
    rms_tol = float(s.tolerance("oracle_rms", 5e-3))
    rate = s.tolerance("detection_rate")
    ok = sweep["oracle_rms_max"] <= rms_tol and sweep["innovation_identity_max"] <= 1e-12
    rule = f"per-path RMS |rho - rho_oracle| <= {rms_tol:g}; innovation identity to 1e-12"
    if rate is not None:
        ok = ok and sweep["detection_rate"] >= rate
        rule += f"; detection rate >= {rate:g}"
    est = {k: sweep[k] for k in ("detection_rate", "mean_cost", "oracle_rms_mean", "oracle_rms_max",
                                 "innovation_identity_max")}
    status = "insufficient-power" if rate is not None and s.M < 100 else ("pass" if ok else "fail")
    first = None if ok else {"seeds_missed": sweep["missed_seeds"][:10]}
    rep = ExperimentReport("step_change", est, {"mean_cost": sweep["cost_se"]},
                           {"clamp_count": sweep["clamp_count"], "example": one.summary()}, bool(ok), status, rule,
                           s.M, (s.seed, s.seed + s.M - 1), time.perf_counter() - t0,
                           {"sigma": sigma, "R": R}, first)
    return rep, [name]


REGISTRY = {
    "estimate_cost": _exp_estimate_cost,
    "cost_decomposition": _exp_cost_decomposition,
    "sigma_invariance": _exp_sigma_invariance,
    "optimality": _exp_optimality,
    "ito_identity": _exp_ito_identity,
    "causality": _exp_causality,
    "uniqueness": _exp_uniqueness,
    "step_change": _exp_step_change,
}


def run_scenario(s: Scenario, out: str | os.PathLike | None = None, log=None) -> int:
    """Run the scenario's experiments in order and write artifacts to its output directory.

    Writes ``report.json`` (verdicts, deterministic), ``<experiment>.json``
    (full reports), ``timing.json``, the canonical scenario document and
    CSV trajectories.  A ``FAILED`` marker file lists failing experiments.
    Returns the exit status.
    """
    out = Path(out or s.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    (out / "scenario.cfg").write_text(serialize_scenario(s))
    law = build_law(s, s.grid)
    results, timing, failures = [], {}, []
    for name in s.experiments:
        t0 = time.perf_counter()
        try:
            rep, files = REGISTRY[name](s, law, out)
        except SepControlError as exc:
            results.append({"name": name, "status": "fail", "passed": False, "error": str(exc)})
            failures.append(f"{name}: {exc}")
            timing[name] = time.perf_counter() - t0
            if log:
                log(f"{name}: ERROR {exc}")
            continue
        emit_report(rep, "full", out / f"{name}.json", files)
        results.append({"name": name, **_summary(rep)})
        timing[name] = rep.wall_clock
        if rep.status == "fail":
            failures.append(f"{name}: {rep.rule}")
        if log:
            log(f"{name}: {rep.status}")
    statuses = [r["status"] for r in results]
    overall = "fail" if "fail" in statuses else ("insufficient-power" if "insufficient-power" in statuses else "pass")
    summary = {"scenario": s.name, "status": overall, "experiments": results}
    (out / "report.json").write_text(json.dumps(_plain(summary), sort_keys=True, indent=2) + "\n")
    (out / "timing.json").write_text(json.dumps(_plain(timing), sort_keys=True, indent=2) + "\n")
    if overall == "fail":
        marker.write_text("\n".join(failures) + "\n")
    return EXIT[overall]


# --------------------------------------------------------------------------- main

def _load(args) -> Scenario:
    if args.preset:
        s = preset(args.preset)
    else:
        s = parse_scenario(Path(args.scenario).read_text())
    overrides = {"M": getattr(args, "paths", None), "seed": getattr(args, "seed", None),
                 "grid.N": getattr(args, "steps", None), "out": getattr(args, "out", None)}
    if any(v is not None for v in overrides.values()):
        s = s.with_overrides(**overrides)
    return s


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sepcontrol", description="LQG separation experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in ("run", "validate"):
        p = sub.add_parser(cmd)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--scenario", help="scenario document")
        src.add_argument("--preset", choices=sorted(PRESETS), help="shipped scenario")
        if cmd == "run":
            p.add_argument("--paths", type=int, help="number of Monte Carlo paths M")
            p.add_argument("--seed", type=int, help="first seed")
            p.add_argument("--steps", type=int, help="grid steps N")
            p.add_argument("--out", help="output directory")
    sub.add_parser("list-presets")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        for name in sorted(PRESETS):
            first = PRESETS[name].splitlines()[0].lstrip("# ")
            print(f"{name}: {first}")
        return 0
    try:
        s = _load(args)
    except ValidationError as exc:
        print(exc, file=sys.stderr)
        return EXIT["invalid"]
    except OSError as exc:
        print(f"cannot read scenario: {exc}", file=sys.stderr)
        return EXIT["invalid"]
    if args.command == "validate":
        print(f"{s.name}: valid")
        return 0
    status = run_scenario(s, log=print)
    print(f"{s.name}: {[k for k, v in EXIT.items() if v == status][0]} (artifacts in {args.out or s.out})")
    return status


if __name__ == "__main__":
    sys.exit(main())
