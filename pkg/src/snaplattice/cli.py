"""Command-line entry point.

Subcommands: unit, states, simulate, fit, design.  Every run writes one
manifest.json (subcommand, config digest, seed, version, timestamps, output
paths) beside its result tables.  Result tables are plain text and
byte-stable under a fixed seed; exit codes: 0 ok, 2 config error, 3 numerical
failure, 4 infeasible design.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, backends
from .configio import (
    config_digest,
    emit_finger_config,
    load_document,
    parse_build_options,
    parse_finger,
    parse_problem,
    parse_profile,
)
from .errors import (
    ConfigError,
    NoConvergence,
    NoFeasiblePoint,
    SnapLatticeError,
    StepSizeUnderflow,
)
from .geometry import UnitCellGeometry
from .inverse import bayesian_optimize, segment_sweep
from .lattice import build_lattice, dump_lattice
from .regression import Dataset, FeatureLibrary, build_feature_matrix, rfe, train_test_split
from .springs import (
    ALPHA_BISTABLE_LIMIT,
    classify_stability,
    dimensionless_groups,
    spring_params,
)
from .statics import enumerate_stable_states, export_states
from .dynamics import integrate, resetting_time

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def _fmt(x: float) -> str:
    return f"{x:.10g}"


class RunDir:
    """Output directory plus the run manifest."""

    def __init__(self, out: str | Path, subcommand: str, config_path, seed: int):
        self.path = Path(out)
        self.path.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "subcommand": subcommand,
            "tool_version": __version__,
            "backend": backends.BACKEND_NAME,
            "seed": seed,
            "config_digest": config_digest(config_path) if config_path else None,
            "started_unix": time.time(),
            "outputs": [],
        }

    def write(self, name: str, text: str) -> Path:
        p = self.path / name
        p.write_text(text)
        self.manifest["outputs"].append(name)
        return p

    def finish(self):
        self.manifest["finished_unix"] = time.time()
        (self.path / "manifest.json").write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def cmd_unit(args) -> int:
    doc = load_document(args.config)
    finger = parse_finger(doc)
    unit = finger.units[0]
    mat = finger.material
    run = RunDir(args.out, "unit", args.config, args.seed)

    def describe(u: UnitCellGeometry) -> list[str]:
        p = spring_params(u, mat)
        g = dimensionless_groups(u)
        cls = classify_stability(p)
        lines = [
            f"H = {_fmt(u.dome_height)} mm, t = {_fmt(u.dome_thickness)} mm, "
            f"r_b = {_fmt(u.dome_base_radius)} mm, E = {_fmt(mat.youngs_modulus)} MPa",
            f"pi1 = {_fmt(g.pi1)}  pi2 = {_fmt(g.pi2)}  pi3 = {_fmt(g.pi3)}",
            f"k_b = {_fmt(p.k_b)} N/mm  alpha = {_fmt(p.alpha)}  d = {_fmt(p.d)} mm",
            f"k_l = {_fmt(p.k_l)} N/mm  k_theta = {_fmt(p.k_theta)} N*mm/rad",
            f"class = {cls.kind.value}",
        ]
        if cls.kind.value == "bistable":
            lines.append(
                f"barrier = {_fmt(cls.energy_barrier)} N*mm at {_fmt(cls.barrier_extension)} mm; "
                f"well = {_fmt(cls.second_well_energy)} N*mm at {_fmt(cls.well_extension)} mm")
        return lines

    report = ["# unit report"] + describe(unit)
    run.write("report.txt", "\n".join(report) + "\n")
    print("\n".join(report))

    if args.map:
        msec = doc.get("map", {})
        h_lo, h_hi = msec.get("h_range", [2.0, 5.0])
        t_lo, t_hi = msec.get("t_range", [0.5, 1.2])
        rows = ["H\tt\talpha\td\tclass"]
        from dataclasses import replace as _replace
        for H in np.linspace(float(h_lo), float(h_hi), int(msec.get("h_steps", 16))):
            for t in np.linspace(float(t_lo), float(t_hi), int(msec.get("t_steps", 8))):
                if t >= 0.9 * H:
                    continue
                u = _replace(unit, dome_height=float(H), dome_thickness=float(t))
                try:
                    p = spring_params(u, mat)
                except SnapLatticeError:
                    rows.append(f"{_fmt(H)}\t{_fmt(t)}\tnan\tnan\tno-travel")
                    continue
                cls = classify_stability(p).kind.value
                rows.append(f"{_fmt(H)}\t{_fmt(t)}\t{_fmt(p.alpha)}\t{_fmt(p.d)}\t{cls}")
        run.write("map.tsv", "\n".join(rows) + "\n")
        print(f"phase map written to {run.path / 'map.tsv'}")
    run.finish()
    return EXIT_OK


def cmd_states(args) -> int:
    doc = load_document(args.config)
    finger = parse_finger(doc)
    opts = parse_build_options(doc)
    model = build_lattice(finger, opts)
    states = enumerate_stable_states(model, seed=args.seed, threads=args.threads)
    run = RunDir(args.out, "states", args.config, args.seed)
    run.write("states.tsv", export_states(states))
    shape_lines = ["pattern\tnode\tx\ty\ton_layer"]
    for s in states:
        pos = s.q.reshape(-1, 2)
        for nd in model.nodes:
            shape_lines.append(
                f"{s.pattern}\t{nd.id}\t{_fmt(pos[nd.id][0])}\t{_fmt(pos[nd.id][1])}\t"
                f"{int(nd.on_limiting_layer)}")
    run.write("shapes.tsv", "\n".join(shape_lines) + "\n")
    run.write("lattice.txt", dump_lattice(model))
    run.finish()
    print(f"{len(states)} stable states -> {run.path / 'states.tsv'}")
    return EXIT_OK if states else EXIT_NUMERICAL


def cmd_simulate(args) -> int:
    doc = load_document(args.config)
    finger = parse_finger(doc)
    opts = parse_build_options(doc)
    model = build_lattice(finger, opts)
    profile, t_end, dt_out = parse_profile(doc)
    sim = doc.get("simulation", {})
    run = RunDir(args.out, "simulate", args.config, args.seed)
    try:
        traj, log = integrate(
            model, model.rest_state(), profile, t_end,
            rtol=float(sim.get("rtol", 1e-6)), atol=float(sim.get("atol", 1e-9)),
            dt_out=dt_out)
    except StepSizeUnderflow as ex:
        print(f"integration failed: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL

    tipn = model.report_tip_id
    rows = ["t\ttip_x\ttip_y\tenergy\tpressure"]
    for i, t in enumerate(traj.times):
        pos = traj.states[i].q.reshape(-1, 2)
        rows.append(
            f"{_fmt(t)}\t{_fmt(pos[tipn][0])}\t{_fmt(pos[tipn][1])}\t"
            f"{_fmt(traj.energies[i])}\t{_fmt(traj.pressures[i])}")
    run.write("trajectory.tsv", "\n".join(rows) + "\n")
    ev_rows = ["unit\tkind\ttime"]
    for e in log.events:
        ev_rows.append(f"{e.unit}\t{e.kind}\t{_fmt(e.time)}")
    run.write("events.tsv", "\n".join(ev_rows) + "\n")
    if args.reset_times:
        rt_rows = ["unit\treset_time"]
        for u in range(finger.n_units):
            try:
                rt = resetting_time(traj, log, profile, u)
            except SnapLatticeError:
                rt = None
                rt_rows.append(f"{u}\tnever-snapped")
                continue
            rt_rows.append(f"{u}\t{'held' if rt is None else _fmt(rt)}")
        run.write("reset_times.tsv", "\n".join(rt_rows) + "\n")
    run.finish()
    print(f"{len(log.events)} events -> {run.path / 'events.tsv'}")
    return EXIT_OK


def _read_dataset(path: str, target: str) -> Dataset:
    from .springs import curvature_radius
    from .geometry import UnitCellGeometry as _U

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty dataset")
        names = {n.strip().lower(): n for n in reader.fieldnames}
        need = {"h", "t", "e", "y"}
        if not need <= set(names):
            raise ConfigError(f"{path}: header must name H, t, E, y (have {reader.fieldnames})")
        has_R = "r" in names
        has_rb = "r_b" in names
        if not (has_R or has_rb):
            raise ConfigError(f"{path}: header needs either R or r_b")
        for ln, rec in enumerate(reader, start=2):
            try:
                H = float(rec[names["h"]]); t = float(rec[names["t"]])
                E = float(rec[names["e"]]); y = float(rec[names["y"]])
                if has_R:
                    R = float(rec[names["r"]])
                else:
                    rb = float(rec[names["r_b"]])
                    R = (rb * rb + H * H) / (2.0 * H)
            except (KeyError, ValueError) as ex:
                raise ConfigError(f"{path}:{ln}: bad row ({ex})") from ex
            rows.append((H, t, R, E, y))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], target)


def cmd_fit(args) -> int:
    doc = load_document(args.config) if args.config else {}
    sec = doc.get("fit", {})
    target = str(sec.get("target", args.target or "alpha"))
    data = _read_dataset(args.data, target)
    lib = FeatureLibrary(int(sec.get("max_degree", 3)), int(sec.get("interaction_degree", 2)))
    lam = float(sec.get("lambda", 1e-6))
    folds = int(sec.get("cv_folds", 5))
    frac = float(sec.get("train_fraction", 0.7))
    train, test = train_test_split(data, frac, args.seed)
    Xtr = build_feature_matrix(lib, train.groups())
    Xte = build_feature_matrix(lib, test.groups())
    fit = rfe(Xtr, train.normalized_target(), lib, lam=lam, cv_folds=folds,
              seed=args.seed, X_test=Xte, y_test=test.normalized_target())

    run = RunDir(args.out, "fit", args.config or args.data, args.seed)
    w_rows = ["feature\texponents\tweight"]
    for idx, w in zip(fit.selected, fit.weights):
        w_rows.append(f"{lib.names()[idx]}\t{lib.exponents[idx]}\t{_fmt(w)}")
    w_rows.append(f"intercept\t(0, 0, 0)\t{_fmt(fit.intercept)}")
    run.write("weights.tsv", "\n".join(w_rows) + "\n")
    cv_rows = ["n_features\tcv_r2"] + [f"{n}\t{_fmt(s)}" for n, s in fit.cv_curve]
    run.write("cv_curve.tsv", "\n".join(cv_rows) + "\n")
    report = [
        f"target = {target} (normalized)",
        f"rows = {data.n_rows} (train {train.n_rows} / test {test.n_rows})",
        f"library = {lib.n_features} features (n={lib.max_degree}, m={lib.interaction_degree})",
        f"selected = {len(fit.selected)} features",
        f"r2_train = {_fmt(fit.r2_train)}",
        f"r2_test = {_fmt(fit.r2_test)}",
        f"lambda = {_fmt(fit.regularization)}",
    ]
    if fit.warning:
        report.append(f"WARNING: {fit.warning}")
    run.write("fit_report.txt", "\n".join(report) + "\n")
    run.finish()
    print("\n".join(report))
    return EXIT_OK


def cmd_design(args) -> int:
    doc = load_document(args.problem)
    opts = parse_build_options(doc)
    obj, space, run_cfg = parse_problem(doc, opts)
    budget = args.budget or run_cfg["budget"]
    segments = run_cfg["segments"]
    if args.segments:
        segments = ([int(s) for s in args.segments.split(":")]
                    if ":" in args.segments else int(args.segments))
    run = RunDir(args.out, "design", args.problem, args.seed)
    try:
        if isinstance(segments, list):
            lo, hi = int(segments[0]), int(segments[-1])
            best_n, results = segment_sweep(obj, space, lo, hi, budget, seed=args.seed)
            best = results[best_n]
            curve = ["n\tbest_objective\tevaluations"]
            for n in sorted(results):
                curve.append(f"{n}\t{_fmt(results[n].best_value)}\t{results[n].evaluations}")
            run.write("objective_curve.tsv", "\n".join(curve) + "\n")
        else:
            best_n = int(segments)
            best = bayesian_optimize(obj, space, best_n, budget, seed=args.seed)
    except NoFeasiblePoint as ex:
        print(f"design infeasible: {ex}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NoConvergence, StepSizeUnderflow) as ex:
        print(f"numerical failure: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL

    from .inverse import GripperAssembly
    geom = best.best_geometry
    finger = geom.finger if isinstance(geom, GripperAssembly) else geom
    extra = {"variant": obj.variant, "segments": best_n,
             "objective": float(best.best_value)}
    if isinstance(geom, GripperAssembly):
        extra["base_length"] = geom.base_length
        extra["base_angle_deg"] = float(np.degrees(geom.base_angle))
    run.write("best_geometry.toml", emit_finger_config(finger, extra))
    trace = ["evaluation\trunning_best"] + [f"{i}\t{_fmt(v)}" for i, v in best.trace]
    run.write("trace.tsv", "\n".join(trace) + "\n")
    d = best.diagnostics
    report = [
        f"variant = {obj.variant}",
        f"selected_segments = {best_n}",
        f"objective = {_fmt(best.best_value)}",
        f"evaluations = {best.evaluations}",
    ]
    if d.tip is not None:
        report.append(f"tip = ({_fmt(d.tip[0])}, {_fmt(d.tip[1])})")
    if d.tip_error is not None:
        report.append(f"tip_error_mm = {_fmt(d.tip_error)}")
    if d.stiffness is not None:
        report.append(f"stiffness_N_per_mm = {_fmt(d.stiffness)}")
    if d.rt1 is not None:
        report.append(f"rt1_s = {_fmt(d.rt1)}  rt2_s = {_fmt(d.rt2)}")
    if d.apertures:
        report.append("apertures_mm = " + ", ".join(_fmt(a) for a in d.apertures))
    run.write("report.txt", "\n".join(report) + "\n")
    run.finish()
    print("\n".join(report))
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="snaplattice",
        description="Spring-lattice modeling and inverse co-design of multistable "
                    "pneumatic fingers")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="TOML config document")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("unit", help="spring constants and stability of one unit")
    common(p)
    p.add_argument("--map", action="store_true", help="sweep an (H, t) phase map")
    p.set_defaults(func=cmd_unit)

    p = sub.add_parser("states", help="enumerate stable states of a finger")
    common(p)
    p.set_defaults(func=cmd_states)

    p = sub.add_parser("simulate", help="integrate the damped dynamics under pressure")
    common(p)
    p.add_argument("--reset-times", action="store_true",
                   help="append per-unit resetting times")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="rediscover spring-constant expressions from data")
    p.add_argument("--data", required=True, help="CSV with header H,t,(R|r_b),E,y")
    p.add_argument("--config", default=None, help="TOML with a [fit] section")
    p.add_argument("--target", default=None, choices=["k_b", "alpha", "d"])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("design", help="inverse co-design from a problem document")
    p.add_argument("--problem", required=True, help="TOML problem document")
    p.add_argument("--budget", type=int, default=None, help="evaluations per segment count")
    p.add_argument("--segments", default=None,
                   help="fixed count 'N' or sweep range 'lo:hi'")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_design)

    args = ap.parse_args(argv)
    if args.out is None:
        args.out = f"runs/{args.command}-{time.strftime('%Y%m%d-%H%M%S')}"
    try:
        return args.func(args)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFeasiblePoint as ex:
        print(f"infeasible: {ex}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NoConvergence, StepSizeUnderflow) as ex:
        print(f"numerical failure: {ex}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
