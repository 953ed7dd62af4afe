"""Command-line front end: run closed-loop batches, analyze, plot.

Verbs:
  run <config>      simulate every configured controller from every initial
                    condition, writing one CSV per trajectory plus summary.txt
  analyze <config>  equilibrium scan, incompatibility sweep, ROA certificate,
                    level estimates -> analysis.txt
  plot <run_dir>    phase.svg from a previous run (planar scenarios only)

Configs are TOML; see README for the schema.  Built-in scenario: planar-v1.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import tomli

from .analysis import (
    SamplingPlan,
    _grid_points,
    equilibrium_scan,
    incompatibility_test,
    largest_certified_level,
    limit_estimates,
    q1_bound_curve,
    roa_certify,
)
from .controllers import (
    PenaltyConfig,
    PenaltyMode,
    clf_cbf_qp_controller,
    make_penalty_controller,
    safety_filter_controller,
)
from .errors import CertificateRefusal, SafeStabError, ScenarioError
from .simulation import SimConfig, SimulationAbort, simulate, write_trajectory_csv
from .svgplot import render_phase_svg
from .systems import resolve_scenario, scenario_from_tables, validate_scenario

_META_NAME = "run_meta.json"


class ConfigError(Exception):
    pass


def _say(quiet, *args):
    if not quiet:
        print(*args)


def _load_toml(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    try:
        return tomli.loads(raw.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}")


def _build_scenario(cfg, config_dir):
    sc = cfg.get("scenario")
    if sc is None:
        raise ConfigError("config needs a [scenario] table")
    if "name" in sc:
        try:
            return resolve_scenario(sc["name"]), {"name": sc["name"]}
        except ScenarioError as exc:
            raise ConfigError(str(exc))
    if "path" in sc:
        nested = _load_toml(Path(config_dir) / sc["path"])
        table = nested.get("custom", nested)
    elif "custom" in sc:
        table = sc["custom"]
    else:
        raise ConfigError(
            "scenario table needs 'name', 'custom' tables, or 'path'"
        )
    try:
        scenario = scenario_from_tables(table)
    except (ScenarioError, SafeStabError) as exc:
        raise ConfigError(f"invalid scenario: {exc}")
    return scenario, {"custom": table}


def _sim_config(cfg, dt_override=None):
    sim = cfg.get("sim", {})
    kwargs = {}
    for key in (
        "dt",
        "t_max",
        "convergence_radius",
        "stagnation_speed",
        "stagnation_window",
    ):
        if key in sim:
            kwargs[key] = float(sim[key])
    if "zero_order_hold" in sim:
        kwargs["zero_order_hold"] = bool(sim["zero_order_hold"])
    if dt_override is not None:
        kwargs["dt"] = dt_override
    try:
        return SimConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"bad [sim] table: {exc}")


def _nominal_from_spec(spec, gain, scenario):
    if spec == "zero":
        return lambda x: np.zeros(scenario.input_dim)
    if spec == "linear-feedback":
        if scenario.input_dim != scenario.state_dim:
            raise ConfigError(
                "linear-feedback nominal controller needs input_dim == state_dim"
            )
        g = float(gain)
        return lambda x: g * np.asarray(x, dtype=float)
    raise ConfigError(f"unknown nominal controller {spec!r}")


def _build_controllers(cfg, scenario, eps_override=None):
    entries = cfg.get("controllers", [])
    if not entries:
        raise ConfigError("no controllers configured")
    built = []
    for entry in entries:
        kind = entry.get("kind")
        if kind == "penalty":
            mode_str = entry.get("mode", "safety-hard")
            try:
                mode = PenaltyMode(mode_str)
            except ValueError:
                raise ConfigError(f"unknown penalty mode {mode_str!r}")
            eps = float(entry.get("epsilon", 0.01))
            if eps_override is not None:
                eps = eps_override
            if eps <= 0:
                raise ConfigError("penalty epsilon must be positive")
            label = f"penalty-{mode.value}-eps{eps:g}"
            built.append((label, make_penalty_controller(scenario, PenaltyConfig(mode, eps))))
        elif kind == "clf-cbf-qp":
            p = float(entry.get("p", 1.0))
            if p <= 0:
                raise ConfigError("clf-cbf-qp weight p must be positive")
            label = f"clf-cbf-qp-p{p:g}"

            def qp_controller(x, _p=p):
                u, _ = clf_cbf_qp_controller(scenario, x, _p)
                return u

            built.append((label, qp_controller))
        elif kind == "safety-filter":
            spec = entry.get("u_nom", "zero")
            gain = entry.get("gain", -1.0)
            u_nom = _nominal_from_spec(spec, gain, scenario)
            label = f"safety-filter-{spec}"

            def filt(x, _u_nom=u_nom):
                return safety_filter_controller(scenario, x, _u_nom(x))

            built.append((label, filt))
        else:
            raise ConfigError(f"unknown controller kind {kind!r}")
    return built


def _initial_conditions(cfg, scenario):
    ics = cfg.get("initial_conditions")
    if ics is None:
        ics = cfg.get("run", {}).get("initial_conditions")
    if not ics:
        raise ConfigError("no initial_conditions configured")
    out = []
    for row in ics:
        x0 = np.asarray(row, dtype=float)
        if x0.shape != (scenario.state_dim,):
            raise ConfigError(f"initial condition {row!r} has wrong dimension")
        out.append(x0)
    return out


def _fmt_state(x):
    return "(" + ", ".join(f"{v:.17g}" for v in x) + ")"


def cmd_run(args) -> int:
    try:
        cfg = _load_toml(args.config)
        scenario, scenario_meta = _build_scenario(cfg, Path(args.config).parent)
        sim_cfg = _sim_config(cfg, args.dt)
        controllers = _build_controllers(cfg, scenario, args.eps)
        ics = _initial_conditions(cfg, scenario)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(args.out or cfg.get("outputs", {}).get("directory", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    summary_lines = []
    counts = {}
    csv_files = []
    had_error = False
    for label, controller in controllers:
        for k, x0 in enumerate(ics):
            name = f"{label}__ic{k:02d}.csv"
            try:
                traj = simulate(scenario, controller, x0, sim_cfg)
            except SimulationAbort as exc:
                had_error = True
                summary_lines.append(
                    f"{label} ic{k:02d} x0={_fmt_state(x0)} outcome=error "
                    f"detail={exc.cause}"
                )
                counts[(label, "error")] = counts.get((label, "error"), 0) + 1
                continue
            write_trajectory_csv(traj, out_dir / name)
            csv_files.append(name)
            kind = traj.outcome.kind.value
            counts[(label, kind)] = counts.get((label, kind), 0) + 1
            summary_lines.append(
                f"{label} ic{k:02d} x0={_fmt_state(x0)} outcome={kind} "
                f"t={traj.outcome.t:.17g} x_final={_fmt_state(traj.final_state)} "
                f"min_h={traj.min_h:.17g}"
            )
            _say(args.quiet, f"{label} ic{k:02d}: {kind} at t={traj.outcome.t:.3f}")

    summary_lines.append("")
    for (label, kind), count in sorted(counts.items()):
        summary_lines.append(f"count {label} {kind} = {count}")
    (out_dir / "summary.txt").write_text("\n".join(summary_lines) + "\n")

    meta = {
        "scenario": scenario_meta,
        "state_dim": scenario.state_dim,
        "input_dim": scenario.input_dim,
        "working_region": scenario.working_region.tolist(),
        "csv_files": csv_files,
        "controllers": [label for label, _ in controllers],
        "initial_conditions": [x0.tolist() for x0 in ics],
        "dt": sim_cfg.dt,
        "seed": args.seed,
    }
    (out_dir / _META_NAME).write_text(json.dumps(meta, sort_keys=True, indent=1))
    _say(args.quiet, f"wrote {len(csv_files)} trajectories to {out_dir}")
    return 2 if had_error else 0


def _fmt_value(v):
    if v is None:
        return "undefined"
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.12g}"
    return str(v)


def cmd_analyze(args) -> int:
    try:
        cfg = _load_toml(args.config)
        scenario, _ = _build_scenario(cfg, Path(args.config).parent)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    ana = cfg.get("analysis")
    if ana is None:
        print("error: config needs an [analysis] table", file=sys.stderr)
        return 1
    try:
        validate_scenario(scenario, seed=int(ana.get("seed", 0)))
    except SafeStabError as exc:
        print(f"error: scenario validation failed: {exc}", file=sys.stderr)
        return 1

    plan = SamplingPlan(
        grid_resolution=int(ana.get("grid_resolution", 81)),
        random_samples=int(ana.get("random_samples", 2000)),
        boundary_samples=int(ana.get("boundary_samples", 512)),
        seed=int(args.seed if args.seed is not None else ana.get("seed", 0)),
    )
    nu = float(ana.get("nu", 1.0))
    radius_v = float(ana.get("neighborhood_radius_v", 0.05))
    radius_w = float(ana.get("neighborhood_radius_w", 0.1))
    eq_eps = float(ana.get("equilibrium_epsilon", 0.01))
    eq_radius = float(ana.get("equilibrium_radius", 0.5))
    limit_radii = [float(r) for r in ana.get(
        "limit_radii", [0.64, 0.32, 0.16, 0.08, 0.04, 0.02, 0.01]
    )]

    out_dir = Path(args.out or cfg.get("outputs", {}).get("directory", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = [f"scenario = {scenario.name}", f"nu = {_fmt_value(nu)}"]

    scan = equilibrium_scan(scenario, eq_eps, plan, eq_radius)
    lines += [
        f"equilibrium_epsilon = {_fmt_value(eq_eps)}",
        f"n1 = {_fmt_value(scan.n1)}",
        f"n2 = {_fmt_value(scan.n2)}",
        f"n3 = {_fmt_value(scan.n3)}",
        f"n4 = {_fmt_value(scan.n4)}",
        f"epsilon_q1_bound = {_fmt_value(scan.epsilon_q1_bound)}",
        f"epsilon_q2_bound = {_fmt_value(scan.epsilon_q2_bound)}",
        f"boundary_samples_found = {scan.boundary_count}",
    ]
    for x, res in scan.q1_candidates:
        lines.append(f"q1_candidate = {_fmt_state(x)} residual {res:.3g}")
    for x, res in scan.q2_candidates:
        lines.append(f"q2_candidate = {_fmt_state(x)} residual {res:.3g}")
    for r, n3, bound in q1_bound_curve(scenario, plan, [eq_radius * s for s in (0.25, 0.5, 1.0, 2.0)]):
        lines.append(
            f"q1_bound_curve = radius {_fmt_value(r)} n3 {_fmt_value(n3)} "
            f"epsilon_bound {_fmt_value(bound)}"
        )

    incompatible = []
    for x in _grid_points(scenario.working_region, plan.grid_resolution):
        try:
            if incompatibility_test(scenario, x).incompatible:
                incompatible.append(x)
        except SafeStabError:
            continue
    lines.append(f"incompatible_sample_count = {len(incompatible)}")
    for x in incompatible[:10]:
        lines.append(f"incompatible_sample = {_fmt_state(x)}")

    level = largest_certified_level(scenario, plan)
    lines += [
        f"nu_incompatibility = {_fmt_value(level.nu_incompatibility)}",
        f"nu_boundary = {_fmt_value(level.nu_boundary)}",
        f"nu_star = {_fmt_value(level.nu_star)}",
    ]

    limits = limit_estimates(scenario, limit_radii)
    lines += [
        f"l1_estimate = {_fmt_value(limits.l1_estimate)}",
        f"l2_estimate = {_fmt_value(limits.l2_estimate)}",
        f"l1_monotone_nonincreasing = {limits.l1_monotone_nonincreasing}",
        f"l2_monotone_nonincreasing = {limits.l2_monotone_nonincreasing}",
    ]

    try:
        cert = roa_certify(
            scenario,
            nu,
            plan,
            neighborhood_radius_V=radius_v,
            neighborhood_radius_W=radius_w,
            limit_radii=limit_radii,
        )
    except CertificateRefusal as exc:
        lines.append("certificate_issued = false")
        lines.append(f"certificate_refusal = {exc.reason}")
        if exc.witness is not None:
            lines.append(f"certificate_witness = {_fmt_state(exc.witness)}")
        (out_dir / "analysis.txt").write_text("\n".join(lines) + "\n")
        print(
            f"certificate refused: {exc.reason}"
            + (f" witness {_fmt_state(exc.witness)}" if exc.witness is not None else ""),
            file=sys.stderr,
        )
        return 3
    lines += [
        "certificate_issued = true",
        f"incompatible_free = {str(cert.incompatible_free).lower()}",
        f"m1 = {_fmt_value(cert.m1)}",
        f"m2 = {_fmt_value(cert.m2)}",
        f"m3 = {_fmt_value(cert.m3)}",
        f"m4 = {_fmt_value(cert.m4)}",
        f"epsilon_bar = {_fmt_value(cert.epsilon_bar)}",
        f"epsilon_hat = {_fmt_value(cert.epsilon_hat)}",
        "epsilon_hat_note = heuristic margin 0.9 on sampled limits",
        f"neighborhood_radius_v = {_fmt_value(cert.neighborhood_radius_V)}",
        f"neighborhood_radius_w = {_fmt_value(cert.neighborhood_radius_W)}",
        f"degenerate = {str(cert.degenerate).lower()}",
        f"sample_count = {cert.sample_count}",
    ]
    (out_dir / "analysis.txt").write_text("\n".join(lines) + "\n")
    _say(args.quiet, f"analysis written to {out_dir / 'analysis.txt'}")
    return 0


def _parse_csv(path):
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    n = sum(1 for c in header if c.startswith("x"))
    states = []
    for line in lines[1:]:
        fields = line.split(",")
        states.append([float(v) for v in fields[1 : 1 + n]])
    return np.array(states)


def cmd_plot(args) -> int:
    run_dir = Path(args.run_dir)
    meta_path = run_dir / _META_NAME
    if not meta_path.exists():
        print(f"error: {run_dir} has no {_META_NAME} (not a run directory)", file=sys.stderr)
        return 1
    meta = json.loads(meta_path.read_text())
    if meta["state_dim"] != 2:
        print("error: plotting supports planar scenarios only", file=sys.stderr)
        return 1
    sc_meta = meta["scenario"]
    try:
        if "name" in sc_meta:
            scenario = resolve_scenario(sc_meta["name"])
        else:
            scenario = scenario_from_tables(sc_meta["custom"])
    except SafeStabError as exc:
        print(f"error: cannot rebuild scenario: {exc}", file=sys.stderr)
        return 1

    if not meta["csv_files"]:
        print("error: run directory contains no trajectories", file=sys.stderr)
        return 1
    trajectories = []
    for name in meta["csv_files"]:
        label = name.split("__")[0]
        trajectories.append((label, _parse_csv(run_dir / name)))

    certified_nu = None
    analysis_path = run_dir / "analysis.txt"
    if analysis_path.exists():
        issued = False
        nu = None
        for line in analysis_path.read_text().splitlines():
            if line.startswith("certificate_issued"):
                issued = line.split("=")[1].strip() == "true"
            elif line.startswith("nu ="):
                nu = float(line.split("=")[1].strip())
        if issued and nu is not None:
            certified_nu = nu

    svg = render_phase_svg(scenario, trajectories, certified_nu)
    out_dir = Path(args.out) if args.out else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "phase.svg").write_text(svg)
    _say(args.quiet, f"wrote {out_dir / 'phase.svg'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="safestab",
        description="Penalty-based safe stabilizing feedback: run, analyze, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate configured controllers")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--dt", type=float, default=None)
    p_run.add_argument("--eps", type=float, default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_ana = sub.add_parser("analyze", help="equilibria, incompatibility, ROA")
    p_ana.add_argument("config")
    p_ana.add_argument("--seed", type=int, default=None)
    p_ana.add_argument("--out", default=None)
    p_ana.add_argument("--quiet", action="store_true")
    p_ana.set_defaults(func=cmd_analyze)

    p_plot = sub.add_parser("plot", help="render phase.svg from a run directory")
    p_plot.add_argument("run_dir")
    p_plot.add_argument("--out", default=None)
    p_plot.add_argument("--quiet", action="store_true")
    p_plot.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
