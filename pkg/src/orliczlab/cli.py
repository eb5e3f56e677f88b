"""Command-line scenario runner.

    orliczlab run scenario.json [--set params.dt=5e-4 ...] [--out runs/x]
    orliczlab builtins

Every run writes ``manifest.json`` next to its CSV/JSON reports.  Exit
codes: 0 when every enabled verdict passes, 1 when a verdict fails or a
stage raises, 2 when the scenario is rejected before execution.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .config import (ConfigError, apply_overrides, build_coercivity, build_domain, build_graph, build_nf,
                     config_hash, density_schedule, effective_config, list_builtins, load_raw, validate)
from .conjugate import conjugate_for, fenchel_young_gap
from .errors import InputError, OrliczLabError
from .expr import space_field
from .graph import GraphSamplePlan, MollifiedSelection, Selection, coercivity_margin, verify_graph_axioms
from .modular import SpaceTimeGrid
from .mollify import boundary_taper, density_experiment
from .nfunc import check_condition_M, check_delta2, condition_m_pairs, default_sampling_plan, verify_n_function_axioms
from .solver import (ProblemSpec, assemble_galerkin, energy_report, integrate, minty_inclusion_check,
                     refinement_study, weak_residual)

TOOL = "orliczlab"
EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


@dataclass
class RunManifest:
    tool: str
    version: str
    name: str
    task: str
    scenario_hash: str
    wall_time: float
    status: str                                   # ok, failed or invalid
    verdicts: dict = field(default_factory=dict)  # check -> pass | fail | skipped
    failed_stage: str = None
    error: str = None
    outputs: list = field(default_factory=list)
    effective_config: dict = None
    exit_code: int = EXIT_OK
    out_dir: str = None

    def to_dict(self):
        return asdict(self)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, float, np.integer, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


class Reporter:
    """Single writer for one run directory; remembers what it wrote."""

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.outputs = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out_dir, name)

    def csv(self, name, header, rows):
        with open(self.path(name), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(header)
            for row in rows:
                wr.writerow([_fmt(v) for v in row])

    def json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")


class Context:
    def __init__(self, reporter, seed):
        self.out = reporter
        self.seed = seed
        self.verdicts = {}
        self.stage = "setup"

    def verdict(self, name, ok, expected=True):
        self.verdicts[name] = "pass" if bool(ok) == bool(expected) else "fail"

    def skip(self, name):
        self.verdicts[name] = "skipped"


# ---------------------------------------------------------------------------
# tasks: each has prepare (may raise ConfigError) and execute


def _prepare_nfunc(params):
    dom = build_domain(params.domain)
    return {"domain": dom, "nf": build_nf(params.nf, dom)}


def _exec_nfunc(params, objs, ctx):
    dom, nf = objs["domain"], objs["nf"]
    expect = params.expect
    ctx.stage = "axioms"
    if params.axioms:
        rep = verify_n_function_axioms(nf, default_sampling_plan(dom, seed=ctx.seed))
        ctx.out.json("axioms.json", rep.to_dict())
        ctx.verdict("axioms", rep.passed, expect.get("axioms", True))
    else:
        ctx.skip("axioms")
    ctx.stage = "delta2"
    if params.delta2:
        rep = check_delta2(nf, params.delta2_radii, dom.grid_points(9))
        ctx.out.json("delta2.json", rep.to_dict())
        ctx.out.csv("delta2.csv", ["radius", "ratio"], zip(rep.radii, rep.ratios))
        ctx.verdict("delta2", rep.passed, expect.get("delta2", True))
    else:
        ctx.skip("delta2")
    ctx.stage = "condition_m"
    if params.condition_m:
        rep = check_condition_M(nf, params.H, condition_m_pairs(dom, seed=ctx.seed))
        ctx.out.json("condition_m.json", rep.to_dict())
        ctx.verdict("condition_m", rep.passed, expect.get("condition_m", True))
    else:
        ctx.skip("condition_m")
    ctx.stage = "fenchel_young"
    N = params.fenchel_young_samples
    if N > 0:
        rng = np.random.default_rng(ctx.seed)
        d = dom.dim
        x = rng.uniform(size=(N, d)) * np.asarray(dom.lengths)
        a = rng.uniform(-3, 3, size=(N, d))
        b = rng.uniform(-3, 3, size=(N, d))
        gap = fenchel_young_gap(nf, conjugate_for(nf), x, a, b)
        names = [f"{v}{i + 1}" for v in "xab" for i in range(d)]
        ctx.out.csv("fenchel_young.csv", names + ["gap"], (list(r) for r in np.column_stack([x, a, b, gap])))
        ctx.verdict("fenchel_young", np.all(gap >= -params.fenchel_young_tol), expect.get("fenchel_young", True))
    else:
        ctx.skip("fenchel_young")


def _prepare_conjugate(params):
    dom = build_domain(params.domain)
    return {"domain": dom, "nf": build_nf(params.nf, dom)}


def _exec_conjugate(params, objs, ctx):
    dom, nf = objs["domain"], objs["nf"]
    d = dom.dim
    cj = conjugate_for(nf, tol=params.tol)
    ctx.stage = "tabulate"
    X = dom.grid_points(params.x_points) if params.x_points > 1 else np.asarray([dom.star_center])
    ax = np.linspace(-params.b_max, params.b_max, params.b_points)
    Bg = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1)
    V = np.stack([cj(x, Bg) for x in X])                                  # (m, b...)
    rows = []
    for i, x in enumerate(X):
        for b, v in zip(Bg.reshape(-1, d), V[i].reshape(-1)):
            rows.append(list(x) + list(b) + [v])
    names = [f"x{i + 1}" for i in range(d)] + [f"b{i + 1}" for i in range(d)] + ["value"]
    ctx.out.csv("conjugate_table.csv", names, rows)
    ctx.stage = "checks"
    zero = np.abs(np.stack([cj(x, np.zeros(d)) for x in X]))
    ctx.verdict("conjugate_origin", np.all(zero <= 1e-8))
    worst = np.inf
    for k in range(d):
        v = np.moveaxis(V, k + 1, -1)
        second = v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]
        worst = min(worst, float(np.min(second / (1.0 + np.abs(v[..., 1:-1])))))
    ctx.out.json("conjugate_checks.json", {"max_abs_at_zero": float(zero.max()), "min_second_difference": worst,
                                           "kind": type(cj).__name__})
    ctx.verdict("conjugate_convexity", worst >= -1e-8)


def _prepare_density(params):
    dom = build_domain(params.domain)
    nf = build_nf(params.nf, dom)
    sched = density_schedule(params, dom)
    try:
        grid = SpaceTimeGrid(dom, 1.0, 2, tuple(params.nx))
        ufn = space_field(params.u, dom.dim)
    except (InputError, ValueError) as exc:
        raise ConfigError(str(exc), "params.u") from None
    return {"domain": dom, "nf": nf, "schedule": sched, "grid": grid, "u": ufn}


def _exec_density(params, objs, ctx):
    grid = objs["grid"]
    ctx.stage = "sample"
    ufn = objs["u"]
    u = grid.scalar(lambda t, x: ufn(x))
    if params.taper:
        u = type(u)(grid, u.values * boundary_taper(grid)[None])
    ctx.stage = "experiment"
    rep = density_experiment(u, objs["nf"], objs["schedule"], params.lam, tol=params.tol)
    ctx.out.csv("density.csv", ["ell", "delta", "lambda", "modular_error", "c_measured"], rep.rows())
    ctx.out.json("density.json", rep.to_dict())
    errs = rep.errors
    ctx.verdict("final_error", errs[-1] < params.tol)
    ctx.verdict("strictly_decreasing", all(b < a for a, b in zip(errs[:-1], errs[1:])))


def _prepare_graph(params):
    dom = build_domain(params.domain)
    nf = build_nf(params.nf, dom)
    g = build_graph(params.graph, dom.dim)
    cp = build_coercivity(params.coercivity, nf)
    route = params.mollification.route
    try:
        ms = MollifiedSelection(Selection(g, params.graph.rule, inverse=route == "inverse"), params.eps,
                                route=route, resolution=params.mollification.resolution)
    except InputError as exc:
        raise ConfigError(str(exc), "params.mollification") from None
    return {"domain": dom, "nf": nf, "graph": g, "cp": cp, "ms": ms}


def _exec_graph(params, objs, ctx):
    dom, g, cp, ms = objs["domain"], objs["graph"], objs["cp"], objs["ms"]
    expect = params.expect
    d = dom.dim
    cj = conjugate_for(objs["nf"])
    ctx.stage = "axioms"
    plan = GraphSamplePlan.default(d, dom.lengths, params.radius, seed=ctx.seed)
    rep = verify_graph_axioms(g, cp, cj, plan)
    ctx.out.json("graph_axioms.json", rep.to_dict())
    for name, ok in rep.verdicts.items():
        ctx.verdict(name, ok, expect.get(name, True))
    ctx.stage = "mollified"
    t0, x0 = plan.tx_points[0]
    if d == 1:
        xi = np.linspace(-params.radius, params.radius, 201)[:, None]
    else:
        u = np.linspace(-params.radius, params.radius, 21)
        xi = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
    xx = np.broadcast_to(np.asarray(x0, float), xi.shape)
    tt = np.full(len(xi), float(t0))
    base = Selection(g, params.graph.rule)(tt, xx, xi)
    moll = ms(tt, xx, xi)
    names = [f"xi{i + 1}" for i in range(d)]
    ctx.out.csv("selection_table.csv", names + [f"A{i + 1}" for i in range(d)] + [f"Aeps{i + 1}" for i in range(d)],
                (list(r) for r in np.column_stack([xi, base, moll])))
    if params.pairs > 0:
        rng = np.random.default_rng(ctx.seed)
        P = rng.uniform(-params.radius, params.radius, size=(2, params.pairs, d))
        xp = np.broadcast_to(np.asarray(x0, float), P[0].shape)
        tp = np.full(params.pairs, float(t0))
        A1, A2 = ms(tp, xp, P[0]), ms(tp, xp, P[1])
        margin = np.sum((A1 - A2) * (P[0] - P[1]), axis=-1)
        ctx.out.csv("mollified_pairs.csv", [f"{v}{i + 1}" for v in ("xi", "eta") for i in range(d)] + ["margin"],
                    (list(r) for r in np.column_stack([P[0], P[1], margin])))
        ctx.verdict("mollified_monotonicity", margin.min() >= -params.monotone_tol,
                    expect.get("mollified_monotonicity", True))
    else:
        ctx.skip("mollified_monotonicity")
    cm, where = coercivity_margin(ms, cp, cj, xi, plan.tx_points)
    ctx.out.json("mollified_coercivity.json", {"margin": cm, "location": where, "route": ms.route, "eps": ms.eps})


def _problem(params):
    dom = build_domain(params.domain)
    nf = build_nf(params.nf, dom)
    sel = Selection(build_graph(params.graph, dom.dim), params.graph.rule)
    cp = build_coercivity(params.coercivity, nf)
    try:
        p = ProblemSpec(dom, tuple(params.nx), params.T, params.u0, params.f, sel, nf, cp)
    except (InputError, ValueError) as exc:
        raise ConfigError(str(exc), "params") from None
    return dom, nf, p


def _check_dt(T, dt, where):
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ConfigError(f"dt = {dt:g} does not divide T = {T:g}", where)


def _prepare_solve(params):
    dom, nf, p = _problem(params)
    _check_dt(params.T, params.dt, "params.dt")
    try:
        sys_ = assemble_galerkin(p, params.n, params.eps, params.mollification.route,
                                 resolution=params.mollification.resolution)
    except InputError as exc:
        raise ConfigError(str(exc), "params") from None
    return {"problem": p, "system": sys_, "nf": nf}


def _snapshot_rows(traj, count=11):
    U = traj.u_nodes()
    x = traj.system.x.reshape(-1, traj.system.problem.dim)
    idx = np.unique(np.linspace(0, traj.nsteps, min(count, traj.nsteps + 1)).round().astype(int))
    for m in idx:
        for xv, uv in zip(x, U[m].reshape(-1)):
            yield [traj.times[m]] + list(xv) + [uv]


def _exec_solve(params, objs, ctx):
    p, sys_ = objs["problem"], objs["system"]
    diag = params.diagnostics
    ctx.stage = "integrate"
    traj = integrate(sys_, params.dt, tol=params.tol, max_iter=params.max_iter)
    traj.to_csv(ctx.out.path("trajectory.csv"))
    ctx.out.csv("iterations.csv", ["t", "iterations", "residual"],
                zip(traj.times[1:], traj.iterations, traj.residuals))
    if params.snapshot:
        ctx.out.csv("snapshots.csv", ["t"] + [f"x{i + 1}" for i in range(p.dim)] + ["u"], _snapshot_rows(traj))
    cj = conjugate_for(p.nf)
    ctx.stage = "energy"
    if diag.energy:
        er = energy_report(traj, p, cj)
        er.to_csv(ctx.out.path("energy.csv"))
        ctx.out.json("energy.json", er.to_dict())
        ctx.verdict("energy", er.passed(diag.energy_tol))
    else:
        ctx.skip("energy")
    ctx.stage = "weak_residual"
    if diag.weak_residual:
        rows = weak_residual(traj, p)
        ctx.out.csv("weak_residual.csv", ["name", "residual", "scale"],
                    ([r["name"], r["residual"], r["scale"]] for r in rows))
        ctx.verdict("weak_residual", all(abs(r["residual"]) <= diag.weak_tol for r in rows))
    else:
        ctx.skip("weak_residual")
    ctx.stage = "minty"
    if diag.minty:
        rep = minty_inclusion_check(traj, p, cj, tol=diag.minty_factor * params.eps)
        ctx.out.json("inclusion.json", rep.to_dict())
        ctx.verdict("minty", rep.verdict)
    else:
        ctx.skip("minty")


def _prepare_refinement(params):
    dom, nf, p = _problem(params)
    if params.n_list != sorted(params.n_list):
        raise ConfigError("must increase", "params.n_list")
    if params.eps_list != sorted(params.eps_list, reverse=True) or min(params.eps_list) <= 0:
        raise ConfigError("must be positive and decreasing", "params.eps_list")
    if params.dt_list != sorted(params.dt_list, reverse=True):
        raise ConfigError("must decrease", "params.dt_list")
    for i, dt in enumerate(params.dt_list):
        _check_dt(params.T, dt, f"params.dt_list.{i}")
        s = params.dt_list[0] / dt
        if abs(s - round(s)) > 1e-9 * s:
            raise ConfigError("every dt must divide the coarsest dt", f"params.dt_list.{i}")
    return {"problem": p, "nf": nf}


def _exec_refinement(params, objs, ctx):
    p = objs["problem"]
    ctx.stage = "study"
    rep = refinement_study(p, params.n_list, params.eps_list, params.dt_list, conjugate_for(p.nf),
                           params.mollification.route, params.ratio_bound, params.uniform_factor,
                           params.inclusion_factor, params.tol, params.mollification.resolution)
    rows = list(rep.to_rows())
    header = list(rows[0].keys())
    ctx.out.csv("refinement.csv", header, ([r[k] for k in header] for r in rows))
    out = rep.to_dict()
    out["inclusion"] = {f"{k[0]},{k[1]:g},{k[2]:g}": v.to_dict() for k, v in rep.inclusion.items()}
    ctx.out.json("refinement.json", out)
    ctx.verdict("runs_ok", all(v == "ok" for v in rep.status.values()))
    ctx.verdict("refinement", rep.verdict)
    margins = list(rep.min_energy_margins.values())
    ctx.verdict("energy_margins", bool(margins) and min(margins) >= -params.energy_tol)
    ratios = [v for v in rep.energy_ratios.values() if np.isfinite(v)]
    stable = bool(ratios) and max(ratios) <= (1 + params.energy_ratio_spread) * min(ratios)
    ctx.verdict("energy_ratio_stability", stable)


TASKS = {
    "nfunc_checks": (_prepare_nfunc, _exec_nfunc),
    "conjugate_table": (_prepare_conjugate, _exec_conjugate),
    "density_experiment": (_prepare_density, _exec_density),
    "graph_checks": (_prepare_graph, _exec_graph),
    "solve": (_prepare_solve, _exec_solve),
    "refinement_study": (_prepare_refinement, _exec_refinement),
}


# ---------------------------------------------------------------------------
# runner


def _default_out(raw, name=None):
    if isinstance(raw, dict) and isinstance(raw.get("out"), str):
        return raw["out"]
    label = name or (raw.get("name") if isinstance(raw, dict) else None) or "scenario"
    return os.path.join("runs", str(label).replace(os.sep, "_"))


def run_scenario(path, overrides=(), out=None) -> RunManifest:
    """Validate, execute and report one scenario; the manifest is always written."""
    start = time.perf_counter()
    raw = None
    try:
        raw = apply_overrides(load_raw(path), overrides)
        sc, params = validate(raw)
        prepare, execute = TASKS[sc.task]
        objs = prepare(params)
    except ConfigError as exc:
        out_dir = out or _default_out(raw)
        man = RunManifest(TOOL, __version__, (raw or {}).get("name", "scenario") if isinstance(raw, dict) else
                          "scenario", str((raw or {}).get("task", "")) if isinstance(raw, dict) else "", "",
                          time.perf_counter() - start, "invalid", failed_stage="validation", error=str(exc),
                          effective_config=raw, exit_code=EXIT_INVALID, out_dir=out_dir)
        _write_manifest(out_dir, man)
        return man
    cfg = effective_config(sc, params)
    out_dir = out or sc.out or _default_out(raw, sc.name)
    ctx = Context(Reporter(out_dir), sc.seed)
    man = RunManifest(TOOL, __version__, sc.name, sc.task, config_hash(cfg), 0.0, "ok", effective_config=cfg,
                      out_dir=out_dir)
    try:
        execute(params, objs, ctx)
    except (OrliczLabError, ValueError, ArithmeticError, OSError) as exc:
        man.status = "failed"
        man.failed_stage = ctx.stage
        man.error = f"{type(exc).__name__}: {exc}"
    man.verdicts = dict(ctx.verdicts)
    man.outputs = sorted(set(ctx.out.outputs))
    man.wall_time = time.perf_counter() - start
    failed = man.status != "ok" or any(v == "fail" for v in man.verdicts.values())
    man.exit_code = EXIT_FAIL if failed else EXIT_OK
    _write_manifest(out_dir, man)
    return man


def _write_manifest(out_dir, man):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable(man.to_dict()), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_manifest(man, out_dir):
    if man.status == "invalid":
        print(f"error: {man.error}", file=sys.stderr)
        return
    for name, v in man.verdicts.items():
        print(f"{v:7s} {name}")
    if man.error:
        print(f"error in stage {man.failed_stage}: {man.error}", file=sys.stderr)
    print(f"{man.task} '{man.name}' -> {out_dir} ({man.wall_time:.2f} s, exit {man.exit_code})")


def main(argv=None):
    parser = argparse.ArgumentParser(prog=TOOL, description="Run Orlicz-space lab scenarios")
    parser.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("config", help="scenario JSON file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="dotted-path override, e.g. params.dt=5e-4 (repeatable)")
    run.add_argument("--out", default=None, help="output directory (default: scenario 'out' or runs/<name>)")
    bi = sub.add_parser("builtins", help="print the catalog of built-in kinds and task schemas")
    bi.add_argument("--section", choices=["n_functions", "graphs", "kernel", "basis", "tasks"], default=None)
    args = parser.parse_args(argv)

    if args.command == "builtins":
        cat = list_builtins()
        if args.section:
            cat = {args.section: cat[args.section]}
        json.dump(cat, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK

    man = run_scenario(args.config, args.overrides, args.out)
    _print_manifest(man, man.out_dir)
    return man.exit_code


if __name__ == "__main__":
    sys.exit(main())
