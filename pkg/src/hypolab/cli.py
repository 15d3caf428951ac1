"""Command line front end.

Every run can write an output directory: data files first, a report, and
a manifest written last so a complete directory always has one. Exit code
0 means success, 1 means a negative verdict (rank deficit, failed
certificate, inconsistent averages, divergence), 2 means bad usage.

Option precedence: explicit flags, then values from --config JSON, then
the built-in defaults.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import sys

import click
import numpy as np
from click.core import ParameterSource

from . import __version__
from . import control as ct
from . import engine as en
from . import expr as ex
from . import hoermander as hx
from . import models as md
from . import recurrence as rc
from . import simulate as sm

VERDICT_EXIT = 1
USAGE_EXIT = 2


def _fail_usage(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(USAGE_EXIT)


def _merge_config(ctx: click.Context, config_path: str | None):
    """Fill params still at their defaults from a JSON config file."""
    if not config_path:
        return
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        _fail_usage(f"cannot read config {config_path}: {err}")
    if not isinstance(data, dict):
        _fail_usage("config file must hold a JSON object")
    for key, value in data.items():
        pk = key.replace("-", "_")
        if pk not in ctx.params or pk == "config":
            continue
        if ctx.get_parameter_source(pk) == ParameterSource.DEFAULT:
            ctx.params[pk] = value
    return ctx.params


class RunDir:
    """Collects output files; the manifest is always the last write."""

    def __init__(self, out_dir: str | None, command: str, params: dict):
        self.out_dir = out_dir
        self.command = command
        self.params = params
        self.files: list[dict] = []
        self.seed = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)

    def _register(self, name: str):
        full = os.path.join(self.out_dir, name)
        with open(full, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.files.append({"name": name, "bytes": os.path.getsize(full),
                           "sha256": digest})

    def write_csv(self, name: str, header: list[str], rows):
        if not self.out_dir:
            return
        full = os.path.join(self.out_dir, name)
        with open(full, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        self._register(name)

    def write_report(self, report: dict):
        if not self.out_dir:
            return
        with open(os.path.join(self.out_dir, "report.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self._register("report.json")

    def finish(self):
        if not self.out_dir:
            return
        manifest = {"command": self.command, "package_version": __version__,
                    "engine": en.engine_name(), "seed": self.seed,
                    "params": _jsonable(self.params), "files": self.files}
        with open(os.path.join(self.out_dir, "manifest.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    return str(obj)


def _load_model(name: str, sigma: str | None) -> md.ModelSpec:
    try:
        m = md.builtin(name)
    except md.ModelError as err:
        _fail_usage(str(err))
    if sigma:
        m = m.with_sigma(_parse_sigma(m, sigma))
    return m


def _parse_sigma(m: md.ModelSpec, text: str):
    try:
        if text.startswith("const:"):
            c = float(text[len("const:"):])
            return [[ex.const(c if i == k else 0.0) for k in range(m.n_x)]
                    for i in range(m.n_x)]
        if text.startswith("diag:"):
            vals = [float(v) for v in text[len("diag:"):].split(",")]
            if len(vals) != m.n_x:
                raise ValueError(f"need {m.n_x} diagonal entries")
            return [[ex.const(vals[i] if i == k else 0.0)
                     for k in range(m.n_x)] for i in range(m.n_x)]
        rows = json.loads(text)
        return [[ex.parse_sexpr(str(c)) if isinstance(c, str) else ex.const(c)
                 for c in row] for row in rows]
    except (ValueError, json.JSONDecodeError, ex.ExprError) as err:
        _fail_usage(f"bad --sigma value: {err}")


def _parse_point(m: md.ModelSpec, text: str) -> np.ndarray:
    text = text.strip()
    if text.startswith("equilibrium"):
        branch = 1
        if ":" in text:
            try:
                branch = int(text.split(":", 1)[1])
            except ValueError:
                _fail_usage("equilibrium branch must be an integer")
        return md.equilibrium_state(m, branch).as_array()
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        _fail_usage(f"cannot parse point {text!r}")
    if vals.shape != (m.state_dim,):
        _fail_usage(f"point has {vals.size} entries, state needs {m.state_dim}")
    return vals


def _parse_target(m: md.ModelSpec, text: str):
    text = text.strip()
    if text.startswith("equilibrium"):
        state = _parse_point(m, text)
        return (tuple(state[:m.n_x + m.n_y]), tuple(state[m.n_x + m.n_y:]))
    if ";" not in text:
        _fail_usage("target must be 'observed block;input block' or "
                    "'equilibrium'")
    obs_text, z_text = text.split(";", 1)
    try:
        obs = tuple(float(v) for v in obs_text.split(","))
        z = tuple(float(v) for v in z_text.split(","))
    except ValueError:
        _fail_usage(f"cannot parse target {text!r}")
    return obs, z


def _resolve_seed(seed: int | None) -> int:
    return int(seed) if seed is not None else sm.fresh_seed()


def _state_header(m: md.ModelSpec) -> list[str]:
    return (["t"] + [f"x{i+1}" for i in range(m.n_x)]
            + [f"y{j+1}" for j in range(m.n_y)]
            + [f"z{i+1}" for i in range(m.n_x)])


@click.group()
@click.version_option(version=__version__, prog_name="hypolab")
def main():
    """Structure checks, steering, and recurrence diagnostics for
    periodically forced degenerate diffusions."""


# ---------------------------------------------------------------------------
# models

@main.group()
def models():
    """Inspect the built-in model library."""


@models.command("list")
def models_list():
    for name in md.BUILTIN_NAMES:
        click.echo(name)


@models.command("show")
@click.argument("name")
@click.option("--json", "as_json", is_flag=True, help="dump the full model record")
def models_show(name, as_json):
    m = _load_model(name, None)
    if as_json:
        click.echo(json.dumps(m.to_json_dict(), indent=2, sort_keys=True))
        return
    click.echo(f"name: {m.name}")
    click.echo(f"dims: observed={m.n_x} internal={m.n_y} noise={m.n_w}")
    click.echo(f"period: {m.period}")
    eq = md.equilibrium_state(m)
    click.echo("equilibrium: "
               + ",".join(repr(float(v)) for v in eq.as_array()))
    for label, exprs in (("f", m.f), ("g", m.g), ("b", m.b)):
        for i, e in enumerate(exprs):
            click.echo(f"{label}[{i}]: {ex.to_sexpr(e)}")


# ---------------------------------------------------------------------------
# hoermander

@main.command()
@click.argument("name")
@click.option("--point", default="equilibrium", show_default=True,
              help="state, comma floats or 'equilibrium[:branch]'")
@click.option("--strategy", type=click.Choice(["star", "cascade"]),
              default="star", show_default=True)
@click.option("--depth", default=4, show_default=True)
@click.option("--t-samples", default=10, show_default=True)
@click.option("--sigma", default=None, help="const:c, diag:c1,..., or JSON")
@click.option("--config", default=None, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def hoermander(ctx, name, point, strategy, depth, t_samples, sigma, config,
               out):
    """Bracket-spanning rank certificate at a state."""
    p = _merge_config(ctx, config) or ctx.params
    run = RunDir(p["out"], "hoermander", p)
    m = _load_model(name, p["sigma"])
    phi = _parse_point(m, p["point"])
    try:
        cert = hx.hoermander_rank(m, phi, strategy=p["strategy"],
                                  depth=int(p["depth"]),
                                  t_samples=int(p["t_samples"]))
    except (hx.ShapeError, md.ModelError) as err:
        _fail_usage(str(err))
    click.echo(f"model: {m.name}  strategy: {cert.strategy}")
    click.echo(f"rank: {cert.rank}/{cert.dim}  verdict: {cert.verdict}")
    for label in cert.spanning:
        name_ = label.get("descriptor") if isinstance(label, dict) else label
        click.echo(f"  span: {name_}")
    run.write_report(cert.to_json_dict())
    run.finish()
    sys.exit(0 if cert.verdict == "pass" else VERDICT_EXIT)


# ---------------------------------------------------------------------------
# kronecker

@main.command()
@click.option("--period", required=True, type=float)
@click.option("--target-period", required=True, type=float)
@click.option("--eps", default=0.1, show_default=True, type=float)
@click.option("--bound", default=10000, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def kronecker(ctx, period, target_period, eps, bound, out):
    """Near-coincidence search between two period lattices."""
    run = RunDir(out, "kronecker", ctx.params)
    try:
        res = ct.kronecker_search(period, target_period, eps, bound)
    except ValueError as err:
        _fail_usage(str(err))
    if res.found:
        click.echo(f"n={res.n} m={res.m} error={res.error:.6g}")
    else:
        click.echo(f"no alignment within bound {bound}")
    run.write_report(res.to_json_dict())
    run.finish()
    sys.exit(0 if res.found else VERDICT_EXIT)


# ---------------------------------------------------------------------------
# control / certify

def _build_plan(m, p):
    phi0 = _parse_point(m, p["point"])
    target = _parse_target(m, p["target"])
    metadata = {"delta": float(p["delta"]),
                "rest_periods": int(p["rest_periods"])}
    if p.get("plan_metadata"):
        try:
            metadata.update(json.loads(p["plan_metadata"]))
        except json.JSONDecodeError as err:
            _fail_usage(f"bad --plan-metadata: {err}")
    return ct.plan_attain(m, phi0, target, mode=p["mode"], metadata=metadata)


_plan_options = [
    click.option("--point", default="equilibrium", show_default=True),
    click.option("--target", default="equilibrium", show_default=True,
                 help="'x..,y..;z..' or 'equilibrium[:branch]'"),
    click.option("--mode", type=click.Choice(["simple", "local", "periodic"]),
                 default="simple", show_default=True),
    click.option("--delta", default=0.5, show_default=True, type=float),
    click.option("--rest-periods", default=1, show_default=True, type=int),
    click.option("--plan-metadata", default=None,
                 help="JSON with extra plan inputs (gamma, drift terms, ...)"),
    click.option("--sigma", default=None),
    click.option("--config", default=None, type=click.Path()),
    click.option("--out", default=None, type=click.Path()),
]


def _with_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return wrap


@main.command()
@click.argument("name")
@_with_options(_plan_options)
@click.pass_context
def control(ctx, name, **_kw):
    """Synthesize a steering plan and report its phases."""
    p = _merge_config(ctx, ctx.params.get("config")) or ctx.params
    run = RunDir(p["out"], "control", p)
    m = _load_model(name, p["sigma"])
    try:
        plan = _build_plan(m, p)
    except ct.PlanningError as err:
        click.echo(f"planning failed: {err}", err=True)
        click.echo(json.dumps(_jsonable(err.diagnostics)), err=True)
        sys.exit(VERDICT_EXIT)
    click.echo(f"mode: {plan.mode}  duration: {plan.duration:g}  "
               f"ramp periods: {plan.periods}")
    for key, val in plan.diagnostics.items():
        click.echo(f"  {key}: {val}")
    ts = np.linspace(plan.path.t_start, plan.path.t_end,
                     min(2001, max(2, int(plan.duration / 0.01) + 1)))
    rows = [[t, *plan.path.value(t), *plan.path.derivative(t)] for t in ts]
    header = (["t"] + [f"rho{i+1}" for i in range(m.n_x)]
              + [f"rhodot{i+1}" for i in range(m.n_x)])
    run.write_csv("plan_path.csv", header, rows)
    run.write_report(plan.summary())
    run.finish()
    sys.exit(0)


@main.command()
@click.argument("name")
@_with_options(_plan_options)
@click.option("--eps", default=1e-2, show_default=True, type=float)
@click.option("--n-max", default=2000, show_default=True, type=int)
@click.option("--step", default=1e-3, show_default=True, type=float)
@click.pass_context
def certify(ctx, name, **_kw):
    """Plan, drive the closed loop, and certify grid-time attainability."""
    p = _merge_config(ctx, ctx.params.get("config")) or ctx.params
    run = RunDir(p["out"], "certify", p)
    m = _load_model(name, p["sigma"])
    try:
        plan = _build_plan(m, p)
    except ct.PlanningError as err:
        click.echo(f"planning failed: {err}", err=True)
        click.echo(json.dumps(_jsonable(err.diagnostics)), err=True)
        sys.exit(VERDICT_EXIT)
    cert = ct.certify_attainability(plan, m, float(p["eps"]), int(p["n_max"]),
                                    {"step": float(p["step"])})
    click.echo(f"verdict: {cert.verdict}  best_distance: "
               f"{cert.best_distance:.6g} at period {cert.best_period}")
    if cert.first_hit is not None:
        click.echo(f"first hit: period {cert.first_hit}")
    report = cert.to_json_dict()
    report["plan"] = plan.summary()
    run.write_report(report)
    run.finish()
    sys.exit(0 if cert.passed else VERDICT_EXIT)


# ---------------------------------------------------------------------------
# simulate

@main.command()
@click.argument("name")
@click.option("--point", default="equilibrium", show_default=True)
@click.option("--dt", default=1e-3, show_default=True, type=float)
@click.option("--horizon", default=10.0, show_default=True, type=float)
@click.option("--stride", default=1, show_default=True, type=int)
@click.option("--seed", default=None, type=int,
              help="absent: generated and recorded")
@click.option("--sigma", default=None)
@click.option("--clamp", is_flag=True, help="clamp to the model domain boxes")
@click.option("--grid-period", default=None, type=float,
              help="also extract the chain at this period")
@click.option("--config", default=None, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def simulate(ctx, name, **_kw):
    """Sample one path of the driven system."""
    p = _merge_config(ctx, ctx.params.get("config")) or ctx.params
    run = RunDir(p["out"], "simulate", p)
    m = _load_model(name, p["sigma"])
    phi0 = _parse_point(m, p["point"])
    seed = _resolve_seed(p["seed"])
    run.seed = seed
    cfg = sm.SimConfig(dt=float(p["dt"]), horizon=float(p["horizon"]),
                       stride=int(p["stride"]), seed=seed,
                       clamp="domain" if p["clamp"] else None)
    rec = sm.simulate_path(m, phi0, cfg)
    click.echo(f"model: {m.name}  seed: {seed}  engine: {en.engine_name()}")
    click.echo(f"nodes: {rec.n_valid}  diverged: {rec.diverged}  "
               f"clamped: {rec.clamp_count}")
    states = rec.valid_states()
    rows = np.column_stack([rec.times, states])
    run.write_csv("path.csv", _state_header(m), rows)
    report = {"model": m.name, "seed": seed, "dt": cfg.dt,
              "stride": cfg.stride, "nodes": rec.n_valid,
              "diverged_step": rec.diverged_step,
              "clamp_count": rec.clamp_count,
              "final_state": states[-1].tolist()}
    if p["grid_period"]:
        chain = sm.extract_grid_chain(rec, float(p["grid_period"]))
        grid_rows = np.column_stack([chain.times, chain.states])
        run.write_csv("grid.csv", _state_header(m), grid_rows)
        report["grid"] = {"period": chain.period, "count": len(chain),
                          "node_offset": chain.node_offset}
    run.write_report(report)
    run.finish()
    sys.exit(VERDICT_EXIT if rec.diverged else 0)


# ---------------------------------------------------------------------------
# recurrence

@main.command()
@click.argument("name")
@click.option("--op", type=click.Choice(["hitting", "drift", "ergodic",
                                         "isi", "histogram", "returns"]),
              required=True)
@click.option("--point", default="equilibrium", show_default=True,
              help="start state; for multi-start ops separate with ';'")
@click.option("--center", default="equilibrium", show_default=True)
@click.option("--radius", default=0.3, show_default=True, type=float)
@click.option("--n-max", default=200, show_default=True, type=int)
@click.option("--replicates", default=100, show_default=True, type=int)
@click.option("--periods", default=10000, show_default=True, type=int)
@click.option("--dt", default=1e-3, show_default=True, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--horizon", default=2000.0, show_default=True, type=float)
@click.option("--threshold", default=None, type=float)
@click.option("--refractory", default=None, type=float)
@click.option("--bins", default=20, show_default=True, type=int)
@click.option("--box", default=None,
              help="JSON [[lo...],[hi...]] for drift K or returns target")
@click.option("--functional", default=None,
              help="s-expression over state coordinates")
@click.option("--sigma", default=None)
@click.option("--config", default=None, type=click.Path())
@click.option("--out", default=None, type=click.Path())
@click.pass_context
def recurrence(ctx, name, **_kw):
    """Grid-chain diagnostics: hitting, drift, averages, spikes."""
    p = _merge_config(ctx, ctx.params.get("config")) or ctx.params
    run = RunDir(p["out"], "recurrence", p)
    m = _load_model(name, p["sigma"])
    seed = _resolve_seed(p["seed"])
    run.seed = seed
    cfg = sm.SimConfig(dt=float(p["dt"]), horizon=m.period, seed=seed)
    op = p["op"]
    try:
        code = _run_recurrence_op(run, m, op, p, cfg, seed)
    except (rc.RecurrenceError, sm.SimulationError) as err:
        _fail_usage(str(err))
    run.finish()
    sys.exit(code)


def _run_recurrence_op(run, m, op, p, cfg, seed) -> int:
    starts = [_parse_point(m, s) for s in p["point"].split(";")]
    if op == "hitting":
        center = _parse_point(m, p["center"])
        rep = rc.hitting_frequency(m, starts, center, float(p["radius"]),
                                   int(p["n_max"]), int(p["replicates"]), cfg)
        for i, f in enumerate(rep.frequencies):
            click.echo(f"start {i}: frequency {f:.3f}")
        run.write_csv("hitting.csv", ["start_index", "frequency",
                                      "mean_first_hit"],
                      [[i, rep.frequencies[i], rep.mean_first_hit[i]]
                       for i in range(len(starts))])
        run.write_report(rep.to_json_dict())
        return 0 if rep.all_positive else VERDICT_EXIT
    if op == "drift":
        if not p["box"]:
            _fail_usage("drift needs --box [[lo...],[hi...]]")
        lo, hi = json.loads(p["box"])
        V = _functional_or_default(m, p["functional"])
        lspec = rc.LyapunovSpec(V, lo, hi)
        pts = np.array(starts)
        rep = rc.estimate_lyapunov_drift(m, lspec, pts,
                                         int(p["replicates"]), cfg)
        click.echo(f"verdict: {rep.verdict}")
        run.write_csv("drift.csv", ["drift", "std_error", "lower_bound"],
                      np.column_stack([rep.drifts, rep.std_errors,
                                       rep.lower_bounds]))
        run.write_report(rep.to_json_dict())
        return 0 if rep.positive else VERDICT_EXIT
    if op == "ergodic":
        if len(starts) != 2:
            _fail_usage("ergodic needs two starts separated by ';'")
        F = _functional_or_default(m, p["functional"])
        rep = rc.ergodic_consistency(m, starts[0], starts[1], F,
                                     int(p["periods"]), cfg)
        click.echo(f"verdict: {rep.verdict}  difference: "
                   f"{rep.difference:.6g}  combined se: {rep.combined_se:.3g}")
        run.write_report(rep.to_json_dict())
        return 0 if rep.verdict == "consistent" else VERDICT_EXIT
    if op == "isi":
        sim_cfg = sm.SimConfig(dt=cfg.dt, horizon=float(p["horizon"]),
                               seed=seed)
        rec = sm.simulate_path(m, starts[0], sim_cfg)
        train = rc.interspike_intervals(rec, p["threshold"], p["refractory"])
        click.echo(f"spikes: {len(train.spike_times)}")
        run.write_csv("isi.csv", ["interval"],
                      [[v] for v in train.intervals])
        run.write_report(train.to_json_dict())
        return 0 if train.intervals else VERDICT_EXIT
    if op in ("histogram", "returns"):
        sim_cfg = sm.SimConfig(dt=cfg.dt, horizon=float(p["horizon"]),
                               seed=seed)
        rec = sm.simulate_path(m, starts[0], sim_cfg)
        chain = sm.extract_grid_chain(rec, m.period)
        if op == "histogram":
            hist = rc.occupation_histogram(chain, bins=int(p["bins"]))
            flat = hist.mass.reshape(-1)
            click.echo(f"cells: {flat.size}  occupied: "
                       f"{int(np.count_nonzero(flat))}")
            run.write_csv("histogram.csv", ["cell", "mass"],
                          [[i, v] for i, v in enumerate(flat)])
            run.write_report(hist.to_json_dict())
            return 0
        if not p["box"]:
            _fail_usage("returns needs --box [[lo...],[hi...]]")
        lo, hi = json.loads(p["box"])
        stats = rc.return_time_stats(chain, (lo, hi))
        click.echo(f"visits: {stats.visits}  mean gap: {stats.mean_gap:g}")
        run.write_report(stats.to_json_dict())
        return 0 if stats.visits else VERDICT_EXIT
    raise AssertionError(op)


def _functional_or_default(m: md.ModelSpec, text: str | None):
    if text:
        try:
            return ex.parse_sexpr(text)
        except ex.ExprError as err:
            _fail_usage(f"bad --functional: {err}")
    keys = m.state_coord_keys()
    terms = [ex.power(ex.coord(k, i), 2) for k, i in keys]
    return ex.add(1.0, *terms)


if __name__ == "__main__":
    main()
