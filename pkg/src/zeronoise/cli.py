"""Command-line front end: ``zeronoise <subcommand> [--config PATH] [--set k=v] ...``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 a
verification check failed.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import ModelSpec, stratonovich_to_ito
from .dynamics import (CandidateSet, birkhoff_candidates, classify_equilibrium, equilibria_csv,
                       find_equilibria, seed_grid)
from .errors import BlowUp, KappaOutOfRange, NonFiniteOutput, PathError, ZeroNoiseError
from .generator import (LyapunovSpec, hopfield_condition, lyapunov_scan, quadratic_lyapunov)
from .integrate import (DelayModel, EnsembleJob, SegmentState, SimParams, default_threads, flow,
                        map_batches, sfde_batch, simulate_batch)
from .measures import Grid, convergence_sweep, default_bins, occupation_estimate
from .models import build_custom_model, decomposition_check, parse_field, zoo_build, zoo_names
from .noise import derive_stream
from .sensitivity import bel_gradient, fd_gradient, gradient_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

DEFAULTS = {
    "model": {"name": "ou", "params": {}, "drift": None, "diffusion": None,
              "noise_kind": "ito"},
    "noise": {"epsilon": 0.1, "epsilons": [0.4, 0.2, 0.1]},
    "sim": {"dt": 1e-3, "t_final": 10.0, "burn_in": 0.0, "n_paths": 8, "master_seed": 0,
            "x0": None, "save_every": 1},
    "measure": {"lo": None, "hi": None, "bins": None, "reservoir_size": 4096, "delta": 0.1,
                "radii": [1.0, 2.0, 4.0]},
    "candidates": {"mode": "auto", "points": [], "labels": []},
    "lyapunov": {"V": "quadratic", "radii": [1.0, 2.0, 4.0], "samples_per_shell": 256},
    "equilibria": {"lo": -2.0, "hi": 2.0, "seeds_per_dim": 5, "extra_seeds": []},
    "converge": {"points": None, "threshold": 0.5, "t": 1.0},
    "decompose": {"beta": 1.2, "gamma": 0.9, "g0": 0.8, "y": [0.2, 0.3, 0.4],
                  "tolerance": 1e-2},
    "grad": {"phi": "x1", "t": 1.0, "x": None, "h": None, "delta": 1e-2},
    "hopfield": {"kappa": 4.0},
    "output": {"directory": "out", "formats": ["csv"]},
}

DEFAULT_STARTS = {"lemniscate": [3.0, 0.0], "limit_cycle": [2.0, 0.0],
                  "may_leonard": [0.3, 0.2, 0.1], "logistic": [0.5]}


class ConfigError(ZeroNoiseError):
    def __init__(self, path, message):
        super().__init__(f"config error at {path}: {message}")
        self.path = path


# ---------------------------------------------------------------- configuration

def _merge(defaults, given, path=""):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(where, "unknown key")
        if isinstance(defaults[key], dict) and key != "params":
            if not isinstance(value, dict):
                raise ConfigError(where, "expected an object")
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = value
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, assignment):
    if "=" not in assignment:
        raise ConfigError(assignment, "--set expects dotted.key=value")
    key, text = assignment.split("=", 1)
    parts = key.split(".")
    node = config
    for i, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(".".join(parts[:i + 1]), "unknown key")
        node = node[part]
    last = parts[-1]
    in_params = len(parts) >= 2 and parts[-2] == "params"
    if last not in node and not in_params:
        raise ConfigError(key, "unknown key")
    node[last] = _parse_value(text)


def _number(cfg, path, positive=False, nonneg=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if isinstance(node, bool) or not isinstance(node, (int, float)) or not math.isfinite(node):
        raise ConfigError(path, f"expected a finite number, got {node!r}")
    if positive and not node > 0:
        raise ConfigError(path, f"must be > 0, got {node!r}")
    if nonneg and node < 0:
        raise ConfigError(path, f"must be >= 0, got {node!r}")
    return node


def validate_config(cfg):
    _number(cfg, "sim.dt", positive=True)
    _number(cfg, "sim.t_final", positive=True)
    _number(cfg, "sim.burn_in", nonneg=True)
    if cfg["sim"]["burn_in"] >= cfg["sim"]["t_final"]:
        raise ConfigError("sim.burn_in", "must be smaller than sim.t_final")
    if cfg["sim"]["dt"] > cfg["sim"]["t_final"]:
        raise ConfigError("sim.dt", "must not exceed sim.t_final")
    n_paths = cfg["sim"]["n_paths"]
    if not isinstance(n_paths, int) or n_paths < 1:
        raise ConfigError("sim.n_paths", "must be a positive integer")
    if not isinstance(cfg["sim"]["master_seed"], int) or cfg["sim"]["master_seed"] < 0:
        raise ConfigError("sim.master_seed", "must be a non-negative integer")
    _number(cfg, "noise.epsilon", nonneg=True)
    eps = cfg["noise"]["epsilons"]
    if (not isinstance(eps, list) or len(eps) < 2
            or any(not isinstance(e, (int, float)) or e <= 0 for e in eps)):
        raise ConfigError("noise.epsilons", "needs at least two positive numbers")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("noise.epsilons", "must be strictly decreasing")
    _number(cfg, "measure.delta", positive=True)
    name = cfg["model"]["name"]
    if name != "custom" and name not in zoo_names():
        raise ConfigError("model.name", f"unknown model {name!r}; choose from "
                          f"{', '.join(zoo_names() + ['custom'])}")
    if cfg["candidates"]["mode"] not in ("auto", "explicit"):
        raise ConfigError("candidates.mode", "must be 'auto' or 'explicit'")
    return cfg


def load_config(path=None, overrides=(), seed=None, out=None):
    given = {}
    if path is not None:
        try:
            given = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(path), str(exc)) from exc
        if not isinstance(given, dict):
            raise ConfigError(str(path), "top level must be an object")
    cfg = _merge(DEFAULTS, given)
    for assignment in overrides:
        apply_override(cfg, assignment)
    if seed is not None:
        cfg["sim"]["master_seed"] = seed
    if out is not None:
        cfg["output"]["directory"] = out
    return validate_config(cfg)


# ---------------------------------------------------------------- building blocks

def build_model(cfg):
    mc = cfg["model"]
    try:
        if mc["name"] == "custom":
            if not mc["drift"] or not mc["diffusion"]:
                raise ConfigError("model.drift", "custom models need drift and diffusion")
            model = build_custom_model(len(mc["drift"]), mc["drift"], mc["diffusion"],
                                       mc["noise_kind"])
        else:
            model = zoo_build(mc["name"], mc["params"])
    except ZeroNoiseError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("model", str(exc)) from exc
    if isinstance(model, ModelSpec) and model.noise_kind != "ito":
        model = stratonovich_to_ito(model)
    return model


def sim_params(cfg, epsilon=None, **changes):
    s = cfg["sim"]
    eps = cfg["noise"]["epsilon"] if epsilon is None else epsilon
    try:
        return SimParams(dt=float(s["dt"]), t_final=float(s["t_final"]),
                         burn_in=float(s["burn_in"]), epsilon=float(eps),
                         save_every=int(s["save_every"]), **changes)
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from exc


def initial_state(cfg, model):
    x0 = cfg["sim"]["x0"]
    if x0 is None:
        x0 = DEFAULT_STARTS.get(cfg["model"]["name"], [0.5] * model.m)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (model.m,):
        raise ConfigError("sim.x0", f"expected {model.m} numbers")
    if isinstance(model, DelayModel):
        return SegmentState.constant(x0, model.tau, float(cfg["sim"]["dt"]))
    return x0


def build_grid(cfg, m):
    mc = cfg["measure"]
    if mc["lo"] is None and mc["hi"] is None:
        return None
    lo = np.broadcast_to(np.asarray(mc["lo"], dtype=float), (m,))
    hi = np.broadcast_to(np.asarray(mc["hi"], dtype=float), (m,))
    bins = mc["bins"] if mc["bins"] is not None else default_bins(m)
    try:
        return Grid(tuple(lo), tuple(hi), tuple(np.broadcast_to(bins, (m,))))
    except ValueError as exc:
        raise ConfigError("measure", str(exc)) from exc


def build_candidates(cfg, model):
    cc = cfg["candidates"]
    if cc["mode"] == "explicit":
        if not cc["points"]:
            raise ConfigError("candidates.points", "explicit mode needs points")
        cs = CandidateSet.from_points(cc["points"], cc["labels"] or None)
        if isinstance(model, ModelSpec):
            for p in cs.points:
                try:
                    c = classify_equilibrium(model, p.x)
                    p.classification, p.eigenvalues = c.kind, c.eigenvalues
                except ValueError:
                    p.classification = "not_equilibrium"
        return cs
    if cfg["model"]["name"] == "custom":
        roots = find_equilibria(model, _seeds(cfg, model.m))
        return CandidateSet.from_points(roots, provenance="newton")
    return birkhoff_candidates(cfg["model"]["name"], cfg["model"]["params"])


def _seeds(cfg, m):
    ec = cfg["equilibria"]
    seeds = seed_grid([ec["lo"]] * m, [ec["hi"]] * m, int(ec["seeds_per_dim"]))
    if ec["extra_seeds"]:
        seeds = np.concatenate([seeds, np.asarray(ec["extra_seeds"], dtype=float)])
    return seeds


def _fmt(v):
    return repr(float(v))


def _write(path: Path, text: str, outputs: list):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    outputs.append(path.name)


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def path_csv(times, states) -> str:
    m = states.shape[-1]
    return _table(["t"] + [f"x{i + 1}" for i in range(m)],
                  [[_fmt(t)] + [_fmt(v) for v in x] for t, x in zip(times, states)])


def eps_tag(eps: float) -> str:
    return f"{eps:.6f}"


def emit_plotdata(report, directory, candidates=None, flow_sample=None) -> list:
    """Per-epsilon histograms, the sweep summary and the candidate table."""
    directory = Path(directory)
    outputs = []
    for rec in report.records:
        _write(directory / f"histogram_eps{eps_tag(rec.epsilon)}.csv", rec.measure.to_csv(),
               outputs)
    _write(directory / "sweep_summary.csv", report.to_summary_csv(), outputs)
    if candidates is not None:
        _write(directory / "candidates.csv", candidates_csv(candidates), outputs)
    if flow_sample is not None:
        _write(directory / "flow_sample.csv", path_csv(flow_sample.times, flow_sample.states),
               outputs)
    return outputs


def candidates_csv(candidates: CandidateSet) -> str:
    text = equilibria_csv(candidates.points)
    if not candidates.curves:
        return text
    m = candidates.curves[0].points.shape[1]
    extra = _table([], [[c.label] + [_fmt(v) for v in x] + ["closed_orbit"] + [""] * (2 * m)
                        for c in candidates.curves for x in c.points])
    return text + extra


# ---------------------------------------------------------------- subcommands

def cmd_flow(cfg, ctx):
    model = build_model(cfg)
    if isinstance(model, DelayModel):
        params = sim_params(cfg, epsilon=0.0)
        path = sfde_batch(model, initial_state(cfg, model), params, [derive_stream(0, 0)])[0]
    else:
        path = flow(model, initial_state(cfg, model), sim_params(cfg, epsilon=0.0))
    _write(ctx["out"] / "flow.csv", path_csv(path.times, path.states), ctx["outputs"])
    return EXIT_OK


def cmd_simulate(cfg, ctx):
    model = build_model(cfg)
    params = sim_params(cfg)
    x0 = initial_state(cfg, model)
    seed = cfg["sim"]["master_seed"]
    job = EnsembleJob(model, x0, params, cfg["sim"]["n_paths"], seed,
                      kind="sfde" if isinstance(model, DelayModel) else "em")

    def batch_fn(indices):
        streams = [derive_stream(seed, int(i)) for i in indices]
        if isinstance(model, DelayModel):
            paths = sfde_batch(model, x0, params, streams, path_indices=indices)
            return [(i, p.times, p.states) for i, p in zip(indices, paths)]
        res = simulate_batch(model, x0, params, streams, path_indices=indices)
        return [(i, res.times, res.states[:, r]) for r, i in enumerate(indices)]

    rows = []
    for part in map_batches(job, batch_fn, ctx["threads"]):
        for i, times, states in part:
            rows += [[int(i), _fmt(t)] + [_fmt(v) for v in x] for t, x in zip(times, states)]
    _write(ctx["out"] / "paths.csv",
           _table(["path", "t"] + [f"x{j + 1}" for j in range(model.m)], rows), ctx["outputs"])
    return EXIT_OK


def cmd_occupy(cfg, ctx):
    model = build_model(cfg)
    mu = occupation_estimate(model, initial_state(cfg, model), sim_params(cfg),
                             cfg["sim"]["master_seed"], cfg["sim"]["n_paths"],
                             grid=build_grid(cfg, model.m),
                             reservoir_size=cfg["measure"]["reservoir_size"],
                             threads=ctx["threads"])
    tag = eps_tag(cfg["noise"]["epsilon"])
    _write(ctx["out"] / f"histogram_eps{tag}.csv", mu.to_csv(), ctx["outputs"])
    _write(ctx["out"] / f"reservoir_eps{tag}.csv",
           _table([f"x{i + 1}" for i in range(model.m)],
                  [[_fmt(v) for v in x] for x in mu.reservoir]), ctx["outputs"])
    ctx["summary"] = {"leak_mass": mu.leak_mass, "total_samples": mu.total_samples}
    return EXIT_OK


def cmd_sweep(cfg, ctx):
    model = build_model(cfg)
    cands = build_candidates(cfg, model)
    x0 = initial_state(cfg, model)
    mc = cfg["measure"]
    report = convergence_sweep(model, x0, cfg["noise"]["epsilons"], sim_params(cfg), cands,
                               cfg["sim"]["master_seed"], n_paths=cfg["sim"]["n_paths"],
                               delta=mc["delta"], radii=mc["radii"],
                               grid=build_grid(cfg, model.m),
                               reservoir_size=mc["reservoir_size"], threads=ctx["threads"])
    sample = None
    if isinstance(model, ModelSpec):
        sample = flow(model, x0, sim_params(cfg, epsilon=0.0))
    ctx["outputs"] += emit_plotdata(report, ctx["out"], cands, sample)
    ctx["summary"] = {"support_trend_ok": report.support_trend_ok,
                      "cauchy_trend_ok": report.cauchy_trend_ok,
                      "tightness_ok": report.tightness.passed}
    return EXIT_OK


def cmd_converge(cfg, ctx):
    model = build_model(cfg)
    if isinstance(model, DelayModel):
        raise ConfigError("model.name", "converge supports ordinary SDE models only")
    cc = cfg["converge"]
    points = cc["points"] if cc["points"] is not None else [initial_state(cfg, model)]
    points = np.asarray(points, dtype=float).reshape(-1, model.m)
    dt = float(cfg["sim"]["dt"])
    rows, sups = [], []
    for eps in cfg["noise"]["epsilons"]:
        probs = exceedance_probabilities(model, points, eps, float(cc["t"]), dt,
                                         float(cc["threshold"]), cfg["sim"]["n_paths"],
                                         cfg["sim"]["master_seed"], ctx["threads"])
        sups.append(float(np.max(probs)))
        rows.append([_fmt(eps), _fmt(sups[-1])] + [_fmt(p) for p in probs])
    header = ["epsilon", "sup_probability"] + [f"point_{j}" for j in range(len(points))]
    _write(ctx["out"] / "converge.csv", _table(header, rows), ctx["outputs"])
    ok = all(b <= a for a, b in zip(sups, sups[1:]))
    ctx["summary"] = {"decreasing": ok}
    return EXIT_OK if ok else EXIT_CHECK


def exceedance_probabilities(model, points, epsilon, t, dt, threshold, n_paths, seed,
                             threads=None):
    """``P(|X^eps_t - X^0_t| >= threshold)`` for each start point, from coupled
    Euler pairs.  Point ``j`` uses path indices ``[j n, (j + 1) n)``."""
    params = SimParams(dt=dt, t_final=t, epsilon=epsilon)
    run = params.with_(save_every=params.n_steps)
    out = []
    for j, x in enumerate(np.atleast_2d(points)):
        job = EnsembleJob(model, x, run, n_paths, seed, first_index=j * n_paths,
                          batch_size=2048)

        def batch_fn(indices, x=x):
            streams = [derive_stream(seed, int(i)) for i in indices]
            res = simulate_batch(model, x, run, streams, path_indices=indices, coupled=True)
            gap = np.linalg.norm(res.states[-1] - res.states_zero[-1], axis=-1)
            return int(np.count_nonzero(gap >= threshold))

        out.append(sum(map_batches(job, batch_fn, threads)) / n_paths)
    return np.array(out)


def _lyapunov_spec(cfg, m):
    v = cfg["lyapunov"]["V"]
    if v == "quadratic":
        return quadratic_lyapunov(m)
    try:
        expr = parse_field(v, m)
    except ZeroNoiseError as exc:
        raise ConfigError("lyapunov.V", str(exc)) from exc
    return LyapunovSpec(value=expr, label=v)


def cmd_lyapunov(cfg, ctx):
    model = build_model(cfg)
    if isinstance(model, DelayModel):
        raise ConfigError("model.name", "lyapunov scans need an ordinary SDE model")
    lc = cfg["lyapunov"]
    scan = lyapunov_scan(_lyapunov_spec(cfg, model.m), model, cfg["noise"]["epsilon"],
                         lc["radii"], int(lc["samples_per_shell"]),
                         derive_stream(cfg["sim"]["master_seed"], 0))
    _write(ctx["out"] / "lyapunov.csv", scan.to_csv(), ctx["outputs"])
    ctx["summary"] = {"violations": scan.violations}
    for v in scan.violations:
        print(f"violation: {v}", file=sys.stderr)
    return EXIT_OK if scan.ok else EXIT_CHECK


def cmd_equilibria(cfg, ctx):
    model = build_model(cfg)
    if isinstance(model, DelayModel):
        from .dynamics import delay_as_ode
        model = delay_as_ode(model)
    roots = find_equilibria(model, _seeds(cfg, model.m))
    cs = CandidateSet.from_points(roots, provenance="newton")
    for p in cs.points:
        c = classify_equilibrium(model, p.x)
        p.classification, p.eigenvalues = c.kind, c.eigenvalues
    _write(ctx["out"] / "equilibria.csv", equilibria_csv(cs.points), ctx["outputs"])
    ctx["summary"] = {"n_equilibria": len(roots), "n_failed_seeds": roots.n_failed}
    return EXIT_OK


def cmd_decompose(cfg, ctx):
    dc = cfg["decompose"]
    res = decomposition_check(dc["beta"], dc["gamma"], dc["g0"], dc["y"],
                              cfg["noise"]["epsilon"], sim_params(cfg, epsilon=0.0),
                              derive_stream(cfg["sim"]["master_seed"], 0), dc["tolerance"])
    rows = [[_fmt(t)] + [_fmt(v) for v in a] + [_fmt(v) for v in b]
            for t, a, b in zip(res.times, res.lhs, res.rhs)]
    header = ["t", "lhs1", "lhs2", "lhs3", "rhs1", "rhs2", "rhs3"]
    _write(ctx["out"] / "decompose.csv", _table(header, rows), ctx["outputs"])
    ctx["summary"] = {"sup_error": res.sup_error, "tolerance_pass": res.tolerance_pass}
    print(f"sup_error {res.sup_error:.6e} (tolerance {res.tolerance:g})")
    return EXIT_OK if res.tolerance_pass else EXIT_CHECK


def cmd_grad(cfg, ctx):
    model = build_model(cfg)
    if isinstance(model, DelayModel):
        raise ConfigError("model.name", "gradients need an ordinary SDE model")
    gc = cfg["grad"]
    try:
        phi_expr = parse_field(gc["phi"], model.m)
    except ZeroNoiseError as exc:
        raise ConfigError("grad.phi", str(exc)) from exc
    x = np.asarray(gc["x"] if gc["x"] is not None else initial_state(cfg, model), dtype=float)
    h = np.asarray(gc["h"] if gc["h"] is not None else np.ones(model.m), dtype=float)
    params = sim_params(cfg)
    seed, n = cfg["sim"]["master_seed"], cfg["sim"]["n_paths"]
    bel = bel_gradient(model, phi_expr, gc["t"], x, h, n, params, seed, ctx["threads"])
    fd = fd_gradient(model, phi_expr, gc["t"], x, h, gc["delta"], n, params, seed,
                     ctx["threads"])
    _write(ctx["out"] / "grad.csv", gradient_csv([bel, fd]), ctx["outputs"])
    combined = math.hypot(bel.std_error, fd.std_error)
    ok = abs(bel.estimate - fd.estimate) <= 3 * combined
    ctx["summary"] = {"bel": bel.estimate, "fd": fd.estimate, "agree": ok}
    return EXIT_OK if ok else EXIT_CHECK


def cmd_hopfield_check(cfg, ctx):
    params = dict(cfg["model"]["params"]) if cfg["model"]["name"] == "hopfield" else {}
    try:
        model = zoo_build("hopfield", params)
    except ZeroNoiseError as exc:
        raise ConfigError("model.params", str(exc)) from exc
    kappa = float(cfg["hopfield"]["kappa"])
    p = model.params
    bound = math.exp(3 * model.tau)
    try:
        cond = hopfield_condition(p["b_min"], model.tau, kappa, p["lipschitz_g"], p["A_norm"])
    except KappaOutOfRange as exc:
        print(f"{exc}; admissible kappa bound e^(3 tau) = {bound:.6g}")
        ctx["summary"] = {"kappa": kappa, "bound": bound}
        return EXIT_CHECK
    rows = [[_fmt(kappa), _fmt(cond.gamma), _fmt(cond.threshold), _fmt(p["b_min"]),
             str(cond.satisfied).lower()]]
    _write(ctx["out"] / "hopfield.csv",
           _table(["kappa", "gamma", "threshold", "b_min", "satisfied"], rows), ctx["outputs"])
    print(f"gamma {cond.gamma:.6g}, threshold {cond.threshold:.6g}, b_min {p['b_min']:.6g}")
    ctx["summary"] = {"satisfied": cond.satisfied}
    return EXIT_OK if cond.satisfied else EXIT_CHECK


COMMANDS = {
    "flow": cmd_flow,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "occupy": cmd_occupy,
    "sweep": cmd_sweep,
    "lyapunov": cmd_lyapunov,
    "equilibria": cmd_equilibria,
    "decompose": cmd_decompose,
    "grad": cmd_grad,
    "hopfield-check": cmd_hopfield_check,
}


def _versions():
    import scipy
    import sklearn

    return {"zeronoise": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "sklearn": sklearn.__version__}


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)}")


def run_subcommand(name, cfg, threads=None) -> int:
    out = Path(cfg["output"]["directory"])
    ctx = {"out": out, "outputs": [], "threads": threads, "summary": {}}
    code = COMMANDS[name](cfg, ctx)
    manifest = {"command": name, "exit_code": code, "effective_config": cfg,
                "seeds": {"master_seed": cfg["sim"]["master_seed"]},
                "outputs": sorted(ctx["outputs"]), "summary": ctx["summary"],
                "versions": _versions()}
    out.mkdir(parents=True, exist_ok=True)
    (out / f"manifest_{name}.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return code


def build_parser():
    parser = argparse.ArgumentParser(prog="zeronoise",
                                     description="zero-noise limit simulation lab")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON experiment configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry by dotted path")
    parser.add_argument("--out", help="output directory (output.directory)")
    parser.add_argument("--seed", type=int, help="master seed (sim.master_seed)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads; defaults to $ZNL_THREADS (speed only)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        cfg = load_config(args.config, args.overrides, args.seed, args.out)
        return run_subcommand(args.command, cfg, threads)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUp, PathError, NonFiniteOutput, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ZeroNoiseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
