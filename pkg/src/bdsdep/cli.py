"""Batch front end: configure problems, run solves and experiment suites.

Subcommands: ``simulate-forward``, ``solve``, ``verify``,
``continuous-dependence``, ``feynman-kac``, ``converge-study``.  Every run
writes a ``manifest.json`` (resolved configuration, seeds, versions,
timestamp), a deterministic ``results.json`` (no timestamps, so identical
configurations reproduce it byte for byte), delimited ``*.csv`` tables,
and, unless plotting is disabled, PNG figures next to them.

Exit codes: 0 success, 2 configuration/validation failure (the message
names the offending key path), 3 numeric failure (blow-up, divergence, or
a failed verification check, with step context where available).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .backward import BackwardConfig, solution_norms, solve_backward
from .catalog import CATALOG_NAMES, catalog_problem
from .diagnostics import (
    apriori_bound,
    constant_shift_family,
    continuous_dependence,
    driver_shift_family,
    terminal_second_moment,
    uniqueness_probe,
)
from .drivers import check_growth, check_monotone
from .errors import BdsdepError, ConfigError
from .feynman_kac import estimate_u, fk_oracle, fk_problem, u_surface
from .forward import simulate_forward_batch
from .noise import TimeGrid, generate_batch, generate_bundle

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "schemaVersion": SCHEMA_VERSION,
    "seed": 0,
    "problem": "linear-scalar",
    "plot": True,
    "grid": {"t0": 0.0, "horizon": 1.0, "steps": 50},
    "solver": {
        "innerPaths": 2000,
        "outerRuns": 1,
        "basisDegree": 2,
        "maxTotalDegree": None,
        "picardTol": 1e-12,
        "picardMaxIter": 200,
        "picardInit": "ce",
        "mollifyOrder": None,
        "quadNodes": 24,
        "mcFallbackSamples": 20000,
    },
    "forward": {"paths": 50},
    "feynmanKac": {
        "problem": "heat-quadratic",
        "reaction": 0.0,
        "tPoints": [0.0, 0.45, 0.9],
        "xPoints": [-0.5, 0.0, 0.5],
        "outerRuns": 5,
    },
    "continuousDependence": {"family": "constant-shift", "levels": [1, 2, 4, 8, 16]},
    "convergeStudy": {
        "stepsList": [25, 50, 100],
        "seeds": [0, 1, 2],
        "reaction": 3.0,
        "innerPaths": 10000,
        "outerRuns": 1,
    },
    "verify": {
        "problems": list(CATALOG_NAMES),
        "runs": 10,
        "checkerSamples": 100000,
    },
}


# --- configuration handling --------------------------------------------------


def _type_ok(default, value):
    if default is None:
        return value is None or isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int) and not isinstance(default, bool):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return True


def _merge(base: dict, override: dict, prefix: str, provided: set) -> dict:
    out = {}
    for key, default in base.items():
        path = f"{prefix}{key}"
        if key not in override:
            out[key] = default
            continue
        value = override[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config value at {path} must be a table")
            out[key] = _merge(default, value, path + ".", provided)
        else:
            if not _type_ok(default, value):
                raise ConfigError(
                    f"config value at {path} has wrong type: {value!r}"
                )
            out[key] = value
            provided.add(path)
    for key in override:
        if key not in base:
            raise ConfigError(f"unknown config key: {prefix}{key}")
    return out


def _apply_set(target: dict, dotted: str, raw: str, provided: set):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = DEFAULT_CONFIG
    cursor = target
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"unknown config key: {dotted}")
        node = node[k]
        cursor = cursor.setdefault(k, {})
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {dotted}")
    default = node[leaf]
    if isinstance(default, dict):
        raise ConfigError(f"config key {dotted} is a table, not a value")
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not _type_ok(default, value):
        raise ConfigError(f"config value at {dotted} has wrong type: {value!r}")
    cursor[leaf] = value
    provided.add(dotted)


def load_config(config_path, seed, sets):
    raw = {}
    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a JSON object")
    provided: set = set()
    merged_input = dict(raw)
    config = _merge(DEFAULT_CONFIG, merged_input, "", provided)
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, raw_val = item.split("=", 1)
        _apply_set(config, dotted, raw_val, provided)
    if seed is not None:
        config["seed"] = int(seed)
        provided.add("seed")
    if config["schemaVersion"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schemaVersion {config['schemaVersion']} (expected {SCHEMA_VERSION})"
        )
    return config, provided


def _backward_cfg(config: dict, provided: set, base: BackwardConfig) -> BackwardConfig:
    """Problem default config with user-provided solver keys layered on."""
    solver = config["solver"]
    mapping = {
        "solver.innerPaths": ("inner_paths", solver["innerPaths"]),
        "solver.outerRuns": ("outer_runs", solver["outerRuns"]),
        "solver.basisDegree": ("basis_degree", solver["basisDegree"]),
        "solver.maxTotalDegree": ("max_total_degree", solver["maxTotalDegree"]),
        "solver.picardTol": ("picard_tol", float(solver["picardTol"])),
        "solver.picardMaxIter": ("picard_max_iter", solver["picardMaxIter"]),
        "solver.picardInit": ("picard_init", solver["picardInit"]),
        "solver.mollifyOrder": ("mollify_order", solver["mollifyOrder"]),
        "solver.quadNodes": ("quad_nodes", solver["quadNodes"]),
        "solver.mcFallbackSamples": ("mc_fallback_samples", solver["mcFallbackSamples"]),
        "grid.steps": ("steps", config["grid"]["steps"]),
    }
    kwargs = {}
    for path, (field_name, value) in mapping.items():
        if path in provided:
            kwargs[field_name] = value
    return replace(base, **kwargs)


def _grid(config: dict, provided: set, cfg: BackwardConfig) -> TimeGrid:
    g = config["grid"]
    steps = g["steps"] if "grid.steps" in provided else cfg.steps
    return TimeGrid(float(g["t0"]), float(g["horizon"]), int(steps))


# --- output helpers ----------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


class RunWriter:
    def __init__(self, out_dir: Path, subcommand: str, config: dict):
        self.out_dir = out_dir
        self.subcommand = subcommand
        self.config = config
        self.outputs = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def results(self, payload: dict):
        payload = {"schemaVersion": SCHEMA_VERSION, "subcommand": self.subcommand, **payload}
        path = self.out_dir / "results.json"
        _write_json(path, payload)
        self.outputs.append(path.name)

    def csv(self, name: str, header, rows):
        path = self.out_dir / name
        _write_csv(path, header, rows)
        self.outputs.append(path.name)

    def figure(self, name: str, render) -> None:
        if not self.config["plot"]:
            return
        path = self.out_dir / name
        render(path)
        self.outputs.append(path.name)

    def manifest(self):
        path = self.out_dir / "manifest.json"
        _write_json(
            path,
            {
                "schemaVersion": SCHEMA_VERSION,
                "subcommand": self.subcommand,
                "resolvedConfig": self.config,
                "packageVersion": __version__,
                "numpyVersion": np.__version__,
                "pythonVersion": sys.version.split()[0],
                "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "outputs": sorted(self.outputs),
            },
        )


# --- subcommands -------------------------------------------------------------


def _cmd_simulate_forward(config, provided, writer):
    problem = catalog_problem(config["problem"], config["grid"]["horizon"])
    cfg = _backward_cfg(config, provided, problem.default_cfg)
    grid = _grid(config, provided, cfg)
    n_paths = int(config["forward"]["paths"])
    batch = generate_batch(grid, problem.model.d, problem.spec.marks, n_paths, config["seed"])
    fwd = simulate_forward_batch(problem.model, batch)
    times = grid.times
    rows = []
    for p in range(n_paths):
        for i in range(grid.steps + 1):
            inside = 1 if i < fwd.exit_index[p] or fwd.exit_index[p] == grid.steps else 0
            rows.append(
                (p, i, float(times[i]), *[float(v) for v in fwd.X[p, i]], inside)
            )
    xcols = [f"x{j}" for j in range(problem.model.m)]
    writer.csv("paths.csv", ["path", "step", "t", *xcols, "in_domain"], rows)
    terminal = fwd.exit_states()
    writer.results(
        {
            "problem": problem.name,
            "paths": n_paths,
            "terminalMean": terminal.mean(axis=0),
            "terminalStd": terminal.std(axis=0),
            "exitFraction": float(np.mean(fwd.exit_index < grid.steps)),
            "meanExitTime": float(fwd.exit_times().mean()),
        }
    )
    from .report import save_paths_figure

    writer.figure(
        "paths.png",
        lambda path: save_paths_figure(times, fwd.X[:, :, 0], fwd.exit_index, path),
    )
    return 0


def _solve_runs(problem, cfg, grid, seed):
    sols = []
    for o in range(cfg.outer_runs):
        outer = generate_bundle(
            grid, d=problem.model.d, l=problem.spec.l, marks=problem.spec.marks,
            seed=seed, stream_id=o,
        )
        sols.append(
            solve_backward(
                problem.model, problem.spec, problem.terminal, cfg, outer,
                seed=seed, stream_id=o,
            )
        )
    return sols


def _cmd_solve(config, provided, writer):
    problem = catalog_problem(config["problem"], config["grid"]["horizon"])
    cfg = _backward_cfg(config, provided, problem.default_cfg)
    grid = _grid(config, provided, cfg)
    sols = _solve_runs(problem, cfg, grid, config["seed"])
    p0 = np.array([s.p0 for s in sols])
    norms = [solution_norms(s) for s in sols]
    lead = sols[0]
    times = grid.times
    p_mean = lead.P.mean(axis=1)[:, 0]
    p_std = lead.P.std(axis=1)[:, 0]
    rows = [
        (
            i,
            float(times[i]),
            float(p_mean[i]),
            float(p_std[i]),
            float(np.sqrt(np.mean(np.sum(np.square(lead.Q[i]), axis=(1, 2))))) if i < grid.steps else "",
            float(np.sqrt(np.mean(np.sum(np.square(lead.K[i]), axis=(1, 2))))) if i < grid.steps else "",
            int(lead.diagnostics.picard_iterations[i]) if i < grid.steps else "",
            float(lead.diagnostics.picard_residuals[i]) if i < grid.steps else "",
        )
        for i in range(grid.steps + 1)
    ]
    writer.csv(
        "steps.csv",
        ["step", "t", "p_mean", "p_std", "q_rms", "k_rms", "picard_iters", "picard_residual"],
        rows,
    )
    payload = {
        "problem": problem.name,
        "p0": {
            "mean": p0.mean(axis=0),
            "std": p0.std(axis=0, ddof=1) if len(sols) > 1 else np.zeros(p0.shape[1]),
            "perRun": p0,
        },
        "norms": {
            key: float(np.mean([n[key] for n in norms]))
            for key in ("sSq", "mSq", "fSq", "total")
        },
        "picard": {
            "maxIterations": int(max(s.diagnostics.picard_iterations.max() for s in sols)),
            "maxResidual": float(max(s.diagnostics.picard_residuals.max() for s in sols)),
        },
        "mollifyOrder": cfg.mollify_order,
    }
    if problem.analytic is not None:
        payload["analyticP0"] = float(problem.analytic(grid.t0))
    writer.results(payload)
    from .report import save_solution_figure

    writer.figure(
        "p_profile.png", lambda path: save_solution_figure(times, p_mean, p_std, path)
    )
    return 0


def _cmd_verify(config, provided, writer):
    vcfg = config["verify"]
    seed = int(config["seed"])
    all_ok = True
    per_problem = {}
    for name in vcfg["problems"]:
        problem = catalog_problem(name, config["grid"]["horizon"])
        cfg = _backward_cfg(config, provided, problem.default_cfg)
        grid = TimeGrid(0.0, config["grid"]["horizon"], cfg.steps)
        growth = check_growth(problem.spec, int(vcfg["checkerSamples"]), seed)
        monotone = check_monotone(problem.spec, int(vcfg["checkerSamples"]), seed)
        e2 = terminal_second_moment(
            problem.model, problem.spec, problem.terminal, grid, seed=seed
        )
        bound = apriori_bound(problem.spec, e2)
        totals = []
        for k in range(int(vcfg["runs"])):
            outer = generate_bundle(
                grid, d=problem.model.d, l=problem.spec.l, marks=problem.spec.marks,
                seed=seed + k, stream_id=0,
            )
            sol = solve_backward(
                problem.model, problem.spec, problem.terminal, cfg, outer, seed=seed + k
            )
            totals.append(solution_norms(sol)["total"])
        probe = uniqueness_probe(problem, cfg, seeds=(seed,))
        entry = {
            "growthMaxRatio": growth.max_violation,
            "monotoneMaxRatio": monotone.max_violation,
            "assumptionsOk": bool(growth.ok and monotone.ok),
            "terminalSecondMoment": e2,
            "aprioriBound": bound,
            "normTotals": totals,
            "aprioriOk": bool(max(totals) <= bound),
            "uniquenessGap": probe.max_gap,
            "uniquenessOk": bool(probe.ok),
        }
        entry["ok"] = bool(
            entry["assumptionsOk"] and entry["aprioriOk"] and entry["uniquenessOk"]
        )
        all_ok = all_ok and entry["ok"]
        per_problem[name] = entry
    writer.results({"problems": per_problem, "allOk": all_ok})
    writer.csv(
        "verify.csv",
        ["problem", "growth_max_ratio", "monotone_max_ratio", "apriori_bound",
         "norm_total_max", "uniqueness_gap", "ok"],
        [
            (
                name,
                entry["growthMaxRatio"],
                entry["monotoneMaxRatio"],
                entry["aprioriBound"],
                max(entry["normTotals"]),
                entry["uniquenessGap"],
                int(entry["ok"]),
            )
            for name, entry in per_problem.items()
        ],
    )
    return 0 if all_ok else 3


def _cmd_continuous_dependence(config, provided, writer):
    cd = config["continuousDependence"]
    family_name = cd["family"]
    horizon = config["grid"]["horizon"]
    if family_name == "constant-shift":
        family = constant_shift_family(horizon)
    elif family_name == "driver-shift":
        family = driver_shift_family(horizon)
    else:
        raise ConfigError(f"unknown family {family_name!r} at continuousDependence.family")
    base_cfg = BackwardConfig(inner_paths=1000, basis_degree=1, steps=20)
    cfg = _backward_cfg(config, provided, base_cfg)
    rows = continuous_dependence(
        family, cfg, levels=tuple(int(m) for m in cd["levels"]), seed=config["seed"]
    )
    # Squared gaps below this floor are exact zeros up to rounding noise;
    # clamp before the monotonicity flags so ties register as ties.
    floor = 1e-24
    sup = [r["supGap"] if r["supGap"] > floor else 0.0 for r in rows]
    qk = [r["qkGap"] if r["qkGap"] > floor else 0.0 for r in rows]
    writer.results(
        {
            "family": family_name,
            "rows": rows,
            "supGapMonotone": bool(all(a >= b for a, b in zip(sup, sup[1:]))),
            "qkGapMonotone": bool(all(a >= b for a, b in zip(qk, qk[1:]))),
            "envelopeOk": bool(all(r["supGap"] <= r["envelope"] for r in rows)),
        }
    )
    writer.csv(
        "gaps.csv",
        ["m", "delta", "sup_gap", "qk_gap", "input_gap", "bihari_envelope"],
        [
            (r["m"], r["delta"], r["supGap"], r["qkGap"], r["inputGap"], r["envelope"])
            for r in rows
        ],
    )
    from .report import save_gap_figure

    writer.figure("gaps.png", lambda path: save_gap_figure(rows, path))
    return 0


def _cmd_feynman_kac(config, provided, writer):
    fk = config["feynmanKac"]
    horizon = config["grid"]["horizon"]
    problem = fk_problem(fk["problem"], horizon, reaction=float(fk["reaction"]))
    base_cfg = BackwardConfig(inner_paths=4000, basis_degree=2, steps=50)
    cfg = _backward_cfg(config, provided, base_cfg)
    rows = u_surface(
        problem,
        [float(t) for t in fk["tPoints"]],
        [[float(x)] for x in fk["xPoints"]],
        cfg,
        outer_runs=int(fk["outerRuns"]),
        seed=config["seed"],
    )
    for r in rows:
        r["oracle"] = fk_oracle(
            fk["problem"], r["t"], r["x"], horizon, reaction=float(fk["reaction"])
        )
    writer.results({"problem": fk["problem"], "rows": rows})
    writer.csv(
        "surface.csv",
        ["t", "x", "u_mean", "u_std", "u_stderr", "oracle"],
        [
            (r["t"], r["x"][0], r["mean"][0], r["std"][0], r["stderr"][0], r["oracle"])
            for r in rows
        ],
    )
    from .report import save_surface_figure

    writer.figure("surface.png", lambda path: save_surface_figure(rows, path))
    return 0


def _cmd_converge_study(config, provided, writer):
    cs = config["convergeStudy"]
    horizon = config["grid"]["horizon"]
    reaction = float(cs["reaction"])
    problem = fk_problem("heat-quadratic", horizon, reaction=reaction)
    x0 = [0.0]
    oracle = fk_oracle("heat-quadratic", 0.0, x0, horizon, reaction=reaction)
    rows = []
    for s in cs["seeds"]:
        for steps in cs["stepsList"]:
            cfg = BackwardConfig(
                inner_paths=int(cs["innerPaths"]),
                basis_degree=2,
                steps=int(steps),
                picard_tol=1e-12,
            )
            est = estimate_u(
                problem, 0.0, x0, cfg, outer_runs=int(cs["outerRuns"]), seed=int(s)
            )
            rows.append(
                {
                    "steps": int(steps),
                    "seed": int(s),
                    "estimate": float(est.mean[0]),
                    "oracle": oracle,
                    "absError": abs(float(est.mean[0]) - oracle),
                }
            )
    monotone_seeds = []
    for s in cs["seeds"]:
        errs = [r["absError"] for r in rows if r["seed"] == s]
        monotone_seeds.append(all(a > b for a, b in zip(errs, errs[1:])))
    majority = sum(monotone_seeds) > len(monotone_seeds) / 2
    writer.results(
        {
            "reaction": reaction,
            "oracle": oracle,
            "rows": rows,
            "monotonePerSeed": monotone_seeds,
            "majorityMonotone": bool(majority),
        }
    )
    writer.csv(
        "convergence.csv",
        ["steps", "seed", "estimate", "oracle", "abs_error"],
        [(r["steps"], r["seed"], r["estimate"], r["oracle"], r["absError"]) for r in rows],
    )
    from .report import save_convergence_figure

    writer.figure("convergence.png", lambda path: save_convergence_figure(rows, path))
    return 0


_COMMANDS = {
    "simulate-forward": _cmd_simulate_forward,
    "solve": _cmd_solve,
    "verify": _cmd_verify,
    "continuous-dependence": _cmd_continuous_dependence,
    "feynman-kac": _cmd_feynman_kac,
    "converge-study": _cmd_converge_study,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bdsdep",
        description="Backward doubly stochastic solver and verification harness",
    )
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", metavar="PATH", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="64-bit master seed")
    parser.add_argument("--out", metavar="DIR", default=None, help="run output directory")
    parser.add_argument(
        "--set",
        metavar="KEY=VALUE",
        action="append",
        default=[],
        dest="sets",
        help="override a config value by dotted key path (repeatable)",
    )
    args = parser.parse_args(argv)

    try:
        config, provided = load_config(args.config, args.seed, args.sets)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out) if args.out else Path("runs") / args.subcommand
    writer = RunWriter(out_dir, args.subcommand, config)
    try:
        code = _COMMANDS[args.subcommand](config, provided, writer)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BdsdepError as exc:
        step = getattr(exc, "step", None)
        context = f" (step {step})" if step is not None else ""
        print(f"numeric failure{context}: {exc}", file=sys.stderr)
        return 3
    writer.manifest()
    return code


if __name__ == "__main__":
    raise SystemExit(main())
