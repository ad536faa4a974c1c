"""Config-driven experiment runner.

``poisson-stein run --config exp.json [--seed N] [--threads N] [--check]``
``poisson-stein list [--json] [--plugin-dir DIR]``
``poisson-stein check --config exp.json``   (validate and print the task plan)

Exit codes: 0 ok, 1 invalid config, 2 acceptance check failed (with
``--check``), 3 numerical failure in a task.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib.util
import json
import math
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .clt_harness import (
    InsufficientSignal,
    ReplicationPlan,
    distance_report,
    fit_rate,
    replicate,
    reports_csv,
    t_key,
)
from .functionals import DegenerateFunctional, build, extensions, get_family, registry
from .parallel import set_default_threads
from .point_process import RngStream
from .stein_bounds import (
    MCPlan,
    NumericalFailure,
    StabilizationPlan,
    assemble_bounds,
    estimate_gammas,
    estimate_stabilization_bound,
)
from .variance_tools import empirical_variance

TASK_ORDER = ("variance", "gammas", "bounds", "stabilization", "clt", "rate")
TAG_VARIANCE, TAG_GAMMAS, TAG_STAB = 10, 20, 30

_VALUE = {"oneOf": [{"type": "number"},
                    {"type": "object", "properties": {"coef": {"type": "number"}, "t_power": {"type": "number"}},
                     "required": ["coef", "t_power"], "additionalProperties": False}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["functional", "model", "tasks", "seed"],
    "additionalProperties": False,
    "properties": {
        "functional": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
        },
        "model": {
            "type": "object", "required": ["t"], "additionalProperties": False,
            "properties": {"t": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}}},
        },
        "tasks": {"type": "array", "minItems": 1, "items": {"enum": list(TASK_ORDER)}},
        "mc": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_outer": {"type": "integer", "minimum": 1}, "n_eta": {"type": "integer", "minimum": 1},
                "n_reps": {"type": "integer", "minimum": 100}, "n_pilot": {"type": "integer", "minimum": 2},
                "n_boot": {"type": "integer", "minimum": 0}, "nodes": {"type": "integer", "minimum": 1},
                "n_inner": {"type": "integer", "minimum": 1}, "proposal": {"enum": ["uniform", "local"]},
                "p1": {"type": "number", "exclusiveMinimum": 0}, "p2": {"type": "number", "exclusiveMinimum": 0},
                "n_pair": {"type": "integer", "minimum": 1}, "lattice_per_axis": {"type": "integer", "minimum": 0},
                "n_random_probes": {"type": "integer", "minimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object", "additionalProperties": False,
            "properties": {"directory": {"type": "string"},
                           "formats": {"type": "array", "items": {"enum": ["csv", "json"]}}},
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object", "required": ["metric", "op", "value"], "additionalProperties": False,
                "properties": {
                    "metric": {"type": "string"}, "op": {"enum": ["le", "ge", "approx", "eq"]},
                    "value": _VALUE, "n_se": {"type": "number", "minimum": 0},
                    "rel_tol": {"type": "number", "minimum": 0}, "abs_tol": {"type": "number", "minimum": 0},
                    "t": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}

MC_DEFAULTS = {"n_outer": 200, "n_eta": 50, "n_reps": 1000, "n_pilot": 1000, "n_boot": 200, "nodes": 16,
               "n_inner": 64, "proposal": "uniform", "p1": 1.0, "p2": 1.0, "n_pair": 8, "lattice_per_axis": 8,
               "n_random_probes": 16}


class ConfigError(ValueError):
    pass


class TaskFailure(RuntimeError):
    def __init__(self, task, err):
        super().__init__(f"task {task!r} failed: {err}")
        self.task = task


def _pointer(path) -> str:
    parts = [str(p) for p in path]
    return "/" + "/".join(parts) if parts else "/"


def load_config(path: str) -> tuple[dict, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno}: {e.msg}") from None
    validate_config(cfg)
    return cfg, hashlib.sha256(text.encode()).hexdigest()


def validate_config(cfg: dict) -> None:
    errs = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        raise ConfigError(f"config key {_pointer(e.absolute_path)}: {e.message}")
    name = cfg["functional"]["name"]
    try:
        fam = get_family(name)
    except KeyError as e:
        raise ConfigError(f"config key /functional/name: {e.args[0]}") from None
    unknown = set(cfg["functional"].get("params", {})) - set(fam.schema)
    if unknown:
        raise ConfigError(f"config key /functional/params/{sorted(unknown)[0]}: not a parameter of {name!r}")
    ts = cfg["model"]["t"]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError("config key /model/t: values must be strictly increasing")


def resolve_tasks(tasks) -> list[str]:
    want = set(tasks)
    if "bounds" in want:
        want.add("gammas")
    if "rate" in want:
        want.add("clt")
    return [t for t in TASK_ORDER if t in want]


def _value(spec, t):
    if isinstance(spec, dict):
        return spec["coef"] * t ** spec["t_power"]
    return float(spec)


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def run_checks(checks, per_t: dict, rate: dict | None) -> list[tuple[str, bool, str]]:
    out = []
    for c in checks or []:
        metric, op = c["metric"], c["op"]
        targets = [("rate", rate)] if metric.startswith("rate.") else sorted(per_t.items())
        for t, row in targets:
            if "t" in c and t not in c["t"]:
                continue
            key = metric.split(".", 1)[1] if metric.startswith("rate.") else metric
            if row is None or row.get(key) is None:
                out.append((f"{metric}@{t}", False, "metric not computed"))
                continue
            v = float(row[key])
            ref = _value(c["value"], t if t != "rate" else 1.0)
            se = float(row.get(f"{key}_se", 0.0) or 0.0)
            n_se = c.get("n_se", 0.0)
            if op == "le":
                ok = v <= ref + n_se * se
            elif op == "ge":
                ok = v >= ref - n_se * se
            elif op == "eq":
                ok = v == ref
            else:
                ok = abs(v - ref) <= c.get("rel_tol", 0.0) * abs(ref) + c.get("abs_tol", 0.0) + n_se * se
            out.append((f"{metric}@{t}", ok, f"{v:.6g} {op} {ref:.6g}"))
    return out


def execute(cfg: dict, config_hash: str, out_dir: Path | None = None, echo=print) -> dict:
    """Run the configured tasks; returns per-t result rows and the rate fit."""
    name = cfg["functional"]["name"]
    params = cfg["functional"].get("params", {})
    seed = int(cfg["seed"])
    mc = {**MC_DEFAULTS, **cfg.get("mc", {})}
    ts = [float(t) for t in cfg["model"]["t"]]
    tasks = resolve_tasks(cfg["tasks"])
    out_cfg = cfg.get("output", {})
    formats = out_cfg.get("formats", ["csv", "json"])
    if out_dir is None:
        out_dir = Path(out_cfg.get("directory", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    root = RngStream(seed)
    meta = {"tool": f"poisson_stein {__version__}", "config_sha256": config_hash, "seed": seed}
    header = f"tool=poisson_stein {__version__}\nconfig_sha256={config_hash}\nseed={seed}"
    per_t = {t: {"functional": name, "t": t, "seed": seed} for t in ts}
    reports = {}
    rate = None

    def family(t):
        return build(name, params, t)

    def guarded(task, fn):
        try:
            return fn()
        except (DegenerateFunctional, NumericalFailure, InsufficientSignal, FloatingPointError,
                ZeroDivisionError, OverflowError) as e:
            raise TaskFailure(task, e) from e

    if "variance" in tasks:
        for t in ts:
            spec, model = family(t)
            est = guarded("variance", lambda: empirical_variance(spec, model, mc["n_reps"],
                                                                  root.child(TAG_VARIANCE, t_key(t))))
            per_t[t].update(variance=est.variance, variance_se=est.std_error_of_variance, mean=est.mean)
    if "gammas" in tasks:
        for t in ts:
            spec, model = family(t)
            plan = MCPlan(mc["n_outer"], mc["n_eta"], root.child(TAG_GAMMAS, t_key(t)), mc["n_pilot"],
                          mc["n_boot"], None, True, mc["proposal"])
            g = guarded("gammas", lambda: estimate_gammas(spec, model, plan))
            for i in range(6):
                per_t[t][f"gamma{i + 1}"] = g.gamma[i]
                per_t[t][f"gamma{i + 1}_se"] = g.std_error[i]
            per_t[t]["fourth_moment_bound"] = g.fourth_moment_bound
            per_t[t]["fourth_moment_source"] = g.fourth_moment_source
            per_t[t]["variance_used"] = g.variance_used
            if "bounds" in tasks:
                b = assemble_bounds(g)
                per_t[t].update(dw_bound=b.dw_bound, dw_bound_se=b.dw_se, dk_bound=b.dk_bound, dk_bound_se=b.dk_se)
    if "stabilization" in tasks:
        for t in ts:
            spec, model = family(t)
            sp = StabilizationPlan(n_outer=mc["n_outer"], n_pair=mc["n_pair"], n_eta=mc["n_eta"],
                                   lattice_per_axis=mc["lattice_per_axis"], n_random_probes=mc["n_random_probes"],
                                   rng=root.child(TAG_STAB, t_key(t)), n_pilot=mc["n_pilot"])
            r = guarded("stabilization", lambda: estimate_stabilization_bound(spec, model, mc["p1"], mc["p2"], sp))
            per_t[t].update(stab_dw_bound=r.dw_bound, stab_dk_bound=r.dk_bound, stab_c1=r.c1, stab_c2=r.c2,
                            stab_m_hat=r.m_hat, stab_Gamma_F=r.Gamma_F)
    if "clt" in tasks:
        plan = ReplicationPlan(tuple(ts), mc["n_reps"], seed, "auto", mc["n_pilot"])
        reps = guarded("clt", lambda: replicate(family, plan))
        for t in ts:
            r = distance_report(t, reps[t].sample, reps[t].variance)
            reports[t] = r
            # 1/sqrt(n) is the scale of the sampling error of both empirical distances
            per_t[t].update(d_K=r.d_K, d_W=r.d_W, dkw_band=r.dkw_band, n=r.n, clt_variance=r.variance,
                            d_K_se=1.0 / math.sqrt(r.n), d_W_se=1.0 / math.sqrt(r.n))
            for side in ("dw", "dk"):
                if f"{side}_bound" in per_t[t]:
                    per_t[t][f"{side}_margin"] = per_t[t][f"{side}_bound"] - per_t[t][f"d_{side[1].upper()}"]
                    per_t[t][f"{side}_margin_se"] = math.hypot(per_t[t][f"{side}_bound_se"], 1.0 / math.sqrt(r.n))
    if "rate" in tasks:
        fit = guarded("rate", lambda: fit_rate([reports[t] for t in ts]))
        rate = fit.to_dict()

    # outputs
    for t in ts:
        stem = f"{name}_{t:g}_{seed}"
        if "csv" in formats and t in reports:
            bounds = {t: (per_t[t]["dw_bound"], per_t[t]["dk_bound"])} if "dw_bound" in per_t[t] else None
            (out_dir / f"{stem}.csv").write_text(reports_csv(name, [reports[t]], seed, bounds, header), newline="")
        if "json" in formats:
            doc = {"meta": meta, "result": {k: _num(v) for k, v in per_t[t].items()}}
            (out_dir / f"{stem}.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if rate is not None and "json" in formats:
        (out_dir / f"{name}_rate_{seed}.json").write_text(
            json.dumps({"meta": meta, "rate": rate}, sort_keys=True, indent=2) + "\n")

    cols = [c for c in ("variance", "gamma3", "dw_bound", "dk_bound", "d_K", "d_W", "dkw_band")
            if any(c in row for row in per_t.values())]
    echo(f"{'t':>10} " + " ".join(f"{c:>12}" for c in cols))
    for t in ts:
        echo(f"{t:>10g} " + " ".join(f"{per_t[t].get(c, float('nan')):>12.5g}" for c in cols))
    if rate is not None:
        echo(f"rate: slope={rate['slope']:.4f} r2={rate['r_squared']:.4f}")
    return {"per_t": per_t, "rate": rate}


def _load_plugins(plugin_dir):
    if not plugin_dir:
        return
    p = Path(plugin_dir)
    if not p.is_dir():
        return
    for f in sorted(p.glob("*.py")):
        spec = importlib.util.spec_from_file_location(f"poisson_stein_plugin_{f.stem}", f)
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)


def list_functionals(as_json: bool = False, plugin_dir=None) -> str:
    _load_plugins(plugin_dir)

    def entry(f):
        return {"name": f.name, "description": f.description, "schema": f.schema, "defaults": f.defaults}

    doc = {"functionals": [entry(f) for _, f in sorted(registry().items())],
           "extensions": [entry(f) for _, f in sorted(extensions().items())]}
    if as_json:
        return json.dumps(doc, sort_keys=True, indent=2)
    lines = []
    for section in ("functionals", "extensions"):
        lines.append(f"[{section}]")
        for e in doc[section]:
            lines.append(f"{e['name']}: {e['description']}")
            for k, v in e["schema"].items():
                lines.append(f"    {k} = {e['defaults'].get(k)!r}  ({v})")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="poisson-stein", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the tasks of an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--check", action="store_true", help="exit 2 if any configured check fails")
    r.add_argument("--out", help="output directory (overrides the config)")
    ls = sub.add_parser("list", help="list registered functionals")
    ls.add_argument("--json", action="store_true")
    ls.add_argument("--plugin-dir")
    ck = sub.add_parser("check", help="validate a config and print its task plan")
    ck.add_argument("--config", required=True)
    args = ap.parse_args(argv)

    if args.cmd == "list":
        print(list_functionals(args.json, args.plugin_dir))
        return 0
    try:
        cfg, digest = load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.cmd == "check":
        print(json.dumps({"functional": cfg["functional"]["name"], "t": cfg["model"]["t"],
                          "tasks": resolve_tasks(cfg["tasks"]), "seed": cfg["seed"]}, sort_keys=True))
        return 0
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.threads is not None:
        set_default_threads(args.threads)
    try:
        res = execute(cfg, digest, Path(args.out) if args.out else None)
    except TaskFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    if args.check:
        results = run_checks(cfg.get("checks"), res["per_t"], res["rate"])
        for label, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        if not all(ok for _, ok, _ in results):
            return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
