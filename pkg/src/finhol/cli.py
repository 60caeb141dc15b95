"""``finhol`` command-line interface.

Every subcommand assembles an experiment configuration from defaults, an
optional ``--config`` JSON file and explicit flags (in that order of
precedence), validates it against :data:`CONFIG_SCHEMA`, runs, and writes a
JSON report that echoes the configuration.

Exit codes: 0 all checks passed, 1 some check failed, 2 invalid
configuration or input, 3 computation error.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, jets
from .geometry import GeometryError, flag_curvature_fit, frame
from .holalg import (
    AngleGrid,
    curvature_field,
    dimension_report,
    generate_algebra,
    numerical_rank,
)
from .jets import JetError
from .mdsl import (
    BUILTINS,
    Domain,
    MetricDomainError,
    MetricParamError,
    MetricSyntaxError,
    builtin_metric,
    custom_metric,
    load_metric_file,
    validate_finsler,
)
from .transport import (
    CurvePath,
    TransportError,
    loop_holonomy,
    parallelogram_commutator,
    transport_many,
    transport_with_info,
)
from .verify import DEFAULT_SEED, SuiteSettings, randers_four_fields, run_suite, witt_identity_residuals

COMMANDS = ("curvature", "flag", "transport", "holonomy", "parallelogram", "algebra", "verify",
            "validate-metric")

_vec2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_VERTICES = {"type": "array", "items": _vec2, "minItems": 2}
_LOOP_SCHEMA = {
    "oneOf": [
        {"type": "object", "required": ["type", "vertices"], "additionalProperties": False,
         "properties": {"type": {"enum": ["polygon", "polyline"]}, "vertices": _VERTICES}},
        {"type": "object", "required": ["type", "x", "X", "Y", "s", "t"], "additionalProperties": False,
         "properties": {"type": {"const": "parallelogram"},
                        "x": _vec2, "X": _vec2, "Y": _vec2,
                        "s": {"type": "number"}, "t": {"type": "number"}}},
    ],
}

_pos = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command", "metric"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "metric": {"type": "string", "minLength": 1},
        "a": _vec2,
        "eps": {"type": "number"},
        "beta_sign": {"enum": [1, -1]},
        "radius": _pos,
        "point": _vec2,
        "y": _vec2,
        "X": _vec2,
        "Y": _vec2,
        "tol": _pos,
        "grid": {"type": "integer", "minimum": 8},
        "depth": {"type": "integer", "minimum": 0},
        "max_fields": {"type": "integer", "minimum": 1},
        "rank_tol": _pos,
        "n_max": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "samples": {"type": "integer", "minimum": 1},
        "steps": {"type": "array", "items": _pos, "minItems": 1},
        "loop": {"oneOf": [{"type": "null"}, _LOOP_SCHEMA]},
        "project": {"type": "boolean"},
        "suite": {"enum": ["paper", "euclidean"]},
        "only": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 1}},
        "jobs": {"type": "integer", "minimum": 1},
        "timings": {"type": "boolean"},
        "out": {"type": ["string", "null"]},
        "csv": {"type": ["string", "null"]},
        "json": {"type": "boolean"},
    },
}

DEFAULTS = {
    "metric": "funk",
    "point": [0.0, 0.0],
    "y": [1.0, 0.0],
    "X": [1.0, 0.0],
    "Y": [0.0, 1.0],
    "tol": 1e-10,
    "grid": 64,
    "depth": 6,
    "max_fields": 64,
    "rank_tol": 1e-8,
    "seed": DEFAULT_SEED,
    "samples": 50,
    "steps": [4e-3, 2e-3, 1e-3],
    "loop": None,
    "project": False,
    "suite": "paper",
    "only": None,
    "jobs": 1,
    "timings": False,
    "out": None,
    "csv": None,
    "json": False,
}


# Per-command overrides of DEFAULTS.
COMMAND_DEFAULTS = {"algebra": {"grid": 256}}


class ConfigError(ValueError):
    pass


class Check(dict):
    """One report row: ``{"name", "value", "threshold", "relation", "passed"}``."""

    def __init__(self, name: str, value: float, threshold: float, relation: str = "<"):
        v, t = float(value), float(threshold)
        ok = {"<": v < t, "<=": v <= t, ">": v > t, ">=": v >= t}[relation]
        super().__init__(name=name, value=v, threshold=t, relation=relation, passed=bool(ok))


# ---------------------------------------------------------------------------
# Argument handling

def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _loop_arg(text: str):
    """Loop descriptor: inline JSON or a path to a JSON file."""
    try:
        if text.lstrip().startswith("{"):
            return json.loads(text)
        with open(text, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, ValueError) as exc:
        raise argparse.ArgumentTypeError(f"cannot read loop descriptor: {exc}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("common options")
    g.add_argument("--metric", help=f"built-in name ({', '.join(BUILTINS)}) or a metric file")
    g.add_argument("--a", type=_floats, metavar="A1,A2", help="projective_randers parameter")
    g.add_argument("--eps", type=float, help="Shen metric parameter")
    g.add_argument("--beta-sign", dest="beta_sign", type=int, choices=(1, -1),
                   help="projective_randers: sign of <a,x> in the linear term's denominator")
    g.add_argument("--radius", type=float, help="domain radius for a metric file (default: whole plane)")
    g.add_argument("--point", type=_floats, metavar="X1,X2", help="base point x (use --point=-0.1,0.2 for negatives)")
    g.add_argument("--tol", type=float, help="integration tolerance")
    g.add_argument("--grid", type=int, help="number of indicatrix angles")
    g.add_argument("--depth", type=int, help="maximum derivative depth for the algebra")
    g.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    g.add_argument("--samples", type=int, help="number of random samples / paths")
    g.add_argument("--config", help="JSON experiment configuration; flags override its values")
    g.add_argument("--out", help="write the JSON report to this path")
    g.add_argument("--json", action="store_true", help="print the JSON report instead of a summary")

    p = argparse.ArgumentParser(prog="finhol", description="Curvature, transport and holonomy algebra "
                                "of Finsler surfaces.")
    p.add_argument("--version", action="version", version=f"finhol {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    c = sub.add_parser("curvature", parents=[common], help="all tensors at one point (x, y)")
    c.add_argument("--y", type=_floats, metavar="Y1,Y2", help="tangent vector y", default=argparse.SUPPRESS)

    sub.add_parser("flag", parents=[common], help="flag-curvature fit at random points")

    t = sub.add_parser("transport", parents=[common], help="parallel transport and F-drift")
    t.add_argument("--loop", type=_loop_arg, help="path descriptor (JSON or file); default: random polylines",
                   default=argparse.SUPPRESS)
    t.add_argument("--y", type=_floats, metavar="Y1,Y2", help="initial vector (with --loop)",
                   default=argparse.SUPPRESS)
    t.add_argument("--project", action="store_true", default=argparse.SUPPRESS,
                   help="project back onto the indicatrix after each step")

    h = sub.add_parser("holonomy", parents=[common], help="sampled holonomy map of a loop")
    h.add_argument("--loop", type=_loop_arg, help="loop descriptor (JSON or file); default: small square at --point",
                   default=argparse.SUPPRESS)
    h.add_argument("--project", action="store_true", default=argparse.SUPPRESS)

    q = sub.add_parser("parallelogram", parents=[common], help="parallelogram commutator convergence")
    q.add_argument("--X", type=_floats, default=argparse.SUPPRESS)
    q.add_argument("--Y", type=_floats, default=argparse.SUPPRESS)
    q.add_argument("--steps", type=_floats, default=argparse.SUPPRESS, help="side lengths s = t")

    al = sub.add_parser("algebra", parents=[common], help="generate the holonomy algebra at a point")
    al.add_argument("--max-fields", dest="max_fields", type=int, default=argparse.SUPPRESS)
    al.add_argument("--rank-tol", dest="rank_tol", type=float, default=argparse.SUPPRESS)
    al.add_argument("--n-max", dest="n_max", type=int, default=argparse.SUPPRESS)
    al.add_argument("--csv", default=argparse.SUPPRESS, help="write the sample matrix as CSV")

    v = sub.add_parser("verify", parents=[common], help="run the verification suite")
    v.add_argument("--suite", choices=("paper", "euclidean"), default=argparse.SUPPRESS)
    v.add_argument("--only", type=_ints, default=argparse.SUPPRESS, help="criterion numbers, e.g. 1,2,9")
    v.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    v.add_argument("--timings", action="store_true", default=argparse.SUPPRESS,
                   help="include wall-clock times in the report (makes it non-reproducible)")

    sub.add_parser("validate-metric", parents=[common], help="positivity, homogeneity and convexity checks")
    return p


def make_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags; validate."""
    given = {k: v for k, v in vars(args).items() if k != "config"}
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    cfg.update(given)
    if cfg.get("command") != args.command:
        raise ConfigError(f"config command {cfg.get('command')!r} does not match subcommand {args.command!r}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(top level)"
        raise ConfigError(f"invalid configuration at {where}: {exc.message}") from None


def load_model(cfg: dict):
    name = cfg["metric"]
    key = name.replace("-", "_").lower()
    if key in BUILTINS:
        params = {}
        if "a" in cfg:
            params["a"] = tuple(cfg["a"])
        if "beta_sign" in cfg:
            params["beta_sign"] = cfg["beta_sign"]
        if "eps" in cfg:
            params["eps"] = cfg["eps"]
        return builtin_metric(key, params)
    path = Path(name)
    if not path.is_file():
        raise ConfigError(f"metric {name!r} is neither a built-in ({', '.join(BUILTINS)}) nor a file")
    radius = cfg.get("radius", math.inf)
    dom = Domain(radius, "plane" if math.isinf(radius) else f"disk |x| < {radius:g}")
    return custom_metric(load_metric_file(path), path.stem, dom)


# ---------------------------------------------------------------------------
# Commands

def _random_unit(rng, n):
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([np.cos(th), np.sin(th)])


def cmd_curvature(cfg, model) -> dict:
    fr = frame(model, cfg["point"], cfg["y"])
    lam, res = flag_curvature_fit(fr)
    checks = [Check("g condition number", np.linalg.cond(fr.g), 1e8)]
    return {"frame": fr.to_dict(), "flag_curvature": lam, "fit_residual": res, "checks": checks}


def cmd_flag(cfg, model) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    n = cfg["samples"]
    x = model.domain.sample(rng, n).T
    lam, res = flag_curvature_fit(frame(model, x, _random_unit(rng, n)))
    checks = [Check("max relative fit residual", np.max(res), 1e-8)]
    if model.flag_curvature is not None:
        checks.append(Check(f"max |lambda - ({model.flag_curvature:g})|",
                            np.max(np.abs(lam - model.flag_curvature)), 1e-8))
    return {
        "lambda_mean": float(np.mean(lam)), "lambda_min": float(np.min(lam)), "lambda_max": float(np.max(lam)),
        "max_residual": float(np.max(res)), "expected_lambda": model.flag_curvature, "checks": checks,
    }


def cmd_transport(cfg, model) -> dict:
    tol = cfg["tol"]
    if cfg["loop"] is not None:
        path = CurvePath.from_descriptor(cfg["loop"])
        res = transport_with_info(model, path, cfg["y"], tol, cfg["project"])
        out = {"y_end": res.y.tolist()}
    else:
        rng = np.random.default_rng(cfg["seed"])
        paths = [CurvePath.polyline(model.domain.sample(rng, 4)) for _ in range(cfg["samples"])]
        res = transport_many(model, paths, _random_unit(rng, len(paths)), tol, cfg["project"])
        out = {"paths": len(paths)}
    out.update({"F_drift": res.drift, "steps": res.info.steps, "rejected_steps": res.info.rejected,
                "checks": [Check("max relative F-drift", res.drift, 100 * tol)]})
    return out


def _default_loop(point) -> dict:
    x = np.asarray(point, dtype=float)
    h = 0.05
    verts = [x, x + [h, 0], x + [h, h], x + [0, h]]
    return {"type": "polygon", "vertices": [v.tolist() for v in verts]}


def cmd_holonomy(cfg, model) -> dict:
    desc = cfg["loop"] if cfg["loop"] is not None else _default_loop(cfg["point"])
    loop = CurvePath.from_descriptor(desc)
    h = loop_holonomy(model, loop, cfg["grid"], cfg["tol"], cfg["project"])
    checks = [Check("monotone circle map", float(h.is_monotone()), 1, ">="),
              Check("|F - 1| after the loop", h.drift, 100 * cfg["tol"])]
    return {"holonomy": h.to_dict(), "loop": desc, "checks": checks}


def cmd_parallelogram(cfg, model) -> dict:
    x, X, Y = cfg["point"], cfg["X"], cfg["Y"]
    grid = AngleGrid(model, x, cfg["grid"], 0)
    exact = grid.chart(curvature_field(X, Y))
    rows, errors = [], []
    for s in cfg["steps"]:
        f = parallelogram_commutator(model, x, X, Y, s, s, cfg["grid"], min(cfg["tol"], 1e-13))
        err = float(np.max(np.abs(f.values - exact)))
        errors.append(err)
        rows.append({"s": s, "max_error": err, "field": f.values.tolist()})
    orders = [math.log(errors[i] / errors[i + 1]) / math.log(cfg["steps"][i] / cfg["steps"][i + 1])
              for i in range(len(errors) - 1) if errors[i + 1] > 0 and errors[i] > 0]
    checks = [Check(f"observed order {cfg['steps'][i]:g} -> {cfg['steps'][i + 1]:g}", o, 0.9, ">=")
              for i, o in enumerate(orders)]
    scale = max(1.0, float(np.max(np.abs(exact))))
    checks.append(Check("max error at the smallest step, rel.", errors[-1] / scale, 1e-2))
    return {"curvature_field": exact.tolist(), "t": grid.t.tolist(), "runs": rows, "orders": orders,
            "checks": checks}


def cmd_algebra(cfg, model) -> dict:
    grid_n = max(cfg["grid"], 8)
    span = generate_algebra(model, cfg["point"], max_depth=cfg["depth"], max_fields=cfg["max_fields"],
                            grid_n=grid_n, rank_tol=cfg["rank_tol"], n_max=cfg.get("n_max"))
    report = dimension_report(span)
    out = {"span": span.to_dict(), "dimension": report.to_dict()}
    checks = [Check("rank change on the 2N grid", abs(span.rank_refined - span.rank), 0, "<="),
              Check("tangency dF(xi), rel.", span.tangency, 1e-8)]
    if cfg["depth"] >= 2:
        ctx = AngleGrid(model, cfg["point"], grid_n, 2)
        r4, sv = numerical_rank(np.array([ctx.chart(f) for f in randers_four_fields()]), cfg["rank_tol"])
        out["four_field_rank"] = {"fields": [f.label for f in randers_four_fields()], "rank": r4,
                                  "singular_values": sv.tolist()}
    if model.name == "funk" and np.allclose(cfg["point"], 0) and cfg["depth"] >= 6:
        w = witt_identity_residuals(AngleGrid(model, cfg["point"], 64, 6))
        out["circle_mode_identities"] = w
    if cfg["csv"]:
        span.write_csv(cfg["csv"])
    out["checks"] = checks
    return out


def cmd_validate(cfg, model) -> dict:
    rep = validate_finsler(model, cfg["samples"], cfg["seed"])
    d = rep.to_dict()
    d["checks"] = [Check("failed samples", d["failures"], 0, "<=")]
    return d


def cmd_verify(cfg, model) -> dict:
    point = tuple(cfg["point"])
    # criteria at a base point use the unit-disk models; check before running anything
    builtin_metric("funk").check_domain(point)
    suite = "euclidean" if model.name == "euclidean" else cfg["suite"]
    settings = SuiteSettings(seed=cfg["seed"], transport_tol=cfg["tol"], point=point, timings=cfg["timings"])
    rep = run_suite(suite, settings, cfg["only"], cfg["jobs"])
    checks = [Check(f"criterion {r.number}: {r.title}", float(r.passed), 1, ">=") for r in rep.results]
    return {"suite": rep.to_dict(), "checks": checks}


HANDLERS = {
    "curvature": cmd_curvature,
    "flag": cmd_flag,
    "transport": cmd_transport,
    "holonomy": cmd_holonomy,
    "parallelogram": cmd_parallelogram,
    "algebra": cmd_algebra,
    "verify": cmd_verify,
    "validate-metric": cmd_validate,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2)


def run(cfg: dict) -> tuple[int, dict]:
    """Execute a validated configuration; returns ``(exit_code, report)``."""
    report = {"finhol_version": __version__, "config": cfg, "max_jet_order": jets.max_order()}
    try:
        model = load_model(cfg)
        report["metric"] = model.describe()
        result = HANDLERS[cfg["command"]](cfg, model)
    except (ConfigError, MetricSyntaxError, MetricParamError) as exc:
        report.update(error=str(exc), passed=False)
        return 2, report
    except (MetricDomainError, GeometryError, TransportError, JetError, ValueError, ArithmeticError) as exc:
        report.update(error=f"{type(exc).__name__}: {exc}", passed=False)
        return 3, report
    checks = result.pop("checks", [])
    report.update(result=result, checks=checks, passed=all(c["passed"] for c in checks))
    return (0 if report["passed"] else 1), report


def _summary(report: dict) -> str:
    lines = [f"finhol {report['config']['command']}  metric={report.get('metric', {}).get('name', '?')}"]
    if "error" in report:
        lines.append(f"error: {report['error']}")
    for c in report.get("checks", []):
        lines.append(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['name']}: {c['value']:.6g} "
                     f"{c['relation']} {c['threshold']:.6g}")
    if report["config"]["command"] == "verify" and "result" in report:
        for crit in report["result"]["suite"]["criteria"]:
            for c in crit["checks"]:
                if not c["passed"]:
                    lines.append(f"      criterion {crit['number']} failing: {c['name']} = {c['value']:.6g}")
            if crit["error"]:
                lines.append(f"      criterion {crit['number']} error: {crit['error']}")
    lines.append("passed" if report.get("passed") else "FAILED")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = make_config(args)
    except ConfigError as exc:
        print(f"finhol: {exc}", file=sys.stderr)
        return 2
    code, report = run(cfg)
    text = dumps(report)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text + "\n", encoding="utf-8")
    if cfg["json"]:
        print(text)
    else:
        print(_summary(report))
    if code >= 2:
        print(f"finhol: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
