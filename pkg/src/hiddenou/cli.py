"""Command-line front end.

Every subcommand reads a JSON config, validates it against ``SCHEMA`` (unknown
keys are rejected, defaults filled in), runs, and writes CSV or JSON. The first
line of CSV output is ``# config: {...}`` holding the effective config; JSON
output carries it under the ``config`` key. Either file can be passed back
as ``--config`` to reproduce the run.

Exit codes: 0 ok, 1 I/O failure, 2 invalid config, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import io
import json
import math
import sys

import jsonschema
import numpy as np

from . import cumulants as cu
from . import density as de
from . import filtering as fi
from . import futures as fu
from . import indifference as ind
from .model import AugmentedState, DomainError, ModelParams, PayoffSpec, Prior, ThetaAtom, PAYOFF_KINDS
from .simulate import THREADS_ENV, PathGrid, RngConfig, simulate_physical, simulate_physical_with_prior, \
    simulate_risk_neutral

COMMANDS = ("simulate", "filter", "price-futures", "price-indifference", "density", "cumulants")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nums = {"type": "array", "items": _num, "minItems": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=(), **kw):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False, **kw}


_law = _obj({"values": _nums, "weights": {"type": "array", "items": _pos}}, ["values"])

SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1, "default": 0},
    "model": _obj({
        "f": _num, "sigma": _pos, "r": _num, "f0": _pos, "t1": _pos,
        "gamma": {**_pos, "default": 1.0},
    }, ["f", "sigma", "r", "f0", "t1"]),
    "prior": _obj({
        "atoms": {"type": "array", "items": _pair, "minItems": 1},
        "weights": {"type": "array", "items": _pos},
        "grid": _obj({"theta0": _pair, "theta1": _pair, "n0": _posint, "n1": _posint},
                     ["theta0", "theta1", "n0", "n1"]),
    }, oneOf=[{"required": ["atoms"], "not": {"required": ["grid"]}},
              {"required": ["grid"], "not": {"anyOf": [{"required": ["atoms"]}, {"required": ["weights"]}]}}]),
    "payoff": _obj({
        "kind": {"enum": list(PAYOFF_KINDS)},
        "strike": {**_num, "default": 0.0},
        "cap": {"type": ["number", "null"], "default": None},
    }, ["kind"]),
    "simulate": _obj({
        "measure": {"enum": ["physical", "risk-neutral"], "default": "physical"},
        "horizon": _pos, "n_steps": _posint,
        "n_paths": {**_posint, "default": 1},
        "theta": {**_pair, "default": None, "type": ["array", "null"]},
    }, ["horizon", "n_steps"]),
    "filter": _obj({
        "horizon": _pos, "n_steps": _posint,
        "theta": {**_pair, "default": None, "type": ["array", "null"]},
        "path_csv": {"type": ["string", "null"], "default": None},
    }),
    "futures": _obj({
        "payoff": _obj({"kind": {"enum": ["call", "put", "digital"]}, "strike": _pos}, ["kind", "strike"]),
        "maturity": _pos,
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "futures": {"type": "array", "items": _pos, "minItems": 1},
        "vol": _obj({"levels": {"type": "array", "items": _pos, "minItems": 1}, "breaks": _nums}, ["levels"]),
        "n_nodes": {**_posint, "default": fu.DEFAULT_NODES},
    }, ["payoff", "maturity", "times", "futures"]),
    "indifference": _obj({
        "maturity": _pos,
        "gamma": {**_pos, "type": ["number", "null"], "default": None},
        "hedge_state": {**_obj({"t": {"type": "number", "minimum": 0}, "y": _num, "p": _num, "q": _num},
                               ["t", "y", "p", "q"]), "type": ["object", "null"], "default": None},
        "hedge_component": {"enum": ["claim", "total"], "default": "claim"},
    }, ["maturity"]),
    "mc": _obj({
        "n_paths": {"type": "integer", "minimum": 100, "default": 20000},
        "n_steps": {**_posint, "default": 64},
        "bump_y": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.1, "default": 1e-2},
    }),
    "density": _obj({
        "t": _pos, "y": _nums, "p": _nums, "q": _nums,
        "form": {"enum": ["derived", "paper"], "default": "derived"},
    }, ["t", "y", "p", "q"]),
    "inversion": _obj({
        "n_nodes": {"type": "integer", "minimum": 8, "default": 48},
        "series_threshold": {**_pos, "default": 1e-2},
        "negative_tolerance": {**_pos, "default": 1e-6},
        "check_nodes": {"type": "integer", "minimum": 0, "default": 8},
        "check_rtol": {**_pos, "default": 1e-4},
    }),
    "cumulants": _obj({
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "speed": _law, "level": _law,
    }, ["times"], dependentRequired={"speed": ["level"], "level": ["speed"]}),
})

# blocks each command needs; "mc"/"inversion" are filled from defaults when absent
REQUIRED = {
    "simulate": ("model", "simulate"),
    "filter": ("model", "prior", "filter"),
    "price-futures": ("model", "futures"),
    "price-indifference": ("model", "prior", "payoff", "indifference", "mc"),
    "density": ("model", "density", "inversion"),
    "cumulants": ("model", "prior", "cumulants"),
}


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


def _fill_defaults(schema, node):
    if schema.get("type") in ("object", ["object", "null"]) and isinstance(node, dict):
        for key, sub in schema.get("properties", {}).items():
            if key not in node and "default" in sub:
                node[key] = copy.deepcopy(sub["default"])
            if key in node:
                _fill_defaults(sub, node[key])


def _field(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def load_config(text: str) -> dict:
    """Parse a JSON config, or recover the echoed config from a previous output."""
    stripped = text.lstrip()
    if stripped.startswith("#"):
        first = stripped.splitlines()[0]
        if not first.startswith("# config: "):
            raise ConfigError("line 1: comment header is not an echoed config")
        stripped = first[len("# config: "):]
    try:
        cfg = json.loads(stripped)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}: invalid JSON: {e.msg}") from None
    if isinstance(cfg, dict) and "config" in cfg and "price" in cfg:
        cfg = cfg["config"]
    return cfg


def resolve_config(cfg, command: str, seed: int | None = None) -> dict:
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = seed
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"field {_field(e)}: {e.message}")
    for block in REQUIRED[command]:
        if block in ("mc", "inversion"):
            cfg.setdefault(block, {})
        if block not in cfg:
            raise ConfigError(f"field {block}: required by '{command}'")
    _fill_defaults(SCHEMA, cfg)
    return cfg


def _model(cfg) -> ModelParams:
    return ModelParams(**cfg["model"])


def _prior(cfg) -> Prior:
    p = cfg["prior"]
    if "grid" in p:
        g = p["grid"]
        return Prior.grid(tuple(g["theta0"]), tuple(g["theta1"]), g["n0"], g["n1"])
    return Prior([ThetaAtom(a, b) for a, b in p["atoms"]], p.get("weights"))


def _with_header(cfg, body: str) -> str:
    return "# config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":")) + "\n" + body


def _cmd_simulate(cfg, threads):
    params, s = _model(cfg), cfg["simulate"]
    out = io.StringIO()
    for i in range(s["n_paths"]):
        if s["measure"] == "risk-neutral":
            path, label = simulate_risk_neutral(params, s["horizon"], s["n_steps"], RngConfig(cfg["seed"], i)), ""
        elif s["theta"] is not None:
            atom = ThetaAtom(*s["theta"])
            path = simulate_physical(atom, params, s["horizon"], s["n_steps"], RngConfig(cfg["seed"], i))
            label = f" theta0={atom.theta0!r} theta1={atom.theta1!r}"
        else:
            if "prior" not in cfg:
                raise ConfigError("field prior: required when simulate.theta is not given")
            [(atom, path)] = simulate_physical_with_prior(_prior(cfg), params, s["horizon"], s["n_steps"], 1,
                                                          RngConfig(cfg["seed"], i))
            label = f" theta0={atom.theta0!r} theta1={atom.theta1!r}"
        _check_finite(np.stack([path.y, path.p, path.q]))
        text = path.to_csv()
        if i:
            text = text.split("\n", 1)[1]
        out.write(f"# path {i}{label}\n" + text)
    return _with_header(cfg, out.getvalue())


def _read_path(name) -> PathGrid:
    try:
        data = np.loadtxt(name, delimiter=",", comments="#", skiprows=0, dtype=str)
    except OSError:
        raise
    except ValueError as e:
        raise ConfigError(f"field filter.path_csv: {e}") from None
    if data.ndim != 2 or list(data[0]) != ["t", "y", "p", "q"]:
        raise ConfigError("field filter.path_csv: expected a t,y,p,q table")
    vals = data[1:].astype(float)
    return PathGrid(vals[:, 0], vals[:, 1], vals[:, 2], vals[:, 3])


def _cmd_filter(cfg, threads):
    params, prior, s = _model(cfg), _prior(cfg), cfg["filter"]
    if s["path_csv"] is not None:
        path = _read_path(s["path_csv"])
    else:
        for key in ("horizon", "n_steps"):
            if key not in s:
                raise ConfigError(f"field filter.{key}: required when filter.path_csv is not given")
        rng = RngConfig(cfg["seed"])
        if s["theta"] is not None:
            path = simulate_physical(ThetaAtom(*s["theta"]), params, s["horizon"], s["n_steps"], rng)
        else:
            [(_, path)] = simulate_physical_with_prior(prior, params, s["horizon"], s["n_steps"], 1, rng)
    posts = fi.filter_along_path(prior, path, params)
    return _with_header(cfg, fi.estimates_csv(posts, path.times))


def _cmd_price_futures(cfg, threads):
    params, s = _model(cfg), cfg["futures"]
    pay = {"call": fu.call, "put": fu.put, "digital": fu.digital}[s["payoff"]["kind"]](s["payoff"]["strike"])
    vol = s.get("vol")
    curve = fu.VolCurve.constant(params.sigma) if vol is None else \
        fu.VolCurve(tuple(vol["levels"]), tuple(vol.get("breaks", [0.0])))
    for t in s["times"]:
        if t > s["maturity"]:
            raise ConfigError("field futures.times: every time must be <= maturity")
    return _with_header(cfg, fu.pricing_csv(pay, s["times"], s["futures"], s["maturity"], curve, params.r,
                                            s["n_nodes"]))


def _cmd_price_indifference(cfg, threads):
    params, prior, s, m = _model(cfg), _prior(cfg), cfg["indifference"], cfg["mc"]
    gamma = params.gamma if s["gamma"] is None else s["gamma"]
    pay = PayoffSpec(**cfg["payoff"])
    mc = ind.McConfig(m["n_paths"], m["n_steps"], RngConfig(cfg["seed"]), m["bump_y"], threads)
    price, se = ind.indifference_price(pay, s["maturity"], gamma, prior, params, mc)
    extra = {}
    if s["hedge_state"] is not None:
        st = AugmentedState(**s["hedge_state"])
        hedge_mc = ind.McConfig(m["n_paths"], m["n_steps"], RngConfig(cfg["seed"], 1), m["bump_y"], threads)
        h, hse = ind.optimal_hedge(st, pay, s["maturity"], gamma, prior, params, hedge_mc, s["hedge_component"])
        extra = {"hedge": h, "hedge_std_error": hse}
    _check_finite([price, se, *extra.values()])
    return ind.result_json(price, se, gamma, mc.n_paths, config=cfg, **extra) + "\n"


def _cmd_density(cfg, threads):
    params, s, inv = _model(cfg), cfg["density"], de.InversionConfig(**cfg["inversion"])
    return _with_header(cfg, de.density_csv(s["t"], s["y"], s["p"], s["q"], params, inv, form=s["form"]))


def _cmd_cumulants(cfg, threads):
    params, prior, s = _model(cfg), _prior(cfg), cfg["cumulants"]
    asym = (cu.DiscreteLaw(**s["speed"]), cu.DiscreteLaw(**s["level"])) if "speed" in s else None
    return _with_header(cfg, cu.cumulants_csv(prior, s["times"], params, asym))


HANDLERS = {
    "simulate": _cmd_simulate,
    "filter": _cmd_filter,
    "price-futures": _cmd_price_futures,
    "price-indifference": _cmd_price_indifference,
    "density": _cmd_density,
    "cumulants": _cmd_cumulants,
}


def _check_finite(values):
    if not np.all(np.isfinite(np.asarray(values, dtype=float))):
        raise NumericalError("non-finite value in output")


def _check_csv_finite(text: str):
    for line in text.splitlines():
        if line.startswith("#"):
            continue
        cells = line.split(",")
        if cells[0] == "inf":  # label of the long-time cumulant row
            cells = cells[1:]
        try:
            vals = [float(c) for c in cells]
        except ValueError:  # header row
            continue
        if not all(math.isfinite(v) for v in vals):
            raise NumericalError("non-finite value in output")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiddenou", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON config (or a previous output file)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--out", default=None, help="output file (default: standard output)")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"worker threads (default: ${THREADS_ENV} or 1)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 1
    try:
        cfg = resolve_config(load_config(text), args.command, args.seed)
        body = HANDLERS[args.command](cfg, args.threads)
        if not body.lstrip().startswith("{"):
            _check_csv_finite(body)
    except (ConfigError, DomainError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, de.InversionAccuracyError, fi.NumericalDegeneracyError,
            fu.PayoffEvaluationError, ArithmeticError) as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 1
    try:
        if args.out is None:
            sys.stdout.write(body)
            sys.stdout.flush()
        else:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(body)
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
