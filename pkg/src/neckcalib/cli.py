"""``neckcalib`` command line.

A run is described by one JSON document::

    {
      "spec":    {... full NeckSpec config ...}  or  {"preset": "jlt", "a": [1, 1]},
      "command": {"name": "calibrate", "points": 10000, ...},
      "seed":    42,
      "output":  {"path": "report.json", "format": "json"}
    }

Command-line flags override the document; ``--set a.b=value`` overrides any
field by dotted path (values are parsed as JSON when possible).

Exit codes: 0 success, 1 configuration error, 2 numerical degeneracy,
3 a finding (comass violation, negative volume excess, hypothesis witness).
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import time
from typing import Any, Optional

import numpy as np

from . import calibration as cal
from . import linalg
from . import variational as var
from .catalog import preset_spec
from .errors import NeckCalibError, NumericalDegeneracyError
from .metric import NeckSpec, product_factor, resolve_q0, spec_from_config, spec_to_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FINDING = 0, 1, 2, 3

COMMANDS = ("selftest", "find-q0", "calibrate", "comass-max", "probe", "volume-compare",
            "minimality")

_Q0 = {"grid": 201, "refine_tol": 1e-10}
DEFAULTS: dict[str, dict[str, Any]] = {
    "selftest": {"instances": 1000, "max_n": 10},
    "find-q0": dict(_Q0),
    "calibrate": {**_Q0, "points": 10000, "frames_per_point": 10, "q_mode": "uniform",
                  "lifted": False, "max_violations": 1000},
    "comass-max": {**_Q0, "restarts": 100, "iters": 200},
    "probe": {**_Q0, "points": 1000, "frames_per_point": 10, "restarts": 50, "iters": 200},
    "volume-compare": {**_Q0, "amplitudes": [0.1, 0.5, 1.0], "modes": None, "trials": 100,
                       "nodes": None},
    "minimality": {**_Q0, "modes": None, "step": 1e-3, "nodes": None, "tol": 1e-4},
}

CSV_COLUMNS = ["command", "spec_id", "seed", "coordinatewise_min", "q0", "metric", "value",
               "samples", "findings", "exit_code", "wall_time_s"]


class ConfigError(NeckCalibError):
    pass


# -- config handling -----------------------------------------------------

def load_config(text: str) -> dict[str, Any]:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def emit_config(cfg: dict[str, Any]) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict[str, Any], assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for key in keys[:-1]:
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set path {path!r} crosses a non-object field")
        node = nxt
    node[keys[-1]] = _parse_value(raw)


def _build_spec(block: dict[str, Any]) -> NeckSpec:
    if "preset" in block:
        return preset_spec(block)
    return spec_from_config(block)


def resolve_config(command: str, cfg: dict[str, Any]) -> tuple[dict[str, Any], Optional[NeckSpec]]:
    """Fill defaults and expand presets; returns (resolved config, spec or None)."""
    cfg = copy.deepcopy(cfg)
    block = cfg.get("command") or {}
    if not isinstance(block, dict):
        raise ConfigError("'command' must be an object")
    name = block.get("name", command)
    if name != command:
        raise ConfigError(f"config is for command {name!r}, but {command!r} was requested")
    unknown = set(block) - set(DEFAULTS[command]) - {"name", "samples"}
    if unknown:
        raise ConfigError(f"unknown {command} parameters: {sorted(unknown)}")
    params = {**DEFAULTS[command], **{k: v for k, v in block.items() if k != "name"}}
    if "samples" in params:
        fpp = int(params["frames_per_point"]) if "frames_per_point" in params else 1
        params["points"] = -(-int(params.pop("samples")) // max(fpp, 1))
    for key, val in params.items():
        if isinstance(val, (int, float)) and not isinstance(val, bool) and val < 0:
            raise ConfigError(f"{command}.{key} must be non-negative")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    out = cfg.get("output") or {}
    fmt = out.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError(f"unknown output format {fmt!r}")

    spec = None
    resolved: dict[str, Any] = {"command": {"name": command, **params}, "seed": seed,
                                "output": {"path": out.get("path"), "format": fmt}}
    if command != "selftest":
        if "spec" not in cfg:
            raise ConfigError(f"command {command!r} needs a 'spec' block")
        try:
            spec = _build_spec(cfg["spec"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed spec block: {exc!r}") from None
        resolved["spec"] = spec_to_config(spec)
    return resolved, spec


# -- commands ------------------------------------------------------------

def _selftest(params, seed, threads):
    rng = np.random.default_rng(seed)
    worst_cb = worst_w = 0.0
    count = int(params["instances"])
    max_n = int(params["max_n"])
    for _ in range(count):
        n = int(rng.integers(1, max_n + 1))
        k = int(rng.integers(1, n + 1))
        A = rng.standard_normal((k, n))
        lhs, rhs = linalg.cauchy_binet_check(A)
        worst_cb = max(worst_cb, abs(lhs - rhs) / max(1.0, abs(lhs)))
        w = rng.uniform(0.1, 3.0, n)
        direct = linalg.gram_det(A, w)
        worst_w = max(worst_w, abs(linalg.weighted_minor_expansion(A, w) - direct)
                      / max(1.0, abs(direct)))
    B, w = np.array([[1.0, 1.0, 0.0]]), np.array([2.0, 3.0, 5.0])
    witness = {"B": B.tolist(), "w": w.tolist(),
               "weighted": linalg.weighted_minor_expansion(B, w),
               "full_product": linalg.full_product_expansion(B, w)}
    ok = worst_cb <= 1e-9 and worst_w <= 1e-9
    result = {"instances": count, "cauchy_binet_max_rel_error": worst_cb,
              "weighted_max_rel_error": worst_w, "uncorrected_witness": witness, "passed": ok}
    code = EXIT_OK if ok else EXIT_NUMERIC
    return result, ("max_rel_error", max(worst_cb, worst_w), count, 0 if ok else 1), code


def _calibrate(spec, params, seed, threads):
    rep = cal.comass_sweep(spec, int(params["points"]), int(params["frames_per_point"]), seed,
                           threads, q_mode=params["q_mode"], lifted=bool(params["lifted"]),
                           max_violations=int(params["max_violations"]))
    result = rep.to_dict()
    result["violation_count"] = rep.violation_count
    code = EXIT_FINDING if rep.violation_count else EXIT_OK
    return result, ("max_ratio", rep.max_ratio, rep.samples, rep.violation_count), code


def _comass_max(spec, params, seed, threads):
    ratio, frame = cal.max_ratio_search(spec, int(params["restarts"]), int(params["iters"]), seed)
    result = {"ratio": ratio, "frame": frame.to_dict(),
              "fiber_norm": float(np.linalg.norm(frame.fiber))}
    found = ratio > 1.0 + cal.VIOLATION_TOL
    samples = int(params["restarts"]) * (int(params["iters"]) + 1)
    return result, ("ratio", ratio, samples, int(found)), EXIT_FINDING if found else EXIT_OK


def _probe(spec, params, seed, threads):
    rep = cal.probe_hypothesis(spec, int(params["points"]), int(params["frames_per_point"]),
                               int(params["restarts"]), int(params["iters"]), seed, threads)
    samples = int(params["points"]) * int(params["frames_per_point"])
    code = EXIT_FINDING if rep.found else EXIT_OK
    return rep.to_dict(), ("max_ratio", rep.max_ratio, samples, int(rep.found)), code


def _rule(spec, params):
    nodes = params.get("nodes")
    return var.quadrature_rule(spec.n, None if nodes is None else int(nodes))


def _volume_compare(spec, params, seed, threads):
    rep = var.perturbation_test(spec, params["amplitudes"], params["modes"],
                                int(params["trials"]), _rule(spec, params), seed, threads)
    bad = sum(e.excess < -var.EXCESS_TOL for e in rep.entries)
    code = EXIT_FINDING if rep.violated else EXIT_OK
    return rep.to_dict(), ("min_excess", rep.min_excess, len(rep.entries), bad), code


def _minimality(spec, params, seed, threads):
    rule = _rule(spec, params)
    modes = params["modes"]
    modes = var.degree2_modes(spec.n) if modes is None else [var.parse_mode(m) for m in modes]
    per_mode = {var.mode_label(m): var.first_variation(spec, m, float(params["step"]), rule,
                                                       threads)
                for m in modes}
    defect = max(abs(v) for v in per_mode.values())
    base = var.graph_volume(spec, var.GraphSection.constant(float(spec.q0[0])), rule, threads)
    found = defect > float(params["tol"])
    result = {"baseline_volume": base, "entries": [], "min_excess": None, "defect": defect,
              "first_variation": per_mode}
    return result, ("defect", defect, len(modes), int(found)), EXIT_FINDING if found else EXIT_OK


def _find_q0(spec, params, seed, threads):
    result = {"q0": list(spec.q0), "coordinatewise_min": spec.coordinatewise_min,
              "product_factor": product_factor(spec, spec.q0)}
    return result, ("product_factor", result["product_factor"], 0, 0), EXIT_OK


HANDLERS = {"calibrate": _calibrate, "comass-max": _comass_max, "probe": _probe,
            "volume-compare": _volume_compare, "minimality": _minimality, "find-q0": _find_q0}


def _strip_nan(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _strip_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strip_nan(v) for v in obj]
    return obj


def run(command: str, cfg: dict[str, Any], threads: int = 1) -> tuple[int, dict[str, Any], str]:
    """Execute one run; returns ``(exit_code, report, rendered_text)``.

    Raises ``ConfigError``/``NeckCalibError`` for the caller to map onto exit codes.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    t0 = time.perf_counter()
    resolved, spec = resolve_config(command, cfg)
    params = resolved["command"]
    seed = resolved["seed"]
    header: dict[str, Any] = {"command": command, "config": resolved, "seed": seed}
    if spec is None:
        result, (metric, value, samples, findings), code = _selftest(params, seed, threads)
        sid, q0, cw = "", None, None
    else:
        spec = resolve_q0(spec, int(params["grid"]), float(params["refine_tol"]))
        result, (metric, value, samples, findings), code = HANDLERS[command](
            spec, params, seed, threads)
        sid, q0, cw = cal.spec_id(spec), list(spec.q0), spec.coordinatewise_min
    wall = time.perf_counter() - t0
    report = {**header, "spec_id": sid, "q0": q0, "coordinatewise_min": cw,
              "status": "finding" if code == EXIT_FINDING else ("ok" if code == 0 else "failed"),
              "exit_code": code, "result": result, "wall_time_s": wall}
    report = _strip_nan(report)
    if resolved["output"]["format"] == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerow([command, sid, seed, cw, "" if q0 is None else " ".join(map(repr, q0)),
                         metric, repr(float(value)), samples, findings, code, f"{wall:.6f}"])
        text = buf.getvalue()
    else:
        text = json.dumps(report, indent=2) + "\n"
    return code, report, text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neckcalib",
        description="Numerical checks of the calibration π* vol_{g(q0)} on neck manifolds.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run document")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="report path (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg: dict[str, Any] = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    cfg = load_config(fh.read())
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        for assignment in args.set:
            apply_override(cfg, assignment)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.out is not None or args.format is not None:
            out = cfg.setdefault("output", {})
            if args.out is not None:
                out["path"] = args.out
            if args.format is not None:
                out["format"] = args.format
        code, report, text = run(args.command, cfg, max(1, args.threads))
    except NumericalDegeneracyError as exc:
        print(f"neckcalib: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NeckCalibError, ValueError, KeyError, TypeError) as exc:
        print(f"neckcalib: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    path = report["config"]["output"]["path"]
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
