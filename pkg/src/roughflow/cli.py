"""Command-line front end.

Subcommands ``field-sample``, ``flow-trace``, ``verify`` and ``experiment``
share ``--config``, ``--out``, ``--seed`` and ``--threads``.  A JSON config
(with a ``schema_version`` field) supplies defaults; flags given on the
command line override it.  Outputs are written to a temporary directory and
moved into ``--out`` only when the command finishes.

Exit status: 0 all checks passed, 1 a check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
import tempfile

import numpy as np

from . import __version__
from .engine import IntegratorConfig, integrate
from .experiments import (
    EXPERIMENTS,
    SCHEMA_VERSION,
    ConfigError,
    ExperimentConfig,
    run_experiment,
    write_report,
)
from .fields import eval_b, eval_b_eps
from .flows import breakpoints, flow_eps_closed, flow_eps_piecewise, write_trajectory_csv
from .geometry import ApproxParams, Region, classify_eps, classify_limit
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", help="JSON config file (flags override its values)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="random seed (non-negative integer)")
    p.add_argument("--threads", type=int, help="cap on the parallel batch width")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="roughflow", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"roughflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("field-sample", help="sample the limit or approximating field on a box")
    _common(p)
    p.add_argument("--field", choices=("limit", "approx"), help="field to sample")
    p.add_argument("--theta", type=float, help="rotation angle in radians (approx field)")
    p.add_argument("--eps", type=float, help="regularisation scale (approx field)")
    p.add_argument("--box", type=float, nargs=6, metavar=("X0", "X1", "Y0", "Y1", "Z0", "Z1"),
                   help="sampling box")
    p.add_argument("--n", type=int, nargs="+", help="points per axis (one value or three)")

    p = sub.add_parser("flow-trace", help="trace one trajectory of the approximating field")
    _common(p)
    p.add_argument("--start", type=float, nargs=3, metavar=("X", "Y", "Z"))
    p.add_argument("--theta", type=float, help="rotation angle in radians")
    p.add_argument("--eps", type=float, help="regularisation scale")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--n-times", type=int, dest="n_times", help="output times for the closed form")
    p.add_argument("--closed-form", action="store_true", dest="closed_form",
                   help="write the closed-form trace")
    p.add_argument("--engine", action="store_true", help="write the integrated trace")
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)

    p = sub.add_parser("verify", help="run verification suites")
    _common(p)
    p.add_argument("suite", nargs="?", choices=SUITES + ("all",))
    p.add_argument("--theta", type=float, help="rotation angle in radians")
    p.add_argument("--eps", type=float, help="regularisation scale")

    p = sub.add_parser("experiment", help="run an experiment driver")
    _common(p)
    p.add_argument("id", nargs="?", choices=EXPERIMENTS)
    p.add_argument("--theta", type=float, help="rotation angle in radians")
    p.add_argument("--phi", type=float, help="second rotation angle in radians")
    p.add_argument("--eps", type=float, nargs="+", help="decreasing eps schedule")
    p.add_argument("--deltas", type=float, nargs="+", help="decreasing mollification widths")
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--grid-n", type=int, dest="grid_n")
    return parser


# -- config handling ---------------------------------------------------------------

DEFAULTS = {
    "field-sample": {"field": "approx", "theta": math.pi / 2, "eps": 0.1,
                     "box": [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0], "n": [11], "seed": 0, "threads": 1},
    "flow-trace": {"start": [0.3, 0.0, 1.0], "theta": math.pi / 2, "eps": 0.05, "T": 0.5,
                   "n_times": 201, "closed_form": False, "engine": False, "rtol": 1e-10,
                   "atol": 1e-12, "seed": 0, "threads": 1},
    "verify": {"suite": "all", "theta": math.pi / 2, "eps": 0.05, "seed": 0, "threads": 1},
}

_GENERIC = {"schema_version", "command", "out", "config"}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}")
    return data


def resolve(args) -> dict:
    """Defaults, then config file, then explicit flags."""
    cmd = args.command
    file_cfg = load_config(args.config) if args.config else {"schema_version": SCHEMA_VERSION}
    if "command" in file_cfg and file_cfg["command"] != cmd:
        raise ConfigError(f"config is for command {file_cfg['command']!r}, not {cmd!r}")
    flags = {k: v for k, v in vars(args).items() if v is not None and v is not False
             and k not in ("command", "config")}
    if cmd == "experiment":
        if "id" in flags:
            flags["experiment"] = flags.pop("id")
        merged = {k: v for k, v in file_cfg.items() if k != "command"}
        merged.update(flags)
        return merged
    known = set(DEFAULTS[cmd]) | _GENERIC
    unknown = set(file_cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys for {cmd}: {sorted(unknown)}")
    merged = dict(DEFAULTS[cmd])
    merged.update({k: v for k, v in file_cfg.items() if k not in _GENERIC})
    merged.update(flags)
    merged["schema_version"] = SCHEMA_VERSION
    if merged.get("seed", 0) < 0:
        raise ConfigError("seed must be non-negative")
    if merged.get("threads", 1) < 1:
        raise ConfigError("threads must be positive")
    return merged


def _params(cfg) -> ApproxParams:
    try:
        return ApproxParams(float(cfg["eps"]), float(cfg["theta"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- commands -------------------------------------------------------------------------

def cmd_field_sample(cfg, out) -> int:
    box = [float(v) for v in cfg["box"]]
    n = [int(v) for v in cfg["n"]]
    if len(box) != 6 or any(b < a for a, b in zip(box[0::2], box[1::2])):
        raise ConfigError("box must be X0 X1 Y0 Y1 Z0 Z1 with X0 <= X1 etc.")
    if len(n) == 1:
        n = n * 3
    if len(n) != 3 or min(n) < 1:
        raise ConfigError("n must be one or three positive integers")
    axes = [np.linspace(box[2 * i], box[2 * i + 1], n[i]) for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    if cfg["field"] == "limit":
        vals = eval_b(pts)
        labels = np.atleast_1d(classify_limit(pts))
    else:
        params = _params(cfg)
        vals = eval_b_eps(params, pts)
        labels = np.atleast_1d(classify_eps(params, pts))
    with open(os.path.join(out, "field_samples.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y", "z", "bx", "by", "bz", "region_label"])
        for p, v, lab in zip(pts, vals, labels):
            wr.writerow([repr(float(c)) for c in p] + [repr(float(c)) for c in v]
                        + [Region(int(lab)).tag])
    _write_json(out, "manifest.json", {"command": "field-sample", "config": cfg,
                                       "n_points": len(pts), "version": __version__})
    return EXIT_OK


def cmd_flow_trace(cfg, out) -> int:
    params = _params(cfg)
    start = np.array(cfg["start"], dtype=float)
    if start.shape != (3,):
        raise ConfigError("start must have three coordinates")
    T = float(cfg["T"])
    if T <= 0:
        raise ConfigError("T must be positive")
    want_closed = cfg["closed_form"] or not cfg["engine"]
    want_engine = cfg["engine"] or not cfg["closed_form"]
    manifest = {"command": "flow-trace", "config": cfg, "version": __version__,
                "start_region": classify_eps(params, start).tag}
    if classify_eps(params, start) == Region.P_PLUS_EPS:
        manifest["breakpoints"] = breakpoints(params, float(start[2])).as_tuple()
    closed_states = None
    if want_closed:
        ts = np.linspace(0.0, T, int(cfg["n_times"]))
        if classify_eps(params, start) == Region.P_PLUS_EPS:
            states, segs = flow_eps_closed(params, ts, start, with_segment=True)
        else:
            states = flow_eps_piecewise(params, ts, start)
            segs = np.atleast_1d(classify_eps(params, states))
        write_trajectory_csv(os.path.join(out, "trace_closed.csv"), ts, states, list(segs))
        closed_states = states
    if want_engine:
        icfg = IntegratorConfig(rtol=float(cfg["rtol"]), atol=float(cfg["atol"]),
                                event_tol=min(1e-12, float(cfg["atol"])))
        rec = integrate_engine(params, start, T, icfg)
        write_trajectory_csv(os.path.join(out, "trace_engine.csv"), rec.times, rec.states,
                             rec.labels)
        manifest["engine"] = rec.manifest()
        if closed_states is not None:
            ref = flow_eps_piecewise(params, rec.times, start)
            manifest["max_engine_closed_gap"] = float(np.max(np.abs(rec.states - ref)))
    _write_json(out, "manifest.json", manifest)
    return EXIT_OK


def integrate_engine(params, start, T, icfg):
    from .fields import ApproxField

    return integrate(ApproxField(params), start, (0.0, T), icfg)


def cmd_verify(cfg, out) -> int:
    params = _params(cfg)
    results = run_suite(cfg["suite"], params, seed=int(cfg["seed"]))
    passed = all(r["passed"] for r in results)
    _write_json(out, "verify.json", {"config": cfg, "version": __version__, "passed": passed,
                                     "results": results})
    for r in results:
        print(f"{r['suite']:<12} {'PASS' if r['passed'] else 'FAIL'}")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_experiment(cfg, out) -> int:
    if "experiment" not in cfg:
        raise ConfigError("experiment id missing")
    cfg = dict(cfg)
    cfg.setdefault("schema_version", SCHEMA_VERSION)
    cfg["out"] = out
    ecfg = ExperimentConfig.from_dict(cfg)
    report = run_experiment(ecfg)
    for name, ok in report.checks.items():
        print(f"{name:<40} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {"field-sample": cmd_field_sample, "flow-trace": cmd_flow_trace,
            "verify": cmd_verify, "experiment": cmd_experiment}


def _write_json(out, name, obj):
    from .experiments import _jsonable

    with open(os.path.join(out, name), "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
    except UsageError as exc:
        print(f"roughflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"roughflow: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = os.path.abspath(args.out or f"roughflow-{args.command}")
    parent = os.path.dirname(out)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".roughflow-", dir=parent)
    try:
        cfg_out = dict(cfg)
        cfg_out.pop("out", None)
        status = COMMANDS[args.command](cfg_out, tmp)
    except ConfigError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        print(f"roughflow: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _commit(tmp, out)
    return status


def _commit(tmp, out):
    """Move the finished outputs into place."""
    if not os.path.exists(out):
        os.rename(tmp, out)
        return
    for name in os.listdir(tmp):
        os.replace(os.path.join(tmp, name), os.path.join(out, name))
    os.rmdir(tmp)


if __name__ == "__main__":
    sys.exit(main())
