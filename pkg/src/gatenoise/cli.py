"""Command-line front end.

Usage: ``gatenoise <command> [options]`` with commands filter1, filter2,
fidelity, sweep, mc, compare, validate and preset-list. Options come from
flags, then a JSON ``--config`` file, then built-in defaults (in that order of
precedence); ``--show-config`` prints the merged result and exits.

Exit codes: 0 success, 1 failed validation, 2 invalid configuration,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, control, fidelity, filters, montecarlo, validation
from .io import (AtomicOutputs, ConfigError, csv_text, json_text, load_sequence,
                 load_spectrum)
from .quadrature import QuadratureError
from .spectra import DivergentSpectrumError

DEFAULTS = {
    "preset": None,
    "sequence": None,
    "rate": None,
    "tau": None,
    "spectrum": None,
    "freq_points": None,
    "freq_min": None,
    "freq_max": None,
    "rtol": 1e-8,
    "trajectories": 200,
    "dt": None,
    "seed": 0,
    "workers": 1,
    "retain_trajectories": False,
    "out": "-",
    "format": None,
    "gates": None,
    "tau_min": 1.0,
    "tau_max": 10.0,
    "tau_points": 10,
    "fourth_order": False,
    "f2_points": 33,
    "max_deviation": None,
    "checks": None,
}

FORMATS = {"filter1": "csv", "filter2": "csv", "sweep": "csv", "compare": "csv",
           "fidelity": "json", "mc": "json", "validate": "json", "preset-list": "json"}
FREQ_POINTS = {"filter1": 200, "filter2": 33}

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class ValidationFailed(Exception):
    """Command ran to completion but reported failed checks."""


# -- configuration -----------------------------------------------------------

def _shared(p: argparse.ArgumentParser):
    S = argparse.SUPPRESS
    g = p.add_argument_group("sequence")
    g.add_argument("--preset", default=S, help=f"named gate: {', '.join(control.PRESETS)}")
    g.add_argument("--sequence", default=S, help="sequence JSON (file path or inline)")
    g.add_argument("--rate", type=float, default=S, help="drive rate Omega (rad/time)")
    g.add_argument("--tau", type=float, default=S,
                   help="duration of free/hahn_echo; pi-pulse time for rotation presets")
    g = p.add_argument_group("noise and numerics")
    g.add_argument("--spectrum", default=S, help="spectrum JSON (file path or inline)")
    g.add_argument("--freq-points", type=int, default=S, dest="freq_points")
    g.add_argument("--freq-min", type=float, default=S, dest="freq_min")
    g.add_argument("--freq-max", type=float, default=S, dest="freq_max")
    g.add_argument("--rtol", type=float, default=S)
    g = p.add_argument_group("Monte Carlo")
    g.add_argument("--trajectories", type=int, default=S)
    g.add_argument("--dt", type=float, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--workers", type=int, default=S)
    g.add_argument("--retain-trajectories", action="store_true", default=S,
                   dest="retain_trajectories")
    g = p.add_argument_group("output")
    g.add_argument("--out", default=S, help="output path, '-' for stdout")
    g.add_argument("--format", choices=("csv", "json"), default=S)
    g.add_argument("--config", default=None, help="JSON file of option values")
    g.add_argument("--show-config", action="store_true", dest="show_config",
                   help="print the merged configuration and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatenoise", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    S = argparse.SUPPRESS
    helps = {
        "filter1": "first-order filter function F1 and its components",
        "filter2": "fourth-order filter terms on a square frequency grid",
        "fidelity": "second- and fourth-order fidelity for one gate and spectrum",
        "sweep": "gate error versus primitive pulse time",
        "mc": "Monte Carlo ensemble fidelity",
        "compare": "analytic versus Monte Carlo error over a pulse-time sweep",
        "validate": "run the built-in invariant suite",
        "preset-list": "list the named gate constructions",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        _shared(p)
        if name in ("sweep", "compare"):
            p.add_argument("--gates", default=S, help="comma-separated preset names")
            p.add_argument("--tau-min", type=float, default=S, dest="tau_min")
            p.add_argument("--tau-max", type=float, default=S, dest="tau_max")
            p.add_argument("--tau-points", type=int, default=S, dest="tau_points")
        if name in ("sweep", "compare", "fidelity"):
            p.add_argument("--fourth-order", action="store_true", default=S, dest="fourth_order")
            p.add_argument("--f2-points", type=int, default=S, dest="f2_points")
        if name == "compare":
            p.add_argument("--max-deviation", type=float, default=S, dest="max_deviation",
                           help="exit 1 if any relative deviation exceeds this")
        if name == "validate":
            p.add_argument("--checks", default=S, help="comma-separated subset of checks")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in data.items():
            k = key.replace("-", "_")
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[k] = value
    for key, value in vars(args).items():
        if key in DEFAULTS:
            cfg[key] = value
    cmd = args.command
    cfg["command"] = cmd
    if cfg["format"] is None:
        cfg["format"] = FORMATS[cmd]
    if cfg["gates"] is None and cmd in ("sweep", "compare"):
        cfg["gates"] = "primitive_x,corrected_x" if cmd == "sweep" else "primitive_x"
    if cfg["freq_points"] is None:
        cfg["freq_points"] = FREQ_POINTS.get(cmd, 200)
    for key in ("rtol", "dt", "rate", "tau", "tau_min", "tau_max", "max_deviation"):
        if cfg[key] is not None and not float(cfg[key]) > 0:
            raise ConfigError(f"--{key.replace('_', '-')} must be positive")
    if int(cfg["trajectories"]) < 2:
        raise ConfigError("--trajectories must be at least 2")
    if int(cfg["workers"]) < 1:
        raise ConfigError("--workers must be at least 1")
    if int(cfg["freq_points"]) < 2 or int(cfg["tau_points"]) < 1:
        raise ConfigError("grid sizes must be positive")
    return cfg


def _sequence(cfg):
    if cfg["preset"] and cfg["sequence"]:
        raise ConfigError("give either --preset or --sequence, not both")
    if cfg["sequence"]:
        seq = load_sequence(cfg["sequence"])
        return seq, control.target_gate(seq)
    if not cfg["preset"]:
        raise ConfigError("a sequence is required: use --preset NAME or --sequence FILE")
    name = cfg["preset"]
    rate, tau = cfg["rate"], cfg["tau"]
    try:
        if name in ("free", "hahn_echo"):
            return control.preset(name, rate=rate or 1.0, tau=tau)
        if tau is not None:
            if rate is not None and not math.isclose(rate * tau, math.pi, rel_tol=1e-9):
                raise ConfigError("--rate and --tau disagree (rotation presets need rate*tau = pi)")
            rate = math.pi / tau
        return control.preset(name, rate=rate or 1.0)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _spectrum(cfg, tau, required=True):
    if cfg["spectrum"] is None:
        if required:
            raise ConfigError("a noise spectrum is required: use --spectrum JSON")
        return None
    return load_spectrum(cfg["spectrum"], tau)


def _freq_axis(cfg, seq, spectrum=None):
    if spectrum is not None:
        lo, hi = fidelity.frequency_window(seq, spectrum)
    else:
        lo, hi = 1e-3 / seq.tau, 1e2 * max(seq.max_rate, 2 * math.pi / seq.tau)
    lo = cfg["freq_min"] if cfg["freq_min"] is not None else lo
    hi = cfg["freq_max"] if cfg["freq_max"] is not None else hi
    if not 0 < lo < hi:
        raise ConfigError("need 0 < freq-min < freq-max")
    return lo, hi


def _tau_grid(cfg):
    lo, hi, n = float(cfg["tau_min"]), float(cfg["tau_max"]), int(cfg["tau_points"])
    if hi < lo:
        raise ConfigError("--tau-max must not be below --tau-min")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def _gates(cfg):
    gates = [g.strip() for g in str(cfg["gates"]).split(",") if g.strip()]
    bad = [g for g in gates if g not in control.PRESETS]
    if bad or not gates:
        raise ConfigError(f"unknown gate(s) {bad}; choose from {', '.join(control.PRESETS)}")
    return gates


def _emit(outputs: AtomicOutputs, cfg, schema, rows, payload=None):
    if cfg["format"] == "csv":
        outputs.add(cfg["out"], csv_text(schema, rows))
    else:
        outputs.add(cfg["out"], json_text(payload if payload is not None else rows))


# -- commands ----------------------------------------------------------------

def cmd_filter1(cfg, outputs):
    seq, _ = _sequence(cfg)
    lo, hi = _freq_axis(cfg, seq)
    w = np.geomspace(lo, hi, int(cfg["freq_points"]))
    f = filters.f1(seq, w)
    rows = [{"omega": float(wi), "F1": float(t), "F1_x": float(c[0]), "F1_y": float(c[1]),
             "F1_z": float(c[2])} for wi, t, c in zip(w, f.total, f.components)]
    _emit(outputs, cfg, "filter1", rows, {"sequence": seq.to_dict(), "rows": rows})


def cmd_filter2(cfg, outputs):
    seq, _ = _sequence(cfg)
    spec = _spectrum(cfg, seq.tau, required=False)
    lo, hi = _freq_axis(cfg, seq, spec)
    grid = filters.compute_f2_grid(seq, lo, hi, int(cfg["freq_points"]),
                                   workers=int(cfg["workers"]))
    rows = []
    fa, fb, fc, tot = grid.f2a.sum(-1), grid.f2b.sum(-1), grid.f2c.sum((-1, -2)), grid.total
    for m, w in enumerate(grid.omega):
        for n, wp in enumerate(grid.omega):
            rows.append({"omega": float(w), "omega_prime": float(wp), "F2": float(tot[m, n]),
                         "F2_a": float(fa[m, n]), "F2_b": float(fb[m, n]),
                         "F2_c": float(fc[m, n])})
    _emit(outputs, cfg, "filter2", rows, {"sequence": seq.to_dict(), "rows": rows})


def cmd_fidelity(cfg, outputs):
    seq, _ = _sequence(cfg)
    spec = _spectrum(cfg, seq.tau)
    if cfg["fourth_order"]:
        rep = fidelity.fidelity_fourth_order(seq, spec, points=int(cfg["f2_points"]),
                                             rtol=float(cfg["rtol"]))
    else:
        rep = fidelity.fidelity_first_order(seq, spec, rtol=float(cfg["rtol"]))
    payload = rep.to_dict()
    payload["sequence"] = seq.to_dict()
    _emit(outputs, cfg, "fidelity", [payload], payload)


def cmd_sweep(cfg, outputs):
    gates = _gates(cfg)
    taus = _tau_grid(cfg)
    spec = _spectrum(cfg, float(taus[0]))
    rows = []
    for r in fidelity.error_sweep(gates, spec, taus, fourth_order=bool(cfg["fourth_order"]),
                                  rtol=float(cfg["rtol"]), points=int(cfg["f2_points"])):
        rows.append({"gate": r.gate, "tau_x": r.tau_x, "xi": r.xi, "chi": r.chi,
                     "error_2nd": r.error_2nd, "error_4th": r.error_4th, "flags": r.flags})
    _emit(outputs, cfg, "sweep", rows, [dict(r, flags=list(r["flags"])) for r in rows])


def _mc(seq, spec, cfg, q=None):
    return montecarlo.ensemble_fidelity(
        seq, spec, int(cfg["trajectories"]), dt=cfg["dt"], master_seed=int(cfg["seed"]),
        target=q, workers=int(cfg["workers"]), retain=bool(cfg["retain_trajectories"]))


def cmd_mc(cfg, outputs):
    seq, q = _sequence(cfg)
    spec = _spectrum(cfg, seq.tau)
    res = _mc(seq, spec, cfg, q)
    summary = res.to_dict()
    summary["sequence"] = seq.to_dict()
    if cfg["format"] == "csv":
        if res.fidelities is None:
            raise ConfigError("CSV output lists per-trajectory fidelities; add --retain-trajectories")
        rows = [{"trajectory_index": i, "fidelity": float(f)} for i, f in enumerate(res.fidelities)]
        outputs.add(cfg["out"], csv_text("mc", rows))
        if cfg["out"] != "-":
            outputs.add(Path(cfg["out"]).with_suffix(".summary.json"), json_text(summary))
    else:
        if res.fidelities is not None:
            summary["fidelities"] = res.fidelities.tolist()
        outputs.add(cfg["out"], json_text(summary))


def cmd_compare(cfg, outputs):
    gates = _gates(cfg)
    taus = _tau_grid(cfg)
    spec = _spectrum(cfg, float(taus[0]))
    rows = []
    for name in gates:
        for tx in taus:
            seq, q = control.preset(name, rate=math.pi / tx)
            if cfg["fourth_order"]:
                rep = fidelity.fidelity_fourth_order(seq, spec, points=int(cfg["f2_points"]),
                                                     rtol=float(cfg["rtol"]))
            else:
                rep = fidelity.fidelity_first_order(seq, spec, rtol=float(cfg["rtol"]))
            res = _mc(seq, spec, cfg, q)
            err_mc = res.mean_error
            dev = abs(rep.error_2nd - err_mc) / err_mc if err_mc > 0 else math.inf
            rows.append({"gate": name, "tau_x": float(tx), "xi": rep.xi,
                         "error_2nd": rep.error_2nd, "error_4th": rep.error_4th,
                         "error_mc": err_mc, "stderr_mc": res.stderr, "deviation": dev})
    _emit(outputs, cfg, "compare", rows)
    limit = cfg["max_deviation"]
    if limit is not None:
        worst = max(r["deviation"] for r in rows)
        if worst > float(limit):
            raise ValidationFailed(f"largest deviation {worst:.3f} exceeds {float(limit):.3f}")


def cmd_validate(cfg, outputs):
    names = None
    if cfg["checks"]:
        names = [c.strip() for c in str(cfg["checks"]).split(",") if c.strip()]
        unknown = [c for c in names if c not in validation.CHECKS]
        if unknown:
            raise ConfigError(f"unknown checks {unknown}; available: {', '.join(validation.CHECKS)}")
    results = validation.run_suite(names)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.1f} s)",
              file=sys.stderr)
    n_pass = sum(r.passed for r in results)
    report = {"passed": n_pass, "failed": len(results) - n_pass,
              "checks": [r.to_dict() for r in results]}
    outputs.add(cfg["out"], json_text(report))
    if n_pass != len(results):
        raise ValidationFailed(f"{len(results) - n_pass} of {len(results)} checks failed")


def cmd_preset_list(cfg, outputs):
    rate = cfg["rate"] or 1.0
    rows = []
    for name in control.PRESETS:
        seq, _ = control.preset(name, rate=rate)
        rows.append({"name": name, "segments": seq.n_segments, "tau": seq.tau,
                     "first_order_corrected": control.is_first_order_corrected(seq),
                     "closed_form_filters": seq.all_pi()})
    _emit(outputs, cfg, "presets", rows)


COMMANDS = {
    "filter1": cmd_filter1, "filter2": cmd_filter2, "fidelity": cmd_fidelity,
    "sweep": cmd_sweep, "mc": cmd_mc, "compare": cmd_compare, "validate": cmd_validate,
    "preset-list": cmd_preset_list,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"gatenoise: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.show_config:
        sys.stdout.write(json_text(cfg))
        return EXIT_OK
    outputs = AtomicOutputs()
    status = EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = _warn_to_stderr
            COMMANDS[args.command](cfg, outputs)
    except ValidationFailed as exc:
        print(f"gatenoise: {exc}", file=sys.stderr)
        status = EXIT_FAILED
    except (ConfigError, DivergentSpectrumError) as exc:
        print(f"gatenoise: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, filters.FilterConsistencyError, ArithmeticError) as exc:
        print(f"gatenoise: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gatenoise: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    outputs.commit()
    return status


def _warn_to_stderr(message, category, filename, lineno, file=None, line=None):
    print(f"gatenoise: warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
