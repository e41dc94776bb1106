"""Command-line experiment runner.

Every subcommand builds a ``Dataset`` (fixed column order plus records),
writes it as CSV with a ``#`` comment header or as JSON, and exits with

* 0 when every checked bound holds,
* 2 when a bound check fails,
* 1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import bell, device, selftest
from .bell import MeasurementAngles
from .config import DEFAULT_TOL, Tolerances
from .states import StateSpec, family_parameters, parse_key_values, rho_xyab

log = logging.getLogger("robust_selftest")

EXIT_OK, EXIT_USAGE, EXIT_BOUND = 0, 1, 2
DEFAULT_NU_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
DEFAULT_W_GRID = (0.9, 0.95, 1.0)
RHO_XYAB_PARTITION = ((0, 2), (1, 3))


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2, which is reserved for bound failures
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class Dataset:
    command: str
    columns: tuple[str, ...]
    records: list[dict[str, Any]]
    meta: dict[str, Any] = field(default_factory=dict)
    ok: bool = True
    message: str = ""

    def to_csv(self) -> str:
        meta = " ".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        buf = io.StringIO()
        buf.write(f"# {self.command}: columns {','.join(self.columns)}" + (f"; {meta}" if meta else "") + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerows([_fmt(r[c]) for c in self.columns] for r in self.records)
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "command": self.command,
            "columns": list(self.columns),
            "meta": self.meta,
            "ok": self.ok,
            "records": [{c: _json_value(r[c]) for c in self.columns} for r in self.records],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _fmt(v: Any) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_value(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) or math.isinf(v) else v
    return v


# ---------------------------------------------------------------------------
# argument helpers

_ANGLE_RE = re.compile(r"^(?P<k>[0-9.]*)\*?pi(?:/(?P<d>[0-9.]+))?$")


def parse_angle(token: str) -> float:
    """A float, or a multiple of pi such as ``pi/4`` or ``3pi/8``."""
    token = token.strip().lower()
    m = _ANGLE_RE.match(token)
    if m:
        k = float(m["k"]) if m["k"] else 1.0
        return k * math.pi / (float(m["d"]) if m["d"] else 1.0)
    try:
        return float(token)
    except ValueError:
        raise UsageError(f"cannot parse angle {token!r}") from None


def parse_float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def parse_tolerances(pairs: Sequence[str] | None) -> Tolerances:
    overrides = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--tolerance expects KEY=VALUE, got {item!r}")
        try:
            overrides[key.strip()] = float(value)
        except ValueError:
            raise UsageError(f"tolerance {key!r} is not a number: {value!r}") from None
    try:
        return DEFAULT_TOL.with_overrides(overrides)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


_STATE_PARAM_FLAGS = ("theta", "v", "nu", "w", "noise", "phi", "xy")


def state_from_args(args: argparse.Namespace, default: str) -> StateSpec:
    if args.state_file:
        try:
            return StateSpec.from_text(Path(args.state_file).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"bad state file: {exc}") from None
    family = args.state or default
    params = {k: getattr(args, k) for k in _STATE_PARAM_FLAGS if getattr(args, k, None) is not None}
    try:
        accepted = set(family_parameters(family))
        return StateSpec(family, {k: v for k, v in params.items() if k in accepted})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _pool_map(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map, optionally over a process pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# workers (module level so they pickle)


def _chsh_sample(job):
    rho, a, b, tol = job
    angles = MeasurementAngles(a, b)
    w = bell.expectation(rho, bell.chsh_operator(angles))
    k = bell.expectation(rho, selftest.fidelity_operator_chsh(angles).matrix)
    return {
        "a": a, "b": b, "W": w, "K": k,
        "bound": selftest.CHSH_SLOPE * w - selftest.CHSH_OFFSET,
        "margin": selftest.chsh_margin(angles, tol),
    }


def _mermin_sample(job):
    rho, a, b, c, tol = job
    angles = MeasurementAngles(a, b, c)
    w = bell.expectation(rho, bell.mermin_operator(angles))
    k = bell.expectation(rho, selftest.fidelity_operator_mermin(angles).matrix)
    return {
        "a": a, "b": b, "c": c, "W": w, "K": k,
        "bound": selftest.MERMIN_SLOPE * w - selftest.MERMIN_OFFSET,
        "margin": selftest.mermin_margin(angles, tol),
    }


def _band_point(job):
    nu, restarts, seed, tol = job
    res = selftest.extractability(rho_xyab(nu), selftest.chsh_target(), RHO_XYAB_PARTITION, restarts=restarts, seed=seed, tol=tol)
    rep = selftest.chsh_bounds(min(res.start_beta, selftest.CHSH_RANGE[1]))
    return {"nu": nu, "beta": res.start_beta, "xi": res.xi, "lower": rep.lower, "upper": rep.upper}


def _mermin_point(job):
    spec, restarts, seed, tol = job
    rho = spec.build()
    res = selftest.extractability(rho, selftest.mermin_target(), restarts=restarts, seed=seed, tol=tol)
    rep = selftest.mermin_bound(min(res.start_beta, selftest.MERMIN_RANGE[1]))
    return {"w": spec.params["w"], "beta": res.start_beta, "xi": res.xi, "bound": rep.lower, "gap": res.xi - rep.lower}


# ---------------------------------------------------------------------------
# subcommands


def run_fig2_sweep(args, tol: Tolerances) -> Dataset:
    spec = state_from_args(args, "singlet")
    if spec.n_parties != 2:
        raise UsageError(f"fig2-sweep needs a two-qubit state, got {spec.family}")
    rho = spec.build()
    if rho.n_factors != 2:
        raise UsageError(f"fig2-sweep needs a two-qubit state, got {spec.family}")
    rho = rho.matrix
    ab = _rng(args.seed).uniform(0, np.pi / 2, size=(args.samples, 2))
    rows = _pool_map(_chsh_sample, [(rho, float(a), float(b), tol) for a, b in ab], args.workers)
    bad = sum(r["K"] < r["bound"] - tol.margin or r["margin"] < -tol.margin for r in rows)
    meta = {"state": spec.family, "samples": args.samples, "seed": args.seed, "violations": bad}
    return Dataset("fig2-sweep", ("a", "b", "W", "K", "bound", "margin"), rows, meta, bad == 0, f"{bad} operator-inequality violations")


def run_fig2d_band(args, tol: Tolerances) -> Dataset:
    nus = parse_float_list(args.nu) if args.nu is not None else DEFAULT_NU_GRID
    if any(not 0 < nu < 1 for nu in nus):
        raise UsageError("every nu must lie in the open interval (0, 1)")
    rows = _pool_map(_band_point, [(nu, args.restarts, args.seed, tol) for nu in nus], args.workers)
    outside = [r["nu"] for r in rows if not r["lower"] - 1e-6 <= r["xi"] <= r["upper"] + 1e-6]
    meta = {"restarts": args.restarts, "seed": args.seed}
    return Dataset("fig2d-band", ("nu", "beta", "xi", "lower", "upper"), rows, meta, not outside,
                   f"extractability outside the band at nu={outside}")


def run_fig3(args, tol: Tolerances) -> Dataset:
    if args.mode == "a":
        spec = state_from_args(args, "ghz")
        if spec.n_parties != 3:
            raise UsageError(f"fig3 needs a three-qubit state, got {spec.family}")
        rho = spec.build().matrix
        abc = _rng(args.seed).uniform(0, np.pi / 2, size=(args.samples, 3))
        rows = _pool_map(_mermin_sample, [(rho, *map(float, t), tol) for t in abc], args.workers)
        bad = sum(r["K"] < r["bound"] - tol.margin or r["margin"] < -tol.margin for r in rows)
        meta = {"mode": "a", "state": spec.family, "samples": args.samples, "seed": args.seed, "violations": bad}
        return Dataset("fig3", ("a", "b", "c", "W", "K", "bound", "margin"), rows, meta, bad == 0,
                       f"{bad} operator-inequality violations")

    ws = parse_float_list(args.w) if args.w is not None else DEFAULT_W_GRID
    noise = args.noise or 0.0
    try:
        specs = [StateSpec("tripartite_mixture", {"w": w, "noise": noise}) for w in ws]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = _pool_map(_mermin_point, [(s, args.restarts, args.seed, tol) for s in specs], args.workers)
    # the bound must hold (xi >= Q) and the points should sit on it
    invalid = [r["w"] for r in rows if r["gap"] < -1e-6]
    loose = [r["w"] for r in rows if abs(r["gap"]) > 5e-3]
    meta = {"mode": "b", "noise": noise, "restarts": args.restarts, "seed": args.seed}
    msg = f"bound violated at w={invalid}; |xi - bound| > 5e-3 at w={loose}"
    return Dataset("fig3", ("w", "beta", "xi", "bound", "gap"), rows, meta, not invalid and not loose, msg)


def run_fig4(args, tol: Tolerances) -> Dataset:
    spec = state_from_args(args, "singlet")
    if spec.n_parties == 2:
        angles = MeasurementAngles(np.pi / 4, np.pi / 4)
    else:
        angles = MeasurementAngles(np.pi / 4, np.pi / 4, np.pi / 4)
    if args.angles:
        angles = MeasurementAngles(*(parse_angle(t) for t in args.angles.split(",")))
    try:
        table = device.born_table(spec.build(), angles)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.inject_signalling:
        table = device.inject_signalling(table, shift=args.inject_signalling)
    if args.shots is not None:
        table = device.sample_counts(table, args.shots, args.seed)
    report = device.no_signalling_check(table, args.threshold, tol)
    meta = {
        "state": spec.family, "mode": report.mode, "shots": args.shots if args.shots else "",
        "seed": args.seed, "threshold": report.threshold, "max_deviation": report.max_deviation,
    }
    return Dataset("fig4", device.NoSignallingReport.CSV_HEADER, report.records(), meta, report.passed,
                   f"no-signalling check failed: max deviation {report.max_deviation:.4g} > {report.threshold:.4g}")


def run_bounds(args, tol: Tolerances) -> Dataset:
    lo, hi = selftest.CHSH_RANGE if args.scenario == "chsh" else selftest.MERMIN_RANGE
    betas = parse_float_list(args.beta) if args.beta else tuple(np.linspace(lo, hi, args.points))
    fn = selftest.chsh_bounds if args.scenario == "chsh" else selftest.mermin_bound
    try:
        reports = [fn(float(b)) for b in betas]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [{"beta": r.beta, "lower": r.lower, "upper": r.upper, "scenario": r.scenario} for r in reports]
    ok = all(r.upper is None or r.lower <= r.upper + 1e-12 for r in reports)
    return Dataset("bounds", selftest.BoundReport.CSV_HEADER, rows, {"scenario": args.scenario}, ok, "lower bound above upper bound")


def run_margin(args, tol: Tolerances) -> Dataset:
    if not args.angles:
        raise UsageError("margin needs --angles a,b or a,b,c")
    vals = [parse_angle(t) for t in args.angles.split(",")]
    if len(vals) not in (2, 3):
        raise UsageError("--angles takes two (CHSH) or three (Mermin) values")
    if any(not 0 <= t <= np.pi / 2 for t in vals):
        raise UsageError("angles must lie in [0, pi/2]")
    angles = MeasurementAngles(*vals)
    margin = selftest.chsh_margin(angles, tol) if len(vals) == 2 else selftest.mermin_margin(angles, tol)
    row = {"angles": ",".join(repr(t) for t in vals), "scenario": "CHSH" if len(vals) == 2 else "Mermin", "margin": margin}
    return Dataset("margin", ("angles", "scenario", "margin"), [row], {}, margin >= -tol.margin, f"negative margin {margin:.3e}")


COMMANDS: dict[str, Callable[[argparse.Namespace, Tolerances], Dataset]] = {
    "fig2-sweep": run_fig2_sweep,
    "fig2d-band": run_fig2d_band,
    "fig3": run_fig3,
    "fig4": run_fig4,
    "bounds": run_bounds,
    "margin": run_margin,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("state")
    g.add_argument("--state", help="state family (singlet, phi_plus, partial, werner, dephased, tau, rho_xyab, ghz, tripartite_mixture)")
    g.add_argument("--state-file", help="key = value file describing the state")
    g.add_argument("--theta", type=float)
    g.add_argument("--v", type=float, help="visibility for werner/dephased")
    g.add_argument("--phi", type=float, help="GHZ phase")
    g.add_argument("--xy", help="register label for tau")
    g.add_argument("--noise", type=float, help="white-noise rate for tripartite mixtures")
    g.add_argument("--nu", help="register weight; a comma-separated grid for fig2d-band")
    g.add_argument("--w", help="GHZ weight; a comma-separated grid for fig3 --mode b")
    o = common.add_argument_group("run")
    o.add_argument("--samples", type=int, default=1000, help="random angle samples (default 1000)")
    o.add_argument("--shots", type=int, help="shots per context; omit for exact tables")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", help="output file (default stdout)")
    o.add_argument("--format", choices=("csv", "json"), default="csv")
    o.add_argument("--tolerance", action="append", metavar="KEY=VALUE", help="override a numerical tolerance")
    o.add_argument("--config", help="key = value file of defaults; command-line flags win")
    o.add_argument("--workers", type=int, default=1, help="worker processes")
    o.add_argument("--restarts", type=int, default=8, help="random see-saw restarts")
    o.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="robust-selftest", description="Robust self-testing experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fig2-sweep", parents=[common], help="CHSH operator inequality on random angle pairs")
    sub.add_parser("fig2d-band", parents=[common], help="extractability of the register family against the CHSH band")
    p = sub.add_parser("fig3", parents=[common], help="Mermin inequality sweep (a) or tightness (b)")
    p.add_argument("--mode", choices=("a", "b"), default="a")
    p = sub.add_parser("fig4", parents=[common], help="no-signalling check of simulated devices")
    p.add_argument("--angles", help="measurement angles, e.g. pi/4,pi/4")
    p.add_argument("--threshold", type=float, default=3.0, help="pass threshold in standard errors")
    p.add_argument("--inject-signalling", type=float, nargs="?", const=0.05, default=None, metavar="SHIFT",
                   help="shift one marginal by SHIFT (default 0.05) to exercise the detector")
    p = sub.add_parser("bounds", parents=[common], help="tabulate the CHSH or Mermin robustness bound")
    p.add_argument("--scenario", choices=("chsh", "mermin"), default="chsh")
    p.add_argument("--beta", help="comma-separated Bell values")
    p.add_argument("--points", type=int, default=11)
    p = sub.add_parser("margin", parents=[common], help="operator-inequality margin at one angle tuple")
    p.add_argument("--angles", help="a,b or a,b,c")
    return parser


_CONFIG_KEYS = {
    "state", "state_file", "theta", "v", "phi", "xy", "noise", "samples", "shots", "seed", "out", "format",
    "workers", "restarts", "nu", "w", "mode", "angles", "threshold", "scenario", "beta", "points", "tolerance",
}


def apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], args: argparse.Namespace) -> argparse.Namespace:
    """Fill options from ``--config`` unless they were given on the command line."""
    if not args.config:
        return args
    try:
        pairs = parse_key_values(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad config file: {exc}") from None
    unknown = set(k.replace("-", "_") for k in pairs) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config key(s): {sorted(unknown)}")
    given = {tok.split("=", 1)[0].lstrip("-").replace("-", "_") for tok in argv if tok.startswith("--")}
    config_argv = [args.command]
    for key, value in pairs.items():
        name = key.replace("-", "_")
        if name in given or name == "tolerance":
            continue
        config_argv += [f"--{name.replace('_', '-')}", value]
    merged = parser.parse_args(config_argv + list(argv[1:]))
    if "tolerance" in pairs and not merged.tolerance:
        merged.tolerance = [t.strip() for t in pairs["tolerance"].split(",")]
    return merged


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args = apply_config(parser, argv, args)
        if args.samples < 1:
            raise UsageError("--samples must be at least 1")
        if args.shots is not None and args.shots < 1:
            raise UsageError("--shots must be at least 1")
        if args.workers < 1 or args.restarts < 0:
            raise UsageError("--workers must be positive and --restarts non-negative")
        tol = parse_tolerances(args.tolerance)
        data = COMMANDS[args.command](args, tol)
    except UsageError as exc:
        print(f"robust-selftest: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    text = data.to_json() if args.format == "json" else data.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not data.ok:
        print(f"robust-selftest {data.command}: FAIL: {data.message}", file=sys.stderr)
        return EXIT_BOUND
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
