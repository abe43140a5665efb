"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 property violation.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, jsonio, sos, synthesis
from .cbf_qp import REGIONS, FilterError, SystemModel, load_model, solve_filter_batch
from .models import SHIPPED, barrier_h, linear2d, linear2d_stabilized, shipped_model
from .poly import Polynomial, variables
from .sim import SimConfig, analyze, fmt, integrate_batch, integrate_closed_loop, roa_monte_carlo, start_grid

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4

# reference margins for the same example, reported next to the computed ones
REFERENCE_MARGINS = {"eta_const": 4.9, "eta_poly": 9.9}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    wall_clock_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": self.tool_version,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class OutputDir:
    """Collects files written by one command and writes the manifest last."""

    def __init__(self, path: str | None, command: str, config: dict):
        self.path = Path(path) if path is not None else None
        self.manifest = RunManifest(command, config)
        self.t0 = time.perf_counter()
        if self.path is not None:
            try:
                self.path.mkdir(parents=True, exist_ok=True)
                probe = self.path / ".write-probe"
                probe.write_text("")
                probe.unlink()
            except OSError as exc:
                raise CliError(EXIT_INPUT, f"output directory not writable: {exc}") from exc

    def add_input(self, path: str):
        p = Path(path)
        if p.is_file():
            self.manifest.inputs[str(p)] = sha256_bytes(p.read_bytes())

    def write(self, name: str, text: str):
        data = text.encode()
        self.manifest.outputs[name] = sha256_bytes(data)
        if self.path is None:
            sys.stdout.write(text)
        else:
            (self.path / name).write_bytes(data)

    def finish(self):
        self.manifest.wall_clock_seconds = round(time.perf_counter() - self.t0, 3)
        if self.path is not None:
            (self.path / "manifest.json").write_text(jsonio.dumps(self.manifest.to_dict()))


# argument helpers


def parse_vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(EXIT_INPUT, f"cannot parse vector {text!r}") from exc


def resolve_model(args) -> tuple[SystemModel, str | None]:
    """Shipped name or JSON path, then flag overrides."""
    spec = args.model
    path = None
    try:
        if spec in SHIPPED:
            model = shipped_model(spec)
        else:
            path = spec
            model = load_model(spec)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"model file not found: {spec}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot parse model {spec!r}: {exc}") from exc
    changes = {}
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "p", None) is not None:
        changes["p"] = args.p
    if changes:
        try:
            model = model.with_(**changes)
        except (ValueError, TypeError) as exc:
            raise CliError(EXIT_INPUT, f"invalid override: {exc}") from exc
    return model, path


def budget_from(args) -> synthesis.DegreeBudget:
    try:
        return synthesis.DegreeBudget(
            deg_lambda=args.deg_lambda, deg_lambda1=args.deg_lambda1, deg_lambda2=args.deg_lambda2
        )
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def ball_from(args) -> synthesis.DomainBall:
    r = args.ball_radius
    if r is not None and r <= 0:
        return synthesis.GLOBAL
    try:
        return synthesis.DomainBall(r)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def model_config(model: SystemModel) -> dict:
    return {"name": model.name, "variant": model.variant, "p": model.p, "gamma_c": model.gamma_c}


# commands


def cmd_filter_eval(args) -> int:
    model, path = resolve_model(args)
    if args.state:
        X = np.array([parse_vector(s) for s in args.state])
    else:
        lo, hi, step = parse_vector(args.grid)
        if step <= 0 or hi < lo:
            raise CliError(EXIT_INPUT, "grid needs lo,hi,step with step > 0")
        ticks = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
        X = np.stack(np.meshgrid(*([ticks] * model.n), indexing="ij"), axis=-1).reshape(-1, model.n)
    if X.ndim != 2 or X.shape[1] != model.n:
        raise CliError(EXIT_INPUT, f"states need {model.n} components")
    out = OutputDir(args.out, "filter-eval", {"model": args.model, **model_config(model)})
    if path:
        out.add_input(path)
    u, delta, code, _ = solve_filter_batch(model, X)
    objective = (u * u).sum(axis=1) + model.p * delta**2
    buf = io.StringIO()
    n, m = model.n, model.m
    buf.write(",".join([f"x{i + 1}" for i in range(n)] + ["region"] + [f"uprime{j + 1}" for j in range(m)] + ["delta", "objective"]) + "\n")
    failed = []
    for k in range(len(X)):
        tag = REGIONS[code[k]].value if code[k] >= 0 else ("singular" if code[k] == -2 else "none")
        if code[k] < 0:
            failed.append(X[k])
        buf.write(",".join([fmt(v) for v in X[k]] + [tag] + [fmt(v) for v in u[k]] + [fmt(delta[k]), fmt(objective[k])]) + "\n")
    out.write("filter_eval.csv", buf.getvalue())
    out.finish()
    if failed:
        for x in failed:
            print("filter failure at state " + ",".join(fmt(v) for v in x), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _sim_config(args, x0) -> SimConfig:
    try:
        return SimConfig(x0=tuple(x0), T=args.horizon, dt=args.dt, origin_radius=args.origin_radius)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc


def cmd_simulate(args) -> int:
    model, path = resolve_model(args)
    x0 = parse_vector(args.x0)
    if len(x0) != model.n:
        raise CliError(EXIT_INPUT, f"x0 needs {model.n} components")
    cfg = _sim_config(args, x0)
    out = OutputDir(args.out, "simulate", {"model": args.model, "x0": x0, "T": cfg.T, "dt": cfg.dt, **model_config(model)})
    if path:
        out.add_input(path)
    trj = integrate_closed_loop(model, cfg)
    rep = analyze(trj, model)
    out.write("trajectory.csv", trj.to_csv())
    out.write("report.json", rep.to_json())
    out.finish()
    if trj.error is not None:
        print(trj.error, file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_PROPERTY if rep.safety_violated else EXIT_OK


def _margin_summary(res: synthesis.RobustCbfResult) -> dict:
    d = res.to_dict()
    if res.certificate is not None:
        rep = sos.verify_certificate(res.certificate)
        d["verification"] = {"passed": rep.passed, "residual": rep.residual, "min_eig": rep.min_eig}
    return d


def cmd_reproduce(args) -> int:
    """Constant vs polynomial multiplier margins, validity check, closed-loop runs."""
    if args.grid_radius <= 0:
        raise CliError(EXIT_INPUT, "grid radius must be positive")
    ball = ball_from(args)
    budget = budget_from(args)
    config = {
        "ball_radius": ball.radius,
        "eps": args.eps,
        "deg_lambda": budget.deg_lambda,
        "deg_lambda1": budget.deg_lambda1,
        "dt": args.dt,
        "horizon": args.horizon,
        "seed": args.seed,
        "grid_radius": args.grid_radius,
        "grid_points": args.grid_points,
    }
    out = OutputDir(args.out, "reproduce", config)
    plant = linear2d("modified")
    h = barrier_h()
    stages = {}

    const = synthesis.margin_fixed_h(plant, h, budget.__class__(deg_lambda=0, deg_lambda1=budget.deg_lambda1), ball, args.eps)
    if not const.ok:
        raise CliError(EXIT_NUMERIC, f"stage margin_const: {const.status} {const.detail}")
    poly_res = synthesis.margin_fixed_h(plant, h, budget, ball, args.eps)
    if not poly_res.ok:
        raise CliError(EXIT_NUMERIC, f"stage margin_poly: {poly_res.status} {poly_res.detail}")
    out.write("certificate_const.json", const.certificate.to_json() + "\n")
    out.write("certificate_poly.json", poly_res.certificate.to_json() + "\n")
    stages["margin_const"] = _margin_summary(const)
    stages["margin_poly"] = _margin_summary(poly_res)

    # validity of h with the synthesized multiplier, and with lambda = 1 for contrast
    with_poly = plant.with_(lam=poly_res.lam)
    check = synthesis.verify_cbf(with_poly, ball)
    baseline_check = synthesis.verify_cbf(linear2d("tan"), ball)
    stages["verify_cbf"] = check.to_dict()
    stages["verify_cbf_lambda_one"] = baseline_check.to_dict()

    # closed loop with the stabilizing nominal controller and the synthesized multiplier
    sim_model = linear2d_stabilized(lam=poly_res.lam)
    X0 = start_grid(sim_model, args.grid_radius, per_axis=args.grid_points)
    cfg = SimConfig(T=args.horizon, dt=args.dt)
    trajs = integrate_batch(sim_model, X0, cfg)
    reports = []
    for x0, tr in zip(X0, trajs):
        rep = analyze(tr, sim_model)
        reports.append({"x0": x0.tolist(), **rep.to_dict()})
    stages["simulations"] = reports

    comparison = {
        "eta_const": const.eta,
        "eta_poly": poly_res.eta,
        "reference": REFERENCE_MARGINS,
        "dominance_holds": poly_res.eta >= const.eta - 1e-6,
        "stages": stages,
    }
    out.write("comparison.json", jsonio.dumps(comparison))
    out.finish()
    if not check.valid:
        print("stage verify_cbf: h not certified with the synthesized multiplier", file=sys.stderr)
        return EXIT_PROPERTY
    if not comparison["dominance_holds"]:
        print("stage dominance: eta_poly < eta_const", file=sys.stderr)
        return EXIT_PROPERTY
    if any(r["safety_violated"] for r in reports):
        print("stage simulate: safety violated", file=sys.stderr)
        return EXIT_PROPERTY
    if any(r["error"] for r in reports):
        print("stage simulate: filter failure", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_roa(args) -> int:
    model, path = resolve_model(args)
    budget = synthesis.DegreeBudget(deg_lambda=args.deg_lambda, deg_lambda1=args.deg_lambda1, deg_lambda2=args.deg_lambda2)
    out = OutputDir(args.out, "roa", {"model": args.model, "seed": args.seed, "samples": args.samples, **model_config(model)})
    if path:
        out.add_input(path)
    try:
        res = synthesis.estimate_roa(model, budget, args.eps)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    d = res.to_dict()
    if not res.ok:
        out.write("roa.json", jsonio.dumps(d))
        out.finish()
        print(f"no positive ROA level certified: {res.detail}", file=sys.stderr)
        return EXIT_NUMERIC
    mc = roa_monte_carlo(model, res.eta, args.samples, SimConfig(T=args.horizon, dt=args.dt), seed=args.seed)
    d["monte_carlo"] = mc.to_dict()
    out.write("roa.json", jsonio.dumps(d))
    out.write("certificate.json", res.certificate.to_json() + "\n")
    out.finish()
    if mc.fraction_converged < 1.0 or min(mc.min_h) < -1e-6:
        return EXIT_PROPERTY
    return EXIT_OK


def cmd_robust_cbf(args) -> int:
    model, path = resolve_model(args)
    ball = ball_from(args)
    budget = budget_from(args)
    c = None
    if args.containment_radius is not None:
        xs = variables(model.n)
        c = args.containment_radius**2 - sum((x * x for x in xs), Polynomial.zero(model.n))
    out = OutputDir(args.out, "robust-cbf", {"model": args.model, "ball_radius": ball.radius, "containment_radius": args.containment_radius, "max_rounds": args.max_rounds, "eps": args.eps})
    if path:
        out.add_input(path)
    try:
        res = synthesis.search_robust_cbf(model, c, budget, ball, args.eps, max_rounds=args.max_rounds)
    except RuntimeError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    out.write("robust_cbf.json", jsonio.dumps(_margin_summary(res)))
    out.write("certificate.json", res.certificate.to_json() + "\n")
    out.finish()
    return EXIT_OK


def cmd_verify_cert(args) -> int:
    try:
        text = Path(args.cert).read_text()
        cert = sos.GramCertificate.from_json(text)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, f"certificate not found: {args.cert}") from exc
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(EXIT_INPUT, f"cannot parse certificate: {exc}") from exc
    rep = sos.verify_certificate(cert)
    out = OutputDir(args.out, "verify-cert", {"cert": args.cert})
    out.add_input(args.cert)
    out.write(
        "verification.json",
        jsonio.dumps({"passed": rep.passed, "residual": rep.residual, "min_eig": rep.min_eig, "reason": rep.reason}),
    )
    out.finish()
    return EXIT_OK if rep.passed else EXIT_PROPERTY


# parser


COMMON_DEFAULTS = {
    "model": "linear2d",
    "dt": 1e-3,
    "horizon": 20.0,
    "ball_radius": 10.0,
    "deg_lambda": 2,
    "deg_lambda1": 3,
    "deg_lambda2": 2,
}


def _common(**overrides) -> argparse.ArgumentParser:
    """Flags shared by every subcommand; a fresh parser per command so
    per-command defaults cannot leak into the others."""
    d = {**COMMON_DEFAULTS, **overrides}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default=d["model"], help=f"shipped model ({', '.join(SHIPPED)}) or JSON file")
    common.add_argument("--out", default=None, help="output directory (stdout when absent)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--dt", type=float, default=d["dt"])
    common.add_argument("--horizon", type=float, default=d["horizon"])
    common.add_argument("--ball-radius", type=float, default=d["ball_radius"], help="domain ball radius; 0 for global")
    common.add_argument("--deg-lambda", type=int, default=d["deg_lambda"])
    common.add_argument("--deg-lambda1", type=int, default=d["deg_lambda1"])
    common.add_argument("--deg-lambda2", type=int, default=d["deg_lambda2"])
    common.add_argument("--eps", type=float, default=sos.DEFAULT_EPS)
    common.add_argument("--variant", choices=["ames", "tan", "modified"], default=None)
    common.add_argument("--p", type=float, default=None, help="slack penalty override")
    return common


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cbfsos", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter-eval", parents=[_common()], help="evaluate the filter on states or a grid")
    p.add_argument("--state", action="append", help="comma-separated state; repeatable")
    p.add_argument("--grid", default="-5,5,0.5", help="lo,hi,step for a square grid")
    p.set_defaults(func=cmd_filter_eval)

    p = sub.add_parser("simulate", parents=[_common()], help="closed-loop simulation")
    p.add_argument("--x0", default="1,1")
    p.add_argument("--origin-radius", type=float, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reproduce", parents=[_common()], help="margin comparison, validity check and simulations")
    p.add_argument("--grid-points", type=int, default=5, help="start grid points per axis")
    p.add_argument("--grid-radius", type=float, default=5.0, help="half-width of the start grid")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser(
        "roa",
        parents=[_common(model="linear2d_stabilized", deg_lambda1=0, deg_lambda2=0, horizon=50.0, dt=1e-2)],
        help="region-of-attraction estimate with Monte Carlo check",
    )
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_roa)

    p = sub.add_parser("robust-cbf", parents=[_common()], help="alternating barrier search")
    p.add_argument("--containment-radius", type=float, default=None, help="require S inside this ball")
    p.add_argument("--max-rounds", type=int, default=20)
    p.set_defaults(func=cmd_robust_cbf)

    p = sub.add_parser("verify-cert", parents=[_common()], help="check a JSON Gram certificate")
    p.add_argument("--cert", required=True)
    p.set_defaults(func=cmd_verify_cert)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FilterError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
