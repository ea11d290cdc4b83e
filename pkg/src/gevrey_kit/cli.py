"""Batch command line front end (`gevrey-kit`).

Subcommands
-----------
kappa          CSV of little Schroeder numbers and growth diagnostics.
envelope       Implicit-map envelope constants from a JSON config.
solve          One semilinear solve from a JSON problem spec.
derivatives    Solution-derivative table for a named problem.
verify-bounds  Parametric derivative-bound verification.
selftest       Run the built-in verification suite.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 bound violation (verify-bounds).  Output files are written atomically
(temp file plus rename), and runs are deterministic: identical config and
seed give byte-identical output.  Random draws use numpy's default
generator (PCG64).  The environment variable GEVREY_KIT_THREADS caps
internal parallelism; the current implementation is serial, so any cap
of at least one is honored trivially.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .combinatorics import (
    C_KAPPA,
    kappa_asymptotic_log,
    schroeder_hipparchus_sequence,
)
from .envelopes import GevreyEnvelope, StabilityConstant, convergence_radius, implicit_envelope
from .implicit_diff import (
    LinearizationError,
    NonConvergenceError,
    derivative_table,
    finite_difference_check,
    scalar_cubic_oracle,
    scalar_quadratic_oracle,
    solve_residual,
)
from .parametric import DomainMap1D, verify_derivative_bounds
from .pde1d import (
    Mesh1D,
    Nonlinearity,
    PdeData,
    PdeOracle,
    assemble_residual,
    estimate_constants,
    monotonicity_probe,
    newton_solve,
    solution_bound_check,
)


class ConfigError(Exception):
    """Invalid command line or JSON configuration."""


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".gevrey-tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        _write_text(path, text)


def _read_json_config(path: str, allowed: set[str], required: set[str]) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(required - set(cfg))
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    return cfg


def _nonlinearity_from_spec(spec) -> Nonlinearity:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("nonlinearity must be an object with a 'kind'")
    kind = spec["kind"]
    extra = set(spec) - {"kind", "coeffs", "q"}
    if extra:
        raise ConfigError(f"unknown nonlinearity keys: {', '.join(sorted(extra))}")
    if kind == "cubic":
        return Nonlinearity.cubic()
    if kind == "polynomial":
        if "coeffs" not in spec:
            raise ConfigError("polynomial nonlinearity needs 'coeffs'")
        q = spec.get("q")
        return Nonlinearity.polynomial(spec["coeffs"], None if q is None else float(q))
    if kind == "tanh_shifted":
        return Nonlinearity.tanh_shifted()
    if kind in ("exp", "exponential"):
        return Nonlinearity.exponential(float(spec.get("q", 6.0)))
    raise ConfigError(f"unknown nonlinearity kind {kind!r}")


def _thread_cap() -> int:
    raw = os.environ.get("GEVREY_KIT_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError("GEVREY_KIT_THREADS must be a positive integer") from exc
    if cap < 1:
        raise ConfigError("GEVREY_KIT_THREADS must be a positive integer")
    return cap


# -- subcommands -----------------------------------------------------------------


def _cmd_kappa(args) -> int:
    if args.max_n < 1:
        raise ConfigError("--max-n must be >= 1")
    seq = schroeder_hipparchus_sequence(args.max_n)
    header = "n,kappa_n,ratio_to_bound"
    if args.check_asymptotic:
        header += ",asymptotic_ratio"
    lines = [header]
    log_c = math.log(C_KAPPA)
    for n, value in enumerate(seq, start=1):
        ratio = math.exp(math.log(value) - (n - 1) * log_c)
        row = f"{n},{value},{_fmt(ratio)}"
        if args.check_asymptotic:
            row += f",{_fmt(math.exp(math.log(value) - kappa_asymptotic_log(n)))}"
        lines.append(row)
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def _cmd_envelope(args) -> int:
    cfg = _read_json_config(
        args.config,
        allowed={"s", "alpha", "sigma", "digamma", "orders"},
        required={"s", "alpha", "sigma", "digamma"},
    )
    env = GevreyEnvelope(float(cfg["s"]), float(cfg["sigma"]), float(cfg["digamma"]))
    out = implicit_envelope(StabilityConstant(float(cfg["alpha"])), env)
    lines = ["key,value", f"scale,{_fmt(out.scale)}", f"rate,{_fmt(out.rate)}"]
    if out.s == 1.0:
        lines.append(f"radius,{_fmt(convergence_radius(out))}")
    else:
        lines.append("radius,")
    for n in cfg.get("orders", []):
        lines.append(f"bound_n={int(n)},{_fmt(out.bound(int(n)))}")
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def _pde_field_spec(mesh: Mesh1D, value, name: str):
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, list):
        return value
    raise ConfigError(f"field {name!r} must be a number or a flat list of values")


def _cmd_solve(args) -> int:
    cfg = _read_json_config(
        args.config,
        allowed={"mesh_n", "bc", "a", "b", "f", "g", "nonlinearity", "tol", "seed"},
        required={"nonlinearity"},
    )
    mesh = Mesh1D.uniform(int(cfg.get("mesh_n", 256)), right_bc=cfg.get("bc", "dirichlet"))
    nl = _nonlinearity_from_spec(cfg["nonlinearity"])
    data = PdeData.from_spec(
        mesh,
        a=_pde_field_spec(mesh, cfg.get("a", 1.0), "a"),
        b=_pde_field_spec(mesh, cfg.get("b", 0.0), "b"),
        f=_pde_field_spec(mesh, cfg.get("f", 0.0), "f"),
        g=float(cfg.get("g", 0.0)),
    )
    tol = float(cfg.get("tol", 1e-12))
    u = newton_solve(mesh, data, nl, tol=tol)

    full = mesh.expand(u)
    lines = ["x,u"]
    for x, v in zip(mesh.nodes, full):
        lines.append(f"{_fmt(x)},{_fmt(v)}")
    _emit("\n".join(lines) + "\n", args.output)

    if args.report is not None:
        rng = np.random.default_rng(int(cfg.get("seed", 0)))
        bound = solution_bound_check(mesh, data, nl, u)
        probe = monotonicity_probe(mesh, data, nl, rng)
        report = {
            "residual_norm": mesh.dual_norm(assemble_residual(mesh, data, nl, u)),
            "constants": estimate_constants(mesh, data, nl, u).as_dict(),
            "bound_checks": {
                "solution_bound": {"lhs": bound.lhs, "rhs": bound.rhs, "ok": bound.ok},
                "monotonicity": {
                    "min_ratio": probe.min_ratio,
                    "threshold": probe.threshold,
                    "ok": probe.ok,
                },
            },
        }
        _write_text(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def _derivative_problem(args):
    if args.problem == "scalar-quadratic":
        oracle = scalar_quadratic_oracle()
        at = 3.0 if args.at is None else args.at
        base = np.array([at])
        directions = [np.array([float(v)]) for v in (args.direction_values or [1.0])]
        steps = [0.1, 0.05, 0.025, 0.0125]
        return oracle, base, directions, steps
    if args.problem == "scalar-cubic":
        oracle = scalar_cubic_oracle()
        at = 0.0 if args.at is None else args.at
        base = np.array([at])
        directions = [np.array([float(v)]) for v in (args.direction_values or [1.0])]
        steps = [0.08, 0.04, 0.02, 0.01]
        return oracle, base, directions, steps
    mesh = Mesh1D.uniform(args.mesh_n)
    oracle = PdeOracle(mesh, Nonlinearity.cubic())
    base = PdeData.from_spec(mesh, a=1.0, b=1.0, f=1.0)
    specs = args.direction_values or [{"f": 1.0}]
    directions = []
    for spec in specs:
        if not isinstance(spec, dict) or set(spec) - {"a", "b", "f", "g"}:
            raise ConfigError("pde1d directions must be objects with keys a, b, f, g")
        directions.append(
            PdeData.from_spec(mesh, a=spec.get("a", 0.0), b=spec.get("b", 0.0),
                              f=spec.get("f", 0.0), g=spec.get("g", 0.0))
        )
    steps = [0.1, 0.05, 0.025]
    return oracle, base, directions, steps


def _cmd_derivatives(args) -> int:
    if args.order < 1:
        raise ConfigError("--order must be >= 1")
    if args.directions is not None:
        try:
            with open(args.directions) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read directions: {exc}") from exc
        if not isinstance(values, list) or not values:
            raise ConfigError("directions file must hold a nonempty JSON list")
        args.direction_values = values
    else:
        args.direction_values = None

    oracle, base, directions, steps = _derivative_problem(args)
    table = derivative_table(oracle, base, directions, args.order)

    solution_map = lambda d: solve_residual(oracle, d, oracle.zero_state(), 1e-13)
    lines = ["key,norm,fd_norm,fd_error_indicator"]
    for key, value in table.items():
        label = "base" if key == () else "+".join(str(i + 1) for i in key)
        norm = oracle.state_norm(value)
        fd_norm, fd_ind = "", ""
        if args.fd_check and key != () and len(key) <= 4:
            dirs = [directions[i] for i in key]
            est, ind = finite_difference_check(solution_map, base, dirs, steps,
                                               norm=oracle.state_norm)
            fd_norm, fd_ind = _fmt(oracle.state_norm(est)), _fmt(ind)
        lines.append(f"{label},{_fmt(norm)},{fd_norm},{fd_ind}")
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def _cmd_verify_bounds(args) -> int:
    cfg = _read_json_config(
        args.config,
        allowed={"mesh_n", "p", "c", "vartheta", "nonlinearity", "max_order",
                 "y_samples", "seed", "tol"},
        required={"mesh_n", "p", "max_order", "y_samples"},
    )
    mesh = Mesh1D.uniform(int(cfg["mesh_n"]))
    dmap = DomainMap1D(int(cfg["p"]), float(cfg.get("c", 0.5)),
                       float(cfg.get("vartheta", 2.0)))
    nl = _nonlinearity_from_spec(cfg.get("nonlinearity", {"kind": "cubic"}))
    hat = PdeData.from_spec(mesh, a=1.0, b=1.0, f=1.0)
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    ys = [rng.uniform(-0.5, 0.5, dmap.p) for _ in range(int(cfg["y_samples"]))]
    report = verify_derivative_bounds(dmap, hat, mesh, nl, ys,
                             max_order=int(cfg["max_order"]),
                             tol=float(cfg.get("tol", 1e-12)))

    lines = ["alpha,y_id,measured_norm,bound,ratio"]
    for row in report.rows:
        bound = math.exp(row.log_bound) if row.log_bound < 700.0 else float("inf")
        lines.append(
            f"{row.alpha.label()},{row.y_index},{_fmt(row.measured)},"
            f"{_fmt(bound)},{_fmt(row.ratio)}"
        )
    _emit("\n".join(lines) + "\n", args.output)
    if args.report is not None:
        payload = {
            "passed": report.passed,
            "constants": {k: v for k, v in report.constants.items() if k != "per_point"},
            "envelope": {
                "s": report.envelope.base.s,
                "scale": report.envelope.base.scale,
                "rate": report.envelope.base.rate,
                "weights": list(report.envelope.weights),
            },
        }
        _write_text(args.report, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0 if report.passed else 3


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(out=print)
    return 0 if ok else 2


# -- entry point ------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gevrey-kit",
        description="Derivative-bound calculus for implicitly defined solution maps.",
    )
    parser.add_argument("--version", action="version",
                        version=f"gevrey-kit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_kappa = sub.add_parser("kappa", help="little Schroeder numbers as CSV")
    p_kappa.add_argument("--max-n", type=int, default=20)
    p_kappa.add_argument("--check-asymptotic", action="store_true",
                         help="append the classical-asymptotic ratio column")
    p_kappa.add_argument("--output", default=None)
    p_kappa.set_defaults(handler=_cmd_kappa)

    p_env = sub.add_parser("envelope", help="implicit-map envelope constants")
    p_env.add_argument("--config", required=True,
                       help="JSON object {s, alpha, sigma, digamma, orders?}")
    p_env.add_argument("--output", default=None)
    p_env.set_defaults(handler=_cmd_envelope)

    p_solve = sub.add_parser("solve", help="one semilinear solve")
    p_solve.add_argument("--config", required=True,
                         help="JSON {mesh_n, bc?, a?, b?, f?, g?, nonlinearity, tol?, seed?}")
    p_solve.add_argument("--output", default=None, help="CSV of nodal values")
    p_solve.add_argument("--report", default=None, help="JSON report path")
    p_solve.set_defaults(handler=_cmd_solve)

    p_der = sub.add_parser("derivatives", help="solution-derivative table")
    p_der.add_argument("--problem", required=True,
                       choices=["scalar-quadratic", "scalar-cubic", "pde1d"])
    p_der.add_argument("--order", type=int, required=True)
    p_der.add_argument("--directions", default=None,
                       help="JSON list of directions (numbers, or {a,b,f,g} objects)")
    p_der.add_argument("--fd-check", action="store_true")
    p_der.add_argument("--at", type=float, default=None,
                       help="scalar base point (defaults per problem)")
    p_der.add_argument("--mesh-n", type=int, default=256)
    p_der.add_argument("--output", default=None)
    p_der.set_defaults(handler=_cmd_derivatives)

    p_ver = sub.add_parser("verify-bounds", help="parametric bound verification")
    p_ver.add_argument("--config", required=True,
                       help="JSON {mesh_n, p, c?, vartheta?, nonlinearity?, "
                            "max_order, y_samples, seed?, tol?}")
    p_ver.add_argument("--output", default=None)
    p_ver.add_argument("--report", default=None)
    p_ver.set_defaults(handler=_cmd_verify_bounds)

    p_self = sub.add_parser("selftest", help="run the verification suite")
    p_self.set_defaults(handler=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _thread_cap()
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (NonConvergenceError, LinearizationError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
