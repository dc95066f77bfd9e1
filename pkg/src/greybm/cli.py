"""Command-line front end: ``greybm <subcommand> ...``.

Every numeric output embeds the resolved configuration and the tool version;
files are written atomically.  Library errors exit with status 2 and a message
on stderr; ``validate`` exits 1 when a check fails.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .errors import ConstraintError, GreyBMError
from .fracops import TimeGrid, indicator_inner_quadrature, kernel_R, m_indicator
from .io import atomic_write_text, dump_json, format_float, write_csv
from .localtime import LOCAL, SELF_INTERSECTION, LocalTimeQuery, closed_form, lt_monte_carlo_sampled, lt_t_transform
from .measure import (
    LinearFunctional,
    ModelParams,
    char_fn,
    covariance_pair,
    donsker_expectation,
    donsker_t_transform,
    even_moment,
    laplace_transform,
)
from .sampling import sample_fbm, sample_mwright, sample_vggbm, write_vggb
from .sde import fundamental_matrix, solve_mean_and_cov, solve_paths, spec_from_dict
from .specfun import gamma, m_wright, mittag_leffler_two

__all__ = ["main", "build_parser"]


def _config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _emit(text: str, out) -> None:
    if out:
        atomic_write_text(out, text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _csv_text(header, rows, metadata) -> str:
    lines = [f"# {k}={v}" for k, v in metadata.items()]
    lines.append(",".join(header))
    lines.extend(",".join(format_float(x) for x in row) for row in rows)
    return "\n".join(lines)


def _write_table(out, header, rows, metadata) -> None:
    if out:
        write_csv(out, header, np.asarray(rows, dtype=float), metadata)
    else:
        sys.stdout.write(_csv_text(header, rows, metadata) + "\n")


def _scalar_text(v) -> str:
    v = complex(v)
    if v.imag == 0.0:
        return format_float(v.real)
    return f"{format_float(v.real)}{'+' if v.imag >= 0 else '-'}{format_float(abs(v.imag))}j"


def _range(spec):
    lo, hi, n = spec
    return np.linspace(float(lo), float(hi), int(n))


def _check_beta(beta: float) -> None:
    if not 0.0 < beta <= 1.0:
        raise ConstraintError(f"beta out of range (0, 1], got {beta}")


# ---------------------------------------------------------------- specfun


def cmd_specfun(args) -> int:
    meta = {"tool": f"greybm {__version__}", "function": args.function}
    if args.function == "gamma":
        f, xs, name = gamma, args.x, "x"
    elif args.function == "ml":
        _check_beta(args.beta)
        f, xs, name = (lambda z: mittag_leffler_two(args.beta, args.rho, z)), args.z, "z"
        meta.update(beta=args.beta, rho=args.rho)
    else:
        _check_beta(args.beta)
        f, xs, name = (lambda y: m_wright(args.beta, y)), args.y, "y"
        meta.update(beta=args.beta)
    if args.range is not None:
        pts = _range(args.range)
        _write_table(args.out, [name, "value"], [(x, float(np.real(f(x)))) for x in pts], meta)
        return 0
    if xs is None:
        raise ConstraintError(f"give --{name} or --range")
    lines = []
    for x in xs:
        v = f(complex(x) if args.function == "ml" and "j" in x else float(x))
        lines.append(_scalar_text(np.asarray(v).item() if np.ndim(v) else v))
    _emit("\n".join(lines), args.out)
    return 0


# ---------------------------------------------------------------- fracops


def cmd_fracops(args) -> int:
    if args.operation == "kernel":
        if args.s is None:
            raise ConstraintError("kernel needs --s")
        rec = {
            "operation": "kernel",
            "version": __version__,
            "inputs": {"alpha": args.alpha, "t": args.t, "s": args.s},
            "value": kernel_R(args.alpha, args.t, args.s),
            "config": _config(args),
        }
        if args.quadrature:
            rec["quadrature_value"] = indicator_inner_quadrature(args.alpha, args.t, args.s)
        _emit(dump_json(rec), args.out)
        return 0
    xs = _range(args.range)
    meta = {"tool": f"greybm {__version__}", "operation": "indicator", "alpha": args.alpha, "t": args.t}
    if args.alpha < 1:
        singular = (xs == 0.0) | (xs == args.t)
        if singular.any():
            meta["skipped_singular_x"] = " ".join(format_float(x) for x in xs[singular])
            xs = xs[~singular]
    vals = m_indicator(args.alpha, args.t, xs)
    _write_table(args.out, ["x", "value"], np.column_stack([xs, vals]), meta)
    return 0


# ---------------------------------------------------------------- measure


def _functional(args) -> tuple[ModelParams, LinearFunctional]:
    p = ModelParams(args.beta, args.alpha, args.d)
    coef = args.coef if args.coef is not None else [1.0] * args.d
    if len(coef) != args.d:
        raise ConstraintError(f"--coef needs d={args.d} entries")
    return p, LinearFunctional.scaled(args.alpha, coef, args.t)


def cmd_measure(args) -> int:
    p, eta = _functional(args)
    inputs = {"t": args.t, "coef": args.coef if args.coef is not None else [1.0] * args.d}
    op = args.operation
    if op == "moment":
        inputs["n"] = args.n
        value = even_moment(p, eta, args.n)
    elif op == "covariance":
        inputs["s"] = args.s
        value = covariance_pair(p, eta, LinearFunctional.scaled(args.alpha, inputs["coef"], args.s))
    elif op == "charfn":
        inputs["p"] = args.p
        value = char_fn(p, eta, args.p)
    elif op == "laplace":
        inputs["lam"] = args.lam
        value = laplace_transform(p, eta, args.lam)
    else:
        a = args.a if args.a is not None else 0.0
        inputs["a"] = a
        value = donsker_t_transform(p, eta, a)
        value = value.real if value.imag == 0.0 else value
    rec = {"operation": op, "version": __version__, "params": p.as_dict(), "inputs": inputs, "value": value,
           "config": _config(args)}
    if op == "donsker" and inputs["a"] == 0.0:
        rec["closed_form"] = donsker_expectation(p, eta)
    _emit(dump_json(rec), args.out)
    return 0


# ---------------------------------------------------------------- sample


def cmd_sample(args) -> int:
    meta = {"tool": f"greybm {__version__}", "kind": args.kind, "seed": args.seed}
    if args.kind == "mwright":
        _check_beta(args.beta)
        y = sample_mwright(args.beta, args.paths, args.seed)
        meta.update(beta=args.beta, n=args.paths)
        if args.format != "csv":
            raise ConstraintError("M-Wright samples are written as CSV only")
        _write_table(args.out, ["y"], y[:, None], meta)
        return 0
    grid = TimeGrid(args.T, args.n)
    if args.kind == "fbm":
        paths = sample_fbm(args.H, grid, args.paths, args.seed)[:, None, :]
        meta.update(H=args.H, d=1, T=args.T, N=args.n, paths=args.paths)
        ens = None
    else:
        p = ModelParams(args.beta, args.alpha, args.d)
        ens = sample_vggbm(p, grid, args.paths, args.seed)
        paths = ens.paths
        meta.update(beta=args.beta, alpha=args.alpha, d=args.d, T=args.T, N=args.n, paths=args.paths)
        meta["checksum"] = ens.checksum()
    if args.format == "binary":
        if not args.out:
            raise ConstraintError("binary output needs --out")
        if ens is None:
            raise ConstraintError("binary output is for vggbm ensembles")
        write_vggb(args.out, ens)
        sys.stdout.write(dump_json({"output": args.out, "format": "binary", **meta}) + "\n")
        return 0
    m, d, n1 = paths.shape
    idx = np.arange(n1)
    rows = np.empty((m * n1, 3 + d))
    rows[:, 0] = np.repeat(np.arange(m), n1)
    rows[:, 1] = np.tile(idx, m)
    rows[:, 2] = np.tile(grid.nodes, m)
    rows[:, 3:] = np.transpose(paths, (0, 2, 1)).reshape(m * n1, d)
    header = ["path", "i", "t"] + [f"x{k + 1}" for k in range(d)]
    _write_table(args.out, header, rows, meta)
    return 0


# ---------------------------------------------------------------- localtime


def cmd_localtime(args) -> int:
    p = ModelParams(args.beta, args.alpha, args.d)
    q = LocalTimeQuery(p, args.T, tuple(args.a) if args.a else (), args.kind)
    rec = {
        "kind": q.kind,
        "version": __version__,
        "params": p.as_dict(),
        "inputs": {"T": args.T, "a": list(q.a)},
        "closed_form": closed_form(q) if q.at_zero else None,
        "quadrature_value": lt_t_transform(q).real,
        "mc_estimate": None,
        "mc_se": None,
        "config": _config(args),
    }
    if args.paths > 0:
        est = lt_monte_carlo_sampled(q, args.epsilon, args.n, args.paths, args.seed)
        rec["mc_estimate"], rec["mc_se"] = est.value, est.se
        rec["mc"] = {"epsilon": args.epsilon, "N": args.n, "paths": args.paths, "seed": args.seed, "checksum": est.checksum}
    _emit(dump_json(rec), args.out)
    return 0


# ---------------------------------------------------------------- sde


def cmd_sde(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConstraintError(f"{args.spec}: invalid JSON ({exc})") from exc
    spec, N, seed, paths = spec_from_dict(obj)
    fm = fundamental_matrix(spec, N)
    mean, cov = solve_mean_and_cov(spec, fm)
    d = spec.d
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    header = ["t"] + [f"mean{i + 1}" for i in range(d)] + [f"cov{i + 1}{j + 1}" for i, j in pairs]
    rows = np.column_stack([fm.grid.nodes, mean] + [cov[:, i, j] for i, j in pairs])
    p = spec.params
    meta = {"tool": f"greybm {__version__}", "beta": p.beta, "alpha": p.alpha, "d": d, "T": spec.T, "N": N,
            "seed": seed, "sigma": spec.sigma}
    _write_table(args.out, header, rows, meta)
    if args.ensemble:
        if paths <= 0:
            raise ConstraintError("--ensemble needs 'paths' > 0 in the spec")
        ens = solve_paths(spec, fm, paths, seed)
        write_vggb(args.ensemble, ens)
        sys.stderr.write(f"wrote {paths} solution paths to {args.ensemble} (sha256 {ens.checksum()})\n")
    return 0


# ---------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    from .validation import run_validation

    report = run_validation(args.tier, args.seed)
    _emit(dump_json(report), args.report)
    for c in report["criteria"]:
        sys.stderr.write(f"criterion {c['id']} ({c['title']}): {'PASS' if c['passed'] else 'FAIL'}\n")
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------- parser


def _model_args(sp, d=True):
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--alpha", type=float, required=True)
    if d:
        sp.add_argument("--d", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="greybm", description="Numerics for vector-valued generalized grey Brownian motion.")
    ap.add_argument("--version", action="version", version=f"greybm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("specfun", help="Gamma, Mittag-Leffler and M-Wright functions")
    sp.add_argument("function", choices=["ml", "mw", "gamma"])
    sp.add_argument("--beta", type=float)
    sp.add_argument("--rho", type=float, default=1.0, help="second Mittag-Leffler parameter (default 1)")
    sp.add_argument("--z", nargs="+", help="Mittag-Leffler argument(s); complex as 1+2j")
    sp.add_argument("--y", nargs="+", help="M-Wright argument(s)")
    sp.add_argument("--x", nargs="+", help="Gamma argument(s)")
    sp.add_argument("--range", nargs=3, metavar=("START", "STOP", "NUM"), help="CSV over a real range")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_specfun)

    sp = sub.add_parser("fracops", help="fractional operator kernels")
    sp.add_argument("operation", choices=["kernel", "indicator"])
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--s", type=float, help="second time (kernel)")
    sp.add_argument("--quadrature", action="store_true", help="also evaluate the kernel by singular quadrature")
    sp.add_argument("--range", nargs=3, metavar=("START", "STOP", "NUM"), default=("-1", "2", "301"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fracops)

    sp = sub.add_parser("measure", help="moments and transforms of <omega, eta>, eta = coef_k M_- 1_[0,t)")
    sp.add_argument("operation", choices=["moment", "covariance", "charfn", "laplace", "donsker"])
    _model_args(sp)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--coef", type=float, nargs="+")
    sp.add_argument("--n", type=int, default=1, help="moment order: E[<.,eta>^(2n)]")
    sp.add_argument("--s", type=float, default=1.0, help="second time (covariance)")
    sp.add_argument("--p", type=float, nargs="+", default=[1.0], help="characteristic function argument (d entries)")
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--a", type=float, help="Donsker delta level")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_measure)

    sp = sub.add_parser("sample", help="sample M-Wright variables, fBm or vggBm paths")
    sp.add_argument("kind", choices=["vggbm", "fbm", "mwright"])
    sp.add_argument("--beta", type=float, default=0.7)
    sp.add_argument("--alpha", type=float, default=0.8)
    sp.add_argument("--H", type=float, default=0.4)
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=1024, help="grid intervals")
    sp.add_argument("--paths", type=int, default=100, help="number of paths (draws for mwright)")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--format", choices=["csv", "binary"], default="csv")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("localtime", help="local time and self-intersection local time expectations")
    sp.add_argument("action", choices=["expect"])
    _model_args(sp)
    sp.add_argument("--T", type=float, default=1.0)
    sp.add_argument("--kind", choices=[LOCAL, SELF_INTERSECTION], default=LOCAL)
    sp.add_argument("--a", type=float, nargs="+", help="level (d entries, local time only)")
    sp.add_argument("--paths", type=int, default=0, help="Monte Carlo paths (0: skip)")
    sp.add_argument("--n", type=int, default=1024, help="Monte Carlo grid intervals")
    sp.add_argument("--epsilon", type=float, default=0.02, help="mollifier width")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_localtime)

    sp = sub.add_parser("sde", help="linear systems dX = A X dt + sigma dB")
    sp.add_argument("action", choices=["solve"])
    sp.add_argument("--spec", required=True, help="JSON spec file")
    sp.add_argument("--out", help="mean/covariance CSV (default stdout)")
    sp.add_argument("--ensemble", help="write solution paths here (binary)")
    sp.set_defaults(func=cmd_sde)

    sp = sub.add_parser("validate", help="run the acceptance suite")
    sp.add_argument("--tier", choices=["fast", "mc"], default="fast")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--report", help="write the JSON report here (default stdout)")
    sp.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GreyBMError, OSError) as exc:
        sys.stderr.write(f"greybm {args.command}: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
