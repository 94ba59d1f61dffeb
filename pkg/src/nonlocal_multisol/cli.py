"""Batch front end.

Subcommands:
  check   certify the structural hypotheses, write hypotheses.json
  scan    sample the norm map on one interval, write pk_curve_<k>.csv
  solve   full pipeline: hypotheses, scans, fixed points, ordered bundle
  aux     one auxiliary solve at a given alpha with its diagnostic bounds

Configuration is TOML (see RunConfig); a few knobs have CLI overrides.
Exit codes: 0 success, 1 mathematical failure (hypothesis violation,
missing brackets, residual breach, solver failure), 2 usage error.

All outputs are deterministic: CSV numbers use 17 significant digits, JSON
is sorted, and nothing depends on wall clock, host, or randomness.  The
environment variable NONLOCAL_MULTISOL_THREADS caps scan parallelism
(default: machine parallelism); it does not affect emitted values.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .geometry import DomainSpec, EigenData, Grid, build_grid, eigen_data
from .hypotheses import HypothesisReport, certify, chebyshev_grid
from .nonlinearity import (
    FamilyConstants,
    NonlinearityError,
    NonlocalNonlinearity,
    custom_nonlinearity,
    make_family_a,
    make_family_b,
    make_family_c,
    scale_nonlinearity,
    truncate,
)
from .fixedpoint import (
    OrderingError,
    PkEvaluator,
    ScanError,
    assemble_bundle,
    bracket_and_bisect,
    scan_interval,
)
from .solver import (
    SolveError,
    SolveOptions,
    energy_upper_bound,
    lower_barrier,
    mass_identity,
    pk_upper_bound,
    solve_auxiliary,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Unreadable or inconsistent run configuration."""


@dataclass
class ScanConfig:
    samples: int = 64
    delta: float = 1e-3      # endpoint offset, relative to interval length
    tol_fp: float = 1e-8     # fixed-point tolerance, relative to interval length


@dataclass
class FamilySpec:
    family: str                      # "a" | "b" | "c" | "custom"
    K: int = 1
    U: Optional[float] = None
    scale: float = 1.0
    S_expr: Optional[str] = None     # family a (and optionally c): S(t)
    L_expr: Optional[str] = None     # family a: L(w)
    f_expr: Optional[str] = None     # custom: f(s, alpha)
    s_upper: Optional[float] = None
    singular_points: Optional[List[float]] = None
    gamma: Optional[object] = None   # number or "inf"


@dataclass
class RunConfig:
    domain: DomainSpec
    p: float
    family: FamilySpec
    solver: SolveOptions = field(default_factory=SolveOptions)
    scan: ScanConfig = field(default_factory=ScanConfig)
    out_dir: Path = Path("out")

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p >= 1.0):
            raise ConfigError(f"p must be a finite number >= 1, got {self.p!r}")


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def load_config(path: Path) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML in {path}: {exc}") from exc

    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError(
            f"config schema must be {SCHEMA_VERSION}, got {data.get('schema')!r}")

    dom = _section(data, "domain")
    try:
        spec = DomainSpec(
            kind=dom.get("kind", "interval"),
            bounds=tuple(float(b) for b in dom.get("bounds", ())),
            resolution=int(dom.get("resolution", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [domain]: {exc}") from exc

    prob = _section(data, "problem")
    family_name = prob.get("family")
    if family_name not in ("a", "b", "c", "custom"):
        raise ConfigError(
            f"[problem].family must be one of a|b|c|custom, got {family_name!r}")
    try:
        fam = FamilySpec(
            family=family_name,
            K=int(prob.get("K", 1)),
            U=None if prob.get("U") is None else float(prob["U"]),
            scale=float(prob.get("scale", 1.0)),
            S_expr=prob.get("S"),
            L_expr=prob.get("L"),
            f_expr=prob.get("f"),
            s_upper=None if prob.get("s_upper") is None else float(prob["s_upper"]),
            singular_points=prob.get("singular_points"),
            gamma=prob.get("gamma"),
        )
        p = float(prob.get("p", 1.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [problem]: {exc}") from exc
    if fam.K < 1:
        raise ConfigError("[problem].K must be a positive integer")
    if fam.family == "custom" and not fam.f_expr:
        raise ConfigError("custom family needs [problem].f (expression in s, alpha)")
    if fam.family == "a" and not (fam.S_expr and fam.L_expr):
        raise ConfigError("family a needs [problem].S and [problem].L expressions")

    sol = _section(data, "solver")
    try:
        solver = SolveOptions(
            newton_tol=float(sol.get("newton_tol", 1e-10)),
            max_newton=int(sol.get("max_newton", 60)),
            damping=float(sol.get("damping", 0.5)),
            max_halvings=int(sol.get("max_halvings", 30)),
            monotone_fallback=bool(sol.get("monotone_fallback", True)),
            lambda_shift=(None if sol.get("lambda_shift") is None
                          else float(sol["lambda_shift"])),
            max_monotone=int(sol.get("max_monotone", 20000)),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid [solver]: {exc}") from exc

    sc = _section(data, "scan")
    try:
        scan = ScanConfig(
            samples=int(sc.get("samples", 64)),
            delta=float(sc.get("delta", 1e-3)),
            tol_fp=float(sc.get("tol_fp", 1e-8)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [scan]: {exc}") from exc
    if scan.samples < 8:
        raise ConfigError("[scan].samples must be >= 8")
    if not 0.0 < scan.delta < 0.5:
        raise ConfigError("[scan].delta must lie in (0, 0.5)")

    out = _section(data, "output")
    if out.get("deterministic", True) is not True:
        raise ConfigError("[output].deterministic cannot be disabled")

    try:
        return RunConfig(
            domain=spec, p=p, family=fam, solver=solver, scan=scan,
            out_dir=Path(out.get("dir", "out")),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- expression compiler ---------------------------------------------------------

_EXPR_NAMESPACE = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "arctan": np.arctan,
    "sinh": np.sinh, "cosh": np.cosh, "tanh": np.tanh,
    "exp": np.exp, "log": np.log, "sqrt": np.sqrt, "abs": np.abs,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "sign": np.sign, "floor": np.floor, "ceil": np.ceil,
    "pi": math.pi, "e": math.e, "inf": math.inf,
}


def compile_expression(expr: str, variables: Tuple[str, ...]):
    """Compile a config expression over numpy scalars/arrays.

    Only the listed variables and a whitelist of math names are visible.
    """
    try:
        code = compile(expr, "<config expression>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {expr!r}: {exc}") from exc
    unknown = set(code.co_names) - set(_EXPR_NAMESPACE) - set(variables)
    if unknown:
        raise ConfigError(
            f"expression {expr!r} uses unknown name(s) {sorted(unknown)}")

    def fn(**kw):
        return eval(code, {"__builtins__": {}}, {**_EXPR_NAMESPACE, **kw})

    return fn


# -- problem assembly ------------------------------------------------------------


@dataclass
class Problem:
    grid: Grid
    eig: EigenData
    f: NonlocalNonlinearity
    constants: Optional[FamilyConstants]


def build_problem(cfg: RunConfig) -> Problem:
    grid = build_grid(cfg.domain)
    eig = eigen_data(grid, cfg.p)
    fam = cfg.family
    geometry_kw = dict(
        K=fam.K, p=cfg.p, lambda1=eig.lambda1, C1=eig.C1,
        measure=grid.measure, int_e1_p=eig.int_e1_p, U=fam.U,
    )
    consts: Optional[FamilyConstants] = None
    if fam.family == "b":
        f, consts = make_family_b(**geometry_kw)
    elif fam.family == "c":
        S = None
        if fam.S_expr:
            S_fn = compile_expression(fam.S_expr, ("t",))
            S = lambda t: float(S_fn(t=t))
        f, consts = make_family_c(S=S, **geometry_kw)
    elif fam.family == "a":
        S_fn = compile_expression(fam.S_expr, ("t",))
        L_fn = compile_expression(fam.L_expr, ("w",))
        f, consts = make_family_a(
            lambda t: float(S_fn(t=t)), lambda w: L_fn(w=w), **geometry_kw)
    else:
        if not fam.singular_points:
            raise ConfigError("custom family needs [problem].singular_points")
        f_fn = compile_expression(fam.f_expr, ("s", "alpha"))
        gamma = None
        if fam.gamma == "inf":
            gamma = lambda alpha: math.inf
        elif fam.gamma is not None:
            gval = float(fam.gamma)
            gamma = lambda alpha: gval
        f = custom_nonlinearity(
            lambda s, alpha: np.asarray(f_fn(s=s, alpha=alpha), dtype=float),
            singular_points=[float(t) for t in fam.singular_points],
            s_upper=fam.s_upper,
            gamma=gamma,
        )
    if fam.scale != 1.0:
        f = scale_nonlinearity(f, fam.scale)
    return Problem(grid=grid, eig=eig, f=f, constants=consts)


def run_hypotheses(pb: Problem, cfg: RunConfig) -> HypothesisReport:
    return certify(
        pb.f, lambda1=pb.eig.lambda1, C1=pb.eig.C1, measure=pb.grid.measure,
        int_e1_p=pb.eig.int_e1_p, p=cfg.p)


# -- output helpers --------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def geometry_summary(pb: Problem) -> dict:
    eig, grid = pb.eig, pb.grid
    return {
        "lambda1": eig.lambda1,
        "C1": eig.C1,
        "measure": grid.measure,
        "int_e1_p": eig.int_e1_p,
        "int_e1_sq": eig.int_e1_sq,
        "M": math.sqrt(eig.lambda1) / (2.0 * eig.C1 * math.sqrt(grid.measure)),
        "resolution": grid.spec.resolution,
        "p": eig.p,
    }


def _pk_floor(pb: Problem, alpha: float) -> float:
    tf = truncate(pb.f, alpha)
    return tf.psi_inverse(pb.eig.lambda1) ** pb.eig.p * pb.eig.int_e1_p


def _pk_ceiling(pb: Problem, alpha: float) -> float:
    tf = truncate(pb.f, alpha)
    return float(pk_upper_bound(pb.grid, tf, pb.eig))


def _scan_rows(pb: Problem, k: int, alphas: np.ndarray,
               evaluator: PkEvaluator) -> Tuple[List[list], bool]:
    rows = []
    failed = False
    for alpha in alphas:
        try:
            sample, _ = evaluator.evaluate(k, float(alpha))
            rows.append([float(alpha), sample.pk, sample.c_alpha, sample.residual,
                         _pk_floor(pb, float(alpha)), _pk_ceiling(pb, float(alpha)),
                         "ok"])
        except (SolveError, NonlinearityError) as exc:
            failed = True
            note = str(exc).replace(",", ";").replace("\n", " ")
            rows.append([float(alpha), math.nan, math.nan, math.nan,
                         math.nan, math.nan, f"error: {note}"])
    return rows, failed


SCAN_HEADER = ["alpha", "pk", "c_alpha", "residual", "pk_floor", "pk_ceiling",
               "status"]


# -- subcommands -----------------------------------------------------------------


def cmd_check(cfg: RunConfig) -> int:
    pb = build_problem(cfg)
    report = run_hypotheses(pb, cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "hypotheses.json", report.as_dict())
    for r in report:
        line = f"{r.hypothesis}: {r.status} (margin = {_fmt(r.margin)})"
        if r.witness is not None:
            line += f" witness = {json.dumps(r.witness, sort_keys=True)}"
        print(line)
    if report.all_certified():
        print("all hypotheses certified on samples")
        return 0
    print(f"violated: {', '.join(report.violated())}")
    return 1


def _gate_hypotheses(pb: Problem, cfg: RunConfig, force: bool) -> HypothesisReport:
    report = run_hypotheses(pb, cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "hypotheses.json", report.as_dict())
    if not report.all_certified() and not force:
        raise ScanError(
            f"hypotheses violated ({', '.join(report.violated())}); "
            "rerun with --force to proceed anyway")
    return report


def cmd_scan(cfg: RunConfig, k: int, force: bool = False) -> int:
    pb = build_problem(cfg)
    _gate_hypotheses(pb, cfg, force)
    lo, hi = pb.f.interval_bounds(k)
    delta = cfg.scan.delta * (hi - lo)
    alphas = chebyshev_grid(lo + delta, hi - delta, cfg.scan.samples)
    evaluator = PkEvaluator(pb.grid, pb.eig, pb.f, cfg.solver)
    rows, failed = _scan_rows(pb, k, alphas, evaluator)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(cfg.out_dir / f"pk_curve_{k}.csv", SCAN_HEADER, rows)
    print(f"scan of interval {k}: {len(rows)} samples -> "
          f"{cfg.out_dir / f'pk_curve_{k}.csv'}")
    return 1 if failed else 0


def cmd_solve(cfg: RunConfig, force: bool = False) -> int:
    pb = build_problem(cfg)
    report = _gate_hypotheses(pb, cfg, force)
    evaluator = PkEvaluator(pb.grid, pb.eig, pb.f, cfg.solver)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)

    scan_json: Dict[str, list] = {}
    crossings_json: Dict[str, dict] = {}
    all_points = []
    try:
        for k in range(1, pb.f.K + 1):
            lo, hi = pb.f.interval_bounds(k)
            delta = cfg.scan.delta * (hi - lo)
            scan = scan_interval(k, cfg.scan.samples, delta, evaluator)
            rows = [[s.alpha, s.pk, s.c_alpha, s.residual,
                     _pk_floor(pb, s.alpha), _pk_ceiling(pb, s.alpha), "ok"]
                    for s in scan.samples]
            write_csv(cfg.out_dir / f"pk_curve_{k}.csv", SCAN_HEADER, rows)
            scan_json[str(k)] = [
                {"alpha": s.alpha, "pk": s.pk, "c_alpha": s.c_alpha,
                 "residual": s.residual, "iterations": s.iterations,
                 "method": s.method} for s in scan.samples]
            crossings_json[str(k)] = {
                "floor_left": scan.floor_left,
                "floor_right": scan.floor_right,
                "dip": scan.dip,
                "pattern": scan.pattern,
            }
            points = bracket_and_bisect(scan, evaluator, tol_fp=cfg.scan.tol_fp)
            all_points.extend(points)
        bundle = assemble_bundle(all_points, pb.f, tol_fp=cfg.scan.tol_fp)
    except (ScanError, OrderingError, SolveError) as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        for k, table in scan_json.items():
            print(f"scan table, interval {k}:", file=sys.stderr)
            for row in table:
                print(f"  alpha = {_fmt(row['alpha'])}  pk = {_fmt(row['pk'])}",
                      file=sys.stderr)
        payload = {
            "schema": SCHEMA_VERSION,
            "geometry": geometry_summary(pb),
            "family_constants": pb.constants.as_dict() if pb.constants else None,
            "hypotheses": report.as_dict(),
            "scan": scan_json,
            "crossings": crossings_json,
            "bundle": None,
            "error": str(exc),
        }
        write_json(cfg.out_dir / "report.json", payload)
        return 1

    bundle_rows = [[fp.k, fp.alpha_star, fp.lp_norm, fp.nonlocal_residual]
                   for fp in bundle.fixed_points]
    write_csv(cfg.out_dir / "bundle.csv",
              ["k", "alpha_star", "lp_norm", "residual"], bundle_rows)

    coord_names = ["x"] if pb.grid.dim == 1 else ["x", "y"]
    index_within: Dict[int, int] = {}
    for fp in bundle.fixed_points:
        index_within[fp.k] = index_within.get(fp.k, 0) + 1
        i = index_within[fp.k]
        rows = [list(c) + [u] for c, u in zip(pb.grid.nodes, fp.u)]
        write_csv(cfg.out_dir / f"solution_{fp.k}_{i}.csv",
                  coord_names + ["u"], rows)

    payload = {
        "schema": SCHEMA_VERSION,
        "geometry": geometry_summary(pb),
        "family_constants": pb.constants.as_dict() if pb.constants else None,
        "hypotheses": report.as_dict(),
        "scan": scan_json,
        "crossings": crossings_json,
        "bundle": {
            "ordering_certificate": bundle.ordering_certificate,
            "solutions": [
                {"k": fp.k, "alpha_star": fp.alpha_star, "lp_norm": fp.lp_norm,
                 "nonlocal_residual": fp.nonlocal_residual,
                 "bracket": list(fp.bracket), "crossing": fp.crossing}
                for fp in bundle.fixed_points],
        },
    }
    write_json(cfg.out_dir / "report.json", payload)

    norms = " < ".join(_fmt(fp.lp_norm) for fp in bundle.fixed_points)
    print(f"found {len(bundle.fixed_points)} solutions with ordered norms: {norms}")
    return 0


def cmd_aux(cfg: RunConfig, alpha: float) -> int:
    pb = build_problem(cfg)
    tf = truncate(pb.f, alpha)
    try:
        res = solve_auxiliary(pb.grid, tf, pb.eig, cfg.solver)
    except SolveError as exc:
        print(f"auxiliary solve failed: {exc}", file=sys.stderr)
        for j, r in enumerate(exc.trace):
            print(f"  iteration {j}: scaled residual {r:.3e}", file=sys.stderr)
        return 1

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    z = lower_barrier(pb.grid, tf, pb.eig)
    coord_names = ["x"] if pb.grid.dim == 1 else ["x", "y"]
    rows = [list(c) + [u, zb] for c, u, zb in zip(pb.grid.nodes, res.u, z)]
    write_csv(cfg.out_dir / f"aux_{_fmt(float(alpha))}.csv",
              coord_names + ["u", "barrier"], rows)

    print(f"alpha = {_fmt(float(alpha))} (interval {tf.k}), "
          f"method = {res.method_used}, iterations = {res.iterations}")
    print(f"c_alpha = {_fmt(res.c_alpha)}")
    for eps in (0.1, 0.5, 1.0):
        if 0.0 < eps < tf.gamma - pb.eig.lambda1:
            bound = energy_upper_bound(pb.grid, tf, pb.eig, eps)
            ok = "<=" if res.c_alpha <= bound + 1e-8 else "> (VIOLATION)"
            print(f"energy bound eps = {_fmt(eps)}: c_alpha {ok} {_fmt(bound)}")
    margin = float(np.min(res.u - z))
    print(f"barrier margin min(u - z) = {_fmt(margin)} "
          f"(tolerance {-1e-8 * tf.s_alpha:.3e})")
    ceiling = float(pk_upper_bound(pb.grid, tf, pb.eig))
    print(f"pk = {_fmt(res.lp_norm)} <= ceiling {_fmt(ceiling)}"
          + ("" if res.lp_norm <= ceiling * (1 + 1e-6) else " (VIOLATION)"))
    lhs, pairing = mass_identity(pb.grid, res.u, pb.eig.p)
    print(f"mass identity: int u^p = {_fmt(lhs)}, pairing = {_fmt(pairing)}")
    print(f"residual = {_fmt(res.residual)} (scaled {_fmt(res.residual_scaled)})")
    return 0


# -- argument parsing ------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="nonlocal-multisol",
        description="Multiple positive solutions of nonlocal elliptic problems "
                    "via the norm map and its fixed points.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("check", "certify the structural hypotheses"),
        ("scan", "sample the norm map on one interval"),
        ("solve", "run the full multiplicity pipeline"),
        ("aux", "solve the auxiliary problem at one alpha"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--resolution", type=int, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--out", type=Path, default=None)
        p.add_argument("--force", action="store_true",
                       help="proceed even if hypotheses are violated")
        if name in ("scan", "aux"):
            p.add_argument("--k", type=int, default=1)
        if name == "aux":
            p.add_argument("--alpha", type=float, required=True)
    return ap


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.resolution is not None:
        cfg.domain = DomainSpec(cfg.domain.kind, cfg.domain.bounds, args.resolution)
    if args.samples is not None:
        if args.samples < 8:
            raise ConfigError("--samples must be >= 8")
        cfg.scan.samples = args.samples
    if args.delta is not None:
        if not 0.0 < args.delta < 0.5:
            raise ConfigError("--delta must lie in (0, 0.5)")
        cfg.scan.delta = args.delta
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "check":
            return cmd_check(cfg)
        if args.command == "scan":
            return cmd_scan(cfg, args.k, force=args.force)
        if args.command == "solve":
            return cmd_solve(cfg, force=args.force)
        return cmd_aux(cfg, args.alpha)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonlinearityError, SolveError, ScanError, OrderingError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
