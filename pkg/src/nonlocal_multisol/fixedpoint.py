"""The norm map and its fixed points.

For alpha in a working interval (t_{k-1}, t_k) the auxiliary solve yields a
unique positive solution u_alpha; the norm map sends alpha to the L^p mass
of u_alpha.  A fixed point alpha* of that map turns the frozen problem back
into the nonlocal one: u_{alpha*} solves  -Laplace u = f(u, int u^p)  with
mass alpha*.

The expected geometry per interval: the map exceeds the diagonal near both
endpoints (the barrier keeps the mass above the last singular point) and
dips below it somewhere inside (the peak bound caps it), so a scan finds at
least two sign changes of  g(alpha) = P(alpha) - alpha  and bisection pins
each crossing down to a certified fixed point.
"""

from __future__ import annotations

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import EigenData, Field, Grid, apply_neg_laplacian
from .hypotheses import chebyshev_grid
from .nonlinearity import NonlocalNonlinearity, truncate
from .solver import AuxSolveResult, SolveError, SolveOptions, solve_auxiliary

__all__ = [
    "PkSample",
    "FixedPoint",
    "SolutionBundle",
    "ScanResult",
    "ScanError",
    "OrderingError",
    "PkEvaluator",
    "evaluate_pk",
    "scan_interval",
    "bracket_and_bisect",
    "assemble_bundle",
    "default_workers",
]

log = logging.getLogger(__name__)

THREADS_ENV = "NONLOCAL_MULTISOL_THREADS"


class ScanError(RuntimeError):
    """Missing brackets or an uncertifiable crossing."""


class OrderingError(RuntimeError):
    """The assembled norms do not satisfy the strict interleaving."""


def default_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class PkSample:
    """One evaluation of the norm map."""

    k: int
    alpha: float
    pk: float               # integral of u_alpha^p
    c_alpha: float          # energy at the solution
    residual: float         # raw solver residual (sup norm)
    iterations: int
    method: str

    @property
    def g(self) -> float:
        return self.pk - self.alpha


@dataclass
class FixedPoint:
    """A certified crossing of the norm map with the diagonal."""

    k: int
    alpha_star: float
    u: Field
    lp_norm: float
    nonlocal_residual: float
    bracket: Tuple[float, float]
    crossing: str           # "down" (+ to -) or "up" (- to +)


@dataclass
class SolutionBundle:
    fixed_points: List[FixedPoint]
    ordering_certificate: bool

    def norms(self) -> List[float]:
        return [fp.lp_norm for fp in self.fixed_points]


@dataclass
class ScanResult:
    k: int
    samples: List[PkSample]
    floor_left: bool    # g > 0 at the sample nearest the left endpoint
    floor_right: bool   # g > 0 at the sample nearest the right endpoint
    dip: bool           # g < 0 at some interior sample
    pattern: str              # sign of g per sample, e.g. "+++---+++"


class PkEvaluator:
    """Norm-map evaluations with a (k, alpha, resolution) keyed cache."""

    def __init__(self, grid: Grid, eig: EigenData, f: NonlocalNonlinearity,
                 opts: Optional[SolveOptions] = None):
        self.grid = grid
        self.eig = eig
        self.f = f
        self.opts = opts or SolveOptions()
        self._cache: Dict[tuple, Tuple[PkSample, AuxSolveResult]] = {}
        self._lock = threading.Lock()

    def _key(self, k: int, alpha: float) -> tuple:
        return (k, float(alpha), self.grid.spec.resolution)

    def evaluate(self, k: int, alpha: float) -> Tuple[PkSample, AuxSolveResult]:
        key = self._key(k, alpha)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        if self.f.interval_index(alpha) != k:
            raise ScanError(
                f"alpha = {alpha!r} is not strictly inside working interval {k}")
        tf = truncate(self.f, alpha)
        try:
            res = solve_auxiliary(self.grid, tf, self.eig, self.opts)
        except SolveError as exc:
            raise SolveError(f"{exc} [at alpha = {alpha!r}]", exc.trace) from exc
        sample = PkSample(
            k=k, alpha=float(alpha), pk=res.lp_norm, c_alpha=res.c_alpha,
            residual=res.residual, iterations=res.iterations,
            method=res.method_used)
        with self._lock:
            self._cache[key] = (sample, res)
        return sample, res


def evaluate_pk(k: int, alpha: float, grid: Grid, eig: EigenData,
                f: NonlocalNonlinearity, opts: Optional[SolveOptions] = None,
                evaluator: Optional[PkEvaluator] = None) -> PkSample:
    """Truncate, solve, and integrate: one sample of the norm map."""
    ev = evaluator or PkEvaluator(grid, eig, f, opts)
    sample, _ = ev.evaluate(k, alpha)
    return sample


def scan_interval(
    k: int,
    samples: int,
    delta: float,
    evaluator: PkEvaluator,
    workers: Optional[int] = None,
) -> ScanResult:
    """Sample the norm map on a Chebyshev grid inside interval k.

    ``delta`` is the absolute endpoint offset.  Verifies the expected shape
    (above the diagonal at both offset endpoints, below it somewhere inside)
    and raises when no sign change exists at all.
    """
    if samples < 8:
        raise ValueError(f"need at least 8 scan samples, got {samples}")
    lo, hi = evaluator.f.interval_bounds(k)
    if not 0.0 < delta < 0.5 * (hi - lo):
        raise ValueError(f"endpoint offset {delta!r} outside (0, {(hi - lo) / 2!r})")
    alphas = chebyshev_grid(lo + delta, hi - delta, samples)

    n_workers = workers if workers is not None else default_workers()
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as ex:
            out = list(ex.map(lambda a: evaluator.evaluate(k, a), alphas))
    else:
        out = [evaluator.evaluate(k, a) for a in alphas]
    pk_samples = [s for s, _ in out]

    g = np.array([s.g for s in pk_samples])
    pattern = "".join("+" if v > 0 else ("-" if v < 0 else "0") for v in g)
    result = ScanResult(
        k=k,
        samples=pk_samples,
        floor_left=bool(g[0] > 0.0),
        floor_right=bool(g[-1] > 0.0),
        dip=bool(np.any(g < 0.0)),
        pattern=pattern,
    )
    if not np.any(g[:-1] * g[1:] < 0.0):
        raise ScanError(
            f"no bracket in interval {k} (pattern {pattern}): increase "
            "samples or check (f4)/(f5)")
    return result


def _nonlocal_residual(grid: Grid, f: NonlocalNonlinearity, u: Field,
                       lp_norm: float) -> float:
    return float(np.max(np.abs(apply_neg_laplacian(grid, u) - f.eval(u, lp_norm))))


def _residual_floor(grid: Grid, f: NonlocalNonlinearity, res: AuxSolveResult,
                    alpha: float) -> float:
    """Float64 floor of the certifiable nonlocal residual at a fixed point.

    Composed of the frozen-problem residual, the evaluation noise of the
    discrete operator, and the alpha-sensitivity of f times the smallest
    resolvable fixed-point defect: steep families amplify a machine-level
    |mass - alpha| into a visible residual, which no bisection can undercut.
    """
    d = 1e-7 * max(abs(alpha), 1.0)
    lip = float(np.max(np.abs(
        np.asarray(f.eval(res.u, alpha + d))
        - np.asarray(f.eval(res.u, alpha - d))))) / (2.0 * d)
    eps = np.finfo(float).eps
    defect = max(abs(res.lp_norm - alpha), 8.0 * eps * max(1.0, abs(alpha)))
    noise = 8.0 * eps * float(np.max(res.u)) * sum(1.0 / h**2 for h in grid.h)
    return 10.0 * (res.residual + noise + lip * defect)


def bracket_and_bisect(
    scan: ScanResult,
    evaluator: PkEvaluator,
    tol_fp: float = 1e-8,
    nonlocal_tol: Optional[float] = None,
    max_bisect: int = 200,
) -> List[FixedPoint]:
    """Refine every sign-change bracket of g = P - alpha to a fixed point.

    ``tol_fp`` is relative to the interval length.  Bisection first shrinks
    the bracket to that width, then keeps halving until the fixed-point
    defect |P(alpha) - alpha| is below the same tolerance and the nonlocal
    residual of the final re-solve is within ``nonlocal_tol`` (default
    10x the solver tolerance).  Touch points without a sign change are
    logged, not counted.
    """
    k = scan.k
    lo_k, hi_k = evaluator.f.interval_bounds(k)
    tol_abs = tol_fp * (hi_k - lo_k)
    if nonlocal_tol is None:
        nonlocal_tol = 10.0 * evaluator.opts.newton_tol

    g = [s.g for s in scan.samples]
    alphas = [s.alpha for s in scan.samples]
    for j, v in enumerate(g):
        if v == 0.0:
            log.warning("tangential touch of the diagonal at alpha = %r "
                        "(not counted as a crossing)", alphas[j])

    brackets = [(alphas[j], alphas[j + 1], g[j], g[j + 1])
                for j in range(len(g) - 1) if g[j] * g[j + 1] < 0.0]
    if len(brackets) < 2:
        raise ScanError(
            f"interval {k}: {len(brackets)} sign-change bracket(s) found, "
            "need at least two: increase samples or check (f4)/(f5)")

    refine_opts = replace(
        evaluator.opts,
        newton_tol=max(evaluator.opts.newton_tol * 1e-3, 1e-13))
    final_evaluator = PkEvaluator(evaluator.grid, evaluator.eig, evaluator.f,
                                  refine_opts)

    points: List[FixedPoint] = []
    for a_lo, a_hi, g_lo, g_hi in brackets:
        crossing = "down" if g_lo > 0 else "up"
        mid = 0.5 * (a_lo + a_hi)
        best: Optional[Tuple[float, PkSample, AuxSolveResult]] = None
        for _ in range(max_bisect):
            mid = 0.5 * (a_lo + a_hi)
            sample, res = final_evaluator.evaluate(k, mid)
            g_mid = sample.g
            if g_mid == 0.0 or g_lo * g_mid < 0.0:
                a_hi, g_hi = mid, g_mid
            else:
                a_lo, g_lo = mid, g_mid
            if abs(g_mid) <= tol_abs and a_hi - a_lo <= tol_abs:
                nres = _nonlocal_residual(evaluator.grid, evaluator.f,
                                          res.u, sample.pk)
                best = (nres, sample, res)
                if nres <= nonlocal_tol:
                    break
            if a_hi - a_lo <= 8 * np.finfo(float).eps * max(1.0, abs(mid)):
                break
        if best is None:
            raise ScanError(
                f"interval {k}: could not certify the crossing in "
                f"[{a_lo!r}, {a_hi!r}]")
        nres, sample, res = best
        if nres > nonlocal_tol:
            # the bracket is exhausted at float resolution: accept only if the
            # residual sits at its measured noise floor
            floor_nres = _residual_floor(evaluator.grid, evaluator.f, res,
                                         sample.alpha)
            if nres > floor_nres:
                raise ScanError(
                    f"interval {k}: could not certify the crossing in "
                    f"[{a_lo!r}, {a_hi!r}] (residual {nres:.3e}, "
                    f"floor {floor_nres:.3e})")
        points.append(FixedPoint(
            k=k,
            alpha_star=sample.alpha,
            u=res.u,
            lp_norm=sample.pk,
            nonlocal_residual=nres,
            bracket=(a_lo, a_hi),
            crossing=crossing,
        ))
    points.sort(key=lambda fp: fp.alpha_star)
    return points


def assemble_bundle(fixed_points: List[FixedPoint], f: NonlocalNonlinearity,
                    tol_fp: float = 1e-8) -> SolutionBundle:
    """Keep the extreme pair per interval and certify the strict norm ordering."""
    by_k: Dict[int, List[FixedPoint]] = {}
    for fp in fixed_points:
        by_k.setdefault(fp.k, []).append(fp)

    chosen: List[FixedPoint] = []
    for k in sorted(by_k):
        lo_k, hi_k = f.interval_bounds(k)
        merge_tol = tol_fp * (hi_k - lo_k)
        pts = sorted(by_k[k], key=lambda fp: fp.alpha_star)
        distinct: List[FixedPoint] = []
        for fp in pts:
            if distinct and fp.alpha_star - distinct[-1].alpha_star <= merge_tol:
                continue  # duplicate crossing within tolerance
            distinct.append(fp)
        if len(distinct) < 2:
            raise OrderingError(
                f"interval {k}: fewer than two distinct fixed points "
                f"({len(distinct)} after merging duplicates)")
        chosen.extend([distinct[0], distinct[-1]])

    t = (0.0,) + f.singular_points
    previous = 0.0
    label_prev = "0"
    for fp in chosen:
        lo_k, hi_k = t[fp.k - 1], t[fp.k]
        if not previous < fp.lp_norm:
            raise OrderingError(
                f"ordering violated: {label_prev} = {previous!r} not below "
                f"norm {fp.lp_norm!r} of the fixed point at alpha = "
                f"{fp.alpha_star!r}")
        if not lo_k < fp.lp_norm < hi_k:
            raise OrderingError(
                f"norm {fp.lp_norm!r} of the fixed point at alpha = "
                f"{fp.alpha_star!r} escapes its interval ({lo_k!r}, {hi_k!r})")
        previous = fp.lp_norm
        label_prev = f"norm at alpha = {fp.alpha_star!r}"
    return SolutionBundle(fixed_points=chosen, ordering_certificate=True)
