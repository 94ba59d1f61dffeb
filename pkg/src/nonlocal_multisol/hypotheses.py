"""Numerical screening of the structural hypotheses on the reaction term.

Each check samples its inequality on deterministic grids and reports one of
three statuses:

  * "certified-on-samples": the inequality held with a positive margin on
    every sample (a screen, not a proof),
  * "violated": a concrete witness point is attached,
  * "not-checkable": a required ingredient (e.g. a slope limit) is missing.

The six checks cover: positivity and zero locus of f (f0), the reaction
bound at the singular points (f1), monotonicity of the slope function (f2),
the slope limit staying above the principal eigenvalue (f3), the mass floor
beating the last singular point (f4), and the technical peak bound that
forces the norm map below the diagonal (f5).

Limits are verified at finite approach distances only and strict
inequalities are certified with an explicit positive margin, never with
exact equality.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .nonlinearity import NonlocalNonlinearity, max_on_interval

__all__ = [
    "CERTIFIED",
    "VIOLATED",
    "NOT_CHECKABLE",
    "CheckResult",
    "HypothesisReport",
    "chebyshev_grid",
    "default_alpha_grid",
    "check_f0",
    "check_f1",
    "check_f2",
    "check_f3",
    "check_f4",
    "check_f5",
    "certify",
]

CERTIFIED = "certified-on-samples"
VIOLATED = "violated"
NOT_CHECKABLE = "not-checkable"

_MARGIN_CAP = 1e300


@dataclass
class CheckResult:
    hypothesis: str
    status: str
    margin: float
    witness: Optional[dict]
    samples: int
    note: Optional[str] = None

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def as_dict(self) -> dict:
        out = {
            "hypothesis": self.hypothesis,
            "status": self.status,
            "margin": self.margin,
            "samples": self.samples,
        }
        if self.witness is not None:
            out["witness"] = self.witness
        if self.note is not None:
            out["note"] = self.note
        return out


@dataclass
class HypothesisReport:
    results: List[CheckResult] = field(default_factory=list)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, name: str) -> CheckResult:
        for r in self.results:
            if r.hypothesis == name:
                return r
        raise KeyError(name)

    def all_certified(self) -> bool:
        return all(r.certified for r in self.results)

    def violated(self) -> List[str]:
        return [r.hypothesis for r in self.results if r.status == VIOLATED]

    def as_dict(self) -> dict:
        return {
            "schema": 1,
            "all_certified": self.all_certified(),
            "results": [r.as_dict() for r in self.results],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, **kw)


def chebyshev_grid(lo: float, hi: float, m: int) -> np.ndarray:
    """m Chebyshev nodes on (lo, hi), clustered toward both endpoints."""
    j = np.arange(1, m + 1)
    x = np.cos((2 * j - 1) * np.pi / (2 * m))
    return np.sort(0.5 * (lo + hi) + 0.5 * (hi - lo) * x)


def default_alpha_grid(f: NonlocalNonlinearity, k: int, m: int = 64,
                       delta_rel: float = 1e-4) -> np.ndarray:
    """Per-interval alpha samples avoiding the singular endpoints."""
    lo, hi = f.interval_bounds(k)
    delta = delta_rel * (hi - lo)
    return chebyshev_grid(lo + delta, hi - delta, m)


def _fin(x: float) -> float:
    return float(np.clip(x, -_MARGIN_CAP, _MARGIN_CAP))


# -- (f0): positivity, zero locus, bounded zero loci ---------------------------


def check_f0(f: NonlocalNonlinearity, alpha_grid: np.ndarray,
             s_samples: int = 256) -> CheckResult:
    """f(., alpha) positive on (0, s_alpha), zero at s_alpha, s_alpha bounded."""
    margin = math.inf
    count = 0
    for alpha in alpha_grid:
        sa = float(f.zero_locus(float(alpha)))
        if not (np.isfinite(sa) and sa > 0.0):
            return CheckResult("f0", VIOLATED, _fin(-math.inf),
                               {"alpha": float(alpha), "s_alpha": sa}, count)
        s = sa * np.arange(1, s_samples + 1) / (s_samples + 1)
        fv = np.asarray(f.eval(s, float(alpha)), dtype=float)
        count += s_samples
        if not np.all(np.isfinite(fv)):
            j = int(np.argmin(np.isfinite(fv)))
            return CheckResult("f0", VIOLATED, _fin(-math.inf),
                               {"alpha": float(alpha), "s": float(s[j]),
                                "f": float(fv[j])}, count)
        j = int(np.argmin(fv))
        if fv[j] <= 0.0:
            return CheckResult("f0", VIOLATED, _fin(float(fv[j])),
                               {"alpha": float(alpha), "s": float(s[j]),
                                "f": float(fv[j])}, count)
        margin = min(margin, float(fv[j]))
        zero_tol = 1e-10 * max(1.0, float(np.max(fv)))
        f_at_sa = float(f.eval(np.float64(sa), float(alpha)))
        if abs(f_at_sa) > zero_tol:
            return CheckResult("f0", VIOLATED, _fin(-abs(f_at_sa)),
                               {"alpha": float(alpha), "s": sa,
                                "f": f_at_sa, "kind": "zero-locus"}, count)
    return CheckResult("f0", CERTIFIED, _fin(margin), None, count)


# -- (f1): behaviour approaching the singular points ----------------------------


def _approach_deltas(delta_min: float, levels: int = 7) -> np.ndarray:
    # geometric ladder delta_min * 2^j descending to delta_min
    return delta_min * 2.0 ** np.arange(levels - 1, -1, -1)


def check_f1(f: NonlocalNonlinearity, k: int, lambda1: float,
             delta_min: Optional[float] = None, tol_lim: float = 1e-6,
             s_fractions=(0.01, 0.05, 0.1, 0.25, 0.5)) -> CheckResult:
    """f(s, alpha) must reach [lambda1, inf] as alpha approaches t_k.

    Verified at a geometric ladder of finite approach distances down to
    delta_min on each admissible side of t_k; margin is the worst
    closest-approach value relative to lambda1, minus one.
    """
    lo, hi = f.interval_bounds(k)
    if delta_min is None:
        delta_min = 1e-4 * (hi - lo)
    deltas = _approach_deltas(delta_min)
    t_k = f.singular_points[k - 1]

    sides = [t_k - deltas]            # approach from inside interval k
    if k < f.K:
        sides.append(t_k + deltas)    # approach from inside interval k+1

    margin = math.inf
    count = 0
    note = None
    for alphas in sides:
        sa_min = min(float(f.zero_locus(float(a))) for a in alphas)
        svals = [fr * sa_min * 0.99 for fr in s_fractions]
        for s in svals:
            vals = np.array([float(f.eval(np.float64(s), float(a))) for a in alphas])
            count += len(alphas)
            closest = vals[-1]
            m = closest / lambda1 - 1.0
            if m < -tol_lim:
                return CheckResult(
                    "f1", VIOLATED, _fin(m),
                    {"alpha": float(alphas[-1]), "s": float(s),
                     "f": float(closest), "lambda1": lambda1}, count)
            margin = min(margin, m)
            trending = np.all(np.diff(vals) >= -1e-9 * np.abs(vals[:-1]))
            if not (trending or closest >= lambda1):
                note = "non-monotone approach"
    if margin < 1e-6:
        note = ((note + "; ") if note else "") + "near-equality with lambda1"
    return CheckResult("f1", CERTIFIED, _fin(margin), None, count, note=note)


# -- (f2): slope function decreasing --------------------------------------------


def check_f2(f: NonlocalNonlinearity, alpha_grid: np.ndarray,
             s_samples: int = 256) -> CheckResult:
    """psi(s) = f(s, alpha)/s strictly decreasing across the s-grid."""
    margin = math.inf
    count = 0
    for alpha in alpha_grid:
        sa = float(f.zero_locus(float(alpha)))
        s = sa * np.arange(1, s_samples + 1) / (s_samples + 1)
        psi = np.asarray(f.eval(s, float(alpha)), dtype=float) / s
        diffs = psi[:-1] - psi[1:]
        count += s_samples
        j = int(np.argmin(diffs))
        if diffs[j] <= 0.0:
            return CheckResult(
                "f2", VIOLATED, _fin(float(diffs[j])),
                {"alpha": float(alpha), "s_low": float(s[j]),
                 "s_high": float(s[j + 1]), "psi_low": float(psi[j]),
                 "psi_high": float(psi[j + 1])}, count)
        margin = min(margin, float(diffs[j]))
    return CheckResult("f2", CERTIFIED, _fin(margin), None, count)


# -- (f3): slope limit above lambda1 --------------------------------------------


def check_f3(f: NonlocalNonlinearity, alpha_grid: np.ndarray,
             lambda1: float) -> CheckResult:
    """gamma_alpha > lambda1 with a positive margin across the samples."""
    gammas = []
    for alpha in alpha_grid:
        g = float(f.gamma(float(alpha)))
        if math.isnan(g):
            return CheckResult("f3", NOT_CHECKABLE, 0.0,
                               {"alpha": float(alpha)}, len(gammas))
        gammas.append(min(g, _MARGIN_CAP))
    j = int(np.argmin(gammas))
    margin = gammas[j] - lambda1
    if margin <= 1e-12 * max(1.0, lambda1):
        return CheckResult("f3", VIOLATED, _fin(margin),
                           {"alpha": float(alpha_grid[j]),
                            "gamma": gammas[j], "lambda1": lambda1},
                           len(gammas))
    return CheckResult("f3", CERTIFIED, _fin(margin), None, len(gammas))


# -- (f4): mass floor above the last singular point ------------------------------


def check_f4(f: NonlocalNonlinearity, alpha_grids: List[np.ndarray],
             p: float, int_e1_p: float) -> CheckResult:
    """t_K < (inf s_alpha)^p * int e1^p over all sampled alpha."""
    inf_sa = math.inf
    arg = None
    count = 0
    for grid_k in alpha_grids:
        for alpha in grid_k:
            sa = float(f.zero_locus(float(alpha)))
            count += 1
            if sa < inf_sa:
                inf_sa, arg = sa, float(alpha)
    t_K = f.singular_points[-1]
    bound = inf_sa**p * int_e1_p
    margin = bound - t_K
    if margin <= 1e-12 * max(1.0, t_K):
        return CheckResult("f4", VIOLATED, _fin(margin),
                           {"alpha": arg, "inf_s_alpha": inf_sa,
                            "floor": bound, "t_K": t_K}, count)
    return CheckResult("f4", CERTIFIED, _fin(margin), None, count)


# -- (f5): peak bound forcing the norm map below the diagonal --------------------


def _f5_value(f: NonlocalNonlinearity, alpha: float, p: float) -> float:
    sa = float(f.zero_locus(alpha))
    _, fmax = max_on_interval(lambda s: float(f.eval(np.float64(s), alpha)), 0.0, sa)
    return fmax * sa ** (p - 1.0) / alpha


def check_f5(f: NonlocalNonlinearity, alpha_grids: List[np.ndarray], p: float,
             lambda1: float, C1: float, measure: float) -> CheckResult:
    """inf over alpha of max_s f(s,alpha) * s_alpha^(p-1)/alpha below the
    threshold sqrt(lambda1)/(C1 sqrt(|Omega|)), for every interval."""
    threshold = math.sqrt(lambda1) / (C1 * math.sqrt(measure))
    margin = math.inf
    count = 0
    worst = None
    for k, grid_k in enumerate(alpha_grids, start=1):
        best = math.inf
        arg = None
        for alpha in grid_k:
            v = _f5_value(f, float(alpha), p)
            count += 1
            if v < best:
                best, arg = v, float(alpha)
        m = threshold - best
        if m < margin:
            margin = m
            worst = {"interval": k, "alpha": arg, "value": best,
                     "threshold": threshold}
    if margin <= 1e-12 * max(1.0, threshold):
        return CheckResult("f5", VIOLATED, _fin(margin), worst, count)
    return CheckResult("f5", CERTIFIED, _fin(margin), None, count)


# -- aggregation -----------------------------------------------------------------


def certify(
    f: NonlocalNonlinearity,
    *,
    lambda1: float,
    C1: float,
    measure: float,
    int_e1_p: float,
    p: float,
    alpha_per_interval: int = 64,
    s_samples: int = 256,
    delta_rel: float = 1e-4,
    tol_lim: float = 1e-6,
) -> HypothesisReport:
    """Run all six checks on default per-interval grids and merge the report."""
    grids = [default_alpha_grid(f, k, alpha_per_interval, delta_rel)
             for k in range(1, f.K + 1)]
    all_alphas = np.concatenate(grids)

    f1_results = [check_f1(f, k, lambda1, tol_lim=tol_lim)
                  for k in range(1, f.K + 1)]
    f1_bad = [r for r in f1_results if r.status != CERTIFIED]
    if f1_bad:
        f1_merged = f1_bad[0]
    else:
        worst = min(f1_results, key=lambda r: r.margin)
        f1_merged = CheckResult("f1", CERTIFIED, worst.margin, None,
                                sum(r.samples for r in f1_results),
                                note=worst.note)

    report = HypothesisReport([
        check_f0(f, all_alphas, s_samples),
        f1_merged,
        check_f2(f, all_alphas, s_samples),
        check_f3(f, all_alphas, lambda1),
        check_f4(f, grids, p, int_e1_p),
        check_f5(f, grids, p, lambda1, C1, measure),
    ])
    return report
