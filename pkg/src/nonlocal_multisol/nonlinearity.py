"""Nonlocal reaction terms f(s, alpha) and their truncations.

The reaction term f depends on s (the unknown's pointwise value) and on a
scalar alpha standing in for the L^p mass of the solution.  f may blow up
as alpha approaches prescribed singular points t_1 < ... < t_K, which
partition the alpha axis into K working intervals.

For alpha frozen inside an interval, the solver works with the truncation

    fhat(s) = f(0, alpha)   for s <= 0,
              f(s, alpha)   for 0 < s <= s_alpha,
              0             for s_alpha < s,

where s_alpha is the positive zero of f(. , alpha).  The slope function
psi(s) = f(s, alpha)/s is decreasing under the certified hypotheses and its
inverse supplies sub-solution barriers.

Three constructive families are provided, all of the shape

    f(s, t) = s * L((S(t) - s) / |sin(pi t)|),

with L increasing and vanishing on the negative half line: a generic
constructor taking S and L, a power-law family L(w) = beta * w^n with all
admissible constants derived from the grid data, and a rational family
L(w) = C*w/(D-w) extended linearly above the working window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate

__all__ = [
    "NonlinearityError",
    "NonlocalNonlinearity",
    "TruncatedNonlinearity",
    "FamilyConstants",
    "truncate",
    "make_family_a",
    "make_family_b",
    "make_family_c",
    "custom_nonlinearity",
    "scale_nonlinearity",
    "max_on_interval",
]

# Cap applied to L outputs: keeps evaluations finite in the astronomically
# degenerate regime (alpha within ~1e-8 of a singular point) without
# affecting any value the pipeline certifies.
_L_CAP = 1e300


class NonlinearityError(ValueError):
    """Invalid alpha, out-of-range argument, or violated family precondition."""


@dataclass(frozen=True)
class FamilyConstants:
    """Constants fixed at family construction time."""

    p: float
    K: int
    M: float
    U: float
    S_bar: float
    S_under: float
    A: Optional[float] = None
    B: Optional[float] = None
    C: Optional[float] = None
    D: Optional[float] = None
    n: Optional[int] = None
    beta: Optional[float] = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


class NonlocalNonlinearity:
    """Evaluable reaction term with its singular points and zero locus.

    ``eval(s, alpha)`` must accept numpy arrays in ``s``.  ``gamma`` returns
    the limit of f(s, alpha)/s as s -> 0+, possibly ``inf``.
    ``breakpoints(alpha)`` lists interior kinks of s -> f(s, alpha) on
    (0, s_alpha); quadrature splits panels there.
    """

    def __init__(
        self,
        eval: Callable[[np.ndarray, float], np.ndarray],
        singular_points: Sequence[float],
        zero_locus: Callable[[float], float],
        gamma: Callable[[float], float],
        derivative_s: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
        breakpoints: Optional[Callable[[float], list]] = None,
        constants: Optional[FamilyConstants] = None,
        name: str = "custom",
        primitive_rule: Optional[Tuple[int, int]] = None,
    ):
        pts = tuple(float(t) for t in singular_points)
        if not pts or any(b <= a for a, b in zip((0.0,) + pts, pts)):
            raise NonlinearityError(
                f"singular points must be positive and strictly increasing, got {pts}"
            )
        self.eval = eval
        self.singular_points = pts
        self.zero_locus = zero_locus
        self.gamma = gamma
        self.derivative_s = derivative_s
        self.breakpoints = breakpoints or (lambda alpha: [])
        self.constants = constants
        self.name = name
        # (panels, points) for the vectorized primitive; a polynomial family
        # can be integrated exactly with a single matched-order panel.
        self.primitive_rule = primitive_rule or _DEFAULT_RULE

    @property
    def K(self) -> int:
        return len(self.singular_points)

    def interval_bounds(self, k: int) -> Tuple[float, float]:
        """Endpoints (t_{k-1}, t_k) of working interval k (1-based)."""
        if not 1 <= k <= self.K:
            raise NonlinearityError(f"interval index {k} outside 1..{self.K}")
        t = (0.0,) + self.singular_points
        return t[k - 1], t[k]

    def interval_index(self, alpha: float) -> int:
        """Index k with t_{k-1} < alpha < t_k, or raise."""
        t = (0.0,) + self.singular_points
        for k in range(1, self.K + 1):
            if t[k - 1] < alpha < t[k]:
                return k
        intervals = ", ".join(f"({t[k-1]:g}, {t[k]:g})" for k in range(1, self.K + 1))
        raise NonlinearityError(
            f"alpha = {alpha!r} is at a singular point or outside the working "
            f"intervals {intervals}"
        )

    def slope(self, s, alpha: float):
        """d f/d s, analytic when supplied, else central finite differences."""
        if self.derivative_s is not None:
            return self.derivative_s(s, alpha)
        sa = self.zero_locus(alpha)
        step = 1e-7 * max(1.0, sa)
        return (self.eval(np.asarray(s) + step, alpha) - self.eval(np.asarray(s) - step, alpha)) / (2 * step)


def scale_nonlinearity(f: NonlocalNonlinearity, factor: float) -> NonlocalNonlinearity:
    """Multiply a reaction term by a positive constant (same zero locus)."""
    if factor <= 0:
        raise NonlinearityError("scale factor must be positive")
    return NonlocalNonlinearity(
        eval=lambda s, a: factor * f.eval(s, a),
        singular_points=f.singular_points,
        zero_locus=f.zero_locus,
        gamma=lambda a: factor * f.gamma(a),
        derivative_s=None if f.derivative_s is None
        else (lambda s, a: factor * f.derivative_s(s, a)),
        breakpoints=f.breakpoints,
        constants=f.constants,
        name=f"{f.name}*{factor:g}",
        primitive_rule=f.primitive_rule,
    )


# Gauss-Legendre reference rules on [0, 1], used by the vectorized primitive.
_GL_RULES: dict = {}
_DEFAULT_RULE = (8, 24)  # (panels, points per panel)


def _gl_rule(order: int):
    rule = _GL_RULES.get(order)
    if rule is None:
        x, w = np.polynomial.legendre.leggauss(order)
        rule = _GL_RULES[order] = (0.5 * (x + 1.0), 0.5 * w)
    return rule


def _composite_gl(fun, lo: float, hi: np.ndarray, panels: int, order: int) -> np.ndarray:
    """Integral of fun from scalar lo to each entry of hi (hi >= lo)."""
    gx, gw = _gl_rule(order)
    width = np.asarray(hi, float) - lo
    # panels x points reference nodes on [0, 1]
    offs = (np.arange(panels)[:, None] + gx[None, :]) / panels
    nodes = lo + width[..., None, None] * offs
    vals = fun(nodes)
    return (vals @ gw).sum(axis=-1) * width / panels


class TruncatedNonlinearity:
    """f frozen at one alpha, truncated below 0 and above the zero locus."""

    def __init__(self, base: NonlocalNonlinearity, alpha: float, k: int,
                 s_alpha: float, gamma: float):
        self.base = base
        self.alpha = float(alpha)
        self.k = k
        self.s_alpha = float(s_alpha)
        self.gamma = float(gamma)
        self.f_zero = float(base.eval(np.float64(0.0), alpha))
        self._pieces = None
        self._piece_cum = None

    # -- pointwise evaluation ------------------------------------------------

    def value(self, s):
        """The truncated reaction fhat(s); accepts scalars or arrays."""
        s_arr = np.asarray(s, dtype=float)
        inner = self.base.eval(np.clip(s_arr, 0.0, self.s_alpha), self.alpha)
        out = np.where(s_arr <= 0.0, self.f_zero,
                       np.where(s_arr <= self.s_alpha, inner, 0.0))
        return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out

    def slope(self, s):
        """One-sided d fhat/d s: 0 on the constant pieces, df/ds inside."""
        s_arr = np.asarray(s, dtype=float)
        inner = self.base.slope(np.clip(s_arr, 0.0, self.s_alpha), self.alpha)
        out = np.where((s_arr > 0.0) & (s_arr <= self.s_alpha), inner, 0.0)
        return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out

    # -- primitive -----------------------------------------------------------

    def primitive(self, s: float) -> float:
        """Fhat(s) = integral of fhat from 0 to s, adaptive quadrature.

        Relative tolerance 1e-10; constant for s >= s_alpha, linear with
        slope f(0, alpha) for s <= 0.
        """
        s = float(s)
        if s <= 0.0:
            return s * self.f_zero
        s_eff = min(s, self.s_alpha)
        pts = [b for b in self.base.breakpoints(self.alpha) if 0.0 < b < s_eff]
        val, _ = scipy.integrate.quad(
            self.value, 0.0, s_eff,
            points=pts or None, epsabs=1e-13, epsrel=1e-10, limit=200,
        )
        return float(val)

    def _piece_data(self):
        if self._pieces is None:
            panels, order = self.base.primitive_rule
            inner = sorted(b for b in self.base.breakpoints(self.alpha)
                           if 0.0 < b < self.s_alpha)
            pieces = [0.0] + inner + [self.s_alpha]
            full = [float(_composite_gl(lambda t: self.base.eval(t, self.alpha),
                                        lo, np.asarray([hi]), panels, order)[0])
                    for lo, hi in zip(pieces[:-1], pieces[1:])]
            self._pieces = pieces
            self._piece_cum = np.concatenate([[0.0], np.cumsum(full)])
        return self._pieces, self._piece_cum

    def primitive_many(self, s: np.ndarray) -> np.ndarray:
        """Vectorized Fhat over a field of values (composite Gauss-Legendre)."""
        s_arr = np.asarray(s, dtype=float)
        panels, order = self.base.primitive_rule
        pieces, cum = self._piece_data()
        s_eff = np.clip(s_arr, 0.0, self.s_alpha)
        out = np.zeros_like(s_eff)
        for j, (lo, hi) in enumerate(zip(pieces[:-1], pieces[1:])):
            mask = (s_eff > lo) & (s_eff <= hi)
            if np.any(mask):
                out[mask] = cum[j] + _composite_gl(
                    lambda t: self.base.eval(t, self.alpha), lo, s_eff[mask],
                    panels, order)
        out = np.where(s_arr <= 0.0, s_arr * self.f_zero, out)
        out = np.where(s_arr >= self.s_alpha, cum[-1], out)
        return out

    def primitive_delta(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Fhat(v) - Fhat(u) elementwise, integrated over the segments.

        Evaluating the difference directly keeps it accurate even where the
        absolute primitive is astronomically large (degenerate alpha), where
        Fhat(v) - Fhat(u) as a float subtraction would be pure roundoff.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        sign = np.where(v >= u, 1.0, -1.0)
        a = np.minimum(u, v)
        b = np.maximum(u, v)
        # constant piece below zero contributes f_zero per unit length
        out = self.f_zero * (np.minimum(b, 0.0) - np.minimum(a, 0.0))
        pieces, _ = self._piece_data()
        panels, order = self.base.primitive_rule
        gx, gw = _gl_rule(order)
        offs = (np.arange(panels)[:, None] + gx[None, :]) / panels
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            sa = np.clip(a, lo, hi)
            width = np.clip(b, lo, hi) - sa
            nodes = sa[..., None, None] + width[..., None, None] * offs
            vals = self.base.eval(nodes, self.alpha)
            out += (vals @ gw).sum(axis=-1) * width / panels
        return sign * out

    # -- slope function and its inverse ---------------------------------------

    def psi(self, s: float) -> float:
        """psi(s) = f(s, alpha)/s on (0, s_alpha)."""
        s = float(s)
        if not 0.0 < s < self.s_alpha:
            raise NonlinearityError(
                f"psi argument {s!r} outside (0, {self.s_alpha!r})")
        return self.value(s) / s

    def _psi_closed(self, s: float) -> float:
        # psi extended by continuity to s = s_alpha (value 0); internal use.
        return self.value(s) / s

    def psi_inverse(self, y: float, tol: float = 1e-12, max_iter: int = 400) -> float:
        """Invert the decreasing slope function by bisection.

        Returns s in (0, s_alpha) with |psi(s) - y| <= tol * max(1, y).
        Accepts any positive finite y when gamma is infinite.
        """
        y = float(y)
        if not y > 0.0 or not np.isfinite(y):
            raise NonlinearityError(f"psi_inverse argument {y!r} must be a positive finite number")
        if np.isfinite(self.gamma) and y >= self.gamma:
            raise NonlinearityError(
                f"psi_inverse argument {y!r} is not below gamma = {self.gamma!r}")
        ftol = tol * max(1.0, y)
        hi = self.s_alpha
        lo = 0.5 * self.s_alpha
        for _ in range(2000):
            if self._psi_closed(lo) > y:
                break
            hi = lo
            lo *= 0.5
            if lo == 0.0:
                raise NonlinearityError(
                    f"psi never exceeds {y!r} on (0, {self.s_alpha!r}); "
                    "gamma may be overestimated")
        best = lo
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            val = self._psi_closed(mid)
            best = mid
            # tight in the function value AND in s (the value criterion alone
            # is loose where psi flattens out near the zero locus)
            if abs(val - y) <= ftol and hi - lo <= 1e-12 * self.s_alpha:
                return mid
            if val > y:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(hi, 1e-300):
                break
        if abs(self._psi_closed(best) - y) <= 1e-9 * max(1.0, y):
            return best
        raise RuntimeError(
            f"psi_inverse bisection stalled at s = {best!r} "
            f"(residual {self._psi_closed(best) - y:.3e})")


def truncate(f: NonlocalNonlinearity, alpha: float) -> TruncatedNonlinearity:
    """Freeze the nonlocal variable at alpha and truncate outside (0, s_alpha]."""
    k = f.interval_index(alpha)
    s_alpha = float(f.zero_locus(alpha))
    if not (np.isfinite(s_alpha) and s_alpha > 0.0):
        raise NonlinearityError(f"zero locus at alpha = {alpha!r} is {s_alpha!r}")
    return TruncatedNonlinearity(f, alpha, k, s_alpha, float(f.gamma(alpha)))


# -- inner maximization helper -------------------------------------------------

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def max_on_interval(fun, lo: float, hi: float, n_seed: int = 65,
                    tol: float = 1e-10) -> Tuple[float, float]:
    """Maximum of fun on [lo, hi]: grid seeding plus golden-section refinement.

    Returns (argmax, max).  Reliable for unimodal-after-seeding profiles; the
    grid stage catches the global basin.
    """
    xs = np.linspace(lo, hi, n_seed)
    vals = np.array([fun(x) for x in xs])
    j = int(np.argmax(vals))
    a = xs[max(j - 1, 0)]
    b = xs[min(j + 1, n_seed - 1)]
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol * max(1.0, abs(hi - lo)) * 1e-2:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(d)
    x_best = 0.5 * (a + b)
    f_best = fun(x_best)
    if vals[j] > f_best:
        x_best, f_best = xs[j], vals[j]
    return float(x_best), float(f_best)


# -- family (a): generic S and L ------------------------------------------------


def _sin_dist(alpha: float) -> float:
    """|sin(pi alpha)|, the distance factor degenerating at integers."""
    return abs(math.sin(math.pi * alpha))


def make_family_a(
    S: Callable[[float], float],
    L: Callable[[np.ndarray], np.ndarray],
    *,
    K: int,
    p: float,
    lambda1: float,
    C1: float,
    measure: float,
    int_e1_p: float,
    U: Optional[float] = None,
    dL: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    L_breaks: Sequence[float] = (),
    constants: Optional[FamilyConstants] = None,
    name: str = "family-a",
    n_check: int = 1025,
    primitive_rule: Optional[Tuple[int, int]] = None,
) -> Tuple[NonlocalNonlinearity, FamilyConstants]:
    """Assemble f(s,t) = s * L((S(t)-s)/|sin(pi t)|) with admissibility checks.

    S must map [0, K] into (U, inf) and L must vanish on the negative axis,
    increase on (0, inf), exceed lambda1 at the minimum of S, and satisfy the
    peak bound max s*L(S_bar - s) < M / S_bar^(p-1).  Violations raise with a
    witness.  Singular points are the integers 1..K.
    """
    if K < 1 or int(K) != K:
        raise NonlinearityError(f"K must be a positive integer, got {K}")
    if p < 1:
        raise NonlinearityError(f"p must be >= 1, got {p}")
    M = math.sqrt(lambda1) / (2.0 * C1 * math.sqrt(measure))
    U_min = (K / int_e1_p) ** (1.0 / p)
    if U is None:
        U = U_min
    elif U < U_min * (1.0 - 1e-12):
        raise NonlinearityError(
            f"U = {U!r} below the admissible floor (K/int e1^p)^(1/p) = {U_min!r}")

    ts = np.linspace(0.0, K, n_check)
    Svals = np.array([S(t) for t in ts])
    if not np.all(np.isfinite(Svals)):
        raise NonlinearityError("S takes non-finite values on [0, K]")
    S_bar = float(Svals.max())
    S_under = float(Svals.min())
    if S_under <= U:
        t_bad = float(ts[int(np.argmin(Svals))])
        raise NonlinearityError(
            f"S must map into (U, inf): S({t_bad:.6g}) = {S_under!r} <= U = {U!r}")

    for w in (-1.0, -1e-6, 0.0):
        if abs(float(L(np.float64(w)))) > 1e-12:
            raise NonlinearityError(f"L({w}) = {float(L(np.float64(w)))!r}, expected 0")
    wgrid = np.linspace(0.0, 3.0 * S_bar, 513)[1:]
    Lw = np.asarray(L(wgrid), dtype=float)
    if not np.all(np.diff(Lw) > 0):
        j = int(np.argmin(np.diff(Lw)))
        raise NonlinearityError(
            f"L not increasing: L({wgrid[j]:.6g}) = {Lw[j]!r} vs "
            f"L({wgrid[j+1]:.6g}) = {Lw[j+1]!r}")
    L_Sunder = float(L(np.float64(S_under)))
    if not L_Sunder > lambda1:
        raise NonlinearityError(
            f"L(min S) = {L_Sunder!r} must exceed lambda1 = {lambda1!r}")
    _, peak = max_on_interval(lambda s: s * float(L(np.float64(S_bar - s))), 0.0, S_bar)
    peak_cap = M / S_bar ** (p - 1.0)
    if not peak < peak_cap:
        raise NonlinearityError(
            f"max s*L(S_bar - s) = {peak!r} must stay below "
            f"M/S_bar^(p-1) = {peak_cap!r}")

    def f_eval(s, alpha):
        d = _sin_dist(alpha)
        w = (S(alpha) - np.asarray(s, dtype=float)) / d
        with np.errstate(over="ignore"):
            Lw = np.minimum(np.asarray(L(w), dtype=float), _L_CAP)
        return np.asarray(s, dtype=float) * Lw

    def f_gamma(alpha):
        d = _sin_dist(alpha)
        with np.errstate(over="ignore"):
            return float(min(float(L(np.float64(S(alpha) / d))), _L_CAP))

    derivative = None
    if dL is not None:
        def derivative(s, alpha):
            d = _sin_dist(alpha)
            w = (S(alpha) - np.asarray(s, dtype=float)) / d
            with np.errstate(over="ignore"):
                Lw = np.minimum(np.asarray(L(w), dtype=float), _L_CAP)
                dLw = np.minimum(np.asarray(dL(w), dtype=float), _L_CAP)
            return Lw - np.asarray(s, dtype=float) * dLw / d

    def f_breaks(alpha):
        # s locations where the argument of L crosses one of its kinks
        d = _sin_dist(alpha)
        sa = S(alpha)
        return [sa - d * wb for wb in L_breaks if 0.0 < sa - d * wb < sa]

    consts = constants or FamilyConstants(
        p=float(p), K=int(K), M=M, U=float(U), S_bar=S_bar, S_under=S_under)
    f = NonlocalNonlinearity(
        eval=f_eval,
        singular_points=[float(i) for i in range(1, K + 1)],
        zero_locus=lambda alpha: float(S(alpha)),
        gamma=f_gamma,
        derivative_s=derivative,
        breakpoints=f_breaks,
        constants=consts,
        name=name,
        primitive_rule=primitive_rule,
    )
    return f, consts


# -- family (b): power-law L ----------------------------------------------------


def make_family_b(
    K: int,
    p: float,
    lambda1: float,
    C1: float,
    measure: float,
    int_e1_p: float,
    U: Optional[float] = None,
) -> Tuple[NonlocalNonlinearity, FamilyConstants]:
    """Power-law instance L(w) = beta*w^n with canonical admissible constants.

    A = U+1; n is the smallest integer above (lambda1+1)(A+1)^p/M - 1;
    beta = (lambda1+1)/A^n; S is linear from A to B with B the midpoint of
    its admissible window.
    """
    M = math.sqrt(lambda1) / (2.0 * C1 * math.sqrt(measure))
    if U is None:
        U = (K / int_e1_p) ** (1.0 / p)
    A = U + 1.0
    n = math.floor((lambda1 + 1.0) * (A + 1.0) ** p / M - 1.0) + 1
    beta = (lambda1 + 1.0) / A**n
    B_up = min(A * ((n + 1) * M / ((lambda1 + 1.0) * (A + 1.0) ** p)) ** (1.0 / n),
               A + 1.0)
    if not B_up > A:
        raise NonlinearityError(
            f"empty admissible window for B: upper bound {B_up!r} <= A = {A!r}")
    B = 0.5 * (A + B_up)

    def S(t):
        return (B - A) / K * t + A

    def L(w):
        w = np.asarray(w, dtype=float)
        with np.errstate(over="ignore"):
            return np.where(w > 0.0, beta * np.maximum(w, 0.0) ** n, 0.0)

    def dL(w):
        w = np.asarray(w, dtype=float)
        with np.errstate(over="ignore"):
            return np.where(w > 0.0, n * beta * np.maximum(w, 0.0) ** (n - 1), 0.0)

    consts = FamilyConstants(
        p=float(p), K=int(K), M=M, U=float(U), S_bar=B, S_under=A,
        A=A, B=B, n=int(n), beta=beta)
    # s -> s*L((S-s)/d) is one polynomial piece of degree n+1 on [0, s_alpha]:
    # a single Gauss panel of matched order integrates it exactly.
    f, _ = make_family_a(
        S, L, K=K, p=p, lambda1=lambda1, C1=C1, measure=measure,
        int_e1_p=int_e1_p, U=U, dL=dL, constants=consts, name="family-b",
        primitive_rule=(1, max(8, n // 2 + 2)))
    return f, consts


# -- family (c): rational L -----------------------------------------------------


def make_family_c(
    K: int,
    p: float,
    lambda1: float,
    C1: float,
    measure: float,
    int_e1_p: float,
    U: Optional[float] = None,
    S: Optional[Callable[[float], float]] = None,
) -> Tuple[NonlocalNonlinearity, FamilyConstants]:
    """Rational instance L(w) = C*w/(D-w) on [0, B], linear and C^1 beyond B.

    B and D are placed at the thirds of the admissible window
    (A, min(A + M*A/((lambda1+1)(A+1)^p), A+1)); S defaults to the linear
    map from A to B and may be any C^1 map into [A, B].
    """
    M = math.sqrt(lambda1) / (2.0 * C1 * math.sqrt(measure))
    if U is None:
        U = (K / int_e1_p) ** (1.0 / p)
    A = U + 1.0
    W = min(A + M * A / ((lambda1 + 1.0) * (A + 1.0) ** p), A + 1.0)
    if not W > A:
        raise NonlinearityError(
            f"empty admissible window for (B, D): upper bound {W!r} <= A = {A!r}")
    B = A + (W - A) / 3.0
    D = A + 2.0 * (W - A) / 3.0
    C = (lambda1 + 1.0) * (D - A) / A

    L_B = C * B / (D - B)
    dL_B = C * D / (D - B) ** 2

    def L(w):
        w = np.asarray(w, dtype=float)
        core = C * np.clip(w, 0.0, B) / (D - np.clip(w, 0.0, B))
        with np.errstate(over="ignore"):
            ext = np.minimum(L_B + dL_B * (w - B), _L_CAP)
        return np.where(w <= 0.0, 0.0, np.where(w <= B, core, ext))

    def dL(w):
        w = np.asarray(w, dtype=float)
        core = C * D / (D - np.clip(w, 0.0, B)) ** 2
        return np.where(w <= 0.0, 0.0, np.where(w <= B, core, dL_B))

    if S is None:
        def S(t):
            return (B - A) / K * t + A
    else:
        ts = np.linspace(0.0, K, 1025)
        Sv = np.array([S(t) for t in ts])
        if Sv.min() < A - 1e-12 or Sv.max() > B + 1e-12:
            raise NonlinearityError(
                f"S must map [0, {K}] into [A, B] = [{A!r}, {B!r}]; "
                f"range found [{Sv.min()!r}, {Sv.max()!r}]")

    consts = FamilyConstants(
        p=float(p), K=int(K), M=M, U=float(U),
        S_bar=float(max(S(t) for t in np.linspace(0.0, K, 1025))),
        S_under=float(min(S(t) for t in np.linspace(0.0, K, 1025))),
        A=A, B=B, C=C, D=D)
    f, _ = make_family_a(
        S, L, K=K, p=p, lambda1=lambda1, C1=C1, measure=measure,
        int_e1_p=int_e1_p, U=U, dL=dL, L_breaks=(B,),
        constants=consts, name="family-c")
    return f, consts


# -- custom nonlinearities ------------------------------------------------------


def _bisect_root(fun, lo: float, hi: float, tol: float) -> float:
    flo, fhi = fun(lo), fun(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NonlinearityError(
            f"no sign change of f on [{lo!r}, {hi!r}] "
            f"(f = {flo!r} and {fhi!r}); supply a valid upper bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def custom_nonlinearity(
    func: Callable[[np.ndarray, float], np.ndarray],
    singular_points: Sequence[float],
    *,
    s_upper: Optional[float] = None,
    zero_locus: Optional[Callable[[float], float]] = None,
    gamma: Optional[Callable[[float], float]] = None,
    derivative_s: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
    vectorized: bool = True,
    name: str = "custom",
) -> NonlocalNonlinearity:
    """Wrap a user reaction term.

    Either an explicit zero locus or an upper bracket ``s_upper`` for locating
    it by bisection must be supplied.  The slope limit gamma is estimated from
    small-s samples when not given ("inf" when the samples diverge).
    """
    if not vectorized:
        func = np.vectorize(func, otypes=[float])
    if zero_locus is None:
        if s_upper is None:
            raise NonlinearityError("need zero_locus or an s_upper bracket")

        def zero_locus(alpha, _f=func, _up=float(s_upper)):
            return _bisect_root(lambda s: float(_f(np.float64(s), alpha)),
                                1e-12 * _up, _up, tol=1e-14 * _up)

    if gamma is None:
        def gamma(alpha, _f=func, _z=zero_locus):
            sa = _z(alpha)
            est = [float(_f(np.float64(sa * r), alpha)) / (sa * r)
                   for r in (1e-6, 1e-7, 1e-8)]
            if est[-1] > 1e12 and est[-1] > est[0]:
                return math.inf
            return est[-1]

    return NonlocalNonlinearity(
        eval=func,
        singular_points=singular_points,
        zero_locus=zero_locus,
        gamma=gamma,
        derivative_s=derivative_s,
        name=name,
    )
