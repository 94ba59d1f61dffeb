"""Discrete auxiliary problem: -Laplace u = fhat(u), u = 0 on the boundary.

The solver minimizes the energy  E(u) = 1/2 |grad u|^2 - int Fhat(u)  whose
critical points solve the truncated problem.  Primary method: damped Newton
on the residual with an energy-non-increase line search.  Fallback: the
monotone iteration  (-Laplace + lam) u_{j+1} = fhat(u_j) + lam u_j  started
from the constant supersolution s_alpha, which descends to the maximal
(= unique) positive solution whenever lam dominates the slope of fhat.

Convergence is declared on the nodewise scaled residual
    |(-Laplace u - fhat(u))_i| <= tol * max(1, |fhat(u_i)|),
the honest analogue of an absolute tolerance: where the reaction balances
second differences of size u/h^2, float64 cancellation puts an absolute
floor of roughly |fhat| * 1e-15 on any evaluation of the residual.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import (
    EigenData,
    Field,
    Grid,
    apply_neg_laplacian,
    h1_norm_sq,
    integrate,
    integrate_power,
)
from .nonlinearity import NonlinearityError, TruncatedNonlinearity, max_on_interval

__all__ = [
    "SolveOptions",
    "AuxSolveResult",
    "SolveError",
    "energy",
    "lower_barrier",
    "solve_auxiliary",
    "energy_upper_bound",
    "pk_upper_bound",
    "mass_identity",
]


@dataclass(frozen=True)
class SolveOptions:
    """Tolerances and caps for the auxiliary solver."""

    newton_tol: float = 1e-10      # scaled sup-norm residual tolerance
    max_newton: int = 60
    damping: float = 0.5           # backtracking factor
    max_halvings: int = 30
    monotone_fallback: bool = True
    lambda_shift: Optional[float] = None   # default: 2x sampled slope bound
    max_monotone: int = 20000

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.max_newton < 1 or self.max_halvings < 1 or self.max_monotone < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0.0 < self.damping < 1.0:
            raise ValueError("damping factor must lie in (0, 1)")


@dataclass
class AuxSolveResult:
    """Converged discrete solution of the truncated problem."""

    u: Field
    c_alpha: float          # energy at the solution, negative
    residual: float         # raw sup-norm of -Laplace u - fhat(u)
    residual_scaled: float  # sup of |r_i| / max(1, |fhat(u_i)|)
    noise_floor: float      # float64 evaluation floor of the residual
    iterations: int
    method_used: str        # "newton" or "monotone"
    lp_norm: float          # integral of u^p for the active p


class SolveError(RuntimeError):
    """Non-convergence or violated solution invariant; carries the trace."""

    def __init__(self, message: str, trace: Optional[List[float]] = None):
        super().__init__(message)
        self.trace = trace or []


def energy(grid: Grid, tf: TruncatedNonlinearity, u: Field) -> float:
    """Discrete energy 1/2 |grad u|^2 - int Fhat(u)."""
    return 0.5 * h1_norm_sq(grid, u) - integrate(grid, tf.primitive_many(u))


def _energy_delta(grid: Grid, tf: TruncatedNonlinearity, u: Field, v: Field):
    """E(v) - E(u) in the lumped-measure energy, plus its magnitude scale.

    The lumped energy's gradient is exactly cell_volume times the nodewise
    residual, so Newton steps and the line-search gate agree.  Both parts
    are evaluated as differences: the Dirichlet part via the symmetric
    identity |v|^2 - |u|^2 = (v-u)^T L (v+u) and the potential part via
    per-node segment integrals, so the result stays meaningful even where
    the absolute energy is so large that E(v) and E(u) are equal as floats.
    """
    grad = 0.5 * grid.cell_volume * float(
        (v - u) @ (apply_neg_laplacian(grid, v) + apply_neg_laplacian(grid, u)))
    pot = grid.cell_volume * float(np.sum(tf.primitive_delta(u, v)))
    return grad - pot, abs(grad) + abs(pot)


def lower_barrier(grid: Grid, tf: TruncatedNonlinearity, eig: EigenData) -> Field:
    """Subsolution psi^{-1}(lambda1) * e1 bounding the solution from below."""
    if not eig.lambda1 < tf.gamma:
        raise NonlinearityError(
            f"barrier undefined: gamma = {tf.gamma!r} does not exceed "
            f"lambda1 = {eig.lambda1!r}")
    return tf.psi_inverse(eig.lambda1) * eig.e1


def _eval_noise(grid: Grid, u: Field) -> float:
    # Absolute float64 floor of one residual evaluation: second differences
    # of O(|u|) nodal values divided by h^2 cannot be trusted below this.
    eps = np.finfo(float).eps
    return 8.0 * eps * float(np.max(np.abs(u), initial=0.0)) * sum(
        1.0 / h**2 for h in grid.h)


def _scaled_residual(grid: Grid, tf: TruncatedNonlinearity, u: Field):
    fh = tf.value(u)
    r = apply_neg_laplacian(grid, u) - fh
    raw = float(np.max(np.abs(r)))
    scaled = float(np.max(np.abs(r) / np.maximum(1.0, np.abs(fh))))
    return r, raw, scaled


def _converged(grid: Grid, tf: TruncatedNonlinearity, u: Field, tol: float):
    fh = tf.value(u)
    r = apply_neg_laplacian(grid, u) - fh
    noise = _eval_noise(grid, u)
    ok = bool(np.all(np.abs(r) <= tol * np.maximum(1.0, np.abs(fh)) + noise))
    raw = float(np.max(np.abs(r)))
    scaled = float(np.max(np.abs(r) / np.maximum(1.0, np.abs(fh))))
    return ok, r, raw, scaled, noise


def _default_shift(tf: TruncatedNonlinearity) -> float:
    s = np.linspace(0.0, tf.s_alpha, 64)
    return 2.0 * float(np.max(np.abs(tf.slope(s)))) + 1.0


def solve_auxiliary(
    grid: Grid,
    tf: TruncatedNonlinearity,
    eig: EigenData,
    opts: Optional[SolveOptions] = None,
    initial: Optional[Field] = None,
) -> AuxSolveResult:
    """Solve the truncated problem and verify the a-priori solution bounds.

    Default initial guess: max(barrier, 0.9 * s_alpha * e1), floored at the
    constant barrier level and clipped into (0, s_alpha]; ``initial``
    overrides it (clipped likewise).  Raises SolveError on non-convergence
    (after the fallback) or when the box 0 < u <= s_alpha or the barrier
    u >= psi^{-1}(lambda1) e1 fails.
    """
    opts = opts or SolveOptions()
    lap = grid.laplacian
    z = lower_barrier(grid, tf, eig)

    # The barrier is a certified discrete subsolution and the constant
    # s_alpha a supersolution, so the solution lives in the box [z, s_alpha]:
    # projecting the iterates into it walls off the basin of the trivial
    # solution u = 0 (also a root of the residual) and keeps Newton off the
    # flat region beyond s_alpha where the Jacobian loses the reaction term.
    floor = z
    if initial is None:
        # Flooring the guess at the constant barrier level keeps every node
        # on the stable (decreasing) branch of the reaction, which matters
        # when gamma is far beyond the stencil scale and boundary layers are
        # unresolved.
        u = np.maximum(np.maximum(z, 0.9 * tf.s_alpha * eig.e1), z.max())
    else:
        u = np.array(initial, dtype=float)
    u = np.clip(u, np.maximum(floor, np.finfo(float).tiny), tf.s_alpha)

    trace: List[float] = []
    method = "newton"
    iterations = 0
    converged = False

    # Nodes on the unstable reaction branch (slope beyond the stencil scale,
    # only possible in unresolved boundary layers) would flip the sign of
    # their Jacobian rows; clamping makes the step there a preconditioned
    # gradient push instead.  At a converged profile such nodes sit on the
    # stable branch (large negative slope), so the clamp never binds there.
    slope_cap = 0.5 * float(lap.diagonal().min())

    for _ in range(opts.max_newton):
        ok, r, raw, scaled = _converged(grid, tf, u, opts.newton_tol)[:4]
        trace.append(scaled)
        if ok:
            converged = True
            break
        iterations += 1
        accepted = False
        shift = 0.0
        for _ in range(8):  # Levenberg escalation when the direction fails
            J = lap - sp.diags(np.minimum(tf.slope(u), slope_cap) - shift)
            try:
                du = spla.splu(J.tocsc()).solve(-r)
            except RuntimeError:
                du = None
            if du is not None and np.all(np.isfinite(du)):
                step = 1.0
                for _ in range(opts.max_halvings):
                    v = np.clip(u + step * du, floor, tf.s_alpha)
                    # Armijo sufficient decrease along the projected step;
                    # the energy gradient is cell_volume times the residual.
                    # A step whose projection retains almost nothing of the
                    # intended direction is not progress (it only looks
                    # acceptable through roundoff slack), so it falls
                    # through to the shift escalation instead.
                    moved = float(np.max(np.abs(v - u)))
                    intended = step * float(np.max(np.abs(du)))
                    slope_term = grid.cell_volume * float(r @ (v - u))
                    dE, scale = _energy_delta(grid, tf, u, v)
                    slack = 1e-12 * (scale + abs(slope_term))
                    if (moved > 1e-2 * intended and moved > 0.0
                            and slope_term < 0.0 and np.isfinite(dE)
                            and dE <= 1e-4 * slope_term + slack):
                        u = v
                        accepted = True
                        break
                    step *= opts.damping
            if accepted:
                break
            # With a large enough shift the direction degenerates to the
            # (projected) negative energy gradient, which always descends.
            shift = 4.0 * shift if shift > 0.0 else 1.0 + float(
                np.max(np.abs(tf.slope(u))))
        if not accepted:
            break  # stagnation
    else:
        converged = False

    if not converged:
        converged = _converged(grid, tf, u, opts.newton_tol)[0]

    if not converged and opts.monotone_fallback:
        method = "monotone"
        lam = opts.lambda_shift if opts.lambda_shift is not None else _default_shift(tf)
        shifted = (lap + lam * sp.identity(grid.n_nodes, format="csr")).tocsc()
        lu = spla.splu(shifted)
        u = np.full(grid.n_nodes, tf.s_alpha)
        for _ in range(opts.max_monotone):
            iterations += 1
            u = lu.solve(tf.value(u) + lam * u)
            ok, r, raw, scaled = _converged(grid, tf, u, opts.newton_tol)[:4]
            trace.append(scaled)
            if ok:
                converged = True
                break

    ok, r, raw, scaled, noise = _converged(grid, tf, u, opts.newton_tol)
    if not converged:
        raise SolveError(
            f"auxiliary solve did not converge at alpha = {tf.alpha!r} "
            f"(scaled residual {scaled:.3e} after {iterations} iterations, "
            f"method {method})", trace)

    if not np.all(u > 0.0):
        raise SolveError(
            f"positivity violated at alpha = {tf.alpha!r}: min u = {u.min()!r}", trace)
    if not np.all(u <= tf.s_alpha + 1e-12):
        raise SolveError(
            f"upper box bound violated at alpha = {tf.alpha!r}: "
            f"max u - s_alpha = {u.max() - tf.s_alpha!r}", trace)
    barrier_margin = float(np.min(u - z))
    if barrier_margin < -1e-8 * tf.s_alpha:
        raise SolveError(
            f"barrier violated at alpha = {tf.alpha!r}: min(u - z) = "
            f"{barrier_margin!r} (hypothesis or discretization failure)", trace)

    c_alpha = energy(grid, tf, u)
    if not c_alpha < 0.0:
        raise SolveError(
            f"energy at the solution must be negative, got {c_alpha!r}", trace)

    return AuxSolveResult(
        u=u,
        c_alpha=c_alpha,
        residual=raw,
        residual_scaled=scaled,
        noise_floor=noise,
        iterations=iterations,
        method_used=method,
        lp_norm=integrate_power(grid, u, eig.p),
    )


def energy_upper_bound(grid: Grid, tf: TruncatedNonlinearity, eig: EigenData,
                       eps: float) -> float:
    """Negative upper bound -eps/2 * psi^{-1}(lambda1+eps)^2 * int e1^2.

    Requires 0 < eps < gamma - lambda1 so the inverse slope is defined.
    """
    if not 0.0 < eps < tf.gamma - eig.lambda1:
        raise NonlinearityError(
            f"eps = {eps!r} outside (0, gamma - lambda1) = "
            f"(0, {tf.gamma - eig.lambda1!r})")
    y = tf.psi_inverse(eig.lambda1 + eps)
    return -0.5 * eps * y**2 * eig.int_e1_sq


def pk_upper_bound(grid: Grid, tf: TruncatedNonlinearity, eig: EigenData) -> float:
    """Ceiling (max fhat) * C1 * s_alpha^(p-1) * |Omega|^(1/2) / sqrt(lambda1)."""
    _, fmax = max_on_interval(tf.value, 0.0, tf.s_alpha)
    return (fmax * eig.C1 * tf.s_alpha ** (eig.p - 1.0)
            * np.sqrt(grid.measure) / np.sqrt(eig.lambda1))


def mass_identity(grid: Grid, u: Field, p: float) -> Tuple[float, float]:
    """Check int u^p against the Dirichlet pairing with the companion problem.

    Solves -Laplace w = u^(p-1) and returns (int u^p, <grad w, grad u>), both
    in the lumped (cell-volume) inner product where the discrete identity is
    exact up to linear-solve precision.
    """
    rhs = np.power(u, p - 1.0)
    w = spla.spsolve(grid.laplacian.tocsc(), rhs)
    lhs = float(np.sum(u * rhs) * grid.cell_volume)
    pairing = float((w @ apply_neg_laplacian(grid, u)) * grid.cell_volume)
    return lhs, pairing
