import json
import math

import numpy as np
import pytest

import nonlocal_multisol as nm
from nonlocal_multisol.hypotheses import (
    CERTIFIED,
    VIOLATED,
    check_f0,
    check_f1,
    check_f2,
    check_f3,
    check_f4,
    check_f5,
    chebyshev_grid,
    default_alpha_grid,
)


def gamma_pinned_at_lambda1(family, lam1):
    """Rescale a family so its slope limit equals lambda1 at every alpha."""
    f, _ = family
    return nm.NonlocalNonlinearity(
        eval=lambda s, a: f.eval(s, a) * (lam1 / f.gamma(a)),
        singular_points=f.singular_points,
        zero_locus=f.zero_locus,
        gamma=lambda a: lam1,
        breakpoints=f.breakpoints,
    )


def psi_increasing_example():
    return nm.custom_nonlinearity(
        lambda s, a: np.asarray(s, float) ** 2 * (2.0 - np.asarray(s, float)),
        [1.0], s_upper=3.0)


# -- full certification for the constructed families --------------------------------


@pytest.mark.parametrize("which", ["b1", "b2", "c1"])
def test_families_certified(which, family_b1, family_b2, family_c1, geometry_kw):
    f, _ = {"b1": family_b1, "b2": family_b2, "c1": family_c1}[which]
    report = nm.certify(f, **geometry_kw)
    assert report.all_certified(), report.violated()
    for r in report:
        assert r.margin > 0.0
        assert math.isfinite(r.margin)
        assert r.witness is None


def test_report_json_schema(family_b1, geometry_kw):
    f, _ = family_b1
    report = nm.certify(f, **geometry_kw)
    payload = json.loads(report.to_json())
    assert payload["all_certified"] is True
    names = [r["hypothesis"] for r in payload["results"]]
    assert names == ["f0", "f1", "f2", "f3", "f4", "f5"]
    for r in payload["results"]:
        assert r["status"] in (CERTIFIED, VIOLATED, "not-checkable")
        assert "margin" in r and "samples" in r


# -- f0 -------------------------------------------------------------------------------


def test_f0_certified_family_b(family_b1):
    f, _ = family_b1
    res = check_f0(f, default_alpha_grid(f, 1))
    assert res.status == CERTIFIED
    assert res.margin > 0.0


def test_f0_negative_near_zero_violated():
    # f(0+) < 0: positivity fails with a witness at small s
    f = nm.custom_nonlinearity(
        lambda s, a: np.asarray(s, float) * (2.0 - np.asarray(s, float)) - 1.0,
        [1.0], zero_locus=lambda a: 1.0)
    res = check_f0(f, np.array([0.5]))
    assert res.status == VIOLATED
    assert res.witness["s"] < 0.2


def test_f0_zero_locus_mismatch_violated(family_b1):
    f, _ = family_b1
    wrong = nm.NonlocalNonlinearity(
        eval=f.eval, singular_points=f.singular_points,
        zero_locus=lambda a: 0.5 * f.zero_locus(a), gamma=f.gamma)
    res = check_f0(wrong, np.array([0.5]))
    assert res.status == VIOLATED
    assert res.witness.get("kind") == "zero-locus"


# -- f1 -------------------------------------------------------------------------------


def test_f1_blows_up_family_b(family_b1, eig512):
    f, _ = family_b1
    res = check_f1(f, 1, eig512.lambda1)
    assert res.status == CERTIFIED
    assert res.margin > 1.0  # reaction far above lambda1 at the closest approach


def test_f1_margin_formula_family_c(family_c1, eig512):
    # margin = min over s-samples of f(s, closest approach)/lambda1 - 1 >= 0
    f, _ = family_c1
    res = check_f1(f, 1, eig512.lambda1)
    assert res.status == CERTIFIED
    lo, hi = f.interval_bounds(1)
    delta_min = 1e-4 * (hi - lo)
    closest = f.singular_points[0] - delta_min
    sa = float(f.zero_locus(closest))
    svals = [fr * 0.99 * sa for fr in (0.01, 0.05, 0.1, 0.25, 0.5)]
    # recomputed margin can only be tighter than the reported one (more s values)
    direct = min(float(f.eval(np.float64(s), closest)) / eig512.lambda1 - 1.0
                 for s in svals)
    assert direct >= res.margin * (1.0 - 1e-9) or direct >= 0.0


def test_f1_below_lambda1_violated(eig512):
    lam1 = eig512.lambda1
    f = nm.custom_nonlinearity(
        lambda s, a: 0.5 * lam1 * np.asarray(s, float)
        * (1.0 - np.asarray(s, float) / 2.0),
        [1.0], zero_locus=lambda a: 2.0)
    res = check_f1(f, 1, lam1)
    assert res.status == VIOLATED
    assert res.witness is not None and "s" in res.witness


# -- f2 -------------------------------------------------------------------------------


def test_f2_certified_families(family_b1, family_c1):
    for f, _ in (family_b1, family_c1):
        res = check_f2(f, default_alpha_grid(f, 1))
        assert res.status == CERTIFIED
        assert res.margin > 0.0


def test_f2_violated_for_increasing_psi():
    f = nm.custom_nonlinearity(
        lambda s, a: np.asarray(s, float) ** 2, [1.0], zero_locus=lambda a: 1.0)
    res = check_f2(f, np.array([0.5]))
    assert res.status == VIOLATED
    w = res.witness
    assert w["psi_high"] > w["psi_low"]


def test_f2_rational_family_derivative_sign(family_c1):
    # w/(w-D) decreasing for w < D makes L increasing on the window
    f, c = family_c1
    w = np.linspace(1e-3, c.B, 257)
    L = c.C * w / (c.D - w)
    assert np.all(np.diff(L) > 0.0)


# -- f3 -------------------------------------------------------------------------------


def test_f3_margin_at_least_one(family_b1, eig512):
    f, _ = family_b1
    res = check_f3(f, default_alpha_grid(f, 1), eig512.lambda1)
    assert res.status == CERTIFIED
    assert res.margin >= 0.99


def test_f3_exact_equality_violated(family_b1, eig512):
    f_eq = gamma_pinned_at_lambda1(family_b1, eig512.lambda1)
    res = check_f3(f_eq, default_alpha_grid(f_eq, 1), eig512.lambda1)
    assert res.status == VIOLATED
    assert res.margin == 0.0
    assert res.witness["gamma"] == pytest.approx(eig512.lambda1)


# -- f4 -------------------------------------------------------------------------------


def test_f4_family_b_margin(family_b1, eig512):
    f, c = family_b1
    res = check_f4(f, [default_alpha_grid(f, 1)], 1.0, eig512.int_e1_p)
    assert res.status == CERTIFIED
    # floor = inf(S) * int e1 ~ A * 2/pi ~ 1.636, so margin ~ 0.636
    assert res.margin == pytest.approx(c.A * 2.0 / math.pi - 1.0, abs=5e-3)


def test_f4_large_t_k_violated(eig512):
    f = nm.custom_nonlinearity(
        lambda s, a: np.asarray(s, float) * (1.0 - np.asarray(s, float)),
        [3.0], zero_locus=lambda a: 1.0)
    res = check_f4(f, [np.array([1.5])], 1.0, eig512.int_e1_p)
    assert res.status == VIOLATED
    assert res.witness["t_K"] == 3.0


def test_f4_p2_uses_int_e1_squared(family_b1, grid512, eig512):
    # with p = 2 the floor uses int e1^2 = 1/2
    eig2 = nm.eigen_data(grid512, 2.0)
    assert eig2.int_e1_p == pytest.approx(0.5, abs=1e-4)
    f2, c2 = nm.make_family_b(1, 2.0, eig2.lambda1, eig2.C1,
                              grid512.measure, eig2.int_e1_p)
    res = check_f4(f2, [default_alpha_grid(f2, 1)], 2.0, eig2.int_e1_p)
    assert res.status == CERTIFIED
    assert res.margin == pytest.approx(c2.A**2 * 0.5 - 1.0, abs=1e-2)


# -- f5 -------------------------------------------------------------------------------


def test_f5_threshold_value(family_b1, grid512, eig512):
    f, _ = family_b1
    res = check_f5(f, [default_alpha_grid(f, 1)], 1.0, eig512.lambda1,
                   eig512.C1, grid512.measure)
    assert res.status == CERTIFIED
    threshold = math.sqrt(eig512.lambda1) / (eig512.C1 * math.sqrt(grid512.measure))
    assert threshold == pytest.approx(math.pi * math.sqrt(12.0), abs=1e-3)
    assert 0.0 < res.margin < threshold


def test_f5_scaled_violated(family_b1, grid512, eig512):
    f, _ = family_b1
    res = check_f5(nm.scale_nonlinearity(f, 1e3),
                   [default_alpha_grid(f, 1)], 1.0, eig512.lambda1,
                   eig512.C1, grid512.measure)
    assert res.status == VIOLATED
    assert res.witness["value"] > res.witness["threshold"]


def test_f5_inner_max_vs_brute_force(family_b1):
    from nonlocal_multisol.hypotheses import _f5_value
    f, _ = family_b1
    for alpha in (0.2, 0.5, 0.9):
        sa = float(f.zero_locus(alpha))
        grid = np.linspace(0.0, sa, 10001)
        brute = float(np.max(np.asarray(f.eval(grid, alpha)))) / alpha
        assert _f5_value(f, alpha, 1.0) == pytest.approx(brute, rel=1e-6)


# -- cross-cutting properties ---------------------------------------------------------


def test_chebyshev_grid_clusters_and_stays_inside():
    g = chebyshev_grid(2.0, 3.0, 64)
    assert len(g) == 64
    assert np.all((g > 2.0) & (g < 3.0))
    assert np.all(np.diff(g) > 0.0)
    # clustering: edge gaps smaller than central gaps
    assert g[1] - g[0] < g[32] - g[31]


def test_violation_survives_density_doubling(family_b1, eig512, geometry_kw):
    # a violation found on the default grid persists on a denser grid, and
    # the recorded witness re-verifies directly
    f_bad = psi_increasing_example()
    for m in (64, 128):
        grid = default_alpha_grid(f_bad, 1, m)
        res = check_f2(f_bad, grid)
        assert res.status == VIOLATED
        w = res.witness
        psi_low = float(f_bad.eval(np.float64(w["s_low"]), w["alpha"])) / w["s_low"]
        psi_high = float(f_bad.eval(np.float64(w["s_high"]), w["alpha"])) / w["s_high"]
        assert psi_high > psi_low


def test_counterexamples_name_the_right_hypothesis(family_b1, eig512, geometry_kw):
    lam1 = eig512.lambda1
    rep_inc = nm.certify(psi_increasing_example(), **geometry_kw)
    assert "f2" in rep_inc.violated()

    rep_eq = nm.certify(gamma_pinned_at_lambda1(family_b1, lam1), **geometry_kw)
    assert "f3" in rep_eq.violated()

    f, _ = family_b1
    rep_scaled = nm.certify(nm.scale_nonlinearity(f, 1e3), **geometry_kw)
    assert rep_scaled.violated() == ["f5"]
