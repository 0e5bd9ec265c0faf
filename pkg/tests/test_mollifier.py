"""Smoothing kernel, cutoffs, stabilization, and convergence rates.

The |x| tests pin the smoothed value at the kink against the
closed-form convolution constant 0.33445399771 (value at zero divided
by the support radius), computed once by high-resolution quadrature.
"""

import numpy as np
import pytest

from lowreg.grids import BoxChart, MetricField, Region, TensorGridField, scalar_field
from lowreg.mollifier import (
    CutoffSystem,
    MollifierKernel,
    StabilizationError,
    StabilizedMetricFamily,
    convergence_report,
    distance_comparison_check,
    mollify_tensor,
    stabilized_metric,
)

KINK_VALUE_OVER_EPS = 0.3344539977099753


def _line_chart(h=0.01):
    n = int(round(2.0 / h)) + 1
    return BoxChart((-1.0,), (1.0,), (n,))


def _abs_field(chart):
    return scalar_field(chart, np.abs(chart.node_mesh()[..., 0]))


# --- kernel ---------------------------------------------------------------


def test_kernel_unit_mass():
    chart = _line_chart()
    for eps in (0.05, 0.1, 0.4):
        k = MollifierKernel(chart, eps)
        assert abs(k.mass() - 1.0) < 1e-14


def test_kernel_eps_floor():
    chart = _line_chart(h=0.05)
    with pytest.raises(ValueError, match="coupling floor"):
        MollifierKernel(chart, 0.05)
    MollifierKernel(chart, 0.1)  # boundary case is allowed


def test_kernel_half_widths_and_trusted_region():
    chart = _line_chart(h=0.01)
    k = MollifierKernel(chart, 0.1)
    assert k.half_widths == (10,)
    trusted = k.trusted_region()
    assert trusted.lo == (10,)
    assert trusted.hi == (chart.shape[0] - 10,)


# --- mollify_tensor -------------------------------------------------------


def test_constant_reproduced():
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (41, 41))
    f = scalar_field(chart, np.full(chart.shape, 2.75))
    res = mollify_tensor(f, 0.1)
    err = np.abs(res.field.components[res.trusted.slices()] - 2.75)
    assert np.max(err) <= 1e-10


def test_unit_mass_invariant_on_ones():
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (41, 41))
    f = scalar_field(chart, np.ones(chart.shape))
    res = mollify_tensor(f, 0.15)
    err = np.abs(res.field.components[res.trusted.slices()] - 1.0)
    assert np.max(err) <= 1e-10


def test_positivity_preserved(rng):
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (31, 31))
    for trial in range(3):
        B = rng.standard_normal(chart.shape + (2, 2))
        if trial == 2:
            # rank-one worst case: eigenvalues touch zero
            v = rng.standard_normal(chart.shape + (2,))
            A = np.einsum("...a,...b->...ab", v, v)
        else:
            A = np.einsum("...ka,...kb->...ab", B, B)
        f = TensorGridField(chart, (0, 2), A)
        res = mollify_tensor(f, 0.12)
        ev = np.linalg.eigvalsh(res.field.components[res.trusted.slices()])
        assert np.min(ev) >= -1e-10


def test_linearity():
    chart = _line_chart(h=0.02)
    x = chart.node_mesh()[..., 0]
    f1 = scalar_field(chart, np.sin(3 * x))
    f2 = scalar_field(chart, x**2)
    combo = scalar_field(chart, 2.0 * f1.components - 0.5 * f2.components)
    m1 = mollify_tensor(f1, 0.1).field.components
    m2 = mollify_tensor(f2, 0.1).field.components
    mc = mollify_tensor(combo, 0.1).field.components
    assert np.max(np.abs(mc - (2.0 * m1 - 0.5 * m2))) < 1e-13


def test_abs_kink_value_matches_convolution():
    chart = _line_chart(h=0.005)
    res = mollify_tensor(_abs_field(chart), 0.1)
    i0 = chart.nearest_node((0.0,))[0]
    got = res.field.components[i0]
    assert abs(got - 0.1 * KINK_VALUE_OVER_EPS) < 1e-5


def test_abs_sup_error_below_half_eps():
    chart = _line_chart(h=0.005)
    f = _abs_field(chart)
    for eps in (0.05, 0.1, 0.2):
        res = mollify_tensor(f, eps)
        sl = res.trusted.slices()
        err = np.max(np.abs(res.field.components[sl] - f.components[sl]))
        assert err <= 0.5 * eps
        # the kink dominates, so the sup is the closed-form value there
        assert abs(err - eps * KINK_VALUE_OVER_EPS) < 2e-5


def test_abs_smoothing_is_c1_at_kink():
    chart = _line_chart(h=0.005)
    res = mollify_tensor(_abs_field(chart), 0.1)
    v = res.field.components
    i0 = chart.nearest_node((0.0,))[0]
    slope = (v[i0 + 1] - v[i0 - 1]) / (2 * 0.005)
    assert abs(slope) < 1e-10  # even profile: derivative vanishes at 0
    curv = (v[i0 + 1] - 2 * v[i0] + v[i0 - 1]) / 0.005**2
    assert 0.0 < curv < 2.0 / 0.1  # bounded second difference, no spike


# --- cutoffs ---------------------------------------------------------------


def test_whole_chart_cutoffs_are_identity():
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (31, 31))
    cs = CutoffSystem.whole_chart(chart)
    f = scalar_field(chart, chart.node_mesh()[..., 0])
    plain = mollify_tensor(f, 0.1)
    cut = mollify_tensor(f, 0.1, cutoffs=cs)
    sl = cut.trusted.slices()
    assert np.allclose(
        plain.field.components[sl], cut.field.components[sl], atol=1e-12
    )


def test_plateau_chi_covers_xi_support():
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (51, 51))
    core = Region((15, 15), (36, 36))
    cs = CutoffSystem.plateau(chart, core, margin=0.1)
    xi = cs.xi.components
    chi = cs.chi.components
    assert np.all(chi[xi > 1e-15] >= 1.0 - 1e-12)
    assert np.min(xi) == 0.0 and np.max(xi) <= 1.0
    corner = chi[0, 0]
    assert corner == 0.0


def test_cutoff_range_validated():
    chart = BoxChart((0.0,), (1.0,), (11,))
    bad = scalar_field(chart, np.full(chart.shape, 1.5))
    ones = scalar_field(chart, np.ones(chart.shape))
    with pytest.raises(ValueError, match="cutoff values"):
        CutoffSystem(bad, ones, chart.full_region())


def test_cutoff_mollify_constant_on_core():
    chart = BoxChart((0.0, 0.0), (1.0, 1.0), (51, 51))
    core = Region((18, 18), (33, 33))
    cs = CutoffSystem.plateau(chart, core, margin=0.08)
    f = scalar_field(chart, np.ones(chart.shape))
    res = mollify_tensor(f, 0.06, cutoffs=cs)
    sl = res.trusted.slices()
    assert np.max(np.abs(res.field.components[sl] - 1.0)) < 1e-10
    assert res.field.components[0, 0] == 0.0  # chi kills the far field


# --- stabilized metrics ----------------------------------------------------


def test_euclidean_fixed_point(euclid_coarse):
    g = euclid_coarse.metric
    stab = stabilized_metric(g, 0.2)
    sl = stab.trusted.slices()
    assert np.max(np.abs(stab.metric.components[sl] - g.components[sl])) < 1e-12
    assert stab.metric.signature == g.signature


def test_minkowski_constant_fixed_point():
    chart = BoxChart((-1.0, -1.0), (1.0, 1.0), (41, 41))
    comp = np.zeros(chart.shape + (2, 2))
    comp[..., 0, 0] = -1.0
    comp[..., 1, 1] = 1.0
    g = MetricField(chart, comp)
    stab = stabilized_metric(g, 0.3)
    sl = stab.trusted.slices()
    assert np.max(np.abs(stab.metric.components[sl] - comp[sl])) < 1e-12
    assert stab.metric.signature == g.signature


def test_cusp_metric_stabilizes(cusp_mid):
    g = cusp_mid.metric
    stab = stabilized_metric(g, 0.05)
    assert stab.metric.signature == g.signature
    sl = stab.trusted.slices()
    a = stab.metric.components[sl]
    b = g.components[sl]
    # two-sided quadratic-form bound along the coordinate directions
    for i in range(2):
        r = a[..., i, i] / b[..., i, i]
        assert np.min(r) >= 0.5 and np.max(r) <= 2.0


def test_oscillating_lorentz_frame_rejected():
    # boost angle swings through many periods inside one kernel width,
    # so the average degenerates and the smoothing must be refused
    chart = BoxChart((-1.0, -1.0), (1.0, 1.0), (81, 81))
    x = chart.node_mesh()[..., 0]
    th = 2.0 * np.pi * x / 0.1
    comp = np.zeros(chart.shape + (2, 2))
    comp[..., 0, 0] = -np.cos(2 * th)
    comp[..., 0, 1] = np.sin(2 * th)
    comp[..., 1, 0] = np.sin(2 * th)
    comp[..., 1, 1] = np.cos(2 * th)
    g = MetricField(chart, comp)
    with pytest.raises(StabilizationError):
        stabilized_metric(g, 0.4)


def test_family_schedule_and_common_region(euclid_coarse):
    g = euclid_coarse.metric
    fam = StabilizedMetricFamily(g, (0.4, 0.2))
    assert fam.member(0.2).eps == 0.2
    with pytest.raises(KeyError):
        fam.member(0.3)
    common = fam.common_region()
    widest = fam.member(0.4).trusted
    assert common.lo == widest.lo and common.hi == widest.hi
    with pytest.raises(ValueError, match="decrease"):
        StabilizedMetricFamily(g, (0.2, 0.2))


# --- distance comparison ---------------------------------------------------


def test_distance_ratios_trivial_on_constant_metric(euclid_coarse):
    rep = distance_comparison_check(euclid_coarse.metric, 0.2, n_pairs=6)
    assert rep.verdict == "PASS"
    ratios = np.asarray(rep.params["ratios"])
    # smoothing a constant metric is exact, so both solvers see the
    # same field and every ratio collapses to one
    assert np.max(np.abs(ratios - 1.0)) < 1e-12


def test_distance_ratios_cusp(cusp_mid):
    rep = distance_comparison_check(cusp_mid.metric, 0.05, n_pairs=20)
    assert rep.verdict == "PASS"
    ratios = np.asarray(rep.params["ratios"])
    assert np.min(ratios) >= 0.5 and np.max(ratios) <= 2.0


# --- convergence rates -----------------------------------------------------


def test_convergence_constant_is_exact():
    chart = _line_chart(h=0.01)
    f = scalar_field(chart, np.full(chart.shape, -3.0))
    rep = convergence_report(f, (0.2, 0.1, 0.05))
    for entry in rep.residuals:
        if entry["name"].startswith(("sup_", "l1_", "l2_", "l4_")):
            assert entry["value"] <= 1e-12


def test_convergence_smooth_field_second_order():
    chart = _line_chart(h=0.005)
    x = chart.node_mesh()[..., 0]
    f = scalar_field(chart, np.sin(x))
    rep = convergence_report(
        f, (0.4, 0.2, 0.1, 0.05), min_slopes={"sup": 1.9}
    )
    assert rep.verdict == "PASS"
    slope = rep.params["slopes"]["sup"]
    assert 1.9 <= slope <= 2.2


def test_convergence_kink_first_order():
    chart = _line_chart(h=0.005)
    rep = convergence_report(
        _abs_field(chart), (0.4, 0.2, 0.1, 0.05), min_slopes={"sup": 0.9}
    )
    assert rep.verdict == "PASS"
    slope = rep.params["slopes"]["sup"]
    assert 0.9 <= slope <= 1.1


def test_convergence_slope_failure_detected():
    chart = _line_chart(h=0.005)
    rep = convergence_report(_abs_field(chart), (0.4, 0.2, 0.1), min_slopes={"sup": 1.9})
    assert rep.verdict == "FAIL"
