"""Curvature tensors of grid metrics and their distributional checks.

Conventions: Christoffel symbols

    Gamma^a_bc = (1/2) g^{al} (d_c g_{lb} + d_b g_{cl} - d_l g_{bc}),

curvature components R^d_cab (stored with index order d, c, a, b) from

    R^d_cab = d_a Gamma^d_bc - d_b Gamma^d_ac
              + Gamma^d_al Gamma^l_bc - Gamma^d_bl Gamma^l_ac,

and Ricci as the trace Ric_cb = R^a_cab.  With these signs the round
unit sphere has Ric = +g.

Low-regularity metrics are smoothed before differentiation; curvature
values are reliable only on the smoothing's trusted region shrunk by
the derivative stencils, which is what ``curvature_margin`` encodes.
"""

from __future__ import annotations

import numpy as np

from .grids import (
    TensorGridField,
    integrate_density,
    partial_derivative,
    scalar_field,
)
from .mollifier import stabilized_metric
from .report import PipelineReport, digest_arrays

__all__ = [
    "christoffel",
    "riemann",
    "ricci",
    "curvature_margin",
    "distributional_ricci_pairing",
    "riemann_smallness_check",
    "ricci_lower_eigenvalue_field",
    "cd_integral_check",
    "aitken_extrapolate",
]

# two first-derivative passes, each with a 2-node stencil reach
CURVATURE_STENCIL_MARGIN = 4


def curvature_margin(region):
    """Shrink a trusted region by the reach of the curvature stencils."""
    return region.shrink(CURVATURE_STENCIL_MARGIN)


def _metric_gradient(metric):
    """dg[..., c, a, b] = d_c g_ab."""
    n = metric.chart.dim
    return np.stack(
        [partial_derivative(metric, c).components for c in range(n)], axis=-3
    )


def christoffel(metric):
    """Christoffel symbols as a (1, 2) field, symmetric in the lower pair."""
    dg = _metric_gradient(metric)
    ginv = metric.inverse_components
    gam = 0.5 * (
        np.einsum("...al,...clb->...abc", ginv, dg)
        + np.einsum("...al,...bcl->...abc", ginv, dg)
        - np.einsum("...al,...lbc->...abc", ginv, dg)
    )
    return TensorGridField(metric.chart, (1, 2), gam, metric.regularity_tag)


def riemann(metric, gamma=None):
    """Curvature components R^d_cab as a (1, 3) field."""
    gamma = gamma if gamma is not None else christoffel(metric)
    n = metric.chart.dim
    dgam = np.stack(
        [partial_derivative(gamma, e).components for e in range(n)], axis=-4
    )
    G = gamma.components
    R = (
        np.einsum("...adbc->...dcab", dgam)
        - np.einsum("...bdac->...dcab", dgam)
        + np.einsum("...dal,...lbc->...dcab", G, G)
        - np.einsum("...dbl,...lac->...dcab", G, G)
    )
    return TensorGridField(metric.chart, (1, 3), R, metric.regularity_tag)


def ricci(metric, riem=None):
    """Ricci tensor Ric_cb = R^a_cab."""
    riem = riem if riem is not None else riemann(metric)
    ric = np.einsum("...acab->...cb", riem.components)
    return TensorGridField(metric.chart, (0, 2), ric, metric.regularity_tag)


def aitken_extrapolate(values):
    """Accelerated limit of the last three sequence entries.

    Falls back to the final value when the increments are not
    contracting or the Aitken denominator nearly vanishes.
    """
    v = np.asarray(values, dtype=float)
    if v.shape[0] < 3:
        return np.array(v[-1])
    v1, v2, v3 = v[-3], v[-2], v[-1]
    d1, d2 = v2 - v1, v3 - v2
    den = d2 - d1
    scale = np.maximum(np.abs(v3), 1.0)
    ok = (np.abs(den) > 1e-14 * scale) & (np.abs(d2) < np.abs(d1))
    with np.errstate(divide="ignore", invalid="ignore"):
        extr = v3 - np.where(ok, d2 * d2 / np.where(ok, den, 1.0), 0.0)
    return np.where(ok, extr, v3)


def distributional_ricci_pairing(g, x_field, phi, eps_schedule, tau_rel=1e-6):
    """Pairings of smoothed Ricci against a bump, with extrapolation.

    For each eps the value is the integral of Ric_eps(X, X) phi against
    the smoothed volume; the limit is accelerated from the last three
    entries and compared against the sign threshold
    tau = tau_rel * (integral of phi against the input volume).
    """
    sched = tuple(float(e) for e in eps_schedule)
    # The integrand is Ric_eps(X, X) * phi with no derivative falling on
    # the bump, so the bare support window is exact here.
    supp = phi.support_region()
    report = PipelineReport(
        "distributional_ricci_pairing",
        inputs_digest=digest_arrays(g.components, x_field.components, *sched),
        params={
            "eps_schedule": list(sched),
            "tau_rel": float(tau_rel),
            "bump_center": list(phi.center),
            "bump_radius": float(phi.radius),
        },
    )
    values = []
    for e in sched:
        stab = stabilized_metric(g, e)
        usable = curvature_margin(stab.trusted)
        if supp.intersect(usable).extents() != supp.extents():
            raise ValueError(
                f"bump support exceeds the usable region at eps={e}"
            )
        ge = stab.metric
        ric = ricci(ge).components
        dens = np.einsum("...cb,...c,...b->...", ric, x_field.components,
                         x_field.components)
        val = integrate_density(
            scalar_field(g.chart, dens * phi.samples.components),
            metric=ge, region=supp,
        )
        values.append(float(val))
        report.add_residual(
            f"pairing_eps_{e:g}", float(val),
            "smoothed Ricci paired against a nonnegative bump",
        )
    extr = float(aitken_extrapolate(values))
    tau = float(tau_rel) * phi.l1_norm(metric=g)
    nonneg = extr >= -tau
    report.params["values"] = values
    report.add_residual(
        "extrapolated", extr,
        "sign of the accelerated pairing limit against threshold",
        tolerance=tau, passed=bool(nonneg),
    )
    report.params["tau"] = tau
    report.set_verdict("PASS" if nonneg else "FAIL")
    return report


def riemann_smallness_check(g, eps_schedule, frame_scale=1.0):
    """Sup of smoothed curvature against a Euclidean background.

    For each eps, reports the largest |Riem_eps(X1, X2)X3| over
    coordinate-frame triples with background norm ``frame_scale``,
    taken over the usable sub-box.
    """
    sched = tuple(float(e) for e in eps_schedule)
    report = PipelineReport(
        "riemann_smallness",
        inputs_digest=digest_arrays(g.components, *sched),
        params={"eps_schedule": list(sched), "frame_scale": float(frame_scale)},
    )
    values = []
    c3 = float(frame_scale) ** 3
    for e in sched:
        stab = stabilized_metric(g, e)
        usable = curvature_margin(stab.trusted)
        R = riemann(stab.metric).components[usable.slices()]
        mag = np.sqrt(np.einsum("...dcab,...dcab->...cab", R, R))
        val = c3 * float(np.max(mag))
        values.append(val)
        report.add_residual(
            f"sup_eps_{e:g}", val,
            "smoothed curvature stays uniformly small on compacta",
        )
    report.params["values"] = values
    decreasing = all(b <= a * 1.05 + 1e-12 for a, b in zip(values, values[1:]))
    report.params["nonincreasing"] = bool(decreasing)
    report.set_verdict("PASS")
    return report


def ricci_lower_eigenvalue_field(metric, ric=None):
    """Smallest eigenvalue of Ricci relative to the metric, nodewise.

    Solves the symmetric-definite pencil Ric v = kappa g v through a
    Cholesky whitening of g; Riemannian metrics only.
    """
    if not metric.riemannian:
        raise ValueError("eigenvalue pencil requires a Riemannian metric")
    ric = ric if ric is not None else ricci(metric)
    L = np.linalg.cholesky(metric.components)
    Linv = np.linalg.inv(L)
    A = np.einsum("...ij,...jk,...lk->...il", Linv, ric.components, Linv)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    kappa = np.linalg.eigvalsh(A)[..., 0]
    return scalar_field(metric.chart, kappa, metric.regularity_tag)


def cd_integral_check(g, bound, p, eps_schedule, region=None):
    """Normalized deficit integrals for a lower Ricci bound.

    For each eps, integrates max(bound - kappa_eps, 0)^p against the
    smoothed volume over the usable region and divides by that region's
    smoothed volume.  A vanishing limit certifies the bound in the
    curvature-dimension sense; the negative control stabilizes away
    from zero.
    """
    sched = tuple(float(e) for e in eps_schedule)
    report = PipelineReport(
        "cd_integral",
        inputs_digest=digest_arrays(g.components, bound, p, *sched),
        params={"bound": float(bound), "p": float(p), "eps_schedule": list(sched)},
    )
    values = []
    for e in sched:
        stab = stabilized_metric(g, e)
        usable = curvature_margin(stab.trusted)
        if region is not None:
            usable = usable.intersect(region)
        ge = stab.metric
        kappa = ricci_lower_eigenvalue_field(ge).components
        deficit = np.maximum(float(bound) - kappa, 0.0) ** float(p)
        num = integrate_density(scalar_field(g.chart, deficit), metric=ge,
                                region=usable)
        vol = integrate_density(scalar_field(g.chart, np.ones(g.chart.shape)),
                                metric=ge, region=usable)
        val = float(num / vol)
        values.append(val)
        report.add_residual(
            f"deficit_eps_{e:g}", val,
            "normalized lower-bound deficit of the smoothed Ricci pencil",
        )
    report.params["values"] = values
    report.set_verdict("PASS")
    return report
