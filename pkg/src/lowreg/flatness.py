"""Flat-structure detection and flat coordinate construction.

The constructive route: orthonormalize at a base point, parallel
transport along axis-ordered grid paths to get a global frame, check
that the frame fields commute, then integrate the dual coframe to
candidate coordinates.  If a chart of this kind exists, the coordinate
differential pulls the constant-coefficient model metric back to g;
the final residual measures exactly that.

Low-regularity inputs are stabilized first and the construction runs
on the finest stabilized member.  Curvature that survives
stabilization short-circuits to NOT-FLAT.
"""

from __future__ import annotations

import numpy as np

from .curvature import (
    CURVATURE_STENCIL_MARGIN,
    christoffel,
    curvature_margin,
    riemann,
)
from .geodesics import MetricInterpolator
from .grids import MetricField, TensorGridField, partial_derivative
from .mollifier import StabilizedMetricFamily
from .report import PipelineReport, digest_arrays

__all__ = [
    "orthonormal_basis_at",
    "build_parallel_frame",
    "bracket_check",
    "integrate_flat_coordinates",
    "verify_flat_pullback",
    "flatness_pipeline",
]

DEGENERACY_FLOOR = 1e-8


def orthonormal_basis_at(metric, point):
    """Pseudo-orthonormal basis of the tangent space at a point.

    Returns (basis, signs): basis[i] is the i-th vector, signs the
    corresponding g(e_i, e_i) values, negative directions first.
    """
    g = metric.interpolate(np.asarray(point, dtype=float))
    w, q = np.linalg.eigh(g)
    if float(np.min(np.abs(w))) < DEGENERACY_FLOOR:
        raise ValueError("metric is numerically degenerate at the base point")
    basis = (q / np.sqrt(np.abs(w))).T  # rows are vectors, ascending eigenvalue
    signs = np.sign(w)
    neg = int(np.sum(signs < 0))
    if (neg, len(w) - neg) != metric.signature:
        raise ValueError("pointwise signature disagrees with the metric field")
    return basis, signs


def build_parallel_frame(metric, origin_node=None, gamma=None,
                         axis_order=None):
    """Parallel transport a base-point frame over the whole grid.

    Transport sweeps grid lines axis by axis (first axis of
    ``axis_order`` out of the origin, then the next axis across that
    line, and so on), one RK4 step per grid cell with Christoffel
    symbols interpolated at midpoints.  Returns (frame_field, signs);
    frame components are indexed [..., frame_label, vector_component].
    Different axis orders agree only up to curvature, which the caller
    can exploit as a consistency probe.
    """
    chart = metric.chart
    n = chart.dim
    shape = chart.shape
    if origin_node is None:
        origin_node = tuple(s // 2 for s in shape)
    k0 = tuple(int(k) for k in origin_node)
    order = tuple(int(a) for a in (
        axis_order if axis_order is not None else range(n)
    ))
    if sorted(order) != list(range(n)):
        raise ValueError("axis_order must be a permutation of the axes")
    basis, signs = orthonormal_basis_at(metric, chart.node_point(k0))
    interp = MetricInterpolator(metric, gamma=gamma)
    F = np.zeros(shape + (n, n))
    F[k0] = basis

    for step, a in enumerate(order):
        done = sorted(order[:step])
        if not done:
            x_front = np.asarray(chart.node_point(k0), dtype=float)[None]
        else:
            axes = [chart.axis_coords(b) for b in done]
            free = np.stack(
                np.meshgrid(*axes, indexing="ij"), axis=-1
            ).reshape(-1, len(done))
            x_front = np.tile(
                np.asarray(chart.node_point(k0), dtype=float),
                (free.shape[0], 1),
            )
            for i, b in enumerate(done):
                x_front[:, b] = free[:, i]

        def slab(idx_a):
            out = []
            for b in range(n):
                if b in done:
                    out.append(slice(None))
                elif b == a:
                    out.append(idx_a)
                else:
                    out.append(k0[b])
            return tuple(out)

        v_start = F[slab(k0[a])].reshape(-1, n, n)
        slab_shape = tuple(shape[b] for b in done)
        h = chart.spacing[a]
        for direction in (1, -1):
            v = v_start.copy()
            x = x_front.copy()
            idx = k0[a]
            while 0 <= idx + direction < shape[a]:
                xm = x.copy()
                xm[:, a] += 0.5 * direction * h
                xn = x.copy()
                xn[:, a] += direction * h
                a0 = -direction * interp.gamma_at(x)[:, :, a, :]
                am = -direction * interp.gamma_at(xm)[:, :, a, :]
                a1 = -direction * interp.gamma_at(xn)[:, :, a, :]
                k1 = np.einsum("bkj,bij->bik", a0, v)
                k2 = np.einsum("bkj,bij->bik", am, v + 0.5 * h * k1)
                k3 = np.einsum("bkj,bij->bik", am, v + 0.5 * h * k2)
                k4 = np.einsum("bkj,bij->bik", a1, v + h * k3)
                v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                idx += direction
                F[slab(idx)] = v.reshape(slab_shape + (n, n))
                x = xn
    return TensorGridField(chart, (1, 1), F), signs


def bracket_check(frame_field, metric, region=None):
    """Sup of frame-field commutators, by two derivative routes.

    Raw partials and covariant derivatives give the same commutator in
    exact arithmetic; the gap between routes isolates stencil noise.
    """
    chart = frame_field.chart
    n = chart.dim
    F = frame_field.components
    dF = np.stack(
        [partial_derivative(frame_field, c).components for c in range(n)],
        axis=-3,
    )
    gamma = christoffel(metric).components
    cov = dF + np.einsum("...kcb,...ib->...cik", gamma, F)
    raw_br = (
        np.einsum("...ia,...ajk->...ijk", F, dF)
        - np.einsum("...ja,...aik->...ijk", F, dF)
    )
    cov_br = (
        np.einsum("...ia,...ajk->...ijk", F, cov)
        - np.einsum("...ja,...aik->...ijk", F, cov)
    )
    region = region or chart.full_region().shrink(2)
    sl = region.slices()
    raw_sup = float(np.max(np.abs(raw_br[sl])))
    cov_sup = float(np.max(np.abs(cov_br[sl])))
    gap = float(np.max(np.abs((raw_br - cov_br)[sl])))
    return {"raw_sup": raw_sup, "covariant_sup": cov_sup, "route_gap": gap}


def _cumulative_integral(values, h, axis):
    """Fourth-order cumulative quadrature along one axis, primitive at 0."""
    f = np.moveaxis(values, axis, 0)
    m = f.shape[0]
    if m < 4:
        raise ValueError("need at least four samples per axis")
    inc = np.empty_like(f[:-1])
    inc[0] = (h / 24.0) * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
    inc[1:-1] = (h / 24.0) * (
        -f[:-3] + 13.0 * f[1:-2] + 13.0 * f[2:-1] - f[3:]
    )
    inc[-1] = (h / 24.0) * (
        9.0 * f[-1] + 19.0 * f[-2] - 5.0 * f[-3] + f[-4]
    )
    out = np.concatenate([np.zeros_like(f[:1]), np.cumsum(inc, axis=0)])
    return np.moveaxis(out, 0, axis)


def integrate_flat_coordinates(frame_field, origin_node=None):
    """Integrate the dual coframe to candidate flat coordinates.

    Path-ordering matches the frame construction: each coordinate
    accumulates along axis-ordered grid lines through the origin, so a
    closed coframe yields a well-defined map vanishing at the origin.
    Components are indexed [..., coordinate_label].
    """
    chart = frame_field.chart
    n = chart.dim
    shape = chart.shape
    if origin_node is None:
        origin_node = tuple(s // 2 for s in shape)
    k0 = tuple(int(k) for k in origin_node)
    theta = np.linalg.inv(np.swapaxes(frame_field.components, -1, -2))
    y = np.zeros(shape + (n,))
    for a in range(n):
        picker = tuple(
            slice(None) if b <= a else k0[b] for b in range(n)
        )
        slab = theta[picker][..., :, a]  # [..., label], axes 0..a free
        cum = _cumulative_integral(slab, chart.spacing[a], axis=a)
        ref = np.take(cum, k0[a], axis=a)
        contrib = cum - np.expand_dims(ref, axis=a)
        y += contrib[(Ellipsis,) + (None,) * (n - 1 - a) + (slice(None),)]
    return TensorGridField(chart, (1, 0), y)


def verify_flat_pullback(metric, coord_field, signs, margin=2):
    """Residual of the coordinate pullback against the model metric.

    Computes J[i, a] = d y^i / d x^a by stencils and compares
    sum_i signs_i J_ia J_ib with g_ab on a margin-shrunk region.
    """
    chart = metric.chart
    n = chart.dim
    dy = np.stack(
        [partial_derivative(coord_field, c).components for c in range(n)],
        axis=-2,
    )  # [..., a, label]
    pull = np.einsum("...ai,i,...bi->...ab", dy, np.asarray(signs), dy)
    res = pull - metric.components
    sl = chart.full_region().shrink(margin).slices()
    sup = float(np.max(np.abs(res[sl])))
    rms = float(np.sqrt(np.mean(res[sl] ** 2)))
    return {"pullback_sup": sup, "pullback_rms": rms}


def _riemann_sup(metric, margin=CURVATURE_STENCIL_MARGIN):
    rm = riemann(metric)
    sl = metric.chart.full_region().shrink(margin).slices()
    return float(np.max(np.abs(rm.components[sl])))


def flatness_pipeline(metric, eps_schedule=None, riemann_threshold=None,
                      pullback_tol=1e-4, origin_node=None):
    """Decide FLAT / NOT-FLAT / INCONCLUSIVE for a sampled metric.

    Smooth inputs are analyzed directly.  Low-regularity inputs go
    through a stabilization family; curvature is measured per member
    and the frame construction runs on the finest one, with the
    pullback judged against that construction metric.  Returns
    (report, coords) where coords is the flat coordinate field, or
    None when the curvature gate already decided NOT-FLAT.
    """
    chart = metric.chart
    h = max(chart.spacing)
    if riemann_threshold is None:
        riemann_threshold = max(10.0 * h * h, 1e-6)
    low_reg = metric.regularity_tag != "smooth"
    report = PipelineReport(
        "flatness",
        inputs_digest=digest_arrays(metric.components),
        params={
            "riemann_threshold": float(riemann_threshold),
            "pullback_tol": float(pullback_tol),
            "low_regularity": bool(low_reg),
            "spacing": list(chart.spacing),
        },
    )

    if low_reg:
        if eps_schedule is None:
            eps_schedule = tuple(h * k for k in (10.0, 8.0, 6.0))
        report.params["eps_schedule"] = [float(e) for e in eps_schedule]
        family = StabilizedMetricFamily(metric, eps_schedule)
        sups = []
        for member in family.members:
            rm = riemann(member.metric)
            usable = curvature_margin(member.trusted)
            sups.append(float(np.max(np.abs(rm.components[usable.slices()]))))
        for eps, s in zip(eps_schedule, sups):
            report.add_residual(
                f"riemann_sup_eps_{eps:.6g}", s,
                "curvature magnitude of the stabilized metric",
                tolerance=riemann_threshold,
            )
        if max(sups) > riemann_threshold:
            report.set_verdict("NOT-FLAT")
            report.note("curvature persists under stabilization")
            return report, None
        finest = family.members[-1]
        sub = chart.subchart(finest.trusted)
        work = MetricField(
            sub, finest.metric.components[finest.trusted.slices()].copy()
        )
        if origin_node is not None:
            origin_node = tuple(
                int(o) - lo for o, lo in zip(origin_node, finest.trusted.lo)
            )
    else:
        sup = _riemann_sup(metric)
        report.add_residual(
            "riemann_sup", sup,
            "curvature magnitude of the sampled metric",
            tolerance=riemann_threshold,
        )
        if sup > riemann_threshold:
            report.set_verdict("NOT-FLAT")
            report.note("curvature tensor is not small at grid scale")
            return report, None
        work = metric

    frame, signs = build_parallel_frame(work, origin_node=origin_node)
    brackets = bracket_check(frame, work)
    report.add_residual(
        "bracket_sup", brackets["raw_sup"],
        "parallel frame fields commute",
        tolerance=max(100.0 * riemann_threshold, 1e-5),
    )
    report.params["bracket_route_gap"] = brackets["route_gap"]
    coords = integrate_flat_coordinates(frame, origin_node=origin_node)
    resid = verify_flat_pullback(work, coords, signs)
    report.add_residual(
        "pullback_sup", resid["pullback_sup"],
        "coordinate differential pulls the model metric back to g",
        tolerance=pullback_tol,
    )
    report.add_residual(
        "pullback_rms", resid["pullback_rms"],
        "mean-square size of the pullback defect",
        tolerance=pullback_tol,
    )
    report.params["signs"] = [float(s) for s in signs]
    if resid["pullback_sup"] <= pullback_tol:
        report.set_verdict("FLAT")
    else:
        report.set_verdict("INCONCLUSIVE")
        report.note(
            "curvature is small but the constructed chart does not certify "
            "flatness at the requested tolerance"
        )
    return report, coords
