"""Line-to-product splitting: Busemann fields, harmonic representative,
gradient flow, and product-isometry verification.

The pipeline mirrors the classical construction.  Two Busemann
approximant families are built from distance solves toward both ends
of a line, extrapolated in the ray parameter, and cross-checked
(sum bound, subharmonicity, Lipschitz bound).  A harmonic re-solve of
the extrapolated field gives the working potential; its gradient flow
out of the zero level set assembles the candidate product chart, and
the final report measures how far the pulled-back metric is from
dt^2 + g' on the (t, level-set) grid.

Distance fields are computed on a coarse sub-lattice of the requested
window by batched curve shortening (warm-started along the t-schedule,
Richardson-corrected in the path resolution) and interpolated to the
fine nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from .curvature import ricci_lower_eigenvalue_field
from .geodesics import (
    DistanceSolver,
    MetricInterpolator,
    SampledCurve,
    resample_polyline,
    shorten_paths,
)
from .grids import (
    BoxChart,
    MetricField,
    Region,
    TensorGridField,
    TestDensity,
    integrate_density,
    partial_derivative,
    scalar_field,
)
from .operators import OperatorContext, gradient, hessian, laplace_beltrami
from .report import PipelineReport, digest_arrays

__all__ = [
    "BusemannField",
    "SplittingResult",
    "window_region",
    "busemann_approx",
    "busemann_limit",
    "subharmonicity_pairing",
    "laplacian_comparison_check",
    "harmonic_solve",
    "eikonal_check",
    "hessian_vanishing_check",
    "flow_splitting_map",
    "isometry_verification",
    "split_pipeline",
]


# ---------------------------------------------------------------------------
# windows and extrapolation


def window_region(chart, center, half_extent):
    """Node box of physical half-width ``half_extent`` around a point."""
    c_idx = chart.nearest_node(center)
    lo, hi = [], []
    for a in range(chart.dim):
        k = int(round(half_extent / chart.spacing[a]))
        if k < 2:
            raise ValueError("window is narrower than the grid spacing")
        if c_idx[a] - k < 0 or c_idx[a] + k >= chart.shape[a]:
            raise ValueError("window leaves the chart")
        lo.append(c_idx[a] - k)
        hi.append(c_idx[a] + k + 1)
    return Region(tuple(lo), tuple(hi))


def _coarse_axes(chart, region, targets, margin=3):
    """Uniform node-index lattices covering ``region``, one per axis.

    Each axis gets knots ``first + stride * k`` chosen so the knot span
    contains the region, extends up to two strides beyond it where the
    chart allows, and stays ``margin`` node layers away from the chart
    faces: a distance solve started on a face loses accuracy to path
    clipping, and one noisy boundary knot pollutes the interpolant's
    second derivatives deep into the window.  The stride shrinks on
    axes too tight for the margin.
    """
    axes = []
    for a in range(chart.dim):
        ext = region.hi[a] - region.lo[a]
        target = max(int(targets[a]), 2)
        lo_limit = min(margin, region.lo[a])
        hi_limit = max(chart.shape[a] - 1 - margin, region.hi[a] - 1)
        s = max(1, (ext - 1) // (target - 1))
        while True:
            first = max(region.lo[a] - 2 * s, lo_limit)
            need = -((region.hi[a] - 1 - first) // -s) + 1
            if first + (need - 1) * s <= hi_limit or s == 1:
                count = need
                while count - need < 2 and first + count * s <= hi_limit:
                    count += 1
                # charts need five nodes per axis; stretch, then densify
                while count < 5 and first + count * s <= hi_limit:
                    count += 1
                while count < 5 and first - s >= lo_limit:
                    first -= s
                    count += 1
                if count >= 5 or s == 1:
                    break
            s -= 1
        axes.append(first + s * np.arange(count))
    return axes


def _aitken_iterated(seq):
    """Repeated Aitken acceleration down the leading axis."""
    cur = np.asarray(seq, dtype=float)
    while cur.shape[0] >= 3:
        x1, x2 = cur[1:-1], cur[2:]
        d1 = x1 - cur[:-2]
        d2 = x2 - x1
        den = d2 - d1
        safe = np.abs(den) > 1e-12 * (np.abs(d1) + np.abs(d2) + 1e-300)
        den = np.where(safe, den, 1.0)
        cur = np.where(safe, x2 - d2 * d2 / den, x2)
    return cur[-1]


def _curve_point(c, t):
    if isinstance(c, SampledCurve):
        return np.asarray(c.point_at(float(t)), dtype=float)
    return np.asarray(c(float(t)), dtype=float)


def _reverse_curve(c):
    if isinstance(c, SampledCurve):
        vel = None if c.velocities is None else -c.velocities[::-1]
        return SampledCurve(-c.times[::-1], c.points[::-1], vel)
    return lambda t: c(-t)


# ---------------------------------------------------------------------------
# Busemann approximants


@dataclass
class BusemannField:
    """Extrapolated Busemann field on a window, with its diagnostics.

    ``approximants`` holds the raw per-t values on the coarse lattice
    so downstream consumers can extrapolate derived quantities
    themselves (sums of opposite fields in particular).
    """

    b: TensorGridField
    t_schedule: tuple
    residual: float
    lipschitz_bound: float | None
    approximants: np.ndarray
    coarse_chart: BoxChart
    monotonicity_defect: float
    window: Region


def _distance_field(interp, starts, target, n_path, init=None,
                    rel_tol=1e-10, max_iter=4000):
    """Shortened path lengths from many starts to one target.

    Returns (lengths, paths, all_converged).  Lengths carry one
    Richardson step against a half-resolution re-solve, cancelling the
    leading quadrature bias of the polyline length.
    """
    target = np.asarray(target, dtype=float)
    P, n = starts.shape
    n_path |= 1
    if init is None:
        s = np.linspace(0.0, 1.0, n_path)[None, :, None]
        paths = starts[:, None, :] * (1.0 - s) + target[None, None, :] * s
    else:
        paths = np.empty((P, n_path, n))
        for p in range(P):
            paths[p] = resample_polyline(
                np.vstack([init[p], target[None]]), n_path
            )
        paths[:, 0] = starts
    paths[:, -1] = target
    out, L, conv, _ = shorten_paths(
        interp, paths, rel_tol=rel_tol, max_iter=max_iter
    )
    _, Lh, _, _ = shorten_paths(
        interp, out[:, ::2], rel_tol=rel_tol, max_iter=max(200, max_iter // 10)
    )
    return L + (L - Lh) / 3.0, out, bool(np.all(conv))


def busemann_approx(ctx, c, t, x):
    """Single approximant value: t minus the distance to c(t)."""
    solver = getattr(ctx, "_distance_solver", None)
    if solver is None:
        solver = DistanceSolver(ctx.metric)
        ctx._distance_solver = solver
    target = _curve_point(c, t)
    if not bool(ctx.chart.contains(target)[0]):
        raise ValueError("curve point outside the chart")
    return float(t) - solver.distance(np.asarray(x, dtype=float), target).value


def busemann_limit(ctx, c, t_schedule, region=None, coarse_target=None,
                   n_path=None, rel_tol=1e-10, max_iter=4000,
                   lipschitz_pairs=6, seed=0):
    """Extrapolated Busemann field of a ray on a window of the chart.

    Approximant fields are computed on a coarse sub-lattice for every
    schedule entry (warm-starting each solve from the previous one),
    accelerated nodewise, and interpolated to the fine window nodes.
    The residual is the sup of the last raw increment; monotonicity
    defects flag distance-solver noise.  ``coarse_target`` is a knot
    count, scalar or one per axis.
    """
    metric = ctx.metric
    chart = metric.chart
    n = chart.dim
    ts = [float(t) for t in t_schedule]
    if len(ts) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("need an increasing schedule with at least two entries")
    for t in ts:
        if not bool(chart.contains(_curve_point(c, t))[0]):
            raise ValueError(f"curve point at parameter {t} outside the chart")
    if region is None:
        half = 0.3 * min(u - l for l, u in zip(chart.lower, chart.upper))
        region = window_region(chart, _curve_point(c, 0.0), half)
    if coarse_target is None:
        # Tie the coarse cell to the grid spacing (about six nodes per
        # cell in 2D, ten in 3D) so refining the grid refines the
        # lattice the limit field is built on, not just its sampling.
        cell = 6 if n == 2 else 10
        coarse_target = max(
            5 if n == 2 else 3, min(region.extents()) // cell + 1
        )
    targets = (
        (int(coarse_target),) * n
        if np.isscalar(coarse_target)
        else tuple(int(t) for t in coarse_target)
    )
    if len(targets) != n:
        raise ValueError("coarse_target must be a scalar or one per axis")
    axes_idx = _coarse_axes(chart, region, targets)
    coarse_shape = tuple(len(ax) for ax in axes_idx)
    coords = [chart.lower[a] + chart.spacing[a] * axes_idx[a] for a in range(n)]
    starts = np.stack(
        np.meshgrid(*coords, indexing="ij"), axis=-1
    ).reshape(-1, n)
    interp = MetricInterpolator(metric)
    if n_path is None:
        far = max(
            float(np.max(np.linalg.norm(starts - _curve_point(c, t), axis=1)))
            for t in (ts[0], ts[-1])
        )
        n_path = int(np.clip(np.ceil(far / max(chart.spacing)), 48, 768))
    n_path |= 1

    vals = []
    paths = None
    mono_defect = 0.0
    for t in ts:
        target = _curve_point(c, t)
        L, paths, _ = _distance_field(
            interp, starts, target, n_path, init=paths,
            rel_tol=rel_tol, max_iter=max_iter,
        )
        bt = t - L
        if vals:
            mono_defect = max(mono_defect, float(np.max(vals[-1] - bt)))
        vals.append(bt)
    appr = np.stack(vals).reshape((len(ts),) + coarse_shape)
    limit = _aitken_iterated(appr)
    residual = float(np.max(np.abs(appr[-1] - appr[-2])))

    coarse_chart = BoxChart(
        tuple(float(cx[0]) for cx in coords),
        tuple(float(cx[-1]) for cx in coords),
        coarse_shape,
    )
    coarse_field = scalar_field(coarse_chart, limit)
    sub = chart.subchart(region)
    fine = coarse_field.interpolate(sub.node_mesh().reshape(-1, n))
    b_field = scalar_field(sub, fine.reshape(sub.shape))

    lip = None
    if lipschitz_pairs:
        rng = np.random.default_rng(seed)
        flat_pts = sub.node_mesh().reshape(-1, n)
        flat_vals = b_field.components.reshape(-1)
        ratios = []
        for i, j in rng.choice(len(flat_pts), size=(lipschitz_pairs, 2)):
            qa, qb = flat_pts[i], flat_pts[j]
            if np.linalg.norm(qa - qb) < 2.0 * max(chart.spacing):
                continue
            seed_path = resample_polyline(np.vstack([qa, qb]), 33)[None]
            _, sl, _, _ = shorten_paths(
                interp, seed_path, rel_tol=1e-9, max_iter=600
            )
            if sl[0] > 0.0:
                ratios.append(abs(flat_vals[i] - flat_vals[j]) / float(sl[0]))
        lip = float(max(ratios)) if ratios else None
    return BusemannField(
        b_field, tuple(ts), residual, lip, appr, coarse_chart,
        float(mono_defect), region,
    )


# ---------------------------------------------------------------------------
# weak inequalities


def subharmonicity_pairing(b, ctx, phi):
    """Weak Laplacian of b against a test density: int b * lap(phi) dVol.

    The window carries a four-node margin past the bump support; each
    stencil pass widens the numerical support of the differentiated
    bump by the stencil half-width, and that ring carries mass.
    """
    if b.chart != ctx.chart:
        raise ValueError("field and context live on different charts")
    lphi = laplace_beltrami(phi.samples, ctx)
    dens = scalar_field(ctx.chart, b.components * lphi.components)
    return float(
        integrate_density(
            dens, metric=ctx.metric,
            region=phi.support_region(margin_nodes=4),
        )
    )


def _default_bumps(chart, count=3, radius_frac=0.2, shift_frac=0.12):
    ext = [u - l for l, u in zip(chart.lower, chart.upper)]
    mid = [0.5 * (l + u) for l, u in zip(chart.lower, chart.upper)]
    # Differentiating a bump smears its numerical support four nodes
    # outward, and the outermost two node layers of the chart use
    # one-sided stencils; keep the whole smeared support clear of both.
    # The radius wins over the off-center shift when room is tight: a
    # barely-resolved bump ruins the quadrature, a small shift does not.
    clearance = 6.0 * max(chart.spacing)
    radius = min(radius_frac * min(ext), 0.5 * min(ext) - clearance)
    if radius < 3.0 * max(chart.spacing) * (1.0 - 1e-9):
        raise ValueError("chart too small for interior test densities")
    bumps = [TestDensity(chart, tuple(mid), radius)]
    for sign in (1.0, -1.0):
        for a in range(chart.dim):
            if len(bumps) >= count:
                return bumps
            room = 0.5 * ext[a] - clearance - radius
            shift = sign * min(shift_frac * ext[a], max(room, 0.0))
            if shift == 0.0:
                # no lateral room on this axis; a clone of the centered
                # bump adds nothing to the suite
                continue
            center = list(mid)
            center[a] += shift
            bumps.append(TestDensity(chart, tuple(center), radius))
    return bumps


def laplacian_comparison_check(ctx, c, t, delta, phis=None, tau=1e-3,
                               seed=0, coarse_target=None, n_path=None):
    """Weak comparison bound for the Laplacian of a distance function.

    Pairs d(., c(t)) weakly against test densities and checks each
    value against the model bound (n-1) sqrt(delta) coth(sqrt(delta) d)
    (its 1/d limit when delta = 0) integrated against the density.
    A lower bound hypothesis that is too optimistic for the metric at
    hand shows up as a positive margin beyond tau.
    """
    metric = ctx.metric
    chart = ctx.chart
    n = chart.dim
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    target = _curve_point(c, t)
    if not bool(chart.contains(target)[0]):
        raise ValueError("curve point outside the chart")
    if phis is None:
        rng = np.random.default_rng(seed)
        ext = min(u - l for l, u in zip(chart.lower, chart.upper))
        radius = 0.16 * ext
        phis = []
        for _ in range(64):
            if len(phis) == 3:
                break
            center = np.array([
                rng.uniform(l + 0.3 * (u - l), u - 0.3 * (u - l))
                for l, u in zip(chart.lower, chart.upper)
            ])
            if np.linalg.norm(center - target) > radius + 0.12 * ext:
                phis.append(TestDensity(chart, tuple(center), radius))
        if len(phis) < 3:
            raise ValueError("could not place test densities away from c(t)")
    if coarse_target is None:
        coarse_target = 9 if n == 2 else 5
    interp = MetricInterpolator(metric)
    report = PipelineReport(
        "laplacian_comparison",
        inputs_digest=digest_arrays(metric.components, target, t, delta),
        params={"t": float(t), "delta": float(delta), "tau": float(tau),
                "n_test_densities": len(phis)},
    )
    worst = -np.inf
    for k, phi in enumerate(phis):
        supp = phi.support_region(margin_nodes=4)
        axes_idx = _coarse_axes(chart, supp, (coarse_target,) * n)
        coords = [chart.lower[a] + chart.spacing[a] * ax for a, ax in
                  enumerate(axes_idx)]
        cshape = tuple(len(ax) for ax in axes_idx)
        starts = np.stack(
            np.meshgrid(*coords, indexing="ij"), axis=-1
        ).reshape(-1, n)
        if n_path is None:
            far = float(np.max(np.linalg.norm(starts - target, axis=1)))
            m = int(np.clip(np.ceil(far / max(chart.spacing)), 48, 384))
        else:
            m = n_path
        L, _, _ = _distance_field(interp, starts, target, m)
        cchart = BoxChart(
            tuple(float(cx[0]) for cx in coords),
            tuple(float(cx[-1]) for cx in coords),
            cshape,
        )
        cfield = scalar_field(cchart, L.reshape(cshape))
        subch = chart.subchart(supp)
        dfine = cfield.interpolate(subch.node_mesh().reshape(-1, n))
        dfine = dfine.reshape(subch.shape)
        dfull = np.zeros(chart.shape)
        dfull[supp.slices()] = dfine
        lphi = laplace_beltrami(phi.samples, ctx)
        lhs = integrate_density(
            scalar_field(chart, dfull * lphi.components),
            metric=metric, region=supp,
        )
        with np.errstate(divide="ignore"):
            if delta == 0.0:
                comp = (n - 1) / np.maximum(dfull, 1e-300)
            else:
                rd = np.sqrt(delta)
                comp = (n - 1) * rd / np.tanh(rd * np.maximum(dfull, 1e-300))
        rhs = integrate_density(
            scalar_field(chart, comp * phi.samples.components),
            metric=metric, region=supp,
        )
        margin = float(lhs - rhs)
        worst = max(worst, margin)
        report.add_residual(
            f"comparison_margin_{k}", margin,
            "weak Laplacian of the distance stays below the model bound",
            tolerance=tau, passed=margin <= tau,
        )
    report.set_verdict("PASS" if worst <= tau else "FAIL")
    return report


# ---------------------------------------------------------------------------
# harmonic representative


def harmonic_solve(ctx, boundary_data, rtol=1e-10, maxiter=None):
    """Dirichlet solve of the metric Laplace equation on the chart box.

    The divergence-form coefficients sqrt(det g) g^{ab} are split
    nodewise into nonnegative weights on axis and plane-diagonal grid
    directions, giving a symmetric M-matrix system (so the discrete
    maximum principle holds exactly) solved by Jacobi-preconditioned
    conjugate gradients.  Boundary values are read from
    ``boundary_data`` on all faces.
    """
    chart = ctx.chart
    if boundary_data.chart != chart:
        raise ValueError("boundary data lives on a different chart")
    n = chart.dim
    shape = chart.shape
    h = np.asarray(chart.spacing)
    cell = float(np.prod(h))
    a = ctx.volume_weight[..., None, None] * ctx.ginv

    dirs = []
    scale = float(np.max(np.abs(a)))
    for al in range(n):
        coef = a[..., al, al] / h[al] ** 2
        for be in range(n):
            if be != al:
                coef = coef - np.abs(a[..., al, be]) / (h[al] * h[be])
        if float(np.min(coef)) < -1e-10 * scale:
            raise ValueError(
                "cross terms dominate an axis coefficient; the monotone "
                "direction splitting does not apply to this metric"
            )
        off = np.zeros(n, dtype=int)
        off[al] = 1
        dirs.append((off, np.maximum(coef, 0.0)))
    for al in range(n):
        for be in range(al + 1, n):
            cross = a[..., al, be] / (h[al] * h[be])
            off_p = np.zeros(n, dtype=int)
            off_p[al] = 1
            off_p[be] = 1
            off_m = np.zeros(n, dtype=int)
            off_m[al] = 1
            off_m[be] = -1
            dirs.append((off_p, np.maximum(cross, 0.0)))
            dirs.append((off_m, np.maximum(-cross, 0.0)))

    N = int(np.prod(shape))
    idx = np.arange(N).reshape(shape)
    rows, cols, vals = [], [], []
    diag = np.zeros(N)
    for off, coef in dirs:
        src_sl = tuple(
            slice(max(0, -o), s - max(0, o)) for o, s in zip(off, shape)
        )
        dst_sl = tuple(
            slice(max(0, o), s - max(0, -o)) for o, s in zip(off, shape)
        )
        w = 0.5 * (coef[src_sl] + coef[dst_sl]).ravel() * cell
        s_i = idx[src_sl].ravel()
        d_i = idx[dst_sl].ravel()
        rows.extend([s_i, d_i])
        cols.extend([d_i, s_i])
        vals.extend([-w, -w])
        np.add.at(diag, s_i, w)
        np.add.at(diag, d_i, w)
    rows.append(np.arange(N))
    cols.append(np.arange(N))
    vals.append(diag)
    K = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )

    bmask = np.zeros(shape, dtype=bool)
    for ax in range(n):
        sl = [slice(None)] * n
        sl[ax] = 0
        bmask[tuple(sl)] = True
        sl[ax] = shape[ax] - 1
        bmask[tuple(sl)] = True
    bflat = bmask.ravel()
    interior = np.flatnonzero(~bflat)
    bnd = np.flatnonzero(bflat)
    ub = boundary_data.components.ravel()[bnd]
    Kii = K[interior][:, interior]
    rhs = -K[interior][:, bnd] @ ub
    dprec = Kii.diagonal()
    M = sparse.diags(1.0 / dprec)
    iters = [0]

    def count(_):
        iters[0] += 1

    ui, info = cg(
        Kii, rhs, rtol=rtol, atol=0.0, M=M, callback=count,
        maxiter=maxiter or 50 * int(np.ceil(np.sqrt(len(interior)))),
    )
    resid = float(
        np.linalg.norm(Kii @ ui - rhs) / max(np.linalg.norm(rhs), 1e-300)
    )
    if info != 0:
        raise RuntimeError(
            f"conjugate gradients stopped early (info={info}, relative "
            f"residual {resid:.3e})"
        )
    u = np.empty(N)
    u[bnd] = ub
    u[interior] = ui
    out = scalar_field(chart, u.reshape(shape))
    out.solver_info = {"iterations": iters[0], "relative_residual": resid}
    return out


# ---------------------------------------------------------------------------
# eikonal / Hessian checks


def eikonal_check(b, ctx, region=None, tol=5e-3):
    """Deviation of |grad b| from one on a margin-shrunk region."""
    n = ctx.chart.dim
    df = np.stack(
        [partial_derivative(b, a).components for a in range(n)], axis=-1
    )
    speed = np.sqrt(
        np.maximum(np.einsum("...ab,...a,...b->...", ctx.ginv, df, df), 0.0)
    )
    dev = speed - 1.0
    region = region or ctx.chart.full_region().shrink(2)
    sl = region.slices()
    sup = float(np.max(np.abs(dev[sl])))
    rms = float(np.sqrt(np.mean(dev[sl] ** 2)))
    report = PipelineReport(
        "eikonal",
        inputs_digest=digest_arrays(b.components),
        params={"tol": float(tol)},
    )
    report.add_residual(
        "eikonal_sup", sup, "gradient of the potential has unit norm",
        tolerance=tol,
    )
    report.add_residual(
        "eikonal_rms", rms, "mean-square unit-norm deviation", tolerance=tol,
    )
    report.set_verdict("PASS" if sup <= tol else "FAIL")
    return report


def hessian_vanishing_check(b, ctx, phi_set=None, tol=5e-3, region=None):
    """Two routes to |Hess b|: pointwise sup and Bochner-style pairing.

    The pairing expresses the squared Hessian integrated against each
    test density through first derivatives of b only (moving the
    remaining derivatives onto the density), so the two routes carry
    independent discretization noise.
    """
    chart = ctx.chart
    H = hessian(b, ctx).components
    hnorm = np.sqrt(np.maximum(np.einsum(
        "...ac,...bd,...ab,...cd->...", ctx.ginv, ctx.ginv, H, H
    ), 0.0))
    # two derivative passes cost two node layers each
    region = region or chart.full_region().shrink(4)
    sup = float(np.max(hnorm[region.slices()]))
    report = PipelineReport(
        "hessian_vanishing",
        inputs_digest=digest_arrays(b.components),
        params={"tol": float(tol)},
    )
    report.add_residual(
        "hessian_sup", sup, "second covariant derivative of the potential "
        "vanishes", tolerance=tol,
    )
    if phi_set is None:
        phi_set = _default_bumps(chart)
    gf = gradient(b, ctx)
    e2 = np.einsum("...ab,...a,...b->...", ctx.metric.components,
                   gf.components, gf.components)
    ric = ctx.ricci_field.components
    ric_q = np.einsum("...ab,...a,...b->...", ric, gf.components, gf.components)
    lb = laplace_beltrami(b, ctx).components
    ok = True
    for k, phi in enumerate(phi_set):
        supp = phi.support_region(margin_nodes=4)
        lphi = laplace_beltrami(phi.samples, ctx)
        gphi = gradient(phi.samples, ctx)
        w1 = integrate_density(
            scalar_field(chart, 0.5 * e2 * lphi.components),
            metric=ctx.metric, region=supp,
        )
        w2 = integrate_density(
            scalar_field(chart, ric_q * phi.samples.components),
            metric=ctx.metric, region=supp,
        )
        cross = np.einsum("...ab,...a,...b->...", ctx.metric.components,
                          gf.components, gphi.components)
        w3 = integrate_density(
            scalar_field(chart, lb * (phi.samples.components * lb + cross)),
            metric=ctx.metric, region=supp,
        )
        pairing = float(w1 - w2 + w3)
        ok = ok and abs(pairing) <= tol
        report.add_residual(
            f"bochner_route_{k}", pairing,
            "squared Hessian paired with a test density",
            tolerance=tol,
        )
    report.set_verdict("PASS" if (sup <= tol and ok) else "FAIL")
    return report


# ---------------------------------------------------------------------------
# flow map and isometry


@dataclass
class SplittingResult:
    """Candidate product structure produced by the gradient flow."""

    b: object
    level_set: np.ndarray
    level_mask: np.ndarray
    flow_map: np.ndarray
    t_grid: np.ndarray
    induced_metric: np.ndarray
    pullback: dict
    valid: np.ndarray
    isometry_residual: float
    trimmed: bool


def _masked_interpolate(field, pts, alive):
    safe = np.array(pts)
    mid = [0.5 * (l + u) for l, u in zip(field.chart.lower, field.chart.upper)]
    safe[~alive] = mid
    return field.interpolate(safe)


def flow_splitting_map(ctx, b, t_half=None, n_t=17, substeps=2, z_margin=2):
    """Flow the gradient of b out of its zero level set.

    Roots of b are located along axis-0 grid lines (linear bracket plus
    Newton refinement on the interpolant), the gradient flow is
    integrated over a symmetric t-grid, and the pulled-back metric is
    assembled from the flow velocity and transverse finite differences.
    Paths that would leave the chart are masked and the result flagged
    as trimmed.
    """
    chart = ctx.chart
    n = chart.dim
    shape = chart.shape
    X = gradient(b, ctx)
    B = b.components

    cross = B[:-1] * B[1:] <= 0.0
    k_center = shape[0] // 2
    karr = np.arange(shape[0] - 1)
    penalty = np.where(
        cross, np.abs(karr - k_center).reshape((-1,) + (1,) * (n - 1)),
        shape[0],
    )
    k_star = np.argmin(penalty, axis=0)
    has_root = cross.any(axis=0)
    b_lo = np.take_along_axis(B, k_star[None], axis=0)[0]
    b_hi = np.take_along_axis(B, (k_star + 1)[None], axis=0)[0]
    h0 = chart.spacing[0]
    denom = np.where(np.abs(b_hi - b_lo) > 1e-300, b_hi - b_lo, 1.0)
    x0 = chart.lower[0] + h0 * (k_star - b_lo / denom)
    x0 = np.clip(x0, chart.lower[0], chart.upper[0])

    tr_axes = [chart.axis_coords(a) for a in range(1, n)]
    zmesh = (
        np.stack(np.meshgrid(*tr_axes, indexing="ij"), axis=-1)
        if n > 1 else np.zeros((1, 0))
    )
    pts = np.concatenate([x0[..., None], zmesh], axis=-1)
    flat = pts.reshape(-1, n)
    alive = has_root.reshape(-1).copy()

    db0 = partial_derivative(b, 0)
    for _ in range(3):
        f = _masked_interpolate(b, flat, alive)
        fp = _masked_interpolate(db0, flat, alive)
        fp = np.where(np.abs(fp) > 1e-12, fp, 1.0)
        step = np.clip(f / fp, -2.0 * h0, 2.0 * h0)
        flat[alive, 0] -= step[alive]
        flat[:, 0] = np.clip(flat[:, 0], chart.lower[0], chart.upper[0])
    roots = flat.reshape(pts.shape)

    if t_half is None:
        t_half = 0.3 * (chart.upper[0] - chart.lower[0])
    m0 = n_t // 2
    n_t = 2 * m0 + 1  # symmetric grid with an exact zero entry
    t_grid = np.linspace(-t_half, t_half, n_t)
    dt = t_grid[1] - t_grid[0]

    Zshape = pts.shape[:-1]
    Phi = np.full((n_t,) + Zshape + (n,), np.nan)
    vel = np.full_like(Phi, np.nan)
    Phi[m0] = roots
    vel[m0] = _masked_interpolate(X, flat, alive).reshape(Zshape + (n,))
    vel[m0][~has_root] = np.nan
    Phi[m0][~has_root] = np.nan
    trimmed = False

    def rk4_step(x, sgn, alive):
        hstep = sgn * dt / substeps
        for _ in range(substeps):
            k1 = _masked_interpolate(X, x, alive)
            k2 = _masked_interpolate(X, chart.clip(x + 0.5 * hstep * k1), alive)
            k3 = _masked_interpolate(X, chart.clip(x + 0.5 * hstep * k2), alive)
            k4 = _masked_interpolate(X, chart.clip(x + hstep * k3), alive)
            x = x + (hstep / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            inside = chart.contains(x, slack=0.0)
            alive = alive & inside
            x = chart.clip(x)
        return x, alive

    for sgn in (1, -1):
        x = flat.copy()
        live = alive.copy()
        for step_i in range(1, m0 + 1):
            x, live = rk4_step(x, sgn, live)
            m = m0 + sgn * step_i
            slot = x.reshape(Zshape + (n,)).copy()
            vslot = _masked_interpolate(X, x, live).reshape(Zshape + (n,))
            lm = live.reshape(Zshape)
            slot[~lm] = np.nan
            vslot[~lm] = np.nan
            if not np.all(live == alive):
                trimmed = True
            Phi[m] = slot
            vel[m] = vslot

    hs = chart.spacing
    dz = [
        np.gradient(Phi, hs[a], axis=1 + (a - 1))
        for a in range(1, n)
    ]
    gP = _masked_interpolate(
        ctx.metric, Phi.reshape(-1, n), np.isfinite(Phi.reshape(-1, n)).all(axis=1)
    ).reshape(Phi.shape[:-1] + (n, n))
    P00 = np.einsum("...ab,...a,...b->...", gP, vel, vel)
    P0i = np.stack(
        [np.einsum("...ab,...a,...b->...", gP, vel, z) for z in dz], axis=-1
    ) if n > 1 else np.zeros(P00.shape + (0,))
    Pij = np.stack(
        [
            np.stack(
                [np.einsum("...ab,...a,...b->...", gP, zi, zj) for zj in dz],
                axis=-1,
            )
            for zi in dz
        ],
        axis=-2,
    ) if n > 1 else np.zeros(P00.shape + (0, 0))

    valid_z = has_root & np.isfinite(Phi[..., 0]).all(axis=0)
    if n > 1 and z_margin:
        valid_z = ndimage.binary_erosion(
            valid_z, structure=np.ones((3,) * (n - 1), dtype=bool),
            iterations=z_margin, border_value=0,
        )
    if not np.any(valid_z):
        raise RuntimeError("no usable level-set samples survive masking")
    induced = Pij[m0]
    resid = max(
        float(np.max(np.abs(P00[:, valid_z] - 1.0))),
        float(np.max(np.abs(P0i[:, valid_z]))) if n > 1 else 0.0,
        float(np.max(np.abs(Pij[:, valid_z] - induced[None, valid_z])))
        if n > 1 else 0.0,
    )
    return SplittingResult(
        b=b,
        level_set=roots,
        level_mask=has_root,
        flow_map=Phi,
        t_grid=t_grid,
        induced_metric=induced,
        pullback={"P00": P00, "P0i": P0i, "Pij": Pij},
        valid=valid_z,
        isometry_residual=resid,
        trimmed=trimmed,
    )


def isometry_verification(res, ctx, tol_iso=1e-2):
    """Product-form residuals of the flow pullback, as a report."""
    valid = res.valid
    m0 = len(res.t_grid) // 2
    P00 = res.pullback["P00"]
    P0i = res.pullback["P0i"]
    Pij = res.pullback["Pij"]
    speed = float(np.max(np.abs(P00[:, valid] - 1.0)))
    orth = float(np.max(np.abs(P0i[:, valid]))) if P0i.size else 0.0
    tinv = (
        float(np.max(np.abs(Pij[:, valid] - Pij[m0][None, valid])))
        if Pij.size else 0.0
    )
    report = PipelineReport(
        "isometry_verification",
        inputs_digest=digest_arrays(res.flow_map[np.isfinite(res.flow_map)]),
        params={"tol_iso": float(tol_iso), "t_half": float(res.t_grid[-1]),
                "trimmed": bool(res.trimmed)},
    )
    report.add_residual(
        "flow_speed", speed, "flow direction has unit length", tolerance=tol_iso)
    report.add_residual(
        "orthogonality", orth,
        "flow direction stays orthogonal to the transported level set",
        tolerance=tol_iso,
    )
    report.add_residual(
        "transverse_invariance", tinv,
        "transverse inner products do not change along the flow",
        tolerance=tol_iso,
    )
    report.add_residual(
        "pullback_residual", res.isometry_residual,
        "pulled-back metric equals dt^2 plus the level-set metric",
        tolerance=tol_iso,
    )
    report.set_verdict("PASS" if res.isometry_residual <= tol_iso else "FAIL")
    return report


# ---------------------------------------------------------------------------
# pipeline


def split_pipeline(metric, line, t_max, t_schedule=None, window_half=None,
                   coarse_target=None, n_path=None, tol_eik=5e-3,
                   tol_hess=5e-3, tol_iso=1e-2, tol_sum=1e-3, tau=1e-3,
                   n_t=17, rel_tol=1e-10, seed=0):
    """Full line-to-product chain with a consolidated report.

    Busemann fields toward both ends of the line, their extrapolated
    sum bound, subharmonicity pairings, the harmonic representative,
    eikonal / Hessian checks, and the flow-map isometry residuals are
    all computed on a window around line parameter zero and merged into
    one PASS/FAIL report.
    """
    chart = metric.chart
    n = chart.dim
    ctx = OperatorContext(metric)
    if t_schedule is None:
        rho = 1.3
        t_schedule = [t_max / rho**k for k in range(4, -1, -1)]
    center = _curve_point(line, 0.0)
    if window_half is None:
        tr = min((chart.upper[a] - chart.lower[a]) / 2 for a in range(1, n))
        window_half = 0.45 * tr
    region = window_region(chart, center, window_half)

    report = PipelineReport(
        "splitting",
        inputs_digest=digest_arrays(metric.components, center, float(t_max)),
        params={
            "t_max": float(t_max),
            "t_schedule": [float(t) for t in t_schedule],
            "window_half": float(window_half),
            "tol_eik": float(tol_eik), "tol_hess": float(tol_hess),
            "tol_iso": float(tol_iso), "tol_sum": float(tol_sum),
            "seed": int(seed),
        },
    )
    tr_diam = min(chart.upper[a] - chart.lower[a] for a in range(1, n))
    report.params["t_max_over_transverse_diameter"] = float(t_max) / tr_diam

    if coarse_target is None:
        # The limit field grows linearly along the line, so three knots
        # resolve that axis; transverse cells track the grid spacing.
        v = np.abs(np.asarray(line.velocity_at(0.0), dtype=float))
        line_axis = int(np.argmax(v))
        cell = 6 if n == 2 else 10
        coarse_target = tuple(
            3 if a == line_axis else max(
                5 if n == 2 else 3,
                (region.hi[a] - region.lo[a]) // cell + 1,
            )
            for a in range(n)
        )

    bp = busemann_limit(ctx, line, t_schedule, region=region,
                        coarse_target=coarse_target, n_path=n_path,
                        rel_tol=rel_tol, seed=seed)
    bm = busemann_limit(ctx, _reverse_curve(line), t_schedule, region=region,
                        coarse_target=coarse_target, n_path=n_path,
                        rel_tol=rel_tol, seed=seed + 1)
    ssum = _aitken_iterated(bp.approximants + bm.approximants)
    line_idx = (slice(None),) + bp.coarse_chart.nearest_node(center)[1:]
    report.add_residual(
        "busemann_sum_sup", float(np.max(ssum)),
        "opposite Busemann functions sum to at most zero",
        tolerance=tol_sum, passed=float(np.max(ssum)) <= tol_sum,
    )
    report.add_residual(
        "busemann_sum_on_line", float(np.max(np.abs(ssum[line_idx]))),
        "the sum vanishes along the line itself", tolerance=tol_sum,
    )
    report.add_residual(
        "busemann_extrapolation_residual", max(bp.residual, bm.residual),
        "size of the last raw increment in the ray parameter",
    )
    report.add_residual(
        "busemann_monotonicity_defect",
        max(bp.monotonicity_defect, bm.monotonicity_defect),
        "approximants are nondecreasing in the ray parameter",
        tolerance=10.0 * rel_tol * float(t_max) + 1e-6,
    )
    for tag, bf in (("plus", bp), ("minus", bm)):
        if bf.lipschitz_bound is not None:
            report.add_residual(
                f"lipschitz_excess_{tag}", max(0.0, bf.lipschitz_bound - 1.0),
                "Busemann field is 1-Lipschitz on sampled pairs",
                tolerance=5e-3,
            )

    sub = chart.subchart(region)
    gwin = MetricField(sub, metric.components[region.slices()].copy())
    ctx_win = OperatorContext(gwin)
    kappa = ricci_lower_eigenvalue_field(gwin)
    inner = sub.full_region().shrink(4)
    report.params["ricci_lower_eigenvalue_min"] = float(
        np.min(kappa.components[inner.slices()])
    )

    phis = _default_bumps(sub)
    sub_min = np.inf
    for bf in (bp, bm):
        for phi in phis:
            sub_min = min(sub_min, subharmonicity_pairing(bf.b, ctx_win, phi))
    report.add_residual(
        "subharmonicity_min", float(sub_min),
        "weak Laplacians of both Busemann fields are nonnegative",
        tolerance=tau, passed=sub_min >= -tau,
    )

    u = harmonic_solve(ctx_win, bp.b, rtol=max(rel_tol, 1e-12))
    gap = float(np.max(np.abs(u.components - bp.b.components)))
    report.add_residual(
        "harmonic_representative_gap", gap,
        "harmonic re-solve reproduces the extrapolated field",
    )
    bvals = bp.b.components
    bmask = np.zeros(sub.shape, dtype=bool)
    for ax in range(n):
        sl = [slice(None)] * n
        sl[ax] = 0
        bmask[tuple(sl)] = True
        sl[ax] = sub.shape[ax] - 1
        bmask[tuple(sl)] = True
    over = max(
        float(np.max(u.components) - np.max(bvals[bmask])),
        float(np.min(bvals[bmask]) - np.min(u.components)),
    )
    report.add_residual(
        "max_principle_defect", max(over, 0.0),
        "solution range stays inside the boundary-data range",
        tolerance=1e-9,
    )

    eik = eikonal_check(u, ctx_win, tol=tol_eik)
    report.add_residual(
        "eikonal_sup", eik.residual("eikonal_sup")["value"],
        "gradient of the potential has unit norm", tolerance=tol_eik,
    )
    hess = hessian_vanishing_check(u, ctx_win, phi_set=phis, tol=tol_hess)
    report.add_residual(
        "hessian_sup", hess.residual("hessian_sup")["value"],
        "second covariant derivative of the potential vanishes",
        tolerance=tol_hess,
    )
    for entry in hess.residuals:
        if entry["name"].startswith("bochner_route"):
            report.add_residual(
                entry["name"], entry["value"],
                "squared Hessian paired with a test density",
                tolerance=tol_hess,
            )

    res = flow_splitting_map(ctx_win, u, n_t=n_t)
    iso = isometry_verification(res, ctx_win, tol_iso=tol_iso)
    for name in ("flow_speed", "orthogonality", "transverse_invariance",
                 "pullback_residual"):
        entry = iso.residual(name)
        report.add_residual(
            name, entry["value"], entry["checks"], tolerance=tol_iso,
        )
    if res.trimmed:
        report.note("gradient flow left the window; t-range was masked")

    verdict = (
        report.residual("busemann_sum_sup")["passed"]
        and report.residual("subharmonicity_min")["passed"]
        and eik.verdict == "PASS"
        and hess.verdict == "PASS"
        and iso.verdict == "PASS"
    )
    report.set_verdict("PASS" if verdict else "FAIL")
    res.b = BusemannField(
        u, bp.t_schedule, bp.residual, bp.lipschitz_bound,
        bp.approximants, bp.coarse_chart, bp.monotonicity_defect, region,
    )
    return res, report
