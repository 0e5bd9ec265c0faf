"""Componentwise tensor mollification on box charts.

The smoothing kernel is a tensor product of one-dimensional normalized
bumps with per-axis support radius eps.  Discrete convolution uses
Simpson-weighted kernel samples renormalized to exact unit mass, so
constants are reproduced to rounding and nonnegative-definite fields
stay nonnegative.  Values are exact convolutions only where the full
stencil fits inside the box; that node sub-box is the trusted region
and is recorded on every result.  Outside it the default path divides
by the convolved indicator (a renormalized boundary average), which
keeps the output smooth and signature-friendly but is not the
convolution; callers must restrict claims to the trusted region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grids import (
    MetricField,
    Region,
    TensorGridField,
    _BUMP_MASS_1D,
    bump_profile,
    integrate_density,
    scalar_field,
    simpson_weights,
)
from .report import PipelineReport, digest_arrays

__all__ = [
    "MollifierKernel",
    "CutoffSystem",
    "MollifyResult",
    "StabilizationError",
    "StabilizedMetric",
    "StabilizedMetricFamily",
    "mollify_tensor",
    "stabilized_metric",
    "distance_comparison_check",
    "convergence_report",
]


class StabilizationError(RuntimeError):
    """Mollified metric failed nondegeneracy or changed signature."""


class MollifierKernel:
    """Separable discrete mollifier with support radius eps per axis.

    Requires eps >= 2 * max(spacing) so every axis window holds at least
    five samples.  Axis weights are Simpson-weighted bump samples scaled
    to unit sum.
    """

    def __init__(self, chart, eps):
        eps = float(eps)
        hmax = max(chart.spacing)
        if eps < 2.0 * hmax * (1.0 - 1e-12):
            raise ValueError(f"eps {eps} below coupling floor 2*max(h) = {2*hmax}")
        self.chart = chart
        self.eps = eps
        self.axis_weights = []
        for a in range(chart.dim):
            h = chart.spacing[a]
            k = int(np.floor(eps / h + 1e-12))
            t = (h * np.arange(-k, k + 1)) / eps
            vals = bump_profile(t) / (eps * _BUMP_MASS_1D)
            w = simpson_weights(2 * k + 1, h) * vals
            self.axis_weights.append(w / np.sum(w))
        self.half_widths = tuple((len(w) - 1) // 2 for w in self.axis_weights)

    def mass(self):
        """Product of axis weight sums; unity by construction."""
        m = 1.0
        for w in self.axis_weights:
            m *= float(np.sum(w))
        return m

    def trusted_region(self, region=None):
        """Input node box shrunk by the stencil half-width per axis."""
        region = region or self.chart.full_region()
        return region.shrink(self.half_widths)


class CutoffSystem:
    """Pair of smooth cutoffs: xi localizes, chi plateaus over supp xi.

    On a single chart the default system is xi = chi = 1 everywhere with
    the whole grid as core.  ``plateau`` builds a genuine compactly
    supported pair whose chi is 1 on a margin neighborhood of supp xi.
    """

    def __init__(self, xi, chi, core):
        self.xi = xi
        self.chi = chi
        self.core = core
        for f in (xi, chi):
            v = f.components
            if np.min(v) < -1e-15 or np.max(v) > 1.0 + 1e-15:
                raise ValueError("cutoff values must lie in [0, 1]")

    @classmethod
    def whole_chart(cls, chart):
        ones = scalar_field(chart, np.ones(chart.shape))
        return cls(ones, ones, chart.full_region())

    @classmethod
    def plateau(cls, chart, core, margin):
        """Smooth cutoffs for a node core box; chi keeps a ramp of width
        ``margin`` (coordinate units) fully inside value one around xi's
        support."""
        lo, hi = core.coordinate_bounds(chart)
        xi = cls._ramp_box(chart, lo, hi, margin)
        glo = tuple(v - margin for v in lo)
        ghi = tuple(v + margin for v in hi)
        chi = cls._ramp_box(chart, glo, ghi, margin)
        return cls(xi, chi, core)

    @staticmethod
    def _ramp_box(chart, lo, hi, margin):
        vals = np.ones(chart.shape)
        mesh = chart.node_mesh()
        for a in range(chart.dim):
            x = mesh[..., a]
            up = _smoothstep((x - (lo[a] - margin)) / margin)
            down = _smoothstep(((hi[a] + margin) - x) / margin)
            vals = vals * up * down
        return scalar_field(chart, vals)


def _smoothstep(t):
    """C-infinity ramp: 0 for t <= 0, 1 for t >= 1, bump-integral between."""
    t = np.clip(t, 0.0, 1.0)
    num = _cumulative_bump(2.0 * t - 1.0)
    return num


def _cumulative_bump(u):
    # cumulative integral of the normalized bump from -1 to u, via a fixed
    # high-resolution table (smooth, monotone, exact endpoints)
    global _CUM_TABLE
    if _CUM_TABLE is None:
        xs = np.linspace(-1.0, 1.0, 4001)
        ys = bump_profile(xs)
        cum = np.concatenate(
            [[0.0], np.cumsum((ys[1:] + ys[:-1]) * 0.5 * (xs[1] - xs[0]))]
        )
        cum /= cum[-1]
        _CUM_TABLE = (xs, cum)
    xs, cum = _CUM_TABLE
    return np.interp(u, xs, cum)


_CUM_TABLE = None


@dataclass
class MollifyResult:
    field: TensorGridField
    trusted: Region
    kernel: MollifierKernel


def mollify_tensor(f, eps, cutoffs=None):
    """Componentwise mollification of a grid tensor field.

    With no cutoff system the boundary is handled by renormalized
    averaging (divide by the convolved indicator); with one, the output
    is chi * conv(xi * f) as in a chart-by-chart gluing, and the trusted
    region is the cutoff core shrunk by the stencil.
    """
    kernel = eps if isinstance(eps, MollifierKernel) else MollifierKernel(f.chart, eps)
    arr = f.components
    rank = f.rank
    if cutoffs is not None:
        xi = cutoffs.xi.components.reshape(f.chart.shape + (1,) * rank)
        arr = arr * xi
    for a, w in enumerate(kernel.axis_weights):
        arr = ndimage.correlate1d(arr, w, axis=a, mode="constant", cval=0.0)
    if cutoffs is None:
        den = np.ones(f.chart.shape)
        for a, w in enumerate(kernel.axis_weights):
            den = ndimage.correlate1d(den, w, axis=a, mode="constant", cval=0.0)
        arr = arr / den.reshape(f.chart.shape + (1,) * rank)
        trusted = kernel.trusted_region()
    else:
        chi = cutoffs.chi.components.reshape(f.chart.shape + (1,) * rank)
        arr = arr * chi
        trusted = kernel.trusted_region(cutoffs.core)
    out = TensorGridField(f.chart, f.valence, arr, "smooth")
    return MollifyResult(out, trusted, kernel)


@dataclass
class StabilizedMetric:
    metric: MetricField
    trusted: Region
    eps: float


def stabilized_metric(g, eps):
    """Mollify a metric and verify signature and nondegeneracy.

    The smoothed components are symmetrized exactly; if the result is
    degenerate or its eigenvalue signs differ from the input anywhere,
    the smoothing is rejected.
    """
    res = mollify_tensor(g, eps)
    comp = res.field.components
    comp = 0.5 * (comp + np.swapaxes(comp, -1, -2))
    try:
        gm = MetricField(g.chart, comp, None, "smooth")
    except ValueError as exc:
        raise StabilizationError(f"smoothing at eps={eps} rejected: {exc}") from exc
    if gm.signature != g.signature:
        raise StabilizationError(
            f"smoothing at eps={eps} changed signature {g.signature} -> {gm.signature}"
        )
    return StabilizedMetric(gm, res.trusted, float(res.kernel.eps))


class StabilizedMetricFamily:
    """Metric smoothings along a decreasing eps schedule."""

    def __init__(self, g, eps_schedule):
        sched = tuple(float(e) for e in eps_schedule)
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("eps schedule must decrease strictly")
        self.base = g
        self.eps_schedule = sched
        self.members = [stabilized_metric(g, e) for e in sched]

    def member(self, eps):
        for m in self.members:
            if m.eps == float(eps):
                return m
        raise KeyError(f"eps {eps} not in schedule")

    def common_region(self):
        region = self.members[0].trusted
        for m in self.members[1:]:
            region = region.intersect(m.trusted)
        return region


def distance_comparison_check(g, eps, n_pairs=20, seed=0, solver_params=None):
    """Distance ratios d_eps / d between the metric and its smoothing.

    Samples point pairs in the trusted region and checks the two-sided
    bound 1/2 <= d_eps/d <= 2 pair by pair.
    """
    from .geodesics import DistanceSolver

    stab = stabilized_metric(g, eps)
    lo, hi = stab.trusted.coordinate_bounds(g.chart)
    rng = np.random.default_rng(seed)
    pts = rng.uniform(np.asarray(lo), np.asarray(hi), size=(2 * n_pairs, g.chart.dim))
    params = solver_params or {}
    base = DistanceSolver(g, **params)
    smooth = DistanceSolver(stab.metric, **params)
    report = PipelineReport(
        "distance_comparison",
        inputs_digest=digest_arrays(g.components, eps, n_pairs, seed),
        params={"eps": float(eps), "n_pairs": int(n_pairs), "seed": int(seed)},
    )
    ratios = []
    for k in range(n_pairs):
        x, y = pts[2 * k], pts[2 * k + 1]
        d0 = base.distance(x, y).value
        d1 = smooth.distance(x, y).value
        if d0 <= 0.0:
            continue
        ratios.append(d1 / d0)
    ratios = np.asarray(ratios)
    report.add_residual(
        "ratio_min",
        float(np.min(ratios)),
        "two-sided comparability of smoothed and raw path lengths",
        passed=bool(np.min(ratios) >= 0.5),
    )
    report.add_residual(
        "ratio_max",
        float(np.max(ratios)),
        "two-sided comparability of smoothed and raw path lengths",
        passed=bool(np.max(ratios) <= 2.0),
    )
    report.params["ratios"] = [float(r) for r in ratios]
    report.set_verdict("PASS" if not report.failed_entries() else "FAIL")
    return report


def _pointwise_magnitude(comp, rank):
    if rank == 0:
        return np.abs(comp)
    axes = tuple(range(comp.ndim - rank, comp.ndim))
    return np.sqrt(np.sum(comp * comp, axis=axes))


def convergence_report(f, eps_schedule, min_slopes=None):
    """Error decay of the smoothing as eps shrinks.

    Reports sup and L^p (p in {1, 2, 4}) deviations from the input on
    the common trusted region, plus fitted log-log slopes.  If
    ``min_slopes`` maps norm names to required rates, the verdict is
    FAIL when a fitted slope falls short.
    """
    sched = tuple(float(e) for e in eps_schedule)
    results = [mollify_tensor(f, e) for e in sched]
    region = results[0].trusted
    for r in results[1:]:
        region = region.intersect(r.trusted)
    sl = region.slices()
    report = PipelineReport(
        "mollifier_convergence",
        inputs_digest=digest_arrays(f.components, *sched),
        params={"eps_schedule": list(sched), "region_lo": list(region.lo),
                "region_hi": list(region.hi)},
    )
    norms = {"sup": [], "l1": [], "l2": [], "l4": []}
    sub = f.chart.subchart(region)
    for e, r in zip(sched, results):
        diff = _pointwise_magnitude(
            (r.field.components - f.components)[sl], f.rank
        )
        norms["sup"].append(float(np.max(diff)))
        for p, key in ((1, "l1"), (2, "l2"), (4, "l4")):
            val = integrate_density(scalar_field(sub, diff**p))
            norms[key].append(float(val ** (1.0 / p)))
    slopes = {}
    loge = np.log(np.asarray(sched))
    for key, errs in norms.items():
        errs = np.asarray(errs)
        if np.all(errs > 0.0):
            slopes[key] = float(np.polyfit(loge, np.log(errs), 1)[0])
        else:
            slopes[key] = float("inf")
        for e, val in zip(sched, errs):
            report.add_residual(
                f"{key}_eps_{e:g}", float(val),
                "smoothing converges to the field on the trusted region",
            )
    report.params["slopes"] = slopes
    verdict = "PASS"
    for key, need in (min_slopes or {}).items():
        ok = slopes[key] >= float(need)
        report.add_residual(
            f"slope_{key}", slopes[key],
            f"fitted decay rate in {key} at least {need}", passed=ok,
        )
        if not ok:
            verdict = "FAIL"
    report.set_verdict(verdict)
    return report
