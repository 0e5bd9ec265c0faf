"""Differential operators on grid fields.

Sign conventions: the scalar Laplacian is the metric divergence of the
gradient (negative spectrum), the codifferential on 1-forms is
delta omega = -sum_i (nabla_{e_i} omega)(e_i) over an orthonormal
frame, the Hodge Laplacian on 1-forms is delta d + d delta, and the
connection Laplacian is nabla* nabla omega = -sum_i nabla^2_{e_i, e_i}
omega.  Covariant derivatives append the differentiation slot as the
first covariant index, so iterating them gives nabla^2_{V,W} with the
second-derivative correction included.

Frame-sum operators require a Riemannian metric (the frame is the
Cholesky one); divergence, gradients, Hessians and exterior derivatives
work in any signature.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .curvature import christoffel, ricci, riemann
from .grids import (
    TensorGridField,
    integrate_density,
    musical_flat,
    partial_derivative,
    scalar_field,
)

__all__ = [
    "OperatorContext",
    "divergence",
    "gradient",
    "laplace_beltrami",
    "WeakPairing",
    "weak_laplace_pairing",
    "hessian",
    "covariant_derivative",
    "adjoint_covariant_derivative",
    "codifferential",
    "exterior_derivative_1form",
    "hodge_laplacian_1form",
    "connection_laplacian_1form",
    "BochnerResidual",
    "bochner_residual",
    "polarized_ricci_pairing",
]


class OperatorContext:
    """Metric plus the cached geometry the operators share.

    Holds the inverse metric, Christoffel symbols, volume weight, and
    (for Riemannian metrics) a nodewise orthonormal frame obtained by
    triangular orthogonalization of the coordinate basis.
    """

    def __init__(self, metric, gamma=None):
        self.metric = metric
        self.chart = metric.chart
        self._gamma = gamma
        self._frame = None
        self._ricci = None

    @property
    def gamma(self):
        if self._gamma is None:
            self._gamma = christoffel(self.metric)
        return self._gamma

    @property
    def ginv(self):
        return self.metric.inverse_components

    @property
    def volume_weight(self):
        return self.metric.volume_weight

    @property
    def frame(self):
        """Orthonormal frame components, indexed [..., i, alpha]."""
        if self._frame is None:
            if not self.metric.riemannian:
                raise NotImplementedError(
                    "nodewise frames are built for Riemannian metrics only"
                )
            L = np.linalg.cholesky(self.metric.components)
            self._frame = np.linalg.inv(L)
        return self._frame

    @property
    def ricci_field(self):
        if self._ricci is None:
            self._ricci = ricci(self.metric, riemann(self.metric, gamma=self.gamma))
        return self._ricci


def divergence(x_field, ctx):
    """Metric divergence of a vector field via the volume weight."""
    if x_field.valence != (1, 0):
        raise ValueError("expected a vector field")
    w = ctx.volume_weight
    acc = np.zeros(ctx.chart.shape)
    for a in range(ctx.chart.dim):
        fa = scalar_field(ctx.chart, w * x_field.components[..., a])
        acc += partial_derivative(fa, a).components
    return scalar_field(ctx.chart, acc / w)


def gradient(f, ctx):
    """Metric gradient (sharp of the differential)."""
    n = ctx.chart.dim
    df = np.stack([partial_derivative(f, a).components for a in range(n)], axis=-1)
    comp = np.einsum("...ab,...b->...a", ctx.ginv, df)
    return TensorGridField(ctx.chart, (1, 0), comp, f.regularity_tag)


def laplace_beltrami(f, ctx):
    """Scalar Laplacian, the divergence of the gradient."""
    return divergence(gradient(f, ctx), ctx)


@dataclass
class WeakPairing:
    """Weak value, its dual-route cross-check, and their gap."""

    value: float
    dual: float

    @property
    def gap(self):
        return abs(self.value - self.dual)


def weak_laplace_pairing(f, ctx, phi):
    """Weak Laplacian of f paired with a test density.

    ``value`` moves one derivative onto phi, ``dual`` moves both; for
    smooth data they agree to quadrature accuracy, and for rough f the
    dual form is the defining one.

    The integration window carries a four-node margin: differentiating
    the bump smears its numerical support by the stencil half-width per
    pass, and the smeared ring carries mass the bare support misses.
    """
    supp = phi.support_region(margin_nodes=4)
    gf = gradient(f, ctx)
    gphi = gradient(phi.samples, ctx)
    dens = np.einsum("...ab,...a,...b->...", ctx.metric.components,
                     gf.components, gphi.components)
    value = -integrate_density(scalar_field(ctx.chart, dens),
                               metric=ctx.metric, region=supp)
    lphi = laplace_beltrami(phi.samples, ctx)
    dual = integrate_density(
        scalar_field(ctx.chart, f.components * lphi.components),
        metric=ctx.metric, region=supp,
    )
    return WeakPairing(float(value), float(dual))


def hessian(f, ctx):
    """Covariant Hessian of a scalar field.

    Diagonal second derivatives use direct stencils, mixed ones two
    first-derivative passes (which commute), so the result is symmetric
    to rounding.
    """
    n = ctx.chart.dim
    df = [partial_derivative(f, a) for a in range(n)]
    H = np.empty(ctx.chart.shape + (n, n))
    for a in range(n):
        H[..., a, a] = partial_derivative(f, a, order=2).components
        for b in range(a + 1, n):
            mixed = partial_derivative(df[b], a).components
            H[..., a, b] = mixed
            H[..., b, a] = mixed
    dfc = np.stack([d.components for d in df], axis=-1)
    H -= np.einsum("...cab,...c->...ab", ctx.gamma.components, dfc)
    return TensorGridField(ctx.chart, (0, 2), H, f.regularity_tag)


_LETTERS = string.ascii_lowercase


def covariant_derivative(t_field, ctx):
    """Covariant derivative, new covariant slot first among the lower ones.

    Output valence (r, s+1) with component order
    [uppers..., c, lowers...]; iterating yields second covariant
    derivatives with slots in differentiation order.
    """
    r, s = t_field.valence
    n = ctx.chart.dim
    dT = np.stack(
        [partial_derivative(t_field, c).components for c in range(n)],
        axis=t_field.components.ndim - s,
    )
    uppers = _LETTERS[:r]
    lowers = _LETTERS[r : r + s]
    base = "..." + uppers + lowers
    out_sub = "..." + uppers + "c" + lowers
    G = ctx.gamma.components
    out = dT
    for k in range(r):
        tsub = base.replace(uppers[k], "z")
        gsub = "..." + uppers[k] + "cz"
        out = out + np.einsum(f"{gsub},{tsub}->{out_sub}", G, t_field.components)
    for k in range(s):
        tsub = base.replace(lowers[k], "z")
        gsub = "...zc" + lowers[k]
        out = out - np.einsum(f"{gsub},{tsub}->{out_sub}", G, t_field.components)
    return TensorGridField(ctx.chart, (r, s + 1), out, t_field.regularity_tag)


def adjoint_covariant_derivative(t_field, ctx):
    """Formal adjoint of the covariant derivative on (0, s) tensors.

    Contracts the derivative slot against the first argument slot over
    the orthonormal frame, with a minus sign.
    """
    r, s = t_field.valence
    if r != 0 or s < 1:
        raise ValueError("adjoint derivative expects a (0, s>=1) tensor")
    nab = covariant_derivative(t_field, ctx).components
    E = ctx.frame
    rest = _LETTERS[:s - 1]
    comp = -np.einsum(f"...ic,...ib,...cb{rest}->...{rest}", E, E, nab)
    valence = (0, s - 1)
    return TensorGridField(ctx.chart, valence, comp, t_field.regularity_tag)


def codifferential(omega, ctx):
    """Codifferential on 1-forms and 2-forms via frame contraction."""
    if omega.valence not in ((0, 1), (0, 2)):
        raise ValueError("codifferential expects a 1-form or 2-form")
    return adjoint_covariant_derivative(omega, ctx)


def exterior_derivative_1form(omega, ctx):
    """d omega as the antisymmetrized covariant derivative.

    Cross-checked against raw coordinate partials; the two agree to
    rounding because the symmetric connection terms cancel.
    """
    if omega.valence != (0, 1):
        raise ValueError("expected a 1-form")
    nab = covariant_derivative(omega, ctx).components
    anti = nab - np.swapaxes(nab, -1, -2)
    n = ctx.chart.dim
    dpart = np.stack(
        [partial_derivative(omega, a).components for a in range(n)], axis=-2
    )
    raw = dpart - np.swapaxes(dpart, -1, -2)
    gap = float(np.max(np.abs(anti - raw)))
    scale = float(np.max(np.abs(raw))) + 1.0
    if gap > 1e-9 * scale:
        raise AssertionError(f"exterior derivative routes disagree by {gap}")
    return TensorGridField(ctx.chart, (0, 2), anti, omega.regularity_tag)


def hodge_laplacian_1form(omega, ctx):
    """(delta d + d delta) omega on 1-forms."""
    d_omega = exterior_derivative_1form(omega, ctx)
    term1 = codifferential(d_omega, ctx)
    delta_omega = codifferential(omega, ctx)
    n = ctx.chart.dim
    term2 = np.stack(
        [partial_derivative(delta_omega, a).components for a in range(n)], axis=-1
    )
    return TensorGridField(
        ctx.chart, (0, 1), term1.components + term2, omega.regularity_tag
    )


def connection_laplacian_1form(omega, ctx):
    """Trace of the second covariant derivative over the frame, negated."""
    if omega.valence != (0, 1):
        raise ValueError("expected a 1-form")
    n2 = covariant_derivative(covariant_derivative(omega, ctx), ctx).components
    E = ctx.frame
    comp = -np.einsum("...ic,...id,...cdb->...b", E, E, n2)
    return TensorGridField(ctx.chart, (0, 1), comp, omega.regularity_tag)


def _grad_inner(ctx, x_field, y_field):
    """g(nabla X, nabla Y) with the full induced (1, 1) inner product."""
    nx = covariant_derivative(x_field, ctx).components
    ny = covariant_derivative(y_field, ctx).components
    return np.einsum(
        "...ab,...cd,...ac,...bd->...", ctx.metric.components, ctx.ginv, nx, ny
    )


@dataclass
class BochnerResidual:
    value: float
    parts: dict


def bochner_residual(x_field, ctx, phi):
    """Weak residual of the vector-field curvature identity.

    Pairs Delta(|X|^2/2) - |nabla X|^2 + g(Delta_H X, X) - Ric(X, X)
    against a bump, with the Laplacian term integrated by parts onto
    the bump.  Vanishes to discretization accuracy for smooth data.
    """
    g = ctx.metric.components
    X = x_field.components
    supp = phi.support_region(margin_nodes=4)
    w = scalar_field(ctx.chart, 0.5 * np.einsum("...ab,...a,...b->...", g, X, X))
    gw = gradient(w, ctx)
    gphi = gradient(phi.samples, ctx)
    lap_term = -integrate_density(
        scalar_field(ctx.chart, np.einsum(
            "...ab,...a,...b->...", g, gw.components, gphi.components)),
        metric=ctx.metric, region=supp,
    )
    grad_sq = _grad_inner(ctx, x_field, x_field)
    omega = musical_flat(x_field, ctx.metric)
    hodge = hodge_laplacian_1form(omega, ctx).components
    hodge_term = np.einsum("...b,...b->...", hodge, X)
    ric_term = np.einsum("...cb,...c,...b->...", ctx.ricci_field.components, X, X)
    density = -grad_sq + hodge_term - ric_term
    bulk = integrate_density(
        scalar_field(ctx.chart, density * phi.samples.components),
        metric=ctx.metric, region=supp,
    )
    parts = {
        "laplacian_term": float(lap_term),
        "grad_norm_term": float(-integrate_density(
            scalar_field(ctx.chart, grad_sq * phi.samples.components),
            metric=ctx.metric, region=supp)),
        "hodge_term": float(integrate_density(
            scalar_field(ctx.chart, hodge_term * phi.samples.components),
            metric=ctx.metric, region=supp)),
        "ricci_term": float(-integrate_density(
            scalar_field(ctx.chart, ric_term * phi.samples.components),
            metric=ctx.metric, region=supp)),
    }
    return BochnerResidual(float(lap_term + bulk), parts)


def polarized_ricci_pairing(x_field, y_field, ctx, phi):
    """Weak pairing of the polarized curvature identity right side.

    Returns the pairing of Delta g(X, Y)/2 - g(nabla X, nabla Y)
    + (g(Delta_H X, Y) + g(Delta_H Y, X))/2 against the bump; equals
    the Ricci pairing Ric(X, Y) for smooth data and the quarter
    difference of the squared forms by bilinearity.
    """
    g = ctx.metric.components
    X, Y = x_field.components, y_field.components
    supp = phi.support_region(margin_nodes=4)
    w = scalar_field(ctx.chart, 0.5 * np.einsum("...ab,...a,...b->...", g, X, Y))
    gw = gradient(w, ctx)
    gphi = gradient(phi.samples, ctx)
    lap_term = -integrate_density(
        scalar_field(ctx.chart, np.einsum(
            "...ab,...a,...b->...", g, gw.components, gphi.components)),
        metric=ctx.metric, region=supp,
    )
    cross = _grad_inner(ctx, x_field, y_field)
    hx = hodge_laplacian_1form(musical_flat(x_field, ctx.metric), ctx).components
    hy = hodge_laplacian_1form(musical_flat(y_field, ctx.metric), ctx).components
    sym = 0.5 * (np.einsum("...b,...b->...", hx, Y)
                 + np.einsum("...b,...b->...", hy, X))
    bulk = integrate_density(
        scalar_field(ctx.chart, (-cross + sym) * phi.samples.components),
        metric=ctx.metric, region=supp,
    )
    return float(lap_term + bulk)
