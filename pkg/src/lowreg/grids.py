"""Tensor fields sampled on uniform box grids.

Everything downstream works on a single coordinate box with a uniform
node lattice per axis.  Fields store raw component arrays (grid axes
first, tensor index axes last); derivatives are finite-difference
stencils, integrals are tensor-product Simpson rules, and off-node
values come from tensor-product cubic interpolation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad

__all__ = [
    "BoxChart",
    "Region",
    "TensorGridField",
    "MetricField",
    "TestDensity",
    "scalar_field",
    "partial_derivative",
    "simpson_weights",
    "volume_density",
    "integrate_density",
    "musical_flat",
    "musical_sharp",
]

# Nondegeneracy floor for |det g| at every node.
DET_FLOOR = 1e-12


@dataclass(frozen=True)
class BoxChart:
    """Uniform node lattice on a coordinate box.

    ``shape[i]`` nodes on axis ``i`` span ``[lower[i], upper[i]]`` with
    spacing ``h[i] = (upper[i] - lower[i]) / (shape[i] - 1)``; endpoints
    are nodes.
    """

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        up = tuple(float(v) for v in self.upper)
        sh = tuple(int(v) for v in self.shape)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        object.__setattr__(self, "shape", sh)
        if not (len(lo) == len(up) == len(sh)):
            raise ValueError("lower, upper and shape must have equal length")
        if any(u <= l for l, u in zip(lo, up)):
            raise ValueError("upper must exceed lower on every axis")
        if any(s < 5 for s in sh):
            raise ValueError("need at least 5 nodes per axis")

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple(
            (u - l) / (s - 1) for l, u, s in zip(self.lower, self.upper, self.shape)
        )

    def axis_coords(self, axis):
        """Node coordinates along one axis."""
        return self.lower[axis] + self.spacing[axis] * np.arange(self.shape[axis])

    def node_mesh(self):
        """Coordinate arrays of all nodes, shape ``shape + (dim,)``."""
        axes = [self.axis_coords(i) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, points, slack=0.0):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lower) - slack
        up = np.asarray(self.upper) + slack
        return np.all((p >= lo) & (p <= up), axis=-1)

    def clip(self, points):
        """Project points onto the closed box."""
        return np.clip(points, self.lower, self.upper)

    def nearest_node(self, point):
        """Multi-index of the node closest to ``point``."""
        p = np.asarray(point, dtype=float)
        idx = np.rint((p - np.asarray(self.lower)) / np.asarray(self.spacing))
        idx = np.clip(idx, 0, np.asarray(self.shape) - 1)
        return tuple(int(i) for i in idx)

    def node_point(self, index):
        return tuple(
            self.lower[i] + self.spacing[i] * index[i] for i in range(self.dim)
        )

    def full_region(self):
        return Region((0,) * self.dim, self.shape)

    def subchart(self, region):
        """Chart spanned by a node sub-box (nodes are reused exactly)."""
        lo = tuple(
            self.lower[i] + self.spacing[i] * region.lo[i] for i in range(self.dim)
        )
        up = tuple(
            self.lower[i] + self.spacing[i] * (region.hi[i] - 1)
            for i in range(self.dim)
        )
        return BoxChart(lo, up, region.extents())


@dataclass(frozen=True)
class Region:
    """Node-index sub-box, lower bound inclusive, upper exclusive."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(int(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(int(v) for v in self.hi))
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("empty region")

    def slices(self):
        return tuple(slice(a, b) for a, b in zip(self.lo, self.hi))

    def extents(self):
        return tuple(b - a for a, b in zip(self.lo, self.hi))

    def shrink(self, margin):
        """Shrink by ``margin`` nodes per side (scalar or per-axis)."""
        if np.isscalar(margin):
            margin = (int(margin),) * len(self.lo)
        lo = tuple(a + m for a, m in zip(self.lo, margin))
        hi = tuple(b - m for b, m in zip(self.hi, margin))
        return Region(lo, hi)

    def intersect(self, other):
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        return Region(lo, hi)

    def coordinate_bounds(self, chart):
        lo = tuple(
            chart.lower[i] + chart.spacing[i] * self.lo[i] for i in range(len(self.lo))
        )
        hi = tuple(
            chart.lower[i] + chart.spacing[i] * (self.hi[i] - 1)
            for i in range(len(self.hi))
        )
        return lo, hi

    def contains_point(self, chart, point, slack=0.0):
        lo, hi = self.coordinate_bounds(chart)
        p = np.asarray(point, dtype=float)
        return bool(
            np.all(p >= np.asarray(lo) - slack) and np.all(p <= np.asarray(hi) + slack)
        )


class TensorGridField:
    """Components of an (r, s)-tensor sampled at every grid node.

    ``components`` has the grid axes first and then r + s tensor axes of
    length ``dim`` each, contravariant slots before covariant ones.
    """

    def __init__(self, chart, valence, components, regularity_tag="smooth"):
        self.chart = chart
        self.valence = (int(valence[0]), int(valence[1]))
        comp = np.asarray(components, dtype=float)
        n = chart.dim
        want = chart.shape + (n,) * (self.valence[0] + self.valence[1])
        if comp.shape != want:
            raise ValueError(f"component shape {comp.shape} != expected {want}")
        if not np.all(np.isfinite(comp)):
            raise ValueError("non-finite component values")
        self.components = comp
        self.regularity_tag = regularity_tag

    @property
    def rank(self):
        return self.valence[0] + self.valence[1]

    def copy(self, components=None):
        comp = self.components.copy() if components is None else components
        return TensorGridField(self.chart, self.valence, comp, self.regularity_tag)

    def __add__(self, other):
        self._check_compatible(other)
        return self.copy(self.components + other.components)

    def __sub__(self, other):
        self._check_compatible(other)
        return self.copy(self.components - other.components)

    def __mul__(self, scalar):
        return self.copy(self.components * float(scalar))

    __rmul__ = __mul__

    def _check_compatible(self, other):
        if self.chart != other.chart or self.valence != other.valence:
            raise ValueError("fields live on different charts or valences")

    def interpolate(self, points):
        """Componentwise cubic interpolation at points in the closed box.

        Tensor-product Lagrange cubics on a 4-node window per axis,
        exact on polynomials of degree three along each axis.  Accepts a
        single point or an array of shape (npts, dim).
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        idx, wts = _interp_stencil(self.chart, p)
        n = self.chart.dim
        tshape = (1,) * self.rank
        out = 0.0
        for offs in itertools.product(range(4), repeat=n):
            w = wts[0][:, offs[0]]
            for a in range(1, n):
                w = w * wts[a][:, offs[a]]
            gather = self.components[tuple(idx[a] + offs[a] for a in range(n))]
            out = out + w.reshape(w.shape + tshape) * gather
        return out[0] if single else out

    def interpolate_with_gradient(self, points):
        """Values and first derivatives of the cubic interpolant.

        Returns (values, gradient) with gradient[:, c, ...] the exact
        x_c-derivative of the interpolated components — the right
        object when optimizing a functional built on `interpolate`,
        since the two stay consistent to rounding.
        """
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        idx, wts, dwts = _interp_stencil(self.chart, p, derivatives=True)
        n = self.chart.dim
        tshape = (1,) * self.rank
        val = 0.0
        grads = [0.0] * n
        for offs in itertools.product(range(4), repeat=n):
            base = [wts[a][:, offs[a]] for a in range(n)]
            gather = self.components[tuple(idx[a] + offs[a] for a in range(n))]
            w = base[0]
            for a in range(1, n):
                w = w * base[a]
            val = val + w.reshape(w.shape + tshape) * gather
            for c in range(n):
                wc = dwts[c][:, offs[c]]
                for a in range(n):
                    if a != c:
                        wc = wc * base[a]
                grads[c] = grads[c] + wc.reshape(wc.shape + tshape) * gather
        grad = np.stack(grads, axis=1)
        return (val[0], grad[0]) if single else (val, grad)


def scalar_field(chart, values, regularity_tag="smooth"):
    """Wrap a plain value array as a (0, 0) field."""
    return TensorGridField(chart, (0, 0), values, regularity_tag)


def _interp_stencil(chart, points, derivatives=False):
    """Per-axis window indices and cubic weights for a batch of points.

    With ``derivatives`` also returns the xi-derivative weights scaled
    by 1/h, so weight products differentiate the interpolant exactly.
    """
    if not np.all(chart.contains(points, slack=1e-9)):
        raise ValueError("interpolation point outside the chart closure")
    idx, wts, dwts = [], [], []
    for a in range(chart.dim):
        nn = chart.shape[a]
        u = (points[:, a] - chart.lower[a]) / chart.spacing[a]
        u = np.clip(u, 0.0, nn - 1.0)
        i0 = np.clip(np.floor(u).astype(int) - 1, 0, nn - 4)
        xi = u - i0
        w = np.empty((len(u), 4))
        w[:, 0] = -(xi - 1.0) * (xi - 2.0) * (xi - 3.0) / 6.0
        w[:, 1] = xi * (xi - 2.0) * (xi - 3.0) / 2.0
        w[:, 2] = -xi * (xi - 1.0) * (xi - 3.0) / 2.0
        w[:, 3] = xi * (xi - 1.0) * (xi - 2.0) / 6.0
        idx.append(i0)
        wts.append(w)
        if derivatives:
            h = chart.spacing[a]
            d = np.empty((len(u), 4))
            d[:, 0] = -(
                (xi - 2.0) * (xi - 3.0)
                + (xi - 1.0) * (xi - 3.0)
                + (xi - 1.0) * (xi - 2.0)
            ) / (6.0 * h)
            d[:, 1] = (
                (xi - 2.0) * (xi - 3.0)
                + xi * (xi - 3.0)
                + xi * (xi - 2.0)
            ) / (2.0 * h)
            d[:, 2] = -(
                (xi - 1.0) * (xi - 3.0)
                + xi * (xi - 3.0)
                + xi * (xi - 1.0)
            ) / (2.0 * h)
            d[:, 3] = (
                (xi - 1.0) * (xi - 2.0)
                + xi * (xi - 2.0)
                + xi * (xi - 1.0)
            ) / (6.0 * h)
            dwts.append(d)
    if derivatives:
        return idx, wts, dwts
    return idx, wts


# ---------------------------------------------------------------------------
# finite differences


def _diff1(a, h):
    # One-sided five-point stencils on the outer two layers keep the
    # whole grid at the interior order; a lower-order edge would
    # dominate every sup-norm error estimate downstream.
    out = np.empty_like(a)
    out[2:-2] = (a[:-4] - 8.0 * a[1:-3] + 8.0 * a[3:-1] - a[4:]) / (12.0 * h)
    out[0] = (
        -25.0 * a[0] + 48.0 * a[1] - 36.0 * a[2] + 16.0 * a[3] - 3.0 * a[4]
    ) / (12.0 * h)
    out[1] = (
        -3.0 * a[0] - 10.0 * a[1] + 18.0 * a[2] - 6.0 * a[3] + a[4]
    ) / (12.0 * h)
    out[-2] = (
        3.0 * a[-1] + 10.0 * a[-2] - 18.0 * a[-3] + 6.0 * a[-4] - a[-5]
    ) / (12.0 * h)
    out[-1] = (
        25.0 * a[-1] - 48.0 * a[-2] + 36.0 * a[-3] - 16.0 * a[-4]
        + 3.0 * a[-5]
    ) / (12.0 * h)
    return out


def _diff2(a, h):
    # Edge layers use the five-point one-sided second-derivative
    # stencil (exact through cubics); five nodes per axis stay legal.
    hh = h * h
    out = np.empty_like(a)
    out[2:-2] = (
        -a[:-4] + 16.0 * a[1:-3] - 30.0 * a[2:-2] + 16.0 * a[3:-1] - a[4:]
    ) / (12.0 * hh)
    out[0] = (
        35.0 * a[0] - 104.0 * a[1] + 114.0 * a[2] - 56.0 * a[3]
        + 11.0 * a[4]
    ) / (12.0 * hh)
    out[1] = (
        11.0 * a[0] - 20.0 * a[1] + 6.0 * a[2] + 4.0 * a[3] - a[4]
    ) / (12.0 * hh)
    out[-2] = (
        11.0 * a[-1] - 20.0 * a[-2] + 6.0 * a[-3] + 4.0 * a[-4] - a[-5]
    ) / (12.0 * hh)
    out[-1] = (
        35.0 * a[-1] - 104.0 * a[-2] + 114.0 * a[-3] - 56.0 * a[-4]
        + 11.0 * a[-5]
    ) / (12.0 * hh)
    return out


def partial_derivative(f, axis, order=1):
    """Nodewise coordinate derivative of a field along one grid axis.

    Fourth-order centred stencils in the interior; the two node layers
    at each end use five-point one-sided stencils (fourth order for the
    first derivative, third for the second).  ``order`` may be 1 or 2;
    the order-2 stencil is a direct second-derivative stencil, not a
    composition.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if not 0 <= axis < f.chart.dim:
        raise ValueError(f"axis {axis} out of range for {f.chart.dim}D chart")
    h = f.chart.spacing[axis]
    a = np.moveaxis(f.components, axis, 0)
    d = _diff1(a, h) if order == 1 else _diff2(a, h)
    return f.copy(np.moveaxis(d, 0, axis))


# ---------------------------------------------------------------------------
# quadrature


def simpson_weights(nnodes, h):
    """Composite Simpson weights; a 3/8 block absorbs an odd interval count."""
    if nnodes < 4:
        raise ValueError("need at least 4 nodes")
    w = np.zeros(nnodes)
    if nnodes % 2 == 1:
        w[0] = w[-1] = 1.0
        w[1:-1:2] = 4.0
        w[2:-2:2] = 2.0
        w *= h / 3.0
    else:
        head = nnodes - 3  # odd node count, Simpson part
        if head >= 3:
            w[:head] = simpson_weights(head, h)
        w[head - 1 :] += np.array([3.0, 9.0, 9.0, 3.0]) * (h / 8.0)
    return w


def _grid_weights(chart, region=None):
    region = region or chart.full_region()
    ext = region.extents()
    w = simpson_weights(ext[0], chart.spacing[0])
    for a in range(1, chart.dim):
        w = np.multiply.outer(w, simpson_weights(ext[a], chart.spacing[a]))
    return w


def volume_density(metric):
    """sqrt(|det g|) as a scalar field."""
    det = np.abs(np.linalg.det(metric.components))
    return scalar_field(metric.chart, np.sqrt(det), metric.regularity_tag)


def integrate_density(f, metric=None, region=None):
    """Tensor-product Simpson integral of a scalar field.

    With a metric the measure is sqrt(|det g|) dx, otherwise plain
    coordinate volume.  ``region`` restricts to a node sub-box (the rule
    is built on the sub-box, nodes on its boundary included).
    """
    if f.rank != 0:
        raise ValueError("integrand must be a scalar field")
    chart = f.chart
    region = region or chart.full_region()
    vals = f.components[region.slices()]
    if metric is not None:
        vals = vals * volume_density(metric).components[region.slices()]
    return float(np.sum(_grid_weights(chart, region) * vals))


# ---------------------------------------------------------------------------
# metric fields


class MetricField(TensorGridField):
    """Symmetric nondegenerate (0, 2) field with constant eigenvalue signs.

    ``signature = (neg, pos)`` counts negative and positive eigenvalues
    of the component matrix at every node; (0, dim) is Riemannian.
    """

    def __init__(self, chart, components, signature=None, regularity_tag="smooth"):
        super().__init__(chart, (0, 2), components, regularity_tag)
        comp = self.components
        if not np.array_equal(comp, np.swapaxes(comp, -1, -2)):
            raise ValueError("metric components must be exactly symmetric")
        det = np.linalg.det(comp)
        if np.min(np.abs(det)) < DET_FLOOR:
            raise ValueError("metric is degenerate somewhere on the grid")
        eig = np.linalg.eigvalsh(comp)
        neg = np.count_nonzero(eig < 0.0, axis=-1)
        negs = int(neg.flat[0])
        if np.any(neg != negs):
            raise ValueError("eigenvalue signs change across the grid")
        found = (negs, chart.dim - negs)
        if signature is not None and tuple(signature) != found:
            raise ValueError(f"declared signature {signature}, found {found}")
        self.signature = found
        self._inv = None
        self._vol = None

    @property
    def riemannian(self):
        return self.signature[0] == 0

    def copy(self, components=None):
        if components is None:
            return MetricField(
                self.chart, self.components.copy(), None, self.regularity_tag
            )
        # Replacing the samples voids the nondegeneracy certificate, so
        # derived data (derivatives, residuals) drops to a plain field.
        return TensorGridField(self.chart, (0, 2), components, self.regularity_tag)

    @property
    def inverse_components(self):
        """Nodewise inverse metric, cached."""
        if self._inv is None:
            self._inv = np.linalg.inv(self.components)
        return self._inv

    @property
    def volume_weight(self):
        if self._vol is None:
            self._vol = np.sqrt(np.abs(np.linalg.det(self.components)))
        return self._vol

    def norm_values(self, vectors):
        """Nodewise |v|_g = sqrt(|g(v, v)|) for a vector component array."""
        q = np.einsum("...ab,...a,...b->...", self.components, vectors, vectors)
        return np.sqrt(np.abs(q))


def musical_flat(x, metric):
    """Lower the index of a vector field with g."""
    if x.valence != (1, 0):
        raise ValueError("expected a vector field")
    comp = np.einsum("...ab,...b->...a", metric.components, x.components)
    return TensorGridField(x.chart, (0, 1), comp, x.regularity_tag)


def musical_sharp(omega, metric):
    """Raise the index of a 1-form field with the inverse metric."""
    if omega.valence != (0, 1):
        raise ValueError("expected a 1-form field")
    comp = np.einsum("...ab,...b->...a", metric.inverse_components, omega.components)
    return TensorGridField(omega.chart, (1, 0), comp, omega.regularity_tag)


# ---------------------------------------------------------------------------
# test densities

# integral of exp(-1/(1-t^2)) over (-1, 1), fixed once at import
_BUMP_MASS_1D = 2.0 * quad(lambda t: np.exp(-1.0 / (1.0 - t * t)), 0.0, 1.0)[0]


def bump_profile(t):
    """The reference bump exp(-1/(1-t^2)) on |t| < 1, zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def _unit_ball_area(n):
    # surface area of the unit (n-1)-sphere
    from math import gamma, pi

    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)


class TestDensity:
    """Smooth nonnegative radial bump with compact support inside the box.

    The profile is exp(-1/(1-t^2)) in t = |x - center| / radius, scaled
    to unit Lebesgue integral over the ball.
    """

    def __init__(self, chart, center, radius):
        center = tuple(float(c) for c in center)
        radius = float(radius)
        if radius <= 0.0:
            raise ValueError("radius must be positive")
        for i in range(chart.dim):
            if (
                center[i] - radius <= chart.lower[i]
                or center[i] + radius >= chart.upper[i]
            ):
                raise ValueError("bump support touches the chart boundary")
        self.center = center
        self.radius = radius
        n = chart.dim
        radial = quad(
            lambda t: t ** (n - 1) * np.exp(-1.0 / (1.0 - t * t)), 0.0, 1.0
        )[0]
        self._norm = _unit_ball_area(n) * radial * radius**n
        mesh = chart.node_mesh()
        t = np.sqrt(np.sum((mesh - np.asarray(center)) ** 2, axis=-1)) / radius
        self.samples = scalar_field(chart, bump_profile(t) / self._norm)

    @property
    def chart(self):
        return self.samples.chart

    def values_at(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.sqrt(np.sum((p - np.asarray(self.center)) ** 2, axis=-1)) / self.radius
        return bump_profile(t) / self._norm

    def support_region(self, margin_nodes=0):
        """Smallest node box containing the support, padded by whole nodes."""
        ch = self.chart
        lo, hi = [], []
        for i in range(ch.dim):
            a = int(np.floor((self.center[i] - self.radius - ch.lower[i]) / ch.spacing[i]))
            b = int(np.ceil((self.center[i] + self.radius - ch.lower[i]) / ch.spacing[i]))
            lo.append(max(0, a - margin_nodes))
            hi.append(min(ch.shape[i], b + 1 + margin_nodes))
        return Region(tuple(lo), tuple(hi))

    def l1_norm(self, metric=None):
        """Integral of the density, against dVol if a metric is given."""
        return integrate_density(self.samples, metric=metric)
