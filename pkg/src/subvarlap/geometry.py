"""Carnot group geometry on rectangular grids.

Two groups are supported: the first Heisenberg group in exponential
coordinates (x, y, t) and the abelian group R^n.  Points are numpy arrays
whose last axis holds the coordinates, so every group operation is
vectorized over leading axes.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .errors import DegenerateBallWarning, InvalidArgument, UnsupportedOrder

__all__ = [
    "CarnotGroup",
    "GridDomain",
    "BallFamily",
    "group_multiply",
    "dilate",
    "homogeneous_quasi_distance",
    "ball_mask",
    "ball_measure",
    "ball_reduce",
    "horizontal_gradient",
    "higher_order_gradient",
    "quasi_triangle_constant",
]


@dataclass(frozen=True)
class CarnotGroup:
    kind: str  # "heisenberg" or "euclidean"
    layer_dims: tuple
    K: float = 1.0  # quasi-triangle constant of the gauge distance

    @classmethod
    def heisenberg(cls):
        # Korányi gauge with constant 16 is the Cygan-Korányi metric for this
        # group law, so the triangle inequality holds with K = 1.
        return cls("heisenberg", (2, 1), 1.0)

    @classmethod
    def euclidean(cls, n):
        if n < 1:
            raise InvalidArgument("Euclidean dimension must be >= 1")
        return cls("euclidean", (int(n),), 1.0)

    @classmethod
    def from_id(cls, gid):
        gid = gid.strip().lower()
        if gid == "h1":
            return cls.heisenberg()
        if gid.startswith("r") and gid[1:].isdigit():
            return cls.euclidean(int(gid[1:]))
        raise InvalidArgument(f"unknown group id {gid!r}")

    @property
    def ident(self):
        return "h1" if self.kind == "heisenberg" else f"r{self.dim}"

    @property
    def Q(self):
        return sum((k + 1) * n for k, n in enumerate(self.layer_dims))

    @property
    def dim(self):
        return sum(self.layer_dims)

    @property
    def n1(self):
        return self.layer_dims[0]

    @property
    def degrees(self):
        return np.concatenate(
            [np.full(n, k + 1) for k, n in enumerate(self.layer_dims)]
        ).astype(float)

    @property
    def unit_ball_volume(self):
        """Lebesgue measure of the gauge ball B(0, 1)."""
        if self.kind == "heisenberg":
            return math.pi**2 / 8.0
        n = self.dim
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1)

    def ball_volume(self, r):
        """Exact |B(x, r)| = c r^Q (left invariance and dilation homogeneity)."""
        return self.unit_ball_volume * np.asarray(r, dtype=float) ** self.Q

    def _points(self, a):
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (self.dim,):
            raise InvalidArgument(
                f"point has {a.shape[-1:]} coordinates, group {self.ident} needs {self.dim}"
            )
        return a

    def multiply(self, a, b):
        a, b = self._points(a), self._points(b)
        c = a + b
        if self.kind == "heisenberg":
            c[..., 2] += 0.5 * (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0])
        return c

    def inverse(self, a):
        return -self._points(a)

    def dilate(self, a, eps):
        if not eps > 0:
            raise InvalidArgument("dilation factor must be positive")
        return self._points(a) * eps**self.degrees

    def gauge(self, a):
        a = self._points(a)
        if self.kind == "heisenberg":
            r2 = a[..., 0] ** 2 + a[..., 1] ** 2
            return np.sqrt(np.sqrt(r2 * r2 + 16.0 * a[..., 2] ** 2))
        return np.sqrt(np.sum(a * a, axis=-1))

    def distance(self, a, b):
        return self.gauge(self.multiply(self.inverse(a), b))

    def min_separation(self, spacing):
        """Lower bound on the distance between two distinct cell centers."""
        spacing = np.asarray(spacing, dtype=float)
        if self.kind == "heisenberg":
            return float(min(spacing[0], spacing[1], 2.0 * math.sqrt(spacing[2])))
        return float(spacing.min())

    def cell_radius(self, spacing):
        """Gauge size of half a cell diagonal."""
        return float(self.gauge(0.5 * np.asarray(spacing, dtype=float)))


def group_multiply(a, b, g):
    return g.multiply(a, b)


def dilate(a, eps, g):
    return g.dilate(a, eps)


def homogeneous_quasi_distance(a, b, g):
    return g.distance(a, b)


def quasi_triangle_constant(g, points_x, points_y, points_z):
    """Worst d(x,y) / (d(x,z) + d(z,y)) over the given triples."""
    dxy = g.distance(points_x, points_y)
    den = g.distance(points_x, points_z) + g.distance(points_z, points_y)
    ok = den > 0
    return float(np.max(dxy[ok] / den[ok])) if ok.any() else 0.0


@dataclass(frozen=True)
class GridDomain:
    """Cell-centered lattice over a box; one sample per cell."""

    bounds: tuple
    resolution: tuple

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        res = self.resolution
        if np.isscalar(res):
            res = (int(res),) * len(bounds)
        res = tuple(int(n) for n in res)
        if len(res) != len(bounds):
            raise InvalidArgument("bounds and resolution disagree on dimension")
        if any(hi <= lo for lo, hi in bounds):
            raise InvalidArgument("every axis needs lo < hi")
        if any(n < 1 for n in res):
            raise InvalidArgument("resolution must be positive")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def nodal(cls, bounds, n):
        """Grid whose outermost cell centers sit exactly on the faces of `bounds`.

        With n intervals per axis there are n + 1 cells; the box is widened by
        half a spacing on each side.
        """
        bounds = [(float(lo), float(hi)) for lo, hi in bounds]
        if np.isscalar(n):
            n = (int(n),) * len(bounds)
        new = []
        for (lo, hi), k in zip(bounds, n):
            h = (hi - lo) / k
            new.append((lo - h / 2, hi + h / 2))
        return cls(tuple(new), tuple(k + 1 for k in n))

    @property
    def ndim(self):
        return len(self.bounds)

    @property
    def shape(self):
        return self.resolution

    @property
    def size(self):
        return int(np.prod(self.resolution))

    @cached_property
    def spacing(self):
        return np.array([(hi - lo) / n for (lo, hi), n in zip(self.bounds, self.resolution)])

    @property
    def cell_measure(self):
        return float(np.prod(self.spacing))

    @property
    def measure(self):
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @cached_property
    def axes(self):
        return [
            lo + (np.arange(n) + 0.5) * h
            for (lo, _), n, h in zip(self.bounds, self.resolution, self.spacing)
        ]

    def mesh(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @cached_property
    def points(self):
        """Cell centers as an array of shape (*shape, ndim)."""
        return np.stack(self.mesh(), axis=-1)

    @property
    def center(self):
        return np.array([(lo + hi) / 2 for lo, hi in self.bounds])

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.ndim):
            idx = [slice(None)] * self.ndim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def refine(self, k=1):
        return GridDomain(self.bounds, tuple(n * 2**k for n in self.resolution))

    def check_function(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise InvalidArgument(f"grid function shape {f.shape} != domain shape {self.shape}")
        if not np.all(np.isfinite(f)):
            raise InvalidArgument("grid function has non-finite values")
        return f


def ball_mask(center, r, dom, g):
    """Cells whose centers lie in the open gauge ball B(center, r)."""
    return g.distance(np.asarray(center, dtype=float), dom.points) < r


def ball_measure(center, r, g, dom):
    """|B(center, r) ∩ dom| by cell counting.  Warns and returns 0 for empty balls."""
    if not r > 0:
        raise InvalidArgument("radius must be positive")
    count = int(np.count_nonzero(ball_mask(center, r, dom, g)))
    if count == 0:
        warnings.warn(f"ball of radius {r:g} contains no cell center", DegenerateBallWarning)
    return count * dom.cell_measure


@dataclass(frozen=True)
class BallFamily:
    """Finite family of balls centered at grid cells."""

    center_index: np.ndarray  # (m, ndim) integer cell indices
    radii: np.ndarray  # (m,)
    policy: str = "custom"

    def __post_init__(self):
        ci = np.asarray(self.center_index, dtype=int).reshape(len(self.radii), -1)
        object.__setattr__(self, "center_index", ci)
        object.__setattr__(self, "radii", np.asarray(self.radii, dtype=float))

    def __len__(self):
        return len(self.radii)

    def centers(self, dom):
        return np.stack([dom.axes[k][self.center_index[:, k]] for k in range(dom.ndim)], axis=-1)

    @classmethod
    def dyadic(cls, dom, g, stride=1, levels_per_octave=1, r_min=None, r_max=None, inside=True):
        """Grid-point centers (every `stride` cells) times radii r0 2^(k/levels).

        r0 defaults to half the minimal cell separation, so the smallest ball is
        the single cell around its center.  With inside=True only balls whose
        gauge bounding box lies in the domain are kept.
        """
        r0 = 0.5 * g.min_separation(dom.spacing) if r_min is None else float(r_min)
        lo = np.array([b[0] for b in dom.bounds])
        hi = np.array([b[1] for b in dom.bounds])
        diam = float(g.gauge(hi - lo))
        r_max = diam if r_max is None else float(r_max)
        radii = []
        k = 0
        while True:
            r = r0 * 2.0 ** (k / levels_per_octave)
            if r > r_max * (1 + 1e-12):
                break
            radii.append(r)
            k += 1
        strides = stride if np.iterable(stride) else [stride] * dom.ndim
        idx = np.stack(
            np.meshgrid(*[np.arange(0, n, s) for n, s in zip(dom.shape, strides)], indexing="ij"),
            axis=-1,
        ).reshape(-1, dom.ndim)
        centers = np.stack([dom.axes[k][idx[:, k]] for k in range(dom.ndim)], axis=-1)
        all_idx, all_r = [], []
        for r in radii:
            keep = np.ones(len(idx), dtype=bool)
            if inside:
                reach = _box_reach(g, centers, r)
                keep = np.all((centers - reach >= lo) & (centers + reach <= hi), axis=-1)
            all_idx.append(idx[keep])
            all_r.append(np.full(int(keep.sum()), r))
        if not all_idx:
            return cls(np.zeros((0, dom.ndim), dtype=int), np.zeros(0), "dyadic")
        return cls(np.concatenate(all_idx), np.concatenate(all_r), "dyadic")

    def enrich(self, dom, g, inside=True):
        """Same centers with twice as many radii per octave."""
        radii = np.unique(self.radii)
        extra = radii * 2**0.5 if len(radii) < 2 else np.sqrt(radii[:-1] * radii[1:])
        centers_idx = np.unique(self.center_index, axis=0)
        centers = np.stack([dom.axes[k][centers_idx[:, k]] for k in range(dom.ndim)], axis=-1)
        lo = np.array([b[0] for b in dom.bounds])
        hi = np.array([b[1] for b in dom.bounds])
        idx, rr = [self.center_index], [self.radii]
        for r in extra:
            keep = np.ones(len(centers), dtype=bool)
            if inside:
                reach = _box_reach(g, centers, r)
                keep = np.all((centers - reach >= lo) & (centers + reach <= hi), axis=-1)
            idx.append(centers_idx[keep])
            rr.append(np.full(int(keep.sum()), r))
        return BallFamily(np.concatenate(idx), np.concatenate(rr), self.policy + "+enriched")


def _box_reach(g, centers, r):
    """Per-axis half-extent of the coordinate bounding box of B(center, r)."""
    if g.kind == "heisenberg":
        cx, cy = centers[:, 0], centers[:, 1]
        reach_t = r * r / 4.0 + 0.5 * r * (np.abs(cx) + np.abs(cy))
        return np.stack([np.full_like(cx, r), np.full_like(cx, r), reach_t], axis=-1)
    return np.full_like(centers, r)


_IDENTITY = {"sum": 0.0, "max": -np.inf, "min": np.inf}
_COMBINE = {"sum": np.add, "max": np.maximum, "min": np.minimum}


def _moving(values, w, op):
    """Reduce over the window [j - w, j + w] along the last axis (clipped)."""
    n = values.shape[-1]
    if op == "sum":
        P = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
        j = np.arange(n)
        return P[..., np.minimum(j + w + 1, n)] - P[..., np.maximum(j - w, 0)]
    filt = maximum_filter1d if op == "max" else minimum_filter1d
    return filt(values, size=2 * w + 1, axis=-1, mode="constant", cval=_IDENTITY[op])


def _shift_slices(offsets, shape):
    base, nbr = [], []
    for k, n in zip(offsets, shape):
        base.append(slice(max(0, -k), n - max(0, k)))
        nbr.append(slice(max(0, k), n + min(0, k)))
    return tuple(base), tuple(nbr)


def ball_reduce(values, dom, g, radius, op="sum"):
    """For every cell x reduce `values` over the cells y with d(x, y) < radius.

    The ball is swept as a stack of chords along the last axis: for each
    offset in the leading axes the chord is an index interval, so sums use
    prefix sums and max/min use 1-D filters (Euclidean) or a sparse table
    (Heisenberg, where the chord is shifted by the group law).
    """
    if op not in _IDENTITY:
        raise InvalidArgument(f"unknown reduction {op!r}")
    values = np.asarray(values, dtype=float)
    h = dom.spacing
    shape = dom.shape
    n_last, h_last = shape[-1], h[-1]
    rest_h = h[:-1]
    reach = [min(int(math.ceil(radius / hk)), n - 1) for hk, n in zip(rest_h, shape[:-1])]
    out = np.full(shape, _IDENTITY[op])
    combine = _COMBINE[op]

    if g.kind == "euclidean":
        cache = {}
        for o in itertools.product(*(range(-m, m + 1) for m in reach)):
            rho2 = float(np.sum((np.array(o) * rest_h) ** 2)) if o else 0.0
            if rho2 >= radius * radius:
                continue
            H = math.sqrt(radius * radius - rho2)
            w = int(math.ceil(H / h_last)) - 1
            w = min(w, n_last - 1)
            if w < 0:
                continue
            if w not in cache:
                cache[w] = _moving(values, w, op)
            base, nbr = _shift_slices(o, shape[:-1])
            out[base] = combine(out[base], cache[w][nbr])
        return out

    # Heisenberg: rest axes are (x, y), chord along t.
    X, Y = dom.axes[0], dom.axes[1]
    jc = np.arange(n_last)
    if op == "sum":
        P = np.concatenate([np.zeros(shape[:-1] + (1,)), np.cumsum(values, axis=-1)], axis=-1)
    else:
        levels = max(1, int(math.floor(math.log2(n_last))) + 1)
        table = np.full((levels,) + shape, _IDENTITY[op])
        table[0] = values
        for k in range(1, levels):
            span = 2 ** (k - 1)
            table[k][..., : n_last - span] = combine(
                table[k - 1][..., : n_last - span], table[k - 1][..., span:]
            )
    for o in itertools.product(*(range(-m, m + 1) for m in reach)):
        dx, dy = o[0] * rest_h[0], o[1] * rest_h[1]
        rho2 = dx * dx + dy * dy
        if rho2 >= radius * radius:
            continue
        H = math.sqrt(radius**4 - rho2 * rho2) / 4.0
        base, nbr = _shift_slices(o, shape[:-1])
        cx = X[base[0]][:, None]
        cy = Y[base[1]][None, :]
        s = 0.5 * (cx * dy - cy * dx)
        lo_rel = np.floor((s - H) / h_last).astype(int) + 1
        hi_rel = np.ceil((s + H) / h_last).astype(int) - 1
        lo = np.clip(jc[None, None, :] + lo_rel[..., None], 0, n_last)
        hi = np.clip(jc[None, None, :] + hi_rel[..., None], -1, n_last - 1)
        empty = hi < lo
        if op == "sum":
            Pn = P[nbr]
            got = np.take_along_axis(Pn, np.maximum(hi + 1, lo), axis=-1) - np.take_along_axis(
                Pn, np.minimum(lo, n_last), axis=-1
            )
            got[empty] = 0.0
        else:
            length = np.maximum(hi - lo + 1, 1)
            k = np.floor(np.log2(length)).astype(int)
            Tn = np.moveaxis(table[(slice(None),) + nbr], 0, -2)
            Tn = Tn.reshape(Tn.shape[:-2] + (-1,))
            lo_c = np.minimum(lo, n_last - 1)
            i1 = k * n_last + lo_c
            i2 = k * n_last + np.clip(hi - 2**k + 1, 0, n_last - 1)
            got = combine(np.take_along_axis(Tn, i1, axis=-1), np.take_along_axis(Tn, i2, axis=-1))
            got[empty] = _IDENTITY[op]
        out[base] = combine(out[base], got)
    return out


def _check_grad_grid(dom):
    if any(n < 3 for n in dom.shape):
        raise InvalidArgument("horizontal derivatives need at least 3 cells per axis")


def horizontal_gradient(f, dom, g):
    """Components X_j f, stacked on axis 0.

    Central differences inside, one-sided first order at the faces.  On the
    Heisenberg group X1 = d/dx - (y/2) d/dt and X2 = d/dy + (x/2) d/dt.
    """
    _check_grad_grid(dom)
    f = np.asarray(f, dtype=float)
    parts = np.gradient(f, *dom.spacing, edge_order=1)
    if dom.ndim == 1:
        parts = [parts]
    if g.kind == "heisenberg":
        X, Y, _ = dom.mesh()
        dfx, dfy, dft = parts
        return np.stack([dfx - 0.5 * Y * dft, dfy + 0.5 * X * dft])
    return np.stack(parts)


def higher_order_gradient(f, m, dom, g):
    """|X^m f|: pointwise Euclidean norm over all derivatives of homogeneous degree m."""
    if m not in (1, 2):
        raise UnsupportedOrder(f"order {m} not supported (use 1 or 2)")
    Xf = horizontal_gradient(f, dom, g)
    if m == 1:
        return np.sqrt(np.sum(Xf**2, axis=0))
    total = np.zeros(dom.shape)
    for comp in Xf:
        total += np.sum(horizontal_gradient(comp, dom, g) ** 2, axis=0)
    if g.kind == "heisenberg":
        # the second-layer field T = d/dt has degree 2
        total += np.gradient(np.asarray(f, dtype=float), dom.spacing[2], axis=2, edge_order=1) ** 2
    return np.sqrt(total)
