"""Maximal and fractional-integral operators on grids, the Rubio de Francia
iteration, and the ball conditions used to test weighted bounds for I_alpha.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import IncompleteFamily, InvalidArgument, NormEstimateTooSmall
from .geometry import BallFamily, ball_mask, ball_reduce
from .lebesgue import conjugate_exponent, luxemburg_norm

__all__ = [
    "MaximalOperator",
    "maximal_operator",
    "fractional_integral",
    "truncated_kernel",
    "OperatorNormEstimate",
    "operator_norm_estimate",
    "probe_family",
    "RubioDeFrancia",
    "rubio_de_francia",
    "BallTestResult",
    "sawyer_wheeden_check",
    "WeakTypeResult",
    "weak_type_check",
]


class MaximalOperator:
    """Uncentered maximal operator over a ball family with grid-cell centers.

    Mf(x) is the largest mu-average of |f| over the family balls containing x,
    with mu = density * Lebesgue.  Per radius, ball sums at every center and
    the spread of averages back to the points of each ball are both ball
    reductions, so one application costs O(N * radius / h) per radius.
    """

    def __init__(self, dom, g, balls=None, density=None):
        self.dom, self.g = dom, g
        self.balls = BallFamily.dyadic(dom, g, inside=False) if balls is None else balls
        dens = np.ones(dom.shape) if density is None else np.asarray(density, dtype=float)
        if np.any(dens < 0):
            raise InvalidArgument("density must be non-negative")
        self.mu = dens * dom.cell_measure
        self._levels = []
        covered = np.zeros(dom.shape, dtype=bool)
        for r in np.unique(self.balls.radii):
            sel = self.balls.radii == r
            centers = np.zeros(dom.shape, dtype=bool)
            centers[tuple(self.balls.center_index[sel].T)] = True
            mu_b = ball_reduce(self.mu, dom, g, r, "sum")
            live = centers & (mu_b > 0)
            if np.any(centers & ~live):
                warnings.warn(f"zero-measure balls at radius {r:g} excluded")
            self._levels.append((r, live, mu_b))
            covered |= ball_reduce(live.astype(float), dom, g, r, "max") > 0
        if not covered.all():
            raise IncompleteFamily(f"{int((~covered).sum())} cells lie in no family ball")

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        a = np.abs(f) * self.mu
        out = np.full(self.dom.shape, -np.inf)
        for r, live, mu_b in self._levels:
            s = ball_reduce(a, self.dom, self.g, r, "sum")
            avg = np.full(self.dom.shape, -np.inf)
            avg[live] = np.maximum(s[live], 0.0) / mu_b[live]
            np.maximum(out, ball_reduce(avg, self.dom, self.g, r, "max"), out=out)
        return out


def maximal_operator(f, balls, dom, g, density=None):
    return MaximalOperator(dom, g, balls, density)(f)


def _kernel_scale(alpha, g):
    if not 0 < alpha < g.Q:
        raise InvalidArgument(f"alpha must lie in (0, Q) = (0, {g.Q})")
    return 1.0 / g.unit_ball_volume


def fractional_integral(f, alpha, dom, g, method=None):
    """I_alpha f(x) = sum_y f(y) d(x,y)^alpha / |B(x, d(x,y))| dx.

    |B(x, r)| is the exact gauge-ball volume c r^Q, so the kernel is
    d^(alpha - Q) / c.  The self cell uses d = half the cell diagonal.
    Euclidean grids use an FFT convolution; Heisenberg grids a direct sum.
    """
    f = dom.check_function(f)
    scale = _kernel_scale(alpha, g)
    h_cell = g.cell_radius(dom.spacing)
    if method is None:
        method = "fft" if g.kind == "euclidean" else "direct"
    if method == "fft":
        if g.kind != "euclidean":
            raise InvalidArgument("FFT path needs a translation-invariant distance")
        offs = np.meshgrid(
            *[np.arange(-(n - 1), n) * h for n, h in zip(dom.shape, dom.spacing)], indexing="ij"
        )
        d = np.sqrt(sum(o * o for o in offs))
        center = tuple(n - 1 for n in dom.shape)
        d[center] = h_cell
        K = d ** (alpha - g.Q) * scale
        full = fftconvolve(f, K, mode="full")
        out = full[tuple(slice(n - 1, 2 * n - 1) for n in dom.shape)]
        return out * dom.cell_measure
    if method != "direct":
        raise InvalidArgument(f"unknown method {method!r}")
    pts = dom.points.reshape(-1, dom.ndim)
    flat = f.reshape(-1)
    out = np.empty(flat.size)
    chunk = max(1, 2_000_000 // flat.size)
    for s in range(0, flat.size, chunk):
        d = g.distance(pts[s : s + chunk, None, :], pts[None, :, :])
        d[d == 0] = h_cell
        out[s : s + chunk] = (d ** (alpha - g.Q)) @ flat
    return (out * scale * dom.cell_measure).reshape(dom.shape)


def truncated_kernel(x, y, r, alpha, g):
    """K_r(x, y) = min(r^alpha / |B(x,r)|, d^alpha / |B(x,d)|)."""
    scale = _kernel_scale(alpha, g)
    d = g.distance(x, y)
    return np.maximum(d, r) ** (alpha - g.Q) * scale


@dataclass
class OperatorNormEstimate:
    value: float
    probe: int  # index of the maximizing probe
    ratios: np.ndarray
    space: dict = field(default_factory=dict)


def operator_norm_estimate(op, probes, p, w=None, dx=1.0, clamp_at_one=False, q=None):
    """max over probes of ||op f|| / ||f|| in L^{p(.)}_w; a lower bound for the norm.

    With `q` given, the output norm is taken in L^{q(.)}_w instead (for
    operators between different spaces such as I_alpha: L^p -> L^q).
    """
    q = p if q is None else q
    ratios = []
    for f in probes:
        den = luxemburg_norm(f, p, w, dx)
        if den == 0:
            warnings.warn("zero-norm probe skipped")
            ratios.append(np.nan)
            continue
        ratios.append(luxemburg_norm(op(f), q, w, dx) / den)
    ratios = np.array(ratios)
    if np.all(np.isnan(ratios)):
        raise InvalidArgument("no usable probe")
    i = int(np.nanargmax(ratios))
    value = float(ratios[i])
    if clamp_at_one:
        value = max(value, 1.0)
    return OperatorNormEstimate(value, i, ratios, {"p": p, "q": q, "weighted": w is not None})


def probe_family(dom, count=12, seed=0):
    """Constant, ball indicators and smooth bumps of several sizes and places."""
    rng = np.random.default_rng(seed)
    pts = dom.points
    lo = np.array([b[0] for b in dom.bounds])
    hi = np.array([b[1] for b in dom.bounds])
    ext = hi - lo
    probes = [np.ones(dom.shape)]
    for k in range(count):
        c = lo + ext * rng.uniform(0.1, 0.9, dom.ndim)
        r = float(np.min(ext)) * 2.0 ** -rng.uniform(1, 4)
        rho = np.sqrt(np.sum(((pts - c) / 1.0) ** 2, axis=-1)) / r
        if k % 2 == 0:
            f = (rho < 1).astype(float)
        else:
            f = np.clip(1 - rho**2, 0, None) ** 2
        if f.any():
            probes.append(f)
    return probes


@dataclass
class RubioDeFrancia:
    values: np.ndarray
    terms: int
    last_term_norm: float
    truncation_certificate: float  # sup of 2 ||M|| * (first omitted term)
    norm_M: float


def rubio_de_francia(h, p, maximal, norm_M, dx=1.0, density=None, K_terms=30, rel_tol=1e-12):
    """Truncated series sum_k M^k h / (2 ||M||)^k.

    Norms are taken in L^{p(.)} of the measure density * dx.  Stops after
    K_terms terms or once a term's norm drops below rel_tol * ||h||.
    """
    E = norm_M.value if isinstance(norm_M, OperatorNormEstimate) else float(norm_M)
    if E < 1:
        raise InvalidArgument("the maximal operator has norm >= 1; got an estimate below 1")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgument("h must be non-negative")
    if K_terms < 1:
        raise InvalidArgument("K_terms must be >= 1")
    meas = dx if density is None else np.asarray(density) * dx
    h_norm = luxemburg_norm(h, p, dx=meas)
    total = h.copy()
    Mk = h
    prev = h_norm
    k = 0
    for k in range(1, K_terms + 1):
        Mk = maximal(Mk)
        term = Mk / (2 * E) ** k
        tn = luxemburg_norm(term, p, dx=meas)
        if tn >= prev and tn > 0:
            raise NormEstimateTooSmall(
                f"term {k} has norm {tn:.3g} >= previous {prev:.3g}; increase the estimate of ||M||"
            )
        total += term
        prev = tn
        if tn <= rel_tol * h_norm:
            break
    nxt = maximal(Mk) / (2 * E) ** (k + 1)
    return RubioDeFrancia(total, k + 1, prev, float(2 * E * nxt.max()), E)


@dataclass
class BallTestResult:
    value: float
    per_ball: np.ndarray
    skipped: int


def sawyer_wheeden_check(w_target, v_source, p, q, alpha, balls, dom, g, max_pairs=10_000, seed=0):
    """max over balls of phi(B) (int_B w)^(1/q) (int_B v^(1-p'))^(1/p').

    phi(B) is the largest kernel value over sampled cell pairs in B that are
    at least C(K) r(B) apart, C(K) = K^-4 / 9.
    """
    if not 1 < p <= q < math.inf:
        raise InvalidArgument("need 1 < p <= q < inf")
    scale = _kernel_scale(alpha, g)
    pc = float(conjugate_exponent(p))
    w_target = np.broadcast_to(np.asarray(w_target, dtype=float), dom.shape)
    v_source = np.broadcast_to(np.asarray(v_source, dtype=float), dom.shape)
    sep = g.K**-4 / 9.0
    dx = dom.cell_measure
    rng = np.random.default_rng(seed)
    vals, skipped = [], 0
    for c, r in zip(balls.centers(dom), balls.radii):
        m = ball_mask(c, r, dom, g)
        pts = dom.points[m]
        n = len(pts)
        if n * n <= max_pairs * 100:
            i, j = np.triu_indices(n, 1)
        else:
            i = rng.integers(0, n, max_pairs)
            j = rng.integers(0, n, max_pairs)
        d = g.distance(pts[i], pts[j])
        ok = d >= sep * r
        if not ok.any():
            skipped += 1
            vals.append(np.nan)
            continue
        phi = float(d[ok].min()) ** (alpha - g.Q) * scale
        iw = w_target[m].sum() * dx
        iv = (v_source[m] ** (1 - pc)).sum() * dx
        vals.append(phi * iw ** (1 / q) * iv ** (1 / pc))
    if skipped:
        warnings.warn(f"{skipped} balls had no separated pair and were skipped")
    vals = np.array(vals)
    value = float(np.nanmax(vals)) if len(vals) and not np.all(np.isnan(vals)) else 0.0
    return BallTestResult(value, vals, skipped)


@dataclass
class WeakTypeResult:
    constant: float
    t_at_max: float
    t_grid: np.ndarray
    ratios: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _l_quantity_p1(u, v, alpha, q, dom, g, n_centers=32, seed=0):
    """p = 1 branch of the weak-type constant: sup over (x, r) of
    (int_{B(x,r)} v)^(1/q) * max_y K_r(x, y) / u(y), on sampled centers."""
    rng = np.random.default_rng(seed)
    pts = dom.points.reshape(-1, dom.ndim)
    vv = np.broadcast_to(v, dom.shape).reshape(-1)
    uu = np.broadcast_to(u, dom.shape).reshape(-1)
    sel = rng.choice(len(pts), size=min(n_centers, len(pts)), replace=False)
    r0 = 0.5 * g.min_separation(dom.spacing)
    lo = np.array([b[0] for b in dom.bounds])
    hi = np.array([b[1] for b in dom.bounds])
    r_max = float(g.gauge(hi - lo))
    best = 0.0
    for x in pts[sel]:
        d = g.distance(x, pts)
        r = r0
        while r <= r_max:
            vb = vv[d < r].sum() * dom.cell_measure
            kr = np.maximum(d, r) ** (alpha - g.Q) / g.unit_ball_volume
            best = max(best, vb ** (1 / q) * float(np.max(kr / uu)))
            r *= 2
    return best


def weak_type_check(f, alpha, p, q, w, dom, g, t_per_octave=8, octaves=None, If=None):
    """max over a log t-grid of
    (int_{|I f| > t} w^q)^(1/q) / (t^-p int |f|^p w^p)^(1/p).

    The t-grid is t_k = max|I f| 2^(-k / t_per_octave); grids with
    t_per_octave = m and 2m are nested.
    """
    f = dom.check_function(f)
    w = np.broadcast_to(np.asarray(w, dtype=float), dom.shape)
    dx = dom.cell_measure
    if If is None:
        If = fractional_integral(f, alpha, dom, g)
    a = np.abs(If)
    mass = float(np.sum(np.abs(f) ** p * w**p) * dx)
    diag = {}
    if p == 1:
        diag["L_p1"] = _l_quantity_p1(w**p, w**q, alpha, q, dom, g)
    if mass == 0 or a.max() == 0:
        return WeakTypeResult(0.0, float("nan"), np.zeros(0), np.zeros(0), diag)
    tmax = float(a.max())
    if octaves is None:
        pos = a[a > 0]
        octaves = max(1, int(math.ceil(math.log2(tmax / pos.min())))) if pos.size else 1
    k = np.arange(octaves * int(t_per_octave) + 1)
    t = tmax * 2.0 ** (-k / t_per_octave)
    wq = w**q
    order = np.argsort(a.reshape(-1))
    sorted_a = a.reshape(-1)[order]
    csum = np.concatenate([[0.0], np.cumsum(wq.reshape(-1)[order][::-1])])
    # measure of {|I f| > t}: cells strictly above t
    above = len(sorted_a) - np.searchsorted(sorted_a, t, side="right")
    lhs = csum[above] * dx
    rhs = (mass / t**p) ** (1.0 / p)
    ratios = lhs ** (1.0 / q) / rhs
    i = int(np.argmax(ratios))
    return WeakTypeResult(float(ratios[i]), float(t[i]), t, ratios, diag)

