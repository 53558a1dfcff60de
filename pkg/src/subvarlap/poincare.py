"""Empirical Poincaré-Sobolev ratios, level truncation and the representation check.

Every quantity here is a ratio of two norms computed on a grid, so a sweep
over test functions gives a lower bound for the best constant.  Stability of
the sweep maximum under grid refinement is the practical evidence that the
constant is finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    GateFailure,
    InvalidArgument,
    SobolevExponentUndefined,
    UnsupportedOrder,
)
from .geometry import BallFamily, ball_mask, higher_order_gradient
from .lebesgue import exponent_bounds, jump_condition_check, luxemburg_norm, sobolev_exponent
from .muckenhoupt import apq_constant_estimate, classify_growth
from .operators import fractional_integral

__all__ = [
    "TestFunctionFamily",
    "domain_mean",
    "PoincareRatio",
    "poincare_ratio",
    "RatioReport",
    "ratio_sweep",
    "refinement_sweep",
    "level_truncation",
    "central_ball",
    "RepresentationResult",
    "representation_check",
    "grid_field",
]

GENERATORS = ("bumps", "poly", "trig", "tents")
INEQUALITIES = {
    # name: (mode, same exponent on both sides)
    "prin": ("mean", False),
    "poincare": ("zero", False),
    "poincare2": ("zero", True),
}


def grid_field(value, dom):
    """Evaluate a scalar, array or callable(points) on the cells of `dom`."""
    if callable(value):
        return np.broadcast_to(np.asarray(value(dom.points), dtype=float), dom.shape).copy()
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full(dom.shape, float(a))
    if a.shape != dom.shape:
        raise InvalidArgument(f"field shape {a.shape} != domain shape {dom.shape}")
    return a


def _unit_coords(dom):
    """Cell centers mapped so the outermost centers sit at 0 and 1 on each axis."""
    out = []
    for ax, n in zip(dom.axes, dom.shape):
        out.append((ax - ax[0]) / (ax[-1] - ax[0]) if n > 1 else np.full(1, 0.5))
    return np.stack(np.meshgrid(*out, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class TestFunctionFamily:
    """Reproducible Lipschitz test functions, defined on the unit cube and
    mapped onto any grid, so members are comparable across refinements.

    With zero_boundary=True every member carries the factor prod sin(pi u_k)
    and vanishes on the boundary cells.
    """

    __test__ = False  # keep pytest from collecting this class

    generator: str
    count: int
    seed: int = 0
    zero_boundary: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise InvalidArgument(f"unknown generator {self.generator!r}; use one of {GENERATORS}")
        if self.count < 1:
            raise InvalidArgument("family must be non-empty")

    def _params(self, ndim):
        rng = np.random.default_rng([self.seed, GENERATORS.index(self.generator), ndim])
        out = []
        for _ in range(self.count):
            out.append(
                {
                    "c": rng.uniform(0.2, 0.8, ndim),
                    "r": rng.uniform(0.25, 0.6),
                    "deg": rng.integers(0, 3, ndim),
                    "k": rng.integers(-3, 4, (4, ndim)),
                    "amp": rng.normal(size=4),
                    "phase": rng.uniform(0, 2 * np.pi, 4),
                }
            )
        return out

    def member(self, i, dom):
        u = _unit_coords(dom)
        prm = self._params(dom.ndim)[i]
        c, r = prm["c"], prm["r"]
        rho2 = np.sum((u - c) ** 2, axis=-1) / r**2
        if self.generator == "bumps":
            f = np.clip(1 - rho2, 0, None) ** 2 + 0.1 * u[..., 0]
        elif self.generator == "poly":
            f = np.prod((u - c) ** prm["deg"] * 1.0, axis=-1) * (1 + np.clip(1 - rho2, 0, None) ** 2)
            f = f + u[..., -1]
        elif self.generator == "trig":
            f = np.zeros(dom.shape)
            for k, a, ph in zip(prm["k"], prm["amp"], prm["phase"]):
                f += a * np.cos(2 * np.pi * (u @ k) + ph)
        else:
            f = np.clip(1 - np.sum(np.abs(u - c), axis=-1) / r, 0, None) + 0.1 * u[..., 0]
        if self.zero_boundary:
            f = f * np.prod(np.sin(np.pi * u), axis=-1)
            f[dom.boundary_mask()] = 0.0
        return f

    def functions(self, dom):
        return [self.member(i, dom) for i in range(self.count)]


def domain_mean(f, dom, density=None):
    """(1/nu(Omega)) sum f nu dx, nu = density * Lebesgue (default Lebesgue)."""
    f = np.asarray(f, dtype=float)
    if density is None:
        return float(f.mean())
    d = np.broadcast_to(np.asarray(density, dtype=float), f.shape)
    mass = d.sum()
    if mass <= 0:
        raise InvalidArgument("density has zero mass")
    return float((f * d).sum() / mass)


@dataclass
class PoincareRatio:
    ratio: float  # nan when vacuous, inf when the right side vanishes
    numerator: float
    denominator: float
    status: str  # "ok", "vacuous" or "infinite"


def _target_exponent(p, g, order, same_exponent):
    pmax = float(np.max(p))
    if pmax >= g.Q / order:
        raise SobolevExponentUndefined(f"p_plus = {pmax:g} >= Q/m = {g.Q / order:g}")
    return p if same_exponent else sobolev_exponent(p, g.Q, order)


def poincare_ratio(f, p, w, dom, g, mode="mean", order=1, same_exponent=False):
    """||numerator||_{p*_m, w} / ||X^m f||_{p, w} for one grid function.

    mode="mean": numerator f - f_Omega (order 1 only).
    mode="zero": numerator f, which must vanish on the boundary cells.
    same_exponent=True measures the numerator in L^{p(.)}_w instead.
    """
    if order not in (1, 2):
        raise UnsupportedOrder(f"order {order} not supported (use 1 or 2)")
    f = dom.check_function(f)
    p = grid_field(p, dom)
    w = grid_field(1.0 if w is None else w, dom)
    if np.any(w <= 0):
        raise InvalidArgument("weight must be positive")
    exponent_bounds(p)
    target = _target_exponent(p, g, order, same_exponent)
    scale = float(np.max(np.abs(f)))
    if mode == "mean":
        if order != 1:
            raise UnsupportedOrder("the mean-subtracted ratio is first order only")
        num = f - domain_mean(f, dom)
    elif mode == "zero":
        if np.max(np.abs(f[dom.boundary_mask()]), initial=0.0) > 1e-12 * max(scale, 1e-300):
            raise InvalidArgument("zero-boundary mode needs f = 0 on the boundary cells")
        num = f
    else:
        raise InvalidArgument(f"unknown mode {mode!r}")
    dx = dom.cell_measure
    if scale == 0 or np.max(np.abs(num)) <= 1e-12 * scale:
        return PoincareRatio(float("nan"), 0.0, 0.0, "vacuous")
    a = luxemburg_norm(num, target, w, dx)
    b = luxemburg_norm(higher_order_gradient(f, order, dom, g), p, w, dx)
    if b == 0:
        return PoincareRatio(float("inf"), a, 0.0, "infinite")
    return PoincareRatio(a / b, a, b, "ok")


@dataclass
class RatioReport:
    ratios: np.ndarray  # nan for vacuous members
    status: list
    numerators: np.ndarray
    denominators: np.ndarray
    max: float  # nan when every member is vacuous
    argmax: int  # -1 when every member is vacuous
    resolution: tuple
    inequality: str
    gates: dict = field(default_factory=dict)


def _weight_gate(w, p_minus, dom, g, stride):
    q = g.Q * p_minus / (g.Q - p_minus)
    fam = BallFamily.dyadic(dom, g, stride=stride)
    if len(fam) == 0:
        raise GateFailure("apq-weight", "no ball of the family fits in the domain")
    est = [apq_constant_estimate(w, p_minus, q, fam, dom, g).constant]
    for _ in range(2):
        fam = fam.enrich(dom, g)
        est.append(apq_constant_estimate(w, p_minus, q, fam, dom, g).constant)
    verdict = classify_growth(est)
    if not np.all(np.isfinite(est)) or verdict == "divergent":
        raise GateFailure("apq-weight", f"A_(p-,p-*) estimates {est} judged {verdict}")
    return {"estimates": est, "verdict": verdict}


def ratio_sweep(family, dom, g, p, w=None, inequality="prin", order=1, jump_delta=None,
                gate_stride=None):
    """Evaluate one inequality over a test-function family.

    inequality: "prin" (mean-subtracted, p* on the left), "poincare"
    (zero boundary, order m, p*_m on the left) or "poincare2" (zero boundary,
    same exponent on both sides; also gated by the jump condition and by a
    finite A_(p-, p-*) estimate for w).  Failed preconditions raise GateFailure.
    """
    if inequality not in INEQUALITIES:
        raise InvalidArgument(f"unknown inequality {inequality!r}")
    mode, same = INEQUALITIES[inequality]
    if inequality != "poincare":
        order = 1
    if (mode == "zero") != family.zero_boundary:
        raise InvalidArgument(f"{inequality} needs a family with zero_boundary={mode == 'zero'}")
    pf = grid_field(p, dom)
    wf = grid_field(1.0 if w is None else w, dom)
    p_minus, p_plus = exponent_bounds(pf)
    if p_plus >= g.Q / order:
        raise GateFailure("p+ < Q/m", f"p_plus = {p_plus:g} >= Q/m = {g.Q / order:g}")
    gates = {"p+ < Q/m": True}
    if inequality == "poincare2":
        delta = 4 * g.min_separation(dom.spacing) if jump_delta is None else jump_delta
        jc = jump_condition_check(pf, dom, g, delta)
        if not jc.holds:
            raise GateFailure("jump-condition", f"{int(jc.failing.sum())} cells violate it at delta={delta:g}")
        stride = gate_stride or max(1, min(dom.shape) // 4)
        gates["jump-condition"] = True
        gates["apq-weight"] = _weight_gate(wf, p_minus, dom, g, stride)
    results = [
        poincare_ratio(f, pf, wf, dom, g, mode=mode, order=order, same_exponent=same)
        for f in family.functions(dom)
    ]
    ratios = np.array([r.ratio for r in results])
    finite = np.where(np.isnan(ratios), -np.inf, ratios)
    if np.all(np.isnan(ratios)):
        mx, arg = float("nan"), -1
    else:
        arg = int(np.argmax(finite))
        mx = float(ratios[arg])
    return RatioReport(
        ratios,
        [r.status for r in results],
        np.array([r.numerator for r in results]),
        np.array([r.denominator for r in results]),
        mx,
        arg,
        tuple(dom.shape),
        inequality,
        gates,
    )


def refinement_sweep(family, dom, g, p, w=None, inequality="prin", refinements=1, **kw):
    """Run ratio_sweep on dom and its successive refinements.

    p and w should be callables (or scalars) so they are re-evaluated on each
    grid.  Returns the reports and the largest ratio between consecutive maxima
    (max/min of the pair, so 1 means perfectly stable).
    """
    reports = [ratio_sweep(family, dom, g, p, w, inequality, **kw)]
    for k in range(1, refinements + 1):
        reports.append(ratio_sweep(family, dom.refine(k), g, p, w, inequality, **kw))
    maxima = np.array([r.max for r in reports])
    pairs = np.stack([maxima[:-1], maxima[1:]])
    factor = float(np.max(pairs.max(axis=0) / pairs.min(axis=0))) if len(maxima) > 1 else 1.0
    return reports, factor


def level_truncation(f, c, j):
    """f_j = clamp(|f - c|, 2^j, 2^(j+1))."""
    gv = np.abs(np.asarray(f, dtype=float) - c)
    return np.clip(gv, 2.0**j, 2.0 ** (j + 1))


def central_ball(dom, g):
    """Largest gauge ball centered at the center of the box that fits in it."""
    c = dom.center
    half = np.array([(hi - lo) / 2 for lo, hi in dom.bounds])
    if g.kind == "heisenberg":
        b = 0.5 * (abs(c[0]) + abs(c[1]))
        # t-reach r^2/4 + b r of the ball must not exceed the half-height
        r_t = 2.0 * (-b + math.sqrt(b * b + half[2]))
        return c, float(min(half[0], half[1], r_t))
    return c, float(half.min())


@dataclass
class RepresentationResult:
    constant: float  # nan when vacuous
    status: str
    mean_B0: float
    ball: tuple
    used: int  # interior points with a usable denominator


def representation_check(f, dom, g, B0=None, eps=1e-12):
    """max over interior x of |f(x) - f_B0| / I_1(|Xf|)(x)."""
    f = dom.check_function(f)
    center, r0 = central_ball(dom, g) if B0 is None else B0
    m = ball_mask(center, r0, dom, g)
    if not m.any():
        raise InvalidArgument("central ball contains no cell")
    fb = float(f[m].mean())
    den = fractional_integral(higher_order_gradient(f, 1, dom, g), 1.0, dom, g)
    num = np.abs(f - fb)
    use = ~dom.boundary_mask() & (den >= eps)
    if not use.any() or np.max(num[use]) <= 1e-12 * max(np.max(np.abs(f)), 1e-300):
        return RepresentationResult(float("nan"), "vacuous", fb, (center, r0), int(use.sum()))
    return RepresentationResult(float(np.max(num[use] / den[use])), "ok", fb, (center, r0), int(use.sum()))
