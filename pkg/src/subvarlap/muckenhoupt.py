"""Muckenhoupt constants estimated over finite ball families.

A finite family only gives a lower bound for the supremum over all balls.
Membership of a weight is judged by how the estimate behaves when the family
(or the grid) is enriched: see `classify_growth`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConjugateInfinite, InvalidExponentPair, InvalidWeight
from .geometry import _box_reach, ball_mask
from .lebesgue import conjugate_exponent, luxemburg_norm

__all__ = [
    "MuckenhouptEstimate",
    "apq_ball_quantities",
    "apq_constant_estimate",
    "doubling_check",
    "classify_growth",
]

GAMMA_TOL = 1e-12


@dataclass
class MuckenhouptEstimate:
    constant: float
    center: np.ndarray
    radius: float
    gamma: float
    per_ball: np.ndarray


def _exponent_pair(p, q, shape):
    p = np.broadcast_to(np.asarray(p, dtype=float), shape)
    q = np.broadcast_to(np.asarray(q, dtype=float), shape)
    if q.min() <= 1:
        raise InvalidExponentPair("need q(x) > 1 everywhere")
    gam = 1.0 / p - 1.0 / q
    if gam.max() - gam.min() > GAMMA_TOL:
        raise InvalidExponentPair(
            f"1/p - 1/q varies by {gam.max() - gam.min():.3g}; it must be constant"
        )
    gamma = float(gam.mean())
    if gamma < -GAMMA_TOL or gamma >= 1:
        raise InvalidExponentPair(f"gamma = {gamma:g} outside [0, 1)")
    return p, q, max(gamma, 0.0)


def apq_ball_quantities(w, p, q, balls, dom, g):
    """|B|^(gamma-1) ||w chi_B||_q ||w^-1 chi_B||_p' for each ball; also returns gamma.

    Norms are unweighted Luxemburg norms with respect to Lebesgue measure and
    |B| is the cell-counted measure of B ∩ Ω.  p = 1 (constant) gives the
    sup norm for w^-1.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != dom.shape:
        w = np.broadcast_to(w, dom.shape)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise InvalidWeight("weight must be positive and finite on the grid")
    p, q, gamma = _exponent_pair(p, q, dom.shape)
    if np.all(p == 1):
        pc = None
    elif np.any(p <= 1):
        raise ConjugateInfinite("mixed p = 1 and p > 1 is not supported")
    else:
        pc = conjugate_exponent(p)
    dx = dom.cell_measure
    centers = balls.centers(dom)
    vals = np.empty(len(balls))
    inv = 1.0 / w
    for i, (c, r) in enumerate(zip(centers, balls.radii)):
        m = ball_mask(c, r, dom, g)
        count = int(m.sum())
        if count == 0:
            vals[i] = np.nan
            continue
        size = count * dx
        a = luxemburg_norm(w[m], q[m], dx=dx)
        b = inv[m].max() if pc is None else luxemburg_norm(inv[m], pc[m], dx=dx)
        vals[i] = size ** (gamma - 1.0) * a * b
    return vals, gamma


def apq_constant_estimate(w, p, q, balls, dom, g):
    """Max over the family of the A_{p(.),q(.)} ball quantity (a lower bound for [w])."""
    vals, gamma = apq_ball_quantities(w, p, q, balls, dom, g)
    if len(vals) == 0 or np.all(np.isnan(vals)):
        return MuckenhouptEstimate(0.0, None, float("nan"), gamma, vals)
    i = int(np.nanargmax(vals))
    return MuckenhouptEstimate(
        float(vals[i]), balls.centers(dom)[i], float(balls.radii[i]), gamma, vals
    )


def doubling_check(density, balls, dom, g):
    """Worst mu(B(x, 2r)) / mu(B(x, r)) over balls whose double stays inside the domain."""
    density = np.asarray(density, dtype=float)
    if np.any(density < 0):
        raise InvalidWeight("density must be non-negative")
    lo = np.array([b[0] for b in dom.bounds])
    hi = np.array([b[1] for b in dom.bounds])
    centers = balls.centers(dom)
    worst, skipped = 0.0, 0
    for c, r in zip(centers, balls.radii):
        reach = _box_reach(g, c[None, :], 2 * r)[0]
        if np.any(c - reach < lo) or np.any(c + reach > hi):
            continue
        small = density[ball_mask(c, r, dom, g)].sum()
        if small <= 0:
            skipped += 1
            continue
        big = density[ball_mask(c, 2 * r, dom, g)].sum()
        worst = max(worst, big / small)
    if skipped:
        warnings.warn(f"{skipped} zero-measure balls excluded from the doubling check")
    return float(worst)


def classify_growth(estimates, stable_tol=0.05, blowup=2.0):
    """Judge a sequence of estimates from successive enrichments or refinements.

    'bounded' when each of the last two steps changes the value by less than
    stable_tol (relative); 'divergent' when each of the last two steps
    multiplies it by at least `blowup`; otherwise 'inconclusive'.
    """
    v = np.asarray(estimates, dtype=float)
    if len(v) < 3:
        raise ValueError("need at least three estimates")
    ratios = v[-2:] / v[-3:-1]
    if np.all(ratios >= blowup):
        return "divergent"
    if np.all(np.abs(ratios - 1.0) < stable_tol):
        return "bounded"
    return "inconclusive"
