"""Modulars, Luxemburg norms and exponent regularity for variable Lebesgue spaces.

Grid functions, exponents and weights are plain arrays of the same shape.
The measure is passed as `dx`: the cell measure (scalar) or a per-cell array
when the underlying measure has a density.  A weight `w` turns the norm into
the one of L^{p(.)}_w, i.e. the modular integrates |f w|^p.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .errors import (
    ConjugateInfinite,
    InvalidArgument,
    SobolevExponentUndefined,
)
from .geometry import ball_reduce

__all__ = [
    "exponent_bounds",
    "modular",
    "luxemburg_norm",
    "conjugate_exponent",
    "sobolev_exponent",
    "log_holder_check",
    "jump_condition_check",
    "LogHolderResult",
    "JumpConditionResult",
]


def exponent_bounds(p, where=None):
    """(p_minus, p_plus) of an exponent field, optionally restricted to a mask."""
    p = np.asarray(p, dtype=float)
    if where is not None:
        p = np.broadcast_to(p, np.shape(where))[where]
    if p.size == 0:
        raise InvalidArgument("empty exponent field")
    if not np.all(np.isfinite(p)) or p.min() < 1:
        raise InvalidArgument("exponent must be finite and >= 1")
    return float(p.min()), float(p.max())


def _log_terms(f, p, w, dx):
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise InvalidArgument("function has non-finite values")
    a = np.abs(f)
    if w is not None:
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgument("weight must be finite and non-negative")
        a = a * w
    p = np.broadcast_to(np.asarray(p, dtype=float), a.shape)
    dx = np.broadcast_to(np.asarray(dx, dtype=float), a.shape)
    if not np.all(np.isfinite(p)) or np.any(p < 1):
        raise InvalidArgument("exponent must be finite and >= 1")
    live = (a > 0) & (dx > 0)
    return np.log(a[live]), p[live], np.log(dx[live])


def modular(f, p, w=None, dx=1.0):
    """Sum over cells of |f w|^p dx."""
    la, pp, ldx = _log_terms(f, p, w, dx)
    if la.size == 0:
        return 0.0
    return float(np.exp(logsumexp(pp * la + ldx)))


def luxemburg_norm(f, p, w=None, dx=1.0):
    """inf{lam > 0 : modular(f / lam) <= 1}.

    The root of log modular(f / e^s) = 0 is bracketed by the norm-modular
    sandwich and polished with Brent's method to ~1e-14 in s.
    """
    la, pp, ldx = _log_terms(f, p, w, dx)
    if la.size == 0:
        return 0.0
    if pp.max() == pp.min():
        return float(math.exp(logsumexp(pp * la + ldx) / pp[0]))

    def phi(s):
        return logsumexp(pp * (la - s) + ldx)

    lr = phi(0.0)
    p_lo, p_hi = pp.min(), pp.max()
    a, b = sorted((lr / p_lo, lr / p_hi))
    pad = 1e-9 * (1.0 + abs(a) + abs(b))
    a, b = a - pad, b + pad
    fa, fb = phi(a), phi(b)
    while fa < 0:
        a -= 1.0 + abs(a)
        fa = phi(a)
    while fb > 0:
        b += 1.0 + abs(b)
        fb = phi(b)
    if fa == 0:
        return float(math.exp(a))
    if fb == 0:
        return float(math.exp(b))
    s = brentq(phi, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(math.exp(s))


def conjugate_exponent(p):
    p = np.asarray(p, dtype=float)
    if np.any(p <= 1):
        raise ConjugateInfinite("p(x) = 1 somewhere: the conjugate exponent is infinite")
    return p / (p - 1.0)


def sobolev_exponent(p, Q, order=1):
    """Q p / (Q - order p), defined when p_plus < Q / order."""
    p = np.asarray(p, dtype=float)
    if order < 1:
        raise InvalidArgument("order must be >= 1")
    if p.max() >= Q / order:
        raise SobolevExponentUndefined(
            f"p_plus = {p.max():g} >= Q/order = {Q / order:g}"
        )
    return Q * p / (Q - order * p)


@dataclass
class LogHolderResult:
    constant: float
    passed: bool
    witness: tuple  # (x, y) attaining the constant, or None
    pairs: int


def log_holder_check(p, dom, g, threshold=1.0, n_random=10_000, seed=0):
    """Estimate C0 = max |p(x) - p(y)| (-log d(x, y)) over pairs with d < 1/2.

    Pairs are axis neighbours at dyadic offsets plus random pairs.  A
    discontinuous exponent makes C0 grow like log(1/h), so any fixed
    threshold is eventually crossed under refinement.
    """
    p = np.asarray(p, dtype=float)
    pts = dom.points
    best, witness, count = 0.0, None, 0

    def scan(px, py, xa, ya):
        nonlocal best, witness, count
        d = g.distance(xa, ya)
        ok = (d > 0) & (d < 0.5)
        count += int(ok.sum())
        if not ok.any():
            return
        val = np.where(ok, np.abs(px - py) * -np.log(np.where(ok, d, 0.25)), 0.0)
        i = int(np.argmax(val))
        if val.flat[i] > best:
            best = float(val.flat[i])
            witness = (xa.reshape(-1, dom.ndim)[i], ya.reshape(-1, dom.ndim)[i])

    for ax in range(dom.ndim):
        k = 1
        while k < dom.shape[ax]:
            a = [slice(None)] * dom.ndim
            b = [slice(None)] * dom.ndim
            a[ax] = slice(0, dom.shape[ax] - k)
            b[ax] = slice(k, None)
            a, b = tuple(a), tuple(b)
            scan(p[a], p[b], pts[a], pts[b])
            k *= 2
    if n_random:
        rng = np.random.default_rng(seed)
        flat_p = p.reshape(-1)
        flat_x = pts.reshape(-1, dom.ndim)
        i = rng.integers(0, flat_p.size, n_random)
        j = rng.integers(0, flat_p.size, n_random)
        scan(flat_p[i], flat_p[j], flat_x[i], flat_x[j])
    return LogHolderResult(best, best <= threshold, witness, count)


@dataclass
class JumpConditionResult:
    holds: bool
    failing: np.ndarray  # True where neither alternative holds
    p_minus_local: np.ndarray
    p_plus_local: np.ndarray


def jump_condition_check(p, dom, g, delta, Q=None):
    """Check, at every cell x, p-(B) >= Q or p+(B) <= Q p-(B) / (Q - p-(B)), B = B(x, delta) ∩ Ω."""
    if not delta > g.min_separation(dom.spacing):
        raise InvalidArgument("delta must exceed the cell separation")
    Q = g.Q if Q is None else Q
    p = np.asarray(p, dtype=float)
    exponent_bounds(p)
    pmin = ball_reduce(p, dom, g, delta, "min")
    pmax = ball_reduce(p, dom, g, delta, "max")
    with np.errstate(divide="ignore"):
        bound = np.where(pmin < Q, Q * pmin / np.where(pmin < Q, Q - pmin, 1.0), np.inf)
    ok = (pmin >= Q) | (pmax <= bound * (1 + 1e-12))
    return JumpConditionResult(bool(ok.all()), ~ok, pmin, pmax)
