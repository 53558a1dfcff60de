"""Variational solver for the degenerate p(x)-Laplacian Dirichlet problem.

The energy

    F(u) = sum dx [ (eps^2 + <A Xu, Xu>)^(p/2) / p + |u w|^p / p - f u ]

is minimized over grid functions that vanish on the boundary cell layer.
The discrete horizontal gradient is the average over all 2^d choices of
one-sided differences (forward or backward per axis), which keeps the
scheme reflection symmetric and reduces to the 5-point Laplacian for p = 2.
The discrete divergence is the exact adjoint, so the energy gradient and the
discrete weak form coincide.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import InvalidArgument, InvalidState
from .lebesgue import conjugate_exponent, exponent_bounds, luxemburg_norm

__all__ = [
    "EllipticityField",
    "DirichletProblem",
    "Solution",
    "energy",
    "energy_difference",
    "energy_gradient",
    "solve_dirichlet",
    "weak_residual",
    "coercivity_probe",
    "loglog_slope",
    "random_test_function",
]


@dataclass
class EllipticityField:
    """Per-cell symmetric matrices A(x), shape (*grid, n1, n1), with
    w^2 eta1 |xi|^2 <= <A xi, xi> <= w^2 eta2 |xi|^2."""

    A: np.ndarray
    eta1: float
    eta2: float

    @classmethod
    def isotropic(cls, w, n1):
        w = np.asarray(w, dtype=float)
        return cls(w[..., None, None] ** 2 * np.eye(n1), 1.0, 1.0)

    @classmethod
    def anisotropic(cls, w, n1, angle=0.3):
        """A = w^2 (I + 1/2 R diag(1, -1, 0..) R^T) with R a rotation in the first plane."""
        if n1 < 2:
            raise InvalidArgument("the anisotropic preset needs at least two horizontal fields")
        w = np.asarray(w, dtype=float)
        R = np.eye(n1)
        c, s = math.cos(angle), math.sin(angle)
        R[:2, :2] = [[c, -s], [s, c]]
        D = np.zeros((n1, n1))
        D[0, 0], D[1, 1] = 1.0, -1.0
        B = np.eye(n1) + 0.5 * R @ D @ R.T
        return cls(w[..., None, None] ** 2 * B, 0.5, 1.5)

    def validate(self, w, rtol=1e-12):
        A = np.asarray(self.A, dtype=float)
        if not np.all(np.isfinite(A)):
            raise InvalidArgument("A has non-finite entries")
        asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0)
        if asym > rtol * max(1.0, np.max(np.abs(A))):
            raise InvalidArgument(f"A is not symmetric (defect {asym:.3g})")
        if not 0 < self.eta1 <= self.eta2:
            raise InvalidArgument("need 0 < eta1 <= eta2")
        ev = np.linalg.eigvalsh(A) / np.asarray(w, dtype=float)[..., None] ** 2
        if ev.min() < self.eta1 * (1 - 1e-10) or ev.max() > self.eta2 * (1 + 1e-10):
            raise InvalidArgument(
                f"eigenvalues of A / w^2 span [{ev.min():.4g}, {ev.max():.4g}], "
                f"outside [{self.eta1:g}, {self.eta2:g}]"
            )


def _diff_matrix(n, h, forward):
    """One-sided difference on n cells with zero values outside."""
    if forward:
        return sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n)) / h
    return sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1], shape=(n, n)) / h


def _axis_operator(shape, axis, mat):
    mats = [sp.identity(n, format="csr") for n in shape]
    mats[axis] = mat
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def _field_coefficients(dom, g):
    """C[j, k] (per cell): X_j = sum_k C[j, k] d/dx_k."""
    N = dom.size
    if g.kind == "heisenberg":
        X, Y, _ = [a.reshape(-1) for a in dom.mesh()]
        one, zero = np.ones(N), np.zeros(N)
        return [[one, zero, -0.5 * Y], [zero, one, 0.5 * X]]
    d = dom.ndim
    return [[np.ones(N) if j == k else None for k in range(d)] for j in range(d)]


@dataclass
class DirichletProblem:
    dom: object
    g: object
    p: np.ndarray
    w: np.ndarray
    A: EllipticityField
    f: np.ndarray
    tol: float = 1e-8
    max_iter: int = 100_000
    eps_schedule: tuple = None  # default: 1e-2, 1e-4, 1e-6 and 0 when p_minus >= 2
    rel_energy_tol: float = 1e-10
    patience: int = 50
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        dom, g = self.dom, self.g
        if dom.ndim != g.dim:
            raise InvalidArgument("domain and group dimensions differ")
        if any(n < 3 for n in dom.shape):
            raise InvalidArgument("need at least 3 cells per axis")
        self.p = np.broadcast_to(np.asarray(self.p, dtype=float), dom.shape).copy()
        self.w = np.broadcast_to(np.asarray(self.w, dtype=float), dom.shape).copy()
        self.f = dom.check_function(np.broadcast_to(np.asarray(self.f, dtype=float), dom.shape))
        p_minus, p_plus = exponent_bounds(self.p)
        if p_minus <= 1:
            raise InvalidArgument("need p_minus > 1")
        if not np.all(np.isfinite(self.w)) or np.any(self.w <= 0):
            raise InvalidArgument("weight must be positive and finite")
        if self.A.A.shape != dom.shape + (g.n1, g.n1):
            raise InvalidArgument(f"A must have shape {dom.shape + (g.n1, g.n1)}")
        self.A.validate(self.w)
        f_norm = luxemburg_norm(self.f, conjugate_exponent(self.p), 1.0 / self.w, dom.cell_measure)
        if not math.isfinite(f_norm):
            raise InvalidArgument("source is not in the dual space")
        if self.eps_schedule is None:
            sched = (1e-2, 1e-4, 1e-6) + ((0.0,) if p_minus >= 2 else ())
            self.eps_schedule = sched
        self.diagnostics = {
            "p_minus": p_minus,
            "p_plus": p_plus,
            "p_plus_below_Q": p_plus < g.Q,
            "source_dual_norm": f_norm,
        }
        self._build()

    def _build(self):
        dom, g = self.dom, self.g
        N = dom.size
        coeff = _field_coefficients(dom, g)
        self.interior = ~dom.boundary_mask().reshape(-1)
        self.ops = []
        for signs in itertools.product((True, False), repeat=dom.ndim):
            partial = [
                _axis_operator(dom.shape, k, _diff_matrix(dom.shape[k], dom.spacing[k], s))
                for k, s in enumerate(signs)
            ]
            rows = []
            for j in range(g.n1):
                Xj = sp.csr_matrix((N, N))
                for k, c in enumerate(coeff[j]):
                    if c is not None and np.any(c):
                        Xj = Xj + sp.diags(c) @ partial[k]
                rows.append(Xj)
            self.ops.append(sp.vstack(rows, format="csr"))
        self._A = self.A.A.reshape(N, g.n1, g.n1)
        self._p = self.p.reshape(-1)
        self._wp = (self.w**self.p).reshape(-1)
        self._f = self.f.reshape(-1)

    def horizontal(self, op, u):
        return (op @ u).reshape(self.g.n1, -1)


def _check_u(u, prob):
    u = np.asarray(u, dtype=float)
    if u.shape != prob.dom.shape:
        raise InvalidArgument(f"u has shape {u.shape}, expected {prob.dom.shape}")
    if np.any(u.reshape(-1)[~prob.interior] != 0):
        raise InvalidArgument("u must vanish on the boundary cells")
    return u.reshape(-1)


def _quad(A, a, b):
    """<A a, b> per cell for a, b of shape (n1, N)."""
    return np.einsum("nij,jn,in->n", A, a, b)


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise InvalidState(f"non-finite values in {what}")
    return x


def energy(u, prob, eps=0.0):
    uu = _check_u(u, prob)
    p, dx = prob._p, prob.dom.cell_measure
    grad_term = 0.0
    for op in prob.ops:
        a = prob.horizontal(op, uu)
        s = _quad(prob._A, a, a)
        grad_term += np.sum((eps * eps + s) ** (p / 2) / p)
    grad_term /= len(prob.ops)
    val = dx * (grad_term + np.sum(np.abs(uu) ** p * prob._wp / p) - np.sum(prob._f * uu))
    return float(_finite(val, "energy"))


def _pow_increment(base, delta, half_p):
    """(base + delta)^half_p - base^half_p without cancellation."""
    out = np.empty_like(base)
    pos = base > 0
    r = np.maximum(delta[pos] / base[pos], -1.0)
    out[pos] = base[pos] ** half_p[pos] * np.expm1(half_p[pos] * np.log1p(r))
    out[~pos] = np.maximum(delta[~pos], 0.0) ** half_p[~pos]
    return out


def energy_difference(u, du, prob, eps=0.0):
    """F(u + du) - F(u), evaluated term by term to avoid cancellation."""
    uu = np.asarray(u, dtype=float).reshape(-1)
    d = np.asarray(du, dtype=float).reshape(-1)
    p, dx = prob._p, prob.dom.cell_measure
    total = 0.0
    for op in prob.ops:
        a = prob.horizontal(op, uu)
        b = prob.horizontal(op, d)
        base = eps * eps + _quad(prob._A, a, a)
        delta = 2 * _quad(prob._A, a, b) + _quad(prob._A, b, b)
        total += np.sum(_pow_increment(base, delta, p / 2) / p)
    total /= len(prob.ops)
    react = _pow_increment(uu * uu, d * (2 * uu + d), p / 2) * prob._wp / p
    val = dx * (total + np.sum(react) - np.sum(prob._f * d))
    return float(_finite(val, "energy difference"))


def _flux_gradient(uu, prob, eps):
    p = prob._p
    out = np.zeros_like(uu)
    for op in prob.ops:
        a = prob.horizontal(op, uu)
        s = _quad(prob._A, a, a)
        base = eps * eps + s
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(base > 0, base ** (p / 2 - 1), 0.0)
        flux = k * np.einsum("nij,jn->in", prob._A, a)
        out += op.T @ flux.reshape(-1)
    return out / len(prob.ops)


def energy_gradient(u, prob, eps=0.0):
    """Gradient density G: the derivative of F along v equals sum(G v) dx.

    Zero on the boundary cells."""
    uu = _check_u(u, prob)
    p = prob._p
    G = _flux_gradient(uu, prob, eps)
    G += np.sign(uu) * np.abs(uu) ** (p - 1) * prob._wp
    G -= prob._f
    G[~prob.interior] = 0.0
    return _finite(G, "energy gradient").reshape(prob.dom.shape)


def _preconditioner(uu, prob, eps):
    """Frozen-coefficient (Kacanov) matrix on the interior unknowns."""
    p, dx, N = prob._p, prob.dom.cell_measure, prob.dom.size
    e2 = max(eps, 1e-6) ** 2
    n1 = prob.g.n1
    P = sp.csr_matrix((N, N))
    for op in prob.ops:
        a = prob.horizontal(op, uu)
        k = (e2 + _quad(prob._A, a, a)) ** (p / 2 - 1)
        blocks = [[sp.diags(dx * k * prob._A[:, i, j]) for j in range(n1)] for i in range(n1)]
        P = P + op.T @ sp.bmat(blocks, format="csr") @ op
    P = P / len(prob.ops)
    P = P + sp.diags(dx * prob._wp * (e2 + uu * uu) ** (p / 2 - 1))
    I = prob.interior
    return splu(P[I][:, I].tocsc())


@dataclass
class Solution:
    u: np.ndarray
    energy_trace: np.ndarray  # energy of every accepted iterate, eps stages included
    grad_norm: float  # sup norm of the gradient density at exit
    iterations: int
    eps: float  # regularization at exit
    status: str  # "converged", "stalled", "max-iterations" or "converged-at-machine-precision"
    stages: list = field(default_factory=list)
    eps_trace: np.ndarray = None


def solve_dirichlet(prob, u0=None, armijo=1e-4):
    """Minimize the eps-regularized energy for each eps of the schedule.

    Each step is a preconditioned gradient step with Armijo backtracking
    from the unit step.  The preconditioner is the energy Hessian with the
    coefficients frozen at the current iterate, which keeps the iteration
    count independent of the grid size.
    """
    dom = prob.dom
    I = prob.interior
    uu = np.zeros(dom.size) if u0 is None else np.asarray(u0, dtype=float).reshape(-1).copy()
    uu[~I] = 0.0
    dx = dom.cell_measure
    trace, eps_trace, stages = [], [], []
    it_total, status = 0, "max-iterations"
    E = None
    for stage, eps in enumerate(prob.eps_schedule):
        last = stage == len(prob.eps_schedule) - 1
        stage_tol = prob.tol if last else max(prob.tol, 1e-6)
        E = energy(uu.reshape(dom.shape), prob, eps)
        trace.append(E)
        eps_trace.append(eps)
        stall, status = 0, "max-iterations"
        it = 0
        while it_total < prob.max_iter:
            G = energy_gradient(uu.reshape(dom.shape), prob, eps).reshape(-1)
            gnorm = float(np.max(np.abs(G)))
            if gnorm < stage_tol:
                status = "converged"
                break
            lu = _preconditioner(uu, prob, eps)
            d = np.zeros_like(uu)
            d[I] = -lu.solve(dx * G[I])
            slope = dx * float(G @ d)
            if not slope < 0:
                d = -G
                slope = -dx * float(G @ G)
            alpha, accepted = 1.0, False
            while alpha > 1e-16:
                dE = energy_difference(uu, alpha * d, prob, eps)
                if dE < 0 and dE <= armijo * alpha * slope:
                    accepted = True
                    break
                alpha *= 0.5
            it += 1
            it_total += 1
            if not accepted:
                status = "converged-at-machine-precision"
                break
            uu = uu + alpha * d
            E_new = E + dE
            trace.append(E_new)
            eps_trace.append(eps)
            rel = -dE / max(abs(E_new), 1e-300)
            E = E_new
            stall = stall + 1 if rel < prob.rel_energy_tol else 0
            if stall >= prob.patience:
                status = "stalled"
                break
        stages.append({"eps": eps, "iterations": it, "status": status, "grad_norm": gnorm})
        if it_total >= prob.max_iter:
            break
    G = energy_gradient(uu.reshape(dom.shape), prob, eps)
    return Solution(
        uu.reshape(dom.shape),
        np.array(trace),
        float(np.max(np.abs(G))),
        it_total,
        eps,
        status,
        stages,
        np.array(eps_trace),
    )


def random_test_function(dom, rng, modes=3):
    """Smooth random function vanishing on the boundary cells, max |v| = 1."""
    u = []
    for ax, n in zip(dom.axes, dom.shape):
        u.append((ax - ax[0]) / (ax[-1] - ax[0]))
    U = np.meshgrid(*u, indexing="ij")
    v = np.zeros(dom.shape)
    for _ in range(modes):
        ks = rng.integers(1, 4, dom.ndim)
        term = rng.normal()
        for k, Uk in zip(ks, U):
            term = term * np.sin(np.pi * k * Uk)
        v += term
    v[dom.boundary_mask()] = 0.0
    m = np.max(np.abs(v))
    return v / m if m > 0 else v


def _sobolev_norm(v, prob):
    from .geometry import horizontal_gradient

    dx = prob.dom.cell_measure
    Xv = np.sqrt(np.sum(horizontal_gradient(v, prob.dom, prob.g) ** 2, axis=0))
    return luxemburg_norm(v, prob.p, prob.w, dx) + luxemburg_norm(Xv, prob.p, prob.w, dx)


def weak_residual(u, prob, test_count=20, eps=0.0, seed=0):
    """max over random zero-boundary v of |weak form(u; v)| / (||v||_{W^{1,p}_w} + 1)."""
    rng = np.random.default_rng(seed)
    G = energy_gradient(u, prob, eps)
    dx = prob.dom.cell_measure
    worst = 0.0
    for _ in range(test_count):
        v = random_test_function(prob.dom, rng)
        worst = max(worst, abs(float(np.sum(G * v)) * dx) / (_sobolev_norm(v, prob) + 1.0))
    return worst


def coercivity_probe(prob, direction, scales, eps=0.0):
    """F(s * direction) for each s."""
    v = np.asarray(direction, dtype=float)
    if np.ptp(v) == 0:
        raise InvalidArgument("direction must be non-constant")
    return [energy(s * v, prob, eps) for s in scales]


def loglog_slope(scales, values, tail=3):
    """Least-squares slope of log F against log s over the last `tail` points."""
    s = np.log(np.asarray(scales, dtype=float)[-tail:])
    v = np.log(np.asarray(values, dtype=float)[-tail:])
    return float(np.polyfit(s, v, 1)[0])
