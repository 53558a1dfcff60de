"""The thirteen acceptance criteria, each at its stated tolerance and time budget.

Every test prints one `PASS`/`FAIL` line; the lines are also collected in
RESULTS and repeated in the pytest terminal summary.
"""
import contextlib
import math
import time

import numpy as np
import pytest

from subvarlap import (
    BallFamily,
    CarnotGroup,
    DirichletProblem,
    EllipticityField,
    GridDomain,
    MaximalOperator,
    TestFunctionFamily,
    apq_constant_estimate,
    ball_measure,
    classify_growth,
    coercivity_probe,
    energy,
    energy_gradient,
    fractional_integral,
    luxemburg_norm,
    operator_norm_estimate,
    poincare_ratio,
    probe_family,
    quasi_triangle_constant,
    refinement_sweep,
    representation_check,
    rubio_de_francia,
    solve_dirichlet,
    weak_residual,
    weak_type_check,
)
from subvarlap.cli import run as cli_run
from subvarlap.plaplacian import energy_difference, loglog_slope, random_test_function

from .oracles import riesz_1d_chi01
from .suites import norm_modular_failures, random_triple

R1 = CarnotGroup.euclidean(1)
R2 = CarnotGroup.euclidean(2)
H = CarnotGroup.heisenberg()
RESULTS = []


@contextlib.contextmanager
def criterion(number, name, budget):
    """Time the block, check the budget, and record one PASS/FAIL line."""
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < budget, f"took {elapsed:.1f} s, budget {budget} s"
    except BaseException as exc:
        line = f"FAIL {number}: {name} ({time.perf_counter() - t0:.1f} s) {exc}".strip()
        RESULTS.append(line)
        print(line)
        raise
    line = f"PASS {number}: {name} ({elapsed:.1f} s)"
    RESULTS.append(line)
    print(line)


def test_01_luxemburg_oracle():
    with criterion(1, "Luxemburg norm equals the classical L^p norm", 1.0):
        rng = np.random.default_rng(101)
        for p in (1.0, 1.5, 2.0, 3.0):
            for _ in range(50):
                n = int(rng.integers(10, 500))
                f = rng.normal(size=n) * 10.0 ** rng.uniform(-3, 3)
                dx = rng.uniform(1e-3, 1.0)
                ref = (np.sum(np.abs(f) ** p) * dx) ** (1 / p)
                assert luxemburg_norm(f, p, dx=dx) == pytest.approx(ref, rel=1e-8)


def test_02_norm_modular_suite():
    with criterion(2, "norm/modular inequalities on 200 random triples", 5.0):
        rng = np.random.default_rng(102)
        failures = [norm_modular_failures(*random_triple(rng)) for _ in range(200)]
        assert not any(failures), [f for f in failures if f]


def test_03_dilation_identity():
    with criterion(3, "dilation identity on 100 random (f, s, p)", 5.0):
        rng = np.random.default_rng(103)
        for _ in range(100):
            f, p, _, dx = random_triple(rng)
            s = 1 / p.min() + rng.uniform(0, 3)
            lhs = luxemburg_norm(np.abs(f) ** s, p, dx=dx)
            rhs = luxemburg_norm(f, s * p, dx=dx) ** s
            assert lhs == pytest.approx(rhs, rel=1e-8)


def test_04_geometry():
    with criterion(4, "Heisenberg homogeneity, doubling 16 at 64^3, K <= 2", 30.0):
        rng = np.random.default_rng(104)
        X, Y, Z = (rng.uniform(-2, 2, (10_000, 3)) for _ in range(3))
        d = H.distance(X, Y)
        # dyadic dilations commute with rounding, so they must be bit-exact
        for eps in (0.125, 0.5, 2.0, 16.0):
            np.testing.assert_array_equal(H.distance(H.dilate(X, eps), H.dilate(Y, eps)), eps * d)
        for eps in rng.uniform(0.1, 10, 5):
            np.testing.assert_allclose(H.distance(H.dilate(X, eps), H.dilate(Y, eps)), eps * d, rtol=1e-14)
        # B(0, r) reaches r^2 / 4 in t, so a t-flattened box keeps 64 cells across the ball
        dom = GridDomain(((-1.1, 1.1), (-1.1, 1.1), (-0.3, 0.3)), (64, 64, 64))
        c = np.array([dom.axes[k][32] for k in range(3)])
        ratio = ball_measure(c, 1.0, H, dom) / ball_measure(c, 0.5, H, dom)
        assert ratio == pytest.approx(16.0, rel=0.10)
        assert quasi_triangle_constant(H, X, Y, Z) <= 2.0


def test_05_muckenhoupt():
    with criterion(5, "A_p estimates: 1, |x|^(1/2) stable, |x|^-2 divergent", 30.0):
        dom = GridDomain(((-1, 1),), (512,))
        x = dom.axes[0]
        fam = BallFamily.dyadic(dom, R1)
        one = apq_constant_estimate(np.ones(512), 2.0, 2.0, fam, dom, R1).constant
        assert one == pytest.approx(1.0, rel=0.05)
        est = []
        for _ in range(3):
            est.append(apq_constant_estimate(np.abs(x) ** 0.5, 2.0, 2.0, fam, dom, R1).constant)
            fam = fam.enrich(dom, R1)
        assert max(abs(est[1] / est[0] - 1), abs(est[2] / est[1] - 1)) < 0.05
        div = []
        for n in (128, 256, 512):
            d = GridDomain(((-1, 1),), (n,))
            div.append(apq_constant_estimate(np.abs(d.axes[0]) ** -2.0, 2.0, 2.0,
                                             BallFamily.dyadic(d, R1), d, R1).constant)
        assert classify_growth(div) == "divergent"


def test_06_rubio_de_francia():
    with criterion(6, "Rubio de Francia majorant on 20 random h at 64^2", 60.0):
        dom = GridDomain(((0, 1), (0, 1)), (64, 64))
        X, Y = dom.mesh()
        p = 1.6 + 0.4 * np.sin(2 * X) * Y
        dx = dom.cell_measure
        M = MaximalOperator(dom, R2)
        E = operator_norm_estimate(M, probe_family(dom), p, dx=dx, clamp_at_one=True)
        rng = np.random.default_rng(106)
        for _ in range(20):
            h = rng.random(dom.shape) ** rng.uniform(0.5, 4)
            R = rubio_de_francia(h, p, M, E, dx=dx)
            assert np.all(h <= R.values)
            assert luxemburg_norm(R.values, p, dx=dx) <= 2 * luxemburg_norm(h, p, dx=dx)
            assert np.all(M(R.values) <= 2 * E.value * R.values + R.truncation_certificate)


def test_07_fractional_integral():
    with criterion(7, "1-D Riesz oracle within 2%, strong ratio stable 64->128", 120.0):
        dom = GridDomain(((0, 3),), (1024,))
        x = dom.axes[0]
        If = fractional_integral((x <= 1).astype(float), 0.5, dom, R1)
        i = int(np.argmin(np.abs(x - 2.0)))
        assert If[i] == pytest.approx(riesz_1d_chi01(2.0, 0.5), rel=0.02)
        ratios = []
        for n in (64, 128):
            d = GridDomain(((-1, 1), (-1, 1)), (n, n))
            probes = probe_family(d, 12, seed=7)
            est = operator_norm_estimate(lambda f: fractional_integral(f, 1.0, d, R2), probes, 1.5,
                                         dx=d.cell_measure, q=6.0)
            ratios.append(est.value)
        assert all(np.isfinite(ratios))
        assert max(ratios) / min(ratios) <= 1.5


def test_08_weak_type():
    with criterion(8, "weak-type constant finite and refinement-stable", 120.0):
        vals = []
        for n in (32, 64, 128):
            dom = GridDomain(((-1, 1), (-1, 1)), (n, n))
            X, Y = dom.mesh()
            f = (np.hypot(X, Y) < 0.5).astype(float)
            vals.append(weak_type_check(f, 1.0, 1, 2.0, 1.0, dom, R2).constant)
        assert all(0 < v < np.inf for v in vals)
        assert max(v / u for u, v in zip(vals, vals[1:])) <= 2
        assert min(v / u for u, v in zip(vals, vals[1:])) >= 0.5


def test_09_poincare_sweeps():
    with criterion(9, "Poincare sweeps finite, 2x stable, invariant", 300.0):
        # mean-subtracted: log-Holder exponent and a power weight on the plane, 32^2 -> 64^2
        dom = GridDomain(((0, 1), (0, 1)), (32, 32))
        p = lambda z: 1.4 + 0.2 * np.sin(3 * z[..., 0]) * np.cos(2 * z[..., 1])  # noqa: E731
        w = lambda z: ((z[..., 0] - 0.5) ** 2 + (z[..., 1] - 0.5) ** 2) ** 0.25  # noqa: E731
        reports, factor = refinement_sweep(TestFunctionFamily("trig", 32), dom, R2, p, w, "prin")
        assert np.isfinite(reports[-1].max) and factor <= 2
        # zero boundary, first order, 32^2 -> 64^2
        reports, factor = refinement_sweep(TestFunctionFamily("bumps", 32, zero_boundary=True),
                                           dom, R2, p, None, "poincare", order=1)
        assert np.isfinite(reports[-1].max) and factor <= 2
        # same exponent on both sides, step exponent on the Heisenberg group, 16^3 -> 32^3
        hdom = GridDomain(((-1, 1), (-1, 1), (-1, 1)), (16, 16, 16))
        step = lambda z: np.where(z[..., 0] < 0, 1.8, 2.2)  # noqa: E731
        reports, factor = refinement_sweep(TestFunctionFamily("bumps", 32, zero_boundary=True),
                                           hdom, H, step, None, "poincare2")
        assert reports[-1].gates["jump-condition"] is True
        assert np.isfinite(reports[-1].max) and factor <= 2
        # invariance of the mean-subtracted ratio under f -> a f + b
        d64 = dom.refine(1)
        pf, wf = p(d64.points), w(d64.points)
        for f in TestFunctionFamily("poly", 8).functions(d64):
            base = poincare_ratio(f, pf, wf, d64, R2).ratio
            for a, b in ((3.0, 0.0), (-0.25, 0.0), (1.0, 11.0), (7.5, -2.0)):
                assert poincare_ratio(a * f + b, pf, wf, d64, R2).ratio == pytest.approx(base, rel=1e-12)


def test_10_representation():
    with criterion(10, "representation constant finite and 2x stable", 60.0):
        for k in range(2):
            vals = []
            for n in (32, 64):
                dom = GridDomain(((0, 1), (0, 1)), (n, n))
                res = representation_check(dom.mesh()[k], dom, R2)
                assert res.status == "ok" and np.isfinite(res.constant)
                vals.append(res.constant)
            assert max(vals) / min(vals) <= 2


def test_11_manufactured_solution():
    with criterion(11, "p = 2 manufactured error ratio in [3.2, 4.8]", 120.0):
        errs = []
        for n in (32, 64):
            dom = GridDomain.nodal(((0, 1), (0, 1)), n)
            X, Y = dom.mesh()
            exact = np.sin(math.pi * X) * np.sin(math.pi * Y)
            prob = DirichletProblem(dom, R2, 2.0, 1.0, EllipticityField.isotropic(np.ones(dom.shape), 2),
                                    (2 * math.pi**2 + 1) * exact)
            sol = solve_dirichlet(prob)
            assert sol.status == "converged"
            errs.append(math.sqrt(np.sum((sol.u - exact) ** 2) * dom.cell_measure))
        assert 3.2 <= errs[0] / errs[1] <= 4.8


def test_12_variable_exponent_solver():
    with criterion(12, "variable-exponent solver diagnostics", 300.0):
        dom = GridDomain.nodal(((-1, 1), (-1, 1), (-1, 1)), 12)
        X, Y, T = dom.mesh()
        p = 2.0 + 0.3 * np.tanh(2 * X) * np.cos(T)
        w = 1.0 + 0.25 * X**2
        prob = DirichletProblem(dom, H, p, w, EllipticityField.anisotropic(w, 2), 1.0 + X - 0.5 * Y * T, tol=1e-8)
        lo, hi = prob.diagnostics["p_minus"], prob.diagnostics["p_plus"]
        assert 1.7 <= lo and hi <= 2.3
        rng = np.random.default_rng(112)
        dx = dom.cell_measure

        # gradient against central finite differences of the energy
        u = random_test_function(dom, rng)
        G = energy_gradient(u, prob)
        worst = 0.0
        for _ in range(100):
            v = random_test_function(dom, rng)
            s = 1e-5
            fd = (energy_difference(u, s * v, prob) - energy_difference(u, -s * v, prob)) / (2 * s)
            an = float(np.sum(G * v)) * dx
            worst = max(worst, abs(fd - an) / abs(an))
        assert worst < 1e-5

        sol = solve_dirichlet(prob)
        assert sol.status == "converged"
        assert np.all(np.diff(sol.energy_trace) <= 0)
        other = solve_dirichlet(prob, u0=2 * random_test_function(dom, rng))
        gap = luxemburg_norm(sol.u - other.u, p, w, dx) / luxemburg_norm(sol.u, p, w, dx)
        assert gap <= 1e-4
        assert weak_residual(sol.u, prob, eps=sol.eps) <= 10 * prob.tol

        for _ in range(50):
            a = 5 * random_test_function(dom, rng)
            b = 5 * random_test_function(dom, rng)
            margin = 0.5 * (energy(a, prob) + energy(b, prob)) - energy(0.5 * (a + b), prob)
            assert margin > 0

        scales = np.geomspace(10, 1e4, 8)
        slope = loglog_slope(scales, coercivity_probe(prob, random_test_function(dom, rng), scales))
        assert 0.9 * lo <= slope <= 1.1 * hi


def test_13_cli_determinism(tmp_path):
    with criterion(13, "CLI byte-identical reruns, gate exit 2", 30.0):
        cfg = tmp_path / "sweep.cfg"
        cfg.write_text("group = r2\nresolution = 16\nseed = 13\nexponent = 1.5 + 0.1*x*y\ncount = 8\n")
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert cli_run(["poincare", "--config", str(cfg), "--out", str(out)]) == 0
            outs.append(out)
        csvs = sorted(q.name for q in outs[0].glob("*.csv"))
        assert csvs
        for name in csvs:
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

        gate = tmp_path / "gate.cfg"
        gate.write_text("group = r2\nresolution = 16\nexponent = 1.5 + 0.6*x\n")
        assert cli_run(["poincare", "--config", str(gate), "--out", str(tmp_path / "g"), "--mode", "zero"]) == 2
        jump = tmp_path / "jump.cfg"
        jump.write_text("group = h1\nresolution = 12\nexponent = 1.2 + 2.7*step(x)\n")
        assert cli_run(["poincare", "--config", str(jump), "--out", str(tmp_path / "j"),
                        "--inequality", "poincare2"]) == 2
