import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subvarlap import (
    CarnotGroup,
    GridDomain,
    conjugate_exponent,
    exponent_bounds,
    jump_condition_check,
    log_holder_check,
    luxemburg_norm,
    modular,
    sobolev_exponent,
)
from subvarlap.errors import ConjugateInfinite, InvalidArgument, SobolevExponentUndefined

from .oracles import luxemburg_bisection
from .suites import norm_modular_failures, random_triple

R1 = CarnotGroup.euclidean(1)


def piecewise():
    # f = 2 on [0, 1]; p = 1 on [0, 1/2] and 2 on (1/2, 1]
    n = 100
    f = np.full(n, 2.0)
    p = np.where(np.arange(n) < n // 2, 1.0, 2.0)
    return f, p, 1.0 / n


def test_modular_examples():
    f, p, dx = piecewise()
    assert modular(np.zeros(10), 2.0, dx=0.1) == 0.0
    assert modular(np.ones(10), np.linspace(1, 3, 10), dx=0.1) == pytest.approx(1.0, rel=1e-14)
    assert modular(f, p, dx=dx) == pytest.approx(3.0, rel=1e-14)


def test_luxemburg_examples():
    f, p, dx = piecewise()
    # 1/lam + 2/lam^2 = 1 has root lam = 2
    assert luxemburg_norm(f, p, dx=dx) == pytest.approx(2.0, rel=1e-12)
    assert luxemburg_norm(np.ones(10), np.linspace(1, 3, 10), dx=0.1) == pytest.approx(1.0, rel=1e-12)
    assert luxemburg_norm(np.zeros(5), 2.0) == 0.0


def test_non_finite_rejected():
    with pytest.raises(InvalidArgument):
        modular(np.array([1.0, np.nan]), 2.0)
    with pytest.raises(InvalidArgument):
        luxemburg_norm(np.array([1.0, np.inf]), 2.0)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_constant_exponent_is_classical(p):
    rng = np.random.default_rng(int(p * 10))
    f = rng.normal(size=300)
    dx = 1 / 300
    assert luxemburg_norm(f, p, dx=dx) == pytest.approx((np.sum(np.abs(f) ** p) * dx) ** (1 / p), rel=1e-12)


def test_matches_bisection_oracle():
    rng = np.random.default_rng(5)
    for _ in range(30):
        f, p, w, dx = random_triple(rng)
        ref = luxemburg_bisection(f, p, w, dx)
        assert luxemburg_norm(f, p, w, dx) == pytest.approx(ref, rel=1e-10)


def test_norm_modular_relations():
    rng = np.random.default_rng(11)
    for _ in range(100):
        assert norm_modular_failures(*random_triple(rng)) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3))
def test_homogeneity(seed, c):
    f, p, w, dx = random_triple(np.random.default_rng(seed))
    assert luxemburg_norm(c * f, p, w, dx) == pytest.approx(abs(c) * luxemburg_norm(f, p, w, dx), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_dilation_identity(seed, u):
    rng = np.random.default_rng(seed)
    f, p, _, dx = random_triple(rng)
    s = 1 / p.min() + u * (3 - 1 / p.min())
    lhs = luxemburg_norm(np.abs(f) ** s, p, dx=dx)
    # at s = 1/p- the product s p- is exactly 1 but may round one ulp below it
    rhs = luxemburg_norm(f, np.maximum(s * p, 1.0), dx=dx) ** s
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_holder_with_constant_four():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = 80
        f, g = rng.normal(size=n), rng.normal(size=n) * 3
        p = rng.uniform(2, 5, n)
        q = rng.uniform(2, 5, n)
        r = 1 / (1 / p + 1 / q)
        lhs = luxemburg_norm(f * g, r, dx=1 / n)
        assert lhs <= 4 * luxemburg_norm(f, p, dx=1 / n) * luxemburg_norm(g, q, dx=1 / n)


def test_monotone_embedding():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = 64
        dx = rng.uniform(0.01, 0.1)
        f = rng.normal(size=n)
        p = rng.uniform(1, 3, n)
        q = p + rng.uniform(0, 2, n)
        assert luxemburg_norm(f, p, dx=dx) <= (1 + n * dx) * luxemburg_norm(f, q, dx=dx)


def test_conjugate_exponent():
    np.testing.assert_allclose(conjugate_exponent(2.0), 2.0)
    np.testing.assert_allclose(conjugate_exponent(4.0), 4 / 3)
    with pytest.raises(ConjugateInfinite):
        conjugate_exponent(np.array([1.0, 2.0]))


def test_sobolev_exponent():
    np.testing.assert_allclose(sobolev_exponent(2.0, 4), 4.0)
    np.testing.assert_allclose(sobolev_exponent(1.5, 2), 6.0)
    with pytest.raises(SobolevExponentUndefined):
        sobolev_exponent(2.0, 4, order=2)
    p = np.linspace(1.1, 3.9, 20)
    assert np.all(sobolev_exponent(p, 4) > p)


def test_exponent_bounds():
    assert exponent_bounds(np.array([1.5, 2.0, 3.0])) == (1.5, 3.0)
    with pytest.raises(InvalidArgument):
        exponent_bounds(np.array([0.5, 2.0]))


def test_log_holder():
    for n in (64, 256):
        dom = GridDomain(((0, 1),), (n,))
        x = dom.axes[0]
        assert log_holder_check(np.full(n, 2.0), dom, R1).constant == 0.0
    smooth = [log_holder_check(2 + np.sin(GridDomain(((0, 1),), (n,)).axes[0]) / 4,
                               GridDomain(((0, 1),), (n,)), R1).constant for n in (64, 256, 1024)]
    assert max(smooth) / min(smooth) < 1.1
    assert smooth[-1] < 1
    step = []
    for n in (64, 256, 1024):
        dom = GridDomain(((0, 1),), (n,))
        x = dom.axes[0]
        step.append(log_holder_check(np.where(x < 0.5, 1.5, 2.5), dom, R1).constant)
    # grows like log(1/h): each factor-4 refinement adds about log(4)
    assert np.all(np.diff(step) > 0.9 * math.log(4))
    res = log_holder_check(np.where(x < 0.5, 1.5, 2.5), dom, R1, threshold=5.0)
    assert not res.passed and res.witness is not None


def test_jump_condition():
    dom = GridDomain(((-1, 1), (-1, 1), (-1, 1)), (12, 12, 12))
    H = CarnotGroup.heisenberg()
    X = dom.mesh()[0]
    delta = 0.5
    assert jump_condition_check(np.full(dom.shape, 3.5), dom, H, delta).holds
    bad = jump_condition_check(np.where(X < 0, 1.2, 3.9), dom, H, delta)
    assert not bad.holds and bad.failing.any()
    # failures only near the interface
    assert not bad.failing[np.abs(X) > delta + 0.2].any()
    assert jump_condition_check(np.where(X < 0, 1.8, 2.2), dom, H, delta).holds
    with pytest.raises(InvalidArgument):
        jump_condition_check(np.full(dom.shape, 2.0), dom, H, 0.01)
