import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from surfch.materials import (
    DomainError,
    MobilitySpec,
    PotentialSpec,
    RegularizedMaterial,
    adaptive_simpson,
    entropy_eval,
    entropy_quadrature,
    mobility_eval,
    potential_eval,
    regularized_potential_eval,
)

QUARTIC = PotentialSpec("quartic")
LOG06 = PotentialSpec("logarithmic", 0.6)


def deg(k, delta, pot=QUARTIC):
    return RegularizedMaterial(pot, MobilitySpec("degenerate", k=k), delta)


def test_quartic_values():
    F1, dF1, d2F1, F2, dF2, d2F2 = potential_eval(QUARTIC, 0.0)
    assert (F1, F2) == (0.25, 0.0)
    assert QUARTIC.F(0.0) == 0.25
    assert QUARTIC.F(1.0) == 0.0 and QUARTIC.F(-1.0) == 0.0
    r = np.linspace(-2, 2, 41)
    np.testing.assert_allclose(QUARTIC.F(r), (1 - r**2) ** 2 / 4, atol=1e-14)


def test_logarithmic_values():
    F1, dF1, d2F1, F2, dF2, d2F2 = potential_eval(LOG06, 0.0)
    assert F1 == 0.0 and dF1 == 0.0 and d2F1 == pytest.approx(0.6)
    assert F2 == 0.5 and d2F2 == -1.0
    with pytest.raises(DomainError):
        LOG06.F1(1.0)
    with pytest.raises(ValueError):
        PotentialSpec("logarithmic", 1.2)


@pytest.mark.parametrize("pot", [QUARTIC, LOG06])
def test_potential_derivatives_by_finite_differences(pot):
    r = np.linspace(-0.9, 0.9, 37)
    h = 1e-6
    np.testing.assert_allclose((pot.F1(r + h) - pot.F1(r - h)) / (2 * h), pot.dF1(r), atol=1e-8)
    np.testing.assert_allclose((pot.dF1(r + h) - pot.dF1(r - h)) / (2 * h), pot.d2F1(r), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose((pot.F2(r + h) - pot.F2(r - h)) / (2 * h), pot.dF2(r), atol=1e-8)


def test_regularized_potential_inside_equals_exact():
    mat = deg(1, 0.1, LOG06)
    r = np.linspace(-0.9 + 1e-9, 0.9 - 1e-9, 101)
    for got, want in zip(regularized_potential_eval(mat, r), (LOG06.F1(r), LOG06.dF1(r), LOG06.d2F1(r))):
        np.testing.assert_array_equal(got, want)


@pytest.mark.parametrize("pot", [QUARTIC, LOG06])
@pytest.mark.parametrize("edge", [0.9, -0.9])
def test_regularized_potential_is_c2(pot, edge):
    mat = deg(1, 0.1, pot)
    h = 1e-12
    for f in (mat.F1, mat.dF1, mat.d2F1):
        assert abs(f(edge + h) - f(edge - h)) <= 1e-10


def test_regularized_potential_far_value():
    mat = deg(1, 0.1, LOG06)
    a, theta = 0.9, 0.6
    F1a = 0.3 * (1.9 * math.log(1.9) + 0.1 * math.log(0.1))
    dF1a = 0.3 * (math.log(1.9) - math.log(0.1))
    d2F1a = theta / (1 - a * a)
    # closed form of F1 at 0.9 checked against quadrature of F1''
    inner = quad(lambda s: quad(lambda q: theta / (1 - q * q), 0, s)[0], 0, a)[0]
    assert F1a == pytest.approx(inner, rel=1e-10)
    expected = F1a + dF1a * 1.1 + 0.5 * d2F1a * 1.1**2
    assert mat.F1(2.0) == pytest.approx(expected, rel=1e-14)
    assert mat.dF1(2.0) == pytest.approx(dF1a + d2F1a * 1.1, rel=1e-14)


def test_mobility_values():
    assert mobility_eval(RegularizedMaterial(QUARTIC, MobilitySpec("degenerate", k=1), 0.0), 0.0) == 1.0
    assert mobility_eval(deg(1, 0.1), 1.0) == pytest.approx(0.19, rel=1e-14)
    assert mobility_eval(deg(2, 0.1), -5.0) == pytest.approx(0.0361, rel=1e-14)
    M = MobilitySpec("degenerate", k=3)
    assert M(1.0) == 0.0 and M(-1.0) == 0.0
    assert np.all(M(np.linspace(-0.999, 0.999, 50)) > 0)


def test_regularized_mobility_floor():
    for k in (1, 2, 3):
        mat = deg(k, 0.05)
        r = np.linspace(-4, 4, 2001)
        assert mat.M(r).min() >= min(mat.mobility(0.95), mat.mobility(-0.95)) > 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_entropy_vanishes_at_origin(k):
    for delta in (0.0, 0.1):
        psi, dpsi = entropy_eval(deg(k, delta), 0.0)
        assert psi == 0.0 and dpsi == 0.0


def test_entropy_k2_identity():
    psi, dpsi = entropy_eval(deg(2, 0.0), 0.5)
    assert 0.5 * dpsi - psi == pytest.approx(1 / 6, rel=1e-13)
    r = np.linspace(-0.99, 0.99, 51)
    psi, dpsi = entropy_eval(deg(2, 0.0), r)
    np.testing.assert_allclose(r * dpsi - psi, 1 / (2 * (1 - r**2)) - 0.5, rtol=1e-10, atol=1e-13)


def test_entropy_k1_value_by_quadrature():
    expected = 0.5 * (1.5 * math.log(1.5) + 0.5 * math.log(0.5))
    oracle = quad(lambda s: quad(lambda q: 1 / (1 - q * q), 0, s)[0], 0, 0.5)[0]
    assert oracle == pytest.approx(expected, rel=1e-10)
    psi, _ = entropy_eval(deg(1, 0.2), 0.5)
    assert psi == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("k", [1, 2])
def test_closed_forms_agree_with_quadrature(k):
    r = np.linspace(-0.97, 0.97, 31)
    psi, dpsi = deg(k, 0.0).entropy(r)
    qpsi, qdpsi = entropy_quadrature(r, k)
    np.testing.assert_allclose(qpsi, psi, atol=1e-9)
    np.testing.assert_allclose(qdpsi, dpsi, atol=1e-9)


def test_generic_k_entropy_against_scipy():
    for r in (-0.8, 0.3, 0.9):
        d = quad(lambda s: (1 - s * s) ** -3, 0, r, epsabs=1e-13)[0]
        p = quad(lambda s: (r - s) * (1 - s * s) ** -3, 0, r, epsabs=1e-13)[0]
        psi, dpsi = deg(3, 0.0).entropy(r)
        assert psi == pytest.approx(p, abs=1e-9)
        assert dpsi == pytest.approx(d, abs=1e-9)


def test_entropy_outside_is_quadratic_continuation():
    mat = deg(3, 0.1)
    a = 0.9
    pa, da = mat.entropy(a)
    inv = 1 / mat.mobility(a)
    for r in (0.95, 1.3, 3.0):
        psi, dpsi = mat.entropy(r)
        assert psi == pytest.approx(pa + da * (r - a) + 0.5 * inv * (r - a) ** 2, rel=1e-12)
        assert dpsi == pytest.approx(da + inv * (r - a), rel=1e-12)


def test_adaptive_simpson_polynomial_and_transcendental():
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0) == pytest.approx(4.0, abs=1e-12)
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize("pot", [QUARTIC, LOG06])
def test_regularized_convexity(pot):
    r = np.linspace(-3, 3, 601)
    for delta in (0.2, 0.05):
        assert np.all(deg(1, delta, pot).d2F1(r) >= 0)


@pytest.mark.parametrize("pot", [QUARTIC, LOG06])
def test_sign_condition(pot):
    r = np.linspace(-0.999, 0.999, 999)
    assert np.all(r * pot.dF1(r) >= 0)


@settings(max_examples=40, deadline=None)
@given(r=st.floats(-0.999, 0.999), k=st.sampled_from([1, 2]), delta=st.floats(0.001, 0.3))
def test_regularization_is_monotone(r, k, delta):
    reg, exact = deg(k, delta), deg(k, 0.0)
    assert exact.M(r) <= reg.M(r) + 1e-15
    assert reg.entropy(r)[0] <= exact.entropy(r)[0] * (1 + 1e-12) + 1e-15
    assert reg.entropy(r)[0] >= 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_log_mobility_times_curvature_is_continuous(k):
    r = 1 - np.logspace(-2, -9, 8)
    mat = RegularizedMaterial(LOG06, MobilitySpec("degenerate", k=k), 0.0)
    prod = mat.M(r) * LOG06.d2F1(r)
    np.testing.assert_allclose(prod, 0.6 * (1 - r**2) ** (k - 1), rtol=1e-6)
    limit = 0.6 if k == 1 else 0.0
    assert abs(prod[-1] - limit) < 1e-6


@pytest.mark.parametrize("k", [1, 2])
def test_entropy_even(k):
    r = np.linspace(0, 2, 21)
    for delta in (0.0, 0.1):
        mat = deg(k, delta)
        rr = r if delta else r[r < 1]
        np.testing.assert_allclose(mat.entropy(rr)[0], mat.entropy(-rr)[0], rtol=1e-14)
