import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from conftest import sample_se
from density_grid import box_rule, excess_rule, gauss_legendre, jacobian, to_coords, to_ypq
from hiddenou.density import (
    InversionAccuracyError,
    InversionConfig,
    _a2_entries,
    a1,
    a2,
    density_csv,
    gamma_cond,
    joint_mgf,
    mansuy_yor,
    phi,
    psi1,
    psi2,
    transform_args,
)
from hiddenou.indifference import McConfig, certainty_equivalents, indifference_price
from hiddenou.model import DomainError, ModelParams, PayoffSpec, Prior, ThetaAtom
from hiddenou.simulate import RngConfig


def _a2_oracle(t, alpha):
    """Covariance of (W_t, int W) under the measure tilted by exp(-(alpha^2/2) int W^2).

    The tilted process is Gaussian with Green kernel
    G(s, u) = sinh(alpha min) cosh(alpha (t - max)) / (alpha cosh(alpha t)).
    """
    a, t = mpmath.mpf(alpha), mpmath.mpf(t)
    g = lambda s, u: mpmath.sinh(a * min(s, u)) * mpmath.cosh(a * (t - max(s, u))) / (a * mpmath.cosh(a * t))
    e11 = g(t, t)
    e12 = mpmath.quad(lambda u: g(t, u), [0, t])
    e22 = mpmath.quad(lambda s: mpmath.quad(lambda u: g(s, u), [0, s, t]), [0, t])
    return np.array([[e11, e12], [e12, e22]], dtype=float)


def test_a1_example():
    assert np.array_equal(a1(2.0), np.array([[2.0, 2.0], [2.0, 8.0 / 3.0]]))
    with pytest.raises(DomainError):
        a1(0.0)


@pytest.mark.parametrize("t, alpha", [(1.0, 2.0), (0.5, 0.3), (3.0, 1.5), (1.0, 10.0)])
def test_a2_against_green_kernel(t, alpha):
    assert np.allclose(a2(t, alpha), _a2_oracle(t, alpha), rtol=1e-12, atol=0)


def test_a2_reduces_to_a1():
    assert np.allclose(a2(1.7, 0.0), a1(1.7), rtol=1e-15)
    assert np.allclose(a2(1.7, 1e-5), a1(1.7), rtol=1e-9)
    with pytest.raises(DomainError):
        a2(1.0, -1.0)


@pytest.mark.parametrize("t", [0.3, 1.0, 4.0])
def test_series_and_closed_form_agree_at_threshold(t):
    thr = InversionConfig().series_threshold
    for w in (thr * 0.999, thr * 1.001):
        series = np.array(_a2_entries(t, w, series_threshold=1.0))
        closed = np.array(_a2_entries(t, w, series_threshold=1e-12))
        assert np.allclose(series, closed, rtol=1e-11, atol=0)


def test_psi1_values():
    for t in (0.5, 1.0, 2.0):
        assert psi1(t, 0.0, 0.0) == pytest.approx(math.sqrt(12) / (2 * math.pi * t * t), rel=1e-14)
    # x-marginal is N(0, t)
    t, x = 1.3, 0.7
    y, w = gauss_legendre(t * x / 2 - 12 * t**1.5, t * x / 2 + 12 * t**1.5, 200)
    assert (psi1(t, x, y) * w).sum() == pytest.approx(norm.pdf(x, scale=math.sqrt(t)), rel=1e-12)


def test_gamma_cond_examples():
    assert gamma_cond(1.0, 0.0, 0.4, -0.2) == 1.0
    for t, al in [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0)]:
        e = a2(t, al)
        det1, det2 = np.linalg.det(a1(t)), np.linalg.det(e)
        expected = math.sqrt(det1 / det2 / math.cosh(al * t))
        assert gamma_cond(t, al, 0.0, 0.0) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(DomainError):
        gamma_cond(1.0, -0.1, 0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(0.05, 5), alpha=st.floats(0, 20), x=st.floats(-5, 5), y=st.floats(-5, 5))
def test_gamma_cond_is_a_probability_transform(t, alpha, x, y):
    g = gamma_cond(t, alpha, x, y)
    assert 0.0 <= g <= 1.0 + 1e-12


def _bridge_paths(t, x, y, n_steps, n_paths, rng):
    """Brownian paths on a grid conditioned exactly on (W_t, trapezoid int W)."""
    h = t / n_steps
    w = np.concatenate([np.zeros((n_paths, 1)),
                        np.cumsum(rng.standard_normal((n_paths, n_steps)) * math.sqrt(h), axis=1)], axis=1)
    trap = np.full(n_steps + 1, h)
    trap[[0, -1]] = h / 2
    s = np.linspace(0, t, n_steps + 1)
    cov_s = np.minimum.outer(s, s)
    lin = np.stack([np.eye(n_steps + 1)[-1], trap])  # (W_t, int W) as linear maps of the grid
    c = cov_s @ lin.T
    sig = lin @ c
    obs = w @ lin.T
    corr = (np.array([x, y]) - obs) @ np.linalg.solve(sig, c.T)
    return w + corr, trap


def test_gamma_cond_against_conditioned_bridge():
    t, alpha, x, y = 1.0, 1.5, 0.6, 0.1
    w, trap = _bridge_paths(t, x, y, 400, 40_000, np.random.default_rng(11))
    assert np.allclose(w[:, -1], x) and np.allclose(w @ trap, y)
    v = np.exp(-0.5 * alpha**2 * (w * w) @ trap)
    assert abs(v.mean() - gamma_cond(t, alpha, x, y)) < 3 * sample_se(v) + 1e-4


def test_gamma_cond_integrates_to_mansuy_yor():
    t, alpha, x = 1.2, 2.0, 0.5
    y, w = gauss_legendre(t * x / 2 - 10 * math.sqrt(t**3 / 12), t * x / 2 + 10 * math.sqrt(t**3 / 12), 120)
    cond = norm.pdf(y, loc=t * x / 2, scale=math.sqrt(t**3 / 12))
    assert (gamma_cond(t, alpha, x, y) * cond * w).sum() == pytest.approx(float(mansuy_yor(t, alpha, x)), rel=1e-10)


def test_joint_mgf_examples():
    t = 1.5
    assert joint_mgf(t, 2.0, 0.0, 0.0) == pytest.approx(math.cosh(3.0) ** -0.5, rel=1e-14)
    b = np.array([0.3, -0.2])
    assert joint_mgf(t, 0.0, *b) == pytest.approx(math.exp(0.5 * b @ a1(t) @ b), rel=1e-14)
    # no overflow for large alpha t
    assert 0.0 < joint_mgf(1.0, 800.0, 0.0, 0.0) < 1e-150


def _conditional_mean_square(t, x, y):
    """E[int W^2 | W_t = x, int W = y] by Gaussian conditioning, quadrature in s."""
    sig_inv = np.linalg.inv(a1(t))
    v = np.array([x, y])

    def integrand(s):
        c = np.array([s, s * t - s * s / 2])
        m = c @ sig_inv @ v
        return m * m + s - c @ sig_inv @ c

    s, w = gauss_legendre(0.0, t, 40)
    return sum(wi * integrand(si) for si, wi in zip(s, w))


@pytest.mark.parametrize("t, x, y", [(1.0, 0.0, 0.0), (1.0, 0.8, 0.3), (2.0, -1.0, 0.5), (0.5, 0.2, -0.1)])
def test_psi2_normalization_roundtrip_mean(t, x, y):
    e, w = excess_rule(t, 96)
    z = y * y / t + e
    dens = psi2(t, z, x, y)
    assert np.all(dens >= 0)
    assert (dens * w).sum() == pytest.approx(1.0, abs=1e-6)
    for beta in (0.3, 2.0):
        lt = (np.exp(-beta * z) * dens * w).sum()
        assert lt == pytest.approx(gamma_cond(t, math.sqrt(2 * beta), x, y), rel=1e-6)
    assert (z * dens * w).sum() == pytest.approx(_conditional_mean_square(t, x, y), rel=1e-5)
    # the same mean from a Richardson difference of the transform at beta = 0
    h = 1e-3
    d = lambda hh: (1 - gamma_cond(t, math.sqrt(2 * hh), x, y)) / hh
    assert (2 * d(h / 2) - d(h)) == pytest.approx(_conditional_mean_square(t, x, y), rel=1e-5)


def test_psi2_support_and_accuracy_guard():
    assert psi2(1.0, 0.04, 0.0, 0.3) == 0.0  # below y^2/t = 0.09
    with pytest.raises(InversionAccuracyError):
        psi2(1.0, 25 + np.geomspace(1e-4, 30, 40), 0.0, 5.0)  # int W about 17 sd out
    psi2(1.0, 1 + np.geomspace(1e-4, 30, 40), 5.0, 1.0)
    with pytest.raises(DomainError):
        InversionConfig(n_nodes=4)


PD = ModelParams(f=0.0, sigma=0.5, r=0.0, f0=math.exp(0.5), t1=2.0)


def test_coordinates_roundtrip():
    u = (0.3, -1.2, 0.05)
    back = to_coords(*to_ypq(*u, 1.3, PD), 1.3, PD)
    assert np.allclose(back, u, rtol=1e-12)
    a, b, c = transform_args(1.3, *to_ypq(*u, 1.3, PD), PD)
    assert c - b * b / 1.3 == pytest.approx(u[2], rel=1e-10)
    with pytest.raises(DomainError):
        transform_args(1.0, 0.0, 0.0, 0.0, PD, form="other")


def test_phi_normalization_and_y_marginal():
    t = 1.0
    u1, u2, e, w = box_rule(t)
    dens = phi(t, *to_ypq(u1.ravel(), u2.ravel(), e.ravel(), t, PD), PD).reshape(u1.shape) * jacobian(t, PD)
    assert (dens * w).sum() == pytest.approx(1.0, abs=5e-3)
    # density of u1 from the box, compared with Y_t ~ N(y0 - sigma^2 t / 2, sigma^2 t)
    u = u1[:, 0, 0]
    y = PD.y0 + PD.sigma * u * math.sqrt(t)
    ref = norm.pdf(y, loc=PD.y0 - PD.sigma**2 * t / 2, scale=PD.sigma * math.sqrt(t)) * PD.sigma * math.sqrt(t)
    got = (dens * w).sum(axis=(1, 2)) / _u_weights(u.size)
    assert np.max(np.abs(got - ref)) < 1e-3


def _u_weights(n):
    return gauss_legendre(-7.5, 7.5, n)[1]


def test_phi_vanishes_off_support():
    t = 1.0
    y, p, q = to_ypq(0.1, 0.2, 0.3, t, PD)
    assert phi(t, y, p, q - 10.0, PD) == 0.0


def test_expected_certainty_equivalent_matches_indifference_mc():
    p = ModelParams(f=0.01, sigma=0.3, r=0.03, f0=1.0, t1=2.0)
    prior = Prior([ThetaAtom(0.08, 0.8), ThetaAtom(-0.08, 1.2)], [0.5, 0.5])
    pay = PayoffSpec("put-on-spot", 1.0)
    t, gamma = 1.0, 1.0
    u1, u2, e, w = box_rule(t, n_u=24, n_e=40)
    y, pp, q = to_ypq(u1.ravel(), u2.ravel(), e.ravel(), t, p)
    dens = phi(t, y, pp, q, p) * jacobian(t, p)
    hh, _, _ = certainty_equivalents(gamma, t, y, pp, q, prior, pay, t, p)
    by_density = math.exp(-p.r * t) * (hh * dens * w.ravel()).sum()
    price, se = indifference_price(pay, t, gamma, prior, p, McConfig(40_000, 32, RngConfig(21)))
    assert abs(price - by_density) < 3 * se + 1e-4


def test_density_csv():
    text = density_csv(1.0, [0.4, 0.5], [0.5], [0.3, 0.4], PD)
    rows = text.splitlines()
    assert rows[0] == "y,p,q,phi" and len(rows) == 5
    vals = [float(r.split(",")[3]) for r in rows[1:]]
    assert all(v >= 0 and math.isfinite(v) for v in vals)
