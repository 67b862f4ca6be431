"""Shared fixtures and independent oracles for the test suite."""

import math

import numpy as np
import pytest
from scipy.stats import norm

from hiddenou.model import ModelParams, Prior, ThetaAtom


def black76(f, k, sigma, tau, r, kind="call"):
    """Closed-form Black-76 price; oracle for the futures quadrature."""
    sd = sigma * math.sqrt(tau)
    d1 = (math.log(f / k) + 0.5 * sd * sd) / sd
    d2 = d1 - sd
    disc = math.exp(-r * tau)
    if kind == "call":
        return disc * (f * norm.cdf(d1) - k * norm.cdf(d2))
    return disc * (k * norm.cdf(-d2) - f * norm.cdf(-d1))


def black76_delta_money(f, k, sigma, tau, r):
    """Black-76 call delta times the futures price (money amount in futures)."""
    sd = sigma * math.sqrt(tau)
    d1 = (math.log(f / k) + 0.5 * sd * sd) / sd
    return math.exp(-r * tau) * norm.cdf(d1) * f


@pytest.fixture
def params():
    return ModelParams(f=0.01, sigma=0.3, r=0.03, f0=60.0, t1=2.0)


@pytest.fixture
def two_atom_prior():
    return Prior([ThetaAtom(0.1, 0.5), ThetaAtom(-0.05, 1.5)], [0.4, 0.6])


@pytest.fixture
def three_atom_prior():
    return Prior([ThetaAtom(0.2, 0.5), ThetaAtom(-0.1, 1.0), ThetaAtom(0.05, 2.0)], [0.3, 0.4, 0.3])


def mc_within(est, truth, se, k=3.0):
    return abs(est - truth) <= k * se


def sample_se(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))
