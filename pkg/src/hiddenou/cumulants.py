"""Cumulants of the log futures price under the physical measure.

Given theta, Y_t is Gaussian with the OU conditional mean and variance, so
its law is a finite Gaussian mixture over the prior (or posterior) atoms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb, logsumexp

from .filtering import Posterior
from .model import DomainError, ModelParams, Prior, ThetaAtom, _cond_mean, _cond_var

N_MAX = 8


@dataclass(frozen=True)
class DiscreteLaw:
    """Finite law of a scalar random variable."""

    values: tuple[float, ...]
    weights: tuple[float, ...]

    def __init__(self, values, weights=None):
        v = np.asarray(values, dtype=float).reshape(-1)
        w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if v.size == 0 or v.shape != w.shape or np.any(w <= 0):
            raise DomainError("need matching values and positive weights")
        w = w / w.sum()
        object.__setattr__(self, "values", tuple(v.tolist()))
        object.__setattr__(self, "weights", tuple(w.tolist()))

    @classmethod
    def dirac(cls, value: float) -> "DiscreteLaw":
        return cls([value], [1.0])

    def cumulants(self, n_max: int) -> np.ndarray:
        """kappa_1..kappa_{n_max} of this law."""
        return cumulants_of_sample(np.array(self.values), np.array(self.weights), n_max)


def cumulants_of_sample(values, weights, n_max: int) -> np.ndarray:
    """Exact cumulants of a weighted discrete law via the moment recursion.

    The recursion runs on the centred variable; order >= 2 cumulants are
    shift invariant and the mean is put back as kappa_1.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = float(w @ x)
    d = x - mean
    mu = [1.0] + [float(w @ d**k) for k in range(1, n_max + 1)]
    kappa = [0.0] * (n_max + 1)
    for n in range(1, n_max + 1):
        kappa[n] = mu[n] - sum(comb(n - 1, m - 1, exact=True) * kappa[m] * mu[n - m] for m in range(1, n))
    kappa[1] = mean
    return np.array(kappa[1:])


def _moments(theta0, theta1, y_s, dt, params):
    return (_cond_mean(theta0, theta1, y_s, dt, params.f), _cond_var(theta1, dt, params.sigma))


def cgf_conditional(post: Posterior | Prior, s: float, t: float, y_s: float, alpha, params: ModelParams):
    """log E[exp(alpha Y_t) | futures information at s] from the posterior at s."""
    if not 0 <= s <= t:
        raise DomainError("need 0 <= s <= t")
    m, v = _moments(post.theta0, post.theta1, y_s, t - s, params)
    a = np.asarray(alpha, dtype=float)[..., None]
    log_w = np.log(post.w)
    # subtracting the log of the weight total makes alpha = 0 give exactly 0
    out = logsumexp(log_w + a * m + 0.5 * a * a * v, axis=-1) - logsumexp(log_w)
    return float(out) if np.ndim(out) == 0 else out


def cgf_unconditional(prior: Prior, t: float, alpha, params: ModelParams):
    if t < 0:
        raise DomainError("t must be nonnegative")
    return cgf_conditional(prior, 0.0, t, params.y0, alpha, params)


def _mixture_cumulants(w, m, v):
    """First four cumulants of the Gaussian mixture sum_i w_i N(m_i, v_i)."""
    k1 = w @ m
    dm = m - k1
    ev = w @ v
    var_m = w @ dm**2
    var_v = w @ (v - ev) ** 2
    cov_mv = w @ (dm * (v - ev))
    cov_m2v = w @ ((m * m - w @ (m * m)) * (v - ev))
    k2 = ev + var_m
    k3 = w @ dm**3 + 3.0 * cov_mv
    k4 = w @ dm**4 + 3.0 * (var_v - var_m**2) + 6.0 * cov_m2v - 12.0 * k1 * cov_mv
    return float(k1), float(k2), float(k3), float(k4)


def cumulants_from_prior(prior: Prior, t: float, params: ModelParams) -> tuple[float, float, float, float]:
    """First four cumulants of Y_t under the prior mixture."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    m, v = _moments(prior.theta0, prior.theta1, params.y0, t, params)
    return _mixture_cumulants(prior.w, m, v)


def cumulants_limit(prior: Prior, params: ModelParams) -> tuple[float, float, float, float]:
    """t -> infinity limit of ``cumulants_from_prior``; needs every speed positive.

    Each atom's law tends to N(level, sigma^2 / (2 theta1)); no independence
    between speed and level is assumed.
    """
    th1 = prior.theta1
    if np.any(th1 <= 0):
        raise DomainError("long-time limit needs theta1 > 0 for every atom")
    m = (prior.theta0 + params.f) / th1
    v = params.sigma**2 / (2.0 * th1)
    return _mixture_cumulants(prior.w, m, v)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def cumulants_asymptotic(speed: DiscreteLaw, level: DiscreteLaw, params: ModelParams,
                         n_max: int = 4) -> list[float]:
    """Long-time cumulants kappa_1..kappa_{n_max} for independent speed and level laws.

    ``speed`` is the law of theta1 (all atoms positive), ``level`` the law of
    (theta0 + f) / theta1.
    """
    if n_max < 1 or n_max > N_MAX:
        raise DomainError(f"n_max must lie in [1, {N_MAX}]")
    if min(speed.values) <= 0:
        raise DomainError("speed atoms must be positive")
    inv_speed = cumulants_of_sample(1.0 / np.array(speed.values), np.array(speed.weights), max(1, n_max // 2))
    lvl = level.cumulants(n_max)
    half_var = 0.5 * params.sigma**2
    out = []
    for n in range(1, n_max + 1):
        if n % 2:
            out.append(float(lvl[n - 1]))
        else:
            m = n // 2
            out.append(float(_double_factorial(2 * m - 1) * half_var**m * inv_speed[m - 1] + lvl[n - 1]))
    return out


def speed_level_prior(speed: DiscreteLaw, level: DiscreteLaw, params: ModelParams) -> Prior:
    """Joint (theta0, theta1) prior under which speed and level are independent."""
    atoms, weights = [], []
    for k, wk in zip(speed.values, speed.weights):
        for m, wm in zip(level.values, level.weights):
            atoms.append(ThetaAtom(m * k - params.f, k))
            weights.append(wk * wm)
    return Prior(atoms, weights)


def speed_level_marginals(prior: Prior, params: ModelParams, tol: float = 1e-12):
    """Speed and level marginals of a prior, or None if they are not independent."""
    th1 = prior.theta1
    if np.any(th1 <= 0):
        return None
    lvl = (prior.theta0 + params.f) / th1
    ks, k_idx = np.unique(th1, return_inverse=True)
    ls, l_idx = np.unique(np.round(lvl, 14), return_inverse=True)
    joint = np.zeros((len(ks), len(ls)))
    np.add.at(joint, (k_idx, l_idx), prior.w)
    mk, ml = joint.sum(axis=1), joint.sum(axis=0)
    if np.max(np.abs(joint - np.outer(mk, ml))) > tol:
        return None
    return DiscreteLaw(ks, mk), DiscreteLaw(ls, ml)


def cumulants_csv(prior: Prior, times: Sequence[float], params: ModelParams,
                  asymptotic: tuple[DiscreteLaw, DiscreteLaw] | None = None) -> str:
    """Rows for ``times`` plus an ``inf`` row.

    The ``inf`` row uses the speed/level formula when ``asymptotic`` marginals
    are given, otherwise the general mixture limit of the prior.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "k1", "k2", "k3", "k4"])
    for t in times:
        w.writerow([repr(float(t))] + [repr(k) for k in cumulants_from_prior(prior, t, params)])
    if asymptotic is not None:
        limit = cumulants_asymptotic(*asymptotic, params, 4)
    else:
        limit = cumulants_limit(prior, params)
    w.writerow(["inf"] + [repr(k) for k in limit])
    return buf.getvalue()
