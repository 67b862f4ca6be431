"""Closed-form Bayesian filter for the hidden drift parameters.

Given the running statistics (t, Y_t, P_t, Q_t) the likelihood of every
parameter atom is an explicit Gaussian-type exponential, so the posterior at
any time is a reweighting of the prior atoms; no recursion is integrated.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import AugmentedState, ModelParams, Prior, ThetaAtom
from .simulate import PathGrid


class NumericalDegeneracyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Posterior:
    atoms: tuple[ThetaAtom, ...]
    weights: tuple[float, ...]
    log_normalizer: float

    @property
    def w(self) -> np.ndarray:
        return np.array(self.weights)

    @property
    def theta0(self) -> np.ndarray:
        return np.array([a.theta0 for a in self.atoms])

    @property
    def theta1(self) -> np.ndarray:
        return np.array([a.theta1 for a in self.atoms])

    @classmethod
    def from_prior(cls, prior: Prior) -> "Posterior":
        return cls(prior.atoms, prior.weights, 0.0)


def log_lambda_arrays(theta0, theta1, t, y, p, q, params: ModelParams):
    """Vectorized log-likelihood; all arguments broadcast against each other."""
    s2 = params.sigma**2
    y0 = params.y0
    a = np.asarray(theta0) + params.alpha
    b = -np.asarray(theta1)
    lin1 = y - y0 + 0.5 * s2 * t
    lin2 = 0.5 * (y * y - y0 * y0 - s2 * t + s2 * p)
    quad = a * a * t + 2.0 * a * b * p + b * b * q
    return (a * lin1 + b * lin2) / s2 - quad / (2.0 * s2)


def log_lambda(theta: ThetaAtom, state: AugmentedState, params: ModelParams) -> float:
    """log of the likelihood ratio dP/dP~ restricted to the futures filtration, given theta."""
    return float(log_lambda_arrays(theta.theta0, theta.theta1, state.t, state.y, state.p, state.q, params))


def log_rn_path(theta: ThetaAtom, path: PathGrid, params: ModelParams) -> float:
    """Path-sum version of ``log_lambda``: Ito (left-point) and left-Riemann sums.

    Used as an independent check; it converges to ``log_lambda`` as the grid is refined.
    """
    if len(path) < 2:
        raise ValueError("path needs at least two points")
    s2 = params.sigma**2
    dt = np.diff(path.times)
    dy = np.diff(path.y)
    drift = params.alpha + theta.theta0 - theta.theta1 * path.y[:-1]
    return float(np.sum(drift * (dy + 0.5 * s2 * dt)) / s2 - np.sum(drift * drift * dt) / (2.0 * s2))


def _normalize(log_w: np.ndarray):
    log_z = logsumexp(log_w, axis=-1)
    if not np.all(np.isfinite(log_z)):
        raise NumericalDegeneracyError("posterior normalizer is not finite")
    return np.exp(log_w - np.expand_dims(log_z, -1)), log_z


def posterior(prior: Prior, state: AugmentedState, params: ModelParams) -> Posterior:
    ll = log_lambda_arrays(prior.theta0, prior.theta1, state.t, state.y, state.p, state.q, params)
    w, log_z = _normalize(np.log(prior.w) + ll)
    return Posterior(prior.atoms, tuple(float(x) for x in w), float(log_z))


def posterior_weights(prior: Prior, t, y, p, q, params: ModelParams):
    """Posterior weights for arrays of states: returns (weights[..., n_atoms], log_normalizer[...])."""
    t, y, p, q = (np.asarray(v, dtype=float)[..., None] for v in (t, y, p, q))
    ll = log_lambda_arrays(prior.theta0, prior.theta1, t, y, p, q, params)
    return _normalize(np.log(prior.w) + ll)


def bayes_estimate(post: Posterior) -> tuple[float, float]:
    w = post.w
    return float(w @ post.theta0), float(w @ post.theta1)


def filter_along_path(prior: Prior, path: PathGrid, params: ModelParams) -> list[Posterior]:
    w, log_z = posterior_weights(prior, path.times, path.y, path.p, path.q, params)
    return [Posterior(prior.atoms, tuple(float(x) for x in wi), float(lz)) for wi, lz in zip(w, log_z)]


def innovation_path(prior: Prior, path: PathGrid, params: ModelParams) -> np.ndarray:
    """Innovation Brownian motion B on the path grid (left-Riemann drift integral)."""
    w, _ = posterior_weights(prior, path.times, path.y, path.p, path.q, params)
    th0_hat = w @ prior.theta0
    th1_hat = w @ prior.theta1
    drift = params.f + th0_hat - th1_hat * path.y
    integral = np.concatenate([[0.0], np.cumsum(drift[:-1] * np.diff(path.times))])
    return (path.y - path.y[0] - integral) / params.sigma


def log_lambda_fixed_speed(theta0, theta1_bar: float, state: AugmentedState, params: ModelParams):
    """log of the theta0-dependent likelihood factor when the speed is known to be ``theta1_bar``.

    The remaining factor depends on theta1_bar and q only, so it cancels from
    any posterior over theta0.
    """
    s2 = params.sigma**2
    a = np.asarray(theta0, dtype=float) + params.alpha
    out = a / s2 * (state.y + theta1_bar * state.p - params.y0 + 0.5 * s2 * state.t) - a * a * state.t / (2.0 * s2)
    return float(out) if np.ndim(out) == 0 else out


def estimates_csv(posteriors: list[Posterior], times) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "theta0_hat", "theta1_hat", "log_normalizer"])
    for t, post in zip(times, posteriors):
        e0, e1 = bayes_estimate(post)
        w.writerow([repr(float(t)), repr(e0), repr(e1), repr(post.log_normalizer)])
    return buf.getvalue()
