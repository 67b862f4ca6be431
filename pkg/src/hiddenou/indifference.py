"""Exponential-utility indifference pricing and hedging of spot payoffs.

The price is the risk-neutral expectation of a posterior-weighted
certainty equivalent of the payoff at maturity, evaluated on simulated
terminal states (Y_T, P_T, Q_T). Hedges are central differences in y of the
conditional value, with common random numbers across the bumped starts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .filtering import log_lambda_arrays
from .model import AugmentedState, DomainError, ModelParams, PayoffSpec, Prior, _payoff_values
from .simulate import RngConfig, abm_functionals, map_blocks, risk_neutral_terminal


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 20000
    n_steps: int = 64
    rng: RngConfig = RngConfig(0)
    bump_y: float = 1e-2
    threads: int | None = None

    def __post_init__(self):
        if self.n_paths < 100:
            raise DomainError("n_paths must be at least 100")
        if self.n_steps < 1:
            raise DomainError("n_steps must be at least 1")
        if not 0 < self.bump_y < 0.1:
            raise DomainError("bump_y must lie in (0, 0.1)")


def _require_bounded(payoff: PayoffSpec):
    if not payoff.bounded:
        raise DomainError(f"payoff kind {payoff.kind!r} is unbounded; set a cap")


def certainty_equivalents(gamma: float, t, y, p, q, prior: Prior, payoff: PayoffSpec,
                          maturity: float, params: ModelParams):
    """Vectorized (h_hat, h_tilde, log_normalizer) over arrays of states at ``maturity``.

    h_tilde = (1/gamma) log sum_i w_i Lambda_i e^{gamma h_i};
    h_hat = h_tilde - log_normalizer / gamma with log_normalizer = log sum_i w_i Lambda_i.
    """
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    y, p, q = (np.asarray(v, dtype=float)[..., None] for v in (y, p, q))
    ll = np.log(prior.w) + log_lambda_arrays(prior.theta0, prior.theta1, t, y, p, q, params)
    h = _payoff_values(payoff, y, prior.theta0, maturity, params)
    a = logsumexp(ll + gamma * h, axis=-1)
    n = logsumexp(ll, axis=-1)
    return (a - n) / gamma, a / gamma, n


def _check_state(state: AugmentedState, maturity: float):
    if not math.isclose(state.t, maturity, rel_tol=0, abs_tol=1e-12):
        raise DomainError("state must sit at the payoff date")


def h_hat(gamma: float, state: AugmentedState, prior: Prior, payoff: PayoffSpec, maturity: float,
          params: ModelParams) -> float:
    """Certainty equivalent of the payoff under the posterior at maturity."""
    _check_state(state, maturity)
    hh, _, _ = certainty_equivalents(gamma, state.t, state.y, state.p, state.q, prior, payoff, maturity, params)
    return float(hh)


def h_tilde(gamma: float, state: AugmentedState, prior: Prior, payoff: PayoffSpec, maturity: float,
            params: ModelParams) -> float:
    _check_state(state, maturity)
    _, ht, _ = certainty_equivalents(gamma, state.t, state.y, state.p, state.q, prior, payoff, maturity, params)
    return float(ht)


def indifference_samples(payoff: PayoffSpec, maturity: float, gamma, prior: Prior, params: ModelParams,
                         mc: McConfig) -> np.ndarray:
    """Discounted h_hat on each simulated terminal state.

    ``gamma`` may be a sequence; the paths are then shared across values and
    the result has shape (len(gamma), n_paths).
    """
    _require_bounded(payoff)
    if not 0 < maturity <= params.t1:
        raise DomainError(f"maturity must lie in (0, {params.t1}]")
    y, p, q = risk_neutral_terminal(params, maturity, mc.n_steps, mc.n_paths, mc.rng, mc.threads)
    disc = math.exp(-params.r * maturity)
    gammas = np.atleast_1d(np.asarray(gamma, dtype=float))
    out = np.stack([disc * certainty_equivalents(g, maturity, y, p, q, prior, payoff, maturity, params)[0]
                    for g in gammas])
    return out if np.ndim(gamma) else out[0]


def indifference_price(payoff: PayoffSpec, maturity: float, gamma: float, prior: Prior,
                       params: ModelParams, mc: McConfig) -> tuple[float, float]:
    """Monte Carlo indifference price at time 0 and its standard error."""
    v = indifference_samples(payoff, maturity, gamma, prior, params, mc)
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v)))


def optimal_hedge(state: AugmentedState, payoff: PayoffSpec, maturity: float, gamma: float,
                  prior: Prior, params: ModelParams, mc: McConfig,
                  component: str = "claim") -> tuple[float, float]:
    """Money amount in futures at ``state`` and its Monte Carlo standard error.

    ``component="total"`` differentiates the conditional value of h_tilde, i.e.
    the whole optimal strategy of the seller, which includes the pure investment
    position held even without the claim. ``component="claim"`` (default)
    subtracts that position and returns the part induced by the claim, which is
    the derivative of the conditional value of h_hat; it is zero for a constant
    payoff and equals the Black-Scholes delta for a replicable claim.
    """
    _require_bounded(payoff)
    if component not in ("claim", "total"):
        raise DomainError("component must be 'claim' or 'total'")
    tau = maturity - state.t
    if tau <= 0:
        raise DomainError("hedge requires state.t < maturity")
    b = mc.bump_y
    disc = math.exp(-params.r * tau)

    def block(start, n, g):
        x, a, bq = abm_functionals(params.sigma, tau, mc.n_steps, n, g)
        vals = []
        for y in (state.y + b, state.y - b):
            yt = y + x
            pt = state.p + y * tau + a
            qt = state.q + y * y * tau + 2.0 * y * a + bq
            hh, ht, _ = certainty_equivalents(gamma, maturity, yt, pt, qt, prior, payoff, maturity, params)
            vals.append(hh if component == "claim" else ht)
        return disc * (vals[0] - vals[1]) / (2.0 * b)

    d = np.concatenate(map_blocks(block, mc.n_paths, mc.rng, mc.threads))
    return float(np.mean(d)), float(np.std(d, ddof=1) / math.sqrt(len(d)))


def result_json(price: float, std_error: float, gamma: float, n_paths: int, **extra) -> str:
    out = {"price": price, "std_error": std_error, "gamma": gamma, "n_paths": n_paths}
    out.update(extra)
    return json.dumps(out, sort_keys=True)
