"""No-arbitrage pricing and delta hedging of payoffs written on the liquid futures."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .model import DomainError

DEFAULT_NODES = 64
DIGITAL_NODES = 256
DELTA_BUMP = 1e-5


class PayoffEvaluationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class VolCurve:
    """Constant or piecewise-constant volatility.

    ``levels[i]`` applies on [breaks[i], breaks[i+1]); ``breaks`` starts at 0 and
    the last level extends to infinity.
    """

    levels: tuple[float, ...]
    breaks: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        breaks = tuple(float(b) for b in self.breaks)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "breaks", breaks)
        if len(levels) != len(breaks) or not levels:
            raise DomainError("one volatility level per breakpoint required")
        if breaks[0] != 0.0 or any(b1 <= b0 for b0, b1 in zip(breaks, breaks[1:])):
            raise DomainError("breakpoints must start at 0 and increase strictly")
        if min(levels) <= 0:
            raise DomainError("volatility must stay positive")

    @classmethod
    def constant(cls, sigma: float) -> "VolCurve":
        return cls((sigma,), (0.0,))

    def __call__(self, t: float) -> float:
        i = np.searchsorted(self.breaks, t, side="right") - 1
        return self.levels[max(i, 0)]

    def integrated_variance(self, t: float, maturity: float) -> float:
        edges = np.array(self.breaks + (np.inf,))
        lo = np.clip(edges[:-1], t, maturity)
        hi = np.clip(edges[1:], t, maturity)
        return float(np.sum(np.square(self.levels) * (hi - lo)))


def sigma_bar(t: float, maturity: float, vol: VolCurve) -> float:
    """Root of the integrated variance of sigma(.) over [t, maturity]."""
    if t < 0 or t > maturity:
        raise DomainError("need 0 <= t <= maturity")
    return float(np.sqrt(vol.integrated_variance(t, maturity)))


@lru_cache(maxsize=16)
def _hermite_rule(n: int):
    # probabilists' Hermite rule, weights normalized to the standard normal
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class FuturesPayoff:
    """Vectorized payoff h(x) with the points where it is not smooth."""

    fn: Callable
    breakpoints: tuple[float, ...] = ()

    def __call__(self, x):
        return self.fn(x)


# standard normal mass beyond this many deviations is below 1e-40
_Z_CUT = 13.5


@lru_cache(maxsize=16)
def _legendre_rule(n: int):
    return np.polynomial.legendre.leggauss(n)


def _normal_nodes(s: float, f_t: float, breakpoints, n_nodes: int):
    """Nodes/weights in z for E[h(f_t exp(s z - s^2/2))], z standard normal."""
    if not breakpoints:
        return _hermite_rule(int(n_nodes))
    # split the truncated line at the kinks and use Gauss-Legendre per smooth piece
    cuts = sorted(
        (np.log(b / f_t) + 0.5 * s * s) / s for b in breakpoints if b > 0
    )
    edges = [-_Z_CUT] + [c for c in cuts if -_Z_CUT < c < _Z_CUT] + [_Z_CUT]
    x, w = _legendre_rule(int(n_nodes))
    zs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        z = lo + half * (x + 1.0)
        zs.append(z)
        ws.append(half * w * np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi))
    return np.concatenate(zs), np.concatenate(ws)


def price_futures_derivative(payoff: Callable, t: float, f_t: float, maturity: float,
                             vol: VolCurve, r: float, n_nodes: int = DEFAULT_NODES) -> float:
    """Price at t of h(F_T): discounted lognormal expectation by quadrature.

    Plain callables are integrated by Gauss-Hermite with ``n_nodes`` points.
    A :class:`FuturesPayoff` with breakpoints (calls, puts, digitals built by
    this module) is integrated piecewise by Gauss-Legendre between its kinks,
    which keeps the kinked payoffs accurate to rounding error.
    """
    s = sigma_bar(t, maturity, vol)
    disc = np.exp(-r * (maturity - t))
    if s == 0.0:
        v = np.asarray(payoff(np.array([f_t])), dtype=float)
        _check_finite(v)
        return float(disc * v[0])
    z, w = _normal_nodes(s, f_t, getattr(payoff, "breakpoints", ()), n_nodes)
    v = np.asarray(payoff(f_t * np.exp(s * z - 0.5 * s * s)), dtype=float)
    _check_finite(v)
    return float(disc * np.dot(w, v))


def _check_finite(v):
    if not np.all(np.isfinite(v)):
        raise PayoffEvaluationError("payoff is not finite at a quadrature node")


def delta_futures_derivative(payoff: Callable, t: float, f_t: float, maturity: float,
                             vol: VolCurve, r: float, n_nodes: int = DEFAULT_NODES) -> float:
    """Money amount held in futures: dV/dx * F_t by central difference (relative bump 1e-5)."""
    h = DELTA_BUMP * f_t
    up = price_futures_derivative(payoff, t, f_t + h, maturity, vol, r, n_nodes)
    dn = price_futures_derivative(payoff, t, f_t - h, maturity, vol, r, n_nodes)
    return (up - dn) / (2.0 * h) * f_t


def call(strike: float) -> FuturesPayoff:
    return FuturesPayoff(lambda x: np.maximum(x - strike, 0.0), (strike,))


def put(strike: float) -> FuturesPayoff:
    return FuturesPayoff(lambda x: np.maximum(strike - x, 0.0), (strike,))


def digital(strike: float) -> FuturesPayoff:
    return FuturesPayoff(lambda x: (x > strike).astype(float), (strike,))


def pricing_csv(payoff: Callable, times: Sequence[float], futures: Sequence[float], maturity: float,
                vol: VolCurve, r: float, n_nodes: int = DEFAULT_NODES) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "f", "price", "delta"])
    for t in times:
        for f in futures:
            price = price_futures_derivative(payoff, t, f, maturity, vol, r, n_nodes)
            delta = delta_futures_derivative(payoff, t, f, maturity, vol, r, n_nodes) if t < maturity else 0.0
            w.writerow([repr(float(t)), repr(float(f)), repr(price), repr(delta)])
    return buf.getvalue()
