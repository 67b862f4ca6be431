"""Shared domain types, the spot/futures relation and OU conditional moments.

Log futures prices follow dY = (f + theta0 - theta1 * Y) dt + sigma dW with a
hidden parameter pair (theta0, theta1) drawn once from a prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# |theta1 * dt| below which the moment formulas switch to their series limit
_SMALL_RATE = 1e-8

PAYOFF_KINDS = (
    "call-on-spot",
    "put-on-spot",
    "call-on-futures",
    "put-on-futures",
    "digital-on-spot",
    "forward-on-spot",
    "constant",
)
# kinds whose raw payoff is unbounded above
UNBOUNDED_KINDS = frozenset({"call-on-spot", "call-on-futures", "forward-on-spot"})
THETA_FREE_KINDS = frozenset({"call-on-futures", "put-on-futures", "constant"})


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


@dataclass(frozen=True)
class ModelParams:
    f: float
    sigma: float
    r: float
    f0: float
    t1: float
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("f", "sigma", "r", "f0", "t1", "gamma"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.t1 <= 0:
            raise DomainError(f"t1 must be positive, got {self.t1}")
        if self.f0 <= 0:
            raise DomainError(f"f0 must be positive, got {self.f0}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if self.r < 0:
            raise DomainError(f"r must be nonnegative, got {self.r}")

    @property
    def alpha(self) -> float:
        """Drift shift f + sigma^2/2 entering the likelihood."""
        return self.f + 0.5 * self.sigma**2

    @property
    def y0(self) -> float:
        return math.log(self.f0)


@dataclass(frozen=True)
class ThetaAtom:
    theta0: float
    theta1: float

    def __post_init__(self):
        if not (math.isfinite(self.theta0) and math.isfinite(self.theta1)):
            raise DomainError("theta components must be finite")

    def level(self, f: float) -> float:
        """Mean-reversion level (theta0 + f) / theta1."""
        if self.theta1 == 0:
            raise DomainError("mean-reversion level undefined for theta1 = 0")
        return (self.theta0 + f) / self.theta1


@dataclass(frozen=True)
class Prior:
    """Finite weighted atom set; weights are normalized on construction."""

    atoms: tuple[ThetaAtom, ...]
    weights: tuple[float, ...]

    def __init__(self, atoms: Iterable[ThetaAtom], weights: Iterable[float] | None = None):
        atoms = tuple(atoms)
        if not atoms:
            raise DomainError("prior needs at least one atom")
        if weights is None:
            weights = [1.0] * len(atoms)
        w = np.asarray(list(weights), dtype=float)
        if w.shape != (len(atoms),):
            raise DomainError("one weight per atom required")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("prior weights must be positive and finite")
        if len(set(atoms)) != len(atoms):
            raise DomainError("prior atoms must be pairwise distinct")
        w = w / w.sum()
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    def __len__(self):
        return len(self.atoms)

    @property
    def theta0(self) -> np.ndarray:
        return np.array([a.theta0 for a in self.atoms])

    @property
    def theta1(self) -> np.ndarray:
        return np.array([a.theta1 for a in self.atoms])

    @property
    def w(self) -> np.ndarray:
        return np.array(self.weights)

    @classmethod
    def dirac(cls, theta0: float, theta1: float) -> "Prior":
        return cls([ThetaAtom(theta0, theta1)], [1.0])

    @classmethod
    def grid(cls, theta0_range: tuple[float, float], theta1_range: tuple[float, float],
             n0: int, n1: int) -> "Prior":
        """Uniform weights on an n0 x n1 grid over a rectangle (endpoints included)."""
        g0 = np.linspace(*theta0_range, n0) if n0 > 1 else np.array([np.mean(theta0_range)])
        g1 = np.linspace(*theta1_range, n1) if n1 > 1 else np.array([np.mean(theta1_range)])
        atoms = [ThetaAtom(float(a), float(b)) for a in g0 for b in g1]
        return cls(atoms)

    @classmethod
    def product(cls, theta0_marginal: Sequence[tuple[float, float]],
                theta1_marginal: Sequence[tuple[float, float]]) -> "Prior":
        """Independent product of two discrete marginals given as (value, weight) pairs."""
        atoms, weights = [], []
        for v0, w0 in theta0_marginal:
            for v1, w1 in theta1_marginal:
                atoms.append(ThetaAtom(float(v0), float(v1)))
                weights.append(w0 * w1)
        return cls(atoms, weights)


@dataclass(frozen=True)
class AugmentedState:
    """Time, log futures price and the running integrals of Y and Y^2."""

    t: float
    y: float
    p: float
    q: float

    def __post_init__(self):
        if self.t < 0:
            raise DomainError("state time must be nonnegative")
        if self.q < 0:
            raise DomainError("q must be nonnegative")

    @classmethod
    def initial(cls, params: ModelParams) -> "AugmentedState":
        return cls(0.0, params.y0, 0.0, 0.0)


@dataclass(frozen=True)
class PayoffSpec:
    kind: str
    strike: float = 0.0
    cap: float | None = None

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise DomainError(f"unknown payoff kind {self.kind!r}; expected one of {PAYOFF_KINDS}")
        if self.kind != "constant" and self.strike < 0:
            raise DomainError("strike must be nonnegative for option kinds")
        if self.cap is not None and not self.cap > 0:
            raise DomainError("cap bounds the payoff value and must be positive")

    @property
    def bounded(self) -> bool:
        return self.cap is not None or self.kind not in UNBOUNDED_KINDS

    @property
    def theta_free(self) -> bool:
        return self.kind in THETA_FREE_KINDS


def spot_from_futures(f_t, theta0, t, params: ModelParams):
    """Spot price S_t = F_t exp(-(r - theta0)(T1 - t))."""
    if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > params.t1):
        raise DomainError(f"t must lie in [0, {params.t1}]")
    return f_t * np.exp(-(params.r - theta0) * (params.t1 - t))


def ou_cond_mean(theta: ThetaAtom, y_s, dt, params: ModelParams):
    """E[Y_{s+dt} | Y_s = y_s, theta]."""
    return _cond_mean(theta.theta0, theta.theta1, y_s, dt, params.f)


def ou_cond_var(theta: ThetaAtom, dt, params: ModelParams):
    """Var[Y_{s+dt} | Y_s, theta]."""
    return _cond_var(theta.theta1, dt, params.sigma)


def _cond_mean(theta0, theta1, y_s, dt, f):
    # e^{-k dt} y + (b/k)(1 - e^{-k dt}) with b = theta0 + f, written via expm1
    # so that the k -> 0 limit y + b dt is reached smoothly
    theta0, theta1, y_s, dt = np.broadcast_arrays(*map(np.asarray, (theta0, theta1, y_s, dt)))
    theta0, theta1, y_s, dt = (a.astype(float) for a in (theta0, theta1, y_s, dt))
    x = theta1 * dt
    small = np.abs(x) < _SMALL_RATE
    safe_x = np.where(small, 1.0, x)
    # (1 - e^{-x}) / x
    ratio = np.where(small, 1.0 - 0.5 * x + x * x / 6.0, -np.expm1(-safe_x) / safe_x)
    out = np.exp(-x) * y_s + (theta0 + f) * dt * ratio
    return out[()] if out.ndim == 0 else out


def _cond_var(theta1, dt, sigma):
    theta1, dt = np.broadcast_arrays(np.asarray(theta1, dtype=float), np.asarray(dt, dtype=float))
    x = 2.0 * theta1 * dt
    small = np.abs(x) < 2 * _SMALL_RATE
    safe_x = np.where(small, 1.0, x)
    ratio = np.where(small, 1.0 - 0.5 * x + x * x / 6.0, -np.expm1(-safe_x) / safe_x)
    out = sigma**2 * dt * ratio
    return out[()] if out.ndim == 0 else out


def evaluate_payoff(spec: PayoffSpec, y, theta: ThetaAtom | tuple[float, float],
                    maturity: float, params: ModelParams):
    """Payoff h(y, theta) at `maturity` for log futures price y (scalar or array).

    Spot payoffs read the spot through ``spot_from_futures`` at the maturity
    date; futures payoffs ignore theta. A cap, when set, truncates from above.
    """
    if not 0 < maturity <= params.t1:
        raise DomainError(f"maturity must lie in (0, {params.t1}]")
    theta0 = theta.theta0 if isinstance(theta, ThetaAtom) else theta[0]
    return _payoff_values(spec, np.asarray(y, dtype=float), theta0, maturity, params)


def _payoff_values(spec: PayoffSpec, y, theta0, maturity, params):
    k = spec.strike
    kind = spec.kind
    if kind == "constant":
        raw = np.full(np.broadcast(y, theta0).shape, float(k))
    elif kind.endswith("on-futures"):
        x = np.exp(y) + 0.0 * theta0
        raw = np.maximum(x - k, 0.0) if kind.startswith("call") else np.maximum(k - x, 0.0)
    else:
        s = np.exp(y - (params.r - theta0) * (params.t1 - maturity))
        if kind == "call-on-spot":
            raw = np.maximum(s - k, 0.0)
        elif kind == "put-on-spot":
            raw = np.maximum(k - s, 0.0)
        elif kind == "digital-on-spot":
            raw = (s > k).astype(float)
        else:
            raw = s - k
    if spec.cap is not None:
        raw = np.minimum(raw, spec.cap)
    return raw[()] if raw.ndim == 0 else raw
