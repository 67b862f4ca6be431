"""Exact-transition path simulation under the physical and risk-neutral measures.

Single paths come back as :class:`PathGrid`; the ``*_batch`` and
``*_terminal`` helpers produce many paths at once as numpy arrays and are what
the Monte Carlo pricers use. Batched output is generated in fixed blocks of
``BLOCK_SIZE`` paths, each block owning its own RNG stream, so results do not
depend on how many worker threads are used.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import (
    AugmentedState,
    DomainError,
    ModelParams,
    Prior,
    ThetaAtom,
    _cond_mean,
    _cond_var,
)

BLOCK_SIZE = 4096
THREADS_ENV = "HIDDENOU_THREADS"


@dataclass(frozen=True)
class RngConfig:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.stream_id < 0:
            raise DomainError("stream_id must be nonnegative")

    def generator(self, *sub: int) -> np.random.Generator:
        """Generator for this stream, optionally for a numbered sub-stream."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *sub))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class PathGrid:
    times: np.ndarray
    y: np.ndarray
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if n < 1 or self.times[0] != 0:
            raise DomainError("path grid must start at t = 0")
        if not (len(self.y) == len(self.p) == len(self.q) == n):
            raise DomainError("path arrays must align with the time grid")
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def __eq__(self, other):
        if not isinstance(other, PathGrid):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("times", "y", "p", "q"))

    def state(self, i: int) -> AugmentedState:
        return AugmentedState(float(self.times[i]), float(self.y[i]), float(self.p[i]), float(self.q[i]))

    @property
    def states(self) -> list[AugmentedState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def terminal(self) -> AugmentedState:
        return self.state(len(self) - 1)

    def to_csv(self, fh=None) -> str:
        buf = fh if fh is not None else io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y", "p", "q"])
        for row in zip(self.times, self.y, self.p, self.q):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue() if fh is None else ""


def _check_horizon(horizon, n_steps, params):
    if not 0 < horizon <= params.t1:
        raise DomainError(f"horizon must lie in (0, {params.t1}]")
    if int(n_steps) < 1:
        raise DomainError("n_steps must be at least 1")


def _trapezoid_accumulate(y: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Running trapezoid integrals of y and y^2 along the last axis."""
    shape = y.shape[:-1] + (1,)
    zero = np.zeros(shape)
    p = np.concatenate([zero, np.cumsum(0.5 * dt * (y[..., 1:] + y[..., :-1]), axis=-1)], axis=-1)
    y2 = y * y
    q = np.concatenate([zero, np.cumsum(0.5 * dt * (y2[..., 1:] + y2[..., :-1]), axis=-1)], axis=-1)
    return p, q


def _ou_paths(theta0, theta1, params, horizon, n_steps, z):
    """OU paths driven by standard normals z of shape (n, n_steps)."""
    dt = horizon / n_steps
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    theta1 = np.asarray(theta1, dtype=float).reshape(-1)
    sd = np.sqrt(_cond_var(theta1, dt, params.sigma))
    y = np.empty((z.shape[0], n_steps + 1))
    y[:, 0] = params.y0
    for i in range(n_steps):
        y[:, i + 1] = _cond_mean(theta0, theta1, y[:, i], dt, params.f) + sd * z[:, i]
    return y


def simulate_physical(theta: ThetaAtom, params: ModelParams, horizon: float, n_steps: int,
                      rng: RngConfig) -> PathGrid:
    """One path of Y under the physical measure given the parameter pair."""
    _check_horizon(horizon, n_steps, params)
    z = rng.generator().standard_normal((1, n_steps))
    y = _ou_paths(theta.theta0, theta.theta1, params, horizon, n_steps, z)
    times = np.linspace(0.0, horizon, n_steps + 1)
    p, q = _trapezoid_accumulate(y, horizon / n_steps)
    return PathGrid(times, y[0], p[0], q[0])


def simulate_physical_with_prior(prior: Prior, params: ModelParams, horizon: float, n_steps: int,
                                 n_paths: int, rng: RngConfig) -> list[tuple[ThetaAtom, PathGrid]]:
    """Paths with their hidden atom; path i uses sub-stream i of ``rng``."""
    _check_horizon(horizon, n_steps, params)
    out = []
    for i in range(n_paths):
        g = rng.generator(i)
        k = g.choice(len(prior), p=prior.w)
        atom = prior.atoms[k]
        z = g.standard_normal((1, n_steps))
        y = _ou_paths(atom.theta0, atom.theta1, params, horizon, n_steps, z)
        p, q = _trapezoid_accumulate(y, horizon / n_steps)
        out.append((atom, PathGrid(np.linspace(0.0, horizon, n_steps + 1), y[0], p[0], q[0])))
    return out


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_blocks(fn: Callable[[int, int, np.random.Generator], object], n_paths: int, rng: RngConfig,
               threads: int | None = None) -> list:
    """Apply ``fn(start, size, generator)`` to consecutive fixed-size blocks, in order."""
    if n_paths < 1:
        raise DomainError("n_paths must be positive")
    starts = list(range(0, n_paths, BLOCK_SIZE))
    jobs = [(s, min(BLOCK_SIZE, n_paths - s)) for s in starts]

    def run(job):
        s, n = job
        return fn(s, n, rng.generator(s // BLOCK_SIZE))

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(run, jobs))


def simulate_physical_batch(prior: Prior, params: ModelParams, horizon: float, n_steps: int,
                            n_paths: int, rng: RngConfig, threads: int | None = None):
    """Vectorized physical paths: returns (atom_index, y, p, q) arrays.

    ``y``, ``p`` and ``q`` have shape (n_paths, n_steps + 1).
    """
    _check_horizon(horizon, n_steps, params)
    th0, th1, w = prior.theta0, prior.theta1, prior.w

    def block(start, n, g):
        k = g.choice(len(prior), size=n, p=w)
        z = g.standard_normal((n, n_steps))
        y = _ou_paths(th0[k], th1[k], params, horizon, n_steps, z)
        p, q = _trapezoid_accumulate(y, horizon / n_steps)
        return k, y, p, q

    parts = map_blocks(block, n_paths, rng, threads)
    return tuple(np.concatenate([b[i] for b in parts]) for i in range(4))


def _abm_joint_step(z1, z2, dt):
    """Exact increments (dW, int_0^dt (W_s - W_0) ds) from two standard normals."""
    dw = np.sqrt(dt) * z1
    di = dt**1.5 * (0.5 * z1 + z2 / (2.0 * np.sqrt(3.0)))
    return dw, di


def simulate_risk_neutral(params: ModelParams, horizon: float, n_steps: int,
                          rng: RngConfig) -> PathGrid:
    """One path of (Y, P, Q) under the risk-neutral measure.

    (Y, P) move by their exact joint Gaussian step; Q is a trapezoid sum of Y^2.
    """
    _check_horizon(horizon, n_steps, params)
    z = rng.generator().standard_normal((2, n_steps))
    y, p, q = _risk_neutral_paths(params, horizon, n_steps, z[0][None, :], z[1][None, :])
    return PathGrid(np.linspace(0.0, horizon, n_steps + 1), y[0], p[0], q[0])


def _risk_neutral_paths(params, horizon, n_steps, z1, z2):
    dt = horizon / n_steps
    s = params.sigma
    dw, di = _abm_joint_step(z1, z2, dt)
    n = z1.shape[0]
    y = np.empty((n, n_steps + 1))
    y[:, 0] = params.y0
    y[:, 1:] = params.y0 + np.cumsum(-0.5 * s * s * dt + s * dw, axis=1)
    dp = y[:, :-1] * dt - 0.25 * s * s * dt * dt + s * di
    p = np.concatenate([np.zeros((n, 1)), np.cumsum(dp, axis=1)], axis=1)
    y2 = y * y
    q = np.concatenate([np.zeros((n, 1)), np.cumsum(0.5 * dt * (y2[:, 1:] + y2[:, :-1]), axis=1)], axis=1)
    return y, p, q


SCHEMES = ("bridge", "trapezoid")


def abm_functionals(sigma: float, tau: float, n_steps: int, n: int, g: np.random.Generator,
                    scheme: str = "bridge"):
    """Terminal functionals of X_s = -sigma^2 s/2 + sigma W_s on [0, tau].

    Returns (X_tau, int X ds, int X^2 ds) for ``n`` independent paths. The first
    two are exact. For the last, ``scheme="trapezoid"`` sums X^2 by the
    trapezoid rule; ``scheme="bridge"`` (default) replaces the within-step
    quadratic terms by their exact conditional means given the step's
    (dW, int dW), which removes the leading-order pathwise error. A start state
    (y, p, q) then maps to (y + X, p + y tau + A, q + y^2 tau + 2 y A + B).
    """
    if scheme not in SCHEMES:
        raise DomainError(f"scheme must be one of {SCHEMES}")
    dt = tau / n_steps
    if scheme == "trapezoid":
        x = np.zeros(n)
        a = np.zeros(n)
        b = np.zeros(n)
        drift = -0.5 * sigma * sigma * dt
        for _ in range(n_steps):
            z = g.standard_normal((2, n))
            dw, di = _abm_joint_step(z[0], z[1], dt)
            x_new = x + drift + sigma * dw
            a += x * dt + 0.5 * drift * dt + sigma * di
            b += 0.5 * dt * (x * x + x_new * x_new)
            x = x_new
        return x, a, b
    # standard BM functionals W, int W, int W^2, int s W
    w = np.zeros(n)
    iw = np.zeros(n)
    iw2 = np.zeros(n)
    isw = np.zeros(n)
    for k in range(n_steps):
        s0 = k * dt
        z = g.standard_normal((2, n))
        dw, di = _abm_joint_step(z[0], z[1], dt)
        j = di - 0.5 * dt * dw  # integral of the bridge part
        ib2 = dt * dw * dw / 3.0 + dw * j + dt * dt / 15.0 + 1.2 * j * j / dt
        iub = dt * dt * dw / 3.0 + 0.5 * dt * j
        iw2 += dt * w * w + 2.0 * w * di + ib2
        isw += s0 * (dt * w + di) + 0.5 * dt * dt * w + iub
        iw += dt * w + di
        w += dw
    s2 = sigma * sigma
    x = sigma * w - 0.5 * s2 * tau
    a = sigma * iw - 0.25 * s2 * tau * tau
    b = s2 * iw2 - sigma * s2 * isw + s2 * s2 * tau**3 / 12.0
    return x, a, b


def risk_neutral_terminal(params: ModelParams, horizon: float, n_steps: int, n_paths: int,
                          rng: RngConfig, threads: int | None = None, scheme: str = "bridge"):
    """Terminal (Y, P, Q) of risk-neutral paths started at the initial state."""
    _check_horizon(horizon, n_steps, params)
    y0 = params.y0

    def block(start, n, g):
        x, a, b = abm_functionals(params.sigma, horizon, n_steps, n, g, scheme)
        return y0 + x, y0 * horizon + a, y0 * y0 * horizon + 2 * y0 * a + b

    parts = map_blocks(block, n_paths, rng, threads)
    return tuple(np.concatenate([b[i] for b in parts]) for i in range(3))


def accrue_gains(futures_path: Sequence[float], strategy: Sequence[float], params: ModelParams,
                 dt: float | None = None, times: Sequence[float] | None = None) -> float:
    """Self-financing gains G_T of holding money amount strategy[i] in futures over (t_i, t_{i+1}].

    G_{i+1} = G_i e^{r dt_i} + strategy[i] (F_{i+1} - F_i) / F_i, with G_0 = 0.
    ``strategy`` may have the same length as the path (last entry unused) or one less.
    """
    f = np.asarray(futures_path, dtype=float)
    pi = np.asarray(strategy, dtype=float)
    if len(pi) not in (len(f), len(f) - 1):
        raise DomainError("strategy and futures path must share the grid")
    if times is not None:
        steps = np.diff(np.asarray(times, dtype=float))
        if len(steps) != len(f) - 1:
            raise DomainError("times must align with the futures path")
    else:
        steps = np.full(len(f) - 1, 0.0 if dt is None else float(dt))
        if dt is None and params.r != 0:
            raise DomainError("dt or times required when r != 0")
    growth = np.exp(params.r * steps)
    rets = np.diff(f) / f[:-1]
    g = 0.0
    for i in range(len(f) - 1):
        g = g * growth[i] + pi[i] * rets[i]
    return float(g)


def accrue_gains_batch(futures_paths: np.ndarray, strategies: np.ndarray, r: float, dt: float) -> np.ndarray:
    """Row-wise ``accrue_gains`` on a uniform grid for arrays of shape (n, n_steps + 1)."""
    f = np.asarray(futures_paths, dtype=float)
    pi = np.asarray(strategies, dtype=float)
    rets = np.diff(f, axis=1) / f[:, :-1]
    growth = np.exp(r * dt)
    g = np.zeros(f.shape[0])
    for i in range(f.shape[1] - 1):
        g = g * growth + pi[:, i] * rets[:, i]
    return g
