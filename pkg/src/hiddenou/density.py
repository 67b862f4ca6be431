"""Joint law of (Y_t, P_t, Q_t) under the risk-neutral measure.

Everything reduces to the Brownian triple (W_t, int W, int W^2). The pair
(W_t, int W) is Gaussian with covariance ``a1(t)``; the conditional Laplace
transform of int W^2 given that pair is explicit (``gamma_cond``) and its
inverse is computed numerically with the fixed-Talbot contour (``psi2``).

Internally every alpha-dependent quantity is written as a function of
w = (alpha t)^2, in which all entries of ``a2`` and cosh(alpha t) are entire or
meromorphic and single valued; that is what makes complex Laplace arguments
beta = alpha^2 / 2 safe to evaluate.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import DomainError, ModelParams

# |w| below which the power series of the a2 entries replace the closed forms
_A2_SERIES_W = 1e-2
# |w| below which log g(w) uses its power series
_G_SERIES_W = 4.0
_CONTOUR_REFINE = 4
# multiple of machine epsilon for the cancellation floor of the contour sum
_ROUNDOFF = 2 * np.finfo(float).eps
# roundoff bounds are loose estimates; allow this many of them before calling a gap real
_NOISE_SLACK = 4.0

# Taylor coefficients in w = u^2 of tanh(u)/u, (1 - sech u)/u^2, (u - tanh u)/u^3
_TANH_U = (1.0, -1 / 3, 2 / 15, -17 / 315, 62 / 2835, -1382 / 155925)
_ONE_MINUS_SECH = (1 / 2, -5 / 24, 61 / 720, -277 / 8064, 50521 / 3628800, -540553 / 95800320)
_U_MINUS_TANH = (1 / 3, -2 / 15, 17 / 315, -62 / 2835, 1382 / 155925, -21844 / 6081075)
# g(w) = 12 (u sinh u - 2 cosh u + 2) / u^4 = sum_k c_k w^k
_G_COEF = tuple(12.0 * (2 * k + 2) / math.factorial(2 * k + 4) for k in range(40))


class InversionAccuracyError(ArithmeticError):
    """Numerical Laplace inversion failed its accuracy checks."""


@dataclass(frozen=True)
class InversionConfig:
    n_nodes: int = 48
    # |alpha t|^2 below which the a2 entries use their power series
    series_threshold: float = _A2_SERIES_W
    # absolute tolerance: on negative values and on the node-refinement difference
    negative_tolerance: float = 1e-6
    # extra nodes of the comparison inversion (0 turns the check off) and its relative tolerance
    check_nodes: int = 8
    check_rtol: float = 1e-4

    def __post_init__(self):
        if self.n_nodes < 8:
            raise DomainError("n_nodes must be at least 8")
        if self.series_threshold <= 0:
            raise DomainError("series_threshold must be positive")
        if self.negative_tolerance <= 0 or self.check_rtol <= 0:
            raise DomainError("tolerances must be positive")
        if self.check_nodes < 0:
            raise DomainError("check_nodes must be nonnegative")


def _horner(coef, w):
    acc = np.zeros_like(w) + coef[-1]
    for c in coef[-2::-1]:
        acc = acc * w + c
    return acc


def _a2_entries(t, w, series_threshold=_A2_SERIES_W):
    """Entries (a11, a12, a22) of A2 as functions of w = (alpha t)^2; w may be complex."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w)
    small = np.abs(w) < series_threshold
    ws = np.where(small, w, 0.0)
    wd = np.where(small, 1.0, w)
    u = np.sqrt(wd + 0j) if np.iscomplexobj(w) else np.sqrt(wd)
    # stable for Re u >= 0
    e2 = np.exp(-2.0 * u)
    tanh = (1.0 - e2) / (1.0 + e2)
    sech = 2.0 * np.exp(-u) / (1.0 + e2)
    r11 = np.where(small, _horner(_TANH_U, ws), tanh / u)
    r12 = np.where(small, _horner(_ONE_MINUS_SECH, ws), (1.0 - sech) / wd)
    r22 = np.where(small, _horner(_U_MINUS_TANH, ws), (u - tanh) / (u * wd))
    return t * r11, t**2 * r12, t**3 * r22


def _log_g(w):
    """log of det A2(t, alpha) cosh(alpha t) / det A1(t) as a function of w = (alpha t)^2.

    Principal branch of a hybrid formula: exact on the real axis, but complex
    values may sit on a sheet shifted by 2 pi i and must be unwrapped by the caller.
    """
    w = np.asarray(w)
    small = np.abs(w) < _G_SERIES_W
    out = np.empty(w.shape, dtype=w.dtype if np.iscomplexobj(w) else float)
    if small.any():
        out[small] = np.log(_horner(_G_COEF, w[small]))
    if (~small).any():
        wl = w[~small]
        u = np.sqrt(wl + 0j) if np.iscomplexobj(w) else np.sqrt(wl)
        b = (u - 2.0) - (u + 2.0) * np.exp(-2.0 * u) + 4.0 * np.exp(-u)
        out[~small] = math.log(6.0) + u + np.log(b) - 4.0 * np.log(u)
    return out


def a1(t: float) -> np.ndarray:
    """Covariance of (W_t, int_0^t W ds)."""
    if t <= 0:
        raise DomainError("t must be positive")
    return np.array([[t, t * t / 2.0], [t * t / 2.0, t**3 / 3.0]])


def a2(t: float, alpha: float) -> np.ndarray:
    if t <= 0:
        raise DomainError("t must be positive")
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    e11, e12, e22 = (float(v) for v in _a2_entries(t, (alpha * t) ** 2))
    return np.array([[e11, e12], [e12, e22]])


def _quad_inv(e11, e12, e22, x, y):
    det = e11 * e22 - e12 * e12
    return (e22 * x * x - 2.0 * e12 * x * y + e11 * y * y) / det


def psi1(t: float, x, y):
    """Density of (W_t, int_0^t W ds) at (x, y)."""
    if t <= 0:
        raise DomainError("t must be positive")
    det = t**4 / 12.0
    qf = _quad_inv(t, t * t / 2.0, t**3 / 3.0, np.asarray(x, float), np.asarray(y, float))
    out = np.exp(-0.5 * qf) / (2.0 * np.pi * np.sqrt(det))
    return float(out) if np.ndim(out) == 0 else out


def _log_gamma_w(t, w, x, y, log_g, series_threshold=_A2_SERIES_W):
    """log of the conditional Laplace transform at w = (alpha t)^2, given log g(w)."""
    e11, e12, e22 = _a2_entries(t, w, series_threshold)
    q2 = _quad_inv(e11, e12, e22, x, y)
    q1 = _quad_inv(t, t * t / 2.0, t**3 / 3.0, x, y)
    return -0.5 * log_g - 0.5 * (q2 - q1)


def gamma_cond(t: float, alpha, x, y):
    """E[exp(-(alpha^2/2) int_0^t W^2 ds) | W_t = x, int_0^t W ds = y]."""
    if t <= 0:
        raise DomainError("t must be positive")
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise DomainError("alpha must be nonnegative")
    w = (alpha * t) ** 2
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    out = np.exp(_log_gamma_w(t, w, x, y, _log_g(w)))
    out = np.where(alpha == 0, 1.0, out)
    return float(out) if out.ndim == 0 else out


def joint_mgf(t: float, alpha: float, beta1: float, beta2: float) -> float:
    """E exp(beta1 W_t + beta2 int W - (alpha^2/2) int W^2)."""
    if t <= 0:
        raise DomainError("t must be positive")
    e11, e12, e22 = (float(v) for v in _a2_entries(t, (alpha * t) ** 2))
    quad = e11 * beta1 * beta1 + 2.0 * e12 * beta1 * beta2 + e22 * beta2 * beta2
    u = abs(alpha) * t
    # log cosh without overflow
    log_cosh = u + math.log1p(math.exp(-2.0 * u)) - math.log(2.0)
    return math.exp(0.5 * quad - 0.5 * log_cosh)


def mansuy_yor(t: float, alpha: float, x):
    """E[exp(-(alpha^2/2) int_0^t W^2 ds) | W_t = x], single-endpoint conditioning."""
    u = alpha * t
    if u == 0:
        return np.ones_like(np.asarray(x, float))
    return np.sqrt(u / np.sinh(u)) * np.exp(-np.asarray(x) ** 2 / (2 * t) * (u / np.tanh(u) - 1.0))


@lru_cache(maxsize=8)
def _talbot_unit(n: int):
    """Fixed-Talbot contour for unit time on a refined angle grid.

    Returns (theta, shape, node_mask) where beta(theta) = shape / z for the
    inversion point z, and ``node_mask`` picks the n actual quadrature nodes.
    """
    m = _CONTOUR_REFINE * (n - 1) + 1
    theta = np.linspace(0.0, np.pi * (n - 1) / n, m)
    shape = np.empty(m, dtype=complex)
    shape[0] = 0.4 * n
    th = theta[1:]
    cot = 1.0 / np.tan(th)
    shape[1:] = 0.4 * n * th * (cot + 1j)
    mask = np.zeros(m, dtype=bool)
    mask[::_CONTOUR_REFINE] = True
    return theta, shape, mask


def _talbot_weights(n: int):
    theta, _, mask = _talbot_unit(n)
    th = theta[mask][1:]
    cot = 1.0 / np.tan(th)
    sig = th + (th * cot - 1.0) * cot
    return 1.0 + 1j * sig


def psi2(t: float, z, x, y, inv: InversionConfig | None = None):
    """Conditional density of int_0^t W^2 ds at z given W_t = x and int_0^t W ds = y.

    Fixed-Talbot inversion of beta -> gamma_cond(t, sqrt(2 beta), x, y). ``z``,
    ``x`` and ``y`` broadcast together.
    """
    inv = inv or InversionConfig()
    if t <= 0:
        raise DomainError("t must be positive")
    z, x, y = np.broadcast_arrays(np.asarray(z, float), np.asarray(x, float), np.asarray(y, float))
    shape = z.shape
    z, x, y = z.ravel(), x.ravel(), y.ravel()
    # int W^2 >= (int W)^2 / t, so the conditional law lives on (y^2/t, inf)
    shift = y * y / t
    idx = np.flatnonzero(z > shift)
    out, noise = _invert_points(t, z, x, y, shift, idx, inv.n_nodes, inv)
    if not np.all(np.isfinite(out)):
        raise InversionAccuracyError(
            f"inverse Laplace transform overflowed; point too far in the tail for n_nodes={inv.n_nodes}")
    worst = out.min() if out.size else 0.0
    if worst < -inv.negative_tolerance:
        raise InversionAccuracyError(
            f"inverse Laplace transform returned {worst:.3g} < 0; increase n_nodes (now {inv.n_nodes})")
    if inv.check_nodes:
        ref, ref_noise = _invert_points(t, z, x, y, shift, idx, inv.n_nodes + inv.check_nodes, inv)
        with np.errstate(invalid="ignore"):
            gap = np.abs(out - ref) - inv.check_rtol * np.maximum(np.abs(out), np.abs(ref))
            # roundoff of either sum is not a convergence failure
            gap -= _NOISE_SLACK * (noise + ref_noise)
        bad = ~(gap <= inv.negative_tolerance)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InversionAccuracyError(
                f"inverse Laplace transform not converged at {int(bad.sum())} point(s), e.g. "
                f"z={z[i]:.6g}, x={x[i]:.6g}, y={y[i]:.6g}: {out[i]:.3g} vs {ref[i]:.3g} "
                f"with {inv.check_nodes} more nodes")
    out = np.maximum(out, 0.0).reshape(shape)
    return float(out) if out.ndim == 0 else out


def _invert_points(t, z, x, y, shift, idx, n, inv):
    out = np.zeros(z.shape)
    noise = np.zeros(z.shape)
    chunk = 4096
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        out[sel], noise[sel] = _talbot_invert(t, z[sel] - shift[sel], x[sel], y[sel], inv, n)
    # values inside the cancellation floor of the contour sum carry no information
    out[np.abs(out) <= noise] = 0.0
    return out, noise


def _talbot_invert(t, s, x, y, inv: InversionConfig, n: int | None = None):
    """Density of int W^2 - y^2/t at s > 0: inverts beta -> e^{beta y^2/t} Gamma~(beta).

    Also returns a roundoff bound. Each term is exp(E) with E assembled from
    pieces of size about |beta| (s + y^2/t) plus the Gaussian quadratic form,
    so its relative error is eps times that size; the bound sums these over the
    contour.
    """
    n = inv.n_nodes if n is None else n
    theta, unit, mask = _talbot_unit(n)
    beta = unit[None, :] / s[:, None]
    w = 2.0 * beta * t * t
    log_g = _log_g(w)
    # continuity along the contour from the real axis fixes the square-root branch
    log_g = log_g.real + 1j * np.unwrap(log_g.imag, axis=1)
    beta_n = beta[:, mask]
    log_f = _log_gamma_w(t, w[:, mask], x[:, None], y[:, None], log_g[:, mask], inv.series_threshold)
    log_f = log_f + beta_n * (y * y / t)[:, None]
    r = unit[0].real / s
    # overflow means the contour is too short for this point; psi2 reports it
    with np.errstate(over="ignore", invalid="ignore"):
        terms = np.exp(beta_n * s[:, None] + log_f)
        weighted = terms[:, 1:] * _talbot_weights(n)[None, :]
        head = 0.5 * terms[:, 0].real
        tail = weighted.real.sum(axis=1)
        size = 1.0 + np.abs(beta_n) * (s + y * y / t)[:, None] + np.abs(log_f) \
            + _quad_inv(t, t * t / 2.0, t**3 / 3.0, x, y)[:, None]
        scale = 0.5 * (np.abs(terms) * size)[:, 0] + (np.abs(weighted) * size[:, 1:]).sum(axis=1)
    return r / n * (head + tail), _ROUNDOFF * r / n * scale


def transform_args(t: float, y, p, q, params: ModelParams, form: str = "derived"):
    """Map (y, p, q) to the Brownian coordinates (W_t, int W, int W^2).

    ``form="derived"`` uses int (y0 + sigma W)^2 = y0^2 t + 2 y0 sigma int W + sigma^2 int W^2,
    i.e. (q - 2 y0 p + y0^2 t) / sigma^2 for the last coordinate. ``form="paper"`` keeps the
    printed variant (q - 2 sigma y0 p - y0^2 t) / sigma^2 for comparison.
    """
    s = params.sigma
    y0 = params.y0
    y, p, q = (np.asarray(v, dtype=float) for v in (y, p, q))
    a = (y - y0) / s
    b = (p - y0 * t) / s
    if form == "derived":
        c = (q - 2.0 * y0 * p + y0 * y0 * t) / (s * s)
    elif form == "paper":
        c = (q - 2.0 * s * y0 * p - y0 * y0 * t) / (s * s)
    else:
        raise DomainError(f"unknown transform form {form!r}")
    return a, b, c


def phi(t: float, y, p, q, params: ModelParams, inv: InversionConfig | None = None,
        form: str = "derived"):
    """Risk-neutral joint density of (Y_t, P_t, Q_t) at (y, p, q)."""
    if t <= 0:
        raise DomainError("t must be positive")
    s = params.sigma
    a, b, c = transform_args(t, y, p, q, params, form)
    a, b, c = np.broadcast_arrays(a, b, c)
    dens = np.zeros(a.shape)
    ok = c > 0
    if ok.any():
        pre = np.exp(-0.5 * s * a[ok] - s * s * t / 8.0) / s**4
        dens[ok] = pre * psi1(t, a[ok], b[ok]) * psi2(t, c[ok], a[ok], b[ok], inv)
    return float(dens) if dens.ndim == 0 else dens


def density_csv(t: float, ys, ps, qs, params: ModelParams, inv: InversionConfig | None = None,
                form: str = "derived") -> str:
    gy, gp, gq = np.meshgrid(np.asarray(ys, float), np.asarray(ps, float), np.asarray(qs, float), indexing="ij")
    vals = phi(t, gy.ravel(), gp.ravel(), gq.ravel(), params, inv, form)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["y", "p", "q", "phi"])
    for row in zip(gy.ravel(), gp.ravel(), gq.ravel(), np.atleast_1d(vals)):
        w.writerow([repr(float(v)) for v in row])
    return buf.getvalue()
