"""Gamma, Mittag-Leffler and M-Wright functions.

Evaluation routes
-----------------
* ``gamma``: Lanczos approximation (g = 7, nine coefficients) with the
  reflection formula below 1/2.
* ``mittag_leffler_two``: compensated Taylor summation; on the negative real
  axis (where the series cancels catastrophically for beta < 1) a real
  Laplace-type integral is summed with the trapezoid rule in a logarithmic
  variable, which converges geometrically in the node spacing.
* ``m_wright``: Zolotarev's integral over (0, pi), evaluated with tanh-sinh
  nodes. The integrand is positive, so there is no cancellation at large y.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import lru_cache

import mpmath
import numpy as np

from .errors import ConstraintError, DomainError

__all__ = [
    "MLEvalConfig",
    "gamma",
    "loggamma",
    "rgamma",
    "mittag_leffler",
    "mittag_leffler_two",
    "DEFAULT_CONFIG",
    "ml_negative_real",
    "m_wright",
    "mwright_mixture_rule",
    "mwright_tail_point",
    "ml_real",
]

_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_EPS = np.finfo(float).eps
_FACTORIALS = np.array([float(math.factorial(k)) for k in range(171)])


@dataclass(frozen=True)
class MLEvalConfig:
    rel_tol: float = 1e-14
    max_terms: int = 20000
    series_radius: float = 15.0
    max_digits: int = 600

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ConstraintError("rel_tol must be positive")
        if self.max_terms < 64:
            raise ConstraintError("max_terms must be at least 64")
        if not self.series_radius > 0:
            raise ConstraintError("series_radius must be positive")


DEFAULT_CONFIG = MLEvalConfig()


# ---------------------------------------------------------------- gamma


def _sinpi(x):
    """sin(pi x), exact zero at integers and accurate near them."""
    x = np.asarray(x, dtype=float)
    n = np.round(x)
    r = x - n
    sign = np.where(np.mod(n, 2.0) == 0.0, 1.0, -1.0)
    return sign * np.sin(np.pi * r)


def _cospi(x):
    return _sinpi(np.asarray(x, dtype=float) + 0.5)


def _lanczos_sum(x):
    # x here is the shifted argument (x - 1 of the textbook form)
    acc = np.full_like(x, _LANCZOS[0])
    for k in range(1, len(_LANCZOS)):
        acc = acc + _LANCZOS[k] / (x + k)
    return acc


def _gamma_right(x):
    """Gamma on x >= 0.5."""
    xm = x - 1.0
    t = xm + _LANCZOS_G + 0.5
    # split the power so that t**(xm+0.5) does not overflow before exp(-t)
    half = 0.5 * (xm + 0.5)
    p = np.power(t, half)
    return _SQRT_2PI * p * (p * np.exp(-t)) * _lanczos_sum(xm)


def gamma(x):
    """Gamma function for real ``x`` (scalar or array).

    Relative error is below 1e-13 on |x| <= 50. Non-positive integers raise
    :class:`DomainError`.
    """
    arr = np.asarray(x, dtype=float)
    if np.any((arr <= 0) & (arr == np.round(arr))):
        raise DomainError("gamma has poles at non-positive integers")
    out = np.empty_like(arr)
    right = arr >= 0.5
    out[right] = _gamma_right(arr[right])
    # exact factorials at small positive integers (keeps E_beta(0) = 1 exact)
    ints = right & (arr == np.round(arr)) & (arr <= 171)
    if np.any(ints):
        out[ints] = _FACTORIALS[arr[ints].astype(int) - 1]
    left = ~right
    if np.any(left):
        xl = arr[left]
        out[left] = np.pi / (_sinpi(xl) * _gamma_right(1.0 - xl))
    return out[()] if out.ndim == 0 else out


def loggamma(x):
    """log Gamma(x) for x > 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("loggamma is implemented for positive arguments only")
    shift = np.zeros_like(arr)
    small = arr < 0.5
    # Gamma(x) = Gamma(x + 1) / x
    shift[small] = np.log(arr[small])
    xs = np.where(small, arr + 1.0, arr)
    xm = xs - 1.0
    t = xm + _LANCZOS_G + 0.5
    out = 0.5 * math.log(2.0 * math.pi) + (xm + 0.5) * np.log(t) - t + np.log(_lanczos_sum(xm)) - shift
    ints = (arr == np.round(arr)) & (arr <= 171)
    if np.any(ints):
        out = np.where(ints, np.log(_FACTORIALS[np.clip(arr, 1, 171).astype(int) - 1]), out)
    return out[()] if out.ndim == 0 else out


def rgamma(x):
    """1/Gamma(x), zero at the poles."""
    arr = np.asarray(x, dtype=float)
    pole = (arr <= 0) & (arr == np.round(arr))
    out = np.zeros_like(arr)
    ok = ~pole
    if np.any(ok):
        out[ok] = 1.0 / gamma(arr[ok])
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------- Mittag-Leffler


def _check_beta(beta, upper_open=False):
    if not (0.0 < beta < 1.0 if upper_open else 0.0 < beta <= 1.0):
        raise DomainError(f"beta out of range: {beta}")


def _series(beta, rho, z, cfg):
    """Taylor series with compensated summation.

    Returns (value, sum of |terms|) or raises DomainError when the term cap is hit.
    """
    az = abs(z)
    logaz = math.log(az)
    phase = z / az
    re_terms, im_terms = [], []
    abs_sum = 0.0
    prev_log = -math.inf
    n = 0
    w = 1.0 + 0j
    while True:
        if n >= cfg.max_terms:
            raise DomainError("Mittag-Leffler series did not converge within max_terms")
        a = beta * n + rho
        # z^n / Gamma(a) via logs to avoid intermediate overflow
        lg = loggamma(a)
        lmag = n * logaz - lg
        if n == 0:
            mag = float(rgamma(rho))
        else:
            mag = math.exp(lmag) if lmag < 709.0 else math.inf
        if mag == math.inf:
            raise DomainError("Mittag-Leffler value overflows double precision")
        term = mag * w
        re_terms.append(term.real)
        im_terms.append(term.imag)
        abs_sum += mag
        if lmag < prev_log and mag <= 1e-18 * abs_sum:
            break
        prev_log = lmag
        n += 1
        w *= phase
    return complex(math.fsum(re_terms), math.fsum(im_terms)), abs_sum


def _series_mp(beta, rho, z, digits, cfg):
    with mpmath.workdps(digits):
        zz = mpmath.mpc(z)
        b = mpmath.mpf(beta)
        r = mpmath.mpf(rho)
        total = mpmath.mpc(0)
        absum = mpmath.mpf(0)
        tol = mpmath.mpf(10) ** (-digits)
        prev = mpmath.inf
        for n in range(cfg.max_terms):
            term = zz**n * mpmath.rgamma(b * n + r)
            total += term
            mag = abs(term)
            absum += mag
            if n > 0 and mag < prev and mag < tol * absum:
                return complex(total)
            prev = mag
    raise DomainError("extended-precision Mittag-Leffler series did not converge")


def _ml_kernel_params(beta, rho):
    sb = float(_sinpi(beta))
    cb = float(_cospi(beta))
    sr = float(_sinpi(rho))
    srb = float(_sinpi(rho - beta))
    kappa = 1.0 + (1.0 - rho) / beta
    return sb, cb, sr, srb, kappa


@lru_cache(maxsize=256)
def _negreal_step(beta):
    # half-width of the strip of analyticity of the log-variable integrand
    d = 0.9 * min(math.pi * (1.0 - beta), 0.5 * math.pi * beta)
    return min(0.25, 2.0 * math.pi * d / 40.0)


def ml_negative_real(beta, rho, x):
    """E_{beta,rho}(-x) for x > 0 and 0 < beta < 1, 0 < rho < 1 + beta.

    Uses the real representation

        E_{beta,rho}(-x) = 1/(beta pi) * int exp(-e^{u/beta}) e^{u(1-rho)/beta}
                           s (s sin(pi rho) + sin(pi (rho - beta)))
                           / (s^2 + 2 s cos(pi beta) + 1) du,   s = e^u / x,

    summed with the trapezoid rule over a uniform u-grid. ``x`` may be an array.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0):
        raise DomainError("ml_negative_real needs x > 0")
    if not (0 < beta < 1) or not (0 < rho < 1 + beta):
        raise DomainError("ml_negative_real needs 0<beta<1 and 0<rho<1+beta")
    sb, cb, sr, srb, kappa = _ml_kernel_params(beta, rho)
    if 1.0 - beta < _POLE_ROUTE_GAP:
        out = np.array([_ml_negreal_pole_corrected(beta, rho, float(v)) for v in xs])
        return out if np.ndim(x) else float(out[0])
    h = _negreal_step(beta)
    u_hi = beta * math.log(800.0)
    u_lo = -40.0 / kappa + min(0.0, math.log(float(xs.min())))
    u = np.arange(u_lo, u_hi + h, h)
    damp = np.exp(-np.exp(u / beta) + u * (1.0 - rho) / beta)
    out = np.empty_like(xs)
    chunk = max(1, 2_000_000 // u.size)
    for i in range(0, xs.size, chunk):
        xc = xs[i : i + chunk, None]
        s = np.exp(u)[None, :] / xc
        g = damp[None, :] * s * (s * sr + srb) / (s * s + 2.0 * s * cb + 1.0)
        out[i : i + chunk] = h * g.sum(axis=1) / (beta * math.pi)
    return out if np.ndim(x) else float(out[0])


# below this gap 1 - beta the integrand poles pinch the real axis and are removed explicitly
_POLE_ROUTE_GAP = 0.05


def _ml_negreal_pole_corrected(beta, rho, x):
    """Trapezoid sum of the ``ml_negative_real`` integrand with its nearest poles removed.

    The poles u = log x +- i pi (1 - beta) approach the real axis as beta -> 1. The
    grid is shifted so log x lies midway between nodes, and the exact trapezoid error of
    the simple pole pair is subtracted; the step then only has to resolve the strip
    |Im u| < pi beta / 2 where the damping factor stays analytic.
    """
    sb, cb, sr, srb, kappa = _ml_kernel_params(beta, rho)
    h = min(0.25, 2.0 * math.pi * (0.45 * math.pi * beta) / 40.0)
    lx = math.log(x)
    u_hi = beta * math.log(800.0)
    u_lo = -40.0 / kappa + min(0.0, lx)
    k = np.arange(math.floor((u_lo - lx) / h - 0.5), math.ceil((u_hi - lx) / h - 0.5) + 1)
    u = lx + (k + 0.5) * h
    s = np.exp((k + 0.5) * h)
    damp = np.exp(-np.exp(u / beta) + u * (1.0 - rho) / beta)
    total = h * float(np.sum(damp * s * (s * sr + srb) / (s * s + 2.0 * s * cb + 1.0)))
    delta = math.pi * (1.0 - beta)
    q = 2.0 * math.pi * delta / h
    if q < 700.0:
        u_star = complex(lx, delta)
        s_star = complex(-cb, sb)
        damp_star = cmath.exp(-cmath.exp(u_star / beta) + u_star * (1.0 - rho) / beta)
        # residue in u of the integrand at u_star (without the 1/(beta pi) prefactor)
        res = damp_star * (s_star * sr + srb) / (2.0j * sb)
        err_up = -2.0j * math.pi * res / (1.0 + math.exp(q))
        total -= 2.0 * err_up.real
    return total / (beta * math.pi)


def _ml_negreal_any_rho(beta, rho, x):
    if rho < 1.0 + beta:
        return ml_negative_real(beta, rho, x)
    # E_{b,r}(z) = (E_{b,r-b}(z) - 1/Gamma(r-b)) / z
    lower = _ml_negreal_any_rho(beta, rho - beta, x)
    return (lower - float(rgamma(rho - beta))) / (-np.asarray(x, dtype=float))


def mittag_leffler_two(beta, rho, z, config: MLEvalConfig = DEFAULT_CONFIG):
    """Two-parameter Mittag-Leffler function E_{beta,rho}(z) for scalar z.

    Returns a float for real z and a complex otherwise.
    """
    _check_beta(beta)
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho}")
    is_real = not isinstance(z, complex) or z.imag == 0.0
    zc = complex(z)
    if zc == 0:
        v = float(rgamma(rho))
        return v if is_real else complex(v)
    if beta == 1.0 and rho == 1.0:
        return math.exp(zc.real) if is_real else cmath.exp(zc)
    if is_real and zc.real < 0 and beta < 1.0 and -zc.real > 1.0:
        return float(_ml_negreal_any_rho(beta, rho, -zc.real))
    if not is_real and abs(zc) > config.series_radius:
        raise DomainError(
            f"|z| = {abs(zc):.4g} exceeds the supported radius {config.series_radius} for complex arguments"
        )
    if is_real and zc.real < 0 and abs(zc) > config.series_radius:
        # beta == 1 with rho != 1: still a convergent series, guarded by the cancellation check
        pass
    value, abs_sum = _series(beta, rho, zc, config)
    scale = abs(value)
    if abs_sum * _EPS * 4 > config.rel_tol * scale:
        # a cancelled double sum underestimates the loss; re-check each extended result
        digits = 40
        while True:
            ratio = abs_sum / max(scale, 1e-300)
            need = int(math.log10(ratio)) + 25
            if need <= digits - 5:
                break
            digits = need + 10
            if digits > config.max_digits:
                raise DomainError("Mittag-Leffler series cancellation exceeds the supported precision")
            value = _series_mp(beta, rho, zc, digits, config)
            scale = abs(value)
    return value.real if is_real else value


def mittag_leffler(beta, z, config: MLEvalConfig = DEFAULT_CONFIG):
    """One-parameter Mittag-Leffler function E_beta(z) = sum z^n / Gamma(beta n + 1)."""
    return mittag_leffler_two(beta, 1.0, z, config)


def ml_real(beta, rho, x):
    """Vectorised E_{beta,rho} over a real array ``x``."""
    xs = np.asarray(x, dtype=float)
    flat = xs.ravel()
    out = np.empty_like(flat)
    neg = flat < -1.0
    if beta < 1.0 and np.any(neg):
        out[neg] = _ml_negreal_any_rho(beta, rho, -flat[neg])
        rest = np.flatnonzero(~neg)
    else:
        rest = np.arange(flat.size)
    for i in rest:
        out[i] = mittag_leffler_two(beta, rho, float(flat[i]))
    return out.reshape(xs.shape)


# ---------------------------------------------------------------- M-Wright


@lru_cache(maxsize=8)
def _tanh_sinh(level=6, t_max=4.0):
    h = 2.0**-level
    t = np.arange(-t_max, t_max + h / 2, h)
    a = 0.5 * np.pi * np.sinh(t)
    # 1 + tanh(a) and 1 - tanh(a) without cancellation
    one_plus = 2.0 / (1.0 + np.exp(-2.0 * a))
    one_minus = 2.0 / (1.0 + np.exp(2.0 * a))
    w = h * 0.5 * np.pi * np.cosh(t) / np.cosh(a) ** 2
    return one_plus, one_minus, w


def _zolotarev_log_a(beta, u, v):
    """log A(u) with v = pi - u supplied separately; sin(u) is taken from the smaller one."""
    q = 1.0 / (1.0 - beta)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (
            np.log(np.sin((1.0 - beta) * u))
            + beta * q * np.log(np.sin(beta * u))
            - q * np.log(np.sin(np.minimum(u, v)))
        )


def _zolotarev_peak_v(beta, log_z):
    """v* = pi - u* with A(u*) z = 1, by bisection in log v (A increases in u)."""
    lo = np.full_like(log_z, -700.0)
    hi = np.full_like(log_z, math.log(math.pi))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        v = np.exp(mid)
        f = _zolotarev_log_a(beta, np.pi - v, v) + log_z
        # f > 0: A z > 1, i.e. u above the peak -> move v up
        big = f > 0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    v = np.exp(0.5 * (lo + hi))
    # A(0+) z >= 1: the integrand is largest at u = 0, no interior peak
    log_a0 = math.log(1.0 - beta) + beta / (1.0 - beta) * math.log(beta)
    return np.where(log_a0 + log_z >= 0, np.pi, v)


def _zolotarev_piece(beta, log_z, u, v, jac, w):
    log_a = _zolotarev_log_a(beta, u, v)
    log_a = np.where(np.isnan(log_a), -np.inf, log_a)  # u underflowed to 0; zero weight
    # (A z) exp(-A z) <= 1/e, so nothing overflows however small z is
    lw = np.minimum(log_a + log_z, 700.0)
    return (np.exp(lw - np.exp(lw)) * jac * w).sum(axis=-1)


def m_wright(beta, y):
    """M-Wright density M_beta(y) on y >= 0 for 0 < beta < 1.

    Zolotarev's representation: with z = y^{1/(1-beta)},

        M_beta(y) = y^{beta/(1-beta)} / ((1-beta) pi) * int_0^pi A(u) exp(-A(u) z) du
                  = 1 / ((1-beta) pi y) * int_0^pi A(u) z exp(-A(u) z) du,
        A(u) = sin((1-beta)u) sin(beta u)^{beta/(1-beta)} / sin(u)^{1/(1-beta)}.

    The integrand peaks where A(u) z = 1; the integral is split there and each
    half done by tanh-sinh, so nodes cluster at the peak however sharp it is.
    """
    _check_beta(beta, upper_open=True)
    ys = np.asarray(y, dtype=float)
    if np.any(ys < 0):
        raise DomainError("m_wright is defined for y >= 0")
    flat = ys.ravel()
    out = np.empty_like(flat)
    zero = flat == 0
    out[zero] = float(rgamma(1.0 - beta))
    pos = ~zero
    if np.any(pos):
        one_plus, one_minus, w = _tanh_sinh()
        xp, xm = 0.5 * one_plus, 0.5 * one_minus  # x and 1 - x on (0, 1)
        yp = flat[pos]
        q = 1.0 / (1.0 - beta)
        log_z = q * np.log(yp)
        vals = np.empty_like(yp)
        chunk = max(1, 200_000 // w.size)
        for i in range(0, yp.size, chunk):
            lz = log_z[i : i + chunk, None]
            vs = _zolotarev_peak_v(beta, lz)
            us = np.where(vs == np.pi, 0.0, np.pi - vs)
            # left piece u in (0, u*): u = u* x, v = v* + u* (1 - x)
            left = _zolotarev_piece(beta, lz, us * xp, vs + us * xm, us, 0.5 * w)
            # right piece v in (0, v*): v = v* x, u = u* + v* (1 - x)
            right = _zolotarev_piece(beta, lz, us + vs * xm, vs * xp, vs, 0.5 * w)
            vals[i : i + chunk] = left + right
        out[pos] = vals * q / (np.pi * yp)
    out = out.reshape(ys.shape)
    return out[()] if out.ndim == 0 else out


def mwright_tail_point(beta, log_tol=-40.0):
    """A y beyond which M_beta(y) is below exp(log_tol) (from the leading asymptotics)."""
    q = 1.0 / (1.0 - beta)
    b = (1.0 - beta) * beta ** (beta * q)
    return float((-log_tol / b) ** (1.0 - beta))


@lru_cache(maxsize=64)
def mwright_mixture_rule(beta, h=None, y_min=1e-12):
    """Fixed nodes and weights for integrals int_0^inf f(y) M_beta(y) dy.

    Trapezoid rule in log y on [y_min, y_max]; y_max comes from the tail asymptotics.
    The default step shrinks as beta -> 1, where M_beta narrows towards a point mass at 1.
    """
    _check_beta(beta, upper_open=True)
    if h is None:
        h = 0.02 * min(1.0, 10.0 * (1.0 - beta))
    y_max = max(mwright_tail_point(beta), 5.0)
    lu = np.arange(math.log(y_min), math.log(y_max) + h, h)
    y = np.exp(lu)
    w = h * y * m_wright(beta, y)
    w[0] *= 0.5
    w[-1] *= 0.5
    return y, w
