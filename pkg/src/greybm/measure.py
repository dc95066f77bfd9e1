"""Closed-form quantities of the product grey-noise measure.

Each coordinate omega_k is an independent grey noise with characteristic
functional E_beta(-<phi,phi>/2).  A linear functional eta = (eta_1..eta_d)
defines the random vector G = (<omega_1,eta_1>, ..., <omega_d,eta_d>); all the
formulas below are evaluated from the L^2 pairings <eta_k, eta_k>, <phi_k, eta_k>.
"""

from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from . import specfun
from .errors import ConstraintError, DomainError, InadmissibleError, QuadratureError
from .fracops import (
    Alpha,
    GridFunction,
    TimeGrid,
    as_alpha,
    inner_m_stepfun,
    kernel_R,
    m_plus_cell_moments,
    m_plus_eval,
)

__all__ = [
    "ModelParams",
    "LinearFunctional",
    "even_moment",
    "covariance_pair",
    "char_fn",
    "laplace_transform",
    "s_transform_linear",
    "noise_s_transform",
    "ml_ratio",
    "s_ratios",
    "donsker_expectation",
    "donsker_t_transform",
    "donsker_t_transform_squad",
    "donsker_components",
    "even_fourier",
    "even_fourier_quad",
    "ADMISSIBLE_FLOOR",
]

# |E_beta(<phi_k,phi_k>/2)| below this puts phi outside the admissible neighbourhood
ADMISSIBLE_FLOOR = 1e-6


@dataclass(frozen=True)
class ModelParams:
    beta: float
    alpha: float
    d: int = 1

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConstraintError(f"beta out of range (0, 1]: {self.beta}")
        if not 0.0 < self.alpha < 2.0:
            raise ConstraintError(f"alpha out of range (0, 2): {self.alpha}")
        if int(self.d) != self.d or self.d < 1:
            raise ConstraintError(f"d must be a positive integer, got {self.d}")

    @property
    def localtime_ok(self) -> bool:
        return self.alpha * self.d < 2.0

    @property
    def gaussian(self) -> bool:
        return self.beta == 1.0

    @property
    def alpha_op(self) -> Alpha:
        return Alpha(self.alpha)

    def as_dict(self):
        return {"beta": self.beta, "alpha": self.alpha, "d": self.d}


@dataclass(frozen=True)
class _Term:
    """coef * M_-(1_[0,t) u); u is None for u == 1."""

    coef: float
    t: float
    u: np.ndarray | None = None
    grid: TimeGrid | None = None


class LinearFunctional:
    """eta = (eta_1, ..., eta_d), each a finite sum of terms coef * M_-(1_[0,t) u).

    Squared norms are computed once at construction.
    """

    def __init__(self, alpha, components):
        self.alpha = as_alpha(alpha)
        comps = tuple(tuple(c) for c in components)
        if not comps:
            raise ConstraintError("a linear functional needs at least one component")
        self.components = comps
        self.norms_sq = self.inner(self)
        self.norms_sq.flags.writeable = False
        if np.any(self.norms_sq < -1e-12 * max(1.0, float(np.max(np.abs(self.norms_sq))))):
            raise ConstraintError("negative squared norm: inconsistent step data")

    # constructors
    @classmethod
    def vggbm(cls, alpha, t: float, d: int = 1):
        """The functional of the process at time t: eta_k = M_- 1_[0,t) in every slot."""
        if t < 0:
            raise DomainError("time must be non-negative")
        return cls(alpha, [[_Term(1.0, float(t))] for _ in range(d)])

    @classmethod
    def indicator(cls, alpha, t: float, d: int = 1, slot: int = 0, coef: float = 1.0):
        comps = [[] for _ in range(d)]
        comps[slot].append(_Term(float(coef), float(t)))
        return cls(alpha, comps)

    @classmethod
    def scaled(cls, alpha, coefs, t: float):
        """eta_k = coefs[k] * M_- 1_[0,t)."""
        return cls(alpha, [[_Term(float(c), float(t))] for c in coefs])

    @classmethod
    def step(cls, alpha, grid: TimeGrid, t: float, U):
        """eta_k = M_-(1_[0,t) u_k) with u_k sampled on ``grid`` (rows of U)."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != grid.N + 1:
            raise ConstraintError("step data must be sampled on the grid nodes")
        return cls(alpha, [[_Term(1.0, float(t), np.array(row), grid)] for row in U])

    @property
    def d(self) -> int:
        return len(self.components)

    # algebra
    def _combine(self, other, sign):
        if not isinstance(other, LinearFunctional) or other.d != self.d or other.alpha != self.alpha:
            raise ConstraintError("can only combine functionals with matching d and alpha")
        comps = []
        for a, b in zip(self.components, other.components):
            comps.append(list(a) + [_Term(sign * t.coef, t.t, t.u, t.grid) for t in b])
        return LinearFunctional(self.alpha, comps)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, c):
        c = float(c)
        return LinearFunctional(self.alpha, [[_Term(c * t.coef, t.t, t.u, t.grid) for t in comp] for comp in self.components])

    __rmul__ = __mul__

    # pairings
    @staticmethod
    def _term_inner(alpha, a: _Term, b: _Term) -> float:
        if a.u is None and b.u is None:
            return float(kernel_R(alpha, a.t, b.t))
        grid = a.grid if a.grid is not None else b.grid
        if a.grid is not None and b.grid is not None and a.grid != b.grid:
            raise ConstraintError("step terms on different grids")
        ua = np.ones(grid.N + 1) if a.u is None else a.u
        ub = np.ones(grid.N + 1) if b.u is None else b.u
        return float(inner_m_stepfun(alpha, ua, ub, a.t, b.t, grid))

    def inner(self, other: "LinearFunctional") -> np.ndarray:
        """Componentwise <eta_k, zeta_k>."""
        if other.d != self.d:
            raise ConstraintError("dimension mismatch")
        out = np.zeros(self.d)
        for k, (ca, cb) in enumerate(zip(self.components, other.components)):
            out[k] = sum(ta.coef * tb.coef * self._term_inner(self.alpha, ta, tb) for ta in ca for tb in cb)
        return out

    def pair(self, phi: GridFunction) -> np.ndarray:
        """Componentwise <phi_k, eta_k>, via <phi, M_-(1_[0,t) u)> = int_0^t (M_+ phi) u."""
        if phi.d != self.d:
            raise ConstraintError(f"test function has d={phi.d}, functional has d={self.d}")
        out = np.zeros(self.d, dtype=np.result_type(phi.values.dtype, float))
        moments = None
        for k, comp in enumerate(self.components):
            for term in comp:
                if term.coef == 0.0 or term.t == 0.0:
                    continue
                if term.u is None:
                    val = m_plus_eval(self.alpha, GridFunction(phi.grid, phi.values[k]), [term.t], order=1)[0, 0]
                else:
                    if moments is None:
                        moments = m_plus_cell_moments(self.alpha, phi)
                    I0, I1 = moments[0][k], moments[1][k]
                    n = phi.grid.index_of(term.t)
                    u = term.u if term.grid == phi.grid else np.interp(phi.grid.nodes, term.grid.nodes, term.u)
                    val = np.sum(u[:n] * (I0[:n] - I1[:n]) + u[1 : n + 1] * I1[:n])
                out[k] += term.coef * val
        return out

    def __repr__(self):
        return f"LinearFunctional(d={self.d}, alpha={self.alpha.alpha}, norms_sq={self.norms_sq})"


def _check(params: ModelParams, eta: LinearFunctional):
    if eta.d != params.d:
        raise ConstraintError(f"functional has d={eta.d}, params have d={params.d}")
    if not math.isclose(eta.alpha.alpha, params.alpha, rel_tol=0, abs_tol=1e-15):
        raise ConstraintError("functional and params disagree on alpha")


# ---------------------------------------------------------------- moments


def even_moment(params: ModelParams, phi: LinearFunctional, n: int) -> float:
    """E[<omega, phi>^{2n}] = (2n)!/2^n * sum_{|r|=n} prod_k <phi_k,phi_k>^{r_k} / Gamma(beta r_k + 1).

    Odd moments vanish.  The multinomial sum is a truncated product of d power
    series, done by repeated convolution.
    """
    _check(params, phi)
    if int(n) != n or n < 0:
        raise DomainError("n must be a non-negative integer")
    n = int(n)
    if n > 20:
        raise DomainError("even_moment supports n <= 20 (factorial growth)")
    r = np.arange(n + 1)
    gam = specfun.gamma(params.beta * r + 1.0)
    acc = np.zeros(n + 1)
    acc[0] = 1.0
    for x in phi.norms_sq:
        series = x**r / gam
        acc = np.convolve(acc, series)[: n + 1]
    return math.factorial(2 * n) / 2.0**n * float(acc[n])


def covariance_pair(params: ModelParams, phi: LinearFunctional, psi: LinearFunctional) -> float:
    """E[<omega,phi><omega,psi>] = sum_k <phi_k, psi_k> / Gamma(beta + 1)."""
    _check(params, phi)
    _check(params, psi)
    return float(np.sum(phi.inner(psi)) / math.gamma(params.beta + 1.0))


def char_fn(params: ModelParams, eta: LinearFunctional, p) -> float:
    """E[exp(i p . G)] = prod_k E_beta(-p_k^2 <eta_k,eta_k> / 2).

    ``p`` has length d; a scalar is accepted when d == 1.
    """
    _check(params, eta)
    p = np.broadcast_to(np.asarray(p, dtype=float), (params.d,)) if np.ndim(p) == 0 and params.d == 1 else np.asarray(p, dtype=float)
    if p.shape != (params.d,):
        raise ConstraintError(f"p must have length d={params.d}")
    args = -0.5 * p**2 * eta.norms_sq
    if params.gaussian:
        return float(np.exp(args.sum()))
    return float(np.prod(specfun.ml_real(params.beta, 1.0, args)))


def laplace_transform(params: ModelParams, eta: LinearFunctional, lam: float) -> float:
    """E[exp(lambda * sum_k G_k)] = prod_k E_beta(lambda^2 <eta_k,eta_k> / 2)."""
    _check(params, eta)
    args = 0.5 * lam**2 * eta.norms_sq
    if params.gaussian:
        return float(np.exp(args.sum()))
    return float(np.prod([specfun.mittag_leffler(params.beta, float(x)) for x in args]))


# ---------------------------------------------------------------- S-transforms


def ml_ratio(beta: float, x) -> complex:
    """E_{beta,beta}(x) / (beta E_beta(x)); raises InadmissibleError near zeros of E_beta."""
    if beta == 1.0:
        return 1.0
    try:
        den = specfun.mittag_leffler(beta, x)
        num = specfun.mittag_leffler_two(beta, beta, x)
    except DomainError as exc:
        raise InadmissibleError(f"test function outside U_0: {exc}") from exc
    if abs(den) < ADMISSIBLE_FLOOR:
        raise InadmissibleError(f"test function outside U_0: |E_beta({x})| = {abs(den):.3g} < {ADMISSIBLE_FLOOR}")
    return num / (beta * den)


def s_ratios(params: ModelParams, phi: GridFunction) -> np.ndarray:
    """E_{beta,beta}(<phi_k,phi_k>/2) / (beta E_beta(<phi_k,phi_k>/2)) for k = 1..d."""
    sq = phi.inner(phi)  # bilinear pairing, as in the S-transform
    vals = []
    for x in sq:
        z = complex(x) if np.iscomplexobj(sq) else float(x)
        vals.append(ml_ratio(params.beta, 0.5 * z))
    return np.array(vals)


def s_transform_linear(params: ModelParams, eta: LinearFunctional, phi: GridFunction, vector: bool = True):
    """S-transform of G(., eta) at phi.

    Component k is E_{beta,beta}(<phi_k,phi_k>/2) / (beta E_beta(<phi_k,phi_k>/2)) * <phi_k, eta_k>.
    ``vector=False`` returns the sum over k (the scalar variable <omega, eta>).
    A d = 1 vector result is returned as a scalar.
    """
    _check(params, eta)
    if phi.d != params.d:
        raise ConstraintError("test function dimension mismatch")
    comps = s_ratios(params, phi) * eta.pair(phi)
    if not np.iscomplexobj(phi.values):
        comps = comps.real
    if not vector:
        return comps.sum()
    return comps[0] if params.d == 1 else comps


def noise_s_transform(params: ModelParams, phi: GridFunction, t: float) -> np.ndarray:
    """S-transform of the noise dB/dt at time t: ratio_k * (M_+ phi_k)(t), k = 1..d."""
    if phi.d != params.d:
        raise ConstraintError("test function dimension mismatch")
    mp = m_plus_eval(params.alpha, phi, [t])[:, 0]
    out = s_ratios(params, phi) * mp
    return out.real if not np.iscomplexobj(phi.values) else out


# ---------------------------------------------------------------- Donsker delta


def donsker_expectation(params: ModelParams, eta: LinearFunctional) -> float:
    """Generalised expectation of delta_0(G(., eta)).

    2^{-d/2} Gamma(1 - beta/2)^{-d} prod_k <eta_k,eta_k>^{-1/2}; at beta = 1 this is
    the Gaussian density at 0.
    """
    _check(params, eta)
    q = eta.norms_sq
    if np.any(q <= 0):
        raise DomainError("donsker_expectation needs every component of eta to be nonzero")
    d = params.d
    return float(2.0 ** (-d / 2) * math.gamma(1 - params.beta / 2) ** (-d) / np.sqrt(np.prod(q)))


@lru_cache(maxsize=64)
def _sqrt_mixture_rule(beta: float):
    """Log-trapezoid nodes/weights for int M_beta(y) f(y) dy with f ~ y^{-1/2} at 0.

    The lower cut is pushed to 1e-24 so the omitted piece (~ sqrt(y_min)) is
    below 1e-12.
    """
    return specfun.mwright_mixture_rule(beta, y_min=1e-24)


def even_fourier(beta: float, m, b):
    """int_0^inf cos(b tau) E_beta(-(tau^2 + m)/2) d tau for m >= 0, b >= 0 (vectorised).

    With E_beta(-x) = int M_beta(y) exp(-x y) dy the tau-integral is Gaussian:

        = int M_beta(y) (1/2) sqrt(2 pi / y) exp(-y m / 2 - b^2 / (2 y)) dy,

    a positive, smooth integrand summed on the fixed M-Wright node set.
    """
    m = np.asarray(m, dtype=float)
    b = np.asarray(b, dtype=float)
    if beta == 1.0:
        return 0.5 * np.sqrt(2 * np.pi) * np.exp(-0.5 * m - 0.5 * b * b)
    y, w = _sqrt_mixture_rule(float(beta))
    mb, bb = np.broadcast_arrays(m, b)
    flat_m, flat_b = mb.ravel(), bb.ravel()
    out = np.empty(flat_m.shape)
    wy = w * 0.5 * np.sqrt(2 * np.pi / y)
    chunk = max(1, 2_000_000 // y.size)
    for lo in range(0, flat_m.size, chunk):
        mm = flat_m[lo : lo + chunk, None]
        bq = flat_b[lo : lo + chunk, None]
        out[lo : lo + chunk] = np.exp(-0.5 * y * mm - 0.5 * bq * bq / y) @ wy
    return out.reshape(mb.shape)


def donsker_components(beta: float, q, p, c, a):
    """(1/2pi) int exp(-i s a) E_beta(-q s^2/2 - p/2 - s c) ds, elementwise over arrays.

    Completing the square, s = (tau - c/sqrt(q))/sqrt(q), makes the E_beta
    argument -(tau^2 + m)/2 with m = p - c^2/q >= 0 (Cauchy-Schwarz), so the
    value is exp(i a c / q) / (pi sqrt(q)) * even_fourier(m, |a| / sqrt(q)).
    """
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError("Donsker delta needs a nonzero functional")
    m = np.maximum(np.asarray(p, dtype=float) - np.asarray(c, dtype=float) ** 2 / q, 0.0)
    sq = np.sqrt(q)
    phase = np.exp(1j * np.asarray(a) * np.asarray(c) / q)
    return phase * even_fourier(beta, m, np.abs(a) / sq) / (np.pi * sq)


def _pqc(params, eta, phi):
    q = eta.norms_sq
    if np.any(q <= 0):
        raise DomainError("Donsker delta needs every component of eta to be nonzero")
    if phi is None:
        return q, np.zeros(params.d), np.zeros(params.d)
    if np.iscomplexobj(phi.values):
        raise DomainError("donsker_t_transform is implemented for real test functions")
    return q, phi.sq_norms(), eta.pair(phi)


def donsker_t_transform(params: ModelParams, eta: LinearFunctional, a, phi: GridFunction | None = None) -> complex:
    """T-transform of Donsker's delta delta_a(G(., eta)) at a real test function phi.

    (2 pi)^{-d} int exp(-i (s, a)) prod_k E_beta(-s_k^2 q_k/2 - p_k/2 - s_k c_k) ds with
    q_k = <eta_k,eta_k>, p_k = <phi_k,phi_k>, c_k = <eta_k,phi_k>.  The integral
    factorises over k; each factor is reduced to a one-dimensional quadrature over
    the M-Wright mixing variable (see ``donsker_components``).  ``phi=None`` means 0.
    """
    _check(params, eta)
    a = np.broadcast_to(np.asarray(a, dtype=float), (params.d,))
    q, p, c = _pqc(params, eta, phi)
    return complex(np.prod(donsker_components(params.beta, q, p, c, a)))


# ---------------------------------------------------------------- s-domain check


def _ml_neg_scalar(beta, x):
    return specfun.mittag_leffler(beta, -x) if x > 0 else 1.0


def even_fourier_quad(beta: float, m: float, b: float, tol: float = 1e-11) -> float:
    """``even_fourier`` by direct quadrature in tau (independent check).

    The integrand decays like tau^-2; QUADPACK's QAGI handles b = 0 and its
    Fourier routine QAWF (cos weight) b > 0, so no truncation is involved.
    """
    f = lambda tau: _ml_neg_scalar(beta, 0.5 * (tau * tau + m))  # noqa: E731
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            if b == 0.0:
                v1, e1 = integrate.quad(f, 0.0, 4.0, epsabs=tol, epsrel=1e-12, limit=200)
                v2, e2 = integrate.quad(f, 4.0, np.inf, epsabs=tol, epsrel=1e-12, limit=400)
                val, err = v1 + v2, e1 + e2
            else:
                val, err = integrate.quad(f, 0.0, np.inf, weight="cos", wvar=b, epsabs=tol, limlst=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"s-domain quadrature failed (beta={beta}, m={m}, b={b}): {exc}") from exc
    if not err <= 1e3 * tol:
        raise QuadratureError(f"s-domain quadrature error estimate {err:.2e} too large")
    return val


def donsker_t_transform_squad(params: ModelParams, eta: LinearFunctional, a, phi: GridFunction | None = None) -> complex:
    """Same quantity as ``donsker_t_transform``, integrated directly over s."""
    _check(params, eta)
    a = np.broadcast_to(np.asarray(a, dtype=float), (params.d,))
    q, p, c = _pqc(params, eta, phi)
    val = 1.0 + 0j
    for k in range(params.d):
        m = max(p[k] - c[k] ** 2 / q[k], 0.0)
        sq = math.sqrt(q[k])
        phase = cmath.exp(1j * a[k] * c[k] / q[k])
        if params.beta == 1.0:
            g = float(even_fourier(1.0, m, abs(a[k]) / sq))
        else:
            g = even_fourier_quad(params.beta, m, abs(a[k]) / sq)
        val *= phase * g / (math.pi * sq)
    return val
