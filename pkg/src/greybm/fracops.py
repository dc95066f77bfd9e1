"""Fractional operators M^{alpha/2}_{+/-} and the fBm covariance kernel.

M^{alpha/2}_{+/-} is K * I^r_{+/-} with r = (alpha - 1)/2: a Riemann-Liouville
integral for alpha > 1, the identity at alpha = 1 and a Marchaud derivative for
alpha < 1.  The normalisation K = sqrt(alpha sin(alpha pi / 2) Gamma(alpha)) makes

    <M_- 1_[0,t), M_- 1_[0,s)> = (t^alpha + s^alpha - |t - s|^alpha) / 2.

Sampled functions are read as piecewise-linear interpolants extended by zero
outside the grid.  Such a function is a finite sum of steps and ramps, and
I^r maps those to power functions exactly:

    I^r_+ H(x - a)   = (x - a)_+^r / Gamma(1 + r)
    I^r_+ (x - a)_+  = (x - a)_+^{1 + r} / Gamma(2 + r)

(mirror images for I^r_-), so every image below is exact for the interpolant.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate
from scipy.signal import fftconvolve

from .errors import ConstraintError, DomainError, GridResolutionWarning

__all__ = [
    "Alpha",
    "TimeGrid",
    "GridFunction",
    "kernel_R",
    "m_indicator",
    "m_plus_grid",
    "m_plus_eval",
    "m_plus_cell_moments",
    "m_minus_eval",
    "inner_m_stepfun",
    "inner_m_stepfun_nodes",
    "indicator_inner_quadrature",
]


@dataclass(frozen=True)
class Alpha:
    """Fractional order alpha in (0, 2) with its normalisation constant."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ConstraintError(f"alpha out of range (0, 2): {self.alpha}")

    @property
    def K(self) -> float:
        a = self.alpha
        return math.sqrt(a * math.sin(a * math.pi / 2) * math.gamma(a))

    @property
    def r(self) -> float:
        """Order of the Riemann-Liouville part, (alpha - 1)/2."""
        return 0.5 * (self.alpha - 1.0)


def as_alpha(alpha) -> Alpha:
    return alpha if isinstance(alpha, Alpha) else Alpha(float(alpha))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i * T / N, i = 0..N."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConstraintError("grid horizon T must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ConstraintError("grid needs N >= 1 intervals")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.dt
        t[-1] = self.T
        t.flags.writeable = False
        return t

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Index of the node equal to ``t``; raises if ``t`` is not a node."""
        x = t / self.dt
        i = int(round(x))
        if abs(x - i) > tol * max(1.0, abs(x)) or not 0 <= i <= self.N:
            raise DomainError(f"t = {t} is not a node of the grid (T={self.T}, N={self.N})")
        return i


class GridFunction:
    """d real (or complex) components sampled on a TimeGrid; immutable."""

    def __init__(self, grid: TimeGrid, values):
        v = np.array(values, copy=True)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != grid.N + 1 or v.shape[0] < 1:
            raise ConstraintError(f"expected d x {grid.N + 1} samples, got shape {np.shape(values)}")
        if not np.iscomplexobj(v):
            v = v.astype(float)
        v.flags.writeable = False
        self.grid = grid
        self.values = v

    @classmethod
    def from_callable(cls, grid: TimeGrid, *funcs):
        t = grid.nodes
        return cls(grid, np.vstack([np.broadcast_to(f(t), t.shape) for f in funcs]))

    @classmethod
    def zeros(cls, grid: TimeGrid, d: int = 1):
        return cls(grid, np.zeros((d, grid.N + 1)))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    def component(self, k: int) -> np.ndarray:
        return self.values[k]

    def sq_norms(self) -> np.ndarray:
        """<phi_k, phi_k> in L^2 for each component (exact for the interpolant)."""
        a, b = self.values[:, :-1], self.values[:, 1:]
        return self.grid.dt / 3.0 * np.sum(np.abs(a) ** 2 + (a * np.conj(b)).real + np.abs(b) ** 2, axis=1)

    def inner(self, other: "GridFunction") -> np.ndarray:
        """Componentwise <phi_k, psi_k> (bilinear, exact for linear interpolants)."""
        a, b = self.values[:, :-1], self.values[:, 1:]
        c, e = other.values[:, :-1], other.values[:, 1:]
        return self.grid.dt / 6.0 * np.sum(2 * a * c + a * e + b * c + 2 * b * e, axis=1)

    def __repr__(self):
        return f"GridFunction(d={self.d}, T={self.grid.T}, N={self.grid.N})"


# ---------------------------------------------------------------- kernel and indicators


def kernel_R(alpha, t, s):
    """(t^alpha + s^alpha - |t - s|^alpha) / 2, the fBm covariance with H = alpha/2."""
    a = as_alpha(alpha).alpha
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise DomainError("kernel_R needs t, s >= 0")
    out = 0.5 * (t**a + s**a - np.abs(t - s) ** a)
    return out[()] if out.ndim == 0 else out


def _pos_pow(x, p):
    """x_+^p with 0^0 = 1 and 0^p = 0 for p > 0 (callers avoid p < 0 at 0)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** p
    if p == 0:
        out[x == 0] = 1.0
    return out


def m_indicator(alpha, t, x):
    """(M_- 1_[0,t))(x) = K / Gamma((alpha+1)/2) * [(t - x)_+^r - (-x)_+^r].

    For alpha < 1 the image is singular at x = 0 and x = t; asking for those
    points raises DomainError.
    """
    al = as_alpha(alpha)
    if not t > 0:
        raise DomainError("m_indicator needs t > 0")
    x = np.asarray(x, dtype=float)
    r = al.r
    if r == 0.0:
        out = ((x >= 0) & (x < t)).astype(float)
    else:
        if r < 0 and np.any((x == 0) | (x == t)):
            raise DomainError("m_indicator is singular at x = 0 and x = t for alpha < 1")
        out = al.K / math.gamma(1.0 + r) * (_pos_pow(t - x, r) - _pos_pow(-x, r))
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------- piecewise-linear images


def _pl_plus_parts(values, dt):
    """Step heights J_i and slope changes c_i at each node, for the + direction.

    f(x) = sum_i J_i H(x - t_i) + c_i (x - t_i)_+  with f = 0 outside [0, T].
    """
    v = np.asarray(values)
    n = v.shape[-1]
    J = np.zeros_like(v)
    J[..., 0] = v[..., 0]
    J[..., -1] = -v[..., -1]
    slope = np.zeros(v.shape[:-1] + (n + 1,), dtype=v.dtype)
    slope[..., 1:n] = np.diff(v, axis=-1) / dt  # slope[i+1] lives on cell i
    c = slope[..., 1:] - slope[..., :-1]
    return J, c


def _pl_minus_parts(values, dt):
    """Mirror decomposition for the - direction.

    f(x) = sum_i J_i 1(x < t_i) + k_i (t_i - x)_+  with f = 0 outside [0, T].
    """
    v = np.asarray(values)
    n = v.shape[-1]
    J = np.zeros_like(v)
    J[..., 0] = -v[..., 0]
    J[..., -1] = v[..., -1]
    slope = np.zeros(v.shape[:-1] + (n + 1,), dtype=v.dtype)
    slope[..., 1:n] = np.diff(v, axis=-1) / dt
    k = slope[..., 1:] - slope[..., :-1]
    return J, k


def _power_table(m, dt, p, scale):
    """scale * (k dt)^p for k = 0..m-1, with the k = 0 entry left at 0 unless p == 0."""
    k = np.arange(m, dtype=float)
    g = np.zeros(m)
    g[1:] = scale * (k[1:] * dt) ** p
    if p == 0:
        g[0] = scale
    return g


def _m_plus_on_grid(al: Alpha, values, dt, order=0):
    """order-th antiderivative (from -inf) of M_+ of the interpolant, at every node."""
    v = np.atleast_2d(values)
    r = al.r
    n = v.shape[-1]
    J, c = _pl_plus_parts(v, dt)
    gj = _power_table(n, dt, r + order, 1.0 / math.gamma(1.0 + r + order))
    gc = _power_table(n, dt, 1.0 + r + order, 1.0 / math.gamma(2.0 + r + order))
    out = np.empty(v.shape, dtype=np.result_type(v.dtype, float))
    for i in range(v.shape[0]):
        acc = fftconvolve(J[i], gj)[:n] + fftconvolve(c[i], gc)[:n]
        if r + order < 0:
            # step at a node: the image blows up there (integrable singularity)
            hit = J[i] != 0
            acc[hit] = np.sign(J[i][hit]) * np.inf
        out[i] = al.K * acc
    return out


def m_plus_eval(alpha, phi: GridFunction, x, order: int = 0):
    """M_+ phi (order 0) or its order-th antiderivative at arbitrary points ``x``.

    Direct O(N * len(x)) sum; use ``m_plus_grid`` for all nodes at once.
    """
    al = as_alpha(alpha)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = phi.grid.nodes
    J, c = _pl_plus_parts(phi.values, phi.grid.dt)
    r = al.r
    a0 = 1.0 / math.gamma(1.0 + r + order)
    a1 = 1.0 / math.gamma(2.0 + r + order)
    out = np.zeros((phi.d, x.size), dtype=np.result_type(phi.values.dtype, float))
    chunk = max(1, 4_000_000 // t.size)
    for lo in range(0, x.size, chunk):
        dx = x[lo : lo + chunk, None] - t[None, :]
        pj = _pos_pow(dx, r + order)  # zero at dx == 0 when r + order < 0
        pc = _pos_pow(dx, 1.0 + r + order)
        block = al.K * (a0 * (J @ pj.T) + a1 * (c @ pc.T))
        if r + order < 0:
            # a step exactly at an evaluation point: infinite (integrable) value
            hit = dx == 0
            for k in range(phi.d):
                sj = np.where(hit, J[k][None, :], 0.0).sum(axis=1)
                block[k, sj != 0] = np.sign(sj[sj != 0]) * np.inf
        out[:, lo : lo + chunk] = block
    return out


def _neg_pow_safe(x, p):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] ** p
    out[x == 0] = np.inf
    return out


def m_plus_grid(alpha, phi: GridFunction, check: bool = True) -> GridFunction:
    """Samples of M_+ phi at the grid nodes (phi read as its linear interpolant).

    For alpha = 1 the input is returned unchanged.  A nonzero boundary value is
    a step of the zero extension; for alpha < 1 its image is infinite at that
    node.  With ``check`` the interpolation error is estimated by comparing
    against the image of the every-other-node interpolant (Richardson, O(dt^2))
    and a GridResolutionWarning is issued above 1e-4.
    """
    al = as_alpha(alpha)
    if al.alpha == 1.0:
        return phi
    dt = phi.grid.dt
    fine = _m_plus_on_grid(al, phi.values, dt)
    if check and phi.grid.N >= 8 and phi.grid.N % 2 == 0:
        coarse = _m_plus_on_grid(al, phi.values[:, ::2], 2 * dt)
        diff = np.abs(fine[:, ::2] - coarse)
        diff = diff[np.isfinite(diff)]
        est = diff.max() / 3.0 if diff.size else 0.0
        if est > 1e-4:
            warnings.warn(
                f"M_+ grid image: estimated discretisation error {est:.2e} exceeds 1e-4; refine the grid",
                GridResolutionWarning,
                stacklevel=2,
            )
    return GridFunction(phi.grid, fine)


def m_plus_cell_moments(alpha, phi: GridFunction):
    """Exact cell integrals of M_+ phi against the two hat halves.

    Returns (I0, I1), each d x N, with I0_i = int_cell M_+phi and
    I1_i = int_cell M_+phi(s) (s - t_i)/dt ds, so that for u linear on the cell
    int_cell M_+phi * u = u_i (I0_i - I1_i) + u_{i+1} I1_i.
    """
    al = as_alpha(alpha)
    dt = phi.grid.dt
    if al.alpha == 1.0:
        a, b = phi.values[:, :-1], phi.values[:, 1:]
        return 0.5 * dt * (a + b), dt * (a / 6.0 + b / 3.0)
    F = _m_plus_on_grid(al, phi.values, dt, order=1)
    G = _m_plus_on_grid(al, phi.values, dt, order=2)
    I0 = np.diff(F, axis=1)
    I1 = F[:, 1:] - np.diff(G, axis=1) / dt
    return I0, I1


def m_minus_eval(alpha, g, grid: TimeGrid, x, t=None):
    """(M_- (1_[0,t) g))(x) for g sampled on ``grid`` (linear interpolant).

    ``t`` must be a node (default T).  Singular points (steps of the truncated
    function when alpha < 1) evaluate to +/-inf.
    """
    al = as_alpha(alpha)
    g = np.asarray(g)
    n = grid.N if t is None else grid.index_of(t)
    gv = g[: n + 1].copy()
    if n == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    J, k = _pl_minus_parts(gv, grid.dt)
    nodes = grid.nodes[: n + 1]
    x = np.atleast_1d(np.asarray(x, dtype=float))
    r = al.r
    dx = nodes[None, :] - x[:, None]
    if r == 0.0:
        pj = (dx > 0).astype(float)
    elif r < 0:
        pj = _neg_pow_safe(dx, r)
        pj[(dx == 0) & (J[None, :] == 0)] = 0.0
    else:
        pj = _pos_pow(dx, r)
    pk = _pos_pow(dx, 1.0 + r)
    with np.errstate(invalid="ignore"):
        out = al.K * (pj @ J / math.gamma(1.0 + r) + pk @ k / math.gamma(2.0 + r))
    return out


# ---------------------------------------------------------------- inner products


def _cell_means(u):
    u = np.asarray(u)
    return 0.5 * (u[:-1] + u[1:])


def _increment_gamma(m, alpha):
    """gamma(k) = (|k+1|^a + |k-1|^a - 2|k|^a)/2, k = 0..m-1 (unit-step fGn autocovariance)."""
    k = np.arange(m, dtype=float)
    return 0.5 * (np.abs(k + 1) ** alpha + np.abs(k - 1) ** alpha - 2 * k**alpha)


def _cell_edges(grid: TimeGrid, t):
    """Cell boundaries of [0, t]: the nodes below t followed by t itself."""
    if t > grid.T * (1 + 1e-12):
        raise DomainError(f"t = {t} lies beyond the grid horizon {grid.T}")
    nodes = grid.nodes
    inner = nodes[nodes < t * (1 - 1e-12)]
    return np.append(inner, t) if t > 0 else np.array([0.0])


def _cell_values(u, grid: TimeGrid, edges):
    """Midpoint values of the interpolant of u on each cell."""
    mids = 0.5 * (edges[:-1] + edges[1:])
    if len(mids) == 0:
        return mids
    return np.interp(mids, grid.nodes, np.real(u)) + (
        1j * np.interp(mids, grid.nodes, np.imag(u)) if np.iscomplexobj(u) else 0.0
    )


def inner_m_stepfun(alpha, u, v, t, s, grid: TimeGrid):
    """<M_-(1_[0,t) u), M_-(1_[0,s) v)> with u, v read as step functions.

    u and v are sampled on ``grid``; each cell carries its midpoint value and the
    pairing is sum_ij u_i v_j C_ij with C_ij the covariance of the fBm increments
    over cells i and j.
    """
    al = as_alpha(alpha).alpha
    eu = _cell_edges(grid, t)
    ev = _cell_edges(grid, s)
    uu = _cell_values(u, grid, eu)
    vv = _cell_values(v, grid, ev)
    if uu.size == 0 or vv.size == 0:
        return 0.0
    a, b = eu[:-1, None], eu[1:, None]
    c, e = ev[None, :-1], ev[None, 1:]
    C = 0.5 * (np.abs(b - c) ** al + np.abs(a - e) ** al - np.abs(b - e) ** al - np.abs(a - c) ** al)
    return uu @ C @ vv


def inner_m_stepfun_nodes(alpha, u, v, grid: TimeGrid):
    """<M_-(1_[0,t_n) u), M_-(1_[0,t_n) v)> for every node t_n, n = 0..N.

    Same step-function reading as ``inner_m_stepfun``; the increment covariance
    is Toeplitz on a uniform grid, so all N+1 values cost two FFT convolutions.
    """
    al = as_alpha(alpha).alpha
    uu = _cell_means(u)
    vv = _cell_means(v)
    n = uu.size
    g = _increment_gamma(n, al)
    # cu[m] = sum_{i<m} gamma(m - i) u_i, the cross term added with cell m
    g1 = np.concatenate([[0.0], g[1:]])
    cu = fftconvolve(uu, g1)[:n]
    cv = fftconvolve(vv, g1)[:n]
    incr = vv * cu + uu * cv + g[0] * uu * vv
    out = np.zeros(n + 1, dtype=np.result_type(uu, vv))
    out[1:] = np.cumsum(incr)
    return out * grid.dt**al


# ---------------------------------------------------------------- quadrature oracle


def indicator_inner_quadrature(alpha, t, s, epsrel=1e-12):
    """int (M_- 1_[0,t))(M_- 1_[0,s)) dx by singularity-weighted adaptive quadrature.

    Independent of the closed-form kernel: the integral is split at 0 and min(t,s),
    endpoint singularities (x - a)^r are passed to QUADPACK's algebraic weights,
    and the tail x -> -inf is integrated in a cancellation-free form.
    """
    al = as_alpha(alpha)
    r = al.r
    lo_t, hi_t = sorted((float(t), float(s)))
    if lo_t <= 0:
        return 0.0
    c2 = (al.K / math.gamma(1.0 + r)) ** 2
    if r == 0.0:
        return lo_t  # indicators multiply
    opts = dict(epsabs=0.0, epsrel=epsrel, limit=500)
    # (0, lo): (t - x)^r (s - x)^r
    if hi_t == lo_t:
        mid = integrate.quad(lambda x: 1.0, 0.0, lo_t, weight="alg", wvar=(0.0, 2 * r), **opts)[0]
    else:
        mid = integrate.quad(lambda x: (hi_t - x) ** r, 0.0, lo_t, weight="alg", wvar=(0.0, r), **opts)[0]
    # (-L, 0): expand the product into terms with a single endpoint singularity at 0
    L = 4.0 * hi_t
    near = integrate.quad(lambda x: (lo_t - x) ** r * (hi_t - x) ** r, -L, 0.0, **opts)[0]
    near -= integrate.quad(
        lambda x: (lo_t - x) ** r + (hi_t - x) ** r, -L, 0.0, weight="alg", wvar=(0.0, r), **opts
    )[0]
    near += integrate.quad(lambda x: 1.0, -L, 0.0, weight="alg", wvar=(0.0, 2 * r), **opts)[0]

    def tail(y):
        # y = -x >= L; (a + y)^r - y^r = y^r expm1(r log1p(a / y))
        return y ** (2 * r) * math.expm1(r * math.log1p(lo_t / y)) * math.expm1(r * math.log1p(hi_t / y))

    far = integrate.quad(tail, L, np.inf, **opts)[0]
    return c2 * (mid + near + far)
