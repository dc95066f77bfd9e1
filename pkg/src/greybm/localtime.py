"""Local time and self-intersection local time of vggBm.

    L(a, T)  = int_0^T delta_a(B_t) dt,
    L^s(T)   = int_0^T int_0^s delta_0(B_s - B_u) du ds.

L^s is taken over ordered pairs u < s; the integral over the full square
[0, T]^2 is exactly twice this.  Both exist as generalized functionals when
alpha d < 2; their T-transforms are time integrals of Donsker-delta
T-transforms, and their expectations have closed forms.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special

from .errors import ConstraintError, DomainError
from .fracops import GridFunction, TimeGrid, m_plus_eval
from .measure import ModelParams, donsker_components
from .sampling import PathEnsemble, array_checksum, map_vggbm_blocks, standard_error

__all__ = [
    "LocalTimeQuery",
    "LOCAL",
    "SELF_INTERSECTION",
    "lt_expectation",
    "silt_expectation",
    "closed_form",
    "lt_t_transform",
    "lt_monte_carlo",
    "lt_monte_carlo_sampled",
    "MCEstimate",
]

LOCAL = "local"
SELF_INTERSECTION = "self-intersection"


@dataclass(frozen=True)
class LocalTimeQuery:
    params: ModelParams
    T: float
    a: tuple = ()
    kind: str = LOCAL

    def __post_init__(self):
        p = self.params
        if not p.localtime_ok:
            raise ConstraintError(f"local times need alpha*d < 2, got alpha*d = {p.alpha * p.d:g}")
        if not self.T > 0:
            raise ConstraintError(f"T must be positive, got {self.T}")
        if self.kind not in (LOCAL, SELF_INTERSECTION):
            raise ConstraintError(f"kind must be '{LOCAL}' or '{SELF_INTERSECTION}'")
        a = tuple(float(x) for x in np.atleast_1d(self.a)) if np.size(self.a) else (0.0,) * p.d
        if len(a) != p.d:
            raise ConstraintError(f"level a must have d={p.d} entries")
        if self.kind == SELF_INTERSECTION and any(a):
            raise ConstraintError("self-intersection local time is at level 0 only")
        object.__setattr__(self, "a", a)

    @property
    def at_zero(self) -> bool:
        return not any(self.a)


def _gamma_const(params: ModelParams) -> float:
    d = params.d
    return 2.0 ** (-d / 2) * math.gamma(1.0 - params.beta / 2) ** (-d)


def lt_expectation(query: LocalTimeQuery) -> float:
    """E L(0, T) = T^{1 - alpha d/2} / (2^{d/2-1} Gamma(1-beta/2)^d (2 - alpha d)).

    At beta = 1 this is the Gaussian (fBm) value.
    """
    if not query.at_zero:
        raise DomainError("the closed-form expectation exists only at a = 0")
    p, T = query.params, query.T
    ad = p.alpha * p.d
    return 2.0 * _gamma_const(p) * T ** (1 - ad / 2) / (2 - ad)


def silt_expectation(query: LocalTimeQuery) -> float:
    """E L^s(T) = T^{2 - alpha d/2} / (2^{d/2-2} Gamma(1-beta/2)^d (2 - alpha d)(4 - alpha d))."""
    p, T = query.params, query.T
    ad = p.alpha * p.d
    return 4.0 * _gamma_const(p) * T ** (2 - ad / 2) / ((2 - ad) * (4 - ad))


def closed_form(query: LocalTimeQuery) -> float:
    return lt_expectation(query) if query.kind == LOCAL else silt_expectation(query)


# ---------------------------------------------------------------- T-transform


def _graded_rule(n: int, power: float):
    """Nodes x = w^power on (0,1] with weights absorbing dx = power w^{power-1} dw."""
    w, wt = np.polynomial.legendre.leggauss(n)
    w = 0.5 * (w + 1.0)
    wt = 0.5 * wt
    return w**power, wt * power * w ** (power - 1.0)


def _antiderivative_pairing(params: ModelParams, phi: GridFunction | None, x: np.ndarray) -> np.ndarray:
    """<phi_k, M_- 1_[0,x)> = int_0^x M_+ phi_k for all k (d x len(x))."""
    if phi is None:
        return np.zeros((params.d, x.size))
    if phi.d != params.d:
        raise ConstraintError("test function dimension mismatch")
    if np.iscomplexobj(phi.values):
        raise DomainError("local-time T-transforms are implemented for real test functions")
    return m_plus_eval(params.alpha, phi, x, order=1)


def lt_t_transform(query: LocalTimeQuery, phi: GridFunction | None = None, n: int = 48) -> complex:
    """T-transform of L(a, T) or L^s(T) at a real test function phi (None means 0).

    The integrands carry the endpoint singularity |t|^{-alpha d/2}.  The substitution
    t = T w^{2/(2-alpha d)} removes it exactly at phi = 0, and n-point
    Gauss-Legendre is applied in w.  For L^s the inner variable is the lag
    v = s - u, graded the same way, and the outer s = T z^{2/(4-alpha d)} absorbs
    the s^{1-alpha d/2} growth of the inner integral.
    """
    p, T = query.params, query.T
    ad = p.alpha * p.d
    pp = np.zeros(p.d) if phi is None else phi.sq_norms()
    lag_x, lag_w = _graded_rule(n, 2.0 / (2.0 - ad))
    if query.kind == LOCAL:
        t = T * lag_x
        c = _antiderivative_pairing(p, phi, t)
        q = t**p.alpha
        vals = np.ones(t.size, dtype=complex)
        for k in range(p.d):
            vals *= donsker_components(p.beta, q, pp[k], c[k], query.a[k])
        return complex(T * np.sum(lag_w * vals))
    s_x, s_w = _graded_rule(n, 2.0 / (4.0 - ad))
    s = T * s_x
    v = s[:, None] * lag_x[None, :]
    u = s[:, None] - v
    cs = _antiderivative_pairing(p, phi, s)
    cu = _antiderivative_pairing(p, phi, u.ravel()).reshape(p.d, *u.shape)
    q = v**p.alpha
    vals = np.ones(v.shape, dtype=complex)
    for k in range(p.d):
        vals *= donsker_components(p.beta, q, pp[k], cs[k][:, None] - cu[k], 0.0)
    inner = (vals * lag_w[None, :]).sum(axis=1) * s
    return complex(T * np.sum(s_w * inner))


# ---------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    paths: int
    checksum: str | None = field(default=None, compare=False)  # of the streamed ensemble

    def as_dict(self):
        out = {"value": self.value, "se": self.se, "paths": self.paths}
        if self.checksum is not None:
            out["checksum"] = self.checksum
        return out


def _gauss(x, eps):
    return np.exp(-0.5 * (x / eps) ** 2) / (eps * math.sqrt(2 * math.pi))


def _kernel(diff, eps):
    """prod_k g_eps(diff_k) over axis 1 (the component axis)."""
    return np.prod(_gauss(diff, eps), axis=1)


def _navot(params: ModelParams) -> float:
    """-zeta(alpha d/2): endpoint weight of the trapezoid rule for t^{-alpha d/2}.

    For f(t) = C t^{-g}, dt * (sum_{i=1}^{n-1} f(t_i) + f(t_n)/2) = int_0^T f + zeta(g) C dt^{1-g} + ...,
    so adding -zeta(g) dt f(t_1) removes the leading error.  The mollified integrand
    only departs from C t^{-g} below t ~ eps^{2/alpha}, far inside the first cell.
    """
    return -float(special.zeta(params.alpha * params.d / 2))


def _local_values(paths, n, dt, a, eps, c0):
    """Trapezoid in time of prod_k g_eps(B_k(t) - a_k) up to node n.

    At a = 0 the integrand behaves like t^{-alpha d/2}: the singular node t = 0 is
    dropped and the endpoint correction c0 * dt * f(t_1) added instead.
    """
    k = _kernel(paths[:, :, : n + 1] - np.asarray(a)[None, :, None], eps)
    w = np.full(n + 1, dt)
    w[n] = 0.5 * dt
    if any(a):
        w[0] = 0.5 * dt
        return k @ w
    w[0] = 0.0
    return k @ w + c0 * dt * k[:, 1]


def _lag_one_correction(x, w, dt, eps, c0):
    """Endpoint correction along the diagonal: sum_i w_i c0 dt [K(B_i - B_{i-1}) + K(B_i - B_{i+1})]."""
    k1 = _kernel(x[:, :, 1:] - x[:, :, :-1], eps)  # lag-one kernel between i and i+1
    return c0 * dt * (k1 @ (w[:-1] + w[1:]))


def _silt_values_binned(paths, n, dt, eps, c0):
    """d = 1: (1/2) [sum_{i != j} w_i w_j g_eps(B_i - B_j) + diagonal correction].

    Path values are deposited on bins of width eps/4 with linear (cloud-in-cell)
    weights; the pair sum becomes sum_{b,b'} l_b l_b' g_eps((b - b') h) minus the
    self-pair terms, which are known exactly per node.
    """
    x = paths[:, 0, : n + 1]
    w = np.full(n + 1, dt)
    w[0] = w[n] = 0.5 * dt
    h = eps / 4.0
    lo = np.floor(x.min() / h) - 1
    pos = x / h - lo
    nb = int(np.ceil(pos.max())) + 2
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    rows = np.arange(x.shape[0])[:, None] * nb
    occ = np.zeros(x.shape[0] * nb)
    np.add.at(occ, (rows + i0).ravel(), ((1.0 - frac) * w).ravel())
    np.add.at(occ, (rows + i0 + 1).ravel(), (frac * w).ravel())
    occ = occ.reshape(x.shape[0], nb)
    half = int(math.ceil(8 * eps / h))
    kern = _gauss(np.arange(-half, half + 1) * h, eps)
    smooth = signal.fftconvolve(occ, kern[None, :], mode="same", axes=1)
    full = np.sum(occ * smooth, axis=1)
    self_pairs = (w * w * (((1 - frac) ** 2 + frac**2) * kern[half] + 2 * frac * (1 - frac) * kern[half + 1])).sum(axis=1)
    return 0.5 * (full - self_pairs + _lag_one_correction(paths[:, :, : n + 1], w, dt, eps, c0))


def _silt_values_pairs(paths, n, dt, eps, c0, max_nodes: int = 257):
    """(1/2) [sum_{i != j} w_i w_j prod_k g_eps(B_k,i - B_k,j) + diagonal correction]
    on a strided sub-grid of at most ``max_nodes`` nodes."""
    stride = max(1, int(math.ceil(n / (max_nodes - 1))))
    if n % stride:
        raise ConstraintError(f"T must fall on the sub-grid of stride {stride}")
    idx = np.arange(0, n + 1, stride)
    h = stride * dt
    ws = np.full(idx.size, h)
    ws[0] = ws[-1] = 0.5 * h
    x = paths[:, :, idx]
    out = np.empty(paths.shape[0])
    for m in range(paths.shape[0]):
        kern = _kernel(x[m][None, :, :, None] - x[m][None, :, None, :], eps)[0]
        np.fill_diagonal(kern, 0.0)
        out[m] = ws @ kern @ ws
    return 0.5 * (out + _lag_one_correction(x, ws, h, eps, c0))


def _path_values(query: LocalTimeQuery, eps: float, grid: TimeGrid, paths: np.ndarray) -> np.ndarray:
    n = grid.index_of(query.T)
    if n < 2:
        raise ConstraintError("need at least two time steps up to T")
    c0 = _navot(query.params)
    if query.kind == LOCAL:
        return _local_values(paths, n, grid.dt, query.a, eps, c0)
    if query.params.d == 1:
        return _silt_values_binned(paths, n, grid.dt, eps, c0)
    return _silt_values_pairs(paths, n, grid.dt, eps, c0)


def _check_mc(query: LocalTimeQuery, epsilon: float, grid: TimeGrid):
    if not epsilon > 0:
        raise ConstraintError("mollifier width must be positive")
    if query.T > grid.T * (1 + 1e-12):
        raise ConstraintError("ensemble grid is shorter than the query horizon")
    grid.index_of(query.T)


def lt_monte_carlo(query: LocalTimeQuery, epsilon: float, ensemble: PathEnsemble) -> MCEstimate:
    """Mollified estimator: delta replaced by a Gaussian of width epsilon, time
    integrals by the trapezoid rule on the ensemble grid, with an endpoint
    correction at the t^{-alpha d/2} singularity (t = 0, resp. the diagonal s = u).

    For L^s with d = 1 the pair sum goes through the binned occupation density;
    for d >= 2 it is evaluated directly on a sub-grid of at most 257 nodes.
    """
    if ensemble.params != query.params:
        raise ConstraintError("ensemble parameters do not match the query")
    _check_mc(query, epsilon, ensemble.grid)
    vals = _path_values(query, epsilon, ensemble.grid, ensemble.paths)
    return MCEstimate(float(vals.mean()), float(standard_error(vals)), vals.size)


def lt_monte_carlo_sampled(
    query: LocalTimeQuery, epsilon: float, N: int, M: int, seed, threads: int | None = None
) -> MCEstimate:
    """``lt_monte_carlo`` on the ensemble sample_vggbm(params, TimeGrid(T, N), M, seed),
    reduced block by block instead of materialising all paths.

    The checksum is sha256 over the concatenated per-block path digests.
    """
    grid = TimeGrid(query.T, N)
    _check_mc(query, epsilon, grid)

    def reduce(paths):
        return _path_values(query, epsilon, grid, paths), bytes.fromhex(array_checksum(paths))

    parts = map_vggbm_blocks(reduce, query.params, grid, M, seed, threads)
    vals = np.concatenate([q[0] for q in parts])
    digest = hashlib.sha256(b"".join(q[1] for q in parts)).hexdigest()
    return MCEstimate(float(vals.mean()), float(standard_error(vals)), vals.size, digest)
