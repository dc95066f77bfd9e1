"""Linear systems dX_t = A(t) X_t dt + sigma dB_t driven by vggBm.

With V the fundamental matrix (V' = A V) the solution is

    X_t = V(t) V(0)^{-1} x0 + sigma V(t) sum_j <omega, eta_{t,j}> e_j,
    eta_{t,j} = sum_k M_-(1_[0,t) u_{j,k}) e_k,   u_{j,k} = (V^{-1})_{j,k},

so means, covariances and S-transforms follow from pairings of step
functionals, and paths from Riemann-Stieltjes sums against sampled fBm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, DomainError
from .fracops import GridFunction, TimeGrid, inner_m_stepfun_nodes, m_plus_cell_moments
from .measure import LinearFunctional, ModelParams, s_ratios
from .sampling import PathEnsemble, _run_blocks, as_seed, vggbm_block_draws

__all__ = [
    "SampledMatrix",
    "LinearSystemSpec",
    "FundamentalMatrix",
    "fundamental_matrix",
    "eta_functionals",
    "solve_mean_and_cov",
    "solve_paths",
    "solution_s_transform",
    "solution_s_transform_path",
    "spec_from_dict",
]

BLOWUP = 1e12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SampledMatrix:
    """A(t) given at increasing times; linear interpolation in between."""

    times: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.matrices, dtype=float)
        if t.ndim != 1 or m.ndim != 3 or m.shape[0] != t.size or m.shape[1] != m.shape[2]:
            raise ConstraintError("samples need times (n,) and matrices (n, d, d)")
        if t.size < 2 or np.any(np.diff(t) <= 0):
            raise ConstraintError("sample times must be strictly increasing (at least two)")
        if not np.all(np.isfinite(m)):
            raise DomainError("non-finite entry in sampled A")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "matrices", m)

    def __call__(self, t: float) -> np.ndarray:
        t = float(t)
        if t < self.times[0] - 1e-12 or t > self.times[-1] + 1e-12:
            raise DomainError(f"t={t} outside the sampled range of A")
        i = int(np.clip(np.searchsorted(self.times, t) - 1, 0, self.times.size - 2))
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1 - w) * self.matrices[i] + w * self.matrices[i + 1]


@dataclass(frozen=True)
class LinearSystemSpec:
    """A is a constant d x d matrix, a callable t -> d x d, or a SampledMatrix."""

    params: ModelParams
    A: object
    sigma: float
    x0: np.ndarray
    T: float

    def __post_init__(self):
        d = self.params.d
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (d,):
            raise ConstraintError(f"x0 must have d={d} entries")
        object.__setattr__(self, "x0", x0)
        if not self.T > 0:
            raise ConstraintError("T must be positive")
        if not math.isfinite(self.sigma):
            raise ConstraintError("sigma must be finite")
        if not callable(self.A):
            a = np.asarray(self.A, dtype=float)
            if a.shape != (d, d):
                raise ConstraintError(f"A must be {d}x{d}")
            if not np.all(np.isfinite(a)):
                raise DomainError("non-finite entry in A")
            object.__setattr__(self, "A", a)
        elif isinstance(self.A, SampledMatrix):
            if self.A.matrices.shape[1] != d:
                raise ConstraintError(f"sampled A must be {d}x{d}")
            if self.A.times[0] > 1e-12 or self.A.times[-1] < self.T - 1e-12:
                raise ConstraintError("sampled A must cover [0, T]")

    @property
    def d(self) -> int:
        return self.params.d

    def A_at(self, t: float) -> np.ndarray:
        a = self.A(t) if callable(self.A) else self.A
        a = np.asarray(a, dtype=float)
        if a.shape != (self.d, self.d):
            raise ConstraintError(f"A(t) must be {self.d}x{self.d}")
        if not np.all(np.isfinite(a)):
            raise DomainError(f"non-finite A at t={t}")
        return a


@dataclass(frozen=True)
class FundamentalMatrix:
    grid: TimeGrid
    V: np.ndarray  # (N+1, d, d)
    Vinv: np.ndarray  # (N+1, d, d)

    def u(self, j: int, k: int) -> np.ndarray:
        """Node values of u_{j,k} = (V^{-1})_{j,k} on [0, T] (zero outside)."""
        return self.Vinv[:, j, k]


def fundamental_matrix(spec: LinearSystemSpec, N: int) -> FundamentalMatrix:
    """V' = A(t) V, V(0) = I by the classical fourth-order Runge-Kutta step on TimeGrid(T, N).

    V^{-1} at each node is an LU solve against the identity.
    """
    grid = TimeGrid(spec.T, N)
    d, h = spec.d, grid.dt
    V = np.empty((N + 1, d, d))
    V[0] = np.eye(d)
    constant = not callable(spec.A)
    if constant:
        A = spec.A_at(0.0)
    for n in range(N):
        t = grid.nodes[n]
        if constant:
            a0 = am = a1 = A
        else:
            a0, am, a1 = spec.A_at(t), spec.A_at(t + 0.5 * h), spec.A_at(t + h)
        y = V[n]
        k1 = a0 @ y
        k2 = am @ (y + 0.5 * h * k1)
        k3 = am @ (y + 0.5 * h * k2)
        k4 = a1 @ (y + h * k3)
        V[n + 1] = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(V[n + 1])) or np.abs(V[n + 1]).max() > BLOWUP:
            raise DomainError(f"fundamental matrix blew up (|V| > {BLOWUP:g}) at t={grid.nodes[n + 1]:g}")
    cond = np.linalg.cond(V)
    if np.any(cond > COND_LIMIT):
        raise DomainError(f"fundamental matrix too ill-conditioned (cond {cond.max():.3g})")
    Vinv = np.linalg.solve(V, np.broadcast_to(np.eye(d), V.shape))
    V.flags.writeable = False
    Vinv.flags.writeable = False
    return FundamentalMatrix(grid, V, Vinv)


def eta_functionals(spec: LinearSystemSpec, fm: FundamentalMatrix, t: float) -> list:
    """eta_{t,j} = sum_k M_-(1_[0,t) u_{j,k}) e_k for j = 1..d (t must be a node)."""
    fm.grid.index_of(t)
    return [LinearFunctional.step(spec.params.alpha, fm.grid, t, fm.Vinv[:, j, :].T) for j in range(spec.d)]


def _gram_nodes(spec: LinearSystemSpec, fm: FundamentalMatrix) -> np.ndarray:
    """G[n, j, j'] = sum_k <M_-(1_[0,t_n) u_{j,k}), M_-(1_[0,t_n) u_{j',k})>."""
    d = spec.d
    G = np.zeros((fm.grid.N + 1, d, d))
    for j in range(d):
        for jj in range(j, d):
            acc = sum(inner_m_stepfun_nodes(spec.params.alpha, fm.u(j, k), fm.u(jj, k), fm.grid) for k in range(d))
            G[:, j, jj] = G[:, jj, j] = acc
    return G


def _start(spec: LinearSystemSpec, fm: FundamentalMatrix) -> np.ndarray:
    # V(0)^{-1} x0; the identity for the V(0) = I normalisation used here
    return np.linalg.solve(fm.V[0], spec.x0)


def solve_mean_and_cov(spec: LinearSystemSpec, fm: FundamentalMatrix):
    """Mean (N+1) x d and covariance (N+1) x d x d on the grid nodes.

    mean(t) = V(t) V(0)^{-1} x0,  Cov(t) = sigma^2 / Gamma(beta+1) V(t) G(t) V(t)^T.
    """
    mean = fm.V @ _start(spec, fm)
    G = _gram_nodes(spec, fm)
    cov = spec.sigma**2 / math.gamma(spec.params.beta + 1.0) * (fm.V @ G @ np.swapaxes(fm.V, 1, 2))
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return mean, cov


def solve_paths(spec: LinearSystemSpec, fm: FundamentalMatrix, m: int, seed, threads: int | None = None) -> PathEnsemble:
    """m solution paths on the grid of ``fm``.

    The grey integral sum_k int_0^t u_{j,k} dB_k is the Riemann-Stieltjes sum of
    cell-midpoint values of u_{j,k} against the sampled increments of B_k = sqrt(Y_k) fBm_k.
    The noise is drawn exactly as ``sample_vggbm`` draws it (same seed, same paths).
    """
    p, grid = spec.params, fm.grid
    seed = as_seed(seed)
    u_mid = 0.5 * (fm.Vinv[:-1] + fm.Vinv[1:])  # (N, d_j, d_k)
    x0 = _start(spec, fm)
    scale = grid.dt ** (p.alpha / 2)

    def block(b, lo, hi):
        y, inc = vggbm_block_draws(p, grid, seed, b, hi - lo)
        db = inc * (np.sqrt(y)[:, :, None] * scale)  # (count, d_k, N)
        z = np.zeros((hi - lo, p.d, grid.N + 1))
        np.cumsum(np.einsum("ijk,mki->mji", u_mid, db), axis=2, out=z[:, :, 1:])
        x = x0[None, :, None] + spec.sigma * z
        return y, np.einsum("nij,mjn->min", fm.V, x)

    parts = _run_blocks(block, seed, int(m), threads)
    ys = np.concatenate([q[0] for q in parts])
    paths = np.concatenate([q[1] for q in parts])
    return PathEnsemble(p, grid, paths, seed, ys)


def solution_s_transform_path(spec: LinearSystemSpec, fm: FundamentalMatrix, phi: GridFunction) -> np.ndarray:
    """S X_t(phi) at every node, (N+1) x d:

        V(t) V(0)^{-1} x0 + sigma V(t) int_0^t V(s)^{-1} C(phi, s) ds,
        C_k(phi, s) = E_{beta,beta}(<phi_k,phi_k>/2) / (beta E_beta(<phi_k,phi_k>/2)) (M_+ phi_k)(s).

    The s-integral is exact for piecewise-linear V^{-1} (cell moments of M_+ phi).
    """
    if phi.grid != fm.grid:
        raise ConstraintError("phi must be sampled on the grid of the fundamental matrix")
    if phi.d != spec.d:
        raise ConstraintError("test function dimension mismatch")
    ratio = s_ratios(spec.params, phi)
    I0, I1 = m_plus_cell_moments(spec.params.alpha, phi)  # (d_k, N)
    u = fm.Vinv  # (N+1, j, k)
    cell = u[:-1] * (I0 - I1).T[:, None, :] + u[1:] * I1.T[:, None, :]  # (N, j, k)
    integral = np.zeros((fm.grid.N + 1, spec.d), dtype=np.result_type(cell, ratio))
    integral[1:] = np.cumsum(cell @ ratio, axis=0)
    out = fm.V @ (_start(spec, fm)[None, :] + spec.sigma * integral)[:, :, None]
    out = out[:, :, 0]
    return out.real if not np.iscomplexobj(phi.values) else out


def solution_s_transform(spec: LinearSystemSpec, fm: FundamentalMatrix, phi: GridFunction, t: float) -> np.ndarray:
    """S X_t(phi) at a grid node t (d-vector)."""
    return solution_s_transform_path(spec, fm, phi)[fm.grid.index_of(t)]


def spec_from_dict(obj: dict):
    """(LinearSystemSpec, N, seed, paths) from the JSON layout

    {A: {"kind": "constant", "matrix": [[...]]} | {"kind": "samples", "times": [...], "matrices": [...]},
     sigma, x0, T, N, beta, alpha, seed, paths}.
    """
    try:
        x0 = np.atleast_1d(np.asarray(obj["x0"], dtype=float))
        params = ModelParams(float(obj["beta"]), float(obj["alpha"]), x0.size)
        a = obj["A"]
        if a.get("kind") == "constant":
            A = np.asarray(a["matrix"], dtype=float).reshape(x0.size, x0.size)
        elif a.get("kind") == "samples":
            A = SampledMatrix(a["times"], a["matrices"])
        else:
            raise ConstraintError("A.kind must be 'constant' or 'samples'")
        spec = LinearSystemSpec(params, A, float(obj["sigma"]), x0, float(obj["T"]))
        return spec, int(obj["N"]), int(obj.get("seed", 0)), int(obj.get("paths", 0))
    except KeyError as exc:
        raise ConstraintError(f"SDE spec is missing field {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, (ConstraintError, DomainError)):
            raise
        raise ConstraintError(f"malformed SDE spec: {exc}") from exc

