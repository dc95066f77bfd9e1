"""Exact-in-law simulation: M-Wright variables, fBm, vggBm paths, linear functionals.

vggBm is simulated through subordination, B_k(t) = sqrt(Y_k) * fBm_k(t) with
Y_k ~ M_beta independent of the fBm.  Paths are produced in fixed-size blocks;
block b draws from SeedSequence([seed, stream, b]) so an ensemble depends only
on (seed, size, grid), never on how many worker threads ran the blocks.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConstraintError, DomainError
from .fracops import TimeGrid
from .io import atomic_write_bytes
from .measure import LinearFunctional, ModelParams

__all__ = [
    "SeedSpec",
    "PathEnsemble",
    "thread_count",
    "sample_mwright",
    "sample_fbm",
    "sample_vggbm",
    "map_vggbm_blocks",
    "sample_linear_functional",
    "sample_linear_functionals",
    "write_vggb",
    "read_vggb",
    "array_checksum",
]

BLOCK = 1024
VGGB_MAGIC = b"VGGB"
VGGB_VERSION = 1

# stream tags keep the different generators' substreams apart
_STREAM_MWRIGHT = 1
_STREAM_FBM = 2
_STREAM_VGGBM = 3
_STREAM_FUNCTIONAL = 4


def thread_count() -> int:
    """Worker threads from GREYBM_THREADS (default: available CPUs)."""
    env = os.environ.get("GREYBM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConstraintError(f"GREYBM_THREADS must be a positive integer, got {env!r}") from exc
        if n < 1:
            raise ConstraintError("GREYBM_THREADS must be >= 1")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus the rule path index -> substream.

    Paths are grouped in blocks of ``block`` consecutive indices; block b of
    stream s uses ``SeedSequence([master_seed, s, b])``.
    """

    master_seed: int
    block: int = BLOCK

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConstraintError("master_seed must fit in 64 unsigned bits")
        if self.block < 1:
            raise ConstraintError("block size must be positive")

    def rng(self, stream: int, block_idx: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.master_seed), stream, block_idx]))

    def blocks(self, m: int):
        """(block index, first path, end path) covering m paths."""
        return [(b, lo, min(lo + self.block, m)) for b, lo in enumerate(range(0, m, self.block))]


def as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))


def _run_blocks(fn, seed: SeedSpec, m: int, threads: int | None = None):
    """Evaluate fn(block_idx, lo, hi) for every block; results in block order."""
    blocks = seed.blocks(m)
    workers = thread_count() if threads is None else threads
    if workers <= 1 or len(blocks) <= 1:
        return [fn(*b) for b in blocks]
    with ThreadPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


# ---------------------------------------------------------------- M-Wright


def _kanter_y(beta: float, rng: np.random.Generator, shape):
    """Y = S^{-beta} for S one-sided beta-stable (Kanter's representation).

    Y = E^{1-beta} sin(U) / (sin((1-beta)U)^{1-beta} sin(beta U)^beta),
    U ~ Uniform(0, pi), E ~ Exp(1).
    """
    if beta == 1.0:
        return np.ones(shape)
    u = np.pi * rng.random(shape)
    e = rng.standard_exponential(shape)
    # guard the measure-zero endpoint u == 0
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    log_y = (
        (1.0 - beta) * np.log(e)
        + np.log(np.sin(u))
        - (1.0 - beta) * np.log(np.sin((1.0 - beta) * u))
        - beta * np.log(np.sin(beta * u))
    )
    return np.exp(log_y)


def sample_mwright(beta: float, n: int, seed, threads: int | None = None) -> np.ndarray:
    """n i.i.d. draws with density M_beta (beta in (0, 1]; beta = 1 gives ones)."""
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta out of range (0, 1]: {beta}")
    seed = as_seed(seed)
    parts = _run_blocks(lambda b, lo, hi: _kanter_y(beta, seed.rng(_STREAM_MWRIGHT, b), hi - lo), seed, int(n), threads)
    return np.concatenate(parts) if parts else np.empty(0)


# ---------------------------------------------------------------- fBm


def _fgn_autocov(H: float, n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * H) + np.abs(k - 1) ** (2 * H) - 2 * k ** (2 * H))


def _circulant_eigenvalues(g: np.ndarray, N: int) -> np.ndarray:
    row = np.concatenate([g[: N + 1], g[N - 1 : 0 : -1]])  # length 2N
    return np.fft.fft(row).real


@lru_cache(maxsize=32)
def _fgn_factor(H: float, N: int):
    """sqrt of circulant eigenvalues, or a Cholesky factor if the embedding is not PSD."""
    g = _fgn_autocov(H, N + 1)
    lam = _circulant_eigenvalues(g, N)
    if lam.min() >= -1e-10 * lam.max():
        return "circulant", np.sqrt(np.maximum(lam, 0.0) / (2 * N))
    warnings.warn(
        f"circulant embedding not PSD for H={H}, N={N}; using dense Cholesky",
        RuntimeWarning,
        stacklevel=3,
    )
    idx = np.arange(N)
    C = g[np.abs(idx[:, None] - idx[None, :])]
    return "cholesky", np.linalg.cholesky(C)


def _fgn(H: float, N: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """m independent unit-step fGn sequences of length N (rows)."""
    kind, fac = _fgn_factor(float(H), int(N))
    if kind == "cholesky":
        return rng.standard_normal((m, N)) @ fac.T
    half = (m + 1) // 2
    z = rng.standard_normal((half, 2 * N)) + 1j * rng.standard_normal((half, 2 * N))
    w = np.fft.fft(fac * z, axis=1)[:, :N]
    # real and imaginary parts are independent with the target covariance
    return np.concatenate([w.real, w.imag])[:m]


def _check_H(H):
    if not 0.0 < H < 1.0:
        raise DomainError(f"Hurst parameter out of range (0, 1): {H}")


def sample_fbm(H: float, grid: TimeGrid, m: int, seed, threads: int | None = None) -> np.ndarray:
    """m fBm paths on ``grid`` (array m x (N+1)), starting at 0."""
    _check_H(H)
    seed = as_seed(seed)
    scale = grid.dt**H

    def block(b, lo, hi):
        inc = _fgn(H, grid.N, hi - lo, seed.rng(_STREAM_FBM, b)) * scale
        out = np.zeros((hi - lo, grid.N + 1))
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out

    return np.concatenate(_run_blocks(block, seed, int(m), threads))


# ---------------------------------------------------------------- vggBm


def vggbm_block_draws(params: ModelParams, grid: TimeGrid, seed: SeedSpec, b: int, count: int):
    """Subordinators (count x d) and unit-step fGn increments (count x d x N) of block b.

    Shared by ``sample_vggbm`` and the SDE path solver so both see the same noise.
    """
    rng = seed.rng(_STREAM_VGGBM, b)
    y = _kanter_y(params.beta, rng, (count, params.d))
    inc = _fgn(params.alpha / 2, grid.N, count * params.d, rng).reshape(count, params.d, grid.N)
    return y, inc


@dataclass
class PathEnsemble:
    """M paths of the d-dimensional process on a grid: paths[m, k, i] = B_k(t_i)."""

    params: ModelParams
    grid: TimeGrid
    paths: np.ndarray
    seed: SeedSpec | None
    subordinators: np.ndarray

    @property
    def M(self) -> int:
        return self.paths.shape[0]

    def at(self, t: float) -> np.ndarray:
        """Values at a grid node, shape (M, d)."""
        return self.paths[:, :, self.grid.index_of(t)]

    def checksum(self) -> str:
        return array_checksum(self.paths, self.subordinators)


def array_checksum(*arrays) -> str:
    """sha256 over the little-endian float64 bytes of the arrays, in order."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def vggbm_block_paths(params: ModelParams, grid: TimeGrid, seed: SeedSpec, b: int, count: int):
    """Subordinators (count x d) and paths (count x d x (N+1)) of block b."""
    y, inc = vggbm_block_draws(params, grid, seed, b, count)
    out = np.zeros((count, params.d, grid.N + 1))
    np.cumsum(inc, axis=2, out=out[:, :, 1:])
    out *= np.sqrt(y)[:, :, None] * grid.dt ** (params.alpha / 2)
    return y, out


def map_vggbm_blocks(fn, params: ModelParams, grid: TimeGrid, m: int, seed, threads: int | None = None):
    """[fn(paths) for each block of the ensemble sample_vggbm would build], in block order.

    Lets statistics be reduced block by block without holding all M paths.
    """
    seed = as_seed(seed)
    return _run_blocks(lambda b, lo, hi: fn(vggbm_block_paths(params, grid, seed, b, hi - lo)[1]), seed, int(m), threads)


def sample_vggbm(params: ModelParams, grid: TimeGrid, m: int, seed, threads: int | None = None) -> PathEnsemble:
    """m paths of vggBm: component k is sqrt(Y_k) times an independent fBm with H = alpha/2."""
    seed = as_seed(seed)
    parts = _run_blocks(lambda b, lo, hi: vggbm_block_paths(params, grid, seed, b, hi - lo), seed, int(m), threads)
    ys = np.concatenate([p[0] for p in parts])
    paths = np.concatenate([p[1] for p in parts])
    return PathEnsemble(params, grid, paths, seed, ys)


# ---------------------------------------------------------------- linear functionals


def sample_linear_functionals(params: ModelParams, etas, m: int, seed, threads: int | None = None) -> np.ndarray:
    """Joint samples of G(., eta^(1)), ..., G(., eta^(J)); shape (m, J, d).

    Per coordinate k the J values are sqrt(Y_k) * N(0, Gram_k) with
    Gram_k[i, j] = <eta^(i)_k, eta^(j)_k> and one Y_k shared across the J functionals.
    """
    etas = list(etas)
    d = params.d
    if any(e.d != d for e in etas):
        raise ConstraintError("all functionals must have d components")
    J = len(etas)
    gram = np.empty((d, J, J))
    for i in range(J):
        for j in range(i, J):
            gram[:, i, j] = gram[:, j, i] = etas[i].inner(etas[j])
    factors = []
    for k in range(d):
        w, v = np.linalg.eigh(gram[k])
        if w.min() < -1e-10 * max(1.0, w.max()):
            raise ConstraintError("Gram matrix of the functionals is not positive semidefinite")
        factors.append(v * np.sqrt(np.maximum(w, 0.0)))
    fac = np.stack(factors)  # d x J x J
    seed = as_seed(seed)

    def block(b, lo, hi):
        rng = seed.rng(_STREAM_FUNCTIONAL, b)
        n = hi - lo
        y = _kanter_y(params.beta, rng, (n, d))
        z = rng.standard_normal((n, d, J))
        g = np.einsum("kij,nkj->nik", fac, z)
        return g * np.sqrt(y)[:, None, :]

    return np.concatenate(_run_blocks(block, seed, int(m), threads))


def sample_linear_functional(params: ModelParams, eta: LinearFunctional, m: int, seed, threads: int | None = None):
    """m samples of the d-vector G(., eta); shape (m, d)."""
    return sample_linear_functionals(params, [eta], m, seed, threads)[:, 0, :]


# ---------------------------------------------------------------- binary format


def write_vggb(path, ens: PathEnsemble) -> None:
    """Little-endian: b"VGGB", u32 version, u64 M, d, N, then M*d*(N+1) f64 in path-major order."""
    M, d, n1 = ens.paths.shape
    header = VGGB_MAGIC + struct.pack("<IQQQ", VGGB_VERSION, M, d, n1 - 1)
    atomic_write_bytes(path, header + np.ascontiguousarray(ens.paths, dtype="<f8").tobytes())


def read_vggb(path) -> np.ndarray:
    """Paths array (M, d, N+1) from a VGGB file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != VGGB_MAGIC:
        raise DomainError("not a VGGB file (bad magic)")
    version, M, d, N = struct.unpack_from("<IQQQ", raw, 4)
    if version != VGGB_VERSION:
        raise DomainError(f"unsupported VGGB version {version}")
    off = 4 + struct.calcsize("<IQQQ")
    expected = M * d * (N + 1) * 8
    if len(raw) - off != expected:
        raise DomainError(f"VGGB payload has {len(raw) - off} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8", offset=off).reshape(M, d, N + 1).copy()


def ensemble_from_arrays(params, grid, paths, subordinators=None):
    sub = np.ones(paths.shape[:2]) if subordinators is None else subordinators
    return PathEnsemble(params, grid, paths, None, sub)


def standard_error(x: np.ndarray, axis=0):
    x = np.asarray(x)
    return x.std(axis=axis, ddof=1) / math.sqrt(x.shape[axis])
