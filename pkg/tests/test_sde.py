from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg

from greybm.errors import ConstraintError, DomainError
from greybm.fracops import GridFunction, TimeGrid, kernel_R, m_minus_eval, m_plus_eval
from greybm.measure import ModelParams, noise_s_transform, s_transform_linear
from greybm.sampling import sample_vggbm, standard_error
from greybm.sde import (
    LinearSystemSpec,
    SampledMatrix,
    eta_functionals,
    fundamental_matrix,
    solution_s_transform,
    solution_s_transform_path,
    solve_mean_and_cov,
    solve_paths,
    spec_from_dict,
)

ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _rotation(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, s], [-s, c]])


def _random_phi(grid, rng, d=2):
    """Smooth admissible test functions with random coefficients."""
    funcs = []
    for _ in range(d):
        c = rng.normal(size=3) * 0.5
        funcs.append(lambda x, c=c: c[0] + c[1] * np.sin(3 * x) + c[2] * x**2)
    return GridFunction.from_callable(grid, *funcs)


# ---------------------------------------------------------------- fundamental matrix


def test_fundamental_scalar_exponential():
    spec = LinearSystemSpec(ModelParams(0.7, 0.8, 3), 0.4 * np.eye(3), 1.0, np.ones(3), 2.0)
    fm = fundamental_matrix(spec, 200)
    expected = np.exp(0.4 * fm.grid.nodes)[:, None, None] * np.eye(3)
    assert np.abs(fm.V - expected).max() <= 1e-10 * np.exp(0.8)
    zero = fundamental_matrix(LinearSystemSpec(ModelParams(0.7, 0.8, 2), np.zeros((2, 2)), 1.0, [0, 0], 1.0), 16)
    assert np.array_equal(zero.V, np.broadcast_to(np.eye(2), zero.V.shape))


def test_fundamental_rotation_and_inverse():
    spec = LinearSystemSpec(ModelParams(0.7, 1.2, 2), ROT, 1.0, [1.0, 0.0], 3.0)
    fm = fundamental_matrix(spec, 300)
    tol = fm.grid.dt**4 * spec.T / 60  # twice the RK4 truncation bound h^4 t / 120
    for n in range(0, 301, 30):
        t = fm.grid.nodes[n]
        assert np.abs(fm.V[n] - linalg.expm(ROT * t)).max() <= tol
        assert np.abs(fm.V[n] - _rotation(t)).max() <= tol
    assert np.abs(fm.V @ fm.Vinv - np.eye(2)).max() <= 1e-8


def test_fundamental_fourth_order():
    """Time-dependent A: global error drops ~16x per halving of dt."""
    A = lambda t: np.array([[0.0, 1.0 + t], [-1.0, -0.5 * t]])
    spec = LinearSystemSpec(ModelParams(0.7, 1.0, 2), A, 1.0, [1.0, 0.0], 2.0)
    ref = fundamental_matrix(spec, 2048).V[-1]
    errs = [np.abs(fundamental_matrix(spec, n).V[-1] - ref).max() for n in (16, 32, 64)]
    for e1, e2 in zip(errs, errs[1:]):
        assert e1 / e2 > 12.0


def test_sampled_matrix_interpolation():
    times = np.linspace(0.0, 1.0, 5)
    mats = np.stack([np.array([[0.0, 1.0 + t], [-1.0, 0.0]]) for t in times])
    sm = SampledMatrix(times, mats)
    # linear in t, so interpolation is exact
    assert np.allclose(sm(0.33), [[0.0, 1.33], [-1.0, 0.0]], atol=1e-14)
    f = lambda t: np.array([[0.0, 1.0 + t], [-1.0, 0.0]])
    p = ModelParams(0.7, 1.0, 2)
    a = fundamental_matrix(LinearSystemSpec(p, sm, 1.0, [1, 0], 1.0), 64)
    b = fundamental_matrix(LinearSystemSpec(p, f, 1.0, [1, 0], 1.0), 64)
    assert np.abs(a.V - b.V).max() <= 1e-13
    with pytest.raises(DomainError):
        sm(1.5)
    with pytest.raises(ConstraintError):
        SampledMatrix([0.0, 0.0], mats[:2])
    with pytest.raises(DomainError):
        SampledMatrix([0.0, 1.0], np.stack([mats[0], np.full((2, 2), np.nan)]))
    with pytest.raises(ConstraintError, match="cover"):
        LinearSystemSpec(p, sm, 1.0, [1, 0], 2.0)


def test_fundamental_errors():
    p = ModelParams(0.7, 1.0, 1)
    with pytest.raises(DomainError, match="blew up"):
        fundamental_matrix(LinearSystemSpec(p, [[40.0]], 1.0, [1.0], 1.0), 100)
    with pytest.raises(DomainError, match="non-finite"):
        LinearSystemSpec(p, [[np.inf]], 1.0, [1.0], 1.0)
    bad = LinearSystemSpec(p, lambda t: np.array([[np.nan if t > 0.5 else 0.0]]), 1.0, [1.0], 1.0)
    with pytest.raises(DomainError, match="non-finite"):
        fundamental_matrix(bad, 10)
    with pytest.raises(ConstraintError):
        LinearSystemSpec(p, np.eye(2), 1.0, [1.0], 1.0)
    with pytest.raises(ConstraintError):
        LinearSystemSpec(p, [[0.0]], 1.0, [1.0, 2.0], 1.0)


# ---------------------------------------------------------------- eta functionals


@pytest.mark.parametrize("alpha", [0.6, 1.0, 1.5])
def test_eta_zero_drift_is_indicator(alpha):
    spec = LinearSystemSpec(ModelParams(0.7, alpha, 2), np.zeros((2, 2)), 1.0, [0, 0], 1.0)
    fm = fundamental_matrix(spec, 64)
    for t in (0.25, 0.5, 1.0):
        etas = eta_functionals(spec, fm, t)
        for j, eta in enumerate(etas):
            norms = eta.norms_sq
            assert abs(norms[j] - t**alpha) <= 1e-10
            assert abs(norms[1 - j]) <= 1e-14
        s = 0.25
        other = eta_functionals(spec, fm, s)
        assert abs(etas[0].inner(other[0])[0] - kernel_R(alpha, t, s)) <= 1e-10
        if alpha == 1.0:
            assert abs(etas[0].inner(other[0])[0] - min(t, s)) <= 1e-12


def test_eta_symmetry_and_node_check():
    spec = LinearSystemSpec(ModelParams(0.7, 0.8, 2), ROT, 1.0, [1, 0], 1.0)
    fm = fundamental_matrix(spec, 64)
    etas = eta_functionals(spec, fm, 0.75)
    g01 = etas[0].inner(etas[1]).sum()
    g10 = etas[1].inner(etas[0]).sum()
    assert abs(g01 - g10) <= 1e-12
    with pytest.raises(DomainError):
        eta_functionals(spec, fm, 0.123)


# ---------------------------------------------------------------- mean and covariance


def test_zero_sigma_gives_ode_mean():
    spec = LinearSystemSpec(ModelParams(0.7, 0.8, 2), ROT, 0.0, [1.0, 0.5], 2.0)
    fm = fundamental_matrix(spec, 128)
    mean, cov = solve_mean_and_cov(spec, fm)
    assert np.all(cov == 0.0)
    expected = np.stack([_rotation(t) @ spec.x0 for t in fm.grid.nodes])
    assert np.abs(mean - expected).max() <= fm.grid.dt**4 * spec.T / 60


@pytest.mark.parametrize("beta,alpha", [(0.7, 0.8), (0.4, 1.5), (1.0, 1.0)])
def test_zero_drift_variance(beta, alpha):
    sigma = 1.7
    spec = LinearSystemSpec(ModelParams(beta, alpha, 1), [[0.0]], sigma, [0.3], 1.0)
    fm = fundamental_matrix(spec, 128)
    mean, cov = solve_mean_and_cov(spec, fm)
    t = fm.grid.nodes
    assert np.abs(cov[:, 0, 0] - sigma**2 * t**alpha / math.gamma(beta + 1)).max() <= 1e-6
    assert np.all(mean[:, 0] == 0.3)


def test_ornstein_uhlenbeck():
    a, sigma = 1.0, 1.0
    spec = LinearSystemSpec(ModelParams(1.0, 1.0, 1), [[-a]], sigma, [2.0], 2.0)
    fm = fundamental_matrix(spec, 1000)
    mean, cov = solve_mean_and_cov(spec, fm)
    t = fm.grid.nodes
    assert np.abs(cov[:, 0, 0] - sigma**2 * (1 - np.exp(-2 * a * t)) / (2 * a)).max() <= 1e-4
    assert np.abs(mean[:, 0] - 2.0 * np.exp(-a * t)).max() <= 1e-10


def test_covariance_psd_and_symmetric():
    A = lambda t: np.array([[-0.5, 1.0 + t], [-1.0, 0.2]])
    spec = LinearSystemSpec(ModelParams(0.6, 0.7, 2), A, 0.9, [1, -1], 1.5)
    _, cov = solve_mean_and_cov(spec, fundamental_matrix(spec, 96))
    assert np.array_equal(cov, np.swapaxes(cov, 1, 2))
    assert np.linalg.eigvalsh(cov).min() >= -1e-8


@pytest.mark.parametrize("alpha", [0.8, 1.2])
def test_grid_refinement(alpha):
    """Halving dt changes the covariance nodes by at most C dt^min(1, alpha)."""
    spec = LinearSystemSpec(ModelParams(0.7, alpha, 2), ROT, 1.0, [1, 0], 1.0)
    covs = [solve_mean_and_cov(spec, fundamental_matrix(spec, n))[1][:: n // 32] for n in (32, 64, 128, 256)]
    diffs = [np.abs(b - a).max() for a, b in zip(covs, covs[1:])]
    rate = 2 ** min(1.0, alpha)
    for d1, d2 in zip(diffs, diffs[1:]):
        assert d1 / d2 >= 0.9 * rate
    assert diffs[-1] <= 1e-4


# ---------------------------------------------------------------- paths


def test_paths_zero_sigma_identical_to_mean():
    spec = LinearSystemSpec(ModelParams(0.7, 0.8, 2), ROT, 0.0, [1.0, 0.5], 1.0)
    fm = fundamental_matrix(spec, 32)
    mean, _ = solve_mean_and_cov(spec, fm)
    ens = solve_paths(spec, fm, 50, seed=3)
    assert ens.paths.shape == (50, 2, 33)
    assert np.all(ens.paths == mean.T[None])


def test_paths_zero_drift_match_vggbm():
    p = ModelParams(0.7, 0.8, 1)
    spec = LinearSystemSpec(p, [[0.0]], 1.3, [0.4], 1.0)
    fm = fundamental_matrix(spec, 64)
    ens = solve_paths(spec, fm, 1500, seed=21)
    ref = sample_vggbm(p, TimeGrid(1.0, 64), 1500, seed=21)
    assert np.allclose(ens.paths, 0.4 + 1.3 * ref.paths, rtol=1e-12, atol=1e-12)
    assert np.array_equal(ens.subordinators, ref.subordinators)


def test_paths_reproducible_across_threads():
    spec = LinearSystemSpec(ModelParams(0.7, 1.2, 2), ROT, 1.0, [1, 0], 1.0)
    fm = fundamental_matrix(spec, 32)
    a = solve_paths(spec, fm, 2500, seed=5, threads=1)
    b = solve_paths(spec, fm, 2500, seed=5, threads=4)
    assert a.checksum() == b.checksum()


def test_paths_rotation_covariance():
    T = 2.0
    spec = LinearSystemSpec(ModelParams(0.7, 1.2, 2), ROT, 1.0, [1.0, 0.0], T)
    fm = fundamental_matrix(spec, 512)
    mean, cov = solve_mean_and_cov(spec, fm)
    ens = solve_paths(spec, fm, 10_000, seed=11)
    for t in (T / 4, T / 2, T):
        n = fm.grid.index_of(t)
        x = ens.paths[:, :, n]
        for i in range(2):
            assert abs(x[:, i].mean() - mean[n, i]) <= 3 * standard_error(x[:, i])
            for j in range(i, 2):
                prod = (x[:, i] - mean[n, i]) * (x[:, j] - mean[n, j])
                assert abs(prod.mean() - cov[n, i, j]) <= 3 * standard_error(prod)


# ---------------------------------------------------------------- S-transform


def test_s_transform_zero_phi():
    spec = LinearSystemSpec(ModelParams(0.7, 0.8, 2), ROT, 1.3, [1.0, 0.5], 1.0)
    fm = fundamental_matrix(spec, 64)
    S = solution_s_transform_path(spec, fm, GridFunction.zeros(fm.grid, 2))
    mean, _ = solve_mean_and_cov(spec, fm)
    assert np.abs(S - mean).max() <= 1e-14
    assert np.abs(solution_s_transform(spec, fm, GridFunction.zeros(fm.grid, 2), 0.5) - mean[32]).max() <= 1e-14


def test_s_transform_classical_ou():
    """beta = alpha = 1, A = -a: S X_t(phi) = e^{-at} x0 + sigma int_0^t e^{-a(t-s)} phi(s) ds."""
    a, sigma = 0.7, 1.1
    spec = LinearSystemSpec(ModelParams(1.0, 1.0, 1), [[-a]], sigma, [0.5], 1.0)
    fm = fundamental_matrix(spec, 1024)  # V^{-1} is integrated as a piecewise-linear function: O(dt^2)
    phi = GridFunction.from_callable(fm.grid, lambda x: np.cos(2 * x) + x)
    S = solution_s_transform_path(spec, fm, phi)[:, 0]
    for t in (0.25, 0.5, 1.0):
        f = lambda s: np.exp(-a * (t - s)) * (np.cos(2 * s) + s)
        expected = np.exp(-a * t) * 0.5 + sigma * integrate.quad(f, 0, t)[0]
        assert abs(S[fm.grid.index_of(t)] - expected) <= 1e-6


def test_s_transform_matches_eta_representation():
    p = ModelParams(0.7, 1.2, 2)
    spec = LinearSystemSpec(p, ROT, 0.8, [1.0, 0.5], 1.0)
    fm = fundamental_matrix(spec, 256)
    rng = np.random.default_rng(4)
    for _ in range(3):
        phi = _random_phi(fm.grid, rng)
        S = solution_s_transform_path(spec, fm, phi)
        for t in (0.25, 0.5, 1.0):
            n = fm.grid.index_of(t)
            lin = np.array([s_transform_linear(p, eta, phi, vector=False) for eta in eta_functionals(spec, fm, t)])
            alt = fm.V[n] @ (spec.x0 + spec.sigma * lin)
            assert np.abs(alt - S[n]).max() <= 1e-4


def test_s_transform_ode_residual():
    p = ModelParams(0.7, 1.2, 2)
    spec = LinearSystemSpec(p, ROT, 0.8, [1.0, 0.5], 1.0)
    fm = fundamental_matrix(spec, 1024)
    h = fm.grid.dt
    rng = np.random.default_rng(0)
    for _ in range(5):
        phi = _random_phi(fm.grid, rng)
        S = solution_s_transform_path(spec, fm, phi)
        for t in np.linspace(1 / 16, 1 - 1 / 16, 16):
            n = int(round(t / h))
            fd = (S[n + 1] - S[n - 1]) / (2 * h)
            res = fd - ROT @ S[n] - spec.sigma * noise_s_transform(p, phi, fm.grid.nodes[n])
            assert np.abs(res).max() <= 1e-3


def test_s_transform_grid_mismatch():
    spec = LinearSystemSpec(ModelParams(0.7, 1.2, 2), ROT, 1.0, [1, 0], 1.0)
    fm = fundamental_matrix(spec, 32)
    with pytest.raises(ConstraintError):
        solution_s_transform_path(spec, fm, GridFunction.zeros(TimeGrid(1.0, 16), 2))
    with pytest.raises(ConstraintError):
        solution_s_transform_path(spec, fm, GridFunction.zeros(fm.grid, 1))


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("alpha", [0.8, 1.2])
def test_duality_two_ways(alpha):
    """<phi_k, M_-(1_[0,t) u_jk)> = <M_+ phi_k, 1_[0,t) u_jk>, and both match LinearFunctional.pair."""
    spec = LinearSystemSpec(ModelParams(0.7, alpha, 2), ROT, 1.0, [1, 0], 1.0)
    fm = fundamental_matrix(spec, 256)
    phi = GridFunction.from_callable(fm.grid, lambda x: np.cos(2 * x) + x, lambda x: x**2 - 0.3)
    t = 0.5
    nodes = fm.grid.nodes
    for j, eta in enumerate(eta_functionals(spec, fm, t)):
        paired = eta.pair(phi)
        for k in range(2):
            u = fm.u(j, k)
            lhs = integrate.quad(
                lambda x: np.interp(x, nodes, phi.values[k]) * m_minus_eval(alpha, u, fm.grid, np.array([x]), t=t)[0],
                0,
                t,
                limit=400,
            )[0]
            rhs = integrate.quad(
                lambda x: m_plus_eval(alpha, phi, np.array([x]))[k, 0] * np.interp(x, nodes, u), 0, t, limit=400
            )[0]
            assert abs(lhs - rhs) <= 1e-4
            assert abs(paired[k] - rhs) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(
    a=st.floats(-1.0, 1.0),
    sigma=st.floats(0.1, 2.0),
    beta=st.floats(0.2, 1.0),
    alpha=st.floats(0.3, 1.8),
)
def test_scalar_covariance_positive_and_scaling(a, sigma, beta, alpha):
    """Var X_t >= 0, and scales exactly with sigma^2 / Gamma(beta+1)."""
    spec = LinearSystemSpec(ModelParams(beta, alpha, 1), [[a]], sigma, [1.0], 1.0)
    fm = fundamental_matrix(spec, 32)
    _, cov = solve_mean_and_cov(spec, fm)
    unit = LinearSystemSpec(ModelParams(1.0, alpha, 1), [[a]], 1.0, [1.0], 1.0)
    _, cov1 = solve_mean_and_cov(unit, fm)
    assert np.all(cov[:, 0, 0] >= -1e-12)
    assert np.allclose(cov, sigma**2 / math.gamma(beta + 1) * cov1, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- JSON spec


def test_spec_from_dict():
    obj = {
        "A": {"kind": "constant", "matrix": [[0, 1], [-1, 0]]},
        "sigma": 1.0,
        "x0": [1, 0],
        "T": 1.0,
        "N": 64,
        "beta": 0.7,
        "alpha": 1.2,
        "seed": 9,
        "paths": 10,
    }
    spec, N, seed, paths = spec_from_dict(obj)
    assert (N, seed, paths) == (64, 9, 10) and spec.d == 2
    assert np.array_equal(spec.A, ROT)
    sampled = dict(obj, A={"kind": "samples", "times": [0, 1], "matrices": [[[0, 1], [-1, 0]]] * 2})
    assert isinstance(spec_from_dict(sampled)[0].A, SampledMatrix)
    with pytest.raises(ConstraintError, match="missing"):
        spec_from_dict({k: v for k, v in obj.items() if k != "sigma"})
    with pytest.raises(ConstraintError):
        spec_from_dict(dict(obj, A={"kind": "weird"}))
    with pytest.raises(ConstraintError, match="beta out of range"):
        spec_from_dict(dict(obj, beta=1.5))
    with pytest.raises(ConstraintError):
        spec_from_dict(dict(obj, A={"kind": "constant", "matrix": [[1, 2, 3]]}))
