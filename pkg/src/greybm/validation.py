"""The acceptance suite as data: each criterion returns measured values, targets and tolerances.

Two tiers: ``fast`` runs the closed-form and quadrature identities only; ``mc``
adds every Monte Carlo check.  Verdicts depend only on (tier, seed) — the
thread count changes wall time, never a number — and the report carries the
checksums of every sampled ensemble so runs can be compared bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import __version__
from .fracops import GridFunction, indicator_inner_quadrature, kernel_R
from .localtime import SELF_INTERSECTION, LocalTimeQuery, closed_form, lt_monte_carlo_sampled
from .measure import (
    LinearFunctional,
    ModelParams,
    char_fn,
    donsker_expectation,
    donsker_t_transform,
    even_moment,
    noise_s_transform,
)
from .sampling import (
    array_checksum,
    sample_linear_functional,
    sample_linear_functionals,
    sample_mwright,
    standard_error,
    thread_count,
)
from .sde import LinearSystemSpec, fundamental_matrix, solution_s_transform_path, solve_mean_and_cov, solve_paths
from .specfun import mittag_leffler, mittag_leffler_two

__all__ = ["Check", "CriterionResult", "CRITERIA", "run_validation", "criterion_seed"]

FAST, MC = "fast", "mc"


@dataclass
class Check:
    name: str
    measured: float
    target: float
    tolerance: float
    kind: str  # "abs", "rel", "se" (|measured - target| <= tolerance * SE), "outside" (|target| > tolerance)
    passed: bool

    def as_dict(self):
        return {
            "name": self.name,
            "measured": self.measured,
            "target": self.target,
            "tolerance": self.tolerance,
            "kind": self.kind,
            "passed": self.passed,
        }


def _abs(name, measured, target, tol):
    measured, target = float(measured), float(target)
    return Check(name, measured, target, tol, "abs", bool(abs(measured - target) <= tol))


def _rel(name, measured, target, tol):
    measured, target = float(measured), float(target)
    return Check(name, measured, target, tol, "rel", bool(abs(measured - target) <= tol * abs(target)))


def _se(name, samples, target, k=3.0):
    """Sample mean within k standard errors of target; tolerance is reported as k * SE."""
    samples = np.asarray(samples, dtype=float)
    m, se = float(samples.mean()), float(standard_error(samples))
    return Check(name, m, float(target), k * se, "se", bool(abs(m - target) <= k * se))


@dataclass
class CriterionResult:
    id: int
    title: str
    runtime_limit: float
    checks: list = field(default_factory=list)
    checksums: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self):
        return {
            "id": self.id,
            "title": self.title,
            "passed": self.passed,
            "checks": [c.as_dict() for c in self.checks],
            "checksums": self.checksums,
        }


def criterion_seed(seed: int, criterion: int) -> int:
    """Independent per-criterion seed derived from the run seed."""
    return int(np.random.SeedSequence([int(seed), int(criterion)]).generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------- 1. special functions


def _c1(res: CriterionResult, tier, seed, threads):
    zs = [r * np.exp(1j * th) for r in (1.0, 5.0, 10.0, 15.0, 20.0) for th in np.linspace(0, 2 * np.pi, 25)[:-1]]
    zs += list(np.linspace(-20.0, 20.0, 81))
    err = max(abs(mittag_leffler(1.0, z) / np.exp(z) - 1) for z in zs)
    res.checks.append(_abs("max rel err E_1(z) vs exp(z), |z| <= 20", err, 0.0, 1e-12))
    res.checks.append(_rel("E_0.5(-1) vs e erfc(1)", mittag_leffler(0.5, -1.0), math.e * special.erfc(1.0), 1e-10))
    rng = np.random.default_rng(criterion_seed(seed, 1))
    h = 1e-4
    for beta in (0.3, 0.6, 0.9):
        worst = 0.0
        for z in rng.uniform(-5.0, 1.0, 20):
            fd = beta * (mittag_leffler(beta, z + h) - mittag_leffler(beta, z - h)) / (2 * h)
            worst = max(worst, abs(fd - mittag_leffler_two(beta, beta, z)))
        res.checks.append(_abs(f"derivative identity residual, beta={beta}", worst, 0.0, 1e-6))


# ---------------------------------------------------------------- 2. kernel identity


def _c2(res: CriterionResult, tier, seed, threads):
    pairs = [(t, s) for t in (0.25, 0.5, 1.0) for s in (0.3, 0.7, 1.0)]
    for alpha in (0.5, 1.0, 1.5):
        worst = max(abs(indicator_inner_quadrature(alpha, t, s) - kernel_R(alpha, t, s)) for t, s in pairs)
        res.checks.append(_abs(f"kernel identity max error, alpha={alpha}", worst, 0.0, 1e-6))


# ---------------------------------------------------------------- 3. M-Wright moments


def _c3(res: CriterionResult, tier, seed, threads):
    for beta in (0.3, 0.5, 0.8):
        y = sample_mwright(beta, 1_000_000, criterion_seed(seed, 3), threads)
        res.checksums[f"mwright_beta{beta}"] = array_checksum(y)
        for n in (1, 2, 3):
            res.checks.append(_se(f"E[Y^{n}], beta={beta}", y**n, math.factorial(n) / math.gamma(beta * n + 1)))


# ---------------------------------------------------------------- 4. vggBm marginals


def _c4(res: CriterionResult, tier, seed, threads):
    beta, alpha = 0.7, 0.8
    p = ModelParams(beta, alpha, 2)
    times = (0.25, 1.0)
    etas = [LinearFunctional.vggbm(alpha, t, 2) for t in times]
    g = sample_linear_functionals(p, etas, 100_000, criterion_seed(seed, 4), threads)  # (M, J, d)
    res.checksums["vggbm_marginals"] = array_checksum(g)
    for j, t in enumerate(times):
        for k in range(2):
            res.checks.append(_se(f"Var X_{k + 1}({t})", g[:, j, k] ** 2, t**alpha / math.gamma(beta + 1)))
        x = g[:, j, :]
        for pv in (0.5, 1.0, 2.0):
            target = char_fn(p, etas[j], [pv, pv])
            res.checks.append(_se(f"Re ECF p=({pv},{pv}), t={t}", np.cos(pv * x.sum(axis=1)), target))
            res.checks.append(_se(f"Im ECF p=({pv},{pv}), t={t}", np.sin(pv * x.sum(axis=1)), 0.0))
    x2 = g[:, 1, :] ** 2
    c = (x2[:, 0] - x2[:, 0].mean()) * (x2[:, 1] - x2[:, 1].mean())
    cov_check = _se("Cov(X_1(1)^2, X_2(1)^2)", c, 0.0)
    res.checks.append(cov_check)
    shared = 2 / math.gamma(2 * beta + 1) - 1 / math.gamma(beta + 1) ** 2
    res.checks.append(
        Check("shared-subordinator prediction outside the band", shared, 0.0, cov_check.tolerance, "outside",
              bool(abs(shared) > cov_check.tolerance))
    )


# ---------------------------------------------------------------- 5. moment formula


def _moment_1d(beta, x, j):
    return math.factorial(2 * j) / 2**j * x**j / math.gamma(beta * j + 1)


def _c5(res: CriterionResult, tier, seed, threads):
    rng = np.random.default_rng(criterion_seed(seed, 5))
    for beta in (0.3, 0.7, 1.0):
        a, b = rng.uniform(0.2, 2.0, 2)
        eta = LinearFunctional.scaled(1.0, [math.sqrt(a), math.sqrt(b)], 1.0)
        for n in (1, 2, 3):
            brute = sum(math.comb(2 * n, 2 * j) * _moment_1d(beta, a, j) * _moment_1d(beta, b, n - j) for j in range(n + 1))
            res.checks.append(_rel(f"E[<.,eta>^{2 * n}], beta={beta}", even_moment(ModelParams(beta, 1.0, 2), eta, n), brute, 1e-12))


# ---------------------------------------------------------------- 6. Donsker delta


def _c6(res: CriterionResult, tier, seed, threads):
    beta = 0.7
    p = ModelParams(beta, 1.0, 1)
    eta = LinearFunctional.scaled(1.0, [1.0], 1.0)
    target = 2**-0.5 / math.gamma(1 - beta / 2)
    res.checks.append(_rel("closed form vs 2^{-1/2}/Gamma(0.65)", donsker_expectation(p, eta), target, 1e-12))
    res.checks.append(_abs("quadrature T-transform at phi=0", donsker_t_transform(p, eta, 0.0).real, target, 1e-6))
    if tier != MC:
        return
    x = sample_linear_functional(p, eta, 200_000, criterion_seed(seed, 6), threads)[:, 0]
    res.checksums["donsker_samples"] = array_checksum(x)
    for h in (0.05, 0.025, 0.0125):
        kde = np.exp(-0.5 * (x / h) ** 2).mean() / (h * math.sqrt(2 * math.pi))
        res.checks.append(_rel(f"KDE at 0, bandwidth {h}", kde, target, 0.05))


# ---------------------------------------------------------------- 7. local time


def _c7(res: CriterionResult, tier, seed, threads):
    q = LocalTimeQuery(ModelParams(1.0, 1.0, 1), 1.0)
    res.checks.append(_rel("E L(0,1), beta=alpha=1", closed_form(q), math.sqrt(2 / math.pi), 1e-12))
    qs = LocalTimeQuery(ModelParams(1.0, 1.0, 1), 1.0, kind=SELF_INTERSECTION)
    res.checks.append(_rel("E L^s(1), beta=alpha=1", closed_form(qs), 2**1.5 / (3 * math.sqrt(math.pi)), 1e-12))
    if tier != MC:
        return
    s = criterion_seed(seed, 7)
    eps, N, M = 0.02, 2**10, 20_000
    q = LocalTimeQuery(ModelParams(0.7, 0.8, 1), 1.0)
    est = lt_monte_carlo_sampled(q, eps, N, M, s, threads)
    res.checksums["localtime_beta0.7_alpha0.8"] = est.checksum
    res.checks.append(_rel("MC E L(0,1), beta=0.7 alpha=0.8", est.value, closed_form(q), 0.05))
    for beta, alpha in ((1.0, 1.0), (0.7, 0.8)):
        qs = LocalTimeQuery(ModelParams(beta, alpha, 1), 1.0, kind=SELF_INTERSECTION)
        est = lt_monte_carlo_sampled(qs, eps, N, M, s, threads)
        res.checksums[f"localtime_beta{beta}_alpha{alpha}"] = est.checksum
        res.checks.append(_rel(f"MC E L^s(1), beta={beta} alpha={alpha}", est.value, closed_form(qs), 0.08))


# ---------------------------------------------------------------- 8. linear SDE


_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _c8(res: CriterionResult, tier, seed, threads):
    s = criterion_seed(seed, 8)
    # (a) A = 0, d = 1
    beta, alpha, sigma = 0.7, 0.8, 1.5
    spec = LinearSystemSpec(ModelParams(beta, alpha, 1), [[0.0]], sigma, [0.0], 1.0)
    fm = fundamental_matrix(spec, 256)
    mean, cov = solve_mean_and_cov(spec, fm)
    t = fm.grid.nodes
    res.checks.append(_abs("(a) analytic Var vs sigma^2 t^alpha/Gamma(beta+1)", np.abs(cov[:, 0, 0] - sigma**2 * t**alpha / math.gamma(beta + 1)).max(), 0.0, 1e-6))
    if tier == MC:
        ens = solve_paths(spec, fm, 10_000, s, threads)
        res.checksums["sde_zero_drift"] = ens.checksum()
        for tp in (0.25, 0.5, 1.0):
            x = ens.at(tp)[:, 0]
            res.checks.append(_se(f"(a) MC Var X({tp})", x**2, sigma**2 * tp**alpha / math.gamma(beta + 1)))
    # (b) Ornstein-Uhlenbeck
    spec = LinearSystemSpec(ModelParams(1.0, 1.0, 1), [[-1.0]], 1.0, [1.0], 2.0)
    fm = fundamental_matrix(spec, 1000)
    _, cov = solve_mean_and_cov(spec, fm)
    t = fm.grid.nodes
    res.checks.append(_abs("(b) OU covariance vs (1 - e^{-2t})/2", np.abs(cov[:, 0, 0] - (1 - np.exp(-2 * t)) / 2).max(), 0.0, 1e-4))
    # (c) rotation system
    p = ModelParams(0.7, 1.2, 2)
    spec = LinearSystemSpec(p, _ROT, 0.8, [1.0, 0.5], 1.0)
    fm = fundamental_matrix(spec, 1024)
    h = fm.grid.dt
    rng = np.random.default_rng(s)
    worst = 0.0
    for _ in range(5):
        coef = rng.normal(size=(2, 3)) * 0.5
        phi = GridFunction.from_callable(
            fm.grid, *[lambda x, c=c: c[0] + c[1] * np.sin(3 * x) + c[2] * x**2 for c in coef]
        )
        S = solution_s_transform_path(spec, fm, phi)
        for tn in np.linspace(1 / 16, 1 - 1 / 16, 16):
            n = int(round(tn / h))
            fd = (S[n + 1] - S[n - 1]) / (2 * h)
            r = fd - _ROT @ S[n] - spec.sigma * noise_s_transform(p, phi, fm.grid.nodes[n])
            worst = max(worst, float(np.abs(r).max()))
    res.checks.append(_abs("(c) S-transform ODE residual, 16 nodes x 5 phi", worst, 0.0, 1e-3))
    if tier == MC:
        T = 2.0
        spec = LinearSystemSpec(p, _ROT, 1.0, [1.0, 0.0], T)
        fm = fundamental_matrix(spec, 512)
        mean, cov = solve_mean_and_cov(spec, fm)
        ens = solve_paths(spec, fm, 10_000, s, threads)
        res.checksums["sde_rotation"] = ens.checksum()
        for tp in (T / 4, T / 2, T):
            n = fm.grid.index_of(tp)
            x = ens.paths[:, :, n]
            for i in range(2):
                for j in range(i, 2):
                    prod = (x[:, i] - mean[n, i]) * (x[:, j] - mean[n, j])
                    res.checks.append(_se(f"(c) MC Cov[{i},{j}]({tp})", prod, cov[n, i, j]))


# ---------------------------------------------------------------- 9. reproducibility


def _c9(res: CriterionResult, tier, seed, threads):
    """Every sampler gives bit-identical output on 1 and 4 worker threads (reduced sizes)."""
    if tier != MC:
        return
    s = criterion_seed(seed, 9)
    p = ModelParams(0.7, 0.8, 2)
    spec = LinearSystemSpec(ModelParams(0.7, 1.2, 2), _ROT, 1.0, [1.0, 0.0], 1.0)
    fm = fundamental_matrix(spec, 64)
    q = LocalTimeQuery(ModelParams(0.7, 0.8, 1), 1.0)
    runs = {
        "mwright": lambda w: array_checksum(sample_mwright(0.5, 5000, s, w)),
        "functionals": lambda w: array_checksum(sample_linear_functionals(p, [LinearFunctional.vggbm(0.8, 1.0, 2)], 5000, s, w)),
        "sde_paths": lambda w: solve_paths(spec, fm, 5000, s, w).checksum(),
        "localtime": lambda w: lt_monte_carlo_sampled(q, 0.05, 128, 5000, s, w).checksum,
    }
    for name, fn in runs.items():
        a, b = fn(1), fn(4)
        res.checksums[name] = a
        res.checks.append(Check(f"{name}: threads 1 vs 4 identical", float(a == b), 1.0, 0.0, "abs", a == b))


CRITERIA = [
    (1, "special functions", 5.0, _c1),
    (2, "kernel identity", 10.0, _c2),
    (3, "M-Wright sampler moments", 30.0, _c3),
    (4, "vggBm marginals", 60.0, _c4),
    (5, "moment-formula equivalence", 5.0, _c5),
    (6, "Donsker expectation", 60.0, _c6),
    (7, "local time", 180.0, _c7),
    (8, "linear SDE", 180.0, _c8),
    (9, "reproducibility", 60.0, _c9),
]

_MC_ONLY = {3, 4, 9}


def run_validation(tier: str = FAST, seed: int = 7, threads: int | None = None, only=None) -> dict:
    """Run the acceptance suite; returns the JSON-ready report.

    Wall-clock timings are reported under "timing" and never enter a verdict.
    """
    if tier not in (FAST, MC):
        raise ValueError(f"tier must be '{FAST}' or '{MC}'")
    results, timing = [], {}
    for cid, title, limit, fn in CRITERIA:
        if only is not None and cid not in only:
            continue
        if tier == FAST and cid in _MC_ONLY:
            continue
        res = CriterionResult(cid, title, limit)
        t0 = time.perf_counter()
        fn(res, tier, seed, threads)
        res.seconds = time.perf_counter() - t0
        results.append(res)
        timing[str(cid)] = {"seconds": res.seconds, "limit": limit}
    checksums = {f"{r.id}:{k}": v for r in results for k, v in r.checksums.items()}
    return {
        "tool": "greybm",
        "version": __version__,
        "tier": tier,
        "seed": int(seed),
        "passed": all(r.passed for r in results),
        "criteria": [r.as_dict() for r in results],
        "checksums": checksums,
        "timing": timing,
        "threads": threads if threads is not None else thread_count(),
    }
