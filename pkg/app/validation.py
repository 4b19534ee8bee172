"""Property suite run by the `validate` verb.

Each check returns a CheckResult; the suite never raises on a failed
property, only on errors in its own inputs.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import List

import numpy as np
from scipy import stats

from app.analysis import Bound, crlb, theoretical_epsilon
from app.channel import gen_ris_bs, generate_channels
from app.errors import MfrisError
from app.estimation import estimate_block, ls_estimator, noise_covariance, observation_matrix, synthesize_rx
from app.harness import SweepSpec, SweepVariable, run_point, run_sweep, run_trial
from app.scenario import Scheme, Side, SystemConfig, UserSpec, db_to_linear, dbm_to_watts, default_config, validate
from app.training import (
    build_dft_schedule, build_pilots, dft_basis, oracle_optimum, optimize_amplification,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def as_line(self) -> str:
        return f"check,{self.name},{'pass' if self.passed else 'fail'},{self.detail}"


def random_config(rng: np.random.Generator, both_sides: bool = True) -> SystemConfig:
    """A random valid scenario; both_sides keeps at least one user on each side."""
    N = int(rng.integers(1, 31))
    K = int(rng.integers(2 if both_sides else 1, 5))
    sides = [Side.REFLECT, Side.REFRACT] if both_sides else []
    sides += [Side.REFLECT if rng.uniform() < 0.5 else Side.REFRACT for _ in range(K - len(sides))]
    users = tuple(
        UserSpec(side=side, power=dbm_to_watts(rng.uniform(10.0, 30.0)),
                 distance_to_ris=rng.uniform(1.0, 10.0), distance_to_bs=rng.uniform(10.0, 40.0))
        for side in sides
    )
    return validate(replace(
        default_config(),
        M=int(rng.integers(1, 9)),
        N=N,
        L=N + 1 + int(rng.integers(0, 5)),
        users=users,
        sigma_s_sq=dbm_to_watts(rng.uniform(-90.0, -60.0)),
        sigma_sq=dbm_to_watts(rng.uniform(-90.0, -70.0)),
        beta_max=db_to_linear(rng.uniform(0.0, 25.0)),
        d_bs_ris=rng.uniform(5.0, 40.0),
    ))


def random_amplitudes(cfg: SystemConfig, rng: np.random.Generator):
    """A feasible (a_R, a_T) away from the axes."""
    radius = math.sqrt(cfg.amplitude_budget) * rng.uniform(0.3, 1.0)
    angle = rng.uniform(0.2, math.pi / 2 - 0.2)
    return radius * math.cos(angle), radius * math.sin(angle)


def _relative(actual: np.ndarray, expected: np.ndarray) -> float:
    scale = np.linalg.norm(expected)
    return float(np.linalg.norm(actual - expected) / scale) if scale > 0 else float(np.linalg.norm(actual))


# --- Checks ---
def check_structural_identities(rng: np.random.Generator, count: int = 100) -> CheckResult:
    worst = 0.0
    for _ in range(count):
        cfg = random_config(rng)
        basis = dft_basis(cfg.L, cfg.N)
        worst = max(worst, _relative(basis.D_full.conj().T @ basis.D_full, cfg.L * np.eye(cfg.N + 1)))
        g, _ = gen_ris_bs(cfg, rng)
        a_R, a_T = random_amplitudes(cfg, rng)
        schedule = build_dft_schedule(a_R, a_T, g[0], basis, cfg.beta_max, sigma_s_sq=cfg.sigma_s_sq)
        level = cfg.N * (a_R ** 2 + a_T ** 2) * cfg.sigma_s_sq + cfg.sigma_sq
        for m in range(cfg.M):
            for side, a in ((Side.REFLECT, a_R), (Side.REFRACT, a_T)):
                theta = observation_matrix(schedule, side, g[m]).theta
                expected = cfg.L * np.diag([1.0] + [a ** 2] * cfg.N)
                worst = max(worst, _relative(theta.conj().T @ theta, expected))
            worst = max(worst, _relative(noise_covariance(schedule, g[m], cfg), level * np.eye(cfg.L)))
    return CheckResult("structural-identities", worst <= 1e-10, f"max relative error {worst:.3g} over {count} configs")


def check_crlb_attainment(rng: np.random.Generator, count: int = 100) -> CheckResult:
    worst_leak = 0.0
    worst_gap = 0.0
    for _ in range(count):
        cfg = random_config(rng)
        g, _ = gen_ris_bs(cfg, rng)
        a_R, a_T = random_amplitudes(cfg, rng)
        schedule = build_dft_schedule(a_R, a_T, g[0], dft_basis(cfg.L, cfg.N), cfg.beta_max,
                                      sigma_s_sq=cfg.sigma_s_sq)
        m = int(rng.integers(cfg.M))
        c_z = noise_covariance(schedule, g[m], cfg)
        for user in cfg.users:
            theta = observation_matrix(schedule, user.side, g[m]).theta
            _, info_inv = ls_estimator(theta, c_z)
            c_h = info_inv / user.power
            diag = np.abs(np.diag(c_h))
            worst_leak = max(worst_leak, float((np.sum(np.abs(c_h)) - np.sum(diag)) / np.sum(diag)))
            bound = crlb(theta, c_z, user.power)
            worst_gap = max(worst_gap, float(np.max(np.abs(bound - diag) / diag)))
    passed = worst_leak <= 1e-9 and worst_gap <= 1e-9
    return CheckResult("crlb-attainment", passed, f"off-diagonal leak {worst_leak:.3g}, crlb gap {worst_gap:.3g}")


def check_optimizer(rng: np.random.Generator, count: int = 50) -> CheckResult:
    worst = 0.0
    problems = []
    for i in range(count):
        cfg = random_config(rng)
        solution = optimize_amplification(cfg)
        eps = [step[2] for step in solution.trace]
        if any(b > a + 1e-12 * eps[0] for a, b in zip(eps, eps[1:])):
            problems.append(f"config {i}: trace not monotone")
        if not solution.converged:
            problems.append(f"config {i}: no convergence in {solution.iterations} iterations")
        if solution.a_R ** 2 + solution.a_T ** 2 > cfg.amplitude_budget * (1 + 1e-12):
            problems.append(f"config {i}: infeasible solution")
        _, _, reference = oracle_optimum(cfg)
        worst = max(worst, abs(solution.epsilon_value - reference) / reference)
    passed = worst <= 1e-3 and not problems
    detail = f"max relative gap to oracle {worst:.3g}" + (f"; {'; '.join(problems[:3])}" if problems else "")
    return CheckResult("optimizer-vs-oracle", passed, detail)


def check_estimator(cfg: SystemConfig, trials: int, rng: np.random.Generator) -> CheckResult:
    """Bias and covariance of the per-antenna LS estimate under a fixed channel realization."""
    cfg = replace(cfg, independent_surface_noise=True, scheme=Scheme.DFT_MFRIS)
    channels = generate_channels(cfg, rng)
    solution = optimize_amplification(cfg)
    schedule = build_dft_schedule(solution.a_R, solution.a_T, channels.g[0], dft_basis(cfg.L, cfg.N),
                                  cfg.beta_max, sigma_s_sq=cfg.sigma_s_sq)
    pilots = build_pilots(cfg)
    width = cfg.N + 1
    errors = np.empty((trials, cfg.K, width), dtype=complex)
    covariance = None
    for t in range(trials):
        block = synthesize_rx(channels, schedule, pilots, cfg, rng)
        est = estimate_block(block, channels, schedule, pilots, cfg)
        errors[t, :, 0] = est.h_hat[:, 0] - channels.h_direct[:, 0]
        errors[t, :, 1:] = est.f_hat_per_antenna[:, 0, :] - channels.f_cascade
        covariance = est.C_h[:, 0]

    # 2 T e^H C^-1 e is chi-square with 2(N+1) degrees of freedom for an unbiased estimator
    bound = stats.chi2.ppf(1 - 1e-6, 2 * width)
    worst_stat = 0.0
    worst_var = 0.0
    tolerance = max(0.05, 4.0 / math.sqrt(trials))
    for k in range(cfg.K):
        mean = np.mean(errors[:, k], axis=0)
        statistic = 2 * trials * float(np.real(mean.conj() @ np.linalg.solve(covariance[k], mean)))
        worst_stat = max(worst_stat, statistic / bound)
        variance = np.mean(np.abs(errors[:, k] - mean) ** 2, axis=0)
        expected = np.real(np.diag(covariance[k]))
        worst_var = max(worst_var, float(np.max(np.abs(variance - expected) / expected)))
    passed = worst_stat <= 1.0 and worst_var <= tolerance
    return CheckResult("estimator-validity", passed,
                       f"bias statistic {worst_stat:.3g} of bound; covariance error {worst_var:.3g} (tol {tolerance:.3g})")


async def check_consistency(cfg: SystemConfig, trials: int, workers: int) -> CheckResult:
    cfg = replace(cfg, independent_surface_noise=True)
    report = await run_point(cfg, Scheme.DFT_MFRIS, trials, workers=workers)
    theory = report.eps_theory
    gap = abs(report.eps_empirical_normalized - theory) / theory
    tolerance = max(0.03, 4.0 * report.eps_std_error / theory)
    direct = theoretical_epsilon(report.a_R, report.a_T, cfg).eps_d
    expected_offset = (cfg.M - 1) * math.fsum(direct)
    offset = report.normalization_offset
    return CheckResult(
        "closed-form-consistency",
        gap <= tolerance,
        f"normalized gap {gap:.3g} (tol {tolerance:.3g}); norm-based offset {offset:.6g} vs (M-1)*sum eps_d {expected_offset:.6g}",
    )


async def check_determinism(cfg: SystemConfig, trials: int) -> CheckResult:
    serial = await run_point(cfg, Scheme.DFT_MFRIS, trials, workers=1, chunk_size=trials)
    parallel = await run_point(cfg, Scheme.DFT_MFRIS, trials, workers=4, chunk_size=max(trials // 7, 1))
    same = np.array_equal(serial.samples, parallel.samples) and serial.eps_empirical == parallel.eps_empirical
    return CheckResult("determinism", bool(same), f"{trials} trials, serial vs 4 workers")


async def check_std_error_scaling(cfg: SystemConfig, small: int, large: int) -> CheckResult:
    few = await run_point(cfg, Scheme.DFT_MFRIS, small, point=1)
    many = await run_point(cfg, Scheme.DFT_MFRIS, large, point=2)
    expected = math.sqrt(large / small)
    ratio = few.eps_std_error / many.eps_std_error
    return CheckResult("std-error-scaling", abs(ratio / expected - 1) <= 0.25,
                       f"se ratio {ratio:.3g}, expected {expected:.3g}")


TREND_SWEEPS = (
    # (variable, values, sign of the expected slope of eps)
    (SweepVariable.POWER, (10.0, 20.0, 30.0), -1),
    (SweepVariable.DISTANCE, (10.0, 20.0, 30.0), 1),
    (SweepVariable.USERS, (1.0, 2.0, 3.0), 1),
)


async def check_trends(cfg: SystemConfig, trials: int, workers: int) -> CheckResult:
    """Empirical error falls with power, grows with distance and user count; DFT beams never lose to on-off."""
    schemes = (Scheme.DFT_MFRIS, Scheme.ONOFF_MFRIS)
    problems = []
    for variable, values, slope in TREND_SWEEPS:
        spec = SweepSpec(variable=variable, values=values, trials=trials, schemes=schemes, base=cfg)
        result = await run_sweep(spec, workers=workers)
        for scheme in schemes:
            curve = np.array([result.reports[(value, scheme)].eps_empirical for value in values])
            if np.any(slope * np.diff(curve) <= 0):
                problems.append(f"{scheme.value} not monotone in {variable.value}")
        for value in values:
            dft_eps = result.reports[(value, Scheme.DFT_MFRIS)].eps_empirical
            onoff_eps = result.reports[(value, Scheme.ONOFF_MFRIS)].eps_empirical
            if dft_eps > onoff_eps:
                problems.append(f"dft-mfris above onoff-mfris at {variable.value}={value!r}")
    detail = "; ".join(problems[:3]) if problems else f"{len(TREND_SWEEPS)} sweeps, {trials} trials per point"
    return CheckResult("sweep-trends", not problems, detail)


def check_degenerate(cfg: SystemConfig) -> CheckResult:
    cfg = cfg.with_users([replace(user, side=Side.REFLECT) for user in cfg.users])
    solution = optimize_amplification(cfg)
    report = run_trial(cfg, Scheme.DFT_MFRIS, np.random.default_rng(cfg.seed))
    degenerate = solution.degenerate
    passed = (degenerate is not None and degenerate.eps_f is Bound.INFINITE
              and report.degenerate is not None and math.isfinite(report.eps_empirical))
    return CheckResult("degenerate-single-side", passed,
                       f"a_R={solution.a_R:.4g}, a_T={solution.a_T:.4g}, eps_d={getattr(degenerate, 'eps_d', float('nan')):.4g}")


async def run_validation(base: SystemConfig, trials: int, configs: int, workers: int) -> List[CheckResult]:
    """Runs every property; trials scales the Monte Carlo checks, configs the randomized ones."""
    rng = np.random.default_rng(base.seed)
    small = replace(base, M=2, N=6, L=7)
    results = []
    steps = [
        ("structural-identities", lambda: check_structural_identities(rng, configs)),
        ("crlb-attainment", lambda: check_crlb_attainment(rng, configs)),
        ("optimizer-vs-oracle", lambda: check_optimizer(rng, max(configs // 2, 1))),
        ("estimator-validity", lambda: check_estimator(base, trials, rng)),
        ("degenerate-single-side", lambda: check_degenerate(base)),
    ]
    for name, step in steps:
        results.append(_guarded(name, step))
    for name, coroutine in (
        ("closed-form-consistency", check_consistency(base, trials, workers)),
        ("determinism", check_determinism(small, 60)),
        ("std-error-scaling", check_std_error_scaling(small, max(trials // 100, 20), trials)),
        ("sweep-trends", check_trends(base, max(trials // 10, 20), workers)),
    ):
        try:
            results.append(await coroutine)
        except MfrisError as e:
            results.append(CheckResult(name, False, f"{type(e).__name__}: {e}"))
    for result in results:
        log = logging.info if result.passed else logging.warning
        log(f"Check {result.name}: {'pass' if result.passed else 'FAIL'} ({result.detail})")
    return results


def _guarded(name: str, step) -> CheckResult:
    try:
        return step()
    except MfrisError as e:
        return CheckResult(name, False, f"{type(e).__name__}: {e}")
