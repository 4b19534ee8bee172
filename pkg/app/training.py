import logging
import math
from dataclasses import dataclass
from threading import RLock
from typing import Callable, Optional, Tuple

import numpy as np
from cachetools import LRUCache, cached
from cachetools.keys import hashkey
from scipy.linalg import dft

import config
from app.analysis import DegenerateEpsilon, degenerate_epsilon, epsilon_surface, single_side
from app.errors import (
    DegenerateModeError, DimensionError, EmptyRangeError, InfeasibleAmplificationError,
    InputError, SingularChannelError, UnknownSchemeError,
)
from app.scenario import Scheme, Side, SystemConfig, UpdateRule

INV_PHI = (math.sqrt(5) - 1) / 2  # 1 / phi
INV_PHI_SQUARE = (3 - math.sqrt(5)) / 2  # 1 / phi^2


# --- Pilots ---
@dataclass(frozen=True)
class PilotBook:
    S: np.ndarray  # (K, L)

    def conj(self, k: int) -> np.ndarray:
        return np.conj(self.S[k])


def build_pilots(cfg: SystemConfig) -> PilotBook:
    """Orthogonal unit-modulus DFT-tone pilots, user k on tone k."""
    if cfg.L < cfg.K:
        raise InputError(f"L >= K violated (L={cfg.L}, K={cfg.K})")
    slots = np.arange(cfg.L)
    tones = np.arange(cfg.K)
    S = np.exp(2j * np.pi * np.outer(tones, slots) / cfg.L)
    return PilotBook(S=S)


# --- DFT basis ---
@dataclass(frozen=True)
class DftBasis:
    D_full: np.ndarray  # (L, N+1)
    D: np.ndarray       # (L, N)


def dft_basis(L: int, N: int) -> DftBasis:
    """First N+1 columns of the L-point DFT matrix, entry (l, n) = exp(-2j*pi*l*n/L)."""
    if L < N + 1:
        raise DimensionError(f"DFT basis needs L >= N+1 (L={L}, N={N})")
    D_full = dft(L)[:, :N + 1]
    return DftBasis(D_full=D_full, D=D_full[:, 1:])


# --- Beam schedules ---
@dataclass(frozen=True)
class BeamSchedule:
    """Per-slot reflection/refraction coefficients.

    phi_R[l] and phi_T[l] are the coefficient vectors used in pilot slot l.
    sigma_s_sq is the surface thermal noise power the scheme injects.
    """
    phi_R: np.ndarray  # (L, N)
    phi_T: np.ndarray  # (L, N)
    scheme: Scheme
    sigma_s_sq: float
    a_R: Optional[float] = None
    a_T: Optional[float] = None

    def phi(self, side: Side) -> np.ndarray:
        return self.phi_R if side is Side.REFLECT else self.phi_T

    def serves(self, side: Side) -> bool:
        return bool(np.any(self.phi(side) != 0))

    def slot_rows(self, side: Side, g: np.ndarray) -> np.ndarray:
        """Rows phi_i^H(l) G_m for every antenna: shape (M, L, N) for g of shape (M, N)."""
        g = np.atleast_2d(g)
        return np.conj(self.phi(side))[None, :, :] * np.conj(g)[:, None, :]

    def max_element_power(self) -> float:
        return float(np.max(np.abs(self.phi_R) ** 2 + np.abs(self.phi_T) ** 2))


def build_dft_schedule(a_R: float, a_T: float, g_1: np.ndarray, basis: DftBasis, beta_max: float,
                       scheme: Scheme = Scheme.DFT_MFRIS, sigma_s_sq: float = 0.0) -> BeamSchedule:
    """Beams with phi_i^H(l) G_1 = a_i d_l^H for every slot l."""
    if a_R < 0 or a_T < 0:
        raise InputError(f"amplification parameters must be non-negative (a_R={a_R}, a_T={a_T})")
    if np.any(g_1 == 0):
        raise SingularChannelError("reference surface-BS vector has a zero entry; G is not invertible")
    alpha = float(np.mean(np.abs(g_1) ** 2))
    budget = beta_max * alpha
    if a_R ** 2 + a_T ** 2 > budget * (1.0 + 1e-12):
        raise InfeasibleAmplificationError(
            f"a_R^2 + a_T^2 = {a_R ** 2 + a_T ** 2:.6g} exceeds beta_max*alpha = {budget:.6g}"
        )
    base = np.conj(basis.D) / g_1[None, :]
    return BeamSchedule(phi_R=a_R * base, phi_T=a_T * base, scheme=scheme,
                        sigma_s_sq=sigma_s_sq, a_R=float(a_R), a_T=float(a_T))


def build_onoff_schedule(cfg: SystemConfig, N: int, L: int) -> BeamSchedule:
    """Slot 0 off, slot l switches on element l-1 alone; the pattern repeats every N+1 slots."""
    amplitude = math.sqrt(cfg.beta_max / 2.0)
    phi = np.zeros((L, N), dtype=complex)
    for l in range(L):
        element = l % (N + 1) - 1
        if element >= 0:
            phi[l, element] = amplitude
    return BeamSchedule(phi_R=phi, phi_T=phi.copy(), scheme=Scheme.ONOFF_MFRIS, sigma_s_sq=cfg.sigma_s_sq)


def build_baseline_schedule(scheme: Scheme, cfg: SystemConfig, g_1: np.ndarray, basis: DftBasis) -> BeamSchedule:
    alpha = cfg.alpha
    if scheme is Scheme.ONOFF_MFRIS:
        return build_onoff_schedule(cfg, basis.D.shape[1], basis.D.shape[0])
    if scheme is Scheme.STAR:
        a = math.sqrt(0.5 * alpha)
        return build_dft_schedule(a, a, g_1, basis, cfg.beta_max, scheme=scheme, sigma_s_sq=0.0)
    if scheme is Scheme.PASSIVE:
        return build_dft_schedule(math.sqrt(alpha), 0.0, g_1, basis, cfg.beta_max, scheme=scheme, sigma_s_sq=0.0)
    if scheme is Scheme.ACTIVE:
        return build_dft_schedule(math.sqrt(cfg.amplitude_budget), 0.0, g_1, basis, cfg.beta_max,
                                  scheme=scheme, sigma_s_sq=cfg.sigma_s_sq)
    raise UnknownSchemeError(f"'{getattr(scheme, 'value', scheme)}' is not a baseline scheme")


# --- Amplification parameters ---
def feasible_range_a(a_other: float, cfg: SystemConfig) -> Tuple[float, float]:
    """Interval (0, sqrt(beta_max*alpha - a_other^2)] as (lower, upper)."""
    budget = cfg.amplitude_budget
    slack = budget - a_other ** 2
    if slack < -1e-12 * budget:
        raise EmptyRangeError(f"a_other^2 = {a_other ** 2:.6g} exceeds beta_max*alpha = {budget:.6g}")
    if slack <= 1e-12 * budget:
        slack = 0.0
    return 0.0, math.sqrt(slack)


def closed_form_a(side: Side, a_other: float, cfg: SystemConfig) -> float:
    """Printed fourth-root update for a_side with the other parameter fixed, capped by the feasible range."""
    if a_other <= 0:
        raise DegenerateModeError(f"closed form for a_{side.value} needs a positive a_{side.other.value}")
    _, upper = feasible_range_a(a_other, cfg)
    k_i = len(cfg.users_on(side))
    k_j = len(cfg.users_on(side.other))
    p_i = cfg.side_power(side)
    p_j = cfg.side_power(side.other)
    s = cfg.sigma_s_sq
    c_i = cfg.M * k_j + cfg.N * k_i / a_other ** 2
    if s == 0:
        candidate = math.inf
    elif p_j == 0:
        candidate = 0.0
    else:
        numerator = cfg.N * k_j * a_other ** 2 * s + cfg.sigma_sq
        candidate = (numerator / (s * (cfg.M + (p_i / p_j) * c_i))) ** 0.25
    return min(candidate, upper)


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> Tuple[float, float]:
    """Minimizer of a unimodal f on [lo, hi] (endpoints included) and its value."""
    lo, hi = min(lo, hi), max(lo, hi)
    h = hi - lo
    candidates = [(f(lo), lo), (f(hi), hi)]
    if h > tol:
        # Required steps to achieve tolerance
        n = int(math.ceil(math.log(tol / h) / math.log(INV_PHI)))
        a, b = lo, hi
        c = a + INV_PHI_SQUARE * h
        d = a + INV_PHI * h
        yc, yd = f(c), f(d)
        for _ in range(n - 1):
            if yc < yd:
                b, d, yd = d, c, yc
                h = INV_PHI * h
                c = a + INV_PHI_SQUARE * h
                yc = f(c)
            else:
                a, c, yc = c, d, yd
                h = INV_PHI * h
                d = a + INV_PHI * h
                yd = f(d)
        candidates.extend([(yc, c), (yd, d)])
    value, x = min(candidates, key=lambda item: item[0])
    return x, value


@dataclass(frozen=True)
class AmplificationSolution:
    a_R: float
    a_T: float
    epsilon_value: float
    trace: Tuple[Tuple[float, float, float], ...]
    P_R: float
    P_T: float
    C_R: float
    C_T: float
    iterations: int
    converged: bool
    update_rule: UpdateRule
    closed_form_divergence: float
    degenerate: Optional[DegenerateEpsilon] = None


_solution_cache = LRUCache(maxsize=config.SOLUTION_CACHE_SIZE)
_solution_lock = RLock()


def optimize_amplification(cfg: SystemConfig, tol: Optional[float] = None,
                           max_iter: int = config.AO_MAX_ITER,
                           update_rule: Optional[UpdateRule] = None) -> AmplificationSolution:
    """Alternating optimization of (a_R, a_T); memoized per configuration."""
    if tol is not None and tol <= 0:
        raise InputError(f"tolerance must be positive, got {tol}")
    if max_iter < 1:
        raise InputError(f"max_iter must be >= 1, got {max_iter}")
    return _optimize_cached(cfg, tol, max_iter, update_rule or cfg.update_rule)


def clear_solution_cache() -> None:
    with _solution_lock:
        _solution_cache.clear()


@cached(cache=_solution_cache, key=hashkey, lock=_solution_lock)
def _optimize_cached(cfg: SystemConfig, tol: Optional[float], max_iter: int,
                     update_rule: UpdateRule) -> AmplificationSolution:
    budget = cfg.amplitude_budget
    cap = math.sqrt(budget)
    floor = config.AMPLITUDE_FLOOR_RATIO * cap
    search_tol = 1e-12 * cap

    def objective(a_R: float, a_T: float) -> float:
        return float(epsilon_surface(a_R, a_T, cfg))

    def coordinate_update(side: Side, current: float, other: float, eps_now: float) -> Tuple[float, float, float]:
        _, upper = feasible_range_a(other, cfg)
        upper = max(upper, floor)
        if side is Side.REFLECT:
            line = lambda a: objective(a, other)
        else:
            line = lambda a: objective(other, a)
        numeric, numeric_eps = golden_section(line, floor, upper, search_tol)
        printed = min(max(closed_form_a(side, max(other, floor), cfg), floor), upper)
        printed_eps = line(printed)
        divergence = (printed_eps - numeric_eps) / numeric_eps if numeric_eps > 0 else 0.0
        if update_rule is UpdateRule.CLOSED_FORM:
            candidate, candidate_eps = printed, printed_eps
        else:
            candidate, candidate_eps = numeric, numeric_eps
        # a flat eps (noiseless scenario) keeps the current iterate
        if candidate_eps < eps_now:
            return candidate, candidate_eps, divergence
        return current, eps_now, divergence

    def cap_arc_update(a_R: float, a_T: float, eps_now: float) -> Tuple[float, float, float]:
        if a_R ** 2 + a_T ** 2 < budget * (1.0 - 1e-9):
            return a_R, a_T, eps_now
        t_lo = math.asin(min(floor / cap, 1.0))
        t_hi = math.acos(min(floor / cap, 1.0))
        arc = lambda t: objective(cap * math.cos(t), cap * math.sin(t))
        t_best, arc_eps = golden_section(arc, t_lo, t_hi, 1e-12)
        if arc_eps < eps_now:
            return cap * math.cos(t_best), cap * math.sin(t_best), arc_eps
        return a_R, a_T, eps_now

    a_R = a_T = math.sqrt(budget / 2.0)
    eps = objective(a_R, a_T)
    delta = config.AO_REL_TOL * eps if tol is None else tol
    trace = [(a_R, a_T, eps)]
    divergence = 0.0
    converged = False
    iterations = 0
    for tau in range(1, max_iter + 1):
        iterations = tau
        a_R, eps_next, div_R = coordinate_update(Side.REFLECT, a_R, a_T, eps)
        a_T, eps_next, div_T = coordinate_update(Side.REFRACT, a_T, a_R, eps_next)
        if cfg.coupled_cap_step:
            a_R, a_T, eps_next = cap_arc_update(a_R, a_T, eps_next)
        divergence = max(divergence, div_R, div_T)
        trace.append((a_R, a_T, eps_next))
        logging.debug(f"AO iteration {tau}: a_R={a_R:.6g}, a_T={a_T:.6g}, eps={eps_next:.10g}")
        done = abs(eps_next - eps) <= delta
        eps = eps_next
        if done:
            converged = True
            break

    if divergence > 1e-6:
        logging.warning(f"Printed closed form diverges from the numeric minimizer by up to {divergence:.3%} in eps")
    if not converged:
        logging.warning(f"AO stopped after {iterations} iterations without meeting tolerance {delta:.3g}")
    logging.info(f"AO finished: a_R={a_R:.6g}, a_T={a_T:.6g}, eps={eps:.6g}, iterations={iterations}")

    side = single_side(cfg)
    k_R = len(cfg.users_on(Side.REFLECT))
    k_T = len(cfg.users_on(Side.REFRACT))
    return AmplificationSolution(
        a_R=a_R,
        a_T=a_T,
        epsilon_value=eps,
        trace=tuple(trace),
        P_R=cfg.side_power(Side.REFLECT),
        P_T=cfg.side_power(Side.REFRACT),
        C_R=cfg.M * k_T + cfg.N * k_R / a_T ** 2,
        C_T=cfg.M * k_R + cfg.N * k_T / a_R ** 2,
        iterations=iterations,
        converged=converged,
        update_rule=update_rule,
        closed_form_divergence=divergence,
        degenerate=degenerate_epsilon(side, cfg) if side is not None else None,
    )


def oracle_optimum(cfg: SystemConfig, resolution: int = config.ORACLE_RESOLUTION) -> Tuple[float, float, float]:
    """Polar grid over the feasible quarter disc, then alternating refinement in radius and angle."""
    if resolution < 100:
        raise InputError(f"oracle resolution must be >= 100 points per axis, got {resolution}")
    cap = math.sqrt(cfg.amplitude_budget)
    radii = cap * np.linspace(1.0 / resolution, 1.0, resolution)
    angles = np.linspace(0.0, np.pi / 2.0, resolution)
    r_grid, t_grid = np.meshgrid(radii, angles, indexing="ij")
    eps = epsilon_surface(r_grid * np.cos(t_grid), r_grid * np.sin(t_grid), cfg)
    eps = np.where(np.isnan(eps), np.inf, eps)
    i, j = np.unravel_index(np.argmin(eps), eps.shape)
    r, t, best = radii[i], angles[j], float(eps[i, j])

    r_lo, r_hi = radii[max(i - 1, 0)], radii[min(i + 1, resolution - 1)]
    t_lo, t_hi = angles[max(j - 1, 0)], angles[min(j + 1, resolution - 1)]
    point = lambda radius, angle: float(epsilon_surface(radius * np.cos(angle), radius * np.sin(angle), cfg))
    for _ in range(50):
        r_next, _ = golden_section(lambda x: point(x, t), r_lo, r_hi, 1e-14 * cap)
        t_next, value = golden_section(lambda x: point(r_next, x), t_lo, t_hi, 1e-14)
        if not value < best:
            break
        r, t, best = r_next, t_next, value
    a_R, a_T = r * math.cos(t), r * math.sin(t)
    logging.debug(f"Oracle optimum: a_R={a_R:.6g}, a_T={a_T:.6g}, eps={best:.10g}")
    return a_R, a_T, best
