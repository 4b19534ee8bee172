import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np

import config
from app.errors import DegenerateModeError, InputError, SingularityError
from app.scenario import Scheme, Side, SystemConfig

if TYPE_CHECKING:
    from app.channel import ChannelSet
    from app.estimation import EstimateSet


class Bound(enum.Enum):
    FINITE = "finite"
    INFINITE = "inf"


# --- Closed-form error ---
@dataclass(frozen=True)
class TheoreticalEpsilon:
    total: float
    eps_d: Tuple[float, ...]
    eps_f: Tuple[float, ...]


@dataclass(frozen=True)
class DegenerateEpsilon:
    """Error when only one mode serves users; the cascaded error is unbounded."""
    active_side: Side
    a_active: float
    eps_d: float
    eps_f: Bound = Bound.INFINITE


def epsilon_surface(a_R, a_T, cfg: SystemConfig, sigma_s_sq: Optional[float] = None) -> np.ndarray:
    """Vectorized eps(a_R, a_T); +inf wherever a served side has a zero parameter."""
    s = cfg.sigma_s_sq if sigma_s_sq is None else sigma_s_sq
    a_R = np.asarray(a_R, dtype=float)
    a_T = np.asarray(a_T, dtype=float)
    amp_sq = {Side.REFLECT: a_R ** 2, Side.REFRACT: a_T ** 2}
    total_sq = amp_sq[Side.REFLECT] + amp_sq[Side.REFRACT]
    eps = np.zeros(np.broadcast(a_R, a_T).shape)
    N, L, M = cfg.N, cfg.L, cfg.M
    with np.errstate(divide="ignore", invalid="ignore"):
        for user in cfg.users:
            a_i_sq = amp_sq[user.side]
            a_j_sq = amp_sq[user.side.other]
            eps_d = (N * total_sq * s + cfg.sigma_sq) / (user.power * L)
            eps_f = N * (N * (a_j_sq / a_i_sq + 1.0) * s + cfg.sigma_sq / a_i_sq) / (user.power * L * M)
            eps_f = np.where(a_i_sq > 0, eps_f, np.inf)
            eps = eps + eps_d + eps_f
    return eps


def theoretical_epsilon(a_R: float, a_T: float, cfg: SystemConfig,
                        sigma_s_sq: Optional[float] = None) -> TheoreticalEpsilon:
    """Per-user direct and cascaded errors and their sum at (a_R, a_T)."""
    s = cfg.sigma_s_sq if sigma_s_sq is None else sigma_s_sq
    amp = {Side.REFLECT: float(a_R), Side.REFRACT: float(a_T)}
    for side, value in amp.items():
        if value <= 0 and cfg.users_on(side):
            raise DegenerateModeError(
                f"a_{side.value} = {value} while {len(cfg.users_on(side))} user(s) sit on the {side.value} side"
            )
    N, L, M = cfg.N, cfg.L, cfg.M
    total_sq = amp[Side.REFLECT] ** 2 + amp[Side.REFRACT] ** 2
    eps_d, eps_f = [], []
    for user in cfg.users:
        a_i_sq = amp[user.side] ** 2
        a_j_sq = amp[user.side.other] ** 2
        eps_d.append((N * total_sq * s + cfg.sigma_sq) / (user.power * L))
        eps_f.append(N * (N * (a_j_sq / a_i_sq + 1.0) * s + cfg.sigma_sq / a_i_sq) / (user.power * L * M))
    return TheoreticalEpsilon(total=math.fsum(eps_d) + math.fsum(eps_f), eps_d=tuple(eps_d), eps_f=tuple(eps_f))


def degenerate_epsilon(active: Side, cfg: SystemConfig) -> DegenerateEpsilon:
    """Single-mode error with a_active at its cap and the other mode switched off."""
    served = cfg.users_on(active)
    if not served:
        raise InputError(f"no users on the {active.value} side")
    a_star = math.sqrt(cfg.amplitude_budget)
    p_i = cfg.side_power(active)
    eps_d = (cfg.N * len(served) * a_star ** 2 * cfg.sigma_s_sq + cfg.K * cfg.sigma_sq) / (p_i * cfg.L)
    return DegenerateEpsilon(active_side=active, a_active=a_star, eps_d=eps_d)


def single_side(cfg: SystemConfig) -> Optional[Side]:
    """The only occupied side, or None when both sides hold users."""
    occupied = [side for side in Side if cfg.users_on(side)]
    return occupied[0] if len(occupied) == 1 else None


# --- Covariance-based forms ---
def covariance_epsilon(covariances: Sequence[np.ndarray]) -> float:
    """Closed-form normalization from per-user stacks of per-antenna covariances.

    covariances[k] has shape (M, N+1, N+1). Direct terms are averaged over
    antennas, cascaded traces weighted by 1/M^2.
    """
    total = []
    for stack in covariances:
        M = stack.shape[0]
        diag = np.real(np.diagonal(stack, axis1=1, axis2=2))
        total.append(np.mean(diag[:, 0]) + np.sum(diag[:, 1:]) / M ** 2)
    return float(math.fsum(total))


def trace_form_epsilon(covariances: Sequence[np.ndarray]) -> float:
    """Sum over antennas of [C]_11 plus the 1/M^2-weighted cascaded traces."""
    total = []
    for stack in covariances:
        M = stack.shape[0]
        diag = np.real(np.diagonal(stack, axis1=1, axis2=2))
        total.append(np.sum(diag[:, 0]) + np.sum(diag[:, 1:]) / M ** 2)
    return float(math.fsum(total))


def crlb(theta: np.ndarray, c_z: np.ndarray, power: float) -> np.ndarray:
    """Diagonal of the inverse Fisher information P_k * Theta^H C_z^-1 Theta."""
    info = power * (theta.conj().T @ np.linalg.solve(c_z, theta))
    if not np.isfinite(info).all() or np.linalg.cond(info) > config.SINGULARITY_COND_LIMIT:
        raise SingularityError("Fisher information is singular")
    return np.real(np.diag(np.linalg.inv(info)))


# --- Empirical metrics ---
@dataclass
class ErrorReport:
    scheme: Scheme
    eps_empirical: float
    eps_empirical_normalized: float
    eps_theory: float
    eps_trace: float
    eps_d: Tuple[float, ...]
    eps_f: Tuple[float, ...]
    crlb_diag: Tuple[np.ndarray, ...]
    a_R: Optional[float]
    a_T: Optional[float]
    trial_count: int = 1
    eps_std_error: float = float("nan")
    unserved_cascade_mse: float = 0.0
    degenerate: Optional[DegenerateEpsilon] = None
    samples: np.ndarray = field(default=None, repr=False)

    @property
    def normalization_offset(self) -> float:
        """Gap between the norm-based and closed-form normalizations; equals (M-1) times the direct terms."""
        return self.eps_empirical - self.eps_empirical_normalized


@dataclass(frozen=True)
class EmpiricalMse:
    eps_empirical: float
    eps_empirical_normalized: float
    eps_d: Tuple[float, ...]
    eps_f: Tuple[float, ...]
    unserved_cascade_mse: float


def empirical_sum_mse(truth: Sequence["ChannelSet"], estimates: Sequence["EstimateSet"],
                      served: Optional[Sequence[bool]] = None) -> EmpiricalMse:
    """Sum MSE over users averaged over trials.

    eps_empirical uses plain squared norms; eps_empirical_normalized divides
    the direct norm by M, matching theoretical_epsilon. Users flagged as
    unserved contribute only their direct error; their cascaded error is
    reported on its own.
    """
    if not estimates or len(truth) != len(estimates):
        raise InputError("need one ChannelSet per EstimateSet and at least one trial")
    K = truth[0].K
    M = truth[0].M
    served = [True] * K if served is None else list(served)
    d_err = np.zeros((len(estimates), K))
    f_err = np.zeros((len(estimates), K))
    for t, (channels, est) in enumerate(zip(truth, estimates)):
        d_err[t] = np.sum(np.abs(channels.h_direct - est.h_hat) ** 2, axis=1)
        f_err[t] = np.sum(np.abs(channels.f_cascade - est.f_hat) ** 2, axis=1)
    d_mean = np.mean(d_err, axis=0)
    f_mean = np.mean(f_err, axis=0)
    mask = np.asarray(served, dtype=bool)
    return EmpiricalMse(
        eps_empirical=float(np.sum(d_mean) + np.sum(f_mean[mask])),
        eps_empirical_normalized=float(np.sum(d_mean) / M + np.sum(f_mean[mask])),
        eps_d=tuple(float(x) for x in d_mean / M),
        eps_f=tuple(float(x) if ok else float("nan") for x, ok in zip(f_mean, mask)),
        unserved_cascade_mse=float(np.sum(f_mean[~mask])),
    )


def aggregate_reports(reports: List[ErrorReport]) -> ErrorReport:
    """Trial-ordered reduction of per-block reports."""
    if not reports:
        raise InputError("no reports to aggregate")
    first = reports[0]
    emp = np.array([r.eps_empirical for r in reports])
    emp_norm = np.array([r.eps_empirical_normalized for r in reports])
    eps_d = np.mean(np.array([r.eps_d for r in reports]), axis=0)
    eps_f = np.mean(np.array([r.eps_f for r in reports]), axis=0)
    count = len(reports)
    std_error = float(np.std(emp, ddof=1) / math.sqrt(count)) if count > 1 else float("nan")
    logging.debug(f"Aggregated {count} trials for {first.scheme.value}: eps={np.mean(emp):.6g} (se {std_error:.3g})")
    return ErrorReport(
        scheme=first.scheme,
        eps_empirical=float(np.sum(emp) / count),
        eps_empirical_normalized=float(np.sum(emp_norm) / count),
        eps_theory=float(np.mean([r.eps_theory for r in reports])),
        eps_trace=float(np.mean([r.eps_trace for r in reports])),
        eps_d=tuple(float(x) for x in eps_d),
        eps_f=tuple(float(x) for x in eps_f),
        crlb_diag=first.crlb_diag,
        a_R=first.a_R,
        a_T=first.a_T,
        trial_count=count,
        eps_std_error=std_error,
        unserved_cascade_mse=float(np.mean([r.unserved_cascade_mse for r in reports])),
        degenerate=first.degenerate,
        samples=emp,
    )
