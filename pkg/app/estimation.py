import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

import config
from app.channel import ChannelSet, complex_gaussian, dump_matrices, load_matrices
from app.errors import DimensionError, InputError, SingularityError
from app.scenario import DespreadMode, Side, SystemConfig
from app.training import BeamSchedule, PilotBook


# --- Observations ---
@dataclass(frozen=True)
class ObservationBlock:
    """Received pilot block.

    y[m] is the length-L sequence at antenna m with every user superimposed.
    y_despread[k, m] is user k's sequence with cross-user terms removed,
    sharing the noise realization of y.
    """
    y: np.ndarray           # (M, L)
    y_despread: np.ndarray  # (K, M, L)

    @property
    def M(self) -> int:
        return self.y.shape[0]

    @property
    def L(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class ObservationMatrix:
    theta: np.ndarray     # (L, N+1), row l = [1, phi^H(l) G_m]
    psi_rows: np.ndarray  # (L, N), row l = phi^H(l) G_m; the block-diagonal Psi kept implicit

    def psi_gram(self) -> np.ndarray:
        """Psi Psi^H, diagonal because every slot owns its own block."""
        return np.diag(np.sum(np.abs(self.psi_rows) ** 2, axis=1))


def observation_matrix(schedule: BeamSchedule, side: Side, g_m: np.ndarray) -> ObservationMatrix:
    rows = schedule.slot_rows(side, g_m)[0]
    theta = np.hstack([np.ones((rows.shape[0], 1), dtype=complex), rows])
    return ObservationMatrix(theta=theta, psi_rows=rows)


def _check_dimensions(channels: ChannelSet, schedule: BeamSchedule, pilots: PilotBook, cfg: SystemConfig) -> None:
    problems = []
    if channels.M != cfg.M or channels.N != cfg.N or channels.K != cfg.K:
        problems.append(f"channels are (M={channels.M}, N={channels.N}, K={channels.K}), "
                        f"config is (M={cfg.M}, N={cfg.N}, K={cfg.K})")
    for side in Side:
        if schedule.phi(side).shape != (cfg.L, cfg.N):
            problems.append(f"phi_{side.value} has shape {schedule.phi(side).shape}, expected {(cfg.L, cfg.N)}")
    if pilots.S.shape != (cfg.K, cfg.L):
        problems.append(f"pilots have shape {pilots.S.shape}, expected {(cfg.K, cfg.L)}")
    if problems:
        raise DimensionError("; ".join(problems))


def synthesize_rx(channels: ChannelSet, schedule: BeamSchedule, pilots: PilotBook, cfg: SystemConfig,
                  rng: np.random.Generator) -> ObservationBlock:
    """Draws one received pilot block.

    Surface noise z_i(l) is fresh per slot; it is shared by all antennas
    unless cfg.independent_surface_noise is set. The surface noise power is
    the one the schedule injects.
    """
    _check_dimensions(channels, schedule, pilots, cfg)
    M, L, N = cfg.M, cfg.L, cfg.N
    rows = {side: schedule.slot_rows(side, channels.g) for side in Side}  # (M, L, N)

    signals = np.empty((cfg.K, M, L), dtype=complex)
    for k, user in enumerate(cfg.users):
        cascade = rows[user.side] @ channels.f_cascade[k]  # (M, L)
        signals[k] = np.sqrt(user.power) * (channels.h_direct[k][:, None] + cascade)

    noise = complex_gaussian(rng, cfg.sigma_sq, (M, L))
    for side in Side:
        if not schedule.serves(side):
            continue
        if cfg.independent_surface_noise:
            z = complex_gaussian(rng, schedule.sigma_s_sq, (M, L, N))
            noise = noise + np.sum(rows[side] * z, axis=2)
        else:
            z = complex_gaussian(rng, schedule.sigma_s_sq, (L, N))
            noise = noise + np.sum(rows[side] * z[None, :, :], axis=2)

    y = np.sum(signals * pilots.S[:, None, :], axis=0) + noise
    y_despread = signals + noise[None, :, :] * np.conj(pilots.S)[:, None, :]
    return ObservationBlock(y=y, y_despread=y_despread)


def despread(block: ObservationBlock, pilots: PilotBook, k: int,
             mode: DespreadMode = DespreadMode.FULL) -> np.ndarray:
    """User k's per-antenna sequences, shape (M, L)."""
    if not 0 <= k < pilots.S.shape[0]:
        raise InputError(f"unknown user index {k} (K={pilots.S.shape[0]})")
    if mode is DespreadMode.IDEAL:
        return block.y_despread[k]
    return block.y * pilots.conj(k)[None, :]


def noise_covariance(schedule: BeamSchedule, g_m: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """sigma_s^2 (Psi_R Psi_R^H + Psi_T Psi_T^H) + sigma^2 I_L at one antenna."""
    gram = sum(observation_matrix(schedule, side, g_m).psi_gram() for side in Side)
    return schedule.sigma_s_sq * gram + cfg.sigma_sq * np.eye(cfg.L)


def regularize_covariance(c_z: np.ndarray) -> np.ndarray:
    """Adds a diagonal load when c_z is not positive definite; all-zero c_z becomes I."""
    diag = np.real(np.diag(c_z))
    if np.all(diag > 0):
        return c_z
    scale = float(np.mean(diag))
    load = 1e-12 * scale if scale > 0 else 1.0
    return c_z + load * np.eye(c_z.shape[0])


# --- Estimators ---
def ls_estimator(theta: np.ndarray, c_z: np.ndarray, label: str = "") -> Tuple[np.ndarray, np.ndarray]:
    """Returns W = (Theta^H C^-1 Theta)^-1 Theta^H C^-1 and (Theta^H C^-1 Theta)^-1."""
    try:
        chol = linalg.cholesky(c_z, lower=True)
    except linalg.LinAlgError:
        raise SingularityError(f"noise covariance is not positive definite{_label(label)}")
    theta_w = linalg.solve_triangular(chol, theta, lower=True)
    info = theta_w.conj().T @ theta_w
    if not np.isfinite(info).all() or np.linalg.cond(info) > config.SINGULARITY_COND_LIMIT:
        raise SingularityError(f"observation matrix is rank deficient{_label(label)}")
    info_inv = linalg.inv(info)
    info_inv = (info_inv + info_inv.conj().T) / 2
    # W = info^-1 Theta_w^H chol^-1
    weights = linalg.solve_triangular(chol, theta_w @ info_inv, lower=True, trans="C").conj().T
    return weights, info_inv


def _label(label: str) -> str:
    return f" for the {label} schedule" if label else ""


def ls_estimate(y: np.ndarray, theta: np.ndarray, c_z: np.ndarray, power: float,
                label: str = "") -> Tuple[np.ndarray, np.ndarray]:
    """Whitened LS estimate of [h_mk, f_k] and its covariance C_h.

    y may hold several observations as columns; C_h is shared by all of them.
    """
    if y.shape[0] != theta.shape[0] or c_z.shape != (theta.shape[0], theta.shape[0]):
        raise DimensionError(f"y {y.shape}, Theta {theta.shape} and C_z {c_z.shape} do not agree")
    weights, info_inv = ls_estimator(theta, c_z, label)
    return weights @ y / np.sqrt(power), info_inv / power


def simplified_ls_estimate(y: np.ndarray, theta: np.ndarray, power: float) -> np.ndarray:
    """(Theta^H Theta)^-1 Theta^H y / sqrt(P), without whitening."""
    if y.shape[0] != theta.shape[0]:
        raise DimensionError(f"y {y.shape} and Theta {theta.shape} do not agree")
    solution, _, rank, _ = linalg.lstsq(theta, y)
    if rank < theta.shape[1]:
        raise SingularityError(f"observation matrix has rank {rank} < {theta.shape[1]}")
    return solution / np.sqrt(power)


@dataclass(frozen=True)
class EstimateSet:
    h_hat: np.ndarray              # (K, M)
    f_hat_per_antenna: np.ndarray  # (K, M, N)
    f_hat: np.ndarray              # (K, N)
    C_h: np.ndarray                # (K, M, N+1, N+1)


def combine_estimates(per_antenna: np.ndarray, covariances: np.ndarray,
                      phases: Optional[np.ndarray] = None) -> EstimateSet:
    """Stacks direct estimates across antennas and averages the cascaded ones.

    per_antenna has shape (K, M, N+1). When the cascaded estimates were formed
    against the reference antenna's surface-BS vector, antenna m estimates
    exp(-1j * phases[m]) * f_k; passing phases de-rotates them first.
    """
    per_antenna = np.asarray(per_antenna)
    if per_antenna.ndim != 3 or per_antenna.shape[1] < 1:
        raise DimensionError(f"expected estimates of shape (K, M, N+1), got {per_antenna.shape}")
    f_per = per_antenna[:, :, 1:]
    if phases is not None:
        f_per = f_per * np.exp(1j * np.asarray(phases))[None, :, None]
    return EstimateSet(
        h_hat=per_antenna[:, :, 0].copy(),
        f_hat_per_antenna=f_per,
        f_hat=np.mean(f_per, axis=1),
        C_h=np.asarray(covariances),
    )


def estimate_block(block: ObservationBlock, channels: ChannelSet, schedule: BeamSchedule, pilots: PilotBook,
                   cfg: SystemConfig, simplified: bool = False) -> EstimateSet:
    """Per-antenna LS for every user, then antenna combining.

    Users on a side the schedule leaves dark get a direct-only estimate;
    their cascaded estimate is zero and its covariance block is left zero.
    """
    K, M, N = cfg.K, cfg.M, cfg.N
    x_hat = np.zeros((K, M, N + 1), dtype=complex)
    c_h = np.zeros((K, M, N + 1, N + 1), dtype=complex)
    label = schedule.scheme.value
    despread_all = [despread(block, pilots, k, cfg.despread_mode) for k in range(K)]
    for m in range(M):
        c_z = regularize_covariance(noise_covariance(schedule, channels.g[m], cfg))
        for side in Side:
            users = cfg.users_on(side)
            if not users:
                continue
            theta = observation_matrix(schedule, side, channels.g[m]).theta
            if not schedule.serves(side):
                theta = theta[:, :1]
            width = theta.shape[1]
            weights, info_inv = ls_estimator(theta, c_z, label)
            for k in users:
                y_mk = despread_all[k][m]
                power = cfg.users[k].power
                if simplified:
                    x_hat[k, m, :width] = simplified_ls_estimate(y_mk, theta, power)
                else:
                    x_hat[k, m, :width] = weights @ y_mk / np.sqrt(power)
                c_h[k, m, :width, :width] = info_inv / power
    return combine_estimates(x_hat, c_h)


# --- Fixtures ---
def dump_observations(block: ObservationBlock, path: Union[str, Path]) -> None:
    matrices: Dict[str, np.ndarray] = {"y": block.y}
    for k in range(block.y_despread.shape[0]):
        matrices[f"y_despread_{k}"] = block.y_despread[k]
    dump_matrices(matrices, path, header=f"observations K {block.y_despread.shape[0]}")
    logging.debug(f"Dumped observation block (M={block.M}, L={block.L}) to {path}")


def load_observations(path: Union[str, Path]) -> ObservationBlock:
    blocks = load_matrices(path)
    if "y" not in blocks:
        raise InputError(f"{path} is not an observation fixture")
    despread_keys: List[str] = sorted((k for k in blocks if k.startswith("y_despread_")),
                                      key=lambda name: int(name.rsplit("_", 1)[1]))
    return ObservationBlock(y=blocks["y"], y_despread=np.stack([blocks[k] for k in despread_keys]))
