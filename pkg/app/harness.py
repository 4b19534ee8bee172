import asyncio
import enum
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

import config
from app.analysis import (
    ErrorReport, aggregate_reports, covariance_epsilon, crlb, empirical_sum_mse,
    theoretical_epsilon, trace_form_epsilon,
)
from app.channel import generate_channels
from app.errors import DegenerateModeError, EmptyResultError, InputError
from app.estimation import estimate_block, noise_covariance, observation_matrix, regularize_covariance, synthesize_rx
from app.scenario import (
    Scheme, Side, SystemConfig, UserSpec, config_to_text, dbm_to_watts, validate,
)
from app.training import (
    BeamSchedule, build_baseline_schedule, build_dft_schedule, build_pilots, dft_basis, optimize_amplification,
)

CSV_COLUMNS = ["sweep_var", "value", "scheme", "trials", "seed", "a_R", "a_T", "eps_empirical", "eps_theory"]
# spawn_key of the user-placement stream; trial streams use two-element keys
PLACEMENT_STREAM = (2 ** 32 - 1,)


# --- Random streams ---
def trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    """Independent stream per (sweep point, trial); identical for every scheme at that point."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(point, trial)))


def placement_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=PLACEMENT_STREAM))


# --- Single block ---
def scheme_config(cfg: SystemConfig, scheme: Scheme) -> SystemConfig:
    """cfg tagged with scheme; reflect-only schemes move every user to the reflect side under fair comparison."""
    cfg = replace(cfg, scheme=scheme)
    if scheme.reflect_only and cfg.fair_comparison:
        cfg = cfg.with_users([replace(user, side=Side.REFLECT) for user in cfg.users])
    return cfg


def build_schedule(cfg: SystemConfig, g_1: np.ndarray) -> BeamSchedule:
    basis = dft_basis(cfg.L, cfg.N)
    if cfg.scheme is Scheme.DFT_MFRIS:
        solution = optimize_amplification(cfg)
        return build_dft_schedule(solution.a_R, solution.a_T, g_1, basis, cfg.beta_max,
                                  scheme=Scheme.DFT_MFRIS, sigma_s_sq=cfg.sigma_s_sq)
    return build_baseline_schedule(cfg.scheme, cfg, g_1, basis)


def run_trial(cfg: SystemConfig, scheme: Optional[Scheme] = None,
              rng: Optional[np.random.Generator] = None) -> ErrorReport:
    """One coherent block: channels, schedule, observations, LS estimates and scores."""
    cfg = scheme_config(cfg, scheme or cfg.scheme)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    channels = generate_channels(cfg, rng)
    schedule = build_schedule(cfg, channels.g[0])
    pilots = build_pilots(cfg)
    block = synthesize_rx(channels, schedule, pilots, cfg, rng)
    estimates = estimate_block(block, channels, schedule, pilots, cfg)

    served = [schedule.serves(user.side) for user in cfg.users]
    mse = empirical_sum_mse([channels], [estimates], served)
    stacks = [estimates.C_h[k] for k in range(cfg.K)]
    eps_theory = covariance_epsilon(stacks)
    if schedule.a_R is not None:
        try:
            eps_theory = theoretical_epsilon(schedule.a_R, schedule.a_T, cfg, sigma_s_sq=schedule.sigma_s_sq).total
        except DegenerateModeError:
            pass

    c_z = regularize_covariance(noise_covariance(schedule, channels.g[0], cfg))
    bounds = []
    for k, user in enumerate(cfg.users):
        theta = observation_matrix(schedule, user.side, channels.g[0]).theta
        bounds.append(crlb(theta if served[k] else theta[:, :1], c_z, user.power))

    degenerate = None
    if cfg.scheme is Scheme.DFT_MFRIS:
        degenerate = optimize_amplification(cfg).degenerate
    return ErrorReport(
        scheme=cfg.scheme,
        eps_empirical=mse.eps_empirical,
        eps_empirical_normalized=mse.eps_empirical_normalized,
        eps_theory=eps_theory,
        eps_trace=trace_form_epsilon(stacks),
        eps_d=mse.eps_d,
        eps_f=mse.eps_f,
        crlb_diag=tuple(bounds),
        a_R=schedule.a_R,
        a_T=schedule.a_T,
        unserved_cascade_mse=mse.unserved_cascade_mse,
        degenerate=degenerate,
    )


def run_trials(cfg: SystemConfig, scheme: Scheme, point: int, start: int, stop: int) -> List[ErrorReport]:
    return [run_trial(cfg, scheme, trial_rng(cfg.seed, point, t)) for t in range(start, stop)]


async def run_point(cfg: SystemConfig, scheme: Scheme, trials: int, point: int = 0,
                    workers: int = config.WORKERS, chunk_size: int = config.TRIAL_CHUNK_SIZE) -> ErrorReport:
    """All trials of one sweep point, chunked over worker threads and reduced in trial order."""
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    if chunk_size < 1:
        raise InputError(f"chunk size must be >= 1, got {chunk_size}")
    semaphore = asyncio.Semaphore(max(workers, 1))
    bounds = [(s, min(s + chunk_size, trials)) for s in range(0, trials, chunk_size)]

    async def run_chunk(start: int, stop: int) -> List[ErrorReport]:
        async with semaphore:
            return await asyncio.to_thread(run_trials, cfg, scheme, point, start, stop)

    chunks = await asyncio.gather(*(run_chunk(start, stop) for start, stop in bounds))
    return aggregate_reports([report for chunk in chunks for report in chunk])


# --- Sweeps ---
class SweepVariable(enum.Enum):
    POWER = "power"
    DISTANCE = "distance"
    USERS = "users"


@dataclass(frozen=True)
class SweepSpec:
    variable: SweepVariable
    values: Tuple[float, ...]
    trials: int
    schemes: Tuple[Scheme, ...]
    base: SystemConfig

    def __post_init__(self):
        if not self.values:
            raise InputError("sweep needs at least one value")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise InputError("sweep values must be strictly increasing")
        if self.trials < 1:
            raise InputError(f"trials must be >= 1, got {self.trials}")
        if not self.schemes:
            raise InputError("sweep needs at least one scheme")


@dataclass(frozen=True)
class SweepRow:
    sweep_var: SweepVariable
    value: float
    scheme: Scheme
    trials: int
    seed: int
    a_R: Optional[float]
    a_T: Optional[float]
    eps_empirical: float
    eps_theory: float


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: List[SweepRow] = field(default_factory=list)
    reports: Dict[Tuple[float, Scheme], ErrorReport] = field(default_factory=dict)


def sample_user_positions(count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions in the user disc (z = 0), shape (count, 3)."""
    radius = config.USER_REGION_RADIUS * np.sqrt(rng.uniform(0.0, 1.0, count))
    angle = rng.uniform(0.0, 2.0 * np.pi, count)
    center = np.asarray(config.USER_REGION_CENTER, dtype=float)
    offsets = np.stack([radius * np.cos(angle), radius * np.sin(angle), np.zeros(count)], axis=1)
    return center[None, :] + offsets


def user_distances(positions: np.ndarray, d_bs_ris: float) -> Tuple[np.ndarray, np.ndarray]:
    """(distance to surface, distance to BS) with the BS at the origin and the surface at (0, d, 0)."""
    surface = np.array([0.0, d_bs_ris, 0.0])
    d_ris = np.linalg.norm(positions - surface[None, :], axis=1)
    d_bs = np.linalg.norm(positions, axis=1)
    floor = config.MIN_LINK_DISTANCE
    return np.maximum(d_ris, floor), np.maximum(d_bs, floor)


def point_config(spec: SweepSpec, value: float, positions: np.ndarray) -> SystemConfig:
    base = spec.base
    if spec.variable is SweepVariable.USERS:
        if value != int(value) or value < 1:
            raise InputError(f"user count must be a positive integer, got {value}")
        count = int(value)
        sides = [Side.REFLECT, Side.REFRACT]
        users = [UserSpec(side=sides[k % 2], power=base.users[0].power, distance_to_ris=0.0, distance_to_bs=0.0)
                 for k in range(count)]
        d_bs_ris = base.d_bs_ris
    elif spec.variable is SweepVariable.POWER:
        share = dbm_to_watts(value) / base.K
        users = [replace(user, power=share) for user in base.users]
        d_bs_ris = base.d_bs_ris
    else:
        users = list(base.users)
        d_bs_ris = float(value)
    d_ris, d_bs = user_distances(positions[:len(users)], d_bs_ris)
    users = [replace(user, distance_to_ris=float(r), distance_to_bs=float(b))
             for user, r, b in zip(users, d_ris, d_bs)]
    cfg = replace(base, users=tuple(users), d_bs_ris=d_bs_ris, L=max(base.L, len(users)))
    return validate(cfg)


async def run_sweep(spec: SweepSpec, workers: int = config.WORKERS) -> SweepResult:
    """Every (value, scheme) point; placement is drawn once and shared by all points."""
    count = max(int(v) for v in spec.values) if spec.variable is SweepVariable.USERS else spec.base.K
    positions = sample_user_positions(count, placement_rng(spec.base.seed))
    result = SweepResult(spec=spec)
    for point, value in enumerate(spec.values):
        cfg = point_config(spec, value, positions)
        for scheme in spec.schemes:
            report = await run_point(cfg, scheme, spec.trials, point, workers)
            logging.info(f"Sweep {spec.variable.value}={value!r} {scheme.value}: "
                         f"eps={report.eps_empirical:.6g} (theory {report.eps_theory:.6g}, se {report.eps_std_error:.3g})")
            result.reports[(value, scheme)] = report
            result.rows.append(SweepRow(
                sweep_var=spec.variable,
                value=float(value),
                scheme=scheme,
                trials=report.trial_count,
                seed=spec.base.seed,
                a_R=report.a_R,
                a_T=report.a_T,
                eps_empirical=report.eps_empirical,
                eps_theory=report.eps_theory,
            ))
    return result


def parse_values(text: str) -> Tuple[float, ...]:
    """Reads "start:stop:step" (stop inclusive) or a comma list into sorted unique values."""
    text = text.strip()
    separator = ":" if ":" in text else ","
    try:
        parts = [float(p) for p in text.split(separator) if p.strip()]
    except ValueError:
        raise InputError(f"cannot read sweep values '{text}'")
    if separator == ":":
        if len(parts) != 3:
            raise InputError(f"range must be start:stop:step, got '{text}'")
        start, stop, step = parts
        if step <= 0:
            raise InputError(f"range step must be positive, got {step}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = [start + i * step for i in range(max(count, 0))]
    else:
        values = parts
    if not values:
        raise InputError(f"no sweep values in '{text}'")
    return tuple(sorted(set(values)))


# --- Output ---
def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def result_frame(result: SweepResult) -> pd.DataFrame:
    if not result.rows:
        raise EmptyResultError("sweep produced no rows")
    rows = sorted(result.rows, key=lambda r: (r.value, r.scheme.value))
    frame = pd.DataFrame([{
        "sweep_var": row.sweep_var.value,
        "value": _fmt(row.value),
        "scheme": row.scheme.value,
        "trials": str(row.trials),
        "seed": str(row.seed),
        "a_R": _fmt(row.a_R),
        "a_T": _fmt(row.a_T),
        "eps_empirical": _fmt(row.eps_empirical),
        "eps_theory": _fmt(row.eps_theory),
    } for row in rows], columns=CSV_COLUMNS)
    return frame


def emit_csv(result: SweepResult, destination: Union[str, Path]) -> str:
    """Writes the sweep CSV and its .meta companion; returns the CSV text."""
    frame = result_frame(result)
    text = frame.to_csv(index=False, lineterminator="\n")
    destination = Path(destination)
    if destination.parent and not destination.parent.exists():
        destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_text(text)
    meta = destination.with_name(destination.name + ".meta")
    meta.write_text(meta_text(result.spec))
    logging.info(f"Wrote {len(frame)} rows to {destination}")
    return text


OVERRIDDEN_FIELDS = {
    SweepVariable.POWER: "user powers (equal split of the swept total) and user distances",
    SweepVariable.DISTANCE: "D_BS_RIS and user distances",
    SweepVariable.USERS: "USERS (count, alternating sides) and L >= K",
}


def meta_text(spec: SweepSpec) -> str:
    """Base scenario of the sweep; every point derives its own config from it."""
    schemes = ",".join(s.value for s in spec.schemes)
    header = [
        "# base configuration of the sweep, not the per-point configs",
        f"# each point overrides {OVERRIDDEN_FIELDS[spec.variable]}; users are placed from the seed",
        f"# sweep {spec.variable.value}",
        f"# values {','.join(repr(v) for v in spec.values)}",
        f"# trials {spec.trials}",
        f"# schemes {schemes}",
    ]
    return "\n".join(header) + "\n" + config_to_text(spec.base)


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"sweep_var": str, "scheme": str}, float_precision="round_trip")
