import enum
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values

import config
from app.errors import ConfigValidationError, InputError


# --- Enumerations ---
class Side(enum.Enum):
    REFLECT = "reflect"
    REFRACT = "refract"

    @property
    def other(self) -> "Side":
        return Side.REFRACT if self is Side.REFLECT else Side.REFLECT


class Scheme(enum.Enum):
    DFT_MFRIS = "dft-mfris"
    ONOFF_MFRIS = "onoff-mfris"
    STAR = "star"
    ACTIVE = "active"
    PASSIVE = "passive"

    @property
    def reflect_only(self) -> bool:
        return self in (Scheme.ACTIVE, Scheme.PASSIVE)


class DespreadMode(enum.Enum):
    IDEAL = "ideal"
    FULL = "full"


class UpdateRule(enum.Enum):
    ORACLE = "oracle"
    CLOSED_FORM = "closed-form"


def parse_enum(enum_cls, value: str):
    """Looks up an enum member by value or name, case-insensitively."""
    text = str(value).strip().lower().replace("_", "-")
    for member in enum_cls:
        if text in (member.value, member.name.lower().replace("_", "-")):
            return member
    choices = ", ".join(m.value for m in enum_cls)
    raise InputError(f"unknown {enum_cls.__name__} '{value}' (expected one of: {choices})")


def parse_flag(value: Union[str, bool]) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise InputError(f"cannot read '{value}' as on/off")


# --- Domain Types ---
@dataclass(frozen=True)
class UserSpec:
    side: Side
    power: float
    distance_to_ris: float
    distance_to_bs: float


@dataclass(frozen=True)
class SystemConfig:
    """All scenario scalars, in linear units."""
    M: int
    N: int
    users: Tuple[UserSpec, ...]
    L: int
    sigma_s_sq: float
    sigma_sq: float
    beta_max: float
    d_bs_ris: float
    pl_exponent_ris_bs: float
    pl_ref: float
    pl_exponent_user_ris: float = config.DEFAULT_PL_EXPONENT_USER_RIS
    pl_exponent_user_bs: float = config.DEFAULT_PL_EXPONENT_USER_BS
    seed: int = config.DEFAULT_SEED
    despread_mode: DespreadMode = DespreadMode.IDEAL
    scheme: Scheme = Scheme.DFT_MFRIS
    fair_comparison: bool = True
    update_rule: UpdateRule = UpdateRule.ORACLE
    independent_surface_noise: bool = False
    coupled_cap_step: bool = True

    @property
    def K(self) -> int:
        return len(self.users)

    @property
    def alpha(self) -> float:
        """Linear path-loss gain of the surface-BS link."""
        return path_loss(self.d_bs_ris, self.pl_exponent_ris_bs, self.pl_ref)

    @property
    def amplitude_budget(self) -> float:
        """beta_max * alpha, the bound on a_R^2 + a_T^2."""
        return self.beta_max * self.alpha

    def users_on(self, side: Side) -> List[int]:
        return [k for k, user in enumerate(self.users) if user.side is side]

    def side_power(self, side: Side) -> float:
        return float(sum(user.power for user in self.users if user.side is side))

    def with_users(self, users: List[UserSpec]) -> "SystemConfig":
        return replace(self, users=tuple(users))


# --- Unit conversions ---
def dbm_to_watts(x: float) -> float:
    return 10.0 ** ((x - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    if w <= 0:
        return float("-inf")
    return 10.0 * math.log10(w) + 30.0


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        return float("-inf")
    return 10.0 * math.log10(x)


def path_loss(distance: float, exponent: float, ref: float) -> float:
    """Linear gain ref * distance^(-exponent)."""
    if not distance > 0:
        raise InputError(f"distance must be positive, got {distance}")
    return ref * distance ** (-exponent)


# --- Validation ---
def validate(cfg: SystemConfig) -> SystemConfig:
    """Returns cfg unchanged when every invariant holds; otherwise raises with all violations named."""
    violations: List[str] = []
    if cfg.M < 1:
        violations.append(f"M >= 1 violated (M={cfg.M})")
    if cfg.N < 1:
        violations.append(f"N >= 1 violated (N={cfg.N})")
    if not cfg.users:
        violations.append("K >= 1 violated (no users)")
    if cfg.L < cfg.N + 1:
        violations.append(f"L >= N+1 violated (L={cfg.L}, N={cfg.N})")
    if cfg.L < cfg.K:
        violations.append(f"L >= K violated (L={cfg.L}, K={cfg.K})")
    if not cfg.beta_max >= 1:
        violations.append(f"beta_max >= 1 violated (beta_max={cfg.beta_max})")
    # Zero noise powers are admitted: they describe the noiseless reference case.
    if not cfg.sigma_s_sq >= 0:
        violations.append(f"sigma_s_sq >= 0 violated (sigma_s_sq={cfg.sigma_s_sq})")
    if not cfg.sigma_sq >= 0:
        violations.append(f"sigma_sq >= 0 violated (sigma_sq={cfg.sigma_sq})")
    if not cfg.pl_ref > 0:
        violations.append(f"pl_ref > 0 violated (pl_ref={cfg.pl_ref})")
    if not cfg.d_bs_ris > 0:
        violations.append(f"d_bs_ris > 0 violated (d_bs_ris={cfg.d_bs_ris})")
    if not 0 <= cfg.seed < 2 ** 64:
        violations.append(f"seed in [0, 2^64) violated (seed={cfg.seed})")
    for k, user in enumerate(cfg.users):
        if not isinstance(user.side, Side):
            violations.append(f"users[{k}].side in {{reflect, refract}} violated (side={user.side})")
        if not user.power > 0:
            violations.append(f"users[{k}].power > 0 violated (power={user.power})")
        if not user.distance_to_ris > 0:
            violations.append(f"users[{k}].distance_to_ris > 0 violated (d_ris={user.distance_to_ris})")
        if not user.distance_to_bs > 0:
            violations.append(f"users[{k}].distance_to_bs > 0 violated (d_bs={user.distance_to_bs})")
    if violations:
        raise ConfigValidationError(violations)
    return cfg


# --- Defaults ---
def default_users(count: int = 2, power_dbm: float = config.DEFAULT_USER_POWER_DBM) -> List[UserSpec]:
    """Users alternating reflect/refract sides, all at the centre of the user region."""
    center = config.USER_REGION_CENTER
    d_bs = math.hypot(*center)
    d_ris = max(abs(center[1] - config.DEFAULT_D_BS_RIS), config.MIN_LINK_DISTANCE)
    sides = [Side.REFLECT, Side.REFRACT]
    return [
        UserSpec(side=sides[k % 2], power=dbm_to_watts(power_dbm), distance_to_ris=d_ris, distance_to_bs=d_bs)
        for k in range(count)
    ]


def default_config(**overrides) -> SystemConfig:
    """Builds the measurement-setup configuration; keyword overrides replace fields."""
    n = overrides.pop("N", config.DEFAULT_N)
    users = overrides.pop("users", None)
    cfg = SystemConfig(
        M=overrides.pop("M", config.DEFAULT_M),
        N=n,
        users=tuple(users if users is not None else default_users()),
        L=overrides.pop("L", n + 1),
        sigma_s_sq=dbm_to_watts(config.DEFAULT_SIGMA_S_SQ_DBM),
        sigma_sq=dbm_to_watts(config.DEFAULT_SIGMA_SQ_DBM),
        beta_max=db_to_linear(config.DEFAULT_BETA_MAX_DB),
        d_bs_ris=config.DEFAULT_D_BS_RIS,
        pl_exponent_ris_bs=config.DEFAULT_PL_EXPONENT_RIS_BS,
        pl_ref=db_to_linear(config.DEFAULT_PL_REF_DB),
    )
    return replace(cfg, **overrides) if overrides else cfg


# --- Config files ---
_FILE_KEYS = (
    "M", "N", "L", "SIGMA_S_SQ_DBM", "SIGMA_SQ_DBM", "BETA_MAX_DB", "D_BS_RIS",
    "PL_EXPONENT_RIS_BS", "PL_REF_DB", "PL_EXPONENT_USER_RIS", "PL_EXPONENT_USER_BS",
    "SEED", "DESPREAD_MODE", "SCHEME", "FAIR_COMPARISON", "UPDATE_RULE",
    "INDEPENDENT_SURFACE_NOISE", "COUPLED_CAP_STEP", "USERS",
)


def _parse_users(raw: str) -> List[UserSpec]:
    try:
        entries = json.loads(raw)
    except json.JSONDecodeError as e:
        raise InputError(f"USERS is not a JSON array: {e}")
    if not isinstance(entries, list):
        raise InputError("USERS must be a JSON array")
    users = []
    for k, entry in enumerate(entries):
        try:
            users.append(UserSpec(
                side=parse_enum(Side, entry["side"]),
                power=dbm_to_watts(float(entry["power_dbm"])),
                distance_to_ris=float(entry["d_ris"]),
                distance_to_bs=float(entry["d_bs"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"USERS[{k}] is malformed: {e}")
    return users


def config_from_mapping(values: Dict[str, Optional[str]]) -> SystemConfig:
    """Builds a SystemConfig from flat KEY=VALUE pairs (dB units), filling defaults."""
    values = {key.upper(): value for key, value in values.items()}
    unknown = sorted(set(values) - set(_FILE_KEYS))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")

    def get(key: str, default):
        raw = values.get(key)
        return default if raw is None or raw == "" else raw

    try:
        n = int(get("N", config.DEFAULT_N))
        users = _parse_users(values["USERS"]) if values.get("USERS") else default_users()
        cfg = SystemConfig(
            M=int(get("M", config.DEFAULT_M)),
            N=n,
            users=tuple(users),
            L=int(get("L", n + 1)),
            sigma_s_sq=dbm_to_watts(float(get("SIGMA_S_SQ_DBM", config.DEFAULT_SIGMA_S_SQ_DBM))),
            sigma_sq=dbm_to_watts(float(get("SIGMA_SQ_DBM", config.DEFAULT_SIGMA_SQ_DBM))),
            beta_max=db_to_linear(float(get("BETA_MAX_DB", config.DEFAULT_BETA_MAX_DB))),
            d_bs_ris=float(get("D_BS_RIS", config.DEFAULT_D_BS_RIS)),
            pl_exponent_ris_bs=float(get("PL_EXPONENT_RIS_BS", config.DEFAULT_PL_EXPONENT_RIS_BS)),
            pl_ref=db_to_linear(float(get("PL_REF_DB", config.DEFAULT_PL_REF_DB))),
            pl_exponent_user_ris=float(get("PL_EXPONENT_USER_RIS", config.DEFAULT_PL_EXPONENT_USER_RIS)),
            pl_exponent_user_bs=float(get("PL_EXPONENT_USER_BS", config.DEFAULT_PL_EXPONENT_USER_BS)),
            seed=int(get("SEED", config.DEFAULT_SEED)),
            despread_mode=parse_enum(DespreadMode, get("DESPREAD_MODE", "ideal")),
            scheme=parse_enum(Scheme, get("SCHEME", "dft-mfris")),
            fair_comparison=parse_flag(get("FAIR_COMPARISON", True)),
            update_rule=parse_enum(UpdateRule, get("UPDATE_RULE", "oracle")),
            independent_surface_noise=parse_flag(get("INDEPENDENT_SURFACE_NOISE", False)),
            coupled_cap_step=parse_flag(get("COUPLED_CAP_STEP", True)),
        )
    except ValueError as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"malformed config value: {e}")
    return cfg


def load_config(path: Union[str, Path]) -> SystemConfig:
    """Reads a flat KEY=VALUE scenario file and validates it."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    cfg = config_from_mapping(dotenv_values(path))
    logging.info(f"Loaded scenario config from {path} (M={cfg.M}, N={cfg.N}, K={cfg.K}, L={cfg.L})")
    return validate(cfg)


def config_to_text(cfg: SystemConfig) -> str:
    """Renders cfg in the scenario-file format (readable back by load_config)."""
    users = [
        {
            "side": user.side.value,
            "power_dbm": watts_to_dbm(user.power),
            "d_ris": user.distance_to_ris,
            "d_bs": user.distance_to_bs,
        }
        for user in cfg.users
    ]
    lines = [
        f"M={cfg.M}",
        f"N={cfg.N}",
        f"L={cfg.L}",
        f"SIGMA_S_SQ_DBM={watts_to_dbm(cfg.sigma_s_sq)!r}",
        f"SIGMA_SQ_DBM={watts_to_dbm(cfg.sigma_sq)!r}",
        f"BETA_MAX_DB={linear_to_db(cfg.beta_max)!r}",
        f"D_BS_RIS={float(cfg.d_bs_ris)!r}",
        f"PL_EXPONENT_RIS_BS={float(cfg.pl_exponent_ris_bs)!r}",
        f"PL_REF_DB={linear_to_db(cfg.pl_ref)!r}",
        f"PL_EXPONENT_USER_RIS={float(cfg.pl_exponent_user_ris)!r}",
        f"PL_EXPONENT_USER_BS={float(cfg.pl_exponent_user_bs)!r}",
        f"SEED={cfg.seed}",
        f"DESPREAD_MODE={cfg.despread_mode.value}",
        f"SCHEME={cfg.scheme.value}",
        f"FAIR_COMPARISON={'on' if cfg.fair_comparison else 'off'}",
        f"UPDATE_RULE={cfg.update_rule.value}",
        f"INDEPENDENT_SURFACE_NOISE={'on' if cfg.independent_surface_noise else 'off'}",
        f"COUPLED_CAP_STEP={'on' if cfg.coupled_cap_step else 'off'}",
        f"USERS='{json.dumps(users)}'",
    ]
    return "\n".join(lines) + "\n"
