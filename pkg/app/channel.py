import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from app.errors import DimensionError, InputError
from app.scenario import Side, SystemConfig, parse_enum, path_loss


@dataclass(frozen=True)
class ChannelSet:
    """One block-fading realization.

    g[m] is the surface-BS vector seen by antenna m; every row equals
    exp(1j * antenna_phases[m]) * g[0]. h_direct[k] and f_cascade[k] are the
    direct and user-surface vectors of user k.
    """
    g: np.ndarray                 # (M, N)
    antenna_phases: np.ndarray    # (M,), antenna_phases[0] == 0
    h_direct: np.ndarray          # (K, M)
    f_cascade: np.ndarray         # (K, N)
    sides: Tuple[Side, ...]

    @property
    def M(self) -> int:
        return self.g.shape[0]

    @property
    def N(self) -> int:
        return self.g.shape[1]

    @property
    def K(self) -> int:
        return self.h_direct.shape[0]

    def G(self, m: int) -> np.ndarray:
        """G_m = diag(g_m^H)."""
        return np.diag(np.conj(self.g[m]))


def complex_gaussian(rng: np.random.Generator, variance: float, size) -> np.ndarray:
    """Circularly-symmetric CN(0, variance) samples."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def gen_ris_bs(cfg: SystemConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Constant-modulus rank-1 LoS link: returns (g of shape (M, N), antenna phases)."""
    psi = rng.uniform(0.0, 2.0 * np.pi, cfg.N)
    theta = rng.uniform(0.0, 2.0 * np.pi, cfg.M)
    theta[0] = 0.0
    g1 = np.sqrt(cfg.alpha) * np.exp(1j * psi)
    g = np.exp(1j * theta)[:, None] * g1[None, :]
    return g, theta


def gen_user_links(cfg: SystemConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Rayleigh user-BS and user-surface vectors, frozen over the pilot block."""
    h = np.empty((cfg.K, cfg.M), dtype=complex)
    f = np.empty((cfg.K, cfg.N), dtype=complex)
    for k, user in enumerate(cfg.users):
        var_bs = path_loss(user.distance_to_bs, cfg.pl_exponent_user_bs, cfg.pl_ref)
        var_ris = path_loss(user.distance_to_ris, cfg.pl_exponent_user_ris, cfg.pl_ref)
        h[k] = complex_gaussian(rng, var_bs, cfg.M)
        f[k] = complex_gaussian(rng, var_ris, cfg.N)
    return h, f


def generate_channels(cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    g, theta = gen_ris_bs(cfg, rng)
    h, f = gen_user_links(cfg, rng)
    return ChannelSet(g=g, antenna_phases=theta, h_direct=h, f_cascade=f,
                      sides=tuple(user.side for user in cfg.users))


# --- Text fixtures ---
# Blocks of "[name] rows cols" followed by rows of space separated "re,im" cells.

def _format_matrix(name: str, matrix: np.ndarray) -> List[str]:
    matrix = np.atleast_2d(matrix)
    lines = [f"[{name}] {matrix.shape[0]} {matrix.shape[1]}"]
    for row in matrix:
        lines.append(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row.astype(complex)))
    return lines


def dump_matrices(matrices: Dict[str, np.ndarray], path: Union[str, Path], header: str = "") -> None:
    lines = [f"# {header}"] if header else []
    for name, matrix in matrices.items():
        lines.extend(_format_matrix(name, matrix))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrices(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    matrices: Dict[str, np.ndarray] = {}
    lines = [line for line in Path(path).read_text().splitlines() if line and not line.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head[0].startswith("["):
            raise InputError(f"expected a block header, got '{lines[i]}'")
        name, rows, cols = head[0][1:-1], int(head[1]), int(head[2])
        body = lines[i + 1:i + 1 + rows]
        matrix = np.empty((rows, cols), dtype=complex)
        for r, line in enumerate(body):
            cells = line.split()
            if len(cells) != cols:
                raise DimensionError(f"block '{name}' row {r} has {len(cells)} cells, expected {cols}")
            for c, cell in enumerate(cells):
                re, im = cell.split(",")
                matrix[r, c] = complex(float(re), float(im))
        matrices[name] = matrix
        i += 1 + rows
    return matrices


def dump_channels(channels: ChannelSet, path: Union[str, Path]) -> None:
    sides = " ".join(side.value for side in channels.sides)
    dump_matrices({
        "g": channels.g,
        "antenna_phases": channels.antenna_phases[None, :],
        "h_direct": channels.h_direct,
        "f_cascade": channels.f_cascade,
    }, path, header=f"sides {sides}")
    logging.debug(f"Dumped channel set (M={channels.M}, N={channels.N}, K={channels.K}) to {path}")


def load_channels(path: Union[str, Path]) -> ChannelSet:
    text = Path(path).read_text()
    first = text.splitlines()[0] if text else ""
    if not first.startswith("# sides"):
        raise InputError(f"{path} is not a channel fixture")
    sides = tuple(parse_enum(Side, s) for s in first.split()[2:])
    blocks = load_matrices(path)
    return ChannelSet(
        g=blocks["g"],
        antenna_phases=blocks["antenna_phases"][0].real.copy(),
        h_direct=blocks["h_direct"],
        f_cascade=blocks["f_cascade"],
        sides=sides,
    )
