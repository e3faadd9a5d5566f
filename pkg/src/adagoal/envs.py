"""Environment constructors: two-room grid, the reset-free separation instance,
the hard decision-state instance and linear-mixture instances."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .mdp import InvalidMdpError, TabularMdp

# cardinal moves as (drow, dcol): up, right, down, left
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass
class GridWorldSpec:
    width: int = 8
    height: int = 7
    walls: list = field(default_factory=lambda: [(2, 1), (2, 2), (2, 3), (3, 3)])
    p_f: float = 0.1
    eta: float = 0.001
    rare_cells: list = field(default_factory=lambda: [(5, 6), (5, 7), (6, 6), (6, 7)])
    start: tuple = (0, 0)
    # False: eta is the probability of entering the room, split evenly over its cells
    eta_per_cell: bool = True

    @classmethod
    def two_room(cls, **kw) -> "GridWorldSpec":
        return cls(**kw)

    @classmethod
    def open_grid(cls, size: int = 5, p_f: float = 0.0) -> "GridWorldSpec":
        return cls(width=size, height=size, walls=[], p_f=p_f, eta=0.0, rare_cells=[])

    @classmethod
    def from_dict(cls, d: dict) -> "GridWorldSpec":
        d = dict(d)
        for key in ("walls", "rare_cells"):
            if key in d:
                d[key] = [tuple(c) for c in d[key]]
        if "start" in d:
            d["start"] = tuple(d["start"])
        return cls(**d)


@dataclass
class GridWorld:
    mdp: TabularMdp
    cells: list
    rare_states: list

    def state_of(self, cell) -> int:
        return self.cells.index(tuple(cell))


def build_two_room_grid(spec: GridWorldSpec | None = None) -> GridWorld:
    """Grid MDP whose second room is entered only from the start cell.

    Every cardinal action at the start cell moves into each second-room cell
    with probability eta, so the room as a whole is entered with probability
    ``len(rare_cells) * eta``. With ``eta_per_cell=False`` the room is entered
    with probability eta in total.
    """
    spec = spec or GridWorldSpec()
    walls = {tuple(c) for c in spec.walls}
    rare = [tuple(c) for c in spec.rare_cells]
    rare_set = set(rare)
    cell_eta = spec.eta if spec.eta_per_cell or not rare else spec.eta / len(rare)
    if not 0 <= spec.p_f <= 1 or not 0 <= cell_eta * len(rare) < 1 or spec.eta < 0:
        raise InvalidMdpError("p_f must lie in [0, 1] and the room entry probability in [0, 1)")
    if rare and spec.eta == 0:
        raise InvalidMdpError("a second room needs eta > 0")
    cells = [(r, c) for r in range(spec.height) for c in range(spec.width) if (r, c) not in walls]
    start = tuple(spec.start)
    if start not in cells or start in rare_set:
        raise InvalidMdpError("start cell must be a free first-room cell")
    # start first so that s0 = 0
    cells.remove(start)
    cells.insert(0, start)
    index = {cell: i for i, cell in enumerate(cells)}

    def room(cell):
        return cell in rare_set

    def target(cell, m):
        r, c = cell[0] + MOVES[m][0], cell[1] + MOVES[m][1]
        nxt = (r, c)
        # walls, grid edges and room boundaries all reflect
        if nxt not in index or room(nxt) != room(cell):
            return cell
        return nxt

    first_room = [c for c in cells if not room(c)]
    seen = {start}
    queue = deque([start])
    while queue:
        cell = queue.popleft()
        for m in range(4):
            nxt = target(cell, m)
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if len(seen) != len(first_room):
        raise InvalidMdpError("wall layout disconnects part of the first room from the start cell")

    S, A = len(cells), 5
    P = np.zeros((S, A, S))
    for cell in cells:
        s = index[cell]
        for a in range(4):
            for m in range(4):
                w = 1.0 - spec.p_f if m == a else spec.p_f / 3
                if w > 0:
                    P[s, a, index[target(cell, m)]] += w
            if s == 0 and rare:
                P[s, a] *= 1.0 - cell_eta * len(rare)
                for rc in rare:
                    P[s, a, index[rc]] += cell_eta
        P[s, 4, 0] = 1.0
    mdp = TabularMdp(P, s0=0, reset_action=4)
    return GridWorld(mdp, cells, [index[c] for c in rare])


# state indices of the separation instance
SEP_S0, SEP_G, SEP_X, SEP_TILDE, SEP_BAR = range(5)


@dataclass
class HardResetFreeSpec:
    eta: float = 1e-3
    zeta: float | None = None
    a_dagger: int = 0
    A: int = 4
    L: float = 20.0

    def __post_init__(self):
        if self.zeta is None:
            self.zeta = 2.0 / self.L
        if not (0 < self.eta < 1 and 0 < self.zeta < 1):
            raise ValueError("eta and zeta must lie in (0, 1)")
        if self.A < 4 or not 0 <= self.a_dagger < self.A:
            raise ValueError("need A >= 4 and a valid favourable action")


def build_hard_reset_free(spec: HardResetFreeSpec | None = None, reset_free: bool = False) -> TabularMdp:
    """Five-state separation instance; states are (s0, g, x, s~, s-).

    Unless ``reset_free``, an extra action (index A) returning to s0 is appended.
    """
    spec = spec or HardResetFreeSpec()
    A = spec.A if reset_free else spec.A + 1
    P = np.zeros((5, A, 5))
    for a in range(spec.A):
        P[SEP_S0, a, SEP_TILDE] = spec.eta
        P[SEP_S0, a, SEP_X] = 1 - spec.eta
        P[SEP_X, a, SEP_G] = spec.zeta
        P[SEP_X, a, SEP_X] = 1 - spec.zeta
        if a == spec.a_dagger:
            P[SEP_TILDE, a, SEP_G] = 1.0
        else:
            P[SEP_TILDE, a, SEP_BAR] = 1.0
        P[SEP_BAR, a, SEP_G] = spec.eta / 2
        P[SEP_BAR, a, SEP_BAR] = 1 - spec.eta / 2
        P[SEP_G, a, SEP_S0] = 1.0
    if not reset_free:
        P[:, spec.A, SEP_S0] = 1.0
    return TabularMdp(P, s0=SEP_S0, reset_action=None if reset_free else spec.A)


BPI_S0, BPI_D, BPI_G, BPI_B = range(4)


@dataclass
class BpiSspHardSpec:
    L: float = 10.0
    eps: float = 0.5
    a_star: int = 0
    A: int = 3
    bad_state_detour: bool = False

    @property
    def H(self) -> int:
        return math.ceil(self.L / 2 - 1)

    @property
    def q(self) -> float:
        return 1.0 / self.H

    @property
    def eps_tilde(self) -> float:
        return self.eps / (2 * (self.H + 1))

    def optimal_value(self) -> float:
        p = 0.5 + self.eps_tilde
        if self.bad_state_detour:
            return (1 / self.q + 2 - p) / p
        return (1 / self.q + 1) / p


def build_bpi_ssp_hard(spec: BpiSspHardSpec | None = None) -> TabularMdp:
    """Four states (s0, s_d, s_g, s_b); the last action is the reset.

    A failed decision returns to s0 directly unless ``bad_state_detour``, in
    which case it passes through s_b first (one extra step).
    """
    spec = spec or BpiSspHardSpec()
    if spec.H < 1:
        raise ValueError("L too small: derived H must be at least 1")
    if not 0 <= spec.a_star < spec.A:
        raise ValueError("a_star out of range")
    A = spec.A + 1
    P = np.zeros((4, A, 4))
    fail = BPI_B if spec.bad_state_detour else BPI_S0
    for a in range(spec.A):
        P[BPI_S0, a, BPI_D] = spec.q
        P[BPI_S0, a, BPI_S0] = 1 - spec.q
        p = 0.5 + spec.eps_tilde if a == spec.a_star else 0.5
        P[BPI_D, a, BPI_G] = p
        P[BPI_D, a, fail] += 1 - p
        P[BPI_B, a, BPI_S0] = 1.0
        P[BPI_G, a, BPI_G] = 1.0
    P[:, spec.A, BPI_S0] = 1.0
    return TabularMdp(P, s0=BPI_S0, reset_action=spec.A)


@dataclass
class LinearMixtureModel:
    basis: np.ndarray       # (d, S, A, S)
    theta_star: np.ndarray  # (d,)
    B: float
    rescale: float = 1.0

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    def realized_kernel(self) -> np.ndarray:
        return np.tensordot(self.theta_star, self.basis, axes=1)


@dataclass
class MixtureEnv:
    model: LinearMixtureModel
    mdp: TabularMdp

    def to_dict(self) -> dict:
        return {
            "d": self.model.d,
            "B": self.model.B,
            "theta_star": self.model.theta_star.tolist(),
            "basis": self.model.basis.tolist(),
            "rescale": self.model.rescale,
            "mdp": self.mdp.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureEnv":
        model = LinearMixtureModel(np.asarray(data["basis"], dtype=np.float64),
                                   np.asarray(data["theta_star"], dtype=np.float64),
                                   float(data["B"]), float(data.get("rescale", 1.0)))
        return cls(model, TabularMdp.from_dict(data["mdp"]))


def build_mixture_env(d: int, base_kernels, weights, s0: int = 0, reset_action: int | None = None,
                      B: float | None = None, rng=None) -> MixtureEnv:
    """Mixture of ``d`` probability kernels.

    Basis rows are scaled by 1/sqrt(d) (and the weights by sqrt(d)) whenever
    d > 1, so that aggregated features of any [0, 1]-valued function have
    norm at most 1. ``rng`` is accepted for interface symmetry; construction is
    deterministic.
    """
    kernels = np.asarray(base_kernels, dtype=np.float64)
    theta = np.asarray(weights, dtype=np.float64)
    if d < 1 or kernels.shape[0] != d or theta.shape != (d,):
        raise ValueError("need d kernels and d weights")
    if np.any(kernels < 0) or not np.allclose(kernels.sum(axis=3), 1.0, atol=1e-12):
        raise InvalidMdpError("basis kernels must be probability kernels")
    realized = np.tensordot(theta, kernels, axes=1)
    if np.any(realized < -1e-15):
        raise InvalidMdpError("mixture weights produce negative probabilities")
    realized = np.maximum(realized, 0.0)
    # |psi_i| <= 1 for [0,1] targets, so the feature norm is at most sqrt(d)
    scale = math.sqrt(d) if d > 1 else 1.0
    basis = kernels / scale
    theta_scaled = theta * scale
    if B is None:
        B = float(np.linalg.norm(theta_scaled))
    if np.linalg.norm(theta_scaled) > B + 1e-12:
        raise ValueError("theta_star exceeds the norm bound B")
    if reset_action is None:
        reset_action = kernels.shape[2] - 1
    mdp = TabularMdp(realized, s0=s0, reset_action=reset_action)
    return MixtureEnv(LinearMixtureModel(basis, theta_scaled, float(B), 1.0 / scale), mdp)


def small_grid_kernel(rows: int = 2, cols: int = 3, p_f: float = 0.0, rotate: int = 0) -> np.ndarray:
    """Grid kernel with 4 cardinal actions plus a reset; ``rotate`` relabels the cardinal actions."""
    cells = [(r, c) for r in range(rows) for c in range(cols)]
    index = {cell: i for i, cell in enumerate(cells)}
    S = len(cells)
    P = np.zeros((S, 5, S))
    for cell, s in index.items():
        for a in range(4):
            for m in range(4):
                w = 1.0 - p_f if m == (a + rotate) % 4 else p_f / 3
                nxt = (cell[0] + MOVES[m][0], cell[1] + MOVES[m][1])
                P[s, a, index.get(nxt, s)] += w
        P[s, 4, 0] = 1.0
    return P


def default_mixture(theta=(0.7, 0.3)) -> MixtureEnv:
    """Two 6-state grid kernels (plain and with rotated action labels), mixed."""
    kernels = [small_grid_kernel(), small_grid_kernel(rotate=1)]
    return build_mixture_env(2, kernels, theta, s0=0, reset_action=4)
