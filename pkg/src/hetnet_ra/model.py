"""System model for a two-tier OFDMA downlink.

A single macrocell serves M macro users (MUEs) and overlays S closed-access
small cells, each serving its own small-cell users (SUEs). All tiers share N
sub-channels under universal frequency reuse, so the small-cell tier interferes
with MUEs on whatever sub-channels the macro tier occupies, and the macro
transmitter interferes with every SUE. Co-tier interference between small cells
is absorbed into the noise floor.

Rates are handled as spectral efficiencies (bps/Hz): a requirement R is
compared directly against log2(1 + SINR) per sub-channel, so the sub-channel
bandwidth never enters the rate expressions. It is kept in :class:`Scenario`
for bookkeeping only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import TYPE_CHECKING, Sequence

import numpy as np

if TYPE_CHECKING:  # only for annotations; avoids a circular import
    from .macro import MacroAllocation
    from .smallcell import SmallCellAllocation

__all__ = [
    "Scenario",
    "ChannelGains",
    "path_loss_db",
    "realize_gains",
    "sinr_macro",
    "sinr_sue",
    "macro_interference_at_sues",
    "cross_tier_interference",
    "generate_scenario",
    "scenario_to_dict",
    "scenario_from_dict",
    "save_scenario",
    "load_scenario",
]

# Log-normal shadowing spreads (dB) by link class.
SHADOW_SIGMA_SMALL_TO_SUE = 4.0
SHADOW_SIGMA_CROSS = 8.0      # small cell <-> MUE cross links
SHADOW_SIGMA_MACRO = 10.0     # macro -> any UE

_LINK_KINDS = ("small_to_sue", "small_to_mue", "macro_to_sue", "macro_to_mue")


class ScenarioError(ValueError):
    """Raised when scenario parameters are inconsistent."""


def _as_xy(p) -> tuple[float, float]:
    x, y = p
    return (float(x), float(y))


@dataclass(frozen=True)
class Scenario:
    """Static system parameters and node placement.

    Positions are 2-D coordinates in metres, macro at ``macro_position``.
    ``sue_positions[s]`` lists the SUEs served by small cell ``s``; closed
    access means no other cell may serve them.

    ``epsilon`` weights admission against channel usage in the small-cell
    objective. It must satisfy epsilon < 1/(1 + S*N) so that admitting one
    more user always outweighs any feasible amount of extra channel usage;
    when left as None it defaults to 0.9/(1 + S*N).
    """

    mue_positions: tuple
    small_cell_positions: tuple
    sue_positions: tuple          # per cell: tuple of (x, y)
    N: int
    R_m: float                    # MUE rate requirement, bps/Hz
    R_f: float                    # SUE rate requirement, bps/Hz
    P_B_max: float = 20.0         # macro power budget, W
    P_s_max: float = 0.03         # per-small-cell power budget, W
    N_o: float = 1e-13            # noise power per sub-channel, W
    L_ow: float = 1.0             # wall penetration loss, dB
    delta_f: float = 180e3        # sub-channel bandwidth, Hz (bookkeeping)
    I_max: float = 1e3            # sentinel interference cap, W
    epsilon: float | None = None
    macro_position: tuple = (0.0, 0.0)
    R_B: float = 300.0            # macro cell radius, m

    def __post_init__(self):
        object.__setattr__(self, "mue_positions",
                           tuple(_as_xy(p) for p in self.mue_positions))
        object.__setattr__(self, "small_cell_positions",
                           tuple(_as_xy(p) for p in self.small_cell_positions))
        object.__setattr__(self, "sue_positions",
                           tuple(tuple(_as_xy(p) for p in cell)
                                 for cell in self.sue_positions))
        object.__setattr__(self, "macro_position", _as_xy(self.macro_position))
        if self.M < 1:
            raise ScenarioError("need at least one MUE")
        if self.S < 1:
            raise ScenarioError("need at least one small cell")
        if len(self.sue_positions) != self.S:
            raise ScenarioError("sue_positions must have one entry per small cell")
        if any(len(cell) < 1 for cell in self.sue_positions):
            raise ScenarioError("every small cell needs at least one SUE")
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise ScenarioError("N must be a positive integer")
        object.__setattr__(self, "N", int(self.N))
        for name in ("P_B_max", "P_s_max", "N_o", "delta_f", "I_max", "R_B",
                     "R_m", "R_f"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be strictly positive")
        if self.L_ow < 0:
            raise ScenarioError("L_ow must be non-negative")
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 0.9 / (1.0 + self.S * self.N))
        cap = 1.0 / (1.0 + self.S * self.N)
        if not (0.0 < self.epsilon < cap):
            raise ScenarioError(
                f"epsilon must lie in (0, {cap:.6g}) for S={self.S}, N={self.N}; "
                f"got {self.epsilon!r}")

    # -- derived counts ----------------------------------------------------

    @property
    def M(self) -> int:
        return len(self.mue_positions)

    @property
    def S(self) -> int:
        return len(self.small_cell_positions)

    @property
    def F_per_cell(self) -> tuple:
        return tuple(len(cell) for cell in self.sue_positions)

    @property
    def F(self) -> int:
        return sum(self.F_per_cell)

    def cell_slice(self, s: int) -> slice:
        """Global SUE index range served by small cell ``s``."""
        start = sum(self.F_per_cell[:s])
        return slice(start, start + self.F_per_cell[s])


@dataclass(frozen=True)
class ChannelGains:
    """One realization of all link gains, per sub-channel.

    Shapes: ``macro_to_mue`` (M, N), ``macro_to_sue`` (F, N) with SUEs in
    global order (cells concatenated), ``small_to_sue[s]`` (F_s, N) for the
    serving cell only, ``small_to_mue`` (S, M, N).
    """

    macro_to_mue: np.ndarray
    macro_to_sue: np.ndarray
    small_to_sue: tuple
    small_to_mue: np.ndarray

    def __post_init__(self):
        for arr in (self.macro_to_mue, self.macro_to_sue, self.small_to_mue,
                    *self.small_to_sue):
            a = np.asarray(arr)
            if not np.all(np.isfinite(a)) or not np.all(a > 0):
                raise ValueError("channel gains must be finite and strictly positive")


def path_loss_db(link: str, distance_m: float, wall_loss_db: float = 0.0) -> float:
    """Distance-dependent path loss in dB for one link class.

    Distances shorter than 1 m are clamped to 1 m to keep the log finite.
    ``wall_loss_db`` is added on links that cross a building wall
    (small->MUE and macro->SUE); it is ignored for the other classes.
    """
    d = max(float(distance_m), 1.0)
    if link == "small_to_sue":
        return 38.46 + 20.0 * math.log10(d)
    if link == "macro_to_mue":
        return 15.3 + 37.6 * math.log10(d)
    if link == "macro_to_sue":
        return 15.3 + 37.6 * math.log10(d) + wall_loss_db
    if link == "small_to_mue":
        # Indoor transmitter to outdoor victim: the worse of the two slopes
        # applies, plus the wall.
        return max(38.46 + 20.0 * math.log10(d),
                   15.3 + 37.6 * math.log10(d)) + wall_loss_db
    raise ValueError(f"unknown link kind {link!r}; expected one of {_LINK_KINDS}")


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _draw_gains(pl_db: np.ndarray, sigma: float, n: int, rng,
                shadowing: bool, fading: bool) -> np.ndarray:
    """Per-link, per-sub-channel gains from a path-loss array of any shape."""
    shape = pl_db.shape + (n,)
    loss = np.broadcast_to(pl_db[..., None], shape).astype(float)
    if shadowing:
        loss = loss + rng.normal(0.0, sigma, size=shape)
    g = 10.0 ** (-loss / 10.0)
    if fading:
        g = g * rng.exponential(1.0, size=shape)  # |h|^2, unit mean
    return g


def realize_gains(scenario: Scenario, rng=None, *, shadowing: bool = True,
                  fading: bool = True) -> ChannelGains:
    """Draw one random channel realization.

    Parameters
    ----------
    scenario : Scenario
    rng : numpy Generator or int seed, optional
    shadowing, fading : bool
        Test hooks. With both False the gain is exactly 10**(-PL/10),
        deterministic given the geometry.

    Notes
    -----
    Shadowing (log-normal, sigma per link class) and Rayleigh fading
    (exponential power, unit mean) are drawn independently for every link and
    every sub-channel. Draw order is fixed (macro->MUE, macro->SUE,
    each cell->own SUEs, each cell->MUEs) so a given seed reproduces the
    realization bit for bit.
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    sc = scenario
    n = sc.N

    pl_mue = np.array([[path_loss_db("macro_to_mue", _dist(sc.macro_position, p))]
                       for p in sc.mue_positions]).reshape(sc.M)
    g_macro_mue = _draw_gains(pl_mue, SHADOW_SIGMA_MACRO, n, rng, shadowing, fading)

    sue_flat = [p for cell in sc.sue_positions for p in cell]
    pl_sue = np.array([path_loss_db("macro_to_sue", _dist(sc.macro_position, p), sc.L_ow)
                       for p in sue_flat])
    g_macro_sue = _draw_gains(pl_sue, SHADOW_SIGMA_MACRO, n, rng, shadowing, fading)

    g_small_sue = []
    for s, cell_pos in enumerate(sc.small_cell_positions):
        pl = np.array([path_loss_db("small_to_sue", _dist(cell_pos, p))
                       for p in sc.sue_positions[s]])
        g_small_sue.append(_draw_gains(pl, SHADOW_SIGMA_SMALL_TO_SUE, n, rng,
                                       shadowing, fading))

    pl_cross = np.array([[path_loss_db("small_to_mue", _dist(cp, mp), sc.L_ow)
                          for mp in sc.mue_positions]
                         for cp in sc.small_cell_positions])
    g_small_mue = _draw_gains(pl_cross, SHADOW_SIGMA_CROSS, n, rng, shadowing, fading)

    return ChannelGains(macro_to_mue=g_macro_mue, macro_to_sue=g_macro_sue,
                        small_to_sue=tuple(g_small_sue), small_to_mue=g_small_mue)


def sinr_macro(power: float, gain: float, interference: float, noise: float):
    """Downlink SINR of an MUE given the interference it is subjected to."""
    return power * gain / (interference + noise)


def sinr_sue(power: float, gain_own: float, macro_interference: float, noise: float):
    """Downlink SINR of an SUE; the macro transmission is the interference."""
    return power * gain_own / (macro_interference + noise)


def macro_interference_at_sues(macro_alloc: "MacroAllocation",
                               gains: ChannelGains) -> np.ndarray:
    """Macro-tier interference power received by each SUE, shape (F, N).

    The macro transmits power[m, n] to the MUE owning sub-channel n; every
    SUE hears the total macro power on that sub-channel through its own
    macro link.
    """
    p_per_channel = np.asarray(macro_alloc.power).sum(axis=0)  # (N,)
    return gains.macro_to_sue * p_per_channel[None, :]


def cross_tier_interference(alloc: "SmallCellAllocation",
                            macro_alloc: "MacroAllocation",
                            gains: ChannelGains, n: int) -> float:
    """Aggregate small-cell interference at the MUE owning sub-channel n.

    Returns 0.0 when no MUE owns the sub-channel: with nobody scheduled
    there, the macro tier has no victim on it.
    """
    m = macro_alloc.owner_of(n)
    if m is None:
        return 0.0
    total = 0.0
    for s, p_cell in enumerate(alloc.power_actual):
        total += float(np.asarray(p_cell)[:, n].sum() * gains.small_to_mue[s, m, n])
    return total


# -- topology generation and config files ---------------------------------

def generate_scenario(n_mues: int, n_subchannels: int, rate_mue: float,
                      rate_sue: float, rng=None, *,
                      small_cell_positions: Sequence = ((-10.0, -100.0), (10.0, -100.0)),
                      sues_per_cell: int = 2,
                      hotspot_center=(0.0, -100.0),
                      hotspot_halfwidth: float = 10.0,
                      sue_radius_min: float = 3.0,
                      sue_radius_max: float = 10.0,
                      **overrides) -> Scenario:
    """Draw the reference topology: hot-spot MUEs plus annulus SUEs.

    MUEs fall uniformly in a square hot spot (2*halfwidth on a side) around
    ``hotspot_center``; each small cell's SUEs fall uniformly (by area) on an
    annulus [sue_radius_min, sue_radius_max] around their cell. Remaining
    keyword overrides go straight into :class:`Scenario` (powers, noise,
    wall loss, ...).
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    cx, cy = hotspot_center
    w = float(hotspot_halfwidth)
    mues = [(cx + rng.uniform(-w, w), cy + rng.uniform(-w, w))
            for _ in range(n_mues)]
    sues = []
    for (sx, sy) in small_cell_positions:
        cell = []
        for _ in range(sues_per_cell):
            # uniform by area on the annulus
            r = math.sqrt(rng.uniform(sue_radius_min ** 2, sue_radius_max ** 2))
            th = rng.uniform(0.0, 2.0 * math.pi)
            cell.append((sx + r * math.cos(th), sy + r * math.sin(th)))
        sues.append(tuple(cell))
    return Scenario(mue_positions=tuple(mues),
                    small_cell_positions=tuple(_as_xy(p) for p in small_cell_positions),
                    sue_positions=tuple(sues),
                    N=n_subchannels, R_m=rate_mue, R_f=rate_sue, **overrides)


def scenario_to_dict(scenario: Scenario) -> dict:
    d = asdict(scenario)
    # tuples -> lists happens in json anyway; keep dict plain
    return d


def scenario_from_dict(d: dict) -> Scenario:
    return Scenario(**d)


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    """Load a scenario from a JSON config file (schema in the README)."""
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))
