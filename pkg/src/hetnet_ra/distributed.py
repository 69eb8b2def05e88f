"""Distributed small-cell allocation via Lagrangian dual decomposition.

The only constraint coupling small cells is the cross-tier cap on each
macro-owned sub-channel. Pricing those caps with multipliers eta >= 0
decouples the problem: each cell solves its own admission/allocation
subproblem against the current prices, the master collects the per-channel
interference each solution would cause, forms a subgradient of the dual, and
updates the prices with a central-cut ellipsoid step. Any iterate is turned
into a feasible allocation by scaling powers back inside the caps, so the
loop carries a certified (upper, lower) bound pair; it stops when the pair
is within tolerance, the subgradient vanishes, or the round budget runs out.

All per-cell state a cell needs is its own gains, its own victims' published
caps, and the broadcast prices; nothing about other cells.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .model import Scenario, ChannelGains
from .macro import MacroAllocation
from .smallcell import (SmallCellAllocation, SmallCellSolverError, _tier_data,
                        _robust_solve, _polish, _squash_dust, objective_value)

__all__ = [
    "DualState",
    "DegenerateEllipsoidError",
    "init_dual_state",
    "lagrangian_value",
    "solve_subproblem",
    "dual_function",
    "subgradient",
    "ellipsoid_step",
    "recover_feasible",
    "run_algorithm2",
    "Algorithm2Result",
]

_LN2 = math.log(2.0)


class DegenerateEllipsoidError(RuntimeError):
    """The ellipsoid collapsed numerically (conditioning past 1e12)."""


@dataclass
class DualState:
    """Ellipsoid state over the multiplier space.

    center may dip below zero; eta is its projection onto the non-negative
    orthant and is what the subproblems are priced with. best_upper/lower
    carry the tightest certified dual/primal bounds seen so far.
    """

    center: np.ndarray
    shape: np.ndarray
    eta: np.ndarray = None
    iteration: int = 0
    best_upper: float = math.inf
    best_lower: float = -math.inf

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.shape = np.asarray(self.shape, dtype=float)
        if self.eta is None:
            self.eta = np.maximum(self.center, 0.0)


def init_dual_state(macro_alloc: MacroAllocation, scenario: Scenario) -> DualState:
    """Starting ellipsoid sized from the published interference caps.

    Prices live on the scale of 1/interference; the initial center is
    all-ones / mean(finite caps) and the sphere is sized to cover the box
    [0, 10/min(finite caps)]^N.
    """
    assigned = macro_alloc.gamma.astype(bool)
    vals = macro_alloc.tolerable[assigned]
    vals = vals[(vals > 0.0) & (vals < macro_alloc.i_max)]
    if vals.size == 0:
        mean_i, min_i = 1.0, 1.0
    else:
        mean_i, min_i = float(vals.mean()), float(vals.min())
    n = scenario.N
    center = np.full(n, 1.0 / mean_i)
    eta_hi = 10.0 / min_i
    radius = math.sqrt(n) * eta_hi
    return DualState(center=center, shape=(radius ** 2) * np.eye(n))


def lagrangian_value(alloc: SmallCellAllocation, macro_alloc: MacroAllocation,
                     gains: ChannelGains, scenario: Scenario,
                     eta: np.ndarray) -> float:
    """Lagrangian of the relaxed problem at a given point and prices.

    Objective plus sum over macro-owned sub-channels of
    eta_n * (cap_n - caused interference_n). Free sub-channels never enter.
    """
    data = _tier_data(macro_alloc, gains, scenario)
    caused = np.zeros(scenario.N)
    for s in range(scenario.S):
        caused += alloc.power_actual[s].sum(axis=0) * data.cross[s]
    gap = np.where(data.owned, data.icap - caused, 0.0)
    return objective_value(alloc, scenario.epsilon) + float(np.asarray(eta) @ gap)


class _SubproblemTemplate:
    """DPP-compiled per-cell subproblem, cached per (F_s, N).

    Like the centralized relaxation, solved in q = a * p variables so the
    cone arguments stay O(1); prices and the power budget fold into the
    normalized linear coefficients.
    """

    def __init__(self, f, n):
        # invan = 1 / (a * P_s_max); pq = eta * cross / a (price per unit q)
        self.invan = cp.Parameter((f, n), nonneg=True)
        self.pq = cp.Parameter((f, n), nonneg=True)
        self.live = cp.Parameter((f, n), nonneg=True)
        self.rf = cp.Parameter(nonneg=True)
        self.eps = cp.Parameter(nonneg=True)
        self.gamma = cp.Variable((f, n), nonneg=True)
        self.q = cp.Variable((f, n), nonneg=True)
        self.admit = cp.Variable(f, nonneg=True)
        cons = [cp.sum(cp.multiply(self.invan, self.q)) <= 1,
                cp.sum(self.gamma, axis=0) <= 1,
                self.gamma <= 1, self.admit <= 1,
                # live is a 0/1 mask scaled by the budget box: entries whose
                # price can never pay for themselves are pinned at zero so
                # the solver never sees their (huge) price coefficients
                self.q <= self.live]
        for i in range(f):
            rate = cp.sum(-cp.rel_entr(self.gamma[i],
                                       self.gamma[i] + self.q[i])) / _LN2
            cons.append(rate >= self.rf * self.admit[i])
        paid = cp.sum(cp.multiply(self.pq, self.q))
        obj = cp.Maximize((1 - self.eps) * cp.sum(self.admit)
                          - self.eps * cp.sum(self.gamma) - paid)
        self.problem = cp.Problem(obj, cons)


_subproblem_cache: dict = {}


def solve_subproblem(s: int, macro_alloc: MacroAllocation, gains: ChannelGains,
                     scenario: Scenario, eta: np.ndarray):
    """One cell's priced subproblem.

    Uses only cell s's own data: its SUE gains, its cross gains toward the
    victim MUEs, and the broadcast prices. Returns (gamma, power, admit,
    optimal value).
    """
    data = _tier_data(macro_alloc, gains, scenario)
    f, n = scenario.F_per_cell[s], scenario.N
    key = (f, n)
    tpl = _subproblem_cache.get(key)
    if tpl is None:
        tpl = _subproblem_cache[key] = _SubproblemTemplate(f, n)
    inva = 1.0 / data.a[s]
    price = np.maximum(np.asarray(eta, dtype=float), 0.0) * data.cross[s]
    pq = price * inva
    # log2(1+x) <= x/ln2, so a unit of q is worth at most (1-eps)/(R_f ln2)
    # admission; entries priced at or above that are dead at any optimum.
    # Dropping them up front keeps arbitrarily large prices (blocked
    # channels are broadcast as effectively infinite) out of the cone data.
    dead = pq >= (1.0 - scenario.epsilon) / (scenario.R_f * _LN2)
    tpl.invan.value = inva / scenario.P_s_max
    tpl.pq.value = np.where(dead, 0.0, pq)
    tpl.live.value = np.where(dead, 0.0, data.a[s] * scenario.P_s_max)
    tpl.rf.value = scenario.R_f
    tpl.eps.value = scenario.epsilon
    status = _robust_solve(tpl.problem)
    if status not in ("optimal", "optimal_inaccurate"):
        raise SmallCellSolverError(f"subproblem for cell {s} ended {status!r}")
    g = np.clip(np.asarray(tpl.gamma.value, dtype=float), 0.0, 1.0)
    q = np.maximum(np.asarray(tpl.q.value, dtype=float), 0.0)
    q[dead] = 0.0
    p = q * inva
    y = np.clip(np.asarray(tpl.admit.value, dtype=float), 0.0, 1.0)
    eps = scenario.epsilon
    value = float((1.0 - eps) * y.sum() - eps * g.sum() - (price * p).sum())

    polished = _polish(data, scenario, [s], [g], [p], eta=eta)
    if polished is not None and polished[3] > value:
        (g,), (p,), (y,), value = polished

    _squash_dust(g, p)
    return g, p, y, value


def _solve_all_cells(macro_alloc, gains, scenario, eta):
    gamma, power, admit, values = [], [], [], []
    for s in range(scenario.S):
        g, p, y, v = solve_subproblem(s, macro_alloc, gains, scenario, eta)
        gamma.append(g)
        power.append(p)
        admit.append(y)
        values.append(v)
    alloc = SmallCellAllocation(gamma=gamma, power_actual=power, admit=admit,
                                mode="relaxed")
    return alloc, float(sum(values))


def dual_function(macro_alloc: MacroAllocation, gains: ChannelGains,
                  scenario: Scenario, eta: np.ndarray):
    """Dual value at eta: subproblem optima plus the priced cap budget.

    Upper-bounds the relaxation optimum for any eta >= 0 (weak duality).
    Returns (value, maximizing allocation).
    """
    data = _tier_data(macro_alloc, gains, scenario)
    alloc, total = _solve_all_cells(macro_alloc, gains, scenario, eta)
    budget = float(np.sum(np.asarray(eta)[data.owned] * data.icap[data.owned]))
    return total + budget, alloc


def subgradient(alloc: SmallCellAllocation, macro_alloc: MacroAllocation,
                gains: ChannelGains, scenario: Scenario) -> np.ndarray:
    """Subgradient of the dual at the prices that produced alloc.

    Component n is cap_n minus the interference the subproblem solutions
    cause there; zero on sub-channels the macro tier does not occupy.
    """
    data = _tier_data(macro_alloc, gains, scenario)
    caused = np.zeros(scenario.N)
    for s in range(scenario.S):
        caused += alloc.power_actual[s].sum(axis=0) * data.cross[s]
    return np.where(data.owned, data.icap - caused, 0.0)


def ellipsoid_step(state: DualState, d: np.ndarray) -> DualState:
    """Central-cut ellipsoid update along subgradient d (in place).

    Cuts away the half-space where the dual can only grow. A zero
    subgradient means the current prices are optimal (ValueError); a shape
    matrix conditioned past 1e12 raises DegenerateEllipsoidError.
    """
    d = np.asarray(d, dtype=float)
    if not np.any(d):
        raise ValueError("zero subgradient: current prices are already optimal")
    n = d.size
    A = state.shape
    Ad = A @ d
    quad = float(d @ Ad)
    if not (quad > 0.0 and np.isfinite(quad)):
        raise DegenerateEllipsoidError(f"non-positive cut norm {quad!r}")
    gn = Ad / math.sqrt(quad)  # A @ normalized subgradient
    if n == 1:
        # interval halving: the 1-D "ellipsoid" loses half its length
        state.center = state.center - 0.5 * gn
        state.shape = A / 4.0
    else:
        state.center = state.center - gn / (n + 1.0)
        state.shape = (n * n / (n * n - 1.0)) * (A - (2.0 / (n + 1.0)) * np.outer(gn, gn))
        state.shape = 0.5 * (state.shape + state.shape.T)  # keep symmetric
    if not np.all(np.isfinite(state.shape)):
        raise DegenerateEllipsoidError("ellipsoid shape overflowed")
    cond = np.linalg.cond(state.shape)
    if cond > 1e12:
        raise DegenerateEllipsoidError(f"ellipsoid conditioning {cond:.3e} > 1e12")
    state.eta = np.maximum(state.center, 0.0)
    state.iteration += 1
    return state


def _violation_ratios(alloc, data, scenario):
    caused = np.zeros(scenario.N)
    for s in range(scenario.S):
        caused += alloc.power_actual[s].sum(axis=0) * data.cross[s]
    ratios = np.zeros(scenario.N)
    owned = np.where(data.owned)[0]
    for n in owned:
        if caused[n] <= 0.0:
            ratios[n] = 0.0
        elif data.icap[n] > 0.0:
            ratios[n] = caused[n] / data.icap[n]
        else:
            ratios[n] = math.inf
    return ratios


def recover_feasible(alloc: SmallCellAllocation, macro_alloc: MacroAllocation,
                     gains: ChannelGains, scenario: Scenario, *,
                     reoptimize: bool = False) -> SmallCellAllocation:
    """Turn any relaxed iterate into a feasible allocation.

    On each over-cap sub-channel all cells' energies are scaled down by the
    common violation ratio (a zero cap zeroes them); admissions are then
    recomputed as min(1, achieved rate / R_f) with the shares kept fixed.
    With reoptimize=True each cell instead re-optimizes its shares and
    admissions around the scaled energies (a convex solve per cell).
    """
    data = _tier_data(macro_alloc, gains, scenario)
    ratios = _violation_ratios(alloc, data, scenario)
    scale = np.ones(scenario.N)
    over = ratios > 1.0
    scale[over & np.isfinite(ratios)] = 1.0 / ratios[over & np.isfinite(ratios)]
    scale[np.isinf(ratios)] = 0.0

    power = [p * scale[None, :] for p in alloc.power_actual]
    gamma = [np.clip(g, 0.0, 1.0) for g in alloc.gamma]
    # Solver iterates satisfy the cell-local constraints only to conic
    # tolerance; normalize the budget and share sums so the recovered point
    # is feasible to round-off, then let the admissions absorb the change.
    for s in range(scenario.S):
        total = power[s].sum()
        if total > scenario.P_s_max:
            power[s] *= scenario.P_s_max / total
        colsum = gamma[s].sum(axis=0)
        tight = colsum > 1.0
        if np.any(tight):
            gamma[s][:, tight] /= colsum[tight][None, :]
        power[s][gamma[s] <= 0.0] = 0.0
    if reoptimize:
        gamma, admit = _reoptimize_shares(power, data, scenario)
    else:
        admit = []
        for s in range(scenario.S):
            g, p = gamma[s], power[s]
            safe_g = np.where(g > 0, g, 1.0)
            rate = np.where(g > 0, g * np.log2(1.0 + (p / safe_g) * data.a[s]), 0.0)
            admit.append(np.minimum(1.0, rate.sum(axis=1) / scenario.R_f))
    return SmallCellAllocation(gamma=gamma, power_actual=power, admit=admit,
                               mode="relaxed", solver_status=alloc.solver_status)


class _ReoptTemplate:
    """Re-optimize (shares, admissions) for fixed energies; cached per shape."""

    def __init__(self, f, n):
        self.a_p = cp.Parameter((f, n), nonneg=True)   # a * fixed energy
        self.gmin = cp.Parameter((f, n), nonneg=True)  # lower share bound
        self.rf = cp.Parameter(nonneg=True)
        self.eps = cp.Parameter(nonneg=True)
        self.gamma = cp.Variable((f, n), nonneg=True)
        self.admit = cp.Variable(f, nonneg=True)
        cons = [cp.sum(self.gamma, axis=0) <= 1, self.gamma <= 1,
                self.admit <= 1, self.gamma >= self.gmin]
        for i in range(f):
            rate = cp.sum(-cp.rel_entr(self.gamma[i],
                                       self.gamma[i] + self.a_p[i])) / _LN2
            cons.append(rate >= self.rf * self.admit[i])
        obj = cp.Maximize((1 - self.eps) * cp.sum(self.admit)
                          - self.eps * cp.sum(self.gamma))
        self.problem = cp.Problem(obj, cons)


_reopt_cache: dict = {}


def _reoptimize_shares(power, data, scenario):
    gamma, admit = [], []
    for s in range(scenario.S):
        f, n = scenario.F_per_cell[s], scenario.N
        key = (f, n)
        tpl = _reopt_cache.get(key)
        if tpl is None:
            tpl = _reopt_cache[key] = _ReoptTemplate(f, n)
        tpl.a_p.value = data.a[s] * power[s]
        # a positive energy needs a positive share; instantaneous power may
        # not exceed the cell budget
        tpl.gmin.value = np.minimum(power[s] / scenario.P_s_max, 1.0)
        tpl.rf.value = scenario.R_f
        tpl.eps.value = scenario.epsilon
        status = _robust_solve(tpl.problem)
        if status not in ("optimal", "optimal_inaccurate"):
            raise SmallCellSolverError(f"share re-optimization ended {status!r}")
        g = np.clip(np.asarray(tpl.gamma.value, dtype=float), 0.0, 1.0)
        g = np.maximum(g, tpl.gmin.value)
        y = np.clip(np.asarray(tpl.admit.value, dtype=float), 0.0, 1.0)
        # re-derive admissions from the final shares so the result is
        # feasible to round-off, not just to solver tolerance
        safe_g = np.where(g > 0, g, 1.0)
        rate = np.where(g > 0, g * np.log2(1.0 + (power[s] / safe_g) * data.a[s]), 0.0)
        y = np.minimum(y, np.minimum(1.0, rate.sum(axis=1) / scenario.R_f))
        gamma.append(g)
        admit.append(y)
    return gamma, admit


class _CellResolveTemplate:
    """Per-cell re-solve under an explicit cap split, cached per (F_s, N).

    Unlike the priced subproblem this one carries the cap as a hard
    constraint, so its solutions need no scaling afterwards (up to solver
    tolerance). Solved in power variables; cap rows are normalized to 1.
    """

    def __init__(self, f, n):
        self.ap = cp.Parameter((f, n), nonneg=True)    # a (SINR per watt)
        self.capn = cp.Parameter(n, nonneg=True)       # cross / cap share
        self.ub = cp.Parameter((f, n), nonneg=True)    # 0 closes a channel
        self.pmax = cp.Parameter(nonneg=True)
        self.rf = cp.Parameter(nonneg=True)
        self.eps = cp.Parameter(nonneg=True)
        self.gamma = cp.Variable((f, n), nonneg=True)
        self.p = cp.Variable((f, n), nonneg=True)
        self.admit = cp.Variable(f, nonneg=True)
        cons = [cp.sum(self.gamma, axis=0) <= 1, self.gamma <= 1,
                self.admit <= 1, cp.sum(self.p) <= self.pmax,
                self.p <= self.ub,
                cp.multiply(self.capn, cp.sum(self.p, axis=0)) <= 1]
        for i in range(f):
            rate = cp.sum(-cp.rel_entr(self.gamma[i],
                                       self.gamma[i]
                                       + cp.multiply(self.ap[i], self.p[i]))) / _LN2
            cons.append(rate >= self.rf * self.admit[i])
        obj = cp.Maximize((1 - self.eps) * cp.sum(self.admit)
                          - self.eps * cp.sum(self.gamma))
        self.problem = cp.Problem(obj, cons)


_resolve_cache: dict = {}


def _cap_split_resolve(alloc, macro_alloc, gains, scenario):
    """Split each cap across cells in proportion to the interference the
    candidate causes, then let every cell re-optimize its whole allocation
    (power included) inside its share. Stronger than scaling because a cell
    that uses a channel efficiently is not dragged down by one that does
    not. Returns a feasible allocation, or None when a solve fails."""
    data = _tier_data(macro_alloc, gains, scenario)
    caused = [alloc.power_actual[s].sum(axis=0) * data.cross[s]
              for s in range(scenario.S)]
    total = np.sum(caused, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        fracs = np.where(total[None, :] > 0.0,
                         np.asarray(caused) / np.maximum(total, 1e-300)[None, :],
                         1.0 / scenario.S)
    # floor each share so no cap row in the solve gets an absurd scale
    # (cells that caused ~nothing on a channel lose nothing here), then
    # renormalize so the shares still split the cap exactly
    fracs = np.maximum(fracs, 0.01 / scenario.S)
    fracs = fracs / fracs.sum(axis=0, keepdims=True)
    gamma, power, admit = [], [], []
    for s in range(scenario.S):
        frac = fracs[s]
        f, n = scenario.F_per_cell[s], scenario.N
        key = (f, n)
        tpl = _resolve_cache.get(key)
        if tpl is None:
            tpl = _resolve_cache[key] = _CellResolveTemplate(f, n)
        cap_s = data.icap * frac
        capn = np.zeros(n)
        ub = np.full((f, n), scenario.P_s_max)
        for nn in range(n):
            if not data.owned[nn]:
                continue
            if cap_s[nn] <= 0.0:
                ub[:, nn] = 0.0
            else:
                capn[nn] = data.cross[s][nn] / cap_s[nn]
        tpl.ap.value = data.a[s]
        tpl.capn.value = capn
        tpl.ub.value = ub
        tpl.pmax.value = scenario.P_s_max
        tpl.rf.value = scenario.R_f
        tpl.eps.value = scenario.epsilon
        try:
            status = _robust_solve(tpl.problem)
        except (cp.error.SolverError, SmallCellSolverError):
            return None
        if status not in ("optimal", "optimal_inaccurate"):
            return None
        if tpl.gamma.value is None or tpl.p.value is None:
            return None
        gamma.append(np.clip(np.asarray(tpl.gamma.value, dtype=float), 0.0, 1.0))
        power.append(np.maximum(np.asarray(tpl.p.value, dtype=float), 0.0))
        admit.append(np.clip(np.asarray(tpl.admit.value, dtype=float), 0.0, 1.0))
    cand = SmallCellAllocation(gamma=gamma, power_actual=power, admit=admit,
                               mode="relaxed")
    # the re-solve is feasible only to solver tolerance; one scaling pass
    # makes it exact
    return recover_feasible(cand, macro_alloc, gains, scenario)


def _mean_alloc(window, n_cells):
    m = len(window)
    return SmallCellAllocation(
        gamma=[sum(a.gamma[s] for a in window) / m for s in range(n_cells)],
        power_actual=[sum(a.power_actual[s] for a in window) / m
                      for s in range(n_cells)],
        admit=[sum(a.admit[s] for a in window) / m for s in range(n_cells)],
        mode="relaxed")


@dataclass
class Algorithm2Result:
    alloc: SmallCellAllocation
    state: DualState
    trace: list
    converged: bool
    iterations: int

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "dual_upper", "primal_lower", "gap",
                        "max_violation_ratio"])
            for row in self.trace:
                w.writerow([row[0]] + [f"{v:.12e}" for v in row[1:]])


# a blocked sub-channel (macro cap exactly zero) cannot be priced finitely;
# this broadcast value makes any transmission on it unprofitable
_BLOCKED_PRICE = 1e30


def run_algorithm2(macro_alloc: MacroAllocation, gains: ChannelGains,
                   scenario: Scenario, gap_tol: float = 1e-2,
                   l_max: int = 200, *, reoptimize_recovery: bool = False,
                   trace_path=None) -> Algorithm2Result:
    """Synchronous distributed loop.

    Each round: broadcast prices, solve every cell's subproblem, collect the
    caused interference, recover feasible allocations (tracking the best
    primal lower bound), take an ellipsoid step on the dual (tracking the
    best upper bound). Stops when the certified relative gap falls under
    gap_tol, the subgradient vanishes, or after l_max rounds. The returned
    allocation is always feasible.

    The ellipsoid runs over cap-scaled prices z = eta * cap on the owned
    sub-channels with a positive cap: in those units the optimum lies in a
    box of side ~F whatever the caps' magnitudes, so one initial ball works
    for every instance. The returned state embeds that geometry (identity
    rows on untracked sub-channels); its eta is the best full-length price
    vector found. When the center leaves the nonnegative orthant the step
    cuts on the violated coordinate instead of evaluating the dual, and a
    degenerate ellipsoid is restarted as a ball around the clamped center.

    Primal candidates per round: the raw subproblem iterate plus sliding-
    window averages of recent iterates (the raw ones oscillate between
    vertices near the optimum; their averages approach the optimal face).
    Every few rounds, and always near the stop, the candidates are also
    polished by a per-cell re-solve under a proportional cap split.
    """
    data = _tier_data(macro_alloc, gains, scenario)
    n = scenario.N
    n_cells = scenario.S
    tracked = np.where(data.owned & (data.icap > 0.0))[0]
    blocked = np.where(data.owned & (data.icap <= 0.0))[0]
    icap_t = data.icap[tracked]
    k = tracked.size

    zstate = None
    if k:
        radius2 = float(scenario.F * scenario.F * k)
        zstate = DualState(center=np.ones(k), shape=radius2 * np.eye(k))
    eta = np.zeros(n)
    eta[blocked] = _BLOCKED_PRICE

    best_alloc = None
    best_eta = eta.copy()
    best_upper, best_lower = math.inf, -math.inf
    trace = []
    converged = False
    last_ratio = 0.0
    iterations = 0
    windows = [deque(maxlen=w) for w in (10, 25, 50)]

    for it in range(1, l_max + 1):
        iterations = it
        if zstate is not None:
            j = int(np.argmin(zstate.center))
            if zstate.center[j] < 0.0:
                # infeasible center: cut on eta_j >= 0, no dual evaluation
                cut = np.zeros(k)
                cut[j] = -1.0
                try:
                    ellipsoid_step(zstate, cut)
                except DegenerateEllipsoidError:
                    scale = float(np.trace(zstate.shape)) / k
                    zstate = DualState(
                        center=np.maximum(zstate.center, 0.0),
                        shape=scale * np.eye(k))
                rel_gap = ((best_upper - best_lower)
                           / max(1.0, abs(best_upper)))
                trace.append((it, best_upper, best_lower, rel_gap, last_ratio))
                continue
            eta[tracked] = zstate.center / icap_t

        dual_val, alloc = dual_function(macro_alloc, gains, scenario, eta)
        if dual_val < best_upper:
            best_upper = dual_val
            best_eta = eta.copy()

        candidates = [alloc]
        for window in windows:
            window.append(alloc)
            if len(window) == window.maxlen:
                candidates.append(_mean_alloc(window, n_cells))
        near_stop = (best_upper - best_lower
                     <= 3.0 * gap_tol * max(1.0, abs(best_upper)))
        polish = near_stop or it % 5 == 0
        primal_val = -math.inf
        for cand in candidates:
            recovered = recover_feasible(cand, macro_alloc, gains, scenario,
                                         reoptimize=reoptimize_recovery)
            value = objective_value(recovered, scenario.epsilon)
            if value > primal_val:
                primal_val = value
            if value > best_lower:
                best_lower, best_alloc = value, recovered
            if polish:
                resolved = _cap_split_resolve(cand, macro_alloc, gains,
                                              scenario)
                if resolved is not None:
                    value = objective_value(resolved, scenario.epsilon)
                    if value > primal_val:
                        primal_val = value
                    if value > best_lower:
                        best_lower, best_alloc = value, resolved

        ratios = _violation_ratios(alloc, data, scenario)
        last_ratio = float(ratios.max()) if ratios.size else 0.0
        rel_gap = (best_upper - best_lower) / max(1.0, abs(best_upper))
        trace.append((it, dual_val, primal_val, rel_gap, last_ratio))
        if rel_gap <= gap_tol:
            converged = True
            break
        if zstate is None:
            break  # nothing to price; one evaluation settles it
        d = subgradient(alloc, macro_alloc, gains, scenario)
        dz = d[tracked] / icap_t
        if not np.any(dz):
            converged = True
            break
        try:
            ellipsoid_step(zstate, dz)
        except DegenerateEllipsoidError:
            scale = float(np.trace(zstate.shape)) / k
            zstate = DualState(center=np.maximum(zstate.center, 0.0),
                               shape=scale * np.eye(k))

    center = np.zeros(n)
    shape = np.eye(n)
    if zstate is not None:
        center[tracked] = zstate.center
        shape[np.ix_(tracked, tracked)] = zstate.shape
    state = DualState(center=center, shape=shape, eta=best_eta,
                      iteration=iterations, best_upper=best_upper,
                      best_lower=best_lower)

    if best_alloc is None:  # l_max == 0 guard; never admitted anything
        best_alloc = SmallCellAllocation(
            gamma=[np.zeros((fs, n)) for fs in scenario.F_per_cell],
            power_actual=[np.zeros((fs, n)) for fs in scenario.F_per_cell],
            admit=[np.zeros(fs) for fs in scenario.F_per_cell],
            mode="relaxed")
    result = Algorithm2Result(alloc=best_alloc, state=state, trace=trace,
                              converged=converged, iterations=len(trace))
    if trace_path is not None:
        result.write_trace(trace_path)
    return result
