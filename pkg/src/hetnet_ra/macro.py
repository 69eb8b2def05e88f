"""Macro-tier sub-channel and power allocation.

Two schemes are provided. The tolerable-interference scheme assigns exactly
one sub-channel per MUE so as to maximize the total interference the macro
tier can absorb from the small-cell tier: with rate constraints met with
equality, per-MUE single-channel allocations, and equal power splitting, the
problem collapses to a linear assignment on the channel gains, solved here by
the Hungarian method with a deterministic lexicographic tie-break. An
exhaustive partition oracle (`brute_force_max_interference`) validates the
collapse at desk scale.

The traditional scheme minimizes total transmit power subject to the same
rate targets under a uniform interference margin I_th on every used
sub-channel (dual-domain tone assignment plus water-filling), and `bisect_ith`
tunes I_th until the minimum power consumes the whole macro budget, which is
the fair point of comparison between the two schemes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Scenario, ChannelGains

__all__ = [
    "MacroAllocation",
    "ChannelInfeasibleError",
    "MacroInfeasibleError",
    "BracketError",
    "tolerable_interference",
    "solve_proposed",
    "brute_force_max_interference",
    "macro_rates",
    "solve_traditional",
    "bisect_ith",
]

_LN2 = math.log(2.0)


class ChannelInfeasibleError(RuntimeError):
    """A single sub-channel cannot support the rate target even at zero
    interference."""


class MacroInfeasibleError(RuntimeError):
    """No macro-tier allocation can meet the rate targets."""


class BracketError(RuntimeError):
    """bisect_ith could not bracket the power budget."""


@dataclass
class MacroAllocation:
    """Result of a macro-tier solve.

    gamma[m, n] is 1 iff sub-channel n is assigned to MUE m; power and
    tolerable carry the transmit power and the interference level the MUE can
    absorb on that sub-channel. Unassigned entries have zero power and
    tolerable == I_max (the sentinel meaning "unconstrained for the
    small-cell tier"); the sentinel never takes part in objective sums.
    """

    gamma: np.ndarray
    power: np.ndarray
    tolerable: np.ndarray
    n_ac: int
    method: str
    i_th: float | None = None
    i_max: float = 1e3

    def owners(self) -> np.ndarray:
        """Owner MUE per sub-channel, -1 where unassigned."""
        own = np.full(self.gamma.shape[1], -1, dtype=int)
        rows, cols = np.nonzero(self.gamma)
        own[cols] = rows
        return own

    def owner_of(self, n: int):
        m = int(self.owners()[n])
        return None if m < 0 else m

    def finite_tolerable(self) -> np.ndarray:
        """Tolerable levels on assigned sub-channels only (1-D)."""
        return self.tolerable[self.gamma.astype(bool)]

    def total_power(self) -> float:
        return float(self.power.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "gamma", "power_W", "tolerable_W"])
            M, N = self.gamma.shape
            for m in range(M):
                for n in range(N):
                    w.writerow([m, n, int(self.gamma[m, n]),
                                f"{self.power[m, n]:.12e}",
                                f"{self.tolerable[m, n]:.12e}"])


def tolerable_interference(power: float, gain: float, rate: float,
                           noise: float, i_max: float = 1e3) -> float:
    """Interference level that leaves exactly the target rate on one channel.

    Solves log2(1 + power*gain/(I + noise)) = rate for I. A negative solution
    means the channel cannot reach the rate even interference-free, which is
    signalled rather than clamped; values above i_max are capped at the
    sentinel.
    """
    if rate <= 0:
        raise ValueError("rate target must be positive")
    value = power * gain / (2.0 ** rate - 1.0) - noise
    if value < 0.0:
        raise ChannelInfeasibleError(
            f"rate {rate} bps/Hz unreachable: needs interference {value:.3e} W < 0")
    return min(value, i_max)


def _assignment_value(gains: np.ndarray) -> float:
    rows, cols = linear_sum_assignment(gains, maximize=True)
    return float(gains[rows, cols].sum())


def _lexicographic_assignment(gains: np.ndarray) -> np.ndarray:
    """Gain-sum-optimal assignment, ties broken toward low MUE then low
    channel index.

    Fixes MUEs in index order: MUE m takes the lowest-index channel that
    still permits the remaining MUEs to reach the global optimum. Each probe
    is one small rectangular assignment solve.
    """
    M, N = gains.shape
    total = _assignment_value(gains)
    tol = 1e-12 * max(1.0, abs(total))
    avail = list(range(N))
    chosen = np.empty(M, dtype=int)
    remaining = total
    for m in range(M):
        for n in avail:
            rest_rows = gains[m + 1:, [c for c in avail if c != n]]
            rest = _assignment_value(rest_rows) if rest_rows.size else 0.0
            if gains[m, n] + rest >= remaining - tol:
                chosen[m] = n
                avail.remove(n)
                remaining -= gains[m, n]
                break
        else:  # numerically impossible unless tol is violated
            raise RuntimeError("lexicographic refinement failed to place an MUE")
    return chosen


def solve_proposed(gains: ChannelGains, scenario: Scenario) -> MacroAllocation:
    """Tolerable-interference-maximizing macro allocation.

    One sub-channel per MUE (the gain-sum-maximizing assignment), equal power
    P_B_max/M, and the rate constraint tight on every assigned channel. The
    tolerable level on each assigned channel follows from the tight
    constraint; everything else carries the I_max sentinel.
    """
    g = np.asarray(gains.macro_to_mue, dtype=float)
    M, N = g.shape
    if M > N:
        raise MacroInfeasibleError(
            f"cannot give each of {M} MUEs its own sub-channel out of {N}")
    chosen = _lexicographic_assignment(g)
    p = scenario.P_B_max / M
    gamma = np.zeros((M, N), dtype=int)
    power = np.zeros((M, N))
    tol = np.full((M, N), scenario.I_max)
    for m, n in enumerate(chosen):
        gamma[m, n] = 1
        power[m, n] = p
        tol[m, n] = tolerable_interference(p, g[m, n], scenario.R_m,
                                           scenario.N_o, scenario.I_max)
    return MacroAllocation(gamma=gamma, power=power, tolerable=tol, n_ac=M,
                           method="proposed", i_max=scenario.I_max)


def brute_force_max_interference(gains: ChannelGains, scenario: Scenario,
                                 max_channels_per_mue: int | None = None):
    """Exhaustive oracle for the tolerable-interference maximization.

    Enumerates every channel->owner map (each sub-channel given to one MUE or
    left free). Within an MUE's block the rate constraint is met with
    equality on the single best-gain channel while the rest of the block
    stays unallocated (holding a block channel at any other level is
    dominated: parking it at the I_max sentinel makes it unallocated by
    definition, and keeping it powered only dilutes the per-channel power),
    so a map's value is the sum over MUEs of the tight single-channel level
    at power P_B_max/M. Returns (objective, allocation) for the best map.

    Intended purely as a cross-check for `solve_proposed` at desk scale;
    guarded to M <= 4, N <= 8.
    """
    g = np.asarray(gains.macro_to_mue, dtype=float)
    M, N = g.shape
    if M > 4 or N > 8:
        raise ValueError(f"brute force guarded to M<=4, N<=8; got M={M}, N={N}")
    if M > N:
        raise MacroInfeasibleError(
            f"cannot give each of {M} MUEs its own sub-channel out of {N}")
    cap = N if max_channels_per_mue is None else int(max_channels_per_mue)
    if cap < 1:
        raise ValueError("max_channels_per_mue must be >= 1")

    p = scenario.P_B_max / M
    # Tight per-channel tolerable levels; -inf marks channels that cannot
    # carry the rate at all so any map relying on them is invalid.
    raw = p * g / (2.0 ** scenario.R_m - 1.0) - scenario.N_o
    T = np.where(raw >= 0.0, np.minimum(raw, scenario.I_max), -np.inf)

    K = (M + 1) ** N
    radix = (M + 1) ** np.arange(N)
    owners = (np.arange(K)[:, None] // radix[None, :]) % (M + 1) - 1  # (K, N)
    value = np.zeros(K)
    valid = np.ones(K, dtype=bool)
    for m in range(M):
        mask = owners == m
        cnt = mask.sum(axis=1)
        valid &= (cnt >= 1) & (cnt <= cap)
        block_best = np.where(mask, T[m][None, :], -np.inf).max(axis=1)
        value += np.where(cnt >= 1, block_best, 0.0)
    value[~valid] = -np.inf
    if not np.isfinite(value).any():
        raise MacroInfeasibleError("no channel->owner map meets every rate target")
    k = int(np.argmax(value))  # first maximizer: lowest mixed-radix code

    gamma = np.zeros((M, N), dtype=int)
    power = np.zeros((M, N))
    tol = np.full((M, N), scenario.I_max)
    for m in range(M):
        block = np.where(owners[k] == m)[0]
        n = block[int(np.argmax(T[m, block]))]
        gamma[m, n] = 1
        power[m, n] = p
        tol[m, n] = T[m, n]
    alloc = MacroAllocation(gamma=gamma, power=power, tolerable=tol, n_ac=M,
                            method="proposed", i_max=scenario.I_max)
    return float(value[k]), alloc


def macro_rates(alloc: MacroAllocation, gains: ChannelGains,
                scenario: Scenario) -> np.ndarray:
    """Per-MUE rate (bps/Hz) when interference sits at the tolerable level."""
    g = gains.macro_to_mue
    snr = alloc.power * g / (alloc.tolerable + scenario.N_o)
    per_channel = np.where(alloc.gamma > 0, np.log2(1.0 + snr), 0.0)
    return per_channel.sum(axis=1)


# -- traditional minimum-power baseline ------------------------------------

def _waterfill_to_rate(a: np.ndarray, rate: float) -> np.ndarray:
    """Minimum-power water-filling meeting a rate target.

    a holds gain/(interference+noise) per tone. Power mu - 1/a_n (clipped at
    zero) with the water level mu chosen so the summed log2 rates hit the
    target exactly.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0 or rate <= 0:
        return np.zeros_like(a)

    def achieved(mu):
        return float(np.sum(np.maximum(np.log2(a * mu), 0.0)))

    lo = 1.0 / a.max()            # rate 0 at this level
    hi = (2.0 ** rate) / a.max()  # meets the rate on the best tone alone
    while achieved(hi) < rate:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if achieved(mid) >= rate:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    mu = hi
    return np.maximum(mu - 1.0 / a, 0.0)


def _tone_values(a: np.ndarray, lam: np.ndarray):
    """Per-tone optimal powers and multiplier-weighted values for all MUEs.

    For tone n and MUE m the candidate power is the water-filling point
    max(0, lam_m/ln2 - 1/a_mn); the value is power - lam_m * rate, the
    quantity a tone contributes if given to m. Tones go to the most negative
    value; non-negative values mean the tone is worth nothing to anyone.
    """
    p = np.maximum(lam[:, None] / _LN2 - 1.0 / a, 0.0)
    rate = np.log2(1.0 + a * p)
    return p, p - lam[:, None] * rate


def _partition_rates(a: np.ndarray, lam: np.ndarray):
    p, v = _tone_values(a, lam)
    owner = np.where(v.min(axis=0) < 0.0, v.argmin(axis=0), -1)
    M = a.shape[0]
    rates = np.array([np.log2(1.0 + a[m, owner == m] * p[m, owner == m]).sum()
                      for m in range(M)])
    return owner, rates


def _repair_partition(owner: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Hand every starved MUE one tone so exact water-filling can finish.

    The per-tone argmin can leave an MUE empty when contested tones were all
    claimed by later multiplier updates (common at M == N, where the partition
    must be a perfect matching). Water-filling meets any rate target on a
    non-empty tone set, so feasibility only needs coverage: give a starved MUE
    its best free tone, else its best tone among owners keeping two or more.
    Donors always exist while M <= N (pigeonhole), and never become empty
    themselves.
    """
    owner = owner.copy()
    M = a.shape[0]
    for m in range(M):
        if np.any(owner == m):
            continue
        free = np.flatnonzero(owner < 0)
        if free.size:
            take = free[np.argmax(a[m, free])]
        else:
            counts = np.bincount(owner, minlength=M)
            donatable = np.flatnonzero(counts[owner] >= 2)
            take = donatable[np.argmax(a[m, donatable])]
        owner[take] = m
    return owner


def solve_traditional(gains: ChannelGains, scenario: Scenario,
                      i_th: float) -> MacroAllocation:
    """Minimum-power macro allocation under a uniform interference margin.

    Every used sub-channel budgets for interference i_th. Tone assignment and
    powers come from the dual problem: each MUE carries a rate multiplier,
    each tone goes to the MUE valuing it most at the water-filling power, and
    the multipliers are tuned by per-MUE bisection until every rate target is
    met. The duality gap of this per-tone relaxation vanishes as N grows; a
    final exact water-filling pass on the resulting tone partition makes each
    rate constraint tight, so the output is always feasible.
    """
    if i_th < 0:
        raise ValueError("i_th must be non-negative")
    g = np.asarray(gains.macro_to_mue, dtype=float)
    M, N = g.shape
    if M > N:
        raise MacroInfeasibleError(
            f"cannot give each of {M} MUEs its own sub-channel out of {N}")
    a = g / (i_th + scenario.N_o)
    R = scenario.R_m

    # Necessary-condition guard: an MUE that cannot reach its rate even
    # owning every tone with a generous power cap makes the instance hopeless.
    for m in range(M):
        if _waterfill_to_rate(a[m], R).sum() > 10.0 * scenario.P_B_max:
            raise MacroInfeasibleError(
                f"MUE {m} cannot reach {R} bps/Hz within 10x the power budget "
                f"at i_th={i_th:.3e}")

    # Start from the single-best-tone multiplier, the exact dual point when
    # an MUE would be alone on its best tone.
    lam = _LN2 * (2.0 ** R) / a.max(axis=1)
    for _ in range(60):
        prev = lam.copy()
        for m in range(M):
            # Tones m can win depend only on the others' best values, which
            # stay fixed while lam[m] is bisected.
            _, v_all = _tone_values(a, lam)
            v_all[m] = np.inf
            other_min = np.minimum(v_all.min(axis=0), 0.0)

            def rate_m(lam_m):
                p = np.maximum(lam_m / _LN2 - 1.0 / a[m], 0.0)
                r = np.log2(1.0 + a[m] * p)
                v = p - lam_m * r
                return float(r[v < other_min].sum())

            lo, hi = 0.0, lam[m]
            grow = 0
            while rate_m(hi) < R:
                hi *= 2.0
                grow += 1
                if grow > 60:
                    raise MacroInfeasibleError(
                        f"MUE {m} cannot win enough tones at i_th={i_th:.3e}")
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if rate_m(mid) >= R:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-12 * max(hi, 1e-300):
                    break
            lam[m] = hi
        if np.all(np.abs(lam - prev) <= 1e-9 * np.maximum(prev, 1e-300)):
            break

    owner = _repair_partition(_partition_rates(a, lam)[0], a)

    gamma = np.zeros((M, N), dtype=int)
    power = np.zeros((M, N))
    for m in range(M):
        tones = np.where(owner == m)[0]
        gamma[m, tones] = 1
        power[m, tones] = _waterfill_to_rate(a[m, tones], R)
    # Tones the water-filling left at zero power are not actually used.
    gamma[power <= 0.0] = 0
    used = gamma.sum(axis=0) > 0
    tol = np.where(gamma > 0, i_th, scenario.I_max)
    return MacroAllocation(gamma=gamma, power=power, tolerable=tol,
                           n_ac=int(used.sum()), method="traditional",
                           i_th=float(i_th), i_max=scenario.I_max)


def bisect_ith(gains: ChannelGains, scenario: Scenario, delta: float = 1e-3,
               max_doublings: int = 20, max_iters: int = 200,
               i_lo: float = 0.0, i_hi: float | None = None):
    """Find the uniform margin I_th whose minimum-power solution spends the
    whole macro budget.

    Total minimum power increases with I_th (a larger margin costs power), so
    the fair-comparison point |total - P_B_max| <= delta is found by
    bisection. The bracket [i_lo, i_hi] defaults to zero and the largest
    single-channel tolerable level; the upper end doubles (up to
    ``max_doublings`` times) until the power there exceeds the budget.
    Returns (allocation, i_th).
    """
    target = scenario.P_B_max
    if i_lo < 0.0:
        raise ValueError("i_lo must be non-negative")

    def power_at(i):
        # At i > 0 the solver's infeasibility guard means "power demand blew
        # past the budget", which for bracketing purposes is just a very
        # large power. At i == 0 it is a genuinely hopeless instance.
        try:
            alloc = solve_traditional(gains, scenario, i)
        except MacroInfeasibleError:
            if i == 0.0:
                raise
            return None, math.inf
        return alloc, alloc.total_power()

    lo = float(i_lo)
    if i_hi is not None and float(i_hi) <= lo:
        raise ValueError("i_hi must exceed i_lo")

    alloc_lo, p_lo = power_at(lo)
    if p_lo > target:
        raise BracketError(
            f"minimum power {p_lo:.4f} W at I_th={lo:.3e} already exceeds "
            f"the budget {target} W")
    if abs(p_lo - target) <= delta:
        return alloc_lo, lo

    if i_hi is not None:
        hi = float(i_hi)
    else:
        g = np.asarray(gains.macro_to_mue, dtype=float)
        p_equal = scenario.P_B_max / scenario.M
        hi = float(np.max(np.maximum(
            p_equal * g / (2.0 ** scenario.R_m - 1.0) - scenario.N_o, 0.0)))
        hi = max(hi, scenario.N_o, lo * 2.0)
    _, p_hi = power_at(hi)
    doublings = 0
    while p_hi < target:
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise BracketError(
                f"could not bracket the budget: power {p_hi:.4f} W at "
                f"I_th={hi:.3e} after {max_doublings} doublings")
        _, p_hi = power_at(hi)

    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        alloc_mid, p_mid = power_at(mid)
        if abs(p_mid - target) <= delta:
            return alloc_mid, mid
        if p_mid > target:
            hi = mid
        else:
            lo = mid
    raise BracketError(
        f"bisection did not reach |total power - {target}| <= {delta} "
        f"within {max_iters} iterations")
