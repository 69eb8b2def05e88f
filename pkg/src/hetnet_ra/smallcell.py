"""Small-cell tier: joint admission control, sub-channel and power allocation.

Each small cell decides which of its SUEs to admit, which sub-channels each
admitted SUE gets, and with what power, while keeping the aggregate
interference at each victim MUE below the level the macro tier published for
that sub-channel. Admissions are rewarded and channel usage is penalized:

    maximize (1 - eps) * sum(y) - eps * sum(gamma)

with eps < 1/(1 + S*N), so one extra admission always outweighs any feasible
amount of extra channel usage; maximizing admissions first and then freeing
channels is exactly the optimum ordering. The all-zero allocation is always
feasible, so the problem itself never is infeasible.

Three routes are provided: an exact solver (exhaustive enumeration of the
binaries with a convex minimum-power inner problem, desk scale only), a
convex time-sharing relaxation where gamma in (0,1] is the fraction of time
a sub-channel is lent to an SUE and the rate takes the perspective form, and
an independent rate-space grid oracle used to cross-check the exact solver.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize

from .model import Scenario, ChannelGains, macro_interference_at_sues
from .macro import MacroAllocation

__all__ = [
    "SmallCellAllocation",
    "FeasibilityReport",
    "SmallCellSolverError",
    "objective_value",
    "perspective_rate",
    "check_feasible",
    "solve_convex_relaxation",
    "solve_minlp_exact",
    "grid_search_oracle",
]

_LN2 = math.log(2.0)
_SOLVER_CHAIN = ("CLARABEL", "SCS")


class SmallCellSolverError(RuntimeError):
    """A convex solve ended without a usable iterate."""


@dataclass
class SmallCellAllocation:
    """Per-cell allocation arrays.

    gamma[s] is (F_s, N): binary assignments in 'exact' mode, time-sharing
    fractions in [0, 1] in 'relaxed' mode. power_actual[s] holds the actual
    transmitted energy per sub-channel (already scaled by the sharing
    fraction in relaxed mode). admit[s] is (F_s,), binary or fractional to
    match the mode.
    """

    gamma: list
    power_actual: list
    admit: list
    mode: str
    solver_status: str = "optimal"

    def __post_init__(self):
        if self.mode not in ("exact", "relaxed"):
            raise ValueError(f"mode must be 'exact' or 'relaxed', got {self.mode!r}")
        self.gamma = [np.asarray(g, dtype=float) for g in self.gamma]
        self.power_actual = [np.asarray(p, dtype=float) for p in self.power_actual]
        self.admit = [np.asarray(y, dtype=float) for y in self.admit]

    @property
    def n_cells(self) -> int:
        return len(self.gamma)

    def total_admitted(self) -> float:
        return float(sum(y.sum() for y in self.admit))

    def total_share(self) -> float:
        return float(sum(g.sum() for g in self.gamma))

    def total_power(self) -> float:
        return float(sum(p.sum() for p in self.power_actual))

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["record", "s", "f", "n", "gamma", "power_W", "admit"])
            for s in range(self.n_cells):
                F_s, N = self.gamma[s].shape
                for f in range(F_s):
                    for n in range(N):
                        w.writerow(["share", s, f, n,
                                    f"{self.gamma[s][f, n]:.12e}",
                                    f"{self.power_actual[s][f, n]:.12e}", ""])
                for f in range(F_s):
                    w.writerow(["admit", s, f, "", "", "",
                                f"{self.admit[s][f]:.12e}"])


def objective_value(alloc: SmallCellAllocation, epsilon: float) -> float:
    """(1 - eps) * admissions - eps * channel shares."""
    return (1.0 - epsilon) * alloc.total_admitted() - epsilon * alloc.total_share()


def perspective_rate(gamma, p_actual, gain, macro_interference, noise):
    """Rate (bps/Hz) of a time-shared sub-channel.

    During its fraction gamma of time the SUE receives the whole actual
    energy p_actual, i.e. instantaneous power p_actual/gamma:

        gamma * log2(1 + (p_actual/gamma) * gain / (macro_interference + noise))

    The limit value at gamma == 0 (with p_actual == 0) is 0; positive energy
    on a zero share is a domain error. Accepts scalars or broadcastable
    arrays.
    """
    g = np.asarray(gamma, dtype=float)
    p = np.asarray(p_actual, dtype=float)
    if np.any((g <= 0) & (p > 0)):
        raise ValueError("positive energy on a zero time share")
    if np.any(g < 0):
        raise ValueError("gamma must be non-negative")
    denom = np.asarray(macro_interference, dtype=float) + noise
    safe_g = np.where(g > 0, g, 1.0)
    rate = g * np.log2(1.0 + (p / safe_g) * np.asarray(gain, dtype=float) / denom)
    rate = np.where(g > 0, rate, 0.0)
    return rate if rate.ndim else float(rate)


# -- shared per-instance data ----------------------------------------------

@dataclass
class _TierData:
    a: list            # per cell (F_s, N): own gain / (macro interference + noise)
    cross: np.ndarray  # (S, N): gain toward the victim MUE, 0 where unowned
    icap: np.ndarray   # (N,): published tolerable level, I_max sentinel where unowned
    owned: np.ndarray  # (N,) bool


def _tier_data(macro_alloc: MacroAllocation, gains: ChannelGains,
               scenario: Scenario) -> _TierData:
    i_mac = macro_interference_at_sues(macro_alloc, gains)  # (F, N)
    a = []
    for s in range(scenario.S):
        sl = scenario.cell_slice(s)
        a.append(gains.small_to_sue[s] / (i_mac[sl] + scenario.N_o))
    owners = macro_alloc.owners()
    owned = owners >= 0
    icap = np.full(scenario.N, scenario.I_max)
    cross = np.zeros((scenario.S, scenario.N))
    for n in np.where(owned)[0]:
        m = owners[n]
        icap[n] = macro_alloc.tolerable[m, n]
        cross[:, n] = gains.small_to_mue[:, m, n]
    return _TierData(a=a, cross=cross, icap=icap, owned=owned)


def _rates(alloc: SmallCellAllocation, data: _TierData, scenario: Scenario):
    """Achieved per-SUE rate per cell, perspective form (valid in both modes)."""
    out = []
    for s in range(scenario.S):
        g = alloc.gamma[s]
        p = alloc.power_actual[s]
        safe_g = np.where(g > 0, g, 1.0)
        r = np.where(g > 0, g * np.log2(1.0 + (p / safe_g) * data.a[s]), 0.0)
        out.append(r.sum(axis=1))
    return out


@dataclass
class FeasibilityReport:
    """Outcome of a constraint audit; empty violations means feasible."""

    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_violation(self) -> float:
        return max((v[2] for v in self.violations), default=0.0)

    def __str__(self):
        if self.ok:
            return "feasible"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  {name} @ {loc}: excess {amt:.3e}" for name, loc, amt
                  in self.violations]
        return "\n".join(lines)


def check_feasible(alloc: SmallCellAllocation, macro_alloc: MacroAllocation,
                   gains: ChannelGains, scenario: Scenario,
                   rtol: float = 1e-6) -> FeasibilityReport:
    """Audit every constraint of the small-cell problem.

    Violations are reported with their location and absolute excess; the
    excess must exceed rtol relative to the constraint's own scale to count.
    In exact mode gamma and admit must be binary; in relaxed mode they must
    sit in [0, 1] and zero shares must carry zero energy.
    """
    data = _tier_data(macro_alloc, gains, scenario)
    rep = FeasibilityReport()
    exact = alloc.mode == "exact"
    rates = _rates(alloc, data, scenario)

    for s in range(scenario.S):
        g, p, y = alloc.gamma[s], alloc.power_actual[s], alloc.admit[s]
        F_s = g.shape[0]
        if np.any(p < -rtol * scenario.P_s_max):
            rep.violations.append(("power_nonneg", f"cell {s}",
                                   float(-p.min())))
        excess = p.sum() - scenario.P_s_max
        if excess > rtol * scenario.P_s_max:
            rep.violations.append(("cell_power_budget", f"cell {s}", float(excess)))
        share_excess = g.sum(axis=0) - 1.0
        for n in np.where(share_excess > rtol)[0]:
            rep.violations.append(("share_sum", f"cell {s}, channel {n}",
                                   float(share_excess[n])))
        for f in range(F_s):
            short = y[f] * scenario.R_f - rates[s][f]
            if short > rtol * max(scenario.R_f, 1.0):
                rep.violations.append(("rate", f"cell {s}, sue {f}", float(short)))
        if exact:
            if not np.all(np.isin(g, (0.0, 1.0))):
                rep.violations.append(("gamma_binary", f"cell {s}", float("nan")))
            if not np.all(np.isin(y, (0.0, 1.0))):
                rep.violations.append(("admit_binary", f"cell {s}", float("nan")))
            cap_excess = p - g * scenario.P_s_max
            bad = cap_excess > rtol * scenario.P_s_max
            for f, n in zip(*np.nonzero(bad)):
                rep.violations.append(("power_needs_channel",
                                       f"cell {s}, sue {f}, channel {n}",
                                       float(cap_excess[f, n])))
        else:
            if np.any(g > 1.0 + rtol) or np.any(g < -rtol):
                rep.violations.append(("gamma_range", f"cell {s}",
                                       float(max(g.max() - 1.0, -g.min()))))
            if np.any(y > 1.0 + rtol) or np.any(y < -rtol):
                rep.violations.append(("admit_range", f"cell {s}",
                                       float(max(y.max() - 1.0, -y.min()))))
            stray = (g <= 0) & (p > rtol * scenario.P_s_max)
            for f, n in zip(*np.nonzero(stray)):
                rep.violations.append(("energy_on_zero_share",
                                       f"cell {s}, sue {f}, channel {n}",
                                       float(p[f, n])))

    # cross-tier caps on macro-owned sub-channels
    for n in np.where(data.owned)[0]:
        total = sum(float(alloc.power_actual[s][:, n].sum() * data.cross[s, n])
                    for s in range(scenario.S))
        excess = total - data.icap[n]
        if excess > rtol * max(data.icap[n], scenario.N_o):
            rep.violations.append(("cross_tier", f"channel {n}", float(excess)))
    return rep


# -- convex time-sharing relaxation ----------------------------------------

_ICAP_FLOOR = 1e-30  # a zero cap still divides cleanly; forces q ~ 0 there


class _RelaxationProblem:
    """DPP-compiled relaxation, cached per (F_per_cell, N) shape.

    Solved in effective-SNR variables q = a * p rather than raw powers: the
    raw problem mixes watts (~1e-4) with gains over noise (~1e6) and caps
    (~1e-9) and interior-point solvers stall on it. With q the cone arguments
    are O(1) and the budget/cap rows are normalized to a right-hand side of 1.
    """

    def __init__(self, f_per_cell, n):
        self.f_per_cell = f_per_cell
        self.n = n
        # invan = 1 / (a * P_s_max); wnorm = cross * inva / max(icap, floor)
        self.invan = [cp.Parameter((f, n), nonneg=True) for f in f_per_cell]
        self.wnorm = [cp.Parameter((f, n), nonneg=True) for f in f_per_cell]
        self.rf = cp.Parameter(nonneg=True)
        self.eps = cp.Parameter(nonneg=True)
        self.gamma = [cp.Variable((f, n), nonneg=True) for f in f_per_cell]
        self.q = [cp.Variable((f, n), nonneg=True) for f in f_per_cell]
        self.admit = [cp.Variable(f, nonneg=True) for f in f_per_cell]

        cons = []
        interference = 0
        for g, q, y, inv, w in zip(self.gamma, self.q, self.admit,
                                   self.invan, self.wnorm):
            f = g.shape[0]
            for i in range(f):
                rate = cp.sum(-cp.rel_entr(g[i], g[i] + q[i])) / _LN2
                cons.append(rate >= self.rf * y[i])
            cons += [cp.sum(cp.multiply(inv, q)) <= 1,
                     cp.sum(g, axis=0) <= 1,
                     g <= 1, y <= 1]
            interference = interference + np.ones(f) @ cp.multiply(w, q)
        cons.append(interference <= 1)
        obj = cp.Maximize((1 - self.eps) * sum(cp.sum(y) for y in self.admit)
                          - self.eps * sum(cp.sum(g) for g in self.gamma))
        self.problem = cp.Problem(obj, cons)

    def solve(self, data: _TierData, scenario: Scenario) -> str:
        icap = np.maximum(data.icap, _ICAP_FLOOR)
        for s, (inv_par, w_par) in enumerate(zip(self.invan, self.wnorm)):
            inva = 1.0 / data.a[s]
            inv_par.value = inva / scenario.P_s_max
            w_par.value = data.cross[s] * inva / icap
        self.rf.value = scenario.R_f
        self.eps.value = scenario.epsilon
        return _robust_solve(self.problem)

    def powers(self, data: _TierData):
        """Per-cell raw powers recovered from the solved q values."""
        return [np.asarray(q.value, dtype=float) / data.a[s]
                for s, q in enumerate(self.q)]


_relaxation_cache: dict = {}
_minpower_cache: dict = {}


def _solve_once(problem: cp.Problem, solver: str) -> None:
    # warm_start off: templates are cached per shape and reused across
    # instances, and a stale iterate can tip a borderline status
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # inaccurate-solution chatter
        if solver == "SCS":
            problem.solve(solver=solver, eps=1e-9, max_iters=100000,
                          warm_start=False)
        else:
            problem.solve(solver=solver, warm_start=False)


def _robust_solve(problem: cp.Problem) -> str:
    """Walk the solver chain; an inaccurate status is kept only if no later
    solver produces a clean one."""
    last_err = None
    fallback = None
    for solver in _SOLVER_CHAIN:
        try:
            _solve_once(problem, solver)
        except Exception as err:  # solver crash: try the next one
            last_err = err
            continue
        if problem.status in ("optimal", "infeasible"):
            return problem.status
        if problem.status in ("optimal_inaccurate", "infeasible_inaccurate"):
            if fallback is None:  # earliest solver in the chain wins
                fallback = solver
    if fallback is not None:
        try:
            _solve_once(problem, fallback)
            return problem.status
        except Exception as err:
            last_err = err
    if last_err is not None:
        raise SmallCellSolverError(f"all solvers failed: {last_err}")
    raise SmallCellSolverError(f"no usable iterate, last status {problem.status!r}")


_GAMMA_FLOOR = 1e-10   # keeps the perspective rate smooth at the boundary
_DUST = 1e-9           # shares below this are treated as zero on output


def _polish(data: _TierData, scenario: Scenario, cells, gamma0, power0,
            eta=None):
    """Tighten a conic iterate on the smooth form of the same convex program.

    The exponential-cone solvers land within about a percent of the optimum
    on high-SNR instances, far too loose for bound comparisons, so the conic
    point is used as a warm start for a sequential quadratic programming
    pass with exact first derivatives; the program is convex, hence the KKT
    point reached is the global optimum.

    With eta=None the coupled problem is solved (cross-tier caps as hard
    rows over the given cells); with a price vector eta the caps are dropped
    and the priced interference is charged in the objective, which is the
    per-cell subproblem form. Returns (gamma, power, admit, value) with
    per-cell lists, or None when scipy fails to deliver a clean iterate.
    """
    N = scenario.N
    f_sizes = [scenario.F_per_cell[s] for s in cells]
    K = sum(f * N for f in f_sizes)
    I = sum(f_sizes)
    nx = 2 * K + I

    a = np.concatenate([data.a[s].ravel() for s in cells])
    w = np.concatenate([np.tile(data.cross[s], (f, 1)).ravel()
                        for s, f in zip(cells, f_sizes)])
    chan = np.concatenate([np.tile(np.arange(N), f) for f in f_sizes])
    sue = np.concatenate([np.repeat(np.arange(f), N) + off for f, off in
                          zip(f_sizes, np.cumsum([0] + f_sizes[:-1]))])
    cell_of = np.concatenate([np.full(f * N, ci) for ci, f in enumerate(f_sizes)])

    price = np.zeros(K)
    if eta is not None:
        price = np.maximum(np.asarray(eta, dtype=float), 0.0)[chan] * w / a

    # z = q / u with u the per-entry full-budget SNR, so every variable is
    # O(1); u = 0 marks entries pinned to zero power
    u = a * scenario.P_s_max
    cap_rows = []
    if eta is None:
        for n in np.where(data.owned)[0]:
            sel = chan == n
            if data.icap[n] < 1e-25:
                # a zero cap simply forbids power toward that victim
                u[sel & (w > 0)] = 0.0
                continue
            row = np.zeros(nx)
            row[K:2 * K][sel] = w[sel] * u[sel] / (a[sel] * data.icap[n])
            cap_rows.append(row)

    lin_rows, lin_ub = [], []
    for ci in range(len(cells)):
        row = np.zeros(nx)
        sel = cell_of == ci
        row[K:2 * K][sel] = u[sel] / (a[sel] * scenario.P_s_max)
        lin_rows.append(row)
        lin_ub.append(1.0)
        for n in range(N):
            row = np.zeros(nx)
            row[:K][sel & (chan == n)] = 1.0
            lin_rows.append(row)
            lin_ub.append(1.0)
    lin_rows += cap_rows
    lin_ub += [1.0] * len(cap_rows)
    A = np.vstack(lin_rows)
    ub = np.asarray(lin_ub)

    eps = scenario.epsilon
    c = np.concatenate([np.full(K, eps), price * u, np.full(I, -(1.0 - eps))])

    def split(x):
        # line-search probes can sit a hair outside the bounds; guard the
        # divisions so the rate stays defined everywhere
        g = np.maximum(x[:K], _GAMMA_FLOOR)
        z = np.maximum(x[K:2 * K], 0.0)
        return g, z, x[2 * K:]

    def rates_per_sue(g, z):
        sigma = u * z / g
        r = g * np.log1p(sigma) / _LN2
        out = np.zeros(I)
        np.add.at(out, sue, r)
        return out

    def cons_f(x):
        g, z, y = split(x)
        return rates_per_sue(g, z) - scenario.R_f * y

    def cons_jac(x):
        g, z, y = split(x)
        sigma = u * z / g
        J = np.zeros((I, nx))
        J[sue, np.arange(K)] = (np.log1p(sigma) - sigma / (1.0 + sigma)) / _LN2
        J[sue, K + np.arange(K)] = u / ((1.0 + sigma) * _LN2)
        J[np.arange(I), 2 * K + np.arange(I)] = -scenario.R_f
        return J

    g_lb = np.full(K, _GAMMA_FLOOR)
    g0 = np.clip(np.concatenate([np.asarray(g).ravel() for g in gamma0]),
                 g_lb, 1.0)
    q0 = a * np.concatenate([np.asarray(p).ravel() for p in power0])
    z0 = np.clip(np.divide(q0, u, out=np.zeros(K), where=u > 0), 0.0, 1.0)
    y0 = np.minimum(rates_per_sue(g0, z0) / scenario.R_f, 1.0)
    x0 = np.concatenate([g0, z0, y0])
    lb = np.concatenate([g_lb, np.zeros(K), np.zeros(I)])
    hb = np.ones(nx)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # out-of-bounds clip chatter
            res = minimize(
                lambda x: float(c @ x), x0, jac=lambda x: c, method="SLSQP",
                bounds=list(zip(lb, hb)),
                constraints=[
                    {"type": "ineq", "fun": lambda x: ub - A @ x,
                     "jac": lambda x: -A},
                    {"type": "ineq", "fun": cons_f, "jac": cons_jac},
                ],
                options={"ftol": 1e-14, "maxiter": 500})
    except Exception:
        return None
    if not np.all(np.isfinite(res.x)):
        return None

    g, z, _ = split(res.x)
    g = np.clip(g, _GAMMA_FLOOR, 1.0)
    z = np.clip(z, 0.0, 1.0)
    y = np.minimum(rates_per_sue(g, z) / scenario.R_f, 1.0)
    x = np.concatenate([g, z, y])
    if np.any(A @ x > ub + 1e-8):
        return None

    q = u * z
    value = float((1.0 - eps) * y.sum() - eps * g.sum() - price @ q)
    gamma_l, power_l, admit_l = [], [], []
    pos = 0
    off = 0
    for f in f_sizes:
        k = f * N
        gamma_l.append(g[pos:pos + k].reshape(f, N))
        power_l.append((q[pos:pos + k] / a[pos:pos + k]).reshape(f, N))
        admit_l.append(y[off:off + f].copy())
        pos += k
        off += f
    return gamma_l, power_l, admit_l, value


def _squash_dust(gv, pv):
    """Zero out share and power dust in place (below any audit tolerance)."""
    gv[gv < _DUST] = 0.0
    pv[gv == 0.0] = 0.0
    pv[pv < 1e-18] = 0.0


def solve_convex_relaxation(macro_alloc: MacroAllocation, gains: ChannelGains,
                            scenario: Scenario):
    """Solve the time-sharing relaxation to optimality.

    Returns (allocation, objective). The relaxation upper-bounds the exact
    binary problem: any binary point is also feasible here with the
    perspective rate collapsing to the plain rate. Solved by interior point
    with a trust-region polish; the published cross-tier caps are enforced
    only on macro-owned sub-channels (free sub-channels have no victim).
    """
    data = _tier_data(macro_alloc, gains, scenario)
    key = (scenario.F_per_cell, scenario.N)
    prob = _relaxation_cache.get(key)
    if prob is None:
        prob = _relaxation_cache[key] = _RelaxationProblem(*key)
    status = prob.solve(data, scenario)
    if status not in ("optimal", "optimal_inaccurate"):
        raise SmallCellSolverError(f"relaxation ended with status {status!r}")

    gamma, power, admit = [], [], []
    for g, p, y in zip(prob.gamma, prob.powers(data), prob.admit):
        gamma.append(np.clip(np.asarray(g.value, dtype=float), 0.0, 1.0))
        power.append(np.maximum(np.asarray(p, dtype=float), 0.0))
        admit.append(np.clip(np.asarray(y.value, dtype=float), 0.0, 1.0))
    eps = scenario.epsilon
    value = ((1.0 - eps) * sum(y.sum() for y in admit)
             - eps * sum(g.sum() for g in gamma))

    polished = _polish(data, scenario, list(range(scenario.S)), gamma, power)
    if polished is not None and polished[3] > value:
        gamma, power, admit, value = polished

    for gv, pv in zip(gamma, power):
        _squash_dust(gv, pv)
    alloc = SmallCellAllocation(gamma=gamma, power_actual=power, admit=admit,
                                mode="relaxed", solver_status=status)
    return alloc, objective_value(alloc, scenario.epsilon)


# -- exact solver (desk scale) ----------------------------------------------

def _min_power_solve(shape_key, a, ub, reff, w, icap, p_s_max, f_per_cell):
    """Feasibility/min-power for one binary pattern.

    Returns the raw power array or None if the pattern cannot carry the
    rates. Solved in q = a * p variables with normalized rows (same scaling
    rationale as the relaxation).
    """
    prob = _minpower_cache.get(shape_key)
    if prob is None:
        prob = _minpower_cache[shape_key] = _build_min_power(*shape_key)
    inva = 1.0 / a
    invan = inva / p_s_max
    # Box q at 2^reff - 1: a lone clamped entry already meets the rate, and a
    # minimum never exceeds it, so the clamp is free; without it the box
    # stretches to a * P_s_max (~1e6) and the conic solver loses its footing.
    ubq = np.minimum(a * ub, np.where(reff > 0, 2.0 ** reff - 1.0, 0.0)[:, None])
    wnorm = w * inva / np.maximum(icap, _ICAP_FLOOR)
    # Refute hopeless patterns without a conic solve: even with every
    # assigned channel at its individual ceiling (pattern mask, cell budget,
    # cross-tier cap) the rate bound can fall short. Keeps absurdly scaled
    # instances away from the solvers entirely.
    with np.errstate(divide="ignore"):
        qcap = np.where(wnorm > 0, 1.0 / wnorm, np.inf)
    rate_max = np.log1p(np.minimum(ubq, qcap)).sum(axis=1) / _LN2
    if np.any(rate_max < reff - 1e-9 * np.maximum(reff, 1.0)):
        return None
    prob["ubq"].value = ubq
    prob["invan"].value = invan
    prob["reff"].value = reff
    prob["wnorm"].value = wnorm
    status = _robust_solve(prob["problem"])
    if status in ("infeasible", "infeasible_inaccurate"):
        return None
    if status not in ("optimal", "optimal_inaccurate"):
        return None
    q = np.maximum(np.asarray(prob["q"].value, dtype=float), 0.0)
    if status == "optimal_inaccurate":
        # a feasibility certificate from a struggling solver is worthless
        # until the iterate itself passes the constraints
        tol = 1e-6
        rates = np.log1p(q).sum(axis=1) / _LN2
        ok = np.all(rates >= reff - tol * np.maximum(reff, 1.0))
        ok = ok and np.all((wnorm * q).sum(axis=0) <= 1.0 + tol)
        ok = ok and np.all(q <= ubq + tol * np.maximum(ubq, 1.0))
        row = 0
        for f in f_per_cell:
            ok = ok and (invan[row:row + f] * q[row:row + f]).sum() <= 1.0 + tol
            row += f
        if not ok:
            return None
    return q * inva


def _build_min_power(f_per_cell, n):
    f_total = sum(f_per_cell)
    ubq = cp.Parameter((f_total, n), nonneg=True)
    invan = cp.Parameter((f_total, n), nonneg=True)
    reff = cp.Parameter(f_total, nonneg=True)
    wnorm = cp.Parameter((f_total, n), nonneg=True)
    q = cp.Variable((f_total, n), nonneg=True)
    cons = [q <= ubq, cp.sum(cp.multiply(wnorm, q), axis=0) <= 1]
    row = 0
    for f in f_per_cell:
        cons.append(cp.sum(cp.multiply(invan[row:row + f], q[row:row + f])) <= 1)
        row += f
    for i in range(f_total):
        rate = cp.sum(cp.log1p(q[i])) / _LN2
        cons.append(rate >= reff[i])
    problem = cp.Problem(cp.Minimize(cp.sum(cp.multiply(invan, q))), cons)
    return {"ubq": ubq, "invan": invan, "reff": reff, "wnorm": wnorm,
            "q": q, "problem": problem}


def _cell_patterns(n_admitted: int, n: int):
    """All channel->local-SUE maps for one cell; -1 leaves a channel free.

    Maps that starve an admitted SUE of channels are dropped (it could not
    reach a positive rate target), as are maps giving channels to
    non-admitted SUEs (pure waste: the objective only loses by it).
    """
    if n_admitted == 0:
        return [np.full(n, -1, dtype=int)]
    out = []
    for combo in itertools.product(range(-1, n_admitted), repeat=n):
        arr = np.array(combo, dtype=int)
        if all(np.any(arr == j) for j in range(n_admitted)):
            out.append(arr)
    return out


def _iter_admissions(scenario: Scenario, size: int):
    """Admission sets of a given size as per-cell boolean masks."""
    labels = [(s, f) for s in range(scenario.S)
              for f in range(scenario.F_per_cell[s])]
    for combo in itertools.combinations(labels, size):
        masks = [np.zeros(fs, dtype=bool) for fs in scenario.F_per_cell]
        for s, f in combo:
            masks[s][f] = True
        yield masks


def _pattern_to_arrays(scenario, adm_masks, cell_maps):
    """Expand per-cell maps over admitted SUEs into global (F, N) masks."""
    assign = []
    for s in range(scenario.S):
        F_s, N = scenario.F_per_cell[s], scenario.N
        m = np.zeros((F_s, N), dtype=bool)
        admitted = np.where(adm_masks[s])[0]
        cmap = cell_maps[s]
        for j, f in enumerate(admitted):
            m[f] = cmap == j
        assign.append(m)
    return assign


def solve_minlp_exact(macro_alloc: MacroAllocation, gains: ChannelGains,
                      scenario: Scenario) -> SmallCellAllocation:
    """Exact optimum of the binary admission/allocation problem, desk scale.

    Searches admission counts from all-admitted downward; for each admission
    set it finds the fewest sub-channels that still support it (a convex
    minimum-power check per binary pattern). Because eps < 1/(1 + S*N) this
    lexicographic search (max admissions, then min channels, then min power)
    returns the true objective optimum. Guarded to F*N <= 24 binaries.
    """
    F, N = scenario.F, scenario.N
    if F * N > 24:
        raise ValueError(f"exact solver guarded to F*N <= 24 binaries; "
                         f"got {F}*{N} = {F * N}")
    data = _tier_data(macro_alloc, gains, scenario)
    a_full = np.vstack(data.a)
    w_full = np.vstack([np.tile(data.cross[s], (scenario.F_per_cell[s], 1))
                        for s in range(scenario.S)])
    shape_key = (scenario.F_per_cell, N)

    for size in range(F, 0, -1):
        best = None  # (channels, power, assign, p_opt, adm_masks)
        for adm_masks in _iter_admissions(scenario, size):
            adm_flat = np.concatenate(adm_masks)
            reff = np.where(adm_flat, scenario.R_f, 0.0)
            per_cell = [_cell_patterns(int(adm_masks[s].sum()), N)
                        for s in range(scenario.S)]
            combos = []
            for cell_maps in itertools.product(*per_cell):
                used = sum(int((cm >= 0).sum()) for cm in cell_maps)
                combos.append((used, cell_maps))
            combos.sort(key=lambda t: t[0])
            cap = best[0] if best is not None else None
            found_for_set = None
            for used, cell_maps in combos:
                if cap is not None and used > cap:
                    break
                if found_for_set is not None and used > found_for_set:
                    break
                assign = _pattern_to_arrays(scenario, adm_masks, cell_maps)
                ub = np.vstack(assign).astype(float) * scenario.P_s_max
                p_opt = _min_power_solve(shape_key, a_full, ub, reff, w_full,
                                         data.icap, scenario.P_s_max,
                                         scenario.F_per_cell)
                if p_opt is None:
                    continue
                found_for_set = used
                cand = (used, float(p_opt.sum()), assign, p_opt, adm_masks)
                if best is None or (cand[0], cand[1]) < (best[0], best[1]):
                    best = cand
        if best is not None:
            used, _, assign, p_opt, adm_masks = best
            gamma = [m.astype(float) for m in assign]
            power, row = [], 0
            for s in range(scenario.S):
                F_s = scenario.F_per_cell[s]
                p = p_opt[row:row + F_s] * assign[s]
                power.append(p)
                row += F_s
            admit = [m.astype(float) for m in adm_masks]
            return SmallCellAllocation(gamma=gamma, power_actual=power,
                                       admit=admit, mode="exact")
    # nobody admissible: the all-zero allocation
    return SmallCellAllocation(
        gamma=[np.zeros((fs, N)) for fs in scenario.F_per_cell],
        power_actual=[np.zeros((fs, N)) for fs in scenario.F_per_cell],
        admit=[np.zeros(fs) for fs in scenario.F_per_cell],
        mode="exact")


# -- independent rate-grid oracle -------------------------------------------

def _sue_candidates(a_row: np.ndarray, channels: np.ndarray, rate: float,
                    grid: int, p_max: np.ndarray):
    """Candidate power vectors (n_cand, N) meeting the rate on the given
    channels, from a simplex grid over rate splits.

    p_max holds a per-channel power ceiling (budget and interference caps).
    Each split coordinate is gridded over its own feasible window implied by
    those ceilings, not over [0, rate]: when caps leave only a sliver of the
    simplex, a uniform grid can straddle it, while endpoints of the tight
    window always land inside.
    """
    n_total = a_row.size
    k = channels.size
    if k == 0:
        return np.zeros((0, n_total))
    a_sel = a_row[channels]
    r_max = np.log2(1.0 + a_sel * np.maximum(p_max, 0.0))
    tol = 1e-12
    if r_max.sum() < rate - 1e-9:
        return np.zeros((0, n_total))
    if k == 1:
        p = (2.0 ** rate - 1.0) / a_sel[0]
        out = np.zeros((1, n_total))
        out[0, channels[0]] = p
        return out
    # keep the cross product bounded for wide channel sets
    ticks = grid if k <= 3 else max(9, int(grid ** (2.0 / (k - 1))))
    unit = np.linspace(0.0, 1.0, ticks)
    splits = np.zeros((1, 0))
    rem = np.array([rate])
    for i in range(k - 1):
        tail = float(r_max[i + 1:].sum())
        lo = np.maximum(0.0, rem - tail)
        hi = np.minimum(r_max[i], rem)
        keep = lo <= hi + tol
        splits, rem, lo, hi = splits[keep], rem[keep], lo[keep], hi[keep]
        if rem.size == 0:
            return np.zeros((0, n_total))
        r_i = lo[:, None] + (hi - lo)[:, None] * unit[None, :]
        splits = np.concatenate(
            [np.repeat(splits, ticks, axis=0), r_i.reshape(-1, 1)], axis=1)
        rem = (rem[:, None] - r_i).reshape(-1)
    last = np.maximum(rem, 0.0)
    keep = last <= r_max[-1] + tol
    splits = np.concatenate([splits[keep], last[keep][:, None]], axis=1)
    if splits.shape[0] == 0:
        return np.zeros((0, n_total))
    powers = (2.0 ** splits - 1.0) / a_sel[None, :]
    out = np.zeros((splits.shape[0], n_total))
    out[:, channels] = powers
    return out


def _pattern_feasible_grid(scenario, data, assign, adm_flat, grid):
    """Grid feasibility for one binary pattern, pure numpy.

    Folds SUEs one at a time, pruning power-budget and cross-tier cap
    violations as it goes; feasible iff any combination survives.

    Single-channel SUEs go first: their power is forced, so the SUEs that
    actually split a rate see exact cap residuals and their candidate
    windows stay tight.
    """
    N = scenario.N
    cell_of = np.concatenate([np.full(fs, s) for s, fs in
                              enumerate(scenario.F_per_cell)])
    a_full = np.vstack(data.a)
    assign_full = np.vstack(assign)
    state_p = np.zeros((1, scenario.S))   # per-cell power totals
    state_i = np.zeros((1, N))            # per-channel interference totals
    slack = 1.0 + 1e-12
    order = sorted(np.where(adm_flat)[0],
                   key=lambda i: int(assign_full[i].sum()))
    for idx in order:
        channels = np.where(assign_full[idx])[0]
        s = cell_of[idx]
        # loosest residual over the surviving states keeps coverage sound
        budget = scenario.P_s_max - float(state_p[:, s].min())
        head = data.icap[channels] - state_i[:, channels].min(axis=0)
        cross = data.cross[s][channels]
        with np.errstate(divide="ignore", invalid="ignore"):
            cap_p = np.where(cross > 0.0, head / cross, np.inf)
        p_max = np.minimum(budget, cap_p)
        cand = _sue_candidates(a_full[idx], channels, scenario.R_f, grid,
                               p_max)
        if cand.shape[0] == 0:
            return False
        cand_p = cand.sum(axis=1)                            # (c,)
        cand_i = cand * data.cross[s][None, :]               # (c, N)
        new_p = state_p[:, None, :].repeat(cand.shape[0], axis=1)
        new_p[:, :, s] += cand_p[None, :]
        new_i = state_i[:, None, :] + cand_i[None, :, :]
        new_p = new_p.reshape(-1, scenario.S)
        new_i = new_i.reshape(-1, N)
        ok = (new_p[:, s] <= scenario.P_s_max * slack)
        ok &= np.all(new_i <= data.icap[None, :] * slack, axis=1)
        if not ok.any():
            return False
        state_p = new_p[ok]
        state_i = new_i[ok]
        # keep the frontier small: many survivors are interchangeable
        if state_p.shape[0] > 20000:
            rank = np.argsort(state_p.sum(axis=1) + state_i.sum(axis=1))
            state_p = state_p[rank[:20000]]
            state_i = state_i[rank[:20000]]
    return True


def grid_search_oracle(macro_alloc: MacroAllocation, gains: ChannelGains,
                       scenario: Scenario, grid: int = 97) -> dict:
    """Independent exhaustive check of the exact solver, desk scale.

    Enumerates the same binary patterns as the exact solver but decides
    per-pattern feasibility with a pure-numpy rate-split grid instead of a
    convex solve. Returns the best objective with its admission and channel
    counts; the grid makes feasibility one-sided (a sufficiently fine grid
    never accepts an infeasible pattern).
    """
    F, N = scenario.F, scenario.N
    if F * N > 24:
        raise ValueError("oracle guarded to F*N <= 24 binaries")
    data = _tier_data(macro_alloc, gains, scenario)

    for size in range(F, 0, -1):
        best_channels = None
        for adm_masks in _iter_admissions(scenario, size):
            adm_flat = np.concatenate(adm_masks)
            per_cell = [_cell_patterns(int(adm_masks[s].sum()), N)
                        for s in range(scenario.S)]
            combos = sorted(
                ((sum(int((cm >= 0).sum()) for cm in cell_maps), cell_maps)
                 for cell_maps in itertools.product(*per_cell)),
                key=lambda t: t[0])
            for used, cell_maps in combos:
                if best_channels is not None and used >= best_channels:
                    break
                assign = _pattern_to_arrays(scenario, adm_masks, cell_maps)
                if _pattern_feasible_grid(scenario, data, assign, adm_flat, grid):
                    best_channels = used
                    break
        if best_channels is not None:
            eps = scenario.epsilon
            return {"objective": (1.0 - eps) * size - eps * best_channels,
                    "admitted": size, "channels": best_channels}
    return {"objective": 0.0, "admitted": 0, "channels": 0}
