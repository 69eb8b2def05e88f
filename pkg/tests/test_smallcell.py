import csv

import numpy as np
import pytest

from hetnet_ra.smallcell import (SmallCellAllocation, objective_value,
                                 perspective_rate, check_feasible,
                                 solve_convex_relaxation, solve_minlp_exact,
                                 grid_search_oracle)

from conftest import make_scenario, make_instance


def _zero_alloc(scenario, mode="exact"):
    shape = (scenario.F_per_cell[0], scenario.N)
    return SmallCellAllocation(
        gamma=[np.zeros(shape) for _ in range(scenario.S)],
        power_actual=[np.zeros(shape) for _ in range(scenario.S)],
        admit=[np.zeros(shape[0]) for _ in range(scenario.S)],
        mode=mode)


# -- objective ----------------------------------------------------------------

def test_objective_all_zero():
    scenario, gains, macro = make_instance(seed=4)
    assert objective_value(_zero_alloc(scenario), scenario.epsilon) == 0.0


def test_objective_single_admission_hand_value():
    scenario, _, _ = make_instance(seed=4)
    alloc = _zero_alloc(scenario)
    alloc.admit[0][0] = 1.0
    alloc.gamma[0][0, 0] = 1.0
    # (1-eps)*1 - eps*1 with eps = 0.1
    assert objective_value(alloc, 0.1) == pytest.approx(0.8, rel=1e-12)


def test_objective_weight_default():
    scenario = make_scenario()
    assert scenario.epsilon == pytest.approx(
        0.9 / (1 + scenario.S * scenario.N), rel=1e-12)


# -- perspective rate ---------------------------------------------------------

def test_perspective_rate_full_share_is_plain_rate():
    got = perspective_rate(1.0, 3.0, 2.0, 0.05, 0.05)
    assert got == pytest.approx(np.log2(1.0 + 3.0 * 2.0 / 0.1), rel=1e-12)


def test_perspective_rate_zero_share_zero_power():
    assert perspective_rate(0.0, 0.0, 0.5, 0.0, 1e-13) == 0.0


def test_perspective_rate_errors():
    with pytest.raises(ValueError):
        perspective_rate(0.0, 1.0, 0.5, 0.0, 1e-13)  # energy on a zero share
    with pytest.raises(ValueError):
        perspective_rate(-0.1, 0.0, 0.5, 0.0, 1e-13)


def test_perspective_rate_concave_in_share_power():
    rng = np.random.default_rng(11)
    gain = 0.7
    noise = 1e-3
    a, b = rng.uniform(0.01, 1.0, (2, 1000)), rng.uniform(0.0, 0.1, (2, 1000))
    mid = perspective_rate(0.5 * (a[0] + a[1]), 0.5 * (b[0] + b[1]), gain,
                           0.0, noise)
    avg = 0.5 * (perspective_rate(a[0], b[0], gain, 0.0, noise)
                 + perspective_rate(a[1], b[1], gain, 0.0, noise))
    assert np.all(mid >= avg - 1e-12)


# -- feasibility checker ------------------------------------------------------

def test_check_feasible_accepts_all_zero():
    scenario, gains, macro = make_instance(seed=4)
    report = check_feasible(_zero_alloc(scenario), macro, gains, scenario)
    assert report.ok
    assert report.max_violation == 0.0


def test_check_feasible_flags_power_budget():
    scenario, gains, macro = make_instance(seed=4)
    alloc = _zero_alloc(scenario)
    alloc.gamma[0][0, :] = 1.0 / scenario.N
    alloc.power_actual[0][0, :] = (scenario.P_s_max + 1e-6) / scenario.N
    report = check_feasible(alloc, macro, gains, scenario)
    names = {v[0] for v in report.violations}
    assert "cell_power_budget" in names
    assert not report.ok


def test_check_feasible_cross_tier_slack_matches_hand_sum():
    scenario, gains, macro = make_instance(seed=4)
    n = int(np.flatnonzero(macro.gamma.sum(axis=0) == 1)[0])
    cap = macro.tolerable[macro.owner_of(n), n]
    alloc = _zero_alloc(scenario)
    # load every SUE of every cell fully onto the owned channel
    caused = 0.0
    for s in range(scenario.S):
        alloc.gamma[s][:, n] = 1.0 / scenario.F_per_cell[s]
        alloc.power_actual[s][:, n] = 2.0 * scenario.P_s_max
        lo, hi = scenario.cell_slice(s).start, scenario.cell_slice(s).stop
        m = macro.owner_of(n)
        caused += float(np.sum(alloc.power_actual[s][:, n]
                               * gains.small_to_mue[s, m, n]))
    report = check_feasible(alloc, macro, gains, scenario)
    cross = [v for v in report.violations if v[0] == "cross_tier"]
    assert cross, "expected a cross-tier violation"
    excess = next(v[2] for v in cross if v[1] == f"channel {n}")
    assert excess == pytest.approx(caused - cap, rel=1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_solver_outputs_are_feasible(seed):
    scenario, gains, macro = make_instance(seed=seed)
    exact = solve_minlp_exact(macro, gains, scenario)
    relax, _ = solve_convex_relaxation(macro, gains, scenario)
    assert check_feasible(exact, macro, gains, scenario).ok
    assert check_feasible(relax, macro, gains, scenario, rtol=1e-6).ok


# -- solvers ------------------------------------------------------------------

def test_exact_single_sue_free_channel():
    scenario = make_scenario(n_mues=1, n_channels=1, rate_mue=2.0,
                             rate_sue=1.0, cells=((0.0, -100.0),),
                             sues_per_cell=1, epsilon=0.45)
    rng = np.random.default_rng(3)
    from hetnet_ra.model import realize_gains, ChannelGains
    from hetnet_ra.macro import MacroAllocation
    gains = realize_gains(scenario, rng)
    # macro owns nothing: the one channel is unconditionally usable
    free = MacroAllocation(gamma=np.zeros((1, 1), dtype=int),
                           power=np.zeros((1, 1)),
                           tolerable=np.full((1, 1), scenario.I_max),
                           n_ac=0, method="proposed")
    alloc = solve_minlp_exact(free, gains, scenario)
    assert alloc.admit[0][0] == pytest.approx(1.0)
    assert alloc.gamma[0][0, 0] == pytest.approx(1.0)
    obj = objective_value(alloc, scenario.epsilon)
    assert obj == pytest.approx((1 - 0.45) - 0.45, rel=1e-9)


def test_blocked_spectrum_admits_nobody():
    scenario, gains, macro = make_instance(seed=4)
    blocked = macro.__class__(gamma=np.ones_like(macro.gamma),
                              power=macro.power, tolerable=np.zeros_like(
                                  macro.tolerable),
                              n_ac=scenario.N, method="proposed")
    # every channel macro-owned with a zero cap: nothing can transmit
    exact = solve_minlp_exact(blocked, gains, scenario)
    assert exact.total_admitted() == 0
    assert objective_value(exact, scenario.epsilon) == 0.0
    relax, _ = solve_convex_relaxation(blocked, gains, scenario)
    assert relax.total_admitted() <= 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_relaxation_bounds_exact_and_oracle_agrees(seed):
    scenario, gains, macro = make_instance(
        seed=seed, n_mues=2, n_channels=3, rate_mue=3.0, rate_sue=4.0,
        cells=((-10.0, -100.0), (10.0, -100.0)), sues_per_cell=2)
    exact = solve_minlp_exact(macro, gains, scenario)
    obj_exact = objective_value(exact, scenario.epsilon)
    relax, obj_relax = solve_convex_relaxation(macro, gains, scenario)
    assert obj_relax >= obj_exact - 1e-8
    oracle = grid_search_oracle(macro, gains, scenario)
    assert obj_exact == pytest.approx(oracle["objective"], abs=1e-3)
    assert exact.total_admitted() == oracle["admitted"]


def test_generous_rate_admits_everyone():
    scenario, gains, macro = make_instance(seed=9, rate_sue=0.05)
    relax, _ = solve_convex_relaxation(macro, gains, scenario)
    for y in relax.admit:
        assert np.all(y >= 1 - 1e-6)


def test_cap_ladder_objective_monotone():
    scenario, gains, macro = make_instance(seed=6)
    objs = []
    for scale in (1.0, 0.3, 0.05):
        capped = macro.__class__(gamma=macro.gamma, power=macro.power,
                                 tolerable=np.where(
                                     macro.tolerable < scenario.I_max,
                                     macro.tolerable * scale,
                                     macro.tolerable),
                                 n_ac=macro.n_ac, method=macro.method,
                                 i_th=macro.i_th, i_max=macro.i_max)
        _, obj = solve_convex_relaxation(capped, gains, scenario)
        objs.append(obj)
    assert objs[0] >= objs[1] - 1e-7
    assert objs[1] >= objs[2] - 1e-7


def test_exact_guard_on_problem_size():
    scenario, gains, macro = make_instance(seed=0, n_channels=7,
                                           sues_per_cell=2)
    # F*N = 4*7 = 28 > 24
    with pytest.raises(ValueError):
        solve_minlp_exact(macro, gains, scenario)


def test_exact_power_implies_whole_channel():
    scenario, gains, macro = make_instance(seed=2)
    exact = solve_minlp_exact(macro, gains, scenario)
    for s in range(scenario.S):
        used = exact.power_actual[s] > 0
        assert np.all(exact.gamma[s][used] == 1.0)
        assert set(np.unique(exact.gamma[s])) <= {0.0, 1.0}


def test_allocation_csv(tmp_path):
    scenario, gains, macro = make_instance(seed=4)
    alloc, _ = solve_convex_relaxation(macro, gains, scenario)
    path = tmp_path / "cells.csv"
    alloc.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["record", "s", "f", "n", "gamma", "power_W", "admit"]
    share_rows = [r for r in rows[1:] if r[0] == "share"]
    admit_rows = [r for r in rows[1:] if r[0] == "admit"]
    assert len(share_rows) == scenario.F * scenario.N
    assert len(admit_rows) == scenario.F
