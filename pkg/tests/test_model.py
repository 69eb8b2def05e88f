import json
import math

import numpy as np
import pytest

from hetnet_ra.model import (Scenario, ScenarioError, path_loss_db, realize_gains,
                             sinr_macro, sinr_sue, macro_interference_at_sues,
                             cross_tier_interference, generate_scenario,
                             save_scenario, load_scenario)
from hetnet_ra.smallcell import SmallCellAllocation

from conftest import make_scenario, manual_gains, make_macro


# -- path loss ---------------------------------------------------------------

def test_path_loss_reference_values():
    assert path_loss_db("small_to_sue", 10.0) == pytest.approx(58.46, abs=1e-12)
    assert path_loss_db("macro_to_mue", 10.0) == pytest.approx(52.9, abs=1e-12)
    assert path_loss_db("small_to_mue", 10.0, 1.0) == pytest.approx(59.46, abs=1e-12)
    assert path_loss_db("macro_to_sue", 10.0, 1.0) == pytest.approx(53.9, abs=1e-12)


def test_path_loss_wall_only_on_crossing_links():
    # L_ow applies to small->MUE and macro->SUE, never to the other two
    for kind in ("small_to_sue", "macro_to_mue"):
        assert path_loss_db(kind, 25.0, 7.0) == path_loss_db(kind, 25.0, 0.0)
    for kind in ("small_to_mue", "macro_to_sue"):
        assert path_loss_db(kind, 25.0, 7.0) == path_loss_db(kind, 25.0, 0.0) + 7.0


def test_path_loss_clamps_below_one_metre():
    for kind in ("small_to_sue", "small_to_mue", "macro_to_sue", "macro_to_mue"):
        assert path_loss_db(kind, 0.01) == path_loss_db(kind, 1.0)
        assert np.isfinite(path_loss_db(kind, 1e-30))


def test_path_loss_unknown_kind():
    with pytest.raises(ValueError):
        path_loss_db("sue_to_sue", 10.0)


def test_path_loss_monotone_in_distance():
    d = np.linspace(1.0, 500.0, 200)
    for kind in ("small_to_sue", "small_to_mue", "macro_to_sue", "macro_to_mue"):
        pl = np.array([path_loss_db(kind, x) for x in d])
        assert np.all(np.diff(pl) > 0)


def test_cross_link_dominates_own_link():
    for d in (1.0, 5.0, 30.0, 200.0):
        for l_ow in (0.0, 1.0, 10.0):
            assert (path_loss_db("small_to_mue", d, l_ow)
                    >= path_loss_db("small_to_sue", d))


# -- gain realization --------------------------------------------------------

def test_gains_deterministic_hook():
    """With shadowing and fading disabled the gain is exactly 10^(-PL/10)."""
    sc = make_scenario(seed=5)
    g = realize_gains(sc, np.random.default_rng(0), shadowing=False, fading=False)

    def dist(a, b):
        return math.hypot(a[0] - b[0], a[1] - b[1])

    for m, pos in enumerate(sc.mue_positions):
        pl = path_loss_db("macro_to_mue", dist(sc.macro_position, pos))
        expect = 10.0 ** (-pl / 10.0)
        assert np.all(g.macro_to_mue[m] == expect)
    for s, cell in enumerate(sc.small_cell_positions):
        for f, pos in enumerate(sc.sue_positions[s]):
            pl = path_loss_db("small_to_sue", dist(cell, pos))
            assert np.all(g.small_to_sue[s][f] == 10.0 ** (-pl / 10.0))
        for m, mpos in enumerate(sc.mue_positions):
            pl = path_loss_db("small_to_mue", dist(cell, mpos), sc.L_ow)
            assert np.all(g.small_to_mue[s, m] == 10.0 ** (-pl / 10.0))


def test_same_seed_is_bit_identical():
    sc = make_scenario(seed=2)
    a = realize_gains(sc, 99)
    b = realize_gains(sc, 99)
    assert np.array_equal(a.macro_to_mue, b.macro_to_mue)
    assert np.array_equal(a.macro_to_sue, b.macro_to_sue)
    assert np.array_equal(a.small_to_mue, b.small_to_mue)
    for x, y in zip(a.small_to_sue, b.small_to_sue):
        assert np.array_equal(x, y)
    c = realize_gains(sc, 100)
    assert not np.array_equal(a.macro_to_mue, c.macro_to_mue)


def test_fading_has_unit_mean():
    sc = Scenario(mue_positions=((0.0, -100.0),),
                  small_cell_positions=((10.0, -100.0),),
                  sue_positions=(((12.0, -100.0),),),
                  N=100_000, R_m=4.0, R_f=5.0)
    g = realize_gains(sc, np.random.default_rng(11), shadowing=False, fading=True)
    base = realize_gains(sc, np.random.default_rng(11), shadowing=False,
                         fading=False)
    h = g.macro_to_mue[0] / base.macro_to_mue[0]
    assert 0.99 <= h.mean() <= 1.01


def test_shadowing_changes_per_channel():
    sc = make_scenario(seed=4, n_channels=6)
    g = realize_gains(sc, 0, shadowing=True, fading=False)
    # independent per sub-channel draws: a row should not be constant
    assert np.ptp(g.macro_to_mue[0]) > 0


def test_gains_reject_nonpositive():
    with pytest.raises(ValueError):
        manual_gains([[0.0]], [[1.0]], [[[1.0]]], [[[1.0]]])


# -- SINR and interference primitives ---------------------------------------

def test_sinr_macro_values():
    assert sinr_macro(1.0, 1.0, 0.0, 1.0) == 1.0
    assert sinr_macro(2.0, 3.0, 0.5, 0.5) == 6.0
    assert sinr_macro(2.0, 1.0, 0.0, 1.0) == 2.0 * sinr_macro(1.0, 1.0, 0.0, 1.0)


def test_sinr_sue_values():
    assert sinr_sue(1.0, 1.0, 1.0, 1.0) == 0.5
    assert sinr_sue(0.1, 2.0, 0.0, 1e-13) == 0.1 * 2.0 / 1e-13
    assert sinr_sue(3.0, 2.0, 0.7, 0.3) == sinr_macro(3.0, 2.0, 0.7, 0.3)


def _one_cell_setup():
    sc = Scenario(mue_positions=((0.0, -100.0),),
                  small_cell_positions=((10.0, -100.0),),
                  sue_positions=(((12.0, -100.0),),),
                  N=1, R_m=4.0, R_f=5.0)
    gains = manual_gains([[1e-9]], [[1e-10]], [np.array([[1e-6]])],
                         np.full((1, 1, 1), 1e-8))
    return sc, gains


def test_cross_tier_interference_single_term():
    sc, gains = _one_cell_setup()
    macro = make_macro(sc, owners=[0], tolerable_value=1e-9)
    alloc = SmallCellAllocation(gamma=[np.array([[1.0]])],
                                power_actual=[np.array([[0.01]])],
                                admit=[np.array([1.0])], mode="exact")
    assert cross_tier_interference(alloc, macro, gains, 0) == pytest.approx(1e-10)


def test_cross_tier_interference_unowned_is_zero():
    sc, gains = _one_cell_setup()
    macro = make_macro(sc, owners=[-1], tolerable_value=1e-9)
    alloc = SmallCellAllocation(gamma=[np.array([[1.0]])],
                                power_actual=[np.array([[0.01]])],
                                admit=[np.array([1.0])], mode="exact")
    assert cross_tier_interference(alloc, macro, gains, 0) == 0.0


def test_cross_tier_interference_hand_sum():
    """Three cells, explicit summation oracle."""
    rng = np.random.default_rng(8)
    sc = Scenario(mue_positions=((0.0, -90.0), (5.0, -95.0)),
                  small_cell_positions=((-20.0, -100.0), (0.0, -120.0),
                                        (20.0, -100.0)),
                  sue_positions=(((-18.0, -100.0),), ((2.0, -120.0),),
                                 ((22.0, -100.0),)),
                  N=2, R_m=4.0, R_f=5.0)
    gains = manual_gains(rng.uniform(1e-10, 1e-8, (2, 2)),
                         rng.uniform(1e-12, 1e-10, (3, 2)),
                         [rng.uniform(1e-7, 1e-5, (1, 2)) for _ in range(3)],
                         rng.uniform(1e-12, 1e-9, (3, 2, 2)))
    macro = make_macro(sc, owners=[1, 0], tolerable_value=1e-9)
    power = [rng.uniform(0.0, 0.01, (1, 2)) for _ in range(3)]
    alloc = SmallCellAllocation(gamma=[np.ones((1, 2))] * 3, power_actual=power,
                                admit=[np.ones(1)] * 3, mode="exact")
    for n, m in ((0, 1), (1, 0)):
        expect = sum(power[s][0, n] * gains.small_to_mue[s, m, n]
                     for s in range(3))
        assert cross_tier_interference(alloc, macro, gains, n) == pytest.approx(
            expect, rel=1e-12)


def test_macro_interference_at_sues_hand_check():
    sc, gains = _one_cell_setup()
    macro = make_macro(sc, owners=[0], tolerable_value=1e-9, power_per_channel=4.0)
    i_mac = macro_interference_at_sues(macro, gains)
    assert i_mac.shape == (1, 1)
    assert i_mac[0, 0] == pytest.approx(4.0 * 1e-10, rel=1e-12)


# -- scenario construction and serialization ---------------------------------

def test_generated_sues_sit_on_the_annulus():
    sc = make_scenario(seed=7, sues_per_cell=50)
    for s, cell in enumerate(sc.small_cell_positions):
        for (x, y) in sc.sue_positions[s]:
            r = math.hypot(x - cell[0], y - cell[1])
            assert 3.0 - 1e-9 <= r <= 10.0 + 1e-9


def test_generated_mues_fill_the_hotspot():
    sc = generate_scenario(40, 3, 4.0, 5.0, rng=1, hotspot_center=(0.0, -100.0),
                           hotspot_halfwidth=10.0)
    xs = np.array([p[0] for p in sc.mue_positions])
    ys = np.array([p[1] for p in sc.mue_positions])
    assert np.all(np.abs(xs) <= 10.0) and np.all(np.abs(ys + 100.0) <= 10.0)


def test_epsilon_default_and_bound():
    sc = make_scenario()
    assert sc.epsilon == pytest.approx(0.9 / (1.0 + sc.S * sc.N))
    with pytest.raises(ScenarioError):
        make_scenario(epsilon=1.0 / (1.0 + 2 * 3))   # exactly at the cap
    with pytest.raises(ScenarioError):
        make_scenario(epsilon=0.0)
    make_scenario(epsilon=0.5 / (1.0 + 2 * 3))       # strictly inside: fine


def test_scenario_validation_errors():
    base = dict(mue_positions=((0.0, 0.0),), small_cell_positions=((1.0, 1.0),),
                sue_positions=(((2.0, 2.0),),), N=2, R_m=1.0, R_f=1.0)
    with pytest.raises(ScenarioError):
        Scenario(**{**base, "mue_positions": ()})
    with pytest.raises(ScenarioError):
        Scenario(**{**base, "sue_positions": ((), )})
    with pytest.raises(ScenarioError):
        Scenario(**{**base, "N": 0})
    with pytest.raises(ScenarioError):
        Scenario(**{**base, "P_s_max": 0.0})
    with pytest.raises(ScenarioError):
        Scenario(**{**base, "L_ow": -1.0})
    with pytest.raises(ScenarioError):
        # one cell, two SUE groups
        Scenario(**{**base, "sue_positions": (((2.0, 2.0),), ((3.0, 3.0),))})


def test_scenario_json_roundtrip(tmp_path):
    sc = make_scenario(seed=9, n_mues=4, n_channels=5, rate_mue=3.0, rate_sue=7.0,
                       L_ow=2.5, P_s_max=0.02)
    path = tmp_path / "scenario.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert back == sc
    # file is plain JSON with the documented keys
    raw = json.loads(path.read_text())
    for key in ("mue_positions", "small_cell_positions", "sue_positions", "N",
                "R_m", "R_f", "P_B_max", "P_s_max", "N_o", "L_ow", "I_max",
                "epsilon"):
        assert key in raw
