"""Shared builders for the test suite.

Most tests need a small scenario, one channel realization, and a macro-tier
allocation; the helpers here keep those three steps out of every test body.
Hand-built gains bypass the random channel model so expected values stay
computable on paper.
"""

import numpy as np
import pytest

from hetnet_ra.model import Scenario, ChannelGains, generate_scenario, realize_gains
from hetnet_ra.macro import MacroAllocation, solve_proposed

TWO_CELLS = ((-10.0, -100.0), (10.0, -100.0))


def make_scenario(n_mues=3, n_channels=3, rate_mue=4.0, rate_sue=5.0, seed=0,
                  cells=TWO_CELLS, sues_per_cell=2, **overrides):
    return generate_scenario(n_mues, n_channels, rate_mue, rate_sue,
                             rng=np.random.default_rng(seed),
                             small_cell_positions=cells,
                             sues_per_cell=sues_per_cell, **overrides)


def make_instance(seed=0, **kwargs):
    """Scenario, one gain realization, and the proposed macro allocation."""
    scenario = make_scenario(seed=seed, **kwargs)
    gains = realize_gains(scenario, np.random.default_rng(seed + 1000))
    macro = solve_proposed(gains, scenario)
    return scenario, gains, macro


def manual_gains(macro_to_mue, macro_to_sue, small_to_sue, small_to_mue):
    return ChannelGains(macro_to_mue=np.asarray(macro_to_mue, dtype=float),
                        macro_to_sue=np.asarray(macro_to_sue, dtype=float),
                        small_to_sue=tuple(np.asarray(g, dtype=float)
                                           for g in small_to_sue),
                        small_to_mue=np.asarray(small_to_mue, dtype=float))


def make_macro(scenario, owners, tolerable_value, power_per_channel=None):
    """MacroAllocation with the given channel->MUE map and uniform caps.

    owners: length-N iterable, MUE index or -1 for free channels.
    tolerable_value: scalar or length-N array of caps on owned channels.
    """
    M, N = scenario.M, scenario.N
    owners = np.asarray(owners, dtype=int)
    caps = np.broadcast_to(np.asarray(tolerable_value, dtype=float), (N,))
    if power_per_channel is None:
        power_per_channel = scenario.P_B_max / max(1, (owners >= 0).sum())
    p = np.broadcast_to(np.asarray(power_per_channel, dtype=float), (N,))
    gamma = np.zeros((M, N), dtype=int)
    power = np.zeros((M, N))
    tol = np.full((M, N), scenario.I_max)
    for n, m in enumerate(owners):
        if m >= 0:
            gamma[m, n] = 1
            power[m, n] = p[n]
            tol[m, n] = caps[n]
    return MacroAllocation(gamma=gamma, power=power, tolerable=tol,
                           n_ac=int((owners >= 0).sum()), method="proposed",
                           i_max=scenario.I_max)


@pytest.fixture(scope="session")
def desk_instance():
    """One small instance shared by read-only tests: S=2, F=4, N=3."""
    return make_instance(seed=3, n_mues=3, n_channels=3, rate_sue=5.0)
