"""Monte-Carlo experiment harness.

An experiment sweeps one scenario knob (number of MUEs, either tier's rate
target, the small-cell power budget, or the wall loss), redraws UE positions
and channel gains for every realization, runs a macro-tier solver followed by
a small-cell solver, and aggregates admission and channel-usage percentages.
Seeds are derived deterministically from (base seed, realization index), so a
config reproduces its numbers exactly and sweep points share their draws.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .model import Scenario, generate_scenario, realize_gains
from .macro import (solve_proposed, bisect_ith, MacroInfeasibleError,
                    ChannelInfeasibleError, BracketError)
from .smallcell import (SmallCellAllocation, solve_convex_relaxation,
                        solve_minlp_exact, objective_value,
                        SmallCellSolverError)
from .distributed import run_algorithm2

__all__ = [
    "metric_admitted",
    "metric_channel_usage",
    "ExperimentConfig",
    "ExperimentResult",
    "run_experiment",
    "write_csv",
    "load_experiment_config",
    "PRESETS",
    "preset_config",
]

# small-cell positions for the two reference layouts
TWO_CELLS = ((-10.0, -100.0), (10.0, -100.0))
FIVE_CELLS = ((-20.0, -100.0), (-20.0, -140.0), (20.0, -140.0),
              (20.0, -100.0), (0.0, -120.0))


def metric_admitted(alloc: SmallCellAllocation, scenario: Scenario,
                    rounded: bool = False) -> float:
    """Admitted SUEs as a percentage of all SUEs.

    In relaxed mode admissions are fractional; rounded=True counts only
    admissions that are 1 up to solver dust (>= 0.999), which is the
    integer-valued view of the same allocation.
    """
    if rounded:
        total = sum(float((y >= 0.999).sum()) for y in alloc.admit)
    else:
        total = alloc.total_admitted()
    return 100.0 * total / scenario.F


def metric_channel_usage(alloc: SmallCellAllocation, scenario: Scenario) -> float:
    """Share-weighted sub-channel usage as a percentage of S*N."""
    return 100.0 * alloc.total_share() / (scenario.S * scenario.N)


@dataclass
class ExperimentConfig:
    """One sweep. ``scenario`` holds generate_scenario keyword arguments
    (everything except the swept one); ``sweep`` names the knob."""

    name: str
    sweep: str                 # n_mues | rate_mue | rate_sue | p_small_max | wall_loss_db
    values: tuple
    scenario: dict
    macro_method: str = "proposed"       # proposed | traditional
    solver: str = "convex"               # exact | convex | distributed
    realizations: int = 50
    base_seed: int = 1
    gap_tol: float = 1e-2
    l_max: int = 200

    _SWEEPS = ("n_mues", "rate_mue", "rate_sue", "p_small_max", "wall_loss_db")

    def __post_init__(self):
        if self.sweep not in self._SWEEPS:
            raise ValueError(f"sweep must be one of {self._SWEEPS}, got {self.sweep!r}")
        if self.macro_method not in ("proposed", "traditional"):
            raise ValueError(f"unknown macro method {self.macro_method!r}")
        if self.solver not in ("exact", "convex", "distributed"):
            raise ValueError(f"unknown small-cell solver {self.solver!r}")
        self.values = tuple(self.values)

    @property
    def solver_label(self) -> str:
        return f"{self.macro_method}+{self.solver}"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summary: list = field(default_factory=list)  # (value, solver, metric, mean, stderr, n)
    raw: list = field(default_factory=list)      # (value, solver, realization, metric, x)
    failures: list = field(default_factory=list) # (value, realization, message)


def _scenario_for(config: ExperimentConfig, value, rng) -> Scenario:
    kwargs = dict(config.scenario)
    if config.sweep == "n_mues":
        kwargs["n_mues"] = int(value)
    elif config.sweep == "rate_mue":
        kwargs["rate_mue"] = float(value)
    elif config.sweep == "rate_sue":
        kwargs["rate_sue"] = float(value)
    elif config.sweep == "p_small_max":
        kwargs["P_s_max"] = float(value)
    elif config.sweep == "wall_loss_db":
        kwargs["L_ow"] = float(value)
    return generate_scenario(rng=rng, **kwargs)


def _run_one(config: ExperimentConfig, scenario: Scenario, rng):
    gains = realize_gains(scenario, rng)
    if config.macro_method == "proposed":
        macro = solve_proposed(gains, scenario)
    else:
        macro, _ = bisect_ith(gains, scenario)
    if config.solver == "exact":
        alloc = solve_minlp_exact(macro, gains, scenario)
    elif config.solver == "convex":
        alloc, _ = solve_convex_relaxation(macro, gains, scenario)
    else:
        alloc = run_algorithm2(macro, gains, scenario, gap_tol=config.gap_tol,
                               l_max=config.l_max).alloc
    return {
        "admitted_pct": metric_admitted(alloc, scenario),
        "admitted_pct_rounded": metric_admitted(alloc, scenario, rounded=True),
        "channel_usage_pct": metric_channel_usage(alloc, scenario),
        "objective": objective_value(alloc, scenario.epsilon),
    }


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run the full sweep; failed realizations are recorded and excluded."""
    result = ExperimentResult(config=config)
    label = config.solver_label
    metrics_seen = ("admitted_pct", "admitted_pct_rounded",
                    "channel_usage_pct", "objective")
    for value in config.values:
        samples = {m: [] for m in metrics_seen}
        for r in range(config.realizations):
            # Common random numbers across sweep values: realization r reuses
            # one seed at every point, so monotone trends hold per draw
            # instead of only in expectation.
            rng = np.random.default_rng(
                np.random.SeedSequence([config.base_seed, r]))
            try:
                scenario = _scenario_for(config, value, rng)
                metrics = _run_one(config, scenario, rng)
            except (MacroInfeasibleError, ChannelInfeasibleError, BracketError,
                    SmallCellSolverError) as err:
                result.failures.append((value, r, f"{type(err).__name__}: {err}"))
                result.raw.append((value, label, r, "failed", 1.0))
                continue
            for m, x in metrics.items():
                samples[m].append(x)
                result.raw.append((value, label, r, m, x))
        for m in metrics_seen:
            xs = np.asarray(samples[m])
            n = xs.size
            mean = float(xs.mean()) if n else math.nan
            stderr = float(xs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            result.summary.append((value, label, m, mean, stderr, n))
    return result


def write_csv(result: ExperimentResult, path) -> Path:
    """Write the summary CSV; raw per-realization rows go next to it with a
    ``_raw`` suffix. Returns the summary path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep_value", "solver", "metric", "mean", "stderr",
                    "n_realizations"])
        for value, label, metric, mean, stderr, n in result.summary:
            w.writerow([value, label, metric, f"{mean:.12e}", f"{stderr:.12e}", n])
    raw_path = path.with_name(path.stem + "_raw" + path.suffix)
    with open(raw_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sweep_value", "solver", "realization", "metric", "value"])
        for value, label, r, metric, x in result.raw:
            w.writerow([value, label, r, metric, f"{x:.12e}"])
    return path


def load_experiment_config(path) -> ExperimentConfig:
    """Load an ExperimentConfig from a JSON file (schema in the README)."""
    with open(path) as fh:
        d = json.load(fh)
    return ExperimentConfig(**d)


def save_experiment_config(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- reference sweeps --------------------------------------------------------

def preset_config(name: str, **overrides) -> ExperimentConfig:
    """Build one of the named reference sweeps; overrides replace any
    ExperimentConfig field (e.g. realizations=10, solver='distributed')."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    cfg = {**PRESETS[name]}
    cfg.update(overrides)
    return ExperimentConfig(**cfg)


PRESETS = {
    # dense macro tier, high SUE demand: admission vs number of MUEs
    "admission_vs_mues": dict(
        name="admission_vs_mues",
        sweep="n_mues", values=(2, 4, 6, 8),
        scenario=dict(n_subchannels=10, rate_mue=5.0, rate_sue=50.0,
                      small_cell_positions=TWO_CELLS, sues_per_cell=2,
                      P_s_max=0.03, L_ow=1.0),
    ),
    # every sub-channel macro-owned: admission vs MUE rate target
    "admission_vs_mue_rate": dict(
        name="admission_vs_mue_rate",
        sweep="rate_mue", values=(2.0, 4.0, 6.0, 8.0),
        scenario=dict(n_mues=3, n_subchannels=3, rate_sue=5.0,
                      small_cell_positions=TWO_CELLS, sues_per_cell=2,
                      P_s_max=0.03, L_ow=1.0),
    ),
    # five-cell cluster: admission vs SUE rate target
    "admission_vs_sue_rate": dict(
        name="admission_vs_sue_rate",
        sweep="rate_sue", values=(5.0, 10.0, 20.0, 30.0),
        scenario=dict(n_mues=5, n_subchannels=5, rate_mue=4.0,
                      small_cell_positions=FIVE_CELLS, sues_per_cell=2,
                      P_s_max=0.03, L_ow=1.0),
    ),
    # five-cell cluster: admission vs small-cell power budget
    "admission_vs_small_power": dict(
        name="admission_vs_small_power",
        sweep="p_small_max", values=(0.005, 0.01, 0.02, 0.04),
        scenario=dict(n_mues=5, n_subchannels=5, rate_mue=4.0, rate_sue=10.0,
                      small_cell_positions=FIVE_CELLS, sues_per_cell=2,
                      L_ow=1.0),
    ),
}
