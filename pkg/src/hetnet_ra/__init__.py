"""Resource allocation for two-tier OFDMA networks.

Macro tier: sub-channel assignment and power allocation that maximizes the
interference the macrocell can tolerate from the small-cell tier, plus a
traditional minimum-power baseline. Small-cell tier: joint admission control,
sub-channel sharing, and power allocation, solved exactly at desk scale, via
a convex time-sharing relaxation, or distributedly through dual decomposition
with an ellipsoid master problem.
"""

from .model import (Scenario, ChannelGains, path_loss_db, realize_gains,
                    sinr_macro, sinr_sue, macro_interference_at_sues,
                    cross_tier_interference, generate_scenario,
                    load_scenario, save_scenario)
from .macro import (MacroAllocation, tolerable_interference, solve_proposed,
                    brute_force_max_interference, solve_traditional, bisect_ith)
from .smallcell import (SmallCellAllocation, FeasibilityReport, objective_value,
                        check_feasible, perspective_rate, solve_minlp_exact,
                        solve_convex_relaxation, grid_search_oracle)
from .distributed import (DualState, lagrangian_value, solve_subproblem,
                          dual_function, subgradient, ellipsoid_step,
                          recover_feasible, run_algorithm2)

__version__ = "0.1.0"
