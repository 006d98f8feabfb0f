"""Wireless federated-learning scheduling that balances group label divergence
against sampling variance under an uplink bandwidth budget."""

from .channel import INFEASIBLE, ChannelParams, LinkState, lambert_w_m1, min_bandwidth
from .objective import ObjectiveParams, group_distribution, variance_term, wemd
from .schedulers import (
    ProblemInstance,
    Schedule,
    SolveReport,
    best_channel,
    best_norm,
    brute_force,
    cd_schedule,
    fscd_schedule,
    greedy_schedule,
    objective,
    power_of_choice,
    reduce_partition,
)

__version__ = "0.1.0"
