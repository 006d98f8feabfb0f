"""
How much bandwidth does a device need?
======================================

A device must push its model upstream before the deadline. Walking it away
from the base station shows the minimum bandwidth rising until the link
can no longer make it at any bandwidth.
"""

import math

import numpy as np

from fedcgd import channel as ch

params = ch.ChannelParams()
print(f"model {params.model_bits:.2e} bits, deadline {params.deadline_s} s, "
      f"budget {params.total_bandwidth_hz / 1e6:.0f} MHz\n")

# No shadowing here, so only distance and LOS state matter.
print(f"{'distance':>9} {'LOS':>4} {'Gamma':>8} {'B* (MHz)':>10}")
for d in (20, 50, 100, 150, 200, 250):
    for los in (True, False):
        link = ch.link_state(d, los, 0.0, params)
        gamma = ch.feasibility_ratio(link.avg_gain, params)
        bw = "infeasible" if not link.feasible else f"{link.min_bandwidth_hz / 1e6:10.3f}"
        print(f"{d:>8}m {'yes' if los else 'no':>4} {gamma:8.3f} {bw:>10}")

# The closed form sits exactly on the deadline.
link = ch.link_state(120, False, 0.0, params)
rate = ch.transmission_rate(link.min_bandwidth_hz, link.avg_gain, params)
print(f"\nat 120 m NLOS the upload takes {ch.upload_latency(params.model_bits, rate):.12f} s")

# Shadowing spreads the requirement out round to round.
rng = np.random.default_rng(0)
shadow = ch.draw_shadow(np.zeros(2000, dtype=bool), params, rng)
bws = np.array([ch.link_state(120, False, s, params).min_bandwidth_hz for s in shadow])
ok = np.isfinite(bws)
print(f"120 m NLOS under shadowing: {ok.mean():.0%} of rounds feasible, "
      f"median B* {np.median(bws[ok]) / 1e6:.2f} MHz")
print(f"W_-1(-0.1) = {ch.lambert_w_m1(-0.1):.12f}, check: {ch.lambert_w_m1(-0.1) * math.exp(ch.lambert_w_m1(-0.1)):.12f}")
