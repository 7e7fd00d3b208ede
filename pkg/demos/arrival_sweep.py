"""Throughput and queue lengths as the arrival rate grows.

Each lane crosses four perpendicular lanes.  A crossing point can pass a
robot about every 2.8 slots, so past roughly 0.3 arrivals per lane and slot
queues must grow.  The sweep shows the controller's share of that limit.

    python3 demos/arrival_sweep.py [horizon]
"""

import sys

import numpy as np

from priocoord import scenario
from priocoord.simulator import run

horizon = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
print(f"{'rate':>5} {'arrive/slot':>11} {'exit/slot':>9} {'lane queue mean, last third':>27} {'lane queue max':>14}")
for rate in (0.02, 0.04, 0.08, 0.12, 0.16):
    cfg = scenario.load_preset("cross8").replace(arrival_rate=rate, horizon=horizon, seed=1)
    res = run(cfg, record=False, check=False)
    tail = res.queue[-horizon // 3:]
    print(
        f"{rate:5.2f} {8 * rate:11.2f} {res.metrics['throughput']:9.3f} "
        f"{float(np.mean(tail)):27.1f} {int(res.queue.max()):14d}"
    )
