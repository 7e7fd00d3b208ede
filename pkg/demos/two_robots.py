"""Two robots on perpendicular lanes ask for entry at the same slot.

The first request is admitted with an empty graph.  The second is admitted
only once its full-throttle run, with the lowest priority, is brake safe
against the first robot's predicted trajectory; until then it brakes.  The
script prints the slot-by-slot story and the gap kept at the crossing.

    python3 demos/two_robots.py
"""

import numpy as np

from priocoord import scenario
from priocoord.control import control_law
from priocoord.controller import EntryRequest, IntersectionController
from priocoord.dynamics import RobotState, step
from priocoord.geometry import point_at
from priocoord.priority import WorldModel

cfg = scenario.load_preset("cross8")
kin = cfg.kin
world = WorldModel(cfg.paths, cfg.footprint)
ctl = IntersectionController(world)
lanes = {0: "E1", 1: "N1"}
for rid, lane in lanes.items():
    world.add_robot(rid, lane, kin)

start = world.paths["E1"].x_entry - 5.4
states = {0: RobotState(start, kin.v_max), 1: RobotState(start, kin.v_max)}
waiting = {0, 1}
closest = np.inf

for k in range(90):
    if waiting:
        reqs = [EntryRequest(r, 0, lanes[r]) for r in sorted(waiting)]
        acc, rej = ctl.process_requests(reqs, states, k)
        for r in acc:
            print(f"slot {k:3d}: robot {r} admitted at x={states[r].x:.2f}, edges now {sorted(ctl.graph.edges)}")
        waiting -= set(acc)
    law = control_law({r: states[r] for r in ctl.accepted}, ctl.graph, world) if ctl.accepted else {}
    u = {r: law.get(r, kin.u_min) for r in states}
    states = {r: step(s, u[r], kin) for r, s in states.items()}
    p0 = point_at(world.paths["E1"], states[0].x)
    p1 = point_at(world.paths["N1"], states[1].x)
    closest = min(closest, float(np.hypot(p0[0] - p1[0], p0[1] - p1[1])))
    if k % 10 == 9:
        print(
            f"slot {k:3d}: x0={states[0].x:6.2f} v0={states[0].v:.3f}   "
            f"x1={states[1].x:6.2f} v1={states[1].v:.3f}"
        )

print(f"closest centre distance: {closest:.3f} (diameter {cfg.diameter})")
