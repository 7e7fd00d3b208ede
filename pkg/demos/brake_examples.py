"""Forced braking in the middle of a busy run, then a replay of the trace.

Two scripted cases on the eight-lane crossing, both with brakes forced over
slots 100 to 400: first for the robot deepest in the area only, then for
every robot at once.  Each run is replayed through all monitors.

    python3 demos/brake_examples.py
"""

from priocoord import scenario
from priocoord.monitors import verify
from priocoord.simulator import run

base = scenario.load_preset("cross8").to_dict()
for name, robots in (("one robot", "first-in-area"), ("all robots", "all")):
    doc = dict(base, seed=5, horizon=800, overrides=[{"slots": [100, 400], "robots": robots, "control": "brake"}])
    cfg = scenario.from_dict(doc)
    res = run(cfg)
    rep = verify(res.trace, cfg)
    m = res.metrics
    print(f"== brake {name} over slots 100-400")
    print(f"   spawned {m['spawned']}, exited {m['exited']}, rejections {m['rejections']}")
    print(f"   travel time p95 {m['travel_time']['p95']:.0f} slots, max {m['travel_time']['max']:.0f}")
    for line in rep.lines():
        print("  ", line)
