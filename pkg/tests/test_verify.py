import copy

import pytest

from priocoord.monitors import MONITORS, TraceError, verify
from priocoord.priority import WorldModel
from priocoord.simulator import run


@pytest.fixture(scope="module")
def clean(cross8):
    cfg = cross8.replace(seed=21, horizon=500, p=0.05)
    return cfg, run(cfg).trace


def _robot_records(trace):
    return [r for r in trace if r["kind"] == "robot"]


def _slot_record(trace, k):
    return next(r for r in trace if r["kind"] == "slot" and r["slot"] == k)


def test_clean_run_passes_every_monitor(clean):
    cfg, trace = clean
    rep = verify(trace, cfg)
    assert rep.ok, rep.lines()
    assert set(rep.first) == set(MONITORS)
    assert rep.slots == cfg.horizon
    assert all(line.split()[1] == "PASS" for line in rep.lines())


def test_teleport_into_winners_region_fails_priority(clean):
    cfg, trace = clean
    world = WorldModel(cfg.paths, cfg.footprint)
    recs = {(r["slot"], r["robot"]): r for r in _robot_records(trace)}
    target = None
    for rec in trace:
        if rec["kind"] != "slot":
            continue
        for w, l in rec["edges"]:
            rw, rl = recs[rec["slot"], w], recs[rec["slot"], l]
            sec = world.path_section(rw["path"], rl["path"])
            if sec.kind == "crossing" and rw["x"] < sec.c_i - 1.0 and rl["x"] < sec.c_j - 3.0:
                target = (rec["slot"], l, sec.c_j)
                break
        if target:
            break
    assert target is not None
    k, loser, c_l = target
    bad = copy.deepcopy(trace)
    for r in _robot_records(bad):
        if r["slot"] == k and r["robot"] == loser:
            r["x"] = c_l
    rep = verify(bad, cfg)
    first = rep.first["priority"]
    assert first is not None and first.slot == k and loser in first.robots
    # the jump itself is also visible to the replay of the dynamics
    assert rep.first["dynamics"].slot == k


def test_control_above_the_law_fails_law_monitor(clean):
    cfg, trace = clean
    u_min, u_max = cfg.kin.u_min, cfg.kin.u_max
    rec = next(
        r
        for r in _robot_records(trace)
        if r["status"] == "accepted" and r["regime"] == "controlled" and r["u"] == u_min
    )
    bad = copy.deepcopy(trace)
    for r in _robot_records(bad):
        if r["slot"] == rec["slot"] and r["robot"] == rec["robot"]:
            r["u"] = u_max
    rep = verify(bad, cfg)
    assert rep.first["law"] is not None
    assert rep.first["law"].slot == rec["slot"] and rep.first["law"].robots == (rec["robot"],)


def test_tampered_position_is_pinpointed(clean):
    cfg, trace = clean
    bad = copy.deepcopy(trace)
    rec = _robot_records(bad)[400]
    rec["x"] += 0.3
    rep = verify(bad, cfg)
    d = rep.first["dynamics"]
    assert (d.slot, d.robots) == (rec["slot"], (rec["robot"],))


def test_two_way_edge_fails_graph_monitor(clean):
    cfg, trace = clean
    k = next(r["slot"] for r in trace if r["kind"] == "slot" and r["edges"])
    bad = copy.deepcopy(trace)
    s = _slot_record(bad, k)
    w, l = s["edges"][0]
    s["edges"] = s["edges"] + [[l, w]]
    rep = verify(bad, cfg)
    assert rep.first["graph"] is not None and rep.first["graph"].slot == k


def _triangle(edges):
    es = {tuple(e) for e in edges}
    for a, b in es:
        for c, d in es:
            if c == b and (a, d) in es:
                return a, b, d
    return None


def test_cycle_fails_graph_monitor(clean):
    cfg, trace = clean
    k, tri = next(
        (r["slot"], _triangle(r["edges"])) for r in trace if r["kind"] == "slot" and _triangle(r["edges"])
    )
    a, b, c = tri  # a -> b -> c and a -> c; flipping a -> c closes a cycle
    bad = copy.deepcopy(trace)
    s = _slot_record(bad, k)
    s["edges"] = [[c, a] if tuple(e) == (a, c) else e for e in s["edges"]]
    rep = verify(bad, cfg)
    g = rep.first["graph"]
    assert g is not None and g.slot == k and "cycle" in g.detail


def test_vanishing_robot_fails_dynamics(clean):
    cfg, trace = clean
    victim = _robot_records(trace)[300]
    bad = [r for r in trace if not (r["kind"] == "robot" and r["robot"] == victim["robot"] and r["slot"] > victim["slot"])]
    rep = verify(bad, cfg)
    assert rep.first["dynamics"] is not None and victim["robot"] in rep.first["dynamics"].robots


def test_schema_and_config_mismatches_raise(clean):
    cfg, trace = clean
    with pytest.raises(TraceError):
        verify([], cfg)
    with pytest.raises(TraceError):
        verify(trace, cfg.replace(horizon=cfg.horizon + 1))
    bad = copy.deepcopy(trace)
    bad[0]["schema_version"] = 99
    with pytest.raises(TraceError):
        verify(bad, cfg)
    gap = [r for r in trace if r.get("slot") != 10]
    with pytest.raises(TraceError):
        verify(gap, cfg)


def test_drain_liveness_is_checked(cross8):
    cfg = cross8.replace(seed=2, horizon=2000, p=0.05, drain_after=200)
    trace = run(cfg).trace
    assert verify(trace, cfg).ok
    # cut the trace before the area empties: robots remain at the end
    last = max(r["slot"] for r in trace if r["kind"] == "slot")
    cut = [r for r in trace if r.get("slot", -1) < last - 30]
    rep = verify(cut, cfg)
    assert rep.first["liveness"] is not None
