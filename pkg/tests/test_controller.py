import numpy as np
import pytest

from priocoord.control import control_law
from priocoord.controller import (
    EntryRequest,
    IntersectionController,
    PredictedTrajectory,
    crossing_slots,
    wants_entry,
)
from priocoord.dynamics import ContractError, RobotState, step, x_stop
from priocoord.priority import WorldModel


@pytest.fixture
def ctl(cross8):
    return IntersectionController(WorldModel(cross8.paths, cross8.footprint))


def _path(ctl, pid):
    return ctl.world.paths[pid]


def test_wants_entry_examples(cross8):
    kin = cross8.kin
    p = cross8.paths[0]
    assert not wants_entry(RobotState(p.x_entry - 10.0, 0.0), p, kin)
    assert wants_entry(RobotState(p.x_entry - 5.4, 0.5), p, kin)
    # x_stop lands exactly on the entry point: strict inequality says no
    at = p.x_entry - 5.5
    assert x_stop(RobotState(at, 0.5), kin) == p.x_entry
    assert not wants_entry(RobotState(at, 0.5), p, kin)


def test_crossing_slots_from_rest(cross8):
    p = cross8.paths[0]
    n = crossing_slots(p, cross8.kin)
    # 20 slots to reach full speed (5 units), then half a unit per slot
    expected = 20 + int(np.floor((p.x_exit - 5.0) / 0.5)) + 1
    assert n == expected


def test_empty_intersection_accepts(ctl, cross8):
    ctl.world.add_robot(0, "E1", cross8.kin)
    s = {0: RobotState(0.6, 0.5)}
    acc, rej = ctl.process_requests([EntryRequest(0, 0, "E1")], s, 0)
    assert acc == [0] and rej == []
    assert ctl.graph.vertices == {0} and ctl.graph.edges == frozenset()
    with pytest.raises(ContractError):
        ctl.process_requests([EntryRequest(0, 1, "E1")], s, 1)


def _drive(ctl, states, kin, slot, waiting):
    """One slot: accepted robots follow the law, waiting robots brake."""
    u = control_law({r: states[r] for r in ctl.accepted}, ctl.graph, ctl.world) if ctl.accepted else {}
    out = {}
    for r, s in states.items():
        out[r] = step(s, u.get(r, kin.u_min if r in waiting else kin.u_max), kin)
    return out


def test_symmetric_perpendicular_requesters(ctl, cross8):
    kin = cross8.kin
    ctl.world.add_robot(0, "E1", kin)
    ctl.world.add_robot(1, "N1", kin)
    x0 = _path(ctl, "E1").x_entry - 5.4
    states = {0: RobotState(x0, 0.5), 1: RobotState(x0, 0.5)}
    reqs = [EntryRequest(0, 0, "E1"), EntryRequest(1, 0, "N1")]
    acc, rej = ctl.process_requests(reqs, states, 0)
    assert acc[0] == 0
    slot = 0
    while 1 not in ctl.accepted:
        assert rej == [1]
        states = _drive(ctl, states, kin, slot, {1})
        slot += 1
        assert slot < 200
        acc, rej = ctl.process_requests([EntryRequest(1, 0, "N1")], states, slot)
    assert ctl.graph.edges == {(0, 1)}
    assert ctl.acceptance_is_sound(states)


def test_follower_waits_behind_stopped_predecessor(ctl, cross8):
    kin = cross8.kin
    ctl.world.add_robot(0, "E1", kin)
    ctl.world.add_robot(1, "E1", kin)
    p = _path(ctl, "E1")
    states = {0: RobotState(p.x_entry + 0.3, 0.0)}
    ctl.process_requests([EntryRequest(0, 0, "E1")], states, 0)
    ctl.update_predictions(states, 0)
    states[1] = RobotState(p.x_entry - 1.2, 0.5)
    acc, rej = ctl.process_requests([EntryRequest(1, 0, "E1")], states, 0)
    assert rej == [1]
    slot = 0
    while 1 not in ctl.accepted:
        states = _drive(ctl, states, kin, slot, {1})
        slot += 1
        ctl.update_predictions({0: states[0]}, slot)
        acc, rej = ctl.process_requests([EntryRequest(1, 0, "E1")], states, slot)
        assert slot < 200
    assert ctl.graph.edges == {(0, 1)}
    # admission only once the predecessor is well ahead
    assert states[0].x - states[1].x > 1.0


def test_predictions(ctl, cross8):
    kin = cross8.kin
    assert ctl.update_predictions({}, 0).robots() == []
    for rid, pid in ((0, "E1"), (1, "W1")):
        ctl.world.add_robot(rid, pid, kin)
    states = {0: RobotState(0.6, 0.5), 1: RobotState(0.1, 0.5)}
    ctl.process_requests([EntryRequest(0, 0, "E1"), EntryRequest(1, 0, "W1")], states, 0)
    assert ctl.accepted == {0, 1}
    pred = ctl.update_predictions(states, 0)
    # unperturbed: constant full-throttle runs until the exit
    for rid in (0, 1):
        xs, vs, ok = pred.window(rid, 0, 80)
        n = int(ok.sum())
        assert n > 0
        s = states[rid]
        for k in range(n):
            assert xs[k] == pytest.approx(s.x, abs=1e-12)
            s = step(s, kin.u_max, kin)
        assert xs[n - 1] <= _path(ctl, ctl.world.robot_path[rid]).x_exit < s.x + 1e-12
    # a forced brake makes the refreshed forecast diverge from the stale one
    stale = pred
    braked = {r: step(states[r], kin.u_min, kin) for r in states}
    fresh = ctl.update_predictions(braked, 1)
    xs_old, _, _ = stale.window(0, 1, 5)
    xs_new, _, _ = fresh.window(0, 1, 5)
    assert xs_new[0] < xs_old[0]


def test_prune_exited(ctl, cross8):
    kin = cross8.kin
    for rid in (0, 1):
        ctl.world.add_robot(rid, "E1" if rid == 0 else "W1", kin)
    states = {0: RobotState(1.0, 0.5), 1: RobotState(0.5, 0.5)}
    ctl.process_requests([EntryRequest(0, 0, "E1"), EntryRequest(1, 0, "W1")], states, 0)
    assert ctl.accepted == {0, 1}
    assert ctl.prune_exited(states) == []
    exit_x = _path(ctl, "E1").x_exit
    states[0] = RobotState(exit_x + 0.1, 0.5)
    assert ctl.prune_exited(states) == [0]
    assert ctl.graph.vertices == {1} and ctl.graph.edges == frozenset()
    states[1] = RobotState(exit_x + 0.1, 0.5)
    assert ctl.prune_exited(states) == [1]
    assert ctl.graph.vertices == frozenset()


def test_literal_admission_is_available(cross8):
    c = IntersectionController(WorldModel(cross8.paths, cross8.footprint), require_full_throttle=False)
    c.world.add_robot(0, "E1", cross8.kin)
    acc, _ = c.process_requests([EntryRequest(0, 0, "E1")], {0: RobotState(0.6, 0.5)}, 0)
    assert acc == [0]


def test_packed_predictions_line_up_with_windows():
    pred = PredictedTrajectory()
    pred.set(3, 5, [1.0, 2.0, 3.0], [0.1, 0.2, 0.3])
    pred.set(7, 2, [4.0, 5.0], [0.4, 0.5])
    xs, vs, off, base, length = pred.packed([3, 7, 9])
    assert list(length) == [3, 2, 0] and list(base) == [5, 2, 0]
    assert list(xs[off[1]:off[1] + length[1]]) == [4.0, 5.0]
    wx, _, ok = pred.window(3, 4, 5)
    assert list(ok) == [False, True, True, True, False]
    assert list(wx[1:4]) == [1.0, 2.0, 3.0]
