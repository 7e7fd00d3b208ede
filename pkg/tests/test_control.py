import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from priocoord.control import closed_loop_flow, control_law
from priocoord.dynamics import ContractError, ControlSequence, RobotState, flow
from priocoord.geometry import Footprint, PathSpec, in_shifted_obstacle
from priocoord.priority import PriorityGraph, WorldModel, config_free, is_brake_safe

from oracles import centre


def test_law_examples(perp_world, kin):
    perp_world.add_robot(1, "A", kin)  # the lower-priority robot
    perp_world.add_robot(2, "B", kin)
    g = PriorityGraph(frozenset({1, 2}), frozenset({(2, 1)}))
    # worst case from x=3: one throttle slot at full speed, then 5 of braking, reaching 8.5
    reach = flow(RobotState(3.0, 0.5), ControlSequence.impulse(kin), kin).state_at_slot(40).x
    assert reach == pytest.approx(8.5, abs=1e-12)
    assert control_law({1: RobotState(3.0, 0.5), 2: RobotState(10.0, 0.0)}, g, perp_world)[1] == kin.u_max
    # from x=4 the reach is 9.5 and (9.3, 10.2) witnesses the shifted section
    assert in_shifted_obstacle(perp_world.section(2, 1), 0, 1, 10.0, 9.5)
    p_i, p_j = 9.3, 10.2
    assert p_i <= 9.5 and p_j >= 10.0
    assert (p_i - 10.0) ** 2 + (p_j - 10.0) ** 2 == pytest.approx(0.53)
    assert control_law({1: RobotState(4.0, 0.5), 2: RobotState(10.0, 0.0)}, g, perp_world)[1] == kin.u_min


def test_law_without_in_edges_is_full_throttle(perp_world, kin):
    perp_world.add_robot(1, "A", kin)
    perp_world.add_robot(2, "B", kin)
    g = PriorityGraph(frozenset({1, 2}), frozenset({(2, 1)}))
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = {1: RobotState(*rng.uniform([0, 0], [20, 0.5])), 2: RobotState(*rng.uniform([0, 0], [20, 0.5]))}
        assert control_law(s, g, perp_world)[2] == kin.u_max


def test_law_requires_graph_cover(perp_world, kin):
    perp_world.add_robot(1, "A", kin)
    with pytest.raises(ContractError):
        control_law({1: RobotState(0.0, 0.0)}, PriorityGraph(), perp_world)


def test_override_bounds_are_checked(perp_world, kin):
    perp_world.add_robot(1, "A", kin)
    g = PriorityGraph(frozenset({1}))
    with pytest.raises(ContractError):
        closed_loop_flow({1: RobotState(0.0, 0.0)}, g, perp_world, 3, override={0: {1: -1.0}})


def test_single_robot_runs_full_throttle_to_exit(perp_world, kin):
    perp_world.add_robot(1, "A", kin)
    f = closed_loop_flow({1: RobotState(2.0, 0.0)}, PriorityGraph(frozenset({1})), perp_world, 60)
    assert np.all(f.u == kin.u_max)


def test_simultaneous_brake_then_resume(perp_world, kin):
    for rid, path in ((1, "A"), (2, "B"), (3, "A")):
        perp_world.add_robot(rid, path, kin)
    g = PriorityGraph(frozenset({1, 2, 3}), frozenset({(1, 2), (1, 3), (2, 3)}))
    s = {1: RobotState(4.0, 0.5), 2: RobotState(2.0, 0.5), 3: RobotState(0.0, 0.4)}
    assert is_brake_safe(s, g, perp_world)
    override = {k: {1: kin.u_min, 2: kin.u_min, 3: kin.u_min} for k in range(5, 50)}
    f = closed_loop_flow(s, g, perp_world, 120, override=override)
    assert np.all(f.v[26:50] == 0.0)  # everyone stopped during the override
    assert f.x[-1, 0] > 20.0  # and the leader moved on afterwards
    for k in range(121):
        assert is_brake_safe(f.state(k), g, perp_world)


# -- invariance under the law and under brake overrides ----------------------------------

_PATHS = [
    PathSpec("A", (-10.0, 0.0), (1.0, 0.0), 30.0, 2.0, 20.0),
    PathSpec("B", (0.0, -10.0), (0.0, 1.0), 30.0, 2.0, 20.0),
    PathSpec("C", (-10.0 * 0.8, -10.0 * 0.6 + 1.5), (0.8, 0.6), 30.0, 2.0, 20.0),
]


def _world(kin, paths_of):
    w = WorldModel(_PATHS, Footprint(1.0))
    for rid, p in paths_of.items():
        w.add_robot(rid, p, kin)
    return w


def _pairwise_min_distance(f, world, ids, nsub=16):
    best = np.inf
    geo = {r: world.paths[world.robot_path[r]] for r in ids}
    horizon = f.u.shape[0]
    ts = np.arange(horizon * nsub + 1) / nsub
    pos = {r: [] for r in ids}
    for t in ts:
        st_ = f(t)
        for r in ids:
            pos[r].append(st_[r].x)
    for i, j in itertools.combinations(ids, 2):
        pi = centre(geo[i].origin, geo[i].direction, pos[i])
        pj = centre(geo[j].origin, geo[j].direction, pos[j])
        best = min(best, float(np.min(np.linalg.norm(pi - pj, axis=1))))
    return best


robots_st = st.lists(
    st.tuples(st.sampled_from("ABC"), st.floats(0.0, 9.0), st.floats(0.0, 0.5)), min_size=2, max_size=4
)


def _setup(kin, robots, order):
    ids = list(range(len(robots)))
    world = _world(kin, {i: robots[i][0] for i in ids})
    rank = {r: k for k, r in enumerate(order)}
    edges = {
        (i, j) if rank[i] < rank[j] else (j, i)
        for i, j in itertools.combinations(ids, 2)
        if world.conflicts(i, j)
    }
    g = PriorityGraph(frozenset(ids), frozenset(edges))
    s = {i: RobotState(robots[i][1], robots[i][2]) for i in ids}
    return ids, world, g, s


def _same_path_apart(robots):
    # distinct robots on one path must not start overlapping
    for (pa, xa, _), (pb, xb, _) in itertools.combinations(robots, 2):
        if pa == pb and abs(xa - xb) < 1.0:
            return False
    return True


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(robots=robots_st, data=st.data())
def test_law_keeps_brake_safe_states_brake_safe(kin, robots, data):
    assume(_same_path_apart(robots))
    order = data.draw(st.permutations(range(len(robots))))
    ids, world, g, s = _setup(kin, robots, order)
    assume(is_brake_safe(s, g, world))
    f = closed_loop_flow(s, g, world, 70)
    for k in range(71):
        assert is_brake_safe(f.state(k), g, world), k
    for k in range(70 * 4):
        cfg = {r: st_.x for r, st_ in f(k / 4).items()}
        assert config_free(cfg, g, world)
    assert _pairwise_min_distance(f, world, ids) >= 1.0 - 1e-6


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(robots=robots_st, data=st.data())
def test_brake_overrides_keep_brake_safe_states_brake_safe(kin, robots, data):
    assume(_same_path_apart(robots))
    order = data.draw(st.permutations(range(len(robots))))
    ids, world, g, s = _setup(kin, robots, order)
    assume(is_brake_safe(s, g, world))
    horizon = 70
    cells = data.draw(
        st.lists(st.tuples(st.integers(0, horizon - 1), st.sampled_from(ids), st.floats(kin.u_min, kin.u_max)), max_size=80)
    )
    override: dict = {}
    for k, r, cap in cells:
        override.setdefault(k, {})[r] = cap
    f = closed_loop_flow(s, g, world, horizon, override=override)
    for k in range(horizon + 1):
        assert is_brake_safe(f.state(k), g, world), k
    assert _pairwise_min_distance(f, world, ids) >= 1.0 - 1e-6
