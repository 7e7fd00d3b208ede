"""Safety and liveness monitors, shared by the simulator and trace replay.

A :class:`SlotChecker` inspects one slot given the robots' states at the
slot boundary, the controls applied during the slot and the priority
edges in force.  The simulator runs it online; :func:`verify` replays a
recorded trace through it and adds the checks that only make sense on a
trace (dynamics consistency and drain liveness).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .controller import crossing_slots
from .dynamics import ContractError
from .geometry import EPS_GEOM
from .priority import EPS_LAW, PriorityGraph, WorldModel, edge_table
from .scenario import ScenarioConfig

#: Collision tolerance on the centre distance.
COLLISION_TOL = 1e-6
#: Tolerance of the dynamics replay check.
DYNAMICS_TOL = 1e-9
#: Drain deadline factor: slots allowed per live robot, in units of the unobstructed crossing time.
DRAIN_FACTOR = 20

MONITORS = ("collision", "priority", "brake_safety", "law", "graph", "dynamics", "liveness")


class TraceError(ValueError):
    """The trace is malformed or does not belong to the given scenario."""


@dataclass(frozen=True)
class Violation:
    monitor: str
    slot: int
    robots: tuple
    detail: str

    def to_dict(self) -> dict:
        return {"monitor": self.monitor, "slot": self.slot, "robots": list(self.robots), "detail": self.detail}

    def __str__(self) -> str:
        who = ", ".join(str(r) for r in self.robots)
        return f"{self.monitor} violation at slot {self.slot} (robots {who}): {self.detail}"


@dataclass
class VerifyReport:
    first: dict = field(default_factory=lambda: {m: None for m in MONITORS})
    slots: int = 0
    robots: int = 0

    @property
    def ok(self) -> bool:
        return all(v is None for v in self.first.values())

    def record(self, v: Violation) -> None:
        if self.first.get(v.monitor) is None:
            self.first[v.monitor] = v

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "slots": self.slots,
            "robots": self.robots,
            "monitors": {
                m: {"pass": v is None, "first": None if v is None else v.to_dict()} for m, v in self.first.items()
            },
        }

    def lines(self) -> list[str]:
        out = []
        for m, v in self.first.items():
            out.append(f"{m:13s} {'PASS' if v is None else 'FAIL'}" + ("" if v is None else f"  {v}"))
        return out


class _GraphArrays:
    """Graph vertices and edge tables in a fixed order, for one edge set."""

    def __init__(self, edges: Sequence[tuple], path_of: dict, world: WorldModel, kin_arrays):
        verts = sorted({r for e in edges for r in e})
        self.ids = verts
        self.index = {r: k for k, r in enumerate(verts)}
        self.geom = edge_table(edges, self.index, world, EPS_GEOM, robot_path=path_of)
        self.law = edge_table(edges, self.index, world, EPS_LAW, robot_path=path_of)
        b, a, vm = kin_arrays
        n = len(verts)
        self.b = np.full(n, b)
        self.a = np.full(n, a)
        self.vm = np.full(n, vm)


class SlotChecker:
    """Per-slot collision, priority, brake-safety and law-dominance checks."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.world = WorldModel(config.paths, config.footprint)
        self.paths = self.world.paths
        self.nsub = config.n_sub
        kin = config.kin
        self._kin = (kin.brake, kin.u_max, kin.v_max)
        self._d2 = (config.diameter - COLLISION_TOL) ** 2
        self._cache_key = None
        self._cache: _GraphArrays | None = None
        self._geo = {pid: (p.origin[0], p.origin[1], p.direction[0], p.direction[1]) for pid, p in self.paths.items()}

    def _graph(self, edges, path_of, key):
        if key is None:
            key = tuple(map(tuple, edges))
        if key != self._cache_key or self._cache is None:
            self._cache = _GraphArrays([tuple(e) for e in edges], path_of, self.world, self._kin)
            self._cache_key = key
        return self._cache

    def check(
        self,
        slot: int,
        ids: Sequence[int],
        path_of: dict,
        x: np.ndarray,
        v: np.ndarray,
        u: np.ndarray,
        edges: Iterable,
        key=None,
        first_only: bool = True,
    ) -> list[Violation]:
        """Violations found in this slot; at most one per monitor.

        ``ids`` are in the order of the arrays; ``path_of`` maps robot ids to
        path ids.  ``key`` identifies the edge set for caching (any hashable
        that changes whenever the edges do).
        """
        found: list[Violation] = []
        n = len(ids)
        if n >= 2:
            geo = np.array([self._geo[path_of[r]] for r in ids])
            vm = np.full(n, self._kin[2])
            i, j, m = K.first_collision(geo[:, 0], geo[:, 1], geo[:, 2], geo[:, 3], x, v, u, vm, self._d2, self.nsub)
            if i >= 0:
                found.append(
                    Violation(
                        "collision", slot, (ids[i], ids[j]),
                        f"centre distance below {self.config.diameter} - {COLLISION_TOL} at t = {slot} + {m}/{self.nsub}",
                    )
                )
                if first_only:
                    return found
        edges = list(edges)
        if not edges:
            return found
        g = self._graph(edges, path_of, key)
        pos = {r: k for k, r in enumerate(ids)}
        try:
            sel = np.array([pos[r] for r in g.ids], dtype=np.int64)
        except KeyError as exc:
            found.append(Violation("graph", slot, (exc.args[0],), "edge endpoint has no state record"))
            return found
        gx, gv, gu = x[sel], v[sel], u[sel]
        t = g.geom
        e, m = K.first_slot_violation(gx, gv, gu, g.vm, *t.args(), self.nsub)
        if e >= 0:
            w, l = g.ids[t.ew[e]], g.ids[t.el[e]]
            found.append(
                Violation("priority", slot, (w, l), f"configuration enters the shifted section of {w} over {l} at sample {m}")
            )
            if first_only:
                return found
        e = K.first_unsafe_edge(gx, gv, g.b, g.a, g.vm, *t.args(), self.nsub)
        if e >= 0:
            w, l = g.ids[t.ew[e]], g.ids[t.el[e]]
            found.append(Violation("brake_safety", slot, (w, l), "all-brake flow enters the shifted section"))
            if first_only:
                return found
        brake = K.law_brakes(gx, gv, g.b, g.a, g.vm, *g.law.args(), self.nsub)
        bad = np.nonzero(brake & (gu > -g.b))[0]
        if bad.shape[0]:
            r = g.ids[bad[0]]
            found.append(Violation("law", slot, (r,), f"applied control {gu[bad[0]]} exceeds the law output {-g.b[bad[0]]}"))
        return found


# -- trace replay ----------------------------------------------------------------


def _slots(records: Iterable[dict]):
    """Yield ``(slot_record, robot_records)`` groups; validate the layout."""
    cur = None
    robots: list = []
    for rec in records:
        kind = rec.get("kind")
        if kind == "slot":
            if cur is not None:
                yield cur, robots
            if cur is not None and rec["slot"] != cur["slot"] + 1:
                raise TraceError(f"slot {rec['slot']} follows slot {cur['slot']}")
            cur, robots = rec, []
        elif kind == "robot":
            if cur is None or rec["slot"] != cur["slot"]:
                raise TraceError("robot record outside its slot")
            robots.append(rec)
        else:
            raise TraceError(f"unknown record kind {kind!r}")
    if cur is not None:
        yield cur, robots


def check_header(header: dict, config: ScenarioConfig | None = None) -> None:
    from .scenario import SCHEMA_VERSION

    if header.get("kind") != "header":
        raise TraceError("trace does not start with a header record")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise TraceError(f"unsupported trace schema version {header.get('schema_version')}")
    if config is not None and header.get("config_hash") != config.hash():
        raise TraceError("trace was produced by a different scenario configuration")


def drain_deadline(config: ScenarioConfig, n_live: int) -> int:
    cross = max(crossing_slots(p, config.kin) for p in config.paths)
    return config.drain_after + DRAIN_FACTOR * cross * n_live


def verify(trace: Sequence[dict], config: ScenarioConfig) -> VerifyReport:
    """Replay ``trace`` against ``config`` and report the first violation of each monitor."""
    if not trace:
        raise TraceError("empty trace")
    check_header(trace[0], config)
    report = VerifyReport()
    checker = SlotChecker(config)
    kin = config.kin
    vm = kin.v_max
    path_of: dict = {}
    expected: dict = {}  # robot -> (x, v) predicted for the next boundary
    exiting: set = set()
    seen: set = set()
    last_slot = -1
    last_robots: list = []
    n_at_drain = None
    prev_edges = None
    graph_ok = True
    for slot_rec, robots in _slots(trace[1:]):
        k = slot_rec["slot"]
        if last_slot < 0 and k != 0:
            raise TraceError("first slot is not 0")
        last_slot = k
        last_robots = robots
        spawned = {e["robot"] for e in slot_rec["events"] if e["type"] == "spawn"}
        ids = [r["robot"] for r in robots]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise TraceError(f"robot records of slot {k} are not sorted by id")
        if config.drain_after is not None and k == config.drain_after:
            n_at_drain = len(ids)
        present = set(ids)
        # dynamics and conservation
        for rid in sorted(set(expected) - present):
            if rid not in exiting:
                report.record(Violation("dynamics", k, (rid,), "robot vanished without exiting"))
        for rec in robots:
            rid = rec["robot"]
            path_of[rid] = rec["path"]
            if rec["path"] not in checker.paths:
                raise TraceError(f"unknown path {rec['path']!r}")
            if rid in expected:
                ex, ev = expected[rid]
                if abs(rec["x"] - ex) > DYNAMICS_TOL or abs(rec["v"] - ev) > DYNAMICS_TOL:
                    report.record(
                        Violation("dynamics", k, (rid,), f"state ({rec['x']}, {rec['v']}) but the previous slot leads to ({ex}, {ev})")
                    )
            elif rid in seen or rid not in spawned:
                report.record(Violation("dynamics", k, (rid,), "robot appears without a spawn event"))
            if not (kin.u_min <= rec["u"] <= kin.u_max):
                report.record(Violation("dynamics", k, (rid,), f"control {rec['u']} outside its bounds"))
            seen.add(rid)
        x = np.array([r["x"] for r in robots], dtype=float)
        v = np.array([r["v"] for r in robots], dtype=float)
        u = np.array([r["u"] for r in robots], dtype=float)
        xn, vn = K.advance_all(x, v, u, np.full(len(ids), vm))
        expected = {rid: (float(xn[i]), float(vn[i])) for i, rid in enumerate(ids)}
        exiting = {r["robot"] for r in robots if r["status"] == "exited"}
        for i, r in enumerate(robots):
            if r["status"] == "exited" and xn[i] <= checker.paths[r["path"]].x_exit:
                report.record(Violation("dynamics", k, (r["robot"],), "marked exited but still inside the control area"))
        # graph structure
        edges = slot_rec["edges"]
        if graph_ok and edges != prev_edges:
            status = {r["robot"]: r["status"] for r in robots}
            bad = [e for e in edges if status.get(e[0]) not in ("accepted", "exited") or status.get(e[1]) not in ("accepted", "exited")]
            g_verts = frozenset(r for e in edges for r in e)
            if bad:
                report.record(Violation("graph", k, tuple(bad[0]), "edge between robots that are not accepted"))
                graph_ok = False
            else:
                try:
                    acyclic = PriorityGraph(g_verts, frozenset(map(tuple, edges))).is_acyclic()
                except ContractError as exc:
                    report.record(Violation("graph", k, (), f"malformed priority graph: {exc}"))
                    graph_ok = False
                else:
                    if not acyclic:
                        report.record(Violation("graph", k, (), "priority graph has a cycle"))
                        graph_ok = False
        if not graph_ok:
            # further checks would need edge endpoints that exist
            edges = [e for e in edges if e[0] in present and e[1] in present]
        for viol in checker.check(k, ids, path_of, x, v, u, edges, key=None if not graph_ok else tuple(map(tuple, edges)), first_only=False):
            report.record(viol)
        prev_edges = slot_rec["edges"]
        report.slots += 1
    report.robots = len(seen)
    if config.drain_after is not None:
        drained_at = last_slot + 1 if all(r["status"] == "exited" for r in last_robots) else None
        n = n_at_drain if n_at_drain is not None else 0
        deadline = drain_deadline(config, n)
        if last_slot < config.drain_after:
            report.record(Violation("liveness", last_slot, (), "trace ends before the drain phase starts"))
        elif drained_at is None:
            still = tuple(r["robot"] for r in last_robots if r["status"] != "exited")
            report.record(Violation("liveness", last_slot, still, f"robots remain at the end of the trace (deadline {deadline})"))
        elif drained_at > deadline:
            report.record(Violation("liveness", drained_at, (), f"drained at slot {drained_at}, after the deadline {deadline}"))
    return report

