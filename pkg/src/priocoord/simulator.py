"""Slotted stochastic simulation of an intersection.

Each slot runs, in order:

1. brake-regime transitions (one uniform draw per live robot, sorted by id);
2. arrivals (one uniform draw per path, in path order);
3. entry evaluation: robots whose entry condition holds file a request;
4. admission of pending requests by the intersection controller;
5. controls: the priority law for accepted robots, full throttle with car
   following for robots still approaching, maximum brake for requesters that
   were turned down; braking regimes and scripted overrides are applied last;
6. monitors (optional) on the state at the slot boundary and the controls;
7. one exact slot of motion for everybody;
8. removal of robots that left the control area;
9. a periodic refresh of the controller's predicted trajectories.

Randomness comes from a PCG64 generator seeded with the scenario seed; the
arrival and regime streams are spawned from one ``SeedSequence`` so the two
never share draws.  Traces are lists of dicts with a fixed key order, so
their JSON-Lines rendering is byte-for-byte reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import _kernels as K
from .control import law_from_arrays
from .controller import EntryRequest, IntersectionController, LivenessError, wants_entry
from .dynamics import RobotState, x_stop
from .geometry import EPS_GEOM
from .monitors import DRAIN_FACTOR, SlotChecker, TraceError, Violation, VerifyReport, check_header, drain_deadline, verify
from .priority import EPS_LAW, Snapshot, WorldModel
from .scenario import SCHEMA_VERSION, ScenarioConfig

CONTROLLED = "controlled"
BRAKING = "braking"

QUEUED = "queued"
REQUESTED = "requested"
ACCEPTED = "accepted"
EXITED = "exited"

__all__ = [
    "MonitorViolation",
    "SimResult",
    "DRAIN_FACTOR",
    "TraceError",
    "Violation",
    "VerifyReport",
    "read_trace",
    "regime_step",
    "run",
    "spawn",
    "summarize",
    "verify",
    "write_trace",
]


class MonitorViolation(RuntimeError):
    """A monitor failed during a run; ``result`` holds everything up to that slot."""

    def __init__(self, violation: Violation, result: "SimResult"):
        super().__init__(str(violation))
        self.violation = violation
        self.result = result


# -- stochastic pieces -------------------------------------------------------------


def spawn(rng: np.random.Generator, rate: float, existing: Sequence[float], diameter: float) -> float | None:
    """Arrival on one path: the new robot's coordinate, or None.

    The robot appears at 0, or one diameter behind the rearmost robot when
    that robot is still within one diameter of the origin.  The arrival is
    dropped if the spot overlaps a robot already there.
    """
    if rng.random() >= rate:
        return None
    x = 0.0
    if existing:
        last = min(existing)
        if last <= diameter:
            x = last - diameter
        if any(abs(x - e) < diameter - EPS_GEOM for e in existing):
            return None
    return x


def regime_step(rng: np.random.Generator, regimes: dict, p: float, q: float) -> dict:
    """Markov regime transitions, one draw per robot in ascending id order."""
    ids = sorted(regimes)
    draws = rng.random(len(ids))
    out = {}
    for r, d in zip(ids, draws):
        if regimes[r] == CONTROLLED:
            out[r] = BRAKING if d < p else CONTROLLED
        else:
            out[r] = CONTROLLED if d < q else BRAKING
    return out


# -- metrics -----------------------------------------------------------------------


def _stats(values) -> dict:
    if not values:
        return {"count": 0, "mean": None, "min": None, "max": None, "p50": None, "p95": None}
    a = np.asarray(values, dtype=float)
    return {
        "count": int(a.shape[0]),
        "mean": float(a.mean()),
        "min": float(a.min()),
        "max": float(a.max()),
        "p50": float(np.percentile(a, 50)),
        "p95": float(np.percentile(a, 95)),
    }


class MetricsAccumulator:
    """Builds the metrics document from per-slot observations.

    The simulator feeds it directly and :func:`summarize` feeds it from a
    trace, so both produce the same document.
    """

    def __init__(self, path_ids: Sequence[str], x_entry: dict, u_max: float, scenario: str | None = None, seed=None):
        self.path_ids = list(path_ids)
        self.x_entry = dict(x_entry)
        self.u_max = u_max
        self.scenario = scenario
        self.seed = seed
        self.queue: list[list[int]] = []
        self.slots = 0
        self.spawn_slot: dict = {}
        self.request_slot: dict = {}
        self.accept_slot: dict = {}
        self.entry_slot: dict = {}
        self.exit_slot: dict = {}
        self.rejections = 0
        self.rejected: set = set()
        self.in_area = 0
        self.in_area_full = 0
        self.area_u: dict = {}  # robot -> [in-area slots, full-throttle slots, control sum]
        self.drained_at = None

    @classmethod
    def for_config(cls, config: ScenarioConfig) -> "MetricsAccumulator":
        return cls(
            [p.id for p in config.paths], {p.id: p.x_entry for p in config.paths}, config.kin.u_max,
            config.name, config.seed,
        )

    def observe(self, slot: int, robots: Iterable[tuple], events: Iterable[tuple]) -> None:
        """``robots`` yields ``(id, path, x, u, status)``; ``events`` yields ``(type, id)``."""
        self.slots = slot + 1
        q = dict.fromkeys(self.path_ids, 0)
        for rid, path, x, u, status in robots:
            if status == QUEUED or status == REQUESTED:
                q[path] += 1
            elif x >= self.x_entry[path]:
                self.entry_slot.setdefault(rid, slot)
                self.in_area += 1
                full = u == self.u_max
                self.in_area_full += full
                acc = self.area_u.setdefault(rid, [0, 0, 0.0])
                acc[0] += 1
                acc[1] += full
                acc[2] += u
        self.queue.append([q[p] for p in self.path_ids])
        for kind, rid in events:
            if kind == "spawn":
                self.spawn_slot[rid] = slot
            elif kind == "request":
                self.request_slot[rid] = slot
            elif kind == "accept":
                self.accept_slot[rid] = slot
            elif kind == "reject":
                self.rejections += 1
                self.rejected.add(rid)
            elif kind == "exit":
                self.exit_slot[rid] = slot + 1

    def queue_series(self) -> np.ndarray:
        """Queue length per slot (rows) and path (columns, in config order)."""
        return np.asarray(self.queue, dtype=np.int64).reshape(len(self.queue), len(self.path_ids))

    def finish(self) -> dict:
        qs = self.queue_series()
        travel = [self.exit_slot[r] - self.entry_slot[r] for r in sorted(self.exit_slot) if r in self.entry_slot]
        total = [self.exit_slot[r] - self.spawn_slot[r] for r in sorted(self.exit_slot) if r in self.spawn_slot]
        latency = [self.accept_slot[r] - self.request_slot[r] for r in sorted(self.accept_slot) if r in self.request_slot]
        # a robot that always had full throttle reports exactly u_max
        means = [self.u_max if f == n else tot / n for n, f, tot in self.area_u.values()]
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "seed": self.seed,
            "slots": self.slots,
            "spawned": len(self.spawn_slot),
            "accepted": len(self.accept_slot),
            "exited": len(self.exit_slot),
            "rejections": self.rejections,
            "rejected_robots": len(self.rejected),
            "throughput": len(self.exit_slot) / self.slots if self.slots else 0.0,
            "travel_time": _stats(travel),
            "total_time": _stats(total),
            "acceptance_latency": _stats(latency),
            "queue": {
                p: {
                    "max": int(qs[:, k].max()) if qs.shape[0] else 0,
                    "mean": float(qs[:, k].mean()) if qs.shape[0] else 0.0,
                }
                for k, p in enumerate(self.path_ids)
            },
            "in_area_controls": {
                "count": self.in_area,
                "full_throttle": self.in_area_full,
                "fraction_full_throttle": self.in_area_full / self.in_area if self.in_area else 1.0,
                "robots": len(self.area_u),
                "robots_always_full_throttle": sum(1 for n, f, _ in self.area_u.values() if f == n),
                "min_robot_mean_control": min(means) if means else None,
            },
            "drained_at": self.drained_at,
        }


# -- the simulation ------------------------------------------------------------------


@dataclass
class _Robot:
    id: int
    path: str
    x: float
    v: float
    regime: str = CONTROLLED
    status: str = QUEUED
    request_slot: int | None = None


@dataclass
class SimResult:
    config: ScenarioConfig
    trace: list | None
    metrics: dict
    queue: np.ndarray
    slots: int = 0
    violations: list = field(default_factory=list)


class _Sim:
    def __init__(self, config: ScenarioConfig, record: bool, check: bool):
        self.cfg = config
        self.record = record
        self.check = check
        self.world = WorldModel(config.paths, config.footprint)
        self.paths = self.world.paths
        self.path_order = [p.id for p in config.paths]
        self.ctl = IntersectionController(self.world, nsub=config.n_sub, eps=EPS_LAW)
        self.kin = config.kin
        self.robots: dict[int, _Robot] = {}
        self.lanes: dict[str, list[int]] = {p: [] for p in self.path_order}  # front to back
        self.next_id = 0
        ss = np.random.SeedSequence(config.seed)
        arrivals, regimes = ss.spawn(2)
        self.rng_arrivals = np.random.Generator(np.random.PCG64(arrivals))
        self.rng_regimes = np.random.Generator(np.random.PCG64(regimes))
        self.trace: list | None = [] if record else None
        if record:
            self.trace.append(
                {
                    "kind": "header",
                    "schema_version": SCHEMA_VERSION,
                    "config_hash": config.hash(),
                    "seed": config.seed,
                    "config": config.to_dict(),
                }
            )
        self.metrics = MetricsAccumulator.for_config(config)
        self.checker = SlotChecker(config) if check else None
        self._snap_version = -1
        self._snap: Snapshot | None = None
        self._edges: list = []
        self._override_targets: dict[int, object] = {}
        self.follow_thr = config.diameter + EPS_LAW
        self.reach = x_stop(RobotState(0.0, config.kin.v_max), config.kin)

    # helpers

    def _add_robot(self, path: str, x: float, v: float) -> int:
        rid = self.next_id
        self.next_id += 1
        self.robots[rid] = _Robot(rid, path, x, v)
        self.lanes[path].append(rid)
        self.world.add_robot(rid, path, self.kin)
        return rid

    def _snapshot(self) -> Snapshot:
        if self._snap_version != self.ctl.version:
            self._snap = Snapshot.build(self.ctl.graph, self.world, EPS_LAW)
            self._edges = self._snap.edges
            self._snap_version = self.ctl.version
        return self._snap

    def _override_robots(self, idx: int, ov, slot: int) -> set:
        if ov.robots == "all":
            return set(self.robots)
        if ov.robots == "first-in-area":
            if idx not in self._override_targets:
                inside = [
                    r for r in sorted(self.ctl.accepted) if self.robots[r].x >= self.paths[self.robots[r].path].x_entry
                ]
                pick = inside[0] if inside else (min(self.ctl.accepted) if self.ctl.accepted else None)
                self._override_targets[idx] = pick
            pick = self._override_targets[idx]
            return set() if pick is None else {pick}
        return set(ov.robots)

    # one slot

    def step(self, k: int, drain: bool) -> list[tuple]:
        cfg = self.cfg
        kin = self.kin
        events: list[tuple] = []
        robots = self.robots

        # 1. regimes
        if drain:
            for r in robots.values():
                r.regime = CONTROLLED
        else:
            new = regime_step(self.rng_regimes, {rid: r.regime for rid, r in robots.items()}, cfg.p, cfg.q)
            for rid, reg in new.items():
                robots[rid].regime = reg

        # 2. arrivals
        if k == 0:
            for ini in cfg.initial_robots:
                rid = self._add_robot(ini.path, ini.x, ini.v)
                events.append(("spawn", rid))
        if not drain:
            for pid in self.path_order:
                existing = [robots[r].x for r in self.lanes[pid]]
                x = spawn(self.rng_arrivals, cfg.arrival_rate.get(pid, 0.0), existing, cfg.diameter)
                if x is not None:
                    events.append(("spawn", self._add_robot(pid, x, 0.0)))

        # 3. entry requests; a robot farther than the largest impulse reach
        # from the entry point cannot meet the condition, so skip the test
        for rid in sorted(robots):
            r = robots[rid]
            if (
                r.status == QUEUED
                and r.x + self.reach > self.paths[r.path].x_entry
                and wants_entry(RobotState(r.x, r.v), self.paths[r.path], kin)
            ):
                r.status = REQUESTED
                r.request_slot = k
                events.append(("request", rid))

        # 4. admission
        pending = [EntryRequest(rid, r.request_slot, r.path) for rid, r in robots.items() if r.status == REQUESTED]
        rejected: set = set()
        if pending:
            need = self.ctl.accepted.union(q.robot for q in pending)
            states = {rid: RobotState(robots[rid].x, robots[rid].v) for rid in need}
            acc, rej = self.ctl.process_requests(pending, states, k)
            for rid in acc:
                robots[rid].status = ACCEPTED
                events.append(("accept", rid))
            for rid in rej:
                events.append(("reject", rid))
            rejected = set(rej)

        # 5. controls
        u: dict[int, float] = {}
        snap = self._snapshot()
        if snap.ids:
            x = np.array([robots[r].x for r in snap.ids])
            v = np.array([robots[r].v for r in snap.ids])
            law = law_from_arrays(snap, x, v, cfg.n_sub)
            for i, r in enumerate(snap.ids):
                u[r] = kin.u_max if law[i] > 0 else kin.u_min
        # approaching robots: full throttle unless turned down or too close
        # to the robot ahead (car following, checked in one batch)
        followers: list = []
        leaders: list = []
        for pid in self.path_order:
            ahead = None
            for rid in self.lanes[pid]:
                r = robots[rid]
                if r.status != ACCEPTED:
                    if rid in rejected:
                        u[rid] = kin.u_min
                    elif ahead is None:
                        u[rid] = kin.u_max
                    else:
                        followers.append(r)
                        leaders.append(ahead)
                ahead = r
        if followers:
            n = len(followers)
            brake = K.follow_brakes(
                np.array([r.x for r in followers]), np.array([r.v for r in followers]),
                np.full(n, kin.brake), np.full(n, kin.u_max), np.full(n, kin.v_max),
                np.array([r.x for r in leaders]), np.array([r.v for r in leaders]),
                np.full(n, kin.brake), np.full(n, kin.u_max), np.full(n, kin.v_max),
                np.full(n, self.follow_thr), cfg.n_sub,
            )
            for r, b in zip(followers, brake):
                u[r.id] = kin.u_min if b else kin.u_max
        for rid, r in robots.items():
            if r.regime == BRAKING:
                u[rid] = kin.u_min
        for idx, ov in enumerate(cfg.overrides):
            if ov.active(k):
                value = kin.u_min if ov.control == "brake" else kin.u_max
                for rid in self._override_robots(idx, ov, k):
                    if rid in u:
                        u[rid] = value

        # 6. monitors on the slot's state and controls
        ids = sorted(robots)
        xs = np.array([robots[r].x for r in ids], dtype=float)
        vs = np.array([robots[r].v for r in ids], dtype=float)
        us = np.array([u[r] for r in ids], dtype=float)
        if self.checker is not None:
            found = self.checker.check(
                k, ids, self.world.robot_path, xs, vs, us, self._edges, key=self._snap_version
            )
            if found:
                self._violation = found[0]

        # 7. motion
        xn, vn = K.advance_all(xs, vs, us, np.full(len(ids), kin.v_max))

        # 8. exits
        exited = []
        for i, rid in enumerate(ids):
            r = robots[rid]
            r.x, r.v = float(xn[i]), float(vn[i])
            if r.x > self.paths[r.path].x_exit:
                exited.append(rid)
        regime = {rid: robots[rid].regime for rid in ids}
        rows = [(rid, robots[rid].path, float(xs[i]), float(us[i]), robots[rid].status) for i, rid in enumerate(ids)]
        if exited:
            gone = set(exited)
            rows = [(rid, p, x, uu, EXITED if rid in gone else st) for rid, p, x, uu, st in rows]
            states = {rid: RobotState(robots[rid].x, robots[rid].v) for rid in self.ctl.accepted}
            self.ctl.prune_exited(states)
            for rid in exited:
                r = robots.pop(rid)
                self.lanes[r.path].remove(rid)
                self.world.remove_robot(rid)
                events.append(("exit", rid))

        # record the slot
        self.metrics.observe(k, rows, events)
        if self.record:
            self.trace.append(
                {
                    "kind": "slot",
                    "slot": k,
                    "edges": self._edges,
                    "events": [{"type": t, "robot": rid} for t, rid in events],
                }
            )
            for i, (rid, path, x, uu, st) in enumerate(rows):
                self.trace.append(
                    {
                        "kind": "robot",
                        "slot": k,
                        "robot": rid,
                        "path": path,
                        "x": x,
                        "v": float(vs[i]),
                        "u": uu,
                        "regime": regime[rid],
                        "status": st,
                    }
                )

        # 9. predictions
        if (k + 1) % cfg.update_period == 0:
            self.ctl.update_predictions(
                {rid: RobotState(robots[rid].x, robots[rid].v) for rid in self.ctl.accepted}, k + 1
            )
        return rows


def run(config: ScenarioConfig, record: bool = True, check: bool = True) -> SimResult:
    """Simulate ``config``.

    ``record`` keeps the full trace; ``check`` runs the safety monitors every
    slot and raises :class:`MonitorViolation` at the first failure.  In drain
    mode (``drain_after`` set) arrivals and brake regimes stop at that slot
    and the run continues until every robot has left, or raises a liveness
    violation once the drain deadline passes.
    """
    sim = _Sim(config, record, check)
    sim._violation = None
    T0 = config.drain_after
    deadline = None
    k = 0

    def result() -> SimResult:
        return SimResult(config, sim.trace, sim.metrics.finish(), sim.metrics.queue_series(), k)

    while True:
        if T0 is None and k >= config.horizon:
            break
        drain = T0 is not None and k >= T0
        if drain and deadline is None:
            deadline = drain_deadline(config, len(sim.robots))
        if drain and not sim.robots:
            sim.metrics.drained_at = k
            break
        if deadline is not None and k >= deadline:
            v = Violation("liveness", k, tuple(sorted(sim.robots)), f"robots remain at the drain deadline {deadline}")
            raise MonitorViolation(v, result())
        try:
            sim.step(k, drain)
        except LivenessError as exc:
            raise MonitorViolation(Violation("liveness", k, (), str(exc)), result()) from None
        k += 1
        if sim._violation is not None:
            raise MonitorViolation(sim._violation, result())
    return result()


# -- trace files and summaries ------------------------------------------------------


def write_trace(trace: Sequence[dict], out: IO[str]) -> None:
    for rec in trace:
        out.write(json.dumps(rec, separators=(",", ":")))
        out.write("\n")


def read_trace(src: IO[str]) -> list[dict]:
    out = []
    for n, line in enumerate(src, 1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {n}: {exc}") from None
    return out


def summarize(trace: Sequence[dict]) -> dict:
    """Metrics document recomputed from a trace alone.

    An empty trace yields the document of a run with no slots and no robots.
    """
    from .scenario import from_dict

    if not trace:
        return MetricsAccumulator([], {}, 0.0).finish()
    check_header(trace[0])
    config = from_dict(trace[0]["config"])
    acc = MetricsAccumulator.for_config(config)
    cur = None
    rows: list = []

    def flush():
        if cur is not None:
            acc.observe(cur["slot"], rows, [(e["type"], e["robot"]) for e in cur["events"]])

    for rec in trace[1:]:
        if rec["kind"] == "slot":
            flush()
            cur, rows = rec, []
        elif rec["kind"] == "robot":
            rows.append((rec["robot"], rec["path"], rec["x"], rec["u"], rec["status"]))
        else:
            raise TraceError(f"unknown record kind {rec['kind']!r}")
    flush()
    if config.drain_after is not None and cur is not None and all(r[4] == EXITED for r in rows):
        acc.drained_at = cur["slot"] + 1
    return acc.finish()


def occupancy(trace: Sequence[dict]) -> np.ndarray:
    """Robots inside the control area (accepted or exiting) per slot."""
    counts: dict[int, int] = {}
    for rec in trace:
        if rec.get("kind") == "slot":
            counts[rec["slot"]] = 0
        elif rec.get("kind") == "robot" and rec["status"] in (ACCEPTED, EXITED):
            counts[rec["slot"]] += 1
    return np.array([counts[k] for k in sorted(counts)], dtype=np.int64)
