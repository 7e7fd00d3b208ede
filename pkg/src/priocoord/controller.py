"""Intersection controller: entry requests, lowest-priority admission, predictions.

A robot outside the control area asks for entry as soon as one more slot of
throttle would carry it past the entry point even if it braked right after.
The controller admits it only if, driving at full throttle with the lowest
priority while the admitted robots follow their predicted trajectories, every
state on the way is brake safe and the priority law keeps granting it full
throttle.  Admitted robots always become sinks, so the graph stays acyclic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from . import _kernels as K
from .control import closed_loop_flow
from .dynamics import ContractError, Kinodynamics, RobotState, x_stop
from .geometry import PathSpec
from .priority import (
    EPS_LAW,
    N_SUB,
    PriorityGraph,
    WorldModel,
    add_lowest_priority,
    first_brake_violation,
    remove_vertex,
)


class LivenessError(RuntimeError):
    pass


@dataclass(frozen=True)
class EntryRequest:
    robot: int
    slot: int
    path: str


def wants_entry(s: RobotState, path: PathSpec, kin: Kinodynamics) -> bool:
    return x_stop(s, kin) > path.x_entry


@lru_cache(maxsize=None)
def crossing_slots(path: PathSpec, kin: Kinodynamics) -> int:
    """Slots for a robot starting at rest at coordinate 0 to pass the exit at full throttle."""
    x, v, k = 0.0, 0.0, 0
    while x <= path.x_exit:
        x, v = K.advance(x, v, kin.u_max, 1.0, kin.v_max)
        k += 1
    return k


@dataclass
class PredictedTrajectory:
    """Per-robot predicted states at consecutive slot boundaries.

    ``base[r]`` is the slot of the first stored state.  A robot with no
    stored state for a slot is predicted to have left the control area.
    """

    base: dict = field(default_factory=dict)
    x: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    last_update: int = 0
    revision: int = 0

    def set(self, rid, base: int, xs, vs) -> None:
        self.base[rid] = base
        self.x[rid] = np.asarray(xs, dtype=float)
        self.v[rid] = np.asarray(vs, dtype=float)
        self.revision += 1

    def drop(self, rid) -> None:
        if rid in self.base:
            self.revision += 1
        self.base.pop(rid, None)
        self.x.pop(rid, None)
        self.v.pop(rid, None)

    def window(self, rid, start: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """States for slots ``start .. start+n-1`` and a mask of the defined ones."""
        xs = np.zeros(n)
        vs = np.zeros(n)
        ok = np.zeros(n, dtype=bool)
        if rid not in self.base:
            return xs, vs, ok
        off = start - self.base[rid]
        src_x, src_v = self.x[rid], self.v[rid]
        lo = max(0, -off)
        hi = min(n, src_x.shape[0] - off)
        if hi > lo:
            xs[lo:hi] = src_x[off + lo:off + hi]
            vs[lo:hi] = src_v[off + lo:off + hi]
            ok[lo:hi] = True
        return xs, vs, ok

    def packed(self, ids) -> tuple:
        """``(xs, vs, offsets, bases, lengths)`` of ``ids``' predictions laid end to end."""
        lengths = np.array([self.x[r].shape[0] if r in self.x else 0 for r in ids], dtype=np.int64)
        offsets = np.zeros(len(ids), dtype=np.int64)
        if len(ids) > 1:
            offsets[1:] = np.cumsum(lengths)[:-1]
        bases = np.array([self.base.get(r, 0) for r in ids], dtype=np.int64)
        parts_x = [self.x[r] for r in ids if r in self.x]
        parts_v = [self.v[r] for r in ids if r in self.v]
        xs = np.concatenate(parts_x) if parts_x else np.zeros(0)
        vs = np.concatenate(parts_v) if parts_v else np.zeros(0)
        return xs, vs, offsets, bases, lengths

    def robots(self) -> list:
        return sorted(self.base)


@dataclass
class _AcceptedArrays:
    ids: list
    path: np.ndarray
    b: np.ndarray
    a: np.ndarray
    vm: np.ndarray


class IntersectionController:
    """Single authority over the accepted set, the priority graph and predictions."""

    def __init__(
        self,
        world: WorldModel,
        nsub: int = N_SUB,
        eps: float = EPS_LAW,
        horizon_factor: int = 10,
        require_full_throttle: bool = True,
    ):
        self.world = world
        self.nsub = nsub
        self.eps = eps
        self.graph = PriorityGraph()
        self.accepted: set = set()
        self.pred = PredictedTrajectory()
        self.horizon_factor = horizon_factor
        self.version = 0  # bumped on every graph mutation
        # also require the law to grant full throttle along the virtual
        # trajectory, on top of brake safety; keeps admitted robots at full
        # throttle whenever the predictions are exact
        self.require_full_throttle = require_full_throttle
        self._acc_cache = None
        self._pack_cache = None
        self._actual_cache = None
        self._in_batch = False

    # -- admission -----------------------------------------------------------

    def _full_throttle_run(self, s: RobotState, path: PathSpec, kin: Kinodynamics):
        limit = self.horizon_factor * crossing_slots(path, kin)
        xs, vs, n = K.throttle_run(s.x, s.v, kin.u_max, kin.v_max, path.x_exit, limit)
        if n < 0:
            raise LivenessError(f"full-throttle run on {path.id} never reaches the exit")
        return xs, vs

    def admissible(
        self, rid, s: RobotState, slot: int, states: Mapping[int, RobotState] | None = None
    ) -> tuple[bool, np.ndarray, np.ndarray]:
        """Evaluate the virtual trajectory of requester ``rid`` from its state ``s``.

        When ``states`` is given, the first sampled slot uses the accepted
        robots' actual states instead of their predictions.  Predictions go
        stale between updates (a perturbed robot lags behind its forecast),
        and only the actual state certifies that the committed graph starts
        from a brake-safe state.
        """
        world = self.world
        path = world.paths[world.robot_path[rid]]
        kin = world.robot_kin[rid]
        rx, rv = self._full_throttle_run(s, path, kin)
        acc = self._accepted_arrays()
        if not acc.ids or rx.shape[0] == 0:
            return True, rx, rv
        pidx, kinds, values = world.param_table(self.eps)
        fx, fv, off, base, length = self._packed(acc)
        use0, x0, v0 = self._actual(acc, states)
        k_fail = K.virtual_rejects(
            fx, fv, off, base, length, slot, acc.path, use0, x0, v0, acc.b, acc.a, acc.vm,
            rx, rv, kin.brake, kin.u_max, kin.v_max, pidx[path.id], kinds, values,
            self.nsub, self.require_full_throttle,
        )
        return k_fail < 0, rx, rv

    def _accepted_arrays(self) -> "_AcceptedArrays":
        if self._acc_cache is None or self._acc_cache[0] != self.version:
            world = self.world
            ids = sorted(self.accepted)
            pidx = world.param_table(self.eps)[0]
            kins = [world.robot_kin[r] for r in ids]
            arr = _AcceptedArrays(
                ids,
                np.array([pidx[world.robot_path[r]] for r in ids], dtype=np.int64),
                np.array([q.brake for q in kins], dtype=float),
                np.array([q.u_max for q in kins], dtype=float),
                np.array([q.v_max for q in kins], dtype=float),
            )
            self._acc_cache = (self.version, arr)
        return self._acc_cache[1]

    def _actual(self, acc: "_AcceptedArrays", states) -> tuple:
        """``(use0, x0, v0)``: actual states of the accepted robots, where known."""
        # cached only while process_requests holds ``states`` fixed
        cache = self._actual_cache
        if cache is not None and cache[0] == self.version and cache[2] is states:
            return cache[1]
        n = len(acc.ids)
        use0 = np.zeros(n, dtype=np.bool_)
        x0 = np.zeros(n)
        v0 = np.zeros(n)
        if states is not None:
            for j, r in enumerate(acc.ids):
                st = states.get(r)
                if st is not None:
                    use0[j], x0[j], v0[j] = True, st.x, st.v
        if self._in_batch:
            self._actual_cache = (self.version, (use0, x0, v0), states)
        return use0, x0, v0

    def _packed(self, acc: "_AcceptedArrays") -> tuple:
        key = (self.version, id(self.pred), self.pred.revision)
        if self._pack_cache is None or self._pack_cache[0] != key:
            self._pack_cache = (key, self.pred.packed(acc.ids))
        return self._pack_cache[1]

    def process_requests(self, pending, states: Mapping[int, RobotState], slot: int):
        """Handle requests FIFO by request slot, ties by robot id.

        Returns ``(accepted_ids, rejected_ids)``.  The graph, accepted set and
        predictions are updated in place after each acceptance so later
        requests of the same slot see them.
        """
        accepted, rejected = [], []
        self._in_batch = True
        try:
            self._handle(sorted(pending, key=lambda r: (r.slot, r.robot)), states, slot, accepted, rejected)
        finally:
            self._in_batch = False
            self._actual_cache = None
        return accepted, rejected

    def _handle(self, requests, states, slot, accepted, rejected) -> None:
        for req in requests:
            rid = req.robot
            if rid in self.accepted:
                raise ContractError(f"robot {rid} is already accepted")
            ok, rx, rv = self.admissible(rid, states[rid], slot, states)
            if not ok:
                rejected.append(rid)
                continue
            self.graph = add_lowest_priority(self.graph, rid, self.world)
            self.accepted.add(rid)
            self.pred.set(rid, slot, rx, rv)
            self.version += 1
            accepted.append(rid)

    # -- predictions -----------------------------------------------------------

    def update_predictions(self, states: Mapping[int, RobotState], slot: int) -> PredictedTrajectory:
        """Recompute the closed-loop prediction of every accepted robot from ``states``."""
        world = self.world
        pred = PredictedTrajectory(last_update=slot)
        ids = sorted(self.accepted)
        if ids:
            bound = self.horizon_factor * max(
                crossing_slots(world.paths[world.robot_path[r]], world.robot_kin[r]) for r in ids
            )
            s = {r: states[r] for r in ids}
            exits = np.array([world.paths[world.robot_path[r]].x_exit for r in ids])
            horizon = 32
            while True:
                flow = closed_loop_flow(s, self.graph, world, horizon, nsub=self.nsub, eps=self.eps)
                gone = flow.x > exits  # (horizon + 1, n)
                if gone[-1].all():
                    break
                if horizon >= bound:
                    stuck = [r for r, g in zip(ids, gone[-1]) if not g]
                    raise LivenessError(f"prediction from slot {slot}: robots {stuck} never exit")
                horizon = min(2 * horizon, bound)
            for i, r in enumerate(ids):
                n = int(np.argmax(gone[:, i]))
                pred.set(r, slot, flow.x[:n, i], flow.v[:n, i])
        self.pred = pred
        return pred

    # -- exits -----------------------------------------------------------------

    def prune_exited(self, states: Mapping[int, RobotState]) -> list:
        world = self.world
        gone = [r for r in sorted(self.accepted) if states[r].x > world.paths[world.robot_path[r]].x_exit]
        for r in gone:
            self.graph = remove_vertex(self.graph, r)
            self.accepted.discard(r)
            self.pred.drop(r)
        if gone:
            self.version += 1
        return gone

    def acceptance_is_sound(self, states: Mapping[int, RobotState]) -> bool:
        s = {r: states[r] for r in self.accepted}
        return first_brake_violation(s, self.graph, self.world, self.nsub, self.eps) is None

