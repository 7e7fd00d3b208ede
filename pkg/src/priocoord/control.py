"""The priority-preserving feedback law and its closed-loop flow.

Robot ``i`` gets maximum throttle unless, for some robot ``j`` with priority
over it, the worst case for ``i`` (``i`` throttles one slot then brakes while
everybody else brakes) would put the pair inside ``j``'s shifted section; in
that case it gets maximum brake.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import _kernels as K
from .dynamics import ContractError, RobotState
from .priority import EPS_LAW, N_SUB, PriorityGraph, Snapshot, WorldModel


def _check_cover(s: Mapping, g: PriorityGraph) -> None:
    extra = set(s) - set(g.vertices)
    if extra:
        raise ContractError(f"robots {sorted(extra)} are not covered by the priority graph")


def law_from_arrays(snap: Snapshot, x: np.ndarray, v: np.ndarray, nsub: int = N_SUB) -> np.ndarray:
    """Control vector in ``snap.ids`` order."""
    n = len(snap.ids)
    if n == 0:
        return np.zeros(0)
    if len(snap.table) == 0:
        return snap.a.copy()
    brake = K.law_brakes(x, v, snap.b, snap.a, snap.vm, *snap.table.args(), nsub)
    return np.where(brake, -snap.b, snap.a)


def control_law(
    s: Mapping[int, RobotState],
    g: PriorityGraph,
    world: WorldModel,
    nsub: int = N_SUB,
    eps: float = EPS_LAW,
) -> dict:
    """Bang-bang control for every robot of ``g``; values are exactly ``u_min`` or ``u_max``."""
    _check_cover(s, g)
    snap = Snapshot.build(g, world, eps)
    x, v = snap.arrays(s)
    u = law_from_arrays(snap, x, v, nsub)
    # map back to the exact per-robot constants
    out = {}
    for k, r in enumerate(snap.ids):
        kin = world.robot_kin[r]
        out[r] = kin.u_max if u[k] > 0 else kin.u_min
    return out


@dataclass
class ClosedLoopFlow:
    """States at slot boundaries ``0..horizon`` and controls of slots ``0..horizon-1``."""

    ids: list
    x: np.ndarray  # (horizon + 1, n)
    v: np.ndarray
    u: np.ndarray  # (horizon, n)
    kin: dict

    def state(self, k: int) -> dict:
        return {r: RobotState(float(self.x[k, i]), float(self.v[k, i])) for i, r in enumerate(self.ids)}

    def controls(self, k: int) -> dict:
        return {r: float(self.u[k, i]) for i, r in enumerate(self.ids)}

    def __call__(self, t: float) -> dict:
        """Joint state at any time ``0 <= t <= horizon``."""
        k = min(int(np.floor(t)), self.u.shape[0] - 1)
        dt = t - k
        out = {}
        for i, r in enumerate(self.ids):
            x, v = K.advance(self.x[k, i], self.v[k, i], self.u[k, i], dt, self.kin[r].v_max)
            out[r] = RobotState(float(x), float(v))
        return out


def closed_loop_flow(
    s: Mapping[int, RobotState],
    g: PriorityGraph,
    world: WorldModel,
    horizon: int,
    override: Mapping[int, Mapping[int, float]] | None = None,
    nsub: int = N_SUB,
    eps: float = EPS_LAW,
) -> ClosedLoopFlow:
    """Iterate the law slot by slot; ``override[k][r]`` caps robot ``r`` during slot ``k``."""
    _check_cover(s, g)
    snap = Snapshot.build(g, world, eps)
    x, v = snap.arrays(s)
    n = len(snap.ids)
    xs = np.empty((horizon + 1, n))
    vs = np.empty((horizon + 1, n))
    us = np.empty((horizon, n))
    xs[0], vs[0] = x, v
    override = override or {}
    for k in range(horizon):
        u = law_from_arrays(snap, x, v, nsub)
        for r, cap in override.get(k, {}).items():
            kin = world.robot_kin[r]
            if not (kin.u_min <= cap <= kin.u_max):
                raise ContractError(f"override {cap} for robot {r} outside its control bounds")
            i = snap.index[r]
            u[i] = min(u[i], cap)
        x, v = K.advance_all(x, v, u, snap.vm)
        xs[k + 1], vs[k + 1], us[k] = x, v, u
    kin = {r: world.robot_kin[r] for r in snap.ids}
    return ClosedLoopFlow(snap.ids, xs, vs, us, kin)
