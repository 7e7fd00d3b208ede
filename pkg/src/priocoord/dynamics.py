"""Saturated double integrator with slot-wise constant controls.

Time is measured in slots (the control period is 1).  Velocity is kept in
``[0, v_max]``: braking stops at rest and throttling stops at the speed
limit.  Integration is exact: when a limit is reached inside an interval
the interval is split at that instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Kinodynamics:
    v_max: float
    u_min: float
    u_max: float

    def __post_init__(self):
        if not (self.u_min < 0.0 < self.u_max):
            raise ContractError("need u_min < 0 < u_max")
        if not self.v_max > 0.0:
            raise ContractError("need v_max > 0")

    @property
    def brake(self) -> float:
        return -self.u_min

    @property
    def braking_slots(self) -> int:
        """Slots needed to stop from full speed under maximum brake."""
        return math.ceil(self.v_max / self.brake - 1e-12)


@dataclass(frozen=True, order=False)
class RobotState:
    x: float
    v: float


@dataclass(frozen=True)
class ControlSequence:
    values: tuple[float, ...]

    def __init__(self, values: Sequence[float]):
        object.__setattr__(self, "values", tuple(float(u) for u in values))
        if not self.values:
            raise ContractError("a control sequence needs at least one slot")

    @classmethod
    def constant(cls, u: float) -> "ControlSequence":
        return cls([u])

    @classmethod
    def impulse(cls, kin: Kinodynamics) -> "ControlSequence":
        return cls([kin.u_max, kin.u_min])

    def __len__(self):
        return len(self.values)

    def at(self, k: int) -> float:
        """Control of slot ``k``; the last value is held beyond the sequence."""
        return self.values[min(k, len(self.values) - 1)]

    def check(self, kin: Kinodynamics) -> None:
        for u in self.values:
            if not (kin.u_min <= u <= kin.u_max):
                raise ContractError(f"control {u} outside [{kin.u_min}, {kin.u_max}]")


def _advance(x: float, v: float, u: float, dt: float, v_max: float) -> tuple[float, float]:
    # exact solution of x' = v, v' = u * delta(u, v) over [0, dt]
    if u > 0.0:
        if v >= v_max:
            return x + v_max * dt, v_max
        t_sat = (v_max - v) / u
        if t_sat < dt:
            return x + v * t_sat + 0.5 * u * t_sat * t_sat + v_max * (dt - t_sat), v_max
        return x + v * dt + 0.5 * u * dt * dt, min(v + u * dt, v_max)
    if u < 0.0:
        if v <= 0.0:
            return x, 0.0
        t_stop = v / -u
        if t_stop < dt:
            return x + 0.5 * v * t_stop, 0.0
        return x + v * dt + 0.5 * u * dt * dt, max(v + u * dt, 0.0)
    return x + v * dt, v


def step(s: RobotState, u: float, kin: Kinodynamics, dt: float = 1.0) -> RobotState:
    if not (kin.u_min <= u <= kin.u_max):
        raise ContractError(f"control {u} outside [{kin.u_min}, {kin.u_max}]")
    if not (0.0 < dt <= 1.0):
        raise ContractError(f"dt must lie in (0, 1], got {dt}")
    x, v = _advance(s.x, s.v, u, dt, kin.v_max)
    return RobotState(x, v)


class Trajectory:
    """Exact flow of one robot under a control sequence, queryable at any ``t >= 0``."""

    def __init__(self, s: RobotState, ctrl: ControlSequence, kin: Kinodynamics):
        ctrl.check(kin)
        self.kin = kin
        self.ctrl = ctrl
        self._states = [s]  # states at slot boundaries, extended lazily

    def state_at_slot(self, k: int) -> RobotState:
        if k < 0:
            raise ContractError("negative slot")
        states = self._states
        while len(states) <= k:
            prev = states[-1]
            x, v = _advance(prev.x, prev.v, self.ctrl.at(len(states) - 1), 1.0, self.kin.v_max)
            states.append(RobotState(x, v))
        return states[k]

    def __call__(self, t: float) -> RobotState:
        if t < 0:
            raise ContractError("negative time")
        k = math.floor(t)
        base = self.state_at_slot(k)
        dt = t - k
        if dt == 0.0:
            return base
        x, v = _advance(base.x, base.v, self.ctrl.at(k), dt, self.kin.v_max)
        return RobotState(x, v)


def flow(s: RobotState, ctrl: ControlSequence, kin: Kinodynamics) -> Trajectory:
    return Trajectory(s, ctrl, kin)


def brake_stop(s: RobotState, kin: Kinodynamics) -> float:
    """Rest position under constant maximum brake."""
    return s.x + s.v * s.v / (2.0 * kin.brake)


def x_stop(s: RobotState, kin: Kinodynamics) -> float:
    """Farthest position reachable under one throttle slot followed by braking."""
    x1, v1 = _advance(s.x, s.v, kin.u_max, 1.0, kin.v_max)
    return x1 + v1 * v1 / (2.0 * kin.brake)


def leq_state(a: RobotState, b: RobotState) -> bool:
    return a.x <= b.x and a.v <= b.v


def leq_control(c1: ControlSequence, c2: ControlSequence) -> bool:
    n = max(len(c1), len(c2))
    return all(c1.at(k) <= c2.at(k) for k in range(n))


def advance_array(x, v, u, dt, v_max):
    """Vectorised :func:`_advance`; all arguments broadcast, ``dt >= 0``."""
    x, v, u, dt, v_max = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, v, u, dt, v_max)))
    with np.errstate(divide="ignore", invalid="ignore"):
        up = u > 0.0
        dn = u < 0.0
        # time at which a velocity limit is hit (inf when none applies)
        t_lim = np.full(x.shape, np.inf)
        t_lim = np.where(up, (v_max - v) / np.where(up, u, 1.0), t_lim)
        t_lim = np.where(dn, v / np.where(dn, -u, 1.0), t_lim)
        t_lim = np.maximum(t_lim, 0.0)
        tau = np.minimum(dt, t_lim)
        x_new = x + v * tau + 0.5 * u * tau * tau
        v_lim = np.where(up, v_max, 0.0)
        v_tau = np.where(tau < dt, v_lim, np.clip(v + u * tau, 0.0, v_max))
        x_new = x_new + np.where(tau < dt, v_lim * (dt - tau), 0.0)
    return x_new, v_tau
