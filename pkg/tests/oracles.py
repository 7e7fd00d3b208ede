"""Independent reference computations used by the tests.

Nothing here calls into the package's geometry or flow code; each oracle
rebuilds its answer from first principles (dense sampling, small-step
integration) so agreement is evidence, not tautology.
"""

from __future__ import annotations

import numpy as np


# -- shifted-section membership by sampling -----------------------------------------


def crossing_boundary(c_w: float, c_l: float, cos: float, diameter: float, n: int = 200_000) -> np.ndarray:
    """Points just inside the ellipse ``a**2 + b**2 - 2 cos a b < D**2`` around ``(c_w, c_l)``.

    Columns are ``(p_w, p_l)``.  The distance form is symmetric in its two
    axes, so the orientation of the pair does not matter.
    """
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    r = diameter / np.sqrt(1.0 - cos * np.sin(2.0 * th))
    r *= 1.0 - 1e-12
    return np.column_stack([c_w + r * np.cos(th), c_l + r * np.sin(th)])


def same_path_band(lo: float, hi: float, diameter: float, n: int = 200_000) -> np.ndarray:
    """Points of the strip ``|p_w - p_l| < D`` along the two edges, over ``[lo, hi]``."""
    s = np.linspace(lo, hi, n)
    d = diameter * (1.0 - 1e-12)
    return np.vstack([np.column_stack([s, s + d]), np.column_stack([s, s - d])])


class QuadrantScan:
    """``exists p in samples with p_w >= x_w and p_l <= x_l`` for many queries.

    Samples are sorted by ``p_w``; the suffix minimum of ``p_l`` answers a
    query with one binary search.
    """

    def __init__(self, samples: np.ndarray):
        order = np.argsort(samples[:, 0], kind="stable")
        self.pw = samples[order, 0]
        self.suffix_min = np.minimum.accumulate(samples[order, 1][::-1])[::-1]

    def __call__(self, x_w, x_l) -> np.ndarray:
        x_w = np.asarray(x_w, dtype=float)
        x_l = np.asarray(x_l, dtype=float)
        k = np.searchsorted(self.pw, x_w, side="left")
        out = np.zeros(np.broadcast(x_w, x_l).shape, dtype=bool)
        inside = k < self.pw.shape[0]
        kk = np.minimum(k, self.pw.shape[0] - 1)
        out[inside] = self.suffix_min[kk][inside] <= np.broadcast_to(x_l, out.shape)[inside]
        return out


# -- dynamics by small-step integration ----------------------------------------------


def fine_integrate(x0, v0, controls, v_max: float, dt: float = 1e-4):
    """Slot-boundary states of the saturated double integrator.

    ``controls`` has shape ``(slots, cases)``.  Velocity takes a plain
    clipped step; position uses the average of the old and new velocity,
    which is exact for a constant acceleration and leaves only a
    ``u * dt**2`` error at each saturation event.  A forward-Euler position
    update would carry an ``O(dt)`` global error of about ``5e-5`` over 40
    slots, which is above the tolerance this oracle has to resolve.
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    x = np.array(x0, dtype=float, copy=True)
    v = np.array(v0, dtype=float, copy=True)
    steps = int(round(1.0 / dt))
    xs = [x.copy()]
    vs = [v.copy()]
    for u in controls:
        for _ in range(steps):
            v_new = np.clip(v + u * dt, 0.0, v_max)
            x = x + 0.5 * (v + v_new) * dt
            v = v_new
        xs.append(x.copy())
        vs.append(v.copy())
    return np.array(xs), np.array(vs)


def impulse_reach(x: float, v: float, u_max: float, u_min: float, v_max: float) -> float:
    """Rest position after one throttle slot and braking, by stepping the ODE."""
    dt = 1e-5
    for _ in range(int(round(1.0 / dt))):
        v_new = min(v + u_max * dt, v_max)
        x += 0.5 * (v + v_new) * dt
        v = v_new
    while v > 0.0:
        v_new = max(v + u_min * dt, 0.0)
        x += 0.5 * (v + v_new) * dt
        v = v_new
    return x


# -- planar positions ----------------------------------------------------------------


def centre(origin, direction, x):
    return np.asarray(origin, dtype=float) + np.multiply.outer(np.asarray(x, dtype=float), np.asarray(direction, dtype=float))
