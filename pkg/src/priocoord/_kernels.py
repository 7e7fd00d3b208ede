"""Compiled inner loops for the pairwise flow checks.

Every check follows one pair of robots along a candidate flow (each robot
either brakes from its state, or throttles for one slot then brakes) and
asks whether the pair ever enters the winner-over-loser shifted section.

Continuous time is covered by sampling each slot at ``nsub`` points and
testing, for each sample interval ``[t_m, t_m+1]``, the *corner*
configuration made of the winner's position at ``t_m`` and the loser's at
``t_m+1``.  Positions never decrease, so every configuration reached inside
the interval has a winner at least as far and a loser no farther than the
corner; the shifted section is closed under exactly that move, hence a free
corner certifies the whole interval.
"""

import math

import numpy as np
from numba import njit

CROSSING = 0
SAME_PATH = 1

_cache = True


@njit(cache=_cache)
def advance(x, v, u, dt, vm):
    if u > 0.0:
        if v >= vm:
            return x + vm * dt, vm
        t_sat = (vm - v) / u
        if t_sat < dt:
            return x + v * t_sat + 0.5 * u * t_sat * t_sat + vm * (dt - t_sat), vm
        return x + v * dt + 0.5 * u * dt * dt, min(v + u * dt, vm)
    if u < 0.0:
        if v <= 0.0:
            return x, 0.0
        t_stop = v / -u
        if t_stop < dt:
            return x + 0.5 * v * t_stop, 0.0
        return x + v * dt + 0.5 * u * dt * dt, max(v + u * dt, 0.0)
    return x + v * dt, v


@njit(cache=_cache)
def brake_pos(x, v, b, t):
    ts = v / b
    if t >= ts:
        return x + 0.5 * v * ts
    return x + v * t - 0.5 * b * t * t


@njit(cache=_cache)
def quadrant_min(a_w, b_l, cs):
    if a_w <= 0.0 and b_l >= 0.0:
        return 0.0
    b = min(cs * a_w, b_l)
    q1 = a_w * a_w + b * b - 2.0 * cs * a_w * b
    a = max(cs * b_l, a_w)
    q2 = a * a + b_l * b_l - 2.0 * cs * a * b_l
    return min(q1, q2)


@njit(cache=_cache)
def shifted_hit(kind, cw, cl, cs, thr, xw, xl):
    if kind == SAME_PATH:
        return xl - xw > -thr
    return quadrant_min(xw - cw, xl - cl, cs) < thr


@njit(cache=_cache)
def _flow_pos(x, v, b, a, vm, imp, x1, v1, t):
    """Position at time ``t`` of a brake flow, or of an impulse flow when ``imp``."""
    if imp:
        if t <= 1.0:
            return advance(x, v, a, t, vm)[0]
        return brake_pos(x1, v1, b, t - 1.0)
    return brake_pos(x, v, b, t)


@njit(cache=_cache)
def pair_flow_hits(kind, cw, cl, cs, hi_w, lo_l, thr,
                   xw, vw, bw, aw, vmw, w_imp,
                   xl, vl, bl, al, vml, l_imp, nsub):
    """True iff the pair flow meets the shifted section (corner-sampled).

    Each slot is first tested with one coarse corner (winner at the slot
    start, loser at the slot end).  That corner dominates every fine corner
    of the slot, so only slots whose coarse corner hits are refined into
    ``nsub`` samples; the answer equals a plain fine scan.
    """
    crossing = kind == CROSSING
    if crossing and xw >= hi_w:
        return False
    if w_imp:
        xw1, vw1 = advance(xw, vw, aw, 1.0, vmw)
        w_final = xw1 + vw1 * vw1 / (2.0 * bw)
        tw = 1.0 + vw1 / bw
    else:
        xw1, vw1 = xw, vw
        w_final = xw + vw * vw / (2.0 * bw)
        tw = vw / bw
    if l_imp:
        xl1, vl1 = advance(xl, vl, al, 1.0, vml)
        l_final = xl1 + vl1 * vl1 / (2.0 * bl)
        tl = 1.0 + vl1 / bl
    else:
        xl1, vl1 = xl, vl
        l_final = xl + vl * vl / (2.0 * bl)
        tl = vl / bl
    if crossing and l_final <= lo_l:
        return False
    horizon = math.ceil(max(tw, tl))
    for k in range(horizon):
        pw = _flow_pos(xw, vw, bw, aw, vmw, w_imp, xw1, vw1, float(k))
        if crossing and pw >= hi_w:
            return False
        pl = _flow_pos(xl, vl, bl, al, vml, l_imp, xl1, vl1, float(k + 1))
        if not shifted_hit(kind, cw, cl, cs, thr, pw, pl):
            continue
        for m in range(k * nsub, (k + 1) * nsub):
            pw = _flow_pos(xw, vw, bw, aw, vmw, w_imp, xw1, vw1, m / nsub)
            if crossing and pw >= hi_w:
                return False
            pl = _flow_pos(xl, vl, bl, al, vml, l_imp, xl1, vl1, (m + 1) / nsub)
            if shifted_hit(kind, cw, cl, cs, thr, pw, pl):
                return True
    return shifted_hit(kind, cw, cl, cs, thr, w_final, l_final)


@njit(cache=_cache)
def law_brakes(x, v, b, a, vm, ew, el, kind, cw, cl, cs, hi_w, lo_l, thr, nsub):
    """Per-robot flag: True where some in-edge forces maximum brake."""
    brake = np.zeros(x.shape[0], dtype=np.bool_)
    for e in range(ew.shape[0]):
        i = el[e]
        if brake[i]:
            continue
        j = ew[e]
        t = thr[e]
        if pair_flow_hits(kind[e], cw[e], cl[e], cs[e], hi_w[e], lo_l[e], t,
                          x[j], v[j], b[j], a[j], vm[j], False,
                          x[i], v[i], b[i], a[i], vm[i], True, nsub):
            brake[i] = True
    return brake


@njit(cache=_cache)
def first_unsafe_edge(x, v, b, a, vm, ew, el, kind, cw, cl, cs, hi_w, lo_l, thr, nsub):
    """Index of the first edge violated by the all-brake flow, or -1."""
    for e in range(ew.shape[0]):
        j = ew[e]
        i = el[e]
        if pair_flow_hits(kind[e], cw[e], cl[e], cs[e], hi_w[e], lo_l[e], thr[e],
                          x[j], v[j], b[j], a[j], vm[j], False,
                          x[i], v[i], b[i], a[i], vm[i], False, nsub):
            return e
    return -1


@njit(cache=_cache)
def first_slot_violation(x, v, u, vm, ew, el, kind, cw, cl, cs, hi_w, lo_l, thr, nsub):
    """First ``(edge, sample)`` whose corner leaves the free set during one slot."""
    for e in range(ew.shape[0]):
        j = ew[e]
        i = el[e]
        if kind[e] == CROSSING and x[j] >= hi_w[e]:
            continue
        for m in range(nsub):
            pw = advance(x[j], v[j], u[j], m / nsub, vm[j])[0]
            pl = advance(x[i], v[i], u[i], (m + 1) / nsub, vm[i])[0]
            if shifted_hit(kind[e], cw[e], cl[e], cs[e], thr[e], pw, pl):
                return e, m
    return -1, -1


@njit(cache=_cache)
def virtual_rejects(fx, fv, off, base, length, slot, ppath, use0, x0, v0, pb, pa, pvm,
                    rx, rv, rb, ra, rvm, rpath, kinds, values, nsub, law_check):
    """Acceptance test along a virtual trajectory.

    Predicted states of the accepted robots are packed end to end in
    ``fx, fv``: robot ``j`` owns ``length[j]`` entries from ``off[j]``, the
    first one for slot ``base[j]``.  Every accepted robot whose path
    ``ppath[j]`` conflicts with the requester's path ``rpath`` gains an edge
    over the requester; ``kinds`` and ``values`` are the path-pair tables of
    ``WorldModel.param_table``.  Where ``use0`` is set, slot 0 of the virtual
    trajectory uses the actual state ``(x0, v0)`` instead of the prediction.
    A robot without a prediction for some slot is taken to have left.

    Returns the first failing slot index, or -1 when every sampled state is
    brake safe and, if ``law_check`` is set, the priority law grants the
    requester full throttle there too.
    """
    for k in range(rx.shape[0]):
        for j in range(ppath.shape[0]):
            kd = kinds[ppath[j], rpath]
            if kd < 0:
                continue
            if k == 0 and use0[j]:
                xw = x0[j]
                vw = v0[j]
            else:
                t = slot + k - base[j]
                if t < 0 or t >= length[j]:
                    continue
                xw = fx[off[j] + t]
                vw = fv[off[j] + t]
            prm = values[ppath[j], rpath]
            for imp in (False, True):
                if imp and not law_check:
                    break
                if pair_flow_hits(kd, prm[0], prm[1], prm[2], prm[3], prm[4], prm[5],
                                  xw, vw, pb[j], pa[j], pvm[j], False,
                                  rx[k], rv[k], rb, ra, rvm, imp, nsub):
                    return k
    return -1


@njit(cache=_cache)
def throttle_run(x, v, a, vm, x_exit, limit):
    """Slot-boundary states at constant throttle while ``x <= x_exit``.

    Returns ``(xs, vs, n)``; ``n`` is -1 when more than ``limit`` states
    would be needed.
    """
    xs = np.empty(limit + 1)
    vs = np.empty(limit + 1)
    n = 0
    while x <= x_exit:
        if n > limit:
            return xs[:0], vs[:0], -1
        xs[n] = x
        vs[n] = v
        x, v = advance(x, v, a, 1.0, vm)
        n += 1
    return xs[:n], vs[:n], n


@njit(cache=_cache)
def follow_brakes(xf, vf, bf, af, vmf, xp, vp, bp, ap, vmp, thr, nsub):
    """Car following on one path: True where the follower must brake."""
    out = np.zeros(xf.shape[0], dtype=np.bool_)
    for k in range(xf.shape[0]):
        out[k] = pair_flow_hits(SAME_PATH, 0.0, 0.0, 0.0, np.inf, -np.inf, thr[k],
                                xp[k], vp[k], bp[k], ap[k], vmp[k], False,
                                xf[k], vf[k], bf[k], af[k], vmf[k], True, nsub)
    return out


@njit(cache=_cache)
def advance_all(x, v, u, vm):
    xn = np.empty_like(x)
    vn = np.empty_like(v)
    for i in range(x.shape[0]):
        xn[i], vn[i] = advance(x[i], v[i], u[i], 1.0, vm[i])
    return xn, vn


@njit(cache=_cache)
def first_collision(ox, oy, dx, dy, x, v, u, vm, d2_min, nsub):
    """Smallest ``(i, j, m)`` with centre distance squared below ``d2_min``.

    Robots move monotonically along straight lines, so a robot sweeps the
    segment between its slot-start and slot-end points.  Pairs whose swept
    segments have bounding boxes farther apart than the collision distance
    are skipped (sort and sweep on the box x-range); the remaining pairs are
    compared at ``nsub + 1`` sample times.
    """
    n = x.shape[0]
    px = np.empty((n, nsub + 1))
    py = np.empty((n, nsub + 1))
    lo_x = np.empty(n)
    hi_x = np.empty(n)
    lo_y = np.empty(n)
    hi_y = np.empty(n)
    for i in range(n):
        for m in range(nsub + 1):
            s = advance(x[i], v[i], u[i], m / nsub, vm[i])[0]
            px[i, m] = ox[i] + s * dx[i]
            py[i, m] = oy[i] + s * dy[i]
        lo_x[i] = min(px[i, 0], px[i, nsub])
        hi_x[i] = max(px[i, 0], px[i, nsub])
        lo_y[i] = min(py[i, 0], py[i, nsub])
        hi_y[i] = max(py[i, 0], py[i, nsub])
    reach = math.sqrt(d2_min) if d2_min > 0.0 else 0.0
    order = np.argsort(lo_x, kind="mergesort")
    best_i, best_j, best_m = -1, -1, -1
    for a in range(n):
        i0 = order[a]
        for b in range(a + 1, n):
            j0 = order[b]
            if lo_x[j0] > hi_x[i0] + reach:
                break
            if lo_y[j0] > hi_y[i0] + reach or lo_y[i0] > hi_y[j0] + reach:
                continue
            i = min(i0, j0)
            j = max(i0, j0)
            if best_i >= 0 and (i > best_i or (i == best_i and j > best_j)):
                continue
            for m in range(nsub + 1):
                ddx = px[i, m] - px[j, m]
                ddy = py[i, m] - py[j, m]
                if ddx * ddx + ddy * ddy < d2_min:
                    best_i, best_j, best_m = i, j, m
                    break
    return best_i, best_j, best_m
