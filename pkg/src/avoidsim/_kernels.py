"""Numba-compiled numerical kernels.

State layout conventions used throughout:

* vehicle state row: ``[x, y, psi, v, a_long, delta]`` (positions in m,
  heading in rad, speed in m/s, realized longitudinal acceleration in m/s^2,
  steering angle in rad)
* action row: ``[a_cmd, omega]``
* particle row: ``[ego(6), other(6), lat_a, lat_omega]`` (14 columns)

All kernels are deterministic; random numbers are drawn by callers and passed
in as arrays.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

EGO = 0
OTHER = 6
LAT_A = 12
LAT_OM = 13
STATE_DIM = 14


@njit(cache=True)
def _deriv(psi, v, delta, kr, L):
    beta = math.atan(kr * math.tan(delta))
    cb = math.cos(beta)
    return (
        v * math.cos(psi + beta),
        v * math.sin(psi + beta),
        v * cb * math.tan(delta) / L,
    )


@njit(cache=True)
def _rk4_seg(x, y, psi, v, delta, a, om, h, kr, L):
    # v and delta evolve linearly inside a smooth segment; RK4 integrates the
    # coupled (x, y, psi) block.
    dx1, dy1, dp1 = _deriv(psi, v, delta, kr, L)
    vm = v + 0.5 * h * a
    dm = delta + 0.5 * h * om
    dx2, dy2, dp2 = _deriv(psi + 0.5 * h * dp1, vm, dm, kr, L)
    dx3, dy3, dp3 = _deriv(psi + 0.5 * h * dp2, vm, dm, kr, L)
    ve = v + h * a
    de = delta + h * om
    dx4, dy4, dp4 = _deriv(psi + h * dp3, ve, de, kr, L)
    x += h / 6.0 * (dx1 + 2.0 * dx2 + 2.0 * dx3 + dx4)
    y += h / 6.0 * (dy1 + 2.0 * dy2 + 2.0 * dy3 + dy4)
    psi += h / 6.0 * (dp1 + 2.0 * dp2 + 2.0 * dp3 + dp4)
    return x, y, psi, ve, de


@njit(cache=True)
def _step_one(x, y, psi, v, delta, a, om, dt, kr, L, delta_max):
    """Advance one vehicle by dt under constant (a, om); v clamps at 0 and
    delta saturates at +-delta_max (events handled by segment splitting)."""
    if v < 0.0:
        v = 0.0
    if delta > delta_max:
        delta = delta_max
    elif delta < -delta_max:
        delta = -delta_max
    t = 0.0
    a_eff = a
    om_eff = om
    while t < dt - 1e-15:
        rem = dt - t
        # time until v reaches zero
        t_v = rem + 1.0
        if a_eff < 0.0:
            tv = v / (-a_eff)
            if tv < rem:
                t_v = tv
        # time until steering saturates
        t_d = rem + 1.0
        if om_eff > 0.0:
            td = (delta_max - delta) / om_eff
            if td < rem:
                t_d = td
        elif om_eff < 0.0:
            td = (-delta_max - delta) / om_eff
            if td < rem:
                t_d = td
        h = rem
        if t_v < h:
            h = t_v
        if t_d < h:
            h = t_d
        if h > 0.0:
            x, y, psi, v, delta = _rk4_seg(x, y, psi, v, delta, a_eff, om_eff, h, kr, L)
        t += h
        if h == t_v or (t_v <= 0.0 and a_eff < 0.0):
            v = 0.0
            a_eff = 0.0
        if h == t_d or (t_d <= 0.0 and om_eff != 0.0):
            delta = delta_max if om_eff > 0.0 else -delta_max
            om_eff = 0.0
        if h <= 0.0 and t_v > 0.0 and t_d > 0.0:
            break
    if v < 0.0:
        v = 0.0
    return x, y, psi, v, delta


@njit(cache=True)
def bicycle_batch(states, actions, dt, kr, L, delta_max, out):
    """Advance (n, 6) vehicle states by (n, 2) actions; realized acceleration
    lands in column 4 of ``out``."""
    n = states.shape[0]
    for i in range(n):
        v0 = states[i, 3]
        if v0 < 0.0:
            v0 = 0.0
        x, y, psi, v, delta = _step_one(
            states[i, 0], states[i, 1], states[i, 2], v0, states[i, 5],
            actions[i, 0], actions[i, 1], dt, kr, L, delta_max,
        )
        out[i, 0] = x
        out[i, 1] = y
        out[i, 2] = psi
        out[i, 3] = v
        out[i, 4] = (v - v0) / dt
        out[i, 5] = delta


@njit(cache=True)
def rollout_ego(start, actions, dt, kr, L, delta_max, out):
    """Roll (B, H, 2) action batches from one start state into (B, H, 6)."""
    B, H = actions.shape[0], actions.shape[1]
    for b in range(B):
        x, y, psi, v, delta = start[0], start[1], start[2], start[3], start[5]
        for t in range(H):
            v0 = v
            x, y, psi, v, delta = _step_one(
                x, y, psi, v0, delta, actions[b, t, 0], actions[b, t, 1],
                dt, kr, L, delta_max,
            )
            out[b, t, 0] = x
            out[b, t, 1] = y
            out[b, t, 2] = psi
            out[b, t, 3] = v
            out[b, t, 4] = (v - v0) / dt
            out[b, t, 5] = delta


@njit(cache=True)
def project_held_control(states, lat, n_steps, dt, kr, L, delta_max,
                         steer_decay, lane_dir, heading_relax, out1, outh):
    """Roll other-vehicle states forward under held longitudinal latent
    control with the steering maneuver winding down: the steering angle
    decays by ``steer_decay`` per step (steering rate dropped) and the
    heading relaxes toward the lane direction by ``heading_relax`` per step.
    Speed commitments persist; momentary steering jitter does not integrate
    over the whole projection horizon, while committed turns still project
    far off the lane.

    states: (n, 6) other sub-states; lat: (n, 2) latent (a, omega).
    out1 receives the one-step projection, outh the n_steps projection
    (both (n, 6), realized acceleration in column 4).
    """
    n = states.shape[0]
    for i in range(n):
        x, y, psi, v, delta = states[i, 0], states[i, 1], states[i, 2], states[i, 3], states[i, 5]
        if v < 0.0:
            v = 0.0
        a = lat[i, 0]
        # one step of the hypothesized steering rate enters the projection,
        # so sustained-turn hypotheses project off the lane and get culled
        delta += lat[i, 1] * dt
        if delta > delta_max:
            delta = delta_max
        elif delta < -delta_max:
            delta = -delta_max
        v0 = v
        for t in range(n_steps):
            v0 = v
            x, y, psi, v, delta = _step_one(x, y, psi, v0, delta, a, 0.0, dt, kr, L, delta_max)
            delta *= steer_decay
            dev = psi - lane_dir
            while dev > math.pi:
                dev -= 2.0 * math.pi
            while dev < -math.pi:
                dev += 2.0 * math.pi
            psi = lane_dir + dev * heading_relax
            if t == 0:
                out1[i, 0] = x
                out1[i, 1] = y
                out1[i, 2] = psi
                out1[i, 3] = v
                out1[i, 4] = (v - v0) / dt
                out1[i, 5] = delta
        outh[i, 0] = x
        outh[i, 1] = y
        outh[i, 2] = psi
        outh[i, 3] = v
        outh[i, 4] = (v - v0) / dt
        outh[i, 5] = delta


@njit(cache=True)
def pedal_repair_batch(a_start, seq, a0, max_step):
    """Project acceleration sequences onto the pedal-feasible set, in place.

    Feasibility: per-step change bounded by max_step, and any crossing of a0
    passes through exactly one step held at a0.  seq: (B, H).
    """
    B, H = seq.shape
    for b in range(B):
        prev = a_start[b]
        for t in range(H):
            target = seq[b, t]
            lo = prev - max_step
            hi = prev + max_step
            val = target
            if val < lo:
                val = lo
            elif val > hi:
                val = hi
            sp = prev - a0
            sv = val - a0
            if (sp > 0.0 and sv < 0.0) or (sp < 0.0 and sv > 0.0):
                # crossing without a dwell: move to the hold level instead
                if a0 < lo:
                    val = lo
                elif a0 > hi:
                    val = hi
                else:
                    val = a0
            seq[b, t] = val
            prev = val


@njit(cache=True)
def _rect_overlap(x1, y1, p1, L1, W1, x2, y2, p2, L2, W2):
    """Oriented rectangle overlap via the separating axis test."""
    c1 = math.cos(p1)
    s1 = math.sin(p1)
    c2 = math.cos(p2)
    s2 = math.sin(p2)
    dx = x2 - x1
    dy = y2 - y1
    hl1 = 0.5 * L1
    hw1 = 0.5 * W1
    hl2 = 0.5 * L2
    hw2 = 0.5 * W2
    # candidate axes: both rectangles' long and lateral axes
    for k in range(4):
        if k == 0:
            ax, ay = c1, s1
        elif k == 1:
            ax, ay = -s1, c1
        elif k == 2:
            ax, ay = c2, s2
        else:
            ax, ay = -s2, c2
        r1 = hl1 * abs(c1 * ax + s1 * ay) + hw1 * abs(-s1 * ax + c1 * ay)
        r2 = hl2 * abs(c2 * ax + s2 * ay) + hw2 * abs(-s2 * ax + c2 * ay)
        if abs(dx * ax + dy * ay) > r1 + r2:
            return False
    return True


@njit(cache=True)
def collision_pairs(ego, other, ego_len, ego_wid, oth_len, oth_wid, hit, rel_speed):
    """SAT overlap + relative speed for (m, 6) state pairs."""
    m = ego.shape[0]
    r_pre = 0.5 * math.hypot(ego_len, ego_wid) + 0.5 * math.hypot(oth_len, oth_wid)
    for i in range(m):
        dx = other[i, 0] - ego[i, 0]
        dy = other[i, 1] - ego[i, 1]
        if dx * dx + dy * dy > r_pre * r_pre:
            hit[i] = False
            rel_speed[i] = 0.0
            continue
        h = _rect_overlap(
            ego[i, 0], ego[i, 1], ego[i, 2], ego_len, ego_wid,
            other[i, 0], other[i, 1], other[i, 2], oth_len, oth_wid,
        )
        hit[i] = h
        if h:
            rvx = ego[i, 3] * math.cos(ego[i, 2]) - other[i, 3] * math.cos(other[i, 2])
            rvy = ego[i, 3] * math.sin(ego[i, 2]) - other[i, 3] * math.sin(other[i, 2])
            rel_speed[i] = math.hypot(rvx, rvy)
        else:
            rel_speed[i] = 0.0


@njit(cache=True)
def _cf_unsafe(ex, ey, epsi, ev, ox, oy, opsi, ov,
               ego_len, ego_wid, oth_len, oth_wid,
               a_ov, a_max, t_r, dt):
    """Counterfactual check: the other vehicle brakes at a_ov immediately,
    the ego at a_max after t_r; both hold heading.  Returns the relative
    speed at first overlap, or -1.0 when no overlap occurs."""
    uex = math.cos(epsi)
    uey = math.sin(epsi)
    uox = math.cos(opsi)
    uoy = math.sin(opsi)
    t_stop_o = ov / a_ov
    t_stop_e = t_r + ev / a_max
    t_end = t_stop_o if t_stop_o > t_stop_e else t_stop_e
    if t_end > 8.0:
        t_end = 8.0
    r_pre = 0.5 * math.hypot(ego_len, ego_wid) + 0.5 * math.hypot(oth_len, oth_wid)
    n = int(t_end / dt) + 1
    for k in range(n + 1):
        t = k * dt
        # ego distance travelled
        if t <= t_r:
            se = ev * t
            vet = ev
        elif t <= t_stop_e:
            te = t - t_r
            se = ev * t_r + ev * te - 0.5 * a_max * te * te
            vet = ev - a_max * te
        else:
            se = ev * t_r + 0.5 * ev * ev / a_max
            vet = 0.0
        # other distance travelled
        if t <= t_stop_o:
            so = ov * t - 0.5 * a_ov * t * t
            vot = ov - a_ov * t
        else:
            so = 0.5 * ov * ov / a_ov
            vot = 0.0
        pxe = ex + uex * se
        pye = ey + uey * se
        pxo = ox + uox * so
        pyo = oy + uoy * so
        ddx = pxo - pxe
        ddy = pyo - pye
        if ddx * ddx + ddy * ddy > r_pre * r_pre:
            continue
        if _rect_overlap(pxe, pye, epsi, ego_len, ego_wid, pxo, pyo, opsi, oth_len, oth_wid):
            rvx = vet * uex - vot * uox
            rvy = vet * uey - vot * uoy
            return math.hypot(rvx, rvy)
    return -1.0


@njit(cache=True, parallel=True)
def pragmatic_geometry(ego_traj, other_fut, ego_len, ego_wid, oth_len, oth_wid,
                       g_coll_scale, safe_scale, a_ov, a_max, t_r, dt,
                       coll_comp, safe_comp, coll_frac, coll_state, coll_sev):
    """Collision and safety-margin log components of the preference density.

    ego_traj: (B, H, 6); other_fut: (H, N, 6).  Collisions are absorbing per
    particle: once a particle collides at severity s, every later step keeps
    the penalty g_coll_scale * s.  coll_comp/safe_comp/coll_frac are (B, H)
    particle means; coll_state/coll_sev (B, N) hold each particle's absorbing
    status after the last step.
    """
    B, H = ego_traj.shape[0], ego_traj.shape[1]
    N = other_fut.shape[1]
    r_pre = 0.5 * math.hypot(ego_len, ego_wid) + 0.5 * math.hypot(oth_len, oth_wid)
    for b in prange(B):
        for t in range(H):
            coll_comp[b, t] = 0.0
            safe_comp[b, t] = 0.0
            coll_frac[b, t] = 0.0
        for n in range(N):
            collided = False
            sev = 0.0
            for t in range(H):
                ex = ego_traj[b, t, 0]
                ey = ego_traj[b, t, 1]
                epsi = ego_traj[b, t, 2]
                ev = ego_traj[b, t, 3]
                ox = other_fut[t, n, 0]
                oy = other_fut[t, n, 1]
                opsi = other_fut[t, n, 2]
                ov = other_fut[t, n, 3]
                if not collided:
                    dx = ox - ex
                    dy = oy - ey
                    if dx * dx + dy * dy <= r_pre * r_pre:
                        if _rect_overlap(ex, ey, epsi, ego_len, ego_wid,
                                         ox, oy, opsi, oth_len, oth_wid):
                            collided = True
                            rvx = ev * math.cos(epsi) - ov * math.cos(opsi)
                            rvy = ev * math.sin(epsi) - ov * math.sin(opsi)
                            sev = math.hypot(rvx, rvy)
                if collided:
                    coll_comp[b, t] += g_coll_scale * sev
                    coll_frac[b, t] += 1.0
                else:
                    # coarse reachability bound before the full counterfactual
                    dx = ox - ex
                    dy = oy - ey
                    reach = ev * t_r + 0.5 * ev * ev / a_max + 0.5 * ov * ov / a_ov + r_pre
                    if dx * dx + dy * dy <= reach * reach:
                        cf = _cf_unsafe(ex, ey, epsi, ev, ox, oy, opsi, ov,
                                        ego_len, ego_wid, oth_len, oth_wid,
                                        a_ov, a_max, t_r, dt)
                        if cf >= 0.0:
                            safe_comp[b, t] += safe_scale * cf
            coll_state[b, n] = 1 if collided else 0
            coll_sev[b, n] = sev
        inv = 1.0 / N
        for t in range(H):
            coll_comp[b, t] *= inv
            safe_comp[b, t] *= inv
            coll_frac[b, t] *= inv


@njit(cache=True)
def pragmatic_last_step(ego_last, other_last, prev_state, prev_sev,
                        ego_len, ego_wid, oth_len, oth_wid,
                        g_coll_scale, safe_scale, a_ov, a_max, t_r, dt,
                        coll_comp, safe_comp):
    """Collision / safety components for one appended step, continuing the
    absorbing per-particle collision state of a shared prefix.

    ego_last: (B, 6) candidate end states; other_last: (N, 6);
    prev_state/prev_sev: (N,) prefix outcome per particle.  Outputs (B,).
    """
    B = ego_last.shape[0]
    N = other_last.shape[0]
    r_pre = 0.5 * math.hypot(ego_len, ego_wid) + 0.5 * math.hypot(oth_len, oth_wid)
    for b in range(B):
        csum = 0.0
        ssum = 0.0
        ex = ego_last[b, 0]
        ey = ego_last[b, 1]
        epsi = ego_last[b, 2]
        ev = ego_last[b, 3]
        for n in range(N):
            if prev_state[n] == 1:
                csum += g_coll_scale * prev_sev[n]
                continue
            ox = other_last[n, 0]
            oy = other_last[n, 1]
            opsi = other_last[n, 2]
            ov = other_last[n, 3]
            dx = ox - ex
            dy = oy - ey
            hit = False
            if dx * dx + dy * dy <= r_pre * r_pre:
                hit = _rect_overlap(ex, ey, epsi, ego_len, ego_wid,
                                    ox, oy, opsi, oth_len, oth_wid)
            if hit:
                rvx = ev * math.cos(epsi) - ov * math.cos(opsi)
                rvy = ev * math.sin(epsi) - ov * math.sin(opsi)
                csum += g_coll_scale * math.hypot(rvx, rvy)
            else:
                reach = ev * t_r + 0.5 * ev * ev / a_max + 0.5 * ov * ov / a_ov + r_pre
                if dx * dx + dy * dy <= reach * reach:
                    cf = _cf_unsafe(ex, ey, epsi, ev, ox, oy, opsi, ov,
                                    ego_len, ego_wid, oth_len, oth_wid,
                                    a_ov, a_max, t_r, dt)
                    if cf >= 0.0:
                        ssum += safe_scale * cf
        coll_comp[b] = csum / N
        safe_comp[b] = ssum / N


@njit(cache=True, inline="always")
def _obs_one(xe, ye, pe, ve, ae, de, xo, yo, po, vo, ao, do,
             kr, L, oth_len, oth_wid, phidot_threshold, mode, gf, out, row):
    out[row, 0] = ve
    out[row, 1] = ae
    out[row, 2] = ye
    out[row, 3] = pe
    out[row, 4] = de
    dx = xo - xe
    dy = yo - ye
    d2 = dx * dx + dy * dy
    if d2 < 1e-4:
        d2 = 1e-4
    d = math.sqrt(d2)
    cpe = math.cos(pe)
    spe = math.sin(pe)
    cpo = math.cos(po)
    spo = math.sin(po)
    dvx = vo * cpo - ve * cpe
    dvy = vo * spo - ve * spe
    ddot = (dx * dvx + dy * dvy) / d
    closing = -ddot
    be = math.atan(kr * math.tan(de))
    psidot_e = ve * math.cos(be) * math.tan(de) / L
    bo = math.atan(kr * math.tan(do))
    psidot_o = vo * math.cos(bo) * math.tan(do) / L
    # acceleration vectors (centripetal term included, slip-rate ignored)
    aex = ae * cpe - ve * psidot_e * spe
    aey = ae * spe + ve * psidot_e * cpe
    aox = ao * cpo - vo * psidot_o * spo
    aoy = ao * spo + vo * psidot_o * cpo
    dax = aox - aex
    day = aoy - aey
    dddot = (dvx * dvx + dvy * dvy + dx * dax + dy * day) / d - ddot * ddot / d
    rel_accel = -dddot
    if mode == 0:
        ulx = dx / d
        uly = dy / d
        # extent projected perpendicular to the line of sight
        w_eff = oth_len * abs(cpo * (-uly) + spo * ulx) + oth_wid * abs(spo * uly + cpo * ulx)
        if w_eff < 1e-6:
            w_eff = 1e-6
        phi = 2.0 * math.atan(0.5 * w_eff / d)
        phidot = w_eff * closing / (d2 + 0.25 * w_eff * w_eff)
        bearing = math.atan2(dy, dx) - pe
        while bearing > math.pi:
            bearing -= 2.0 * math.pi
        while bearing < -math.pi:
            bearing += 2.0 * math.pi
        bearing_rate = (dx * dvy - dy * dvx) / d2 - psidot_e
        out[row, 5] = phi
        out[row, 7] = bearing
        out[row, 8] = bearing_rate
        if gf < 0:
            sub = abs(phidot) < phidot_threshold
        else:
            sub = gf == 0
        if sub:
            # imperceptible looming: motion channels read as a static scene
            out[row, 6] = 0.0
            out[row, 9] = 0.0
            out[row, 10] = 0.0
        else:
            out[row, 6] = phidot
            out[row, 9] = closing
            out[row, 10] = rel_accel
    else:
        lat = -dx * spe + dy * cpe
        lat_rate = -dvx * spe + dvy * cpe - psidot_e * (dx * cpe + dy * spe)
        out[row, 5] = d
        out[row, 6] = lat
        out[row, 7] = lat_rate
        out[row, 8] = closing
        out[row, 9] = rel_accel


@njit(cache=True, parallel=True)
def obs_means_pairs(ego, other, kr, L, oth_len, oth_wid,
                    phidot_threshold, mode, gate_fix, out):
    """Observation channel means for (K,) ego/other state pairs.

    mode 0: angular channels (visual angle, its rate, bearing, bearing rate)
    with threshold gating of the relative-motion channels; mode 1: direct
    metric channels, no gating.  gate_fix: -1 derive gating from the state,
    0 force sub-threshold, 1 force supra-threshold.  out: (K, C).
    """
    K = ego.shape[0]
    for i in prange(K):
        _obs_one(ego[i, 0], ego[i, 1], ego[i, 2], ego[i, 3], ego[i, 4], ego[i, 5],
                 other[i, 0], other[i, 1], other[i, 2], other[i, 3], other[i, 4],
                 other[i, 5], kr, L, oth_len, oth_wid, phidot_threshold, mode,
                 gate_fix[i], out, i)


@njit(cache=True)
def obs_means_one_vs_many(ego_row, other, kr, L, oth_len, oth_wid,
                          phidot_threshold, mode, out):
    """Channel means of one ego state against (N, 6) other states."""
    for n in range(other.shape[0]):
        _obs_one(ego_row[0], ego_row[1], ego_row[2], ego_row[3], ego_row[4],
                 ego_row[5], other[n, 0], other[n, 1], other[n, 2], other[n, 3],
                 other[n, 4], other[n, 5], kr, L, oth_len, oth_wid,
                 phidot_threshold, mode, -1, out, n)


@njit(cache=True, parallel=True)
def obs_means_grid(ego, other, kr, L, oth_len, oth_wid, phidot_threshold,
                   mode, out):
    """Observation channel means over a candidate grid: ego (B, H, 6) against
    other futures (H, N, 6) into out (B, H, N, C), gate derived per state."""
    B, H = ego.shape[0], ego.shape[1]
    for bh in prange(B * H):
        b = bh // H
        t = bh - b * H
        obs_means_one_vs_many(ego[b, t], other[t], kr, L, oth_len, oth_wid,
                              phidot_threshold, mode, out[b, t])


@njit(cache=True, inline="always")
def _epist_one(mu, eps, sigma, n_ego, zt, zo, d_row):
    """Information-gain estimate for one particle set: mu (N, C) channel
    means, eps (N, C) shared noise draws.  The first n_ego channels have
    identical means across particles (the ego rollout is shared), so their
    mixture contribution reduces to a closed form; the N x N cross
    evaluation runs over the remaining channels.  Equals the full-channel
    estimator up to floating-point reassociation."""
    N, C = mu.shape
    half_log2pi = 0.5 * math.log(2.0 * math.pi)
    # per shared channel the net of sample cross-entropy and ambiguity is
    # 0.5*mean(eps^2) - 0.5 (normalization and entropy cancel otherwise)
    ego_term = 0.0
    for c in range(n_ego):
        s2 = 0.0
        for m in range(N):
            s2 += eps[m, c] * eps[m, c]
        ego_term += 0.5 * s2 / N - 0.5
    lognorm_oth = 0.0
    ent_oth = 0.0
    for c in range(n_ego, C):
        lognorm_oth += math.log(sigma[c]) + half_log2pi
        ent_oth += 0.5 * math.log(2.0 * math.pi * math.e * sigma[c] * sigma[c])
    logn = math.log(N)
    co = C - n_ego
    for k in range(co):
        sg = sigma[n_ego + k]
        for n in range(N):
            zt[k, n] = mu[n, n_ego + k] / sg
    acc = 0.0
    for m in range(N):
        for k in range(co):
            zo[k] = zt[k, m] + eps[m, n_ego + k]
        for n in range(N):
            d_row[n] = 0.0
        for k in range(co):
            zok = zo[k]
            for n in range(N):
                diff = zok - zt[k, n]
                d_row[n] += diff * diff
        dmax = d_row[0]
        for n in range(1, N):
            if d_row[n] < dmax:
                dmax = d_row[n]
        ssum = 0.0
        for n in range(N):
            ssum += math.exp(-0.5 * (d_row[n] - dmax))
        acc += -0.5 * dmax + math.log(ssum) - lognorm_oth - logn
    return -(acc / N) - ent_oth + ego_term


@njit(cache=True, parallel=True)
def epistemic_from_means(mu, eps, sigma, n_ego, out):
    """Per-candidate information gain from means (B, N, C) and shared noise
    draws (N, C)."""
    B, N, C = mu.shape
    co = C - n_ego
    for b in prange(B):
        zt = np.empty((co, N))
        zo = np.empty(co)
        d_row = np.empty(N)
        out[b] = _epist_one(mu[b], eps, sigma, n_ego, zt, zo, d_row)


@njit(cache=True, parallel=True)
def epistemic_from_means_steps(mu, eps, H, sigma, n_ego, out):
    """Per (candidate, step) information gain over a flattened (B*H, N, C)
    batch where row bh uses the step draws eps[bh % H]."""
    BH, N, C = mu.shape
    co = C - n_ego
    for bh in prange(BH):
        zt = np.empty((co, N))
        zo = np.empty(co)
        d_row = np.empty(N)
        out[bh] = _epist_one(mu[bh], eps[bh % H], sigma, n_ego, zt, zo, d_row)


@njit(cache=True)
def piecewise_two_segment(tgrid, v, bgrid, sse, c_out, m_out):
    """Least-squares flat-then-sloped continuous fit errors per breakpoint.

    For each candidate breakpoint b: v(t) = c for t <= b, c + m (t - b) after.
    Fills sse/c/m arrays (one entry per breakpoint)."""
    n = tgrid.shape[0]
    for j in range(bgrid.shape[0]):
        b = bgrid[j]
        # regressor r = max(0, t - b); fit v = c + m r
        sr = 0.0
        srr = 0.0
        sv = 0.0
        srv = 0.0
        for i in range(n):
            r = tgrid[i] - b
            if r < 0.0:
                r = 0.0
            sr += r
            srr += r * r
            sv += v[i]
            srv += r * v[i]
        det = n * srr - sr * sr
        if det <= 1e-12:
            c = sv / n
            m = 0.0
        else:
            m = (n * srv - sr * sv) / det
            c = (sv - m * sr) / n
        err = 0.0
        for i in range(n):
            r = tgrid[i] - b
            if r < 0.0:
                r = 0.0
            e = v[i] - (c + m * r)
            err += e * e
        sse[j] = err
        c_out[j] = c
        m_out[j] = m
