"""Fused numba kernel for the flat-terrain control step (both contact
backends).  One call advances oscillators, foot-target mapping, IK and
physics through all 10 inner substeps for every environment.  Semantics
mirror the numpy reference path (oscillators.step_oscillators + kinematics
+ physics_step); parity tests hold the two paths together.  The numpy path
remains the fallback for heightfield terrain or when numba is missing.
"""

import numpy as np

from .kinematics import TORQUE_LIMIT
from . import physics
from .physics import JACOBIAN_REG, NORMAL_FORCE_CAP, SWING_LAG

try:
    from numba import njit
    AVAILABLE = True
except ImportError:  # pragma: no cover
    AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True, inline="always")
def _ik(px, py, pz, off, l1, l2):
    rho_sq = py * py + pz * pz
    zp_sq = rho_sq - off * off
    if zp_sq < 0.0:
        zp_sq = 0.0
    zp = -np.sqrt(zp_sq)
    q1 = np.arctan2(pz, py) - np.arctan2(zp, off)
    if q1 > np.pi:
        q1 -= 2.0 * np.pi
    elif q1 < -np.pi:
        q1 += 2.0 * np.pi
    lsq = px * px + zp_sq
    length = np.sqrt(lsq)
    l_lo = abs(l1 - l2)
    l_hi = l1 + l2
    target = length
    if target < l_lo:
        target = l_lo
    elif target > l_hi:
        target = l_hi
    if length > 0.0:
        scale = target / (length if length > 1e-300 else 1e-300)
    else:
        scale = 1.0
    xp = px * scale
    zp = zp * scale
    cos_q3 = (target * target - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    if cos_q3 > 1.0:
        cos_q3 = 1.0
    elif cos_q3 < -1.0:
        cos_q3 = -1.0
    q3 = -np.arccos(cos_q3)
    q2 = np.arctan2(-xp, -zp) - np.arctan2(l2 * np.sin(q3), l1 + l2 * np.cos(q3))
    if q2 > np.pi:
        q2 -= 2.0 * np.pi
    elif q2 < -np.pi:
        q2 += 2.0 * np.pi
    return q1, q2, q3


@njit(cache=True, inline="always")
def _fk(q1, q2, q3, off, l1, l2):
    q23 = q2 + q3
    xp = -l1 * np.sin(q2) - l2 * np.sin(q23)
    zp = -l1 * np.cos(q2) - l2 * np.cos(q23)
    c1 = np.cos(q1)
    s1 = np.sin(q1)
    return xp, c1 * off - s1 * zp, s1 * off + c1 * zp


@njit(cache=True, inline="always")
def _foot_force(q1, q2, q3, off, l1, l2, t0, t1, t2):
    """Solve (J J^T + eps I) F = J tau for the foot-on-ground force."""
    q23 = q2 + q3
    c1 = np.cos(q1)
    s1 = np.sin(q1)
    s2 = np.sin(q2)
    c2 = np.cos(q2)
    s23 = np.sin(q23)
    c23 = np.cos(q23)
    xp = -l1 * s2 - l2 * s23
    zp = -l1 * c2 - l2 * c23
    py = c1 * off - s1 * zp
    pz = s1 * off + c1 * zp
    dx2 = -l1 * c2 - l2 * c23
    dz2 = l1 * s2 + l2 * s23
    dx3 = -l2 * c23
    dz3 = l2 * s23
    j00, j01, j02 = 0.0, dx2, dx3
    j10, j11, j12 = -pz, -s1 * dz2, -s1 * dz3
    j20, j21, j22 = py, c1 * dz2, c1 * dz3
    a = j00 * j00 + j01 * j01 + j02 * j02 + JACOBIAN_REG
    b = j00 * j10 + j01 * j11 + j02 * j12
    c = j00 * j20 + j01 * j21 + j02 * j22
    d = j10 * j10 + j11 * j11 + j12 * j12 + JACOBIAN_REG
    e = j10 * j20 + j11 * j21 + j12 * j22
    f = j20 * j20 + j21 * j21 + j22 * j22 + JACOBIAN_REG
    x = j00 * t0 + j01 * t1 + j02 * t2
    y = j10 * t0 + j11 * t1 + j12 * t2
    z = j20 * t0 + j21 * t1 + j22 * t2
    ca = d * f - e * e
    cb = c * e - b * f
    cc = b * e - c * d
    det = a * ca + b * cb + c * cc
    inv = 1.0 / det
    cd = a * f - c * c
    ce = b * c - a * e
    cf = a * d - b * b
    return ((ca * x + cb * y + cc * z) * inv,
            (cb * x + cd * y + ce * z) * inv,
            (cc * x + ce * y + cf * z) * inv)


@njit(cache=True)
def _kernel(n_sub, dt, n, backend, impulse_beta, impulse_bias_max,
            r, r_dot, theta, theta_dot, phi, phi_dot,
            mu, freq, psi, conv_a,
            shape_h, shape_gc, d_step, g_p,
            leg_off, leg_l1, leg_l2, mounts, stance_off_y,
            kp, kd, mass, inertia, friction, payload, gravity,
            k_contact, c_contact, ang_damp,
            pos, quat, vel, omega, q, q_dot, q_track, foot_pos, contact,
            anchor, penetration, contact_force, ik_clamped, time_arr, diverged,
            last_tau):
    two_pi = 2.0 * np.pi
    alpha = 1.0 - np.exp(-dt / SWING_LAG)
    decay = np.exp(-0.5 * conv_a * dt)
    pee = decay * (1.0 + 0.5 * conv_a * dt)
    pde = decay * dt
    ped = decay * (-0.25 * conv_a * conv_a * dt)
    pdd = decay * (1.0 - 0.5 * conv_a * dt)

    # per-leg scratch, reused across envs and substeps
    pen_l = np.empty(4)
    in_c_l = np.empty(4, dtype=np.bool_)
    fwx_l = np.empty(4)
    fwy_l = np.empty(4)
    fwz_l = np.empty(4)
    ftx_l = np.empty(4)
    fty_l = np.empty(4)
    fn_l = np.empty(4)
    accum = np.empty(4)
    bias = np.empty(4)

    for _ in range(n_sub):
        for e in range(n):
            # --- oscillators ---
            for l in range(4):
                err = r[e, l] - mu[e, l]
                new_err = pee * err + pde * r_dot[e, l]
                new_rd = ped * err + pdd * r_dot[e, l]
                new_r = new_err + mu[e, l]
                if new_r < 0.0:
                    new_r = 0.0
                    if new_rd < 0.0:
                        new_rd = 0.0
                r[e, l] = new_r
                r_dot[e, l] = new_rd
                td = two_pi * freq[e, l]
                th = theta[e, l] + dt * td
                if th >= two_pi:
                    th -= two_pi
                elif th < 0.0:
                    th += two_pi
                theta[e, l] = th
                theta_dot[e, l] = td
                pd_ = two_pi * psi[e, l]
                ph = phi[e, l] + dt * pd_
                if ph >= two_pi:
                    ph -= two_pi
                elif ph < 0.0:
                    ph += two_pi
                phi[e, l] = ph
                phi_dot[e, l] = pd_

            qw, qx, qy, qz = quat[e, 0], quat[e, 1], quat[e, 2], quat[e, 3]
            r00 = 1.0 - 2.0 * (qy * qy + qz * qz)
            r01 = 2.0 * (qx * qy - qw * qz)
            r02 = 2.0 * (qx * qz + qw * qy)
            r10 = 2.0 * (qx * qy + qw * qz)
            r11 = 1.0 - 2.0 * (qx * qx + qz * qz)
            r12 = 2.0 * (qy * qz - qw * qx)
            r20 = 2.0 * (qx * qz - qw * qy)
            r21 = 2.0 * (qy * qz + qw * qx)
            r22 = 1.0 - 2.0 * (qx * qx + qy * qy)

            # --- pass 1: per-leg kinematics, torques, tangential demand ---
            for l in range(4):
                step = -d_step * (r[e, l] - 1.0) * np.cos(theta[e, l])
                s_th = np.sin(theta[e, l])
                if s_th > 0.0:
                    tz = -shape_h[e] + shape_gc[e] * s_th
                else:
                    tz = -shape_h[e] + g_p * s_th
                tx = step * np.cos(phi[e, l])
                ty = step * np.sin(phi[e, l]) + stance_off_y[l]

                off = leg_off[l]
                l1 = leg_l1[l]
                l2 = leg_l2[l]
                qd0, qd1, qd2 = _ik(tx, ty, tz, off, l1, l2)

                j = 3 * l
                qt0 = q_track[e, j] + alpha * (qd0 - q_track[e, j])
                qt1 = q_track[e, j + 1] + alpha * (qd1 - q_track[e, j + 1])
                qt2 = q_track[e, j + 2] + alpha * (qd2 - q_track[e, j + 2])
                dq_sh0 = (qt0 - q_track[e, j]) / dt
                dq_sh1 = (qt1 - q_track[e, j + 1]) / dt
                dq_sh2 = (qt2 - q_track[e, j + 2]) / dt
                q_track[e, j] = qt0
                q_track[e, j + 1] = qt1
                q_track[e, j + 2] = qt2

                t0 = kp * (qd0 - q[e, j]) - kd * q_dot[e, j]
                t1 = kp * (qd1 - q[e, j + 1]) - kd * q_dot[e, j + 1]
                t2 = kp * (qd2 - q[e, j + 2]) - kd * q_dot[e, j + 2]
                if t0 > TORQUE_LIMIT:
                    t0 = TORQUE_LIMIT
                elif t0 < -TORQUE_LIMIT:
                    t0 = -TORQUE_LIMIT
                if t1 > TORQUE_LIMIT:
                    t1 = TORQUE_LIMIT
                elif t1 < -TORQUE_LIMIT:
                    t1 = -TORQUE_LIMIT
                if t2 > TORQUE_LIMIT:
                    t2 = TORQUE_LIMIT
                elif t2 < -TORQUE_LIMIT:
                    t2 = -TORQUE_LIMIT
                last_tau[e, j] = t0
                last_tau[e, j + 1] = t1
                last_tau[e, j + 2] = t2

                sx, sy, sz = _fk(qt0, qt1, qt2, off, l1, l2)
                bx = mounts[l, 0] + sx
                by = mounts[l, 1] + sy
                bz = mounts[l, 2] + sz
                wx = pos[e, 0] + r00 * bx + r01 * by + r02 * bz
                wy = pos[e, 1] + r10 * bx + r11 * by + r12 * bz
                wz = pos[e, 2] + r20 * bx + r21 * by + r22 * bz

                pen = -wz  # flat terrain
                in_c = pen >= 0.0
                if in_c and not contact[e, l]:
                    anchor[e, l, 0] = wx
                    anchor[e, l, 1] = wy
                if in_c:
                    fwx = anchor[e, l, 0]
                    fwy = anchor[e, l, 1]
                else:
                    fwx = wx
                    fwy = wy
                fwz = wz

                if in_c:
                    rx = fwx - pos[e, 0]
                    ry = fwy - pos[e, 1]
                    rz = fwz - pos[e, 2]
                    hx = r00 * rx + r10 * ry + r20 * rz - mounts[l, 0]
                    hy = r01 * rx + r11 * ry + r21 * rz - mounts[l, 1]
                    hz = r02 * rx + r12 * ry + r22 * rz - mounts[l, 2]
                    qn0, qn1, qn2 = _ik(hx, hy, hz, off, l1, l2)
                    rho_sq = hy * hy + hz * hz
                    lsq = hx * hx + max(rho_sq - off * off, 0.0)
                    ll = np.sqrt(lsq)
                    ik_clamped[e, l] = (rho_sq < off * off) or (ll > l1 + l2 + 1e-12) \
                        or (ll < abs(l1 - l2) - 1e-12)
                    dq0 = (qn0 - q[e, j]) / dt
                    dq1 = (qn1 - q[e, j + 1]) / dt
                    dq2 = (qn2 - q[e, j + 2]) / dt
                else:
                    qn0, qn1, qn2 = qt0, qt1, qt2
                    ik_clamped[e, l] = False
                    dq0, dq1, dq2 = dq_sh0, dq_sh1, dq_sh2

                q[e, j] = qn0
                q[e, j + 1] = qn1
                q[e, j + 2] = qn2
                q_dot[e, j] = dq0
                q_dot[e, j + 1] = dq1
                q_dot[e, j + 2] = dq2

                ftx = 0.0
                fty = 0.0
                if in_c:
                    fex, fey, fez = _foot_force(qn0, qn1, qn2, off, l1, l2,
                                                t0, t1, t2)
                    ftx = -(r00 * fex + r01 * fey + r02 * fez)
                    fty = -(r10 * fex + r11 * fey + r12 * fez)
                pen_l[l] = pen
                in_c_l[l] = in_c
                fwx_l[l] = fwx
                fwy_l[l] = fwy
                fwz_l[l] = fwz
                ftx_l[l] = ftx
                fty_l[l] = fty

            # --- normal forces per backend ---
            m_tot = mass[e] + payload[e]
            iscale = m_tot / mass[e]
            ix = inertia[e, 0] * iscale
            iy = inertia[e, 1] * iscale
            iz = inertia[e, 2] * iscale
            if backend == 0:
                for l in range(4):
                    fn = 0.0
                    if in_c_l[l]:
                        pen_rate = (pen_l[l] - penetration[e, l]) / dt
                        fn = k_contact * pen_l[l] + c_contact * pen_rate
                        if fn < 0.0:
                            fn = 0.0
                        elif fn > NORMAL_FORCE_CAP:
                            fn = NORMAL_FORCE_CAP
                    fn_l[l] = fn
            else:
                # velocity-level impulses: stop contact points from sinking
                vz_loc = vel[e, 2]
                owx = r00 * omega[e, 0] + r01 * omega[e, 1] + r02 * omega[e, 2]
                owy = r10 * omega[e, 0] + r11 * omega[e, 1] + r12 * omega[e, 2]
                owz = r20 * omega[e, 0] + r21 * omega[e, 1] + r22 * omega[e, 2]
                for l in range(4):
                    accum[l] = 0.0
                    p = pen_l[l] if pen_l[l] > 0.0 else 0.0
                    b_ = impulse_beta * p
                    bias[l] = b_ if b_ < impulse_bias_max else impulse_bias_max
                for _pass in range(2):
                    for l in range(4):
                        if not in_c_l[l]:
                            continue
                        rx = fwx_l[l] - pos[e, 0]
                        ry = fwy_l[l] - pos[e, 1]
                        rz = fwz_l[l] - pos[e, 2]
                        # r x z_hat in world, then I^-1 applied in body frame
                        nx_ = ry
                        ny_ = -rx
                        bx_ = r00 * nx_ + r10 * ny_
                        by_ = r01 * nx_ + r11 * ny_
                        bz_ = r02 * nx_ + r12 * ny_
                        bx_ /= ix
                        by_ /= iy
                        bz_ /= iz
                        iwx = r00 * bx_ + r01 * by_ + r02 * bz_
                        iwy = r10 * bx_ + r11 * by_ + r12 * bz_
                        ang = iwx * ry - iwy * rx
                        if ang < 0.0:
                            ang = 0.0
                        m_eff = 1.0 / (1.0 / m_tot + ang)
                        v_pz = vz_loc + owx * ry - owy * rx
                        want = m_eff * (bias[l] - v_pz)
                        new_acc = accum[l] + want
                        if new_acc < 0.0:
                            new_acc = 0.0
                        dp = new_acc - accum[l]
                        accum[l] = new_acc
                        vz_loc += dp / m_tot
                        bx_ = (r00 * nx_ + r10 * ny_) * dp / ix
                        by_ = (r01 * nx_ + r11 * ny_) * dp / iy
                        bz_ = (r02 * nx_ + r12 * ny_) * dp / iz
                        owx += r00 * bx_ + r01 * by_ + r02 * bz_
                        owy += r10 * bx_ + r11 * by_ + r12 * bz_
                        owz += r20 * bx_ + r21 * by_ + r22 * bz_
                for l in range(4):
                    fn_l[l] = accum[l] / dt

            # --- friction cone, force/torque accumulation ---
            fx_sum = 0.0
            fy_sum = 0.0
            fz_sum = 0.0
            tx_sum = 0.0
            ty_sum = 0.0
            tz_sum = 0.0
            for l in range(4):
                fn = fn_l[l]
                ftx = ftx_l[l]
                fty = fty_l[l]
                if in_c_l[l]:
                    t_norm = np.sqrt(ftx * ftx + fty * fty)
                    t_max = friction[e] * fn
                    if t_norm > t_max:
                        s = t_max / (t_norm if t_norm > 1e-12 else 1e-12)
                        ftx *= s
                        fty *= s
                else:
                    ftx = 0.0
                    fty = 0.0
                    fn = 0.0
                contact[e, l] = in_c_l[l]
                penetration[e, l] = pen_l[l] if in_c_l[l] else 0.0
                contact_force[e, l, 0] = ftx
                contact_force[e, l, 1] = fty
                contact_force[e, l, 2] = fn
                foot_pos[e, l, 0] = fwx_l[l]
                foot_pos[e, l, 1] = fwy_l[l]
                foot_pos[e, l, 2] = fwz_l[l]
                fx_sum += ftx
                fy_sum += fty
                fz_sum += fn
                lx = fwx_l[l] - pos[e, 0]
                ly = fwy_l[l] - pos[e, 1]
                lz = fwz_l[l] - pos[e, 2]
                tx_sum += ly * fn - lz * fty
                ty_sum += lz * ftx - lx * fn
                tz_sum += lx * fty - ly * ftx

            # --- trunk integration ---
            ax = fx_sum / m_tot
            ay = fy_sum / m_tot
            az = fz_sum / m_tot - gravity

            tbx = r00 * tx_sum + r10 * ty_sum + r20 * tz_sum - ang_damp * omega[e, 0]
            tby = r01 * tx_sum + r11 * ty_sum + r21 * tz_sum - ang_damp * omega[e, 1]
            tbz = r02 * tx_sum + r12 * ty_sum + r22 * tz_sum - ang_damp * omega[e, 2]
            ox, oy, oz = omega[e, 0], omega[e, 1], omega[e, 2]
            gx = oy * iz * oz - oz * iy * oy
            gy = oz * ix * ox - ox * iz * oz
            gz = ox * iy * oy - oy * ix * ox
            od_x = (tbx - gx) / ix
            od_y = (tby - gy) / iy
            od_z = (tbz - gz) / iz

            vel[e, 0] += dt * ax
            vel[e, 1] += dt * ay
            vel[e, 2] += dt * az
            pos[e, 0] += dt * vel[e, 0]
            pos[e, 1] += dt * vel[e, 1]
            pos[e, 2] += dt * vel[e, 2]
            omega[e, 0] = ox + dt * od_x
            omega[e, 1] = oy + dt * od_y
            omega[e, 2] = oz + dt * od_z

            rvx = omega[e, 0] * dt
            rvy = omega[e, 1] * dt
            rvz = omega[e, 2] * dt
            angle = np.sqrt(rvx * rvx + rvy * rvy + rvz * rvz)
            if angle < 1e-12:
                dw, dx, dy, dz = 1.0, 0.5 * rvx, 0.5 * rvy, 0.5 * rvz
            else:
                half = 0.5 * angle
                s = np.sin(half) / angle
                dw = np.cos(half)
                dx = rvx * s
                dy = rvy * s
                dz = rvz * s
            nw = qw * dw - qx * dx - qy * dy - qz * dz
            nx = qw * dx + qx * dw + qy * dz - qz * dy
            ny = qw * dy - qx * dz + qy * dw + qz * dx
            nz = qw * dz + qx * dy - qy * dx + qz * dw
            norm = np.sqrt(nw * nw + nx * nx + ny * ny + nz * nz)
            quat[e, 0] = nw / norm
            quat[e, 1] = nx / norm
            quat[e, 2] = ny / norm
            quat[e, 3] = nz / norm

            time_arr[e] += dt
            check = pos[e, 0] + pos[e, 1] + pos[e, 2] + quat[e, 0]
            speed_sq = vel[e, 0] ** 2 + vel[e, 1] ** 2 + vel[e, 2] ** 2
            for j in range(12):
                check += q[e, j]
            check += omega[e, 0] + omega[e, 1] + omega[e, 2] + speed_sq
            if not np.isfinite(check) or speed_sq > 1e4:
                diverged[e] = True


def control_step(sim, osc, command, params, geometry, stance_off, shape_h,
                 shape_gc, d_step, g_p, gains, last_tau, n_sub=10, dt=1e-3,
                 conv_a=150.0, backend="spring"):
    """Drive the fused kernel from the environment's state containers."""
    from .kinematics import _packed
    off, l1, l2 = _packed(geometry)[:3]
    _kernel(n_sub, dt, sim.n, 0 if backend == "spring" else 1,
            physics.IMPULSE_BETA, physics.IMPULSE_BIAS_MAX,
            osc.r, osc.r_dot, osc.theta, osc.theta_dot, osc.phi, osc.phi_dot,
            command.mu, command.freq, command.psi, conv_a,
            shape_h, shape_gc, d_step, g_p,
            off, l1, l2, geometry.mounts, stance_off[:, 1],
            gains.kp, gains.kd, params.mass, params.inertia, params.friction,
            params.payload, params.gravity, params.contact_stiffness,
            params.contact_damping, params.angular_damping,
            sim.pos, sim.quat, sim.vel, sim.omega, sim.q, sim.q_dot,
            sim.q_track, sim.foot_pos, sim.contact, sim.anchor,
            sim.penetration, sim.contact_force, sim.ik_clamped, sim.time,
            sim.diverged, last_tau)
