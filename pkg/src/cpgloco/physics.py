"""Reduced-order quadruped physics, vectorized over N independent robots.

Model: a 6-DOF rigid trunk carried by four massless kinematic legs with
point feet.  Joint-PD torques map through leg Jacobians to stance-foot
ground-reaction forces; the normal component comes from spring-damper
ground penetration and the tangential component is clamped to the friction
cone.  Swing legs track their kinematic targets through a first-order lag.
While a foot is in contact its world xy is pinned to the touchdown anchor
(joints follow from inverse kinematics), which is what lets PD tracking
error against the sweeping foot target propel and brake the trunk.

Two contact backends are selectable: "spring" (penalty normal force) and
"impulse" (velocity-level non-penetration impulses with a Coulomb clamp),
the stand-in for evaluating one policy under a second physics engine.
"""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import (PdGains, RobotGeometry, TrajectoryShape, all_legs_fk,
                         all_legs_ik, all_legs_jacobian, stance_offsets,
                         HEIGHT_RANGE, CLEARANCE_RANGE)
from .rotation import (quat_from_yaw, quat_identity, quat_integrate,
                       quat_rotate, quat_rotate_inverse, quat_to_matrix,
                       roll_pitch)
from .terrain import Terrain

GRAVITY = 9.81
NOMINAL_MASS = 12.0                       # kg, trunk with leg masses folded in
NOMINAL_INERTIA = (0.072, 0.144, 0.187)   # kg*m^2, box approximation
CONTACT_BACKENDS = ("spring", "impulse")

FALL_HEIGHT = 0.12        # m above local terrain
FALL_TILT = 1.0           # rad, roll or pitch
SWING_LAG = 0.02          # s, first-order lag on kinematic tracking
JACOBIAN_REG = 1e-6       # Tikhonov term for the force map near singularities
IMPULSE_BETA = 6.0        # 1/s, positional stabilization rate (impulse backend)
IMPULSE_BIAS_MAX = 0.10   # m/s, cap on the stabilization velocity
NORMAL_FORCE_CAP = 500.0  # N per foot, keeps penalty impacts bounded


@dataclass
class RandomizationConfig:
    """Episode-constant domain randomization ranges."""

    friction_range: tuple = (0.3, 1.0)
    limb_mass_scale: float = 0.20          # +/- fraction on inertia
    added_mass_range: tuple = (0.0, 5.0)   # kg
    push_magnitude: float = 0.5            # m/s
    push_interval: float = 15.0            # s
    enabled: bool = True

    def __post_init__(self):
        for lo, hi in (self.friction_range, self.added_mass_range):
            if lo > hi:
                raise ValueError("randomization ranges must be well-ordered")
        if min(self.limb_mass_scale, self.push_magnitude, self.push_interval) < 0:
            raise ValueError("randomization magnitudes must be >= 0")
        if self.added_mass_range[0] < 0 or self.friction_range[0] < 0:
            raise ValueError("randomization magnitudes must be >= 0")


@dataclass
class PhysicalParams:
    """Per-robot physical parameters; arrays are shaped (n,)."""

    mass: np.ndarray
    inertia: np.ndarray          # (n, 3) diagonal, already limb-mass scaled
    friction: np.ndarray
    payload: np.ndarray          # kg, runtime adjustable
    gravity: float = GRAVITY
    angular_damping: float = 4.0       # N*m*s/rad, reduced-order dissipation
    contact_stiffness: float = 1.0e4   # N/m
    contact_damping: float = 400.0     # N*s/m

    def __post_init__(self):
        if np.any(self.mass <= 0):
            raise ValueError("mass must be positive")
        if self.contact_stiffness < 0 or self.contact_damping < 0:
            raise ValueError("contact parameters must be >= 0")

    @classmethod
    def nominal(cls, n=1, friction=0.8):
        return cls(
            mass=np.full(n, NOMINAL_MASS),
            inertia=np.tile(np.asarray(NOMINAL_INERTIA), (n, 1)),
            friction=np.full(n, friction),
            payload=np.zeros(n),
        )

    @property
    def total_mass(self):
        return self.mass + self.payload

    def effective_inertia(self):
        # strapped-on payload scales the box inertia with total mass
        return self.inertia * (self.total_mass / self.mass)[:, None]


@dataclass
class SimState:
    """Batched simulator state for n robots."""

    pos: np.ndarray            # (n, 3) trunk position, world
    quat: np.ndarray           # (n, 4) body->world, wxyz
    vel: np.ndarray            # (n, 3) trunk linear velocity, world
    omega: np.ndarray          # (n, 3) trunk angular velocity, body
    q: np.ndarray              # (n, 12) joint positions
    q_dot: np.ndarray          # (n, 12)
    q_track: np.ndarray        # (n, 12) lag-filtered kinematic reference
    foot_pos: np.ndarray       # (n, 4, 3) world foot positions
    contact: np.ndarray        # (n, 4) bool
    anchor: np.ndarray         # (n, 4, 2) world xy of stance feet
    penetration: np.ndarray    # (n, 4) last ground penetration (m, >= 0)
    contact_force: np.ndarray  # (n, 4, 3) world ground-reaction forces
    ik_clamped: np.ndarray     # (n, 4) bool, workspace clamp flags
    time: np.ndarray           # (n,)
    diverged: np.ndarray       # (n,) bool

    @classmethod
    def zeros(cls, n):
        return cls(
            pos=np.zeros((n, 3)), quat=quat_identity((n,)), vel=np.zeros((n, 3)),
            omega=np.zeros((n, 3)), q=np.zeros((n, 12)), q_dot=np.zeros((n, 12)),
            q_track=np.zeros((n, 12)), foot_pos=np.zeros((n, 4, 3)),
            contact=np.zeros((n, 4), dtype=bool), anchor=np.zeros((n, 4, 2)),
            penetration=np.zeros((n, 4)), contact_force=np.zeros((n, 4, 3)),
            ik_clamped=np.zeros((n, 4), dtype=bool), time=np.zeros(n),
            diverged=np.zeros(n, dtype=bool),
        )

    @property
    def n(self):
        return self.pos.shape[0]

    def copy(self):
        return SimState(**{k: getattr(self, k).copy() for k in self.__dataclass_fields__})

    def write_slice(self, i, other):
        """Copy robot 0 of `other` into slot i."""
        for k in self.__dataclass_fields__:
            getattr(self, k)[i] = getattr(other, k)[0]

    def is_finite(self):
        return (np.isfinite(self.pos).all(axis=1) & np.isfinite(self.vel).all(axis=1)
                & np.isfinite(self.quat).all(axis=1) & np.isfinite(self.omega).all(axis=1)
                & np.isfinite(self.q).all(axis=1) & np.isfinite(self.q_dot).all(axis=1))

    def feet_in_hip_frame(self, geometry):
        """World foot positions expressed per leg in the hip (leg) frame."""
        rel = self.foot_pos - self.pos[:, None, :]
        body = quat_rotate_inverse(self.quat[:, None, :], rel)
        return body - geometry.mounts[None, :, :]


def _solve_foot_force(jac, tau_leg):
    """Force the foot exerts on the ground for joint torques tau (hip frame).

    Solves J^T F = tau through the regularized normal equations
    F = (J J^T + eps I)^(-1) J tau, bounded near singular legs.  The SPD
    3x3 system is inverted in closed form (adjugate over determinant).
    """
    j0 = jac[..., 0, :]
    j1 = jac[..., 1, :]
    j2 = jac[..., 2, :]
    a = (j0 * j0).sum(-1) + JACOBIAN_REG
    b = (j0 * j1).sum(-1)
    c = (j0 * j2).sum(-1)
    d = (j1 * j1).sum(-1) + JACOBIAN_REG
    e = (j1 * j2).sum(-1)
    f = (j2 * j2).sum(-1) + JACOBIAN_REG
    r0 = (jac[..., :, 0] * tau_leg[..., 0:1] + jac[..., :, 1] * tau_leg[..., 1:2]
          + jac[..., :, 2] * tau_leg[..., 2:3])
    x, y, z = r0[..., 0], r0[..., 1], r0[..., 2]
    ca = d * f - e * e
    cb = c * e - b * f
    cc = b * e - c * d
    det = a * ca + b * cb + c * cc
    inv = 1.0 / det
    cd = a * f - c * c
    ce = b * c - a * e
    cf = a * d - b * b
    out = np.empty_like(r0)
    out[..., 0] = (ca * x + cb * y + cc * z) * inv
    out[..., 1] = (cb * x + cd * y + ce * z) * inv
    out[..., 2] = (cc * x + ce * y + cf * z) * inv
    return out


def _cross(a, b):
    """Cross product on (..., 3) arrays without numpy.cross overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def physics_step(state, q_des, params, dt=1e-3, *, geometry=None, terrain=None,
                 gains=None, backend="spring"):
    """Advance all robots by one inner step (default 1 kHz).  Mutates state.

    Sequence: PD torques from the current joint state; kinematic tracking of
    the lag-filtered targets; contact/anchor bookkeeping; stance forces
    (tangential from -J^-T tau clamped to the friction cone, normal per
    backend); Newton-Euler trunk integration; contact refresh.
    """
    if not (0.0 < dt <= 0.002):
        raise ValueError(f"dt must be in (0, 0.002], got {dt}")
    if backend not in CONTACT_BACKENDS:
        raise ValueError(f"unknown contact backend {backend!r}")
    geometry = geometry or _DEFAULT_GEOMETRY
    terrain = terrain or _FLAT
    gains = gains or _DEFAULT_GAINS
    n = state.n

    tau = gains.kp * (q_des - state.q) - gains.kd * state.q_dot
    np.clip(tau, -33.5, 33.5, out=tau)

    # kinematic reference follows the commanded targets with a 20 ms lag
    alpha = 1.0 - np.exp(-dt / SWING_LAG)
    q_track_prev = state.q_track
    q_track = q_track_prev + alpha * (q_des - q_track_prev)

    rot = quat_to_matrix(state.quat)
    q_track_legs = q_track.reshape(n, 4, 3)
    shadow_hip = all_legs_fk(q_track_legs, geometry)
    shadow_world = state.pos[:, None, :] + np.einsum(
        "nij,nlj->nli", rot, geometry.mounts[None, :, :] + shadow_hip)

    if terrain.kind == "flat":
        pen = -shadow_world[..., 2]
    else:
        pen = terrain.height(shadow_world[..., 0], shadow_world[..., 1]) \
            - shadow_world[..., 2]
    in_contact = pen >= 0.0

    fresh = in_contact & ~state.contact
    if np.any(fresh):
        state.anchor[fresh] = shadow_world[fresh][:, :2]

    foot_world = shadow_world.copy()
    foot_world[..., 0] = np.where(in_contact, state.anchor[..., 0], foot_world[..., 0])
    foot_world[..., 1] = np.where(in_contact, state.anchor[..., 1], foot_world[..., 1])

    # actual joints: stance legs hold the anchored foot via IK, swing legs track
    rel = foot_world - state.pos[:, None, :]
    hip_targets = np.einsum("nji,nlj->nli", rot, rel) - geometry.mounts[None, :, :]
    q_ik, clamped = all_legs_ik(hip_targets, geometry)
    q_legs = np.where(in_contact[..., None], q_ik, q_track_legs)
    q_new = q_legs.reshape(n, 12)

    dq_actual = (q_new - state.q) / dt
    dq_shadow = (q_track - q_track_prev) / dt
    contact12 = np.broadcast_to(in_contact[:, :, None], (n, 4, 3)).reshape(n, 12)
    q_dot_new = np.where(contact12, dq_actual, dq_shadow)

    # stance ground-reaction forces
    jac = all_legs_jacobian(q_legs, geometry)
    tau_legs = tau.reshape(n, 4, 3)
    f_ext_hip = _solve_foot_force(jac, tau_legs)
    reaction = -np.einsum("nij,nlj->nli", rot, f_ext_hip)

    pen_rate = (pen - state.penetration) / dt
    pen_pos = np.maximum(pen, 0.0)
    if backend == "spring":
        f_n = np.maximum(params.contact_stiffness * pen_pos
                         + params.contact_damping * pen_rate, 0.0)
        f_n = np.where(in_contact, np.minimum(f_n, NORMAL_FORCE_CAP), 0.0)
    else:
        f_n = _impulse_normal_forces(state, params, foot_world, pen_pos, in_contact, dt)

    f_t = reaction[..., :2]
    t_norm = np.sqrt(f_t[..., 0] ** 2 + f_t[..., 1] ** 2)
    t_max = params.friction[:, None] * f_n
    scale = np.where(t_norm > t_max, t_max / np.maximum(t_norm, 1e-12), 1.0)
    f_t = f_t * scale[..., None]

    force = np.zeros((n, 4, 3))
    force[..., :2] = np.where(in_contact[..., None], f_t, 0.0)
    force[..., 2] = f_n

    m_tot = params.total_mass
    accel = force.sum(axis=1) / m_tot[:, None]
    accel[:, 2] -= params.gravity

    lever = foot_world - state.pos[:, None, :]
    torque_world = _cross(lever, force).sum(axis=1)
    inertia = params.effective_inertia()
    omega = state.omega
    torque_body = np.einsum("nji,nj->ni", rot, torque_world) \
        - params.angular_damping * omega
    omega_dot = (torque_body - _cross(omega, inertia * omega)) / inertia

    state.vel = state.vel + dt * accel
    state.pos = state.pos + dt * state.vel
    state.omega = omega + dt * omega_dot
    state.quat = quat_integrate(state.quat, state.omega, dt)

    state.q = q_new
    state.q_dot = q_dot_new
    state.q_track = q_track
    state.foot_pos = foot_world
    state.contact = in_contact
    state.penetration = np.where(in_contact, pen_pos, 0.0)
    state.contact_force = force
    state.ik_clamped = clamped & in_contact
    state.time = state.time + dt

    speed_sq = (state.vel * state.vel).sum(axis=1)
    checksum = state.pos.sum(axis=1) + speed_sq + state.quat.sum(axis=1) \
        + state.q.sum(axis=1) + state.omega.sum(axis=1)
    state.diverged = state.diverged | ~np.isfinite(checksum) | (speed_sq > 1e4)
    return state


def _impulse_normal_forces(state, params, foot_world, pen, in_contact, dt):
    """Velocity-level normal forces: sequential impulses that stop the trunk
    contact points from moving down, with a capped push-out bias."""
    n = state.n
    m_tot = params.total_mass
    inertia = params.effective_inertia()
    vel = state.vel.copy()
    omega_w = quat_rotate(state.quat, state.omega)
    accum = np.zeros((n, 4))
    bias = np.minimum(IMPULSE_BETA * pen, IMPULSE_BIAS_MAX)

    for _ in range(2):
        for leg in range(4):
            active = in_contact[:, leg]
            r = foot_world[:, leg, :] - state.pos
            # world-frame inverse inertia applied to r x z
            rxn = np.stack([r[:, 1], -r[:, 0], np.zeros(n)], axis=-1)
            rxn_body = quat_rotate_inverse(state.quat, rxn)
            iinv_rxn = quat_rotate(state.quat, rxn_body / inertia)
            ang_term = np.cross(iinv_rxn, r)[:, 2]
            m_eff = 1.0 / (1.0 / m_tot + np.maximum(ang_term, 0.0))
            v_pz = vel[:, 2] + np.cross(omega_w, r)[:, 2]
            want = m_eff * (bias[:, leg] - v_pz)
            new_accum = np.maximum(accum[:, leg] + want, 0.0)
            dp = np.where(active, new_accum - accum[:, leg], 0.0)
            accum[:, leg] = np.where(active, new_accum, accum[:, leg])
            vel[:, 2] += dp / m_tot
            omega_w += quat_rotate(
                state.quat,
                quat_rotate_inverse(state.quat, rxn * dp[:, None]) / inertia)
    return accum / dt


def apply_push(state, direction, magnitude):
    """Add a horizontal velocity impulse magnitude * direction to the trunk."""
    if np.any(np.asarray(magnitude) < 0):
        raise ValueError("push magnitude must be >= 0")
    d = np.asarray(direction, dtype=float)
    state.vel[..., 0] += magnitude * d[..., 0]
    state.vel[..., 1] += magnitude * d[..., 1]
    return state


def sample_push_direction(rng):
    """Uniform random unit vector on the circle."""
    ang = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(ang), np.sin(ang)])


def sample_shape(rng, shape_ranges=None, d_step=0.10, g_p=0.01):
    """Draw per-episode trajectory-shape parameters (h and g_c resampled)."""
    h_range = (shape_ranges or {}).get("h", HEIGHT_RANGE)
    gc_range = (shape_ranges or {}).get("g_c", CLEARANCE_RANGE)
    return TrajectoryShape(
        d_step=d_step,
        h=rng.uniform(*h_range),
        g_c=rng.uniform(*gc_range),
        g_p=g_p,
    )


def reset_sim(rand, shape_ranges=None, rng=None, *, geometry=None, terrain=None,
              d_step=0.10, g_p=0.01, friction_nominal=0.8, theta0=None):
    """Fresh episode: sampled shape, randomized physics, robot standing at h.

    Returns (SimState with n=1, PhysicalParams with n=1, TrajectoryShape).
    """
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    geometry = geometry or _DEFAULT_GEOMETRY
    terrain = terrain or _FLAT

    shape = sample_shape(rng, shape_ranges, d_step=d_step, g_p=g_p)

    params = PhysicalParams.nominal(1, friction=friction_nominal)
    if rand.enabled:
        params.friction[:] = rng.uniform(*rand.friction_range)
        scale = rng.uniform(1.0 - rand.limb_mass_scale, 1.0 + rand.limb_mass_scale)
        params.inertia *= scale
        params.payload[:] = rng.uniform(*rand.added_mass_range)

    state = SimState.zeros(1)
    yaw = rng.uniform(-0.1, 0.1)
    ground0 = float(terrain.height(0.0, 0.0))
    state.pos[0] = (0.0, 0.0, ground0 + shape.h)
    state.quat[0] = quat_from_yaw(np.array(yaw))

    stance = stance_offsets(geometry)[None, :, :].copy()
    stance[..., 2] = -shape.h
    q_legs, _ = all_legs_ik(stance, geometry)
    state.q = q_legs.reshape(1, 12)
    state.q_track = state.q.copy()
    foot_world = state.pos[:, None, :] + quat_rotate(
        state.quat[:, None, :], geometry.mounts[None, :, :] + stance)
    state.foot_pos = foot_world
    state.anchor = foot_world[..., :2].copy()
    ground = terrain.height(foot_world[..., 0], foot_world[..., 1])
    state.contact = (ground - foot_world[..., 2]) >= 0.0
    return state, params, shape


def has_fallen(state, terrain=None):
    """Termination proxy: trunk too low over the local ground or tilted over."""
    terrain = terrain or _FLAT
    ground = terrain.height(state.pos[:, 0], state.pos[:, 1])
    roll, pitch = roll_pitch(state.quat)
    return ((state.pos[:, 2] - ground) < FALL_HEIGHT) | (np.abs(roll) > FALL_TILT) \
        | (np.abs(pitch) > FALL_TILT) | state.diverged


_DEFAULT_GEOMETRY = RobotGeometry()
_DEFAULT_GAINS = PdGains()
_FLAT = Terrain()
