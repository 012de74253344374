"""Leg kinematics: oscillator-state to foot-target mapping, closed-form 3-DOF
inverse kinematics, forward kinematics, analytic Jacobians and joint-PD torques.

Hip frame per leg: x forward, y left, z up, origin at the abduction axis.
Joint convention: q = (q_abd, q_thigh, q_calf); q = (0, 0, 0) is the fully
extended leg pointing straight down with the foot at (0, side*d, -(l1+l2)).
The abduction joint rotates about +x for both sides; thigh and calf rotate
about the (abducted) y axis; the knee-backward branch has q_calf <= 0.

All functions broadcast over leading batch axes; per-leg arrays use a
trailing (..., 4, 3) layout in the helpers that operate on all four legs.
"""

from dataclasses import dataclass, field

import numpy as np

from .oscillators import NUM_LEGS

TORQUE_LIMIT = 33.5  # N*m, per joint (vendor actuator limit)

HEIGHT_RANGE = (0.17, 0.30)
CLEARANCE_RANGE = (0.03, 0.12)


@dataclass
class TrajectoryShape:
    """Task-space foot trajectory parameters (modulate online at will)."""

    d_step: float = 0.10   # max step length, m
    h: float = 0.30        # body height, m
    g_c: float = 0.05      # max swing ground clearance, m
    g_p: float = 0.01      # max stance ground penetration, m

    def __post_init__(self):
        self.validate()

    def validate(self):
        d_step = np.asarray(self.d_step)
        h = np.asarray(self.h)
        g_c = np.asarray(self.g_c)
        g_p = np.asarray(self.g_p)
        if np.any(d_step <= 0):
            raise ValueError("d_step must be > 0")
        if np.any(g_p < 0):
            raise ValueError("g_p must be >= 0")
        if np.any(h - g_p <= 0):
            raise ValueError("need h - g_p > 0")
        if np.any(g_c >= h):
            raise ValueError("need g_c < h")


@dataclass
class LegGeometry:
    """3-DOF leg link lengths; side is +1 for left legs, -1 for right."""

    d: float = 0.0838   # abduction link, m
    l1: float = 0.20    # thigh, m
    l2: float = 0.20    # calf, m
    side: int = 1

    def __post_init__(self):
        if min(self.d, self.l1, self.l2) <= 0:
            raise ValueError("link lengths must be positive")
        if self.side not in (-1, 1):
            raise ValueError("side must be +1 (left) or -1 (right)")

    @property
    def reach(self):
        return self.l1 + self.l2


@dataclass
class RobotGeometry:
    """Four legs plus their hip mount positions on the trunk (body frame)."""

    legs: tuple = field(default_factory=lambda: (
        LegGeometry(side=+1),   # FL
        LegGeometry(side=-1),   # FR
        LegGeometry(side=+1),   # HL
        LegGeometry(side=-1),   # HR
    ))
    mounts: np.ndarray = field(default_factory=lambda: np.array([
        [+0.1805, +0.047, 0.0],
        [+0.1805, -0.047, 0.0],
        [-0.1805, +0.047, 0.0],
        [-0.1805, -0.047, 0.0],
    ]))

    def __post_init__(self):
        self.mounts = np.asarray(self.mounts, dtype=float)
        if len(self.legs) != NUM_LEGS or self.mounts.shape != (NUM_LEGS, 3):
            raise ValueError("geometry must describe exactly 4 legs")

    @property
    def sides(self):
        return np.array([g.side for g in self.legs], dtype=float)

    def validate_workspace(self, h_max=HEIGHT_RANGE[1]):
        """Reachability check used at config load: legs must span the height range."""
        for g in self.legs:
            if g.reach <= h_max:
                raise ValueError(f"leg reach {g.reach} cannot support body height {h_max}")


@dataclass
class JointState:
    """Stacked joint positions/velocities for all 12 joints, 3 per leg."""

    q: np.ndarray
    q_dot: np.ndarray


@dataclass
class PdGains:
    kp: float = 100.0   # N*m/rad
    kd: float = 2.0     # N*m*s/rad

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ValueError("PD gains must be non-negative")


def foot_target_from_cpg(r, theta, phi, shape):
    """Map oscillator state to the desired foot position in the hip frame.

    x = -d_step*(r-1)*cos(theta)*cos(phi)
    y = -d_step*(r-1)*cos(theta)*sin(phi)
    z = -h + g_c*sin(theta) during swing (sin(theta) > 0), else -h + g_p*sin(theta)
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    step = -np.asarray(shape.d_step) * (r - 1.0) * np.cos(theta)
    s = np.sin(theta)
    z = np.where(s > 0, -np.asarray(shape.h) + np.asarray(shape.g_c) * s,
                 -np.asarray(shape.h) + np.asarray(shape.g_p) * s)
    return np.stack([step * np.cos(phi), step * np.sin(phi), z], axis=-1)


def forward_kinematics(q, geom):
    """Foot position in the hip frame for joint angles q = (..., 3)."""
    q = np.asarray(q, dtype=float)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    xp = -geom.l1 * np.sin(q2) - geom.l2 * np.sin(q2 + q3)
    zp = -geom.l1 * np.cos(q2) - geom.l2 * np.cos(q2 + q3)
    c1, s1 = np.cos(q1), np.sin(q1)
    off = geom.side * geom.d
    return np.stack([xp, c1 * off - s1 * zp, s1 * off + c1 * zp], axis=-1)


def inverse_kinematics(p, geom):
    """Closed-form IK on the knee-backward branch (q_calf <= 0).

    Unreachable targets are clamped to the nearest point of the reachable
    annulus and flagged; the returned angles always satisfy the forward map
    of the clamped target.  Returns (q, clamped_mask).
    """
    p = np.asarray(p, dtype=float)
    px, py, pz = p[..., 0], p[..., 1], p[..., 2]
    off = geom.side * geom.d

    rho_sq = py * py + pz * pz
    clamped = rho_sq < geom.d * geom.d
    zp_sq = np.maximum(rho_sq - geom.d * geom.d, 0.0)
    zp = -np.sqrt(zp_sq)
    q1 = np.arctan2(pz, py) - np.arctan2(zp, off)
    q1 = (q1 + np.pi) % (2.0 * np.pi) - np.pi

    lsq = px * px + zp_sq
    l_lo, l_hi = abs(geom.l1 - geom.l2), geom.l1 + geom.l2
    length = np.sqrt(lsq)
    target_l = np.clip(length, l_lo, l_hi)
    clamped = clamped | (length > l_hi + 1e-12) | (length < l_lo - 1e-12)
    scale = np.where(length > 0, target_l / np.maximum(length, 1e-300), 1.0)
    xp = px * scale
    zp = zp * scale
    lsq = target_l * target_l

    cos_q3 = np.clip((lsq - geom.l1**2 - geom.l2**2) / (2.0 * geom.l1 * geom.l2), -1.0, 1.0)
    q3 = -np.arccos(cos_q3)
    q2 = np.arctan2(-xp, -zp) - np.arctan2(geom.l2 * np.sin(q3), geom.l1 + geom.l2 * np.cos(q3))
    q2 = (q2 + np.pi) % (2.0 * np.pi) - np.pi
    return np.stack([q1, q2, q3], axis=-1), clamped


def leg_jacobian(q, geom):
    """Analytic Jacobian d(foot position)/dq, shaped (..., 3, 3)."""
    q = np.asarray(q, dtype=float)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    c1, s1 = np.cos(q1), np.sin(q1)
    s2, c2 = np.sin(q2), np.cos(q2)
    s23, c23 = np.sin(q2 + q3), np.cos(q2 + q3)
    off = geom.side * geom.d

    xp = -geom.l1 * s2 - geom.l2 * s23
    zp = -geom.l1 * c2 - geom.l2 * c23
    py = c1 * off - s1 * zp
    pz = s1 * off + c1 * zp

    dxp_dq2 = -geom.l1 * c2 - geom.l2 * c23
    dzp_dq2 = geom.l1 * s2 + geom.l2 * s23
    dxp_dq3 = -geom.l2 * c23
    dzp_dq3 = geom.l2 * s23

    zeros = np.zeros_like(q1)
    col1 = np.stack([zeros, -pz, py], axis=-1)
    col2 = np.stack([dxp_dq2, -s1 * dzp_dq2, c1 * dzp_dq2], axis=-1)
    col3 = np.stack([dxp_dq3, -s1 * dzp_dq3, c1 * dzp_dq3], axis=-1)
    return np.stack([col1, col2, col3], axis=-1)


def pd_torques(q_des, joints, gains):
    """Joint-PD torques toward q_des with zero desired velocity, clamped."""
    tau = gains.kp * (np.asarray(q_des) - joints.q) - gains.kd * joints.q_dot
    return np.clip(tau, -TORQUE_LIMIT, TORQUE_LIMIT)


def stance_offsets(geometry):
    """Nominal foot offsets in each hip frame: the foot rests at y = side*d."""
    off = np.zeros((NUM_LEGS, 3))
    off[:, 1] = geometry.sides * np.array([g.d for g in geometry.legs])
    return off


def _packed(geometry):
    """Cache per-leg geometry as broadcastable arrays."""
    cached = getattr(geometry, "_packed", None)
    if cached is None:
        off = np.array([g.side * g.d for g in geometry.legs])
        l1 = np.array([g.l1 for g in geometry.legs])
        l2 = np.array([g.l2 for g in geometry.legs])
        cached = (off, l1, l2, off * off, np.abs(l1 - l2), l1 + l2,
                  l1 * l1 + l2 * l2, 2.0 * l1 * l2)
        geometry._packed = cached
    return cached


def all_legs_fk(q_legs, geometry):
    """FK for all four legs at once; q_legs (..., 4, 3) -> positions (..., 4, 3)."""
    off, l1, l2 = _packed(geometry)[:3]
    q1 = q_legs[..., 0]
    q2 = q_legs[..., 1]
    q23 = q2 + q_legs[..., 2]
    xp = -l1 * np.sin(q2) - l2 * np.sin(q23)
    zp = -l1 * np.cos(q2) - l2 * np.cos(q23)
    c1 = np.cos(q1)
    s1 = np.sin(q1)
    out = np.empty(q_legs.shape, dtype=float)
    out[..., 0] = xp
    out[..., 1] = c1 * off - s1 * zp
    out[..., 2] = s1 * off + c1 * zp
    return out


def all_legs_ik(p_legs, geometry):
    """IK for all four legs at once; returns (q (..., 4, 3), clamped (..., 4))."""
    off, l1, l2, off_sq, l_lo, l_hi, lsq_sum, l_cross = _packed(geometry)
    px, py, pz = p_legs[..., 0], p_legs[..., 1], p_legs[..., 2]
    rho_sq = py * py + pz * pz
    clamped = rho_sq < off_sq
    zp_sq = np.maximum(rho_sq - off_sq, 0.0)
    zp = -np.sqrt(zp_sq)
    q1 = np.arctan2(pz, py) - np.arctan2(zp, off)
    q1 = np.where(q1 > np.pi, q1 - 2.0 * np.pi, q1)
    q1 = np.where(q1 < -np.pi, q1 + 2.0 * np.pi, q1)

    lsq = px * px + zp_sq
    length = np.sqrt(lsq)
    target_l = np.clip(length, l_lo, l_hi)
    clamped = clamped | (length > l_hi + 1e-12) | (length < l_lo - 1e-12)
    scale = np.where(length > 0, target_l / np.maximum(length, 1e-300), 1.0)
    xp = px * scale
    zp = zp * scale

    cos_q3 = np.clip((target_l * target_l - lsq_sum) / l_cross, -1.0, 1.0)
    q3 = -np.arccos(cos_q3)
    q2 = np.arctan2(-xp, -zp) - np.arctan2(l2 * np.sin(q3), l1 + l2 * np.cos(q3))
    q2 = np.where(q2 > np.pi, q2 - 2.0 * np.pi, q2)
    q2 = np.where(q2 < -np.pi, q2 + 2.0 * np.pi, q2)
    out = np.empty(p_legs.shape, dtype=float)
    out[..., 0] = q1
    out[..., 1] = q2
    out[..., 2] = q3
    return out, clamped


def all_legs_jacobian(q_legs, geometry):
    """Jacobians for all four legs at once; (..., 4, 3) -> (..., 4, 3, 3)."""
    off, l1, l2 = _packed(geometry)[:3]
    q1 = q_legs[..., 0]
    q2 = q_legs[..., 1]
    q23 = q2 + q_legs[..., 2]
    c1, s1 = np.cos(q1), np.sin(q1)
    s2, c2 = np.sin(q2), np.cos(q2)
    s23, c23 = np.sin(q23), np.cos(q23)

    xp = -l1 * s2 - l2 * s23
    zp = -l1 * c2 - l2 * c23
    py = c1 * off - s1 * zp
    pz = s1 * off + c1 * zp
    dxp_dq2 = -l1 * c2 - l2 * c23
    dzp_dq2 = l1 * s2 + l2 * s23
    dxp_dq3 = -l2 * c23
    dzp_dq3 = l2 * s23

    out = np.empty(q_legs.shape + (3,), dtype=float)
    out[..., 0, 0] = 0.0
    out[..., 1, 0] = -pz
    out[..., 2, 0] = py
    out[..., 0, 1] = dxp_dq2
    out[..., 1, 1] = -s1 * dzp_dq2
    out[..., 2, 1] = c1 * dzp_dq2
    out[..., 0, 2] = dxp_dq3
    out[..., 1, 2] = -s1 * dzp_dq3
    out[..., 2, 2] = c1 * dzp_dq3
    return out
