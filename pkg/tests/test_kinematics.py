import numpy as np
import pytest

from cpgloco.kinematics import (JointState, LegGeometry, PdGains,
                                RobotGeometry, TrajectoryShape, all_legs_fk,
                                all_legs_ik, all_legs_jacobian,
                                foot_target_from_cpg, forward_kinematics,
                                inverse_kinematics, leg_jacobian, pd_torques,
                                stance_offsets, TORQUE_LIMIT)

from oracles import fk_rotation_chain, finite_difference_jacobian, planar_two_link_ik

LEFT = LegGeometry(side=+1)
RIGHT = LegGeometry(side=-1)


def sample_reachable_q(rng, n):
    """Joint angles drawn inside the knee-backward branch interior."""
    q = np.empty((n, 3))
    q[:, 0] = rng.uniform(-1.0, 1.0, n)
    q[:, 1] = rng.uniform(-1.2, 1.2, n)
    q[:, 2] = rng.uniform(-2.6, -0.1, n)
    return q


# ---- foot target mapping ----

def test_target_zero_step_at_unit_amplitude():
    shape = TrajectoryShape()
    for theta in (0.0, 1.0, 4.0):
        p = foot_target_from_cpg(1.0, theta, 0.3, shape)
        assert p[0] == 0.0 and p[1] == 0.0


def test_target_swing_branch():
    shape = TrajectoryShape(d_step=0.1, h=0.30, g_c=0.05, g_p=0.01)
    p = foot_target_from_cpg(1.5, np.pi / 2, 0.0, shape)
    assert p[2] == pytest.approx(-0.25, abs=1e-12)


def test_target_full_amplitude_step():
    shape = TrajectoryShape(d_step=0.1, h=0.30, g_c=0.05, g_p=0.01)
    p = foot_target_from_cpg(2.0, 0.0, 0.0, shape)
    assert p[0] == pytest.approx(-0.1, abs=1e-12)
    assert p[1] == 0.0


def test_target_envelope_property():
    rng = np.random.default_rng(0)
    n = 100_000
    r = rng.uniform(1.0, 2.0, n)
    theta = rng.uniform(0, 2 * np.pi, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    d_step = rng.uniform(0.02, 0.15, n)
    h = rng.uniform(0.17, 0.30, n)
    g_c = rng.uniform(0.03, np.minimum(0.12, h - 1e-3), n)
    g_p = rng.uniform(0.0, 0.03, n)
    shape = TrajectoryShape(d_step=d_step, h=h, g_c=g_c, g_p=g_p)
    p = foot_target_from_cpg(r, theta, phi, shape)
    assert np.all(p[:, 2] >= -h - g_p)
    assert np.all(p[:, 2] <= -h + g_c)
    assert np.all(p[:, 0] ** 2 + p[:, 1] ** 2 <= d_step ** 2 * (r - 1.0) ** 2 + 1e-18)


def test_swing_iff_above_nominal_height():
    rng = np.random.default_rng(1)
    shape = TrajectoryShape(d_step=0.1, h=0.25, g_c=0.06, g_p=0.02)
    theta = rng.uniform(0, 2 * np.pi, 10_000)
    p = foot_target_from_cpg(np.full_like(theta, 1.5), theta, 0.0, shape)
    swing = np.sin(theta) > 0
    assert np.array_equal(swing, p[:, 2] > -0.25)


def test_shape_validation():
    with pytest.raises(ValueError):
        TrajectoryShape(d_step=-0.1)
    with pytest.raises(ValueError):
        TrajectoryShape(h=0.2, g_p=0.25)
    with pytest.raises(ValueError):
        TrajectoryShape(h=0.2, g_c=0.3)


# ---- forward kinematics ----

def test_fk_zero_pose():
    for geom in (LEFT, RIGHT):
        p = forward_kinematics(np.zeros(3), geom)
        assert np.allclose(p, [0.0, geom.side * geom.d, -0.4], atol=1e-15)


def test_fk_abduction_rotation():
    geom = LegGeometry(d=1e-9, side=+1)  # d -> 0 within constructor constraint
    p = forward_kinematics(np.array([np.pi / 2, 0.0, 0.0]), geom)
    assert np.allclose(p, [0.0, 0.4, 0.0], atol=1e-8)


def test_fk_matches_rotation_chain_oracle():
    rng = np.random.default_rng(2)
    for geom in (LEFT, RIGHT):
        for q in rng.uniform(-2.5, 2.5, (200, 3)):
            expected = fk_rotation_chain(q, geom.d, geom.l1, geom.l2, geom.side)
            assert np.allclose(forward_kinematics(q, geom), expected, atol=1e-12)


# ---- inverse kinematics ----

def test_ik_fully_extended_reference():
    geom = LegGeometry(d=1e-9)
    q, clamped = inverse_kinematics(np.array([0.0, 0.0, -0.4]), geom)
    assert np.allclose(q, 0.0, atol=1e-4)
    assert not clamped


def test_ik_right_angle_knee():
    geom = LegGeometry(d=1e-9)
    q, clamped = inverse_kinematics(np.array([0.0, 0.0, -0.2 * np.sqrt(2)]), geom)
    assert q[1] == pytest.approx(np.pi / 4, abs=1e-6)
    assert q[2] == pytest.approx(-np.pi / 2, abs=1e-6)
    assert not clamped


def test_ik_matches_planar_oracle():
    # target directly below the hip at stance width: abduction is zero and
    # the thigh/calf solution reduces to the planar 2-link chain
    rng = np.random.default_rng(3)
    for geom in (LEFT, RIGHT):
        for _ in range(200):
            length = rng.uniform(0.15, 0.39)
            ang = rng.uniform(-0.5, 0.5)
            x, z = length * np.sin(ang), -length * np.cos(ang)
            p = np.array([x, geom.side * geom.d, z])
            q, clamped = inverse_kinematics(p, geom)
            assert not clamped
            q1_ref, q2_ref = planar_two_link_ik(x, z, geom.l1, geom.l2)
            assert q[0] == pytest.approx(0.0, abs=1e-12)
            assert q[1] == pytest.approx(q1_ref, abs=1e-12)
            assert q[2] == pytest.approx(q2_ref, abs=1e-12)


def test_fk_ik_roundtrip_100k():
    rng = np.random.default_rng(4)
    n = 100_000
    geometry = RobotGeometry()
    q = np.stack([sample_reachable_q(rng, n // 4) for _ in range(4)], axis=1)
    p = all_legs_fk(q, geometry)
    q_ik, clamped = all_legs_ik(p, geometry)
    assert not clamped.any()
    p_rt = all_legs_fk(q_ik, geometry)
    err = np.linalg.norm(p_rt - p, axis=-1)
    assert err.max() < 1e-9


def test_ik_fk_identity_on_branch():
    # identity holds on the operating branch: knee backward AND foot below
    # the hip plane (the planar chain's z < 0); the degenerate fold-up ring
    # z ~ 0 legitimately flips the abduction branch
    rng = np.random.default_rng(5)
    for geom in (LEFT, RIGHT):
        q = sample_reachable_q(rng, 8000)
        zp = -geom.l1 * np.cos(q[:, 1]) - geom.l2 * np.cos(q[:, 1] + q[:, 2])
        q = q[zp < -0.02]
        assert len(q) > 4000
        p = forward_kinematics(q, geom)
        q_rt, clamped = inverse_kinematics(p, geom)
        assert not clamped.any()
        assert np.abs(q_rt - q).max() < 1e-9


def test_ik_unreachable_clamps_and_flags():
    geom = LEFT
    q, clamped = inverse_kinematics(np.array([0.0, geom.d, -1.0]), geom)
    assert clamped
    p = forward_kinematics(q, geom)
    assert np.linalg.norm(p) <= np.sqrt(geom.d**2 + geom.reach**2) + 1e-9
    # inside the hip cylinder
    q2, clamped2 = inverse_kinematics(np.array([0.0, 0.0, 0.01]), geom)
    assert clamped2
    assert np.all(np.isfinite(q2))


# ---- Jacobian ----

def test_jacobian_zero_pose_calf_column():
    jac = leg_jacobian(np.zeros(3), LEFT)
    assert np.linalg.norm(jac[:, 2]) == pytest.approx(LEFT.l2, abs=1e-12)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(6)
    for geom in (LEFT, RIGHT):
        for q in rng.uniform(-2.0, 2.0, (50, 3)):
            jac = leg_jacobian(q, geom)
            fd = finite_difference_jacobian(lambda qq: forward_kinematics(qq, geom), q)
            assert np.abs(jac - fd).max() < 1e-6


def test_jacobian_straight_leg_singular():
    jac = leg_jacobian(np.zeros(3), LEFT)
    assert np.linalg.matrix_rank(jac, tol=1e-10) == 2


def test_batched_helpers_match_per_leg():
    rng = np.random.default_rng(7)
    geometry = RobotGeometry()
    q = np.stack([sample_reachable_q(rng, 16) for _ in range(4)], axis=1)
    fk_batch = all_legs_fk(q, geometry)
    jac_batch = all_legs_jacobian(q, geometry)
    for leg, geom in enumerate(geometry.legs):
        assert np.allclose(fk_batch[:, leg], forward_kinematics(q[:, leg], geom),
                           atol=1e-14)
        assert np.allclose(jac_batch[:, leg], leg_jacobian(q[:, leg], geom),
                           atol=1e-14)


# ---- PD torques ----

def test_pd_proportional_term():
    joints = JointState(q=np.zeros(12), q_dot=np.zeros(12))
    tau = pd_torques(np.full(12, 0.1), joints, PdGains())
    assert np.allclose(tau, 10.0, atol=1e-12)


def test_pd_derivative_term():
    joints = JointState(q=np.zeros(12), q_dot=np.ones(12))
    tau = pd_torques(np.zeros(12), joints, PdGains())
    assert np.allclose(tau, -2.0, atol=1e-12)


def test_pd_torque_clamp():
    joints = JointState(q=np.zeros(12), q_dot=np.zeros(12))
    tau = pd_torques(np.ones(12), joints, PdGains())
    assert np.allclose(tau, TORQUE_LIMIT)
    rng = np.random.default_rng(8)
    joints = JointState(q=rng.normal(0, 3, 12), q_dot=rng.normal(0, 30, 12))
    tau = pd_torques(rng.normal(0, 3, 12), joints, PdGains())
    assert np.all(np.abs(tau) <= TORQUE_LIMIT)


def test_geometry_validation():
    with pytest.raises(ValueError):
        LegGeometry(l1=-0.1)
    with pytest.raises(ValueError):
        LegGeometry(side=2)
    with pytest.raises(ValueError):
        PdGains(kp=-1.0)
    geometry = RobotGeometry()
    geometry.validate_workspace()  # default A1-like geometry spans the range
    small = RobotGeometry(legs=(LegGeometry(l1=0.1, l2=0.1, side=1),) * 4)
    with pytest.raises(ValueError):
        small.validate_workspace()


def test_stance_offsets_widths():
    offs = stance_offsets(RobotGeometry())
    assert np.allclose(offs[:, 1], [0.0838, -0.0838, 0.0838, -0.0838])
    assert np.all(offs[:, [0, 2]] == 0.0)
