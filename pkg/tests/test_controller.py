import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compliant_control.controller import (
    GainError,
    GainSet,
    ImpedanceController,
    Reference,
    compose_command,
    joint_torque,
    pose_error,
    set_blend,
    task_torque,
)
from compliant_control.model import Pose, build_model, forward_kinematics, geometric_jacobian, gravity_torques
from compliant_control.spatial import rot_x, rot_y, rot_z

from conftest import random_q


def one_dof(gravity=(0, 0, 0)):
    """Single revolute joint about z at the origin, end effector 1 m along x."""
    return build_model(
        joint_xyz=[[0, 0, 0]],
        joint_rpy=[[0, 0, 0]],
        axis=[[0, 0, 1]],
        mass=[1.0],
        com=[[0.5, 0, 0]],
        inertia=[np.eye(3) * 0.01],
        rotor_inertia=[0.1],
        gravity=gravity,
        ee_xyz=[1, 0, 0],
        tau_limit=[39.0],
    )


def gains1(**kw):
    base = dict(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, n_joints=1)
    base.update(kw)
    return GainSet(**base)


def ref_at(model, q_star, qd_star=None, passive=False):
    return Reference.from_joints(model, q_star, qd_star, passive)


# -- pose error ----------------------------------------------------------------


def test_pose_error_zero_for_equal_poses():
    x = Pose.from_matrix([0.1, 0.2, 0.3], rot_x(0.3) @ rot_y(-1.0))
    assert np.array_equal(pose_error(x, x), np.zeros(6))


def test_pose_error_position_rows():
    x = Pose.from_matrix([1, 0, 0], np.eye(3))
    xs = Pose.from_matrix([0, 0, 0], np.eye(3))
    assert np.allclose(pose_error(x, xs), [1, 0, 0, 0, 0, 0], atol=1e-15)


def test_pose_error_rotation_about_z():
    R_star = rot_x(0.4) @ rot_y(0.2)
    x = Pose.from_matrix([0, 0, 0], rot_z(0.2) @ R_star)
    xs = Pose.from_matrix([0, 0, 0], R_star)
    assert np.allclose(pose_error(x, xs), [0, 0, 0, 0, 0, 0.2], atol=1e-12)


def test_pose_error_at_pi_picks_largest_diagonal_axis():
    x = Pose.from_matrix([0, 0, 0], rot_y(math.pi))
    xs = Pose.from_matrix([0, 0, 0], np.eye(3))
    e = pose_error(x, xs)
    assert np.allclose(np.abs(e[3:]), [0, math.pi, 0], atol=1e-7)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
    st.lists(st.floats(-math.pi, math.pi), min_size=3, max_size=3),
    st.lists(st.floats(-math.pi, math.pi), min_size=3, max_size=3),
)
def test_pose_error_antisymmetric(p, a, b):
    # angles bounded away from pi so the branch choice does not matter
    Ra = rot_z(a[0]) @ rot_y(a[1] / 2) @ rot_x(a[2])
    Rb = rot_z(b[0]) @ rot_y(b[1] / 2) @ rot_x(b[2])
    xa = Pose.from_matrix(p, Ra)
    xb = Pose.from_matrix([0.0, 0.0, 0.0], Rb)
    eab = pose_error(xa, xb)
    eba = pose_error(xb, xa)
    assert np.allclose(eab[:3], -eba[:3], atol=1e-12)
    if np.linalg.norm(eab[3:]) < math.pi - 1e-3:
        assert np.allclose(eba[3:], -eab[3:], atol=1e-9)


# -- joint law -----------------------------------------------------------------


def test_joint_torque_zero_at_reference(gen3, rng):
    q = random_q(gen3, rng)
    qd = rng.normal(size=7)
    g = GainSet(Kp=100.0, Kd=10.0, Kpx=0.0, Kdx=0.0, n_joints=7)
    tau = joint_torque(g, q, qd, ref_at(gen3, q, qd))
    assert np.array_equal(np.abs(tau), np.zeros(7))


def test_joint_torque_scalar_law():
    m = one_dof()
    tau = joint_torque(gains1(Kp=10.0), [0.1], [0.0], ref_at(m, [0.0]))
    assert tau[0] == pytest.approx(-1.0, abs=1e-15)


def test_joint_torque_derivative_clamp():
    m = one_dof()
    tau = joint_torque(gains1(Kd=100.0, tau_d_max=5.0), [0.0], [1.0], ref_at(m, [0.0]))
    assert tau[0] == -5.0
    tau = joint_torque(gains1(Kd=100.0, tau_d_max=5.0), [0.0], [-1.0], ref_at(m, [0.0]))
    assert tau[0] == 5.0


def test_joint_torque_passivity_mode_ignores_desired_velocity():
    m = one_dof()
    ref = ref_at(m, [0.0], [2.0], passive=True)
    tau = joint_torque(gains1(Kd=3.0), [0.0], [0.5], ref)
    assert tau[0] == pytest.approx(-1.5)


def test_joint_torque_dimension_mismatch(gen3):
    g = GainSet(Kp=1.0, Kd=1.0, Kpx=0.0, Kdx=0.0, n_joints=7)
    with pytest.raises(ValueError):
        joint_torque(g, np.zeros(6), np.zeros(7), ref_at(gen3, np.zeros(7)))


# -- task law ------------------------------------------------------------------


def test_task_torque_zero_at_reference(gen3, rng):
    q = random_q(gen3, rng)
    qd = rng.normal(size=7)
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=500.0, Kdx=30.0, task_scale=1.0, n_joints=7)
    J = geometric_jacobian(gen3, q)
    ref = ref_at(gen3, q, qd)
    tau = task_torque(g, J, forward_kinematics(gen3, q), J @ qd, ref)
    assert np.allclose(tau, 0.0, atol=1e-12)


def test_task_torque_single_column():
    m = one_dof()
    J = np.array([[0.0], [1.0], [0.0], [0.0], [0.0], [1.0]])
    x = Pose.from_matrix([1.0, 0.01, 0.0], np.eye(3))
    ref = Reference(np.zeros(1), np.zeros(1), Pose.from_matrix([1.0, 0.0, 0.0], np.eye(3)), np.zeros(6))
    g = gains1(Kpx=100.0, task_scale=1.0)
    tau = task_torque(g, J, x, np.zeros(6), ref)
    assert tau[0] == pytest.approx(-1.0, abs=1e-12)
    assert m.n_joints == 1


def test_task_torque_off_when_task_scale_zero(gen3, rng):
    q = random_q(gen3, rng)
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=500.0, Kdx=30.0, task_scale=0.0, n_joints=7)
    ref = ref_at(gen3, random_q(gen3, rng))
    J = geometric_jacobian(gen3, q)
    tau = task_torque(g, J, forward_kinematics(gen3, q), rng.normal(size=6), ref)
    assert np.array_equal(tau, np.zeros(7))


def test_task_torque_wrench_clamp():
    m = one_dof()
    J = np.array([[0.0], [1.0], [0.0], [0.0], [0.0], [0.0]])
    x = Pose.from_matrix([1.0, 0.0, 0.0], np.eye(3))
    ref = Reference(np.zeros(1), np.zeros(1), x, np.zeros(6))
    g = gains1(Kdx=100.0, wrench_d_max=2.0, task_scale=1.0)
    tau = task_torque(g, J, x, np.array([0, 1.0, 0, 0, 0, 0]), ref)
    assert tau[0] == -2.0
    assert m.n_joints == 1


def test_task_torque_bad_jacobian_shape(gen3):
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=1.0, Kdx=0.0, task_scale=1.0, n_joints=7)
    ref = ref_at(gen3, np.zeros(7))
    with pytest.raises(ValueError):
        task_torque(g, np.zeros((6, 6)), ref.x_star, np.zeros(6), ref)


# -- composition ---------------------------------------------------------------


def test_compose_all_zero_gravity_off():
    m = one_dof()
    cmd = compose_command(gains1(), [0.0], [0.0], [0.0], m, ref_at(m, [0.3]), [0.3])
    assert np.array_equal(cmd.tau_m, [0.0])
    assert not cmd.any_clamped


def test_compose_arithmetic():
    m = one_dof(gravity=(0, -6.0, 0))  # holding torque 1 kg * 6 m/s^2 * 0.5 m = 3 at q = 0
    cmd = compose_command(gains1(), [1.0], [2.0], [0.5], m, ref_at(m, [0.0]), [0.0])
    assert cmd.g_comp[0] == pytest.approx(3.0, abs=1e-12)
    assert cmd.tau_m[0] == pytest.approx(5.5, abs=1e-12)


def test_compose_gravity_term_added(planar):
    q_star = np.array([0.3, -0.4])
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, n_joints=2)
    ref = ref_at(planar, q_star)
    cmd = compose_command(g, [1.0, 0.0], [2.0, 0.0], [0.5, 0.0], planar, ref, np.zeros(2))
    expected = np.array([2.5, 0.0]) + gravity_torques(planar, q_star)
    assert np.allclose(cmd.tau_m, expected, atol=1e-12)
    assert np.array_equal(cmd.g_comp, gravity_torques(planar, q_star))


def test_compose_gravity_at_measured(planar):
    q_meas = np.array([0.1, 0.2])
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, gravity_at_target=False, n_joints=2)
    cmd = compose_command(g, [0, 0], [0, 0], [0, 0], planar, ref_at(planar, [1.0, 1.0]), q_meas)
    assert np.allclose(cmd.g_comp, gravity_torques(planar, q_meas), atol=1e-15)


def test_compose_clamps_to_model_limit(gen3):
    g = GainSet(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, tau_max=gen3.tau_limit, n_joints=7)
    ref = ref_at(gen3, np.zeros(7))
    grav = gravity_torques(gen3, np.zeros(7))
    tau_q = np.zeros(7)
    tau_q[0] = 80.0 - grav[0]
    cmd = compose_command(g, tau_q, np.zeros(7), np.zeros(7), gen3, ref, np.zeros(7))
    assert cmd.tau_m[0] == 39.0
    assert cmd.clamped[0]
    assert cmd.any_clamped
    assert not cmd.clamped[1:].any()


# -- gains ---------------------------------------------------------------------


def test_set_blend_mapping():
    g = GainSet(Kp=1.0, Kd=1.0, Kpx=1.0, Kdx=1.0, n_joints=3)
    assert (set_blend(g, 0.0).joint_scale, set_blend(g, 0.0).task_scale) == (1.0, 0.0)
    assert (set_blend(g, 1.0).joint_scale, set_blend(g, 1.0).task_scale) == (0.0, 1.0)
    h = set_blend(g, 0.5)
    assert h.joint_scale == h.task_scale == 0.5
    assert np.array_equal(h.Kp, g.Kp)
    with pytest.raises(GainError):
        set_blend(g, 1.5)
    with pytest.raises(GainError):
        set_blend(g, -0.1)


def test_gain_invariants(gen3):
    with pytest.raises(GainError):
        GainSet(Kp=-1.0, Kd=0.0, Kpx=0.0, Kdx=0.0, n_joints=2)
    with pytest.raises(GainError):
        GainSet(Kp=1.0, Kd=0.0, Kpx=0.0, Kdx=0.0, joint_scale=2.0, n_joints=2)
    with pytest.raises(GainError):
        GainSet(Kp=1.0, Kd=0.0, Kpx=0.0, Kdx=0.0, T_int=0.0, n_joints=2)
    with pytest.raises(GainError):
        GainSet(Kp=1.0, Kd=0.0, Kpx=0.0, Kdx=0.0, tau_max=100.0, n_joints=7).validate_for(gen3)
    with pytest.raises(GainError):
        GainSet(Kp=[1.0, 2.0], Kd=0.0, Kpx=0.0, Kdx=0.0, n_joints=3)


# -- stateful controller ---------------------------------------------------------


def test_controller_rejects_bad_gains_and_keeps_snapshot(gen3):
    g = GainSet(Kp=10.0, Kd=1.0, Kpx=0.0, Kdx=0.0, tau_max=gen3.tau_limit, n_joints=7)
    ctrl = ImpedanceController(gen3, g, 1e-3, observer=False)
    before = ctrl.garrays.Kp.copy()
    with pytest.raises(GainError):
        ctrl.set_gains(g.replace(tau_max=np.full(7, 1000.0)))
    assert np.array_equal(ctrl.garrays.Kp, before)
    assert ctrl.gains is g


def test_controller_step_matches_functional_pieces(gen3, rng):
    g = GainSet(
        Kp=80.0, Kd=6.0, Kpx=400.0, Kdx=20.0, joint_scale=0.5, task_scale=0.5, tau_max=gen3.tau_limit, n_joints=7
    )
    ctrl = ImpedanceController(gen3, g, 1e-3, observer=False)
    q = random_q(gen3, rng)
    qd = rng.normal(scale=0.2, size=7)
    ref = ref_at(gen3, q + rng.normal(scale=0.05, size=7), rng.normal(scale=0.1, size=7))
    ctrl.reset(q, qd)
    cmd = ctrl.step(q, qd, np.zeros(7), ref)
    J = geometric_jacobian(gen3, q)
    tq = joint_torque(g, q, qd, ref)
    tx = task_torque(g, J, forward_kinematics(gen3, q), J @ qd, ref)
    expect = compose_command(g, tq, tx, np.zeros(7), gen3, ref, q)
    assert np.array_equal(cmd.tau_q, tq)
    assert np.allclose(cmd.tau_x, tx, atol=1e-12)
    assert np.allclose(cmd.tau_m, expect.tau_m, atol=1e-12)


def test_mid_run_gain_doubling_bounded(gen3, rng):
    g = GainSet(Kp=50.0, Kd=0.0, Kpx=0.0, Kdx=0.0, tau_max=gen3.tau_limit, n_joints=7)
    ctrl = ImpedanceController(gen3, g, 1e-3, observer=False)
    q = random_q(gen3, rng)
    ref = ref_at(gen3, q + 0.01)
    ctrl.reset(q, np.zeros(7))
    a = ctrl.step(q, np.zeros(7), np.zeros(7), ref).tau_m
    ctrl.set_gains(g.replace(Kp=g.Kp * 2))
    b = ctrl.step(q, np.zeros(7), np.zeros(7), ref).tau_m
    assert np.all(np.abs(b - a) <= g.Kp * np.abs(q - ref.q_star) + 1e-12)


def test_gravity_hold_in_closed_loop(planar):
    from compliant_control.simulator import Simulator

    g = GainSet(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, gravity_at_target=False, tau_max=planar.tau_limit, n_joints=2)
    q0 = np.array([0.4, -0.9])
    ctrl = ImpedanceController(planar, g, 1e-3, observer=False)
    sim = Simulator(planar, q0, friction=False)
    ctrl.reset(q0, np.zeros(2))
    ctrl.set_reference(ref_at(planar, np.zeros(2)))
    worst = 0.0
    for _ in range(1000):
        s = sim.sensors()
        cmd = ctrl.step_arrays(s.q, s.qd, s.tau)
        sim.step(cmd.tau_m, 1e-3)
        worst = max(worst, np.abs(sim.state.qd).max())
    assert worst < 1e-6
