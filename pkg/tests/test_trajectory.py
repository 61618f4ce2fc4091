import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compliant_control.model import forward_kinematics, geometric_jacobian
from compliant_control.trajectory import (
    ReferenceSource,
    Trajectory,
    TrajectoryPoint,
    trajectory_from_arrays,
)

DT = 1e-3


@pytest.fixture
def unit_v(planar):
    return planar._replace(v_max=np.ones(2))


def run(src, t0, t1, dt=DT):
    out = []
    for k in range(int(round((t1 - t0) / dt)) + 1):
        out.append(src.sample(t0 + k * dt))
    return out


def test_hermite_midpoint(planar):
    src = ReferenceSource(planar, [0.0, 0.0])
    src.start_trajectory(trajectory_from_arrays([0.0, 2.0], [[0.0, 0.0], [1.0, 1.0]]), 0.0)
    ref = src.sample(1.0)
    assert np.allclose(ref.q_star, 0.5, atol=1e-12)
    assert np.allclose(ref.qd_star, 0.75, atol=1e-12)


def test_past_end_holds_with_zero_velocity(planar):
    src = ReferenceSource(planar, [0.0, 0.0])
    src.start_trajectory(trajectory_from_arrays([0.0, 2.0], [[0.0, 0.0], [1.0, 1.0]]), 0.0)
    run(src, 0.0, 2.5)
    ref = src.sample(2.6)
    assert np.array_equal(ref.q_star, [1.0, 1.0])
    assert np.array_equal(ref.qd_star, [0.0, 0.0])
    assert src.done
    assert src.time_remaining == 0.0


def test_before_start_holds_initial_reference(planar):
    src = ReferenceSource(planar, [0.2, -0.1])
    src.start_trajectory(trajectory_from_arrays([0.0, 1.0], [[0.2, -0.1], [0.5, 0.5]]), 1.0)
    ref = src.sample(0.5)
    assert np.array_equal(ref.q_star, [0.2, -0.1])
    assert np.array_equal(ref.qd_star, [0.0, 0.0])
    assert not src.done


def test_interpolation_hits_knots(planar, rng):
    times = np.array([0.0, 0.4, 1.1, 1.5, 2.3])
    q = np.cumsum(rng.uniform(-0.2, 0.2, (5, 2)), axis=0)
    q[0] = 0.0
    src = ReferenceSource(planar, [0.0, 0.0], rate_limit=False)
    src.start_trajectory(trajectory_from_arrays(times, q), 0.0)
    for t, qk in zip(times, q):
        assert np.allclose(src.sample(t).q_star, qk, atol=1e-12)


def test_linear_interpolation(planar):
    src = ReferenceSource(planar, [0.0, 0.0], rate_limit=False)
    src.start_trajectory(trajectory_from_arrays([0.0, 1.0], [[0, 0], [1.0, -1.0]], interpolation="linear"), 0.0)
    ref = src.sample(0.25)
    assert np.allclose(ref.q_star, [0.25, -0.25])
    assert np.allclose(ref.qd_star, [1.0, -1.0])


def test_given_knot_velocities_are_used(planar):
    pts = (
        TrajectoryPoint(0.0, [0.0, 0.0], [0.0, 0.0]),
        TrajectoryPoint(1.0, [0.5, 0.5], [0.3, -0.3]),
        TrajectoryPoint(2.0, [1.0, 0.0], [0.0, 0.0]),
    )
    src = ReferenceSource(planar, [0.0, 0.0], rate_limit=False)
    src.start_trajectory(Trajectory(pts), 0.0)
    assert np.allclose(src.sample(1.0).qd_star, [0.3, -0.3], atol=1e-12)


def test_fk_consistency(gen3, rng):
    q0 = rng.uniform(-1, 1, 7)
    src = ReferenceSource(gen3, q0)
    src.start_trajectory(trajectory_from_arrays([1.0, 2.0], [q0 + 0.2, q0 - 0.1]), 0.0)
    for ref in run(src, 0.0, 2.5, dt=0.05):
        x = forward_kinematics(gen3, ref.q_star)
        assert np.allclose(ref.x_star.position, x.position, atol=1e-12)
        assert np.allclose(ref.x_star.rotation(), x.rotation(), atol=1e-12)
        assert np.allclose(ref.xd_star, geometric_jacobian(gen3, ref.q_star) @ ref.qd_star, atol=1e-12)


def test_push_current_stays(unit_v):
    src = ReferenceSource(unit_v, [0.3, 0.4])
    src.push_setpoint(TrajectoryPoint(0.0, [0.3, 0.4]), 0.0)
    for ref in run(src, 0.0, 0.5):
        assert np.array_equal(ref.q_star, [0.3, 0.4])


def test_push_ramps_at_vmax(unit_v):
    src = ReferenceSource(unit_v, [0.0, 0.0])
    src.push_setpoint(TrajectoryPoint(0.0, [1.0, 0.0]), 0.0)
    refs = run(src, 0.0, 1.2)
    q = np.array([r.q_star[0] for r in refs])
    t = np.arange(len(q)) * DT
    ramp = t <= 1.0
    assert np.allclose(q[ramp], t[ramp], atol=1e-9)
    assert np.allclose(q[~ramp], 1.0)
    assert np.all(np.diff(q) <= DT + 1e-12)


def test_two_pushes_last_wins(unit_v):
    src = ReferenceSource(unit_v, [0.0, 0.0])
    src.push_setpoint(TrajectoryPoint(0.0, [1.0, 0.0]), 0.0)
    src.push_setpoint(TrajectoryPoint(0.0, [-1.0, 0.0]), 0.0)
    refs = run(src, 0.0, 1.1)
    assert refs[-1].q_star[0] == pytest.approx(-1.0)


def test_bad_setpoints_rejected_and_reference_retained(unit_v):
    src = ReferenceSource(unit_v, [0.0, 0.0])
    src.push_setpoint(TrajectoryPoint(0.0, [0.01, 0.0]), 0.0)
    run(src, 0.0, 0.1)
    before = src.sample(0.1).q_star
    with pytest.raises(ValueError):
        src.push_setpoint(TrajectoryPoint(0.0, [np.nan, 0.0]), 0.1)
    with pytest.raises(ValueError):
        src.push_setpoint(TrajectoryPoint(0.0, [0.0, 0.0, 0.0]), 0.1)
    assert src.rejected == 2
    assert np.array_equal(src.sample(0.2).q_star, before)


def test_single_point_trajectory_behaves_as_setpoint(unit_v):
    a = ReferenceSource(unit_v, [0.0, 0.0])
    b = ReferenceSource(unit_v, [0.0, 0.0])
    a.start_trajectory(trajectory_from_arrays([0.0], [[0.3, -0.2]]), 0.0)
    b.push_setpoint(TrajectoryPoint(0.0, [0.3, -0.2]), 0.0)
    qa = [r.q_star.copy() for r in run(a, 0.0, 2.0)]
    qb = [r.q_star.copy() for r in run(b, 0.0, 2.0)]
    assert np.allclose(qa[-1], [0.3, -0.2])
    assert np.allclose(qb[-1], [0.3, -0.2])
    assert all(np.all(np.abs(np.diff(np.array(qa), axis=0)) <= DT + 1e-12) for _ in [0])


def test_preemption_is_continuous(unit_v):
    src = ReferenceSource(unit_v, [0.0, 0.0])
    src.start_trajectory(trajectory_from_arrays([0.5, 2.0], [[0.5, 0.5], [1.0, -0.5]]), 0.0)
    refs = run(src, 0.0, 1.0)
    src.start_trajectory(trajectory_from_arrays([0.0, 1.0], [[-0.5, 0.2], [0.0, 0.0]]), 1.0)
    refs += run(src, 1.0 + DT, 4.0)
    q = np.array([r.q_star for r in refs])
    assert np.all(np.abs(np.diff(q, axis=0)) <= DT * 1.0 + 1e-12)
    assert np.allclose(q[-1], [0.0, 0.0])


def test_empty_and_bad_trajectories_rejected(planar):
    with pytest.raises(ValueError):
        Trajectory(())
    with pytest.raises(ValueError):
        trajectory_from_arrays([0.0, 0.0], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        trajectory_from_arrays([1.0, 0.5], [[0, 0], [1, 1]])
    with pytest.raises(ValueError):
        TrajectoryPoint(-1.0, [0.0])
    src = ReferenceSource(planar, [0.0, 0.0])
    with pytest.raises(ValueError):
        src.start_trajectory(trajectory_from_arrays([0.0], [[0.0, 0.0, 0.0]]), 0.0)


def test_hold_is_constant(gen3, rng):
    q0 = rng.uniform(-1, 1, 7)
    src = ReferenceSource(gen3, q0)
    first = src.sample(0.0)
    for ref in run(src, 0.0, 3.0, dt=0.1):
        assert np.array_equal(ref.q_star, first.q_star)
        assert np.array_equal(ref.x_star.position, first.x_star.position)
    assert src.mode == "hold"


def test_modes(planar):
    src = ReferenceSource(planar, [0.0, 0.0])
    assert src.mode == "hold"
    src.push_setpoint(TrajectoryPoint(0.0, [0.1, 0.0]), 0.0)
    assert src.mode == "streaming"
    src.start_trajectory(trajectory_from_arrays([1.0], [[0.1, 0.1]]), 0.0)
    assert src.mode == "executing"
    src.hold()
    assert src.mode == "hold"


def test_passivity_flag_propagates(planar):
    src = ReferenceSource(planar, [0.0, 0.0], passivity_mode=True)
    assert src.sample(0.0).passivity_mode
    src.passivity_mode = False
    assert not src.sample(0.001).passivity_mode


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from(["push", "traj"]),
            st.floats(0.0, 0.5),
            st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2),
        ),
        min_size=1,
        max_size=5,
    )
)
def test_reference_continuity_property(commands):
    from compliant_control import data_file
    from compliant_control.model import load_model

    model = load_model(data_file("planar2.model"))
    src = ReferenceSource(model, [0.0, 0.0])
    now = 0.0
    prev = src.sample(now).q_star.copy()
    worst = 0.0
    for kind, gap, q in commands:
        if kind == "push":
            src.push_setpoint(TrajectoryPoint(0.0, q), now)
        else:
            src.start_trajectory(trajectory_from_arrays([0.2, 0.6], [q, [0.0, 0.0]]), now)
        for _ in range(int(gap / DT) + 1):
            now += DT
            cur = src.sample(now).q_star
            worst = max(worst, float(np.max(np.abs(cur - prev) / model.v_max)))
            prev = cur.copy()
    assert worst <= DT + 1e-12
