"""Generate data/pin_insertion.traj for the 7-DOF model.

Task-space waypoints with minimum-jerk timing between them are converted
to joint knots by damped least-squares IK with a posture term in the
null space. The tool keeps its start orientation throughout.

    python3 scripts/make_pin_insertion.py
"""

import numpy as np

from compliant_control import data_file
from compliant_control.model import forward_kinematics, geometric_jacobian, load_model
from compliant_control.spatial import rotation_log
from compliant_control.streaming import format_trajectory
from compliant_control.trajectory import trajectory_from_arrays

HOME = np.array([0.0, 0.26, 3.14, -2.27, 0.0, 0.96, 1.57])
T_START = 1.0
# (time, x, y, z): approach, carry, align over the hole, 10 mm descent
WAYPOINTS = [
    (0.0, None),
    (6.0, (0.50, 0.18, 0.36)),
    (12.0, (0.42, 0.28, 0.26)),
    (17.0, (0.48, 0.10, 0.22)),
    (19.0, (0.48, 0.10, 0.22)),
    (24.0, (0.48, 0.10, 0.21)),
]
KNOT_DT = 0.1


def min_jerk(s):
    return s**3 * (10 - 15 * s + 6 * s**2)


def ik(model, q, p_target, R_target, iters=50, damping=1e-3):
    rot_err = np.zeros(3)
    for _ in range(iters):
        pose = forward_kinematics(model, q)
        err = np.zeros(6)
        err[:3] = p_target - pose.position
        rotation_log(R_target @ pose.rotation().T, rot_err)
        err[3:] = rot_err
        J = geometric_jacobian(model, q)
        JJt = J @ J.T + damping * np.eye(6)
        dq = J.T @ np.linalg.solve(JJt, err)
        null = np.eye(7) - J.T @ np.linalg.solve(JJt, J)
        dq += null @ (0.05 * (HOME - q))
        q = q + dq
        if np.linalg.norm(err) < 1e-10:
            break
    return q


def main():
    model = load_model(data_file("gen3_like.model"))
    start = forward_kinematics(model, HOME)
    R0 = start.rotation()
    pts = [np.array(start.position if p is None else p) for _, p in WAYPOINTS]
    times = np.round(np.arange(0.0, WAYPOINTS[-1][0] + 1e-9, KNOT_DT), 10)
    q = HOME.copy()
    knots = []
    for t in times:
        for k in range(len(WAYPOINTS) - 1):
            t0, t1 = WAYPOINTS[k][0], WAYPOINTS[k + 1][0]
            if t <= t1 + 1e-12:
                s = min_jerk((t - t0) / (t1 - t0))
                p = pts[k] + s * (pts[k + 1] - pts[k])
                break
        q = ik(model, q, p, R0)
        knots.append(q.copy())
    traj = trajectory_from_arrays(times + T_START, np.array(knots))
    text = format_trajectory(traj)
    header = (
        "# Pin-insertion analog for gen3_like.model: 24 s of motion starting at t=1 s,\n"
        "# ending in a 10 mm vertical descent. Generated by scripts/make_pin_insertion.py.\n"
    )
    path = data_file("pin_insertion.traj")
    path.write_text(header + text + "\n", encoding="ascii")
    print(f"wrote {path} with {len(knots)} knots")


if __name__ == "__main__":
    main()
