"""Reference generation: streamed setpoints and whole-trajectory execution.

:class:`ReferenceSource` is a three-mode state machine (hold, streaming,
executing) that emits one joint reference per control tick. Task-space
targets are always derived from the joint reference (x* = FK(q*),
xd* = J(q*) qd*).

Every emitted reference passes through a per-joint rate limiter
(|dq*| <= vmax dt) unless it is disabled, so mode switches, preemptions
and teleoperation jumps never produce a step in q*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from . import model as _model
from .controller import Reference, ReferenceArrays, make_reference_arrays
from .model import ChainModel, Pose, make_workspace

HOLD, STREAMING, EXECUTING = 0, 1, 2
CUBIC, LINEAR = 0, 1
BRIDGE_MIN_DURATION = 0.5
DEFAULT_CAPACITY = 20000


@dataclass(frozen=True)
class TrajectoryPoint:
    t_from_start: float
    q_star: np.ndarray
    qd_star: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "t_from_start", float(self.t_from_start))
        object.__setattr__(self, "q_star", np.array(self.q_star, dtype=float).reshape(-1))
        if self.qd_star is not None:
            qd = np.array(self.qd_star, dtype=float).reshape(-1)
            if qd.shape != self.q_star.shape:
                raise ValueError("qd_star length differs from q_star")
            object.__setattr__(self, "qd_star", qd)
        if not self.t_from_start >= 0.0:
            raise ValueError("t_from_start must be >= 0")

    def is_finite(self) -> bool:
        ok = math.isfinite(self.t_from_start) and bool(np.all(np.isfinite(self.q_star)))
        return ok and (self.qd_star is None or bool(np.all(np.isfinite(self.qd_star))))


@dataclass(frozen=True)
class Trajectory:
    points: tuple
    interpolation: str = "cubic"

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise ValueError("trajectory has no points")
        if self.interpolation not in ("cubic", "linear"):
            raise ValueError(f"unknown interpolation '{self.interpolation}'")
        n = pts[0].q_star.shape[0]
        for k, p in enumerate(pts):
            if p.q_star.shape[0] != n:
                raise ValueError(f"point {k} has {p.q_star.shape[0]} joints, expected {n}")
            if not p.is_finite():
                raise ValueError(f"point {k} has non-finite values")
            if k and not p.t_from_start > pts[k - 1].t_from_start:
                raise ValueError(f"point {k}: time not strictly increasing")

    @property
    def duration(self) -> float:
        return self.points[-1].t_from_start


class SourceArrays(NamedTuple):
    mode: np.ndarray  # int64 [mode, interpolation, count]
    times: np.ndarray  # (cap,) knot times relative to t0
    knots_q: np.ndarray  # (cap, n)
    knots_qd: np.ndarray  # (cap, n)
    clock: np.ndarray  # [t0, last_t, remaining, done]
    target_q: np.ndarray
    target_qd: np.ndarray
    last_q: np.ndarray
    last_qd: np.ndarray
    raw_q: np.ndarray
    raw_qd: np.ndarray
    vmax: np.ndarray
    flags: np.ndarray  # bool [rate_limit, unused, passivity_mode]


def make_source_arrays(n: int, capacity: int) -> SourceArrays:
    return SourceArrays(
        mode=np.zeros(3, dtype=np.int64),
        times=np.zeros(capacity),
        knots_q=np.zeros((capacity, n)),
        knots_qd=np.zeros((capacity, n)),
        clock=np.zeros(4),
        target_q=np.zeros(n),
        target_qd=np.zeros(n),
        last_q=np.zeros(n),
        last_qd=np.zeros(n),
        raw_q=np.zeros(n),
        raw_qd=np.zeros(n),
        vmax=np.ones(n),
        flags=np.zeros(3, dtype=np.bool_),
    )


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _hermite(src, tau):
    """Interpolate the knot table at tau (relative time) into raw_q / raw_qd."""
    count = src.mode[2]
    times = src.times
    n = src.raw_q.shape[0]
    if tau >= times[count - 1]:
        for i in range(n):
            src.raw_q[i] = src.knots_q[count - 1, i]
            src.raw_qd[i] = 0.0
        return True
    if tau <= times[0]:
        for i in range(n):
            src.raw_q[i] = src.knots_q[0, i]
            src.raw_qd[i] = 0.0 if tau < times[0] else src.knots_qd[0, i]
        return False
    lo = 0
    hi = count - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if times[mid] <= tau:
            lo = mid
        else:
            hi = mid
    T = times[hi] - times[lo]
    s = (tau - times[lo]) / T
    if src.mode[1] == 1:
        for i in range(n):
            dq = src.knots_q[hi, i] - src.knots_q[lo, i]
            src.raw_q[i] = src.knots_q[lo, i] + s * dq
            src.raw_qd[i] = dq / T
        return False
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    d00 = (6 * s2 - 6 * s) / T
    d10 = 3 * s2 - 4 * s + 1
    d01 = (-6 * s2 + 6 * s) / T
    d11 = 3 * s2 - 2 * s
    for i in range(n):
        p0 = src.knots_q[lo, i]
        p1 = src.knots_q[hi, i]
        m0 = src.knots_qd[lo, i]
        m1 = src.knots_qd[hi, i]
        src.raw_q[i] = h00 * p0 + h10 * T * m0 + h01 * p1 + h11 * T * m1
        src.raw_qd[i] = d00 * p0 + d10 * m0 + d01 * p1 + d11 * m1
    return False


@njit(cache=True)
def _sample(src, now, model, ws, J, ref):
    """Emit the reference for time ``now`` into ``ref`` and update the source."""
    n = src.last_q.shape[0]
    mode = src.mode[0]
    done = True
    remaining = 0.0
    if mode == 2:
        tau = now - src.clock[0]
        if tau < 0.0:
            for i in range(n):
                src.raw_q[i] = src.last_q[i]
                src.raw_qd[i] = 0.0
            done = False
            remaining = src.times[src.mode[2] - 1] - tau
        else:
            done = _hermite(src, tau)
            remaining = max(src.times[src.mode[2] - 1] - tau, 0.0)
    elif mode == 1:
        for i in range(n):
            src.raw_q[i] = src.target_q[i]
            src.raw_qd[i] = src.target_qd[i]
    else:
        for i in range(n):
            src.raw_q[i] = src.last_q[i]
            src.raw_qd[i] = 0.0

    step = now - src.clock[1]
    if step < 0.0:
        step = 0.0
    limit = src.flags[0]
    for i in range(n):
        qi = src.raw_q[i]
        qdi = src.raw_qd[i]
        if limit:
            lim = src.vmax[i] * step
            d = qi - src.last_q[i]
            if d > lim:
                qi = src.last_q[i] + lim
                qdi = src.vmax[i]
                done = False
            elif d < -lim:
                qi = src.last_q[i] - lim
                qdi = -src.vmax[i]
                done = False
        src.last_q[i] = qi
        src.last_qd[i] = qdi
        ref.q_star[i] = qi
        ref.qd_star[i] = qdi
    src.clock[1] = now
    src.clock[2] = remaining
    src.clock[3] = 1.0 if done else 0.0
    ref.flags[0] = src.flags[2]

    _model._frames(model, ref.q_star, ws)
    _model._jacobian_frames(ws, J)
    for a in range(3):
        ref.p_star[a] = ws.pee[a]
        for b in range(3):
            ref.R_star[a, b] = ws.Ree[a, b]
    for k in range(6):
        s = 0.0
        for i in range(n):
            s += J[k, i] * ref.qd_star[i]
        ref.xd_star[k] = s


# --------------------------------------------------------------------------


def _fill_velocities(times: np.ndarray, q: np.ndarray, qd: np.ndarray, given: np.ndarray) -> None:
    """Finite-difference velocities for knots without explicit ones; zero at the ends."""
    count = times.shape[0]
    for k in range(count):
        if given[k]:
            continue
        if k == 0 or k == count - 1:
            qd[k] = 0.0
        else:
            qd[k] = (q[k + 1] - q[k - 1]) / (times[k + 1] - times[k - 1])


class ReferenceSource:
    """Per-tick reference generator fed by setpoints and trajectories.

    Construct it with the hold position (normally the measured start
    configuration). :meth:`sample` must be called once per control tick with
    a non-decreasing clock.
    """

    def __init__(
        self,
        model: ChainModel,
        q_hold,
        *,
        rate_limit: bool = True,
        capacity: int = DEFAULT_CAPACITY,
        passivity_mode: bool = False,
        now: float = 0.0,
    ):
        n = model.n_joints
        self.model = model
        self.src = make_source_arrays(n, capacity)
        self.src.vmax[:] = model.v_max
        self.src.flags[0] = rate_limit
        self.src.flags[2] = passivity_mode
        q_hold = _model._joint_vector(model, q_hold, "q_hold")
        self.src.last_q[:] = q_hold
        self.src.clock[1] = float(now)
        self.ws = make_workspace(n)
        self.J = np.zeros((6, n))
        self.ref = make_reference_arrays(n)
        self.rejected = 0

    # -- inputs -------------------------------------------------------------

    @property
    def mode(self) -> str:
        return ("hold", "streaming", "executing")[int(self.src.mode[0])]

    @property
    def passivity_mode(self) -> bool:
        return bool(self.src.flags[2])

    @passivity_mode.setter
    def passivity_mode(self, value: bool) -> None:
        self.src.flags[2] = bool(value)

    def hold(self, q=None) -> None:
        """Switch to hold at the current reference (or slew to q)."""
        if q is not None:
            self.src.target_q[:] = _model._joint_vector(self.model, q)
            self.src.target_qd[:] = 0.0
            self.src.mode[0] = STREAMING
        else:
            self.src.mode[0] = HOLD

    def push_setpoint(self, point: TrajectoryPoint, now: float) -> "ReferenceSource":
        """Stream a single setpoint; the newest one replaces any pending target."""
        n = self.model.n_joints
        if point.q_star.shape[0] != n:
            self.rejected += 1
            raise ValueError(f"setpoint has {point.q_star.shape[0]} joints, expected {n}")
        if not point.is_finite():
            self.rejected += 1
            raise ValueError("setpoint contains non-finite values")
        self.src.target_q[:] = point.q_star
        self.src.target_qd[:] = 0.0 if point.qd_star is None else point.qd_star
        self.src.mode[0] = STREAMING
        return self

    def start_trajectory(self, traj: Trajectory, now: float) -> "ReferenceSource":
        """Execute ``traj`` with its time origin at ``now``.

        The current reference is prepended as the first knot. When the first
        point lies further away than its time allows at vmax, the trajectory
        is delayed so the bridge segment lasts at least 0.5 s and respects
        vmax.
        """
        n = self.model.n_joints
        if not isinstance(traj, Trajectory):
            traj = Trajectory(tuple(traj))
        if traj.points[0].q_star.shape[0] != n:
            raise ValueError(f"trajectory has {traj.points[0].q_star.shape[0]} joints, expected {n}")
        count = len(traj.points) + 1
        if count > self.src.times.shape[0]:
            raise ValueError(f"trajectory exceeds the preallocated capacity of {self.src.times.shape[0] - 1} points")

        start_q = self.src.last_q.copy()
        start_qd = self.src.last_qd.copy()
        first = traj.points[0]
        dist = np.abs(first.q_star - start_q)
        shift = 0.0
        if np.any(dist > 0.0):
            needed = max(BRIDGE_MIN_DURATION, 1.5 * float(np.max(dist / self.model.v_max)))
            if first.t_from_start < needed:
                shift = needed - first.t_from_start
        times = np.empty(count)
        q = np.empty((count, n))
        qd = np.zeros((count, n))
        given = np.zeros(count, dtype=bool)
        times[0] = 0.0
        q[0] = start_q
        qd[0] = start_qd
        given[0] = True
        for k, p in enumerate(traj.points, start=1):
            times[k] = p.t_from_start + shift
            q[k] = p.q_star
            if p.qd_star is not None:
                qd[k] = p.qd_star
                given[k] = True
        if times[1] == 0.0:
            # first point at the current reference and time zero: drop the duplicate knot
            times, q, qd, given = times[1:], q[1:], qd[1:], given[1:]
            count -= 1
        _fill_velocities(times, q, qd, given)

        src = self.src
        src.times[:count] = times
        src.knots_q[:count] = q
        src.knots_qd[:count] = qd
        src.mode[1] = CUBIC if traj.interpolation == "cubic" else LINEAR
        src.mode[2] = count
        src.clock[0] = float(now)
        src.clock[2] = times[-1]
        src.clock[3] = 0.0
        src.mode[0] = EXECUTING
        return self

    # -- output -------------------------------------------------------------

    def sample_into(self, now: float, ref: ReferenceArrays) -> ReferenceArrays:
        _sample(self.src, float(now), self.model, self.ws, self.J, ref)
        return ref

    def sample(self, now: float) -> Reference:
        self.sample_into(now, self.ref)
        r = self.ref
        return Reference(
            q_star=r.q_star.copy(),
            qd_star=r.qd_star.copy(),
            x_star=Pose.from_matrix(r.p_star.copy(), r.R_star),
            xd_star=r.xd_star.copy(),
            passivity_mode=bool(r.flags[0]),
        )

    @property
    def done(self) -> bool:
        return bool(self.src.clock[3])

    @property
    def time_remaining(self) -> float:
        return float(self.src.clock[2])


def trajectory_from_arrays(times: Sequence[float], q, qd=None, interpolation: str = "cubic") -> Trajectory:
    q = np.asarray(q, dtype=float)
    pts = []
    for k, t in enumerate(times):
        pts.append(TrajectoryPoint(t, q[k], None if qd is None else np.asarray(qd, dtype=float)[k]))
    return Trajectory(tuple(pts), interpolation)
