"""Blended joint-space / task-space impedance law.

Per tick the motor command is::

    tau_m = clamp(tau_q + tau_x - tau_f_hat + g)

    tau_q = s_q * (-Kp (q_eff - q*) - clamp_d(Kd (qd_eff - qd*)))
    tau_x = s_x * J^T (-Kpx e_x - clamp_w(Kdx (xd - xd*)))

where (q_eff, qd_eff) is the nominal observer state when the observer is
on and the measured state otherwise, e_x is the base-frame pose error
(position, then rotation vector of R R*^T), xd = J qd, and g is gravity at
q* (default) or at the measured q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from . import model as _model
from .gains import GainArrays, GainError, GainSet, set_blend  # noqa: F401  (re-exported)
from .model import ChainModel, DynamicsWorkspace, Pose, make_workspace
from .observer import ObserverState, _observer_step, make_observer_state, set_enabled
from .observer import reset as reset_observer
from .spatial import quaternion_to_matrix, rotation_log


@dataclass(frozen=True)
class Reference:
    """Desired state for one tick. Task-space targets are normally FK-derived."""

    q_star: np.ndarray
    qd_star: np.ndarray
    x_star: Pose
    xd_star: np.ndarray
    passivity_mode: bool = False

    @classmethod
    def from_joints(cls, model: ChainModel, q_star, qd_star=None, passivity_mode=False) -> "Reference":
        q_star = np.array(q_star, dtype=float).reshape(-1)
        qd_star = np.zeros_like(q_star) if qd_star is None else np.array(qd_star, dtype=float).reshape(-1)
        x_star = _model.forward_kinematics(model, q_star)
        xd_star = _model.geometric_jacobian(model, q_star) @ qd_star
        return cls(q_star, qd_star, x_star, xd_star, passivity_mode)


@dataclass
class TorqueCommand:
    """Motor torque plus the per-term breakdown kept for logging."""

    tau_m: np.ndarray
    tau_q: np.ndarray
    tau_x: np.ndarray
    tau_f_hat: np.ndarray
    g_comp: np.ndarray
    clamped: np.ndarray = field(default=None)

    @property
    def any_clamped(self) -> bool:
        return bool(np.any(self.clamped))


class CommandArrays(NamedTuple):
    tau_m: np.ndarray
    tau_q: np.ndarray
    tau_x: np.ndarray
    tau_f_hat: np.ndarray
    g_comp: np.ndarray
    clamped: np.ndarray  # bool per joint


def make_command(n: int) -> CommandArrays:
    return CommandArrays(*(np.zeros(n) for _ in range(5)), clamped=np.zeros(n, dtype=np.bool_))


class ReferenceArrays(NamedTuple):
    q_star: np.ndarray
    qd_star: np.ndarray
    p_star: np.ndarray  # (3,)
    R_star: np.ndarray  # (3, 3)
    xd_star: np.ndarray  # (6,)
    flags: np.ndarray  # bool [passivity_mode]


def make_reference_arrays(n: int) -> ReferenceArrays:
    return ReferenceArrays(
        q_star=np.zeros(n),
        qd_star=np.zeros(n),
        p_star=np.zeros(3),
        R_star=np.eye(3),
        xd_star=np.zeros(6),
        flags=np.zeros(1, dtype=np.bool_),
    )


def reference_to_arrays(ref: Reference, out: ReferenceArrays | None = None) -> ReferenceArrays:
    if out is None:
        out = make_reference_arrays(len(ref.q_star))
    out.q_star[:] = ref.q_star
    out.qd_star[:] = ref.qd_star
    out.p_star[:] = ref.x_star.position
    quaternion_to_matrix(ref.x_star.orientation, out.R_star)
    out.xd_star[:] = ref.xd_star
    out.flags[0] = ref.passivity_mode
    return out


class ControlWorkspace(NamedTuple):
    J: np.ndarray  # (6, n)
    xd: np.ndarray  # (6,)
    err: np.ndarray  # (6,)
    wrench: np.ndarray  # (6,)
    Rtmp: np.ndarray  # (3, 3)
    p: np.ndarray  # (3,) end-effector position at the task configuration
    R: np.ndarray  # (3, 3)
    u_prev: np.ndarray  # (n,)
    zeros: np.ndarray  # (n,)


def make_control_workspace(n: int) -> ControlWorkspace:
    return ControlWorkspace(
        J=np.zeros((6, n)),
        xd=np.zeros(6),
        err=np.zeros(6),
        wrench=np.zeros(6),
        Rtmp=np.zeros((3, 3)),
        p=np.zeros(3),
        R=np.eye(3),
        u_prev=np.zeros(n),
        zeros=np.zeros(n),
    )


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _pose_error(p, R, p_star, R_star, Rtmp, out):
    for a in range(3):
        out[a] = p[a] - p_star[a]
        for b in range(3):
            Rtmp[a, b] = R[a, 0] * R_star[b, 0] + R[a, 1] * R_star[b, 1] + R[a, 2] * R_star[b, 2]
    rotation_log(Rtmp, out[3:])


@njit(cache=True)
def _joint_torque(gains, q_eff, qd_eff, q_star, qd_star, passive, out):
    s_q = gains.scal[0]
    for i in range(q_eff.shape[0]):
        vel_err = qd_eff[i] if passive else qd_eff[i] - qd_star[i]
        d = gains.Kd[i] * vel_err
        lim = gains.tau_d_max[i]
        if d > lim:
            d = lim
        elif d < -lim:
            d = -lim
        out[i] = s_q * (-gains.Kp[i] * (q_eff[i] - q_star[i]) - d)


@njit(cache=True)
def _task_torque(gains, J, err, xd, xd_star, passive, wrench, out):
    s_x = gains.scal[1]
    n = J.shape[1]
    if s_x == 0.0:
        for i in range(n):
            out[i] = 0.0
        return
    for k in range(6):
        vel_err = xd[k] if passive else xd[k] - xd_star[k]
        d = gains.Kdx[k] * vel_err
        lim = gains.wrench_d_max[k]
        if d > lim:
            d = lim
        elif d < -lim:
            d = -lim
        wrench[k] = -gains.Kpx[k] * err[k] - d
    for i in range(n):
        s = 0.0
        for k in range(6):
            s += J[k, i] * wrench[k]
        out[i] = s_x * s


@njit(cache=True)
def _compose(gains, cmd):
    for i in range(cmd.tau_m.shape[0]):
        v = cmd.tau_q[i] + cmd.tau_x[i] - cmd.tau_f_hat[i] + cmd.g_comp[i]
        lim = gains.tau_max[i]
        clamped = False
        if v > lim:
            v = lim
            clamped = True
        elif v < -lim:
            v = -lim
            clamped = True
        cmd.tau_m[i] = v
        cmd.clamped[i] = clamped


@njit(cache=True)
def _task_pose(model, ws, q, qd, cws):
    """End-effector pose, Jacobian and twist J qd at configuration q."""
    _model._frames(model, q, ws)
    _model._jacobian_frames(ws, cws.J)
    for a in range(3):
        cws.p[a] = ws.pee[a]
        for b in range(3):
            cws.R[a, b] = ws.Ree[a, b]
    for k in range(6):
        s = 0.0
        for i in range(q.shape[0]):
            s += cws.J[k, i] * qd[i]
        cws.xd[k] = s


@njit(cache=True)
def _gravity_into(model, ws, q, zeros, out):
    _model._frames(model, q, ws)
    _model._rnea_frames(model, ws, zeros, zeros, 1.0, out)


@njit(cache=True)
def _control_tick(model, gains, obs, ws, cws, ref, q, qd, tau_meas, dt, cmd):
    """One control step: observer, joint law, task law, gravity, composition.

    ``cmd`` holds the previous tick's command on entry and is overwritten.
    """
    n = q.shape[0]
    for i in range(n):
        cws.u_prev[i] = cmd.tau_m[i] + cmd.tau_f_hat[i]
    _observer_step(obs, gains, model.rotor_inertia, cws.u_prev, tau_meas, q, qd, dt)
    for i in range(n):
        cmd.tau_f_hat[i] = obs.tau_f_hat[i]

    passive = ref.flags[0]
    if obs.enabled[0]:
        _joint_torque(gains, obs.q_n, obs.qd_n, ref.q_star, ref.qd_star, passive, cmd.tau_q)
    else:
        _joint_torque(gains, q, qd, ref.q_star, ref.qd_star, passive, cmd.tau_q)

    if obs.enabled[0] and gains.scal[4] != 0.0:
        _task_pose(model, ws, obs.q_n, obs.qd_n, cws)
    else:
        _task_pose(model, ws, q, qd, cws)
    _pose_error(cws.p, cws.R, ref.p_star, ref.R_star, cws.Rtmp, cws.err)
    _task_torque(gains, cws.J, cws.err, cws.xd, ref.xd_star, passive, cws.wrench, cmd.tau_x)

    if gains.scal[3] != 0.0:
        _gravity_into(model, ws, ref.q_star, cws.zeros, cmd.g_comp)
    else:
        _gravity_into(model, ws, q, cws.zeros, cmd.g_comp)
    _compose(gains, cmd)


# --------------------------------------------------------------------------
# public functions


def pose_error(x: Pose, x_star: Pose) -> np.ndarray:
    """6-vector (p - p*, log(R R*^T)) in the base frame."""
    out = np.empty(6)
    _pose_error(
        np.asarray(x.position), x.rotation(), np.asarray(x_star.position), x_star.rotation(), np.empty((3, 3)), out
    )
    return out


def _vec(v, n, name):
    a = np.ascontiguousarray(v, dtype=float).reshape(-1)
    if a.shape[0] != n:
        raise ValueError(f"{name} has length {a.shape[0]}, expected {n}")
    return a


def joint_torque(gains: GainSet, q_eff, qd_eff, ref: Reference) -> np.ndarray:
    """Joint-space PD torque with the derivative term bounded by tau_d_max."""
    n = gains.n_joints
    out = np.empty(n)
    _joint_torque(
        gains.to_arrays(),
        _vec(q_eff, n, "q_eff"),
        _vec(qd_eff, n, "qd_eff"),
        _vec(ref.q_star, n, "q_star"),
        _vec(ref.qd_star, n, "qd_star"),
        bool(ref.passivity_mode),
        out,
    )
    return out


def task_torque(gains: GainSet, J, x: Pose, xd, ref: Reference) -> np.ndarray:
    """Task-space PD wrench mapped to joint torques through J^T."""
    J = np.ascontiguousarray(J, dtype=float)
    n = gains.n_joints
    if J.shape != (6, n):
        raise ValueError(f"J has shape {J.shape}, expected (6, {n})")
    out = np.empty(n)
    _task_torque(
        gains.to_arrays(),
        J,
        pose_error(x, ref.x_star),
        _vec(xd, 6, "xd"),
        _vec(ref.xd_star, 6, "xd_star"),
        bool(ref.passivity_mode),
        np.empty(6),
        out,
    )
    return out


def compose_command(gains: GainSet, tau_q, tau_x, tau_f_hat, model: ChainModel, ref: Reference, q_meas) -> TorqueCommand:
    """Sum the terms, add gravity at q* (or q_meas) and clamp to tau_max."""
    n = gains.n_joints
    q_grav = ref.q_star if gains.gravity_at_target else q_meas
    g = _model.gravity_torques(model, _vec(q_grav, n, "q"))
    cmd = make_command(n)
    cmd.tau_q[:] = _vec(tau_q, n, "tau_q")
    cmd.tau_x[:] = _vec(tau_x, n, "tau_x")
    cmd.tau_f_hat[:] = _vec(tau_f_hat, n, "tau_f_hat")
    cmd.g_comp[:] = g
    _compose(gains.to_arrays(), cmd)
    return TorqueCommand(*(a.copy() for a in cmd))


class ImpedanceController:
    """Stateful controller: owns the observer and all per-tick buffers.

    Buffers are allocated here; :meth:`step` only writes into them.
    Gain updates go through :meth:`set_gains`, which copies a whole
    validated snapshot between ticks.
    """

    def __init__(self, model: ChainModel, gains: GainSet, dt: float, observer: bool = True, T_int_max=None):
        self.model = model
        self.dt = float(dt)
        self.gains = gains.validate_for(model)
        self.garrays = gains.to_arrays()
        n = model.n_joints
        self.obs: ObserverState = make_observer_state(n, max(gains.T_int, T_int_max or 0.0), dt, observer)
        self.ws: DynamicsWorkspace = make_workspace(n)
        self.cws = make_control_workspace(n)
        self.ref = make_reference_arrays(n)
        self.cmd = make_command(n)

    def set_gains(self, gains: GainSet) -> GainSet:
        gains = gains.validate_for(self.model)
        if gains.T_int > self.obs.capacity * self.dt + 1e-12:
            raise GainError("T_int exceeds the observer window allocated at start-up")
        gains.write_into(self.garrays)
        self.gains = gains
        return gains

    def set_observer(self, enabled: bool, q, qd) -> None:
        set_enabled(self.obs, enabled, q, qd)
        if not enabled:
            self.cmd.tau_f_hat[:] = 0.0

    def reset(self, q, qd, tau_m=None) -> None:
        """Seat the observer on (q, qd) and set the previous command."""
        reset_observer(self.obs, q, qd)
        self.cmd.tau_f_hat[:] = 0.0
        self.cmd.tau_m[:] = 0.0 if tau_m is None else tau_m

    def set_reference(self, ref: Reference) -> None:
        reference_to_arrays(ref, self.ref)

    def step_arrays(self, q, qd, tau_meas) -> CommandArrays:
        """Kernel step on prepared float64 arrays; returns the live command buffer."""
        _control_tick(self.model, self.garrays, self.obs, self.ws, self.cws, self.ref, q, qd, tau_meas, self.dt, self.cmd)
        return self.cmd

    def step(self, q, qd, tau_meas, ref: Reference | None = None) -> TorqueCommand:
        n = self.model.n_joints
        if ref is not None:
            self.set_reference(ref)
        self.step_arrays(_vec(q, n, "q"), _vec(qd, n, "qd"), _vec(tau_meas, n, "tau"))
        return TorqueCommand(*(a.copy() for a in self.cmd))
