"""Rigid-joint plant used as the hardware stand-in.

Motor and link co-rotate; the reflected rotor inertia adds to the diagonal
of the link mass matrix::

    (M(q) + K_r) qdd + C(q, qd) qd + g(q) = tau_m - tau_f(qd) + tau_ext

with tau_ext = J^T w for an end-effector wrench (plus optional direct joint
torques). The joint torque sensor sits between motor and link and reads the
transmitted torque M qdd + C qd + g - tau_ext, so that
tau_m - tau_sensor = K_r qdd + tau_f holds exactly every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from . import model as _model
from .model import ChainModel, JointState, make_workspace
from .spatial import cholesky_solve

DEFAULT_V_EPS = 1e-3
Q_GUARD = 4.0 * math.pi


class DivergenceError(RuntimeError):
    def __init__(self, t: float, what: str = "non-finite state"):
        super().__init__(f"plant diverged at t={t:.6f} s ({what})")
        self.t = t


class PlantState(NamedTuple):
    q: np.ndarray
    qd: np.ndarray
    t: np.ndarray  # (1,) seconds
    last_tau_sensor: np.ndarray
    last_qdd: np.ndarray  # joint acceleration of the final substep
    last_tau_f: np.ndarray  # true friction of the final substep


def make_plant_state(q, qd=None, t: float = 0.0) -> PlantState:
    q = np.array(q, dtype=float).reshape(-1)
    n = q.shape[0]
    qd = np.zeros(n) if qd is None else np.array(qd, dtype=float).reshape(n)
    return PlantState(q, qd, np.array([float(t)]), np.zeros(n), np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class ExternalDisturbance:
    """End-effector wrench (base frame) or direct joint torques active on [t_start, t_end)."""

    t_start: float
    t_end: float
    wrench: Sequence[float] = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    joint_torque: Sequence[float] | None = None

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("disturbance window needs t_start < t_end")
        if len(self.wrench) != 6:
            raise ValueError("wrench must have 6 entries")


class DisturbanceArrays(NamedTuple):
    window: np.ndarray  # (k, 2)
    wrench: np.ndarray  # (k, 6)
    joint_torque: np.ndarray  # (k, n)


def disturbance_arrays(dists: Sequence[ExternalDisturbance], n: int) -> DisturbanceArrays:
    k = len(dists)
    out = DisturbanceArrays(np.zeros((k, 2)), np.zeros((k, 6)), np.zeros((k, n)))
    for i, d in enumerate(dists):
        out.window[i] = (d.t_start, d.t_end)
        out.wrench[i] = d.wrench
        if d.joint_torque is not None:
            jt = np.asarray(d.joint_torque, dtype=float)
            if jt.shape != (n,):
                raise ValueError(f"joint_torque must have {n} entries")
            out.joint_torque[i] = jt
    return out


class PlantWorkspace(NamedTuple):
    M: np.ndarray
    A: np.ndarray
    L: np.ndarray
    bias: np.ndarray
    rhs: np.ndarray
    qdd: np.ndarray
    tau_f: np.ndarray
    ext: np.ndarray
    J: np.ndarray
    zeros: np.ndarray


def make_plant_workspace(n: int) -> PlantWorkspace:
    return PlantWorkspace(
        M=np.zeros((n, n)),
        A=np.zeros((n, n)),
        L=np.zeros((n, n)),
        bias=np.zeros(n),
        rhs=np.zeros(n),
        qdd=np.zeros(n),
        tau_f=np.zeros(n),
        ext=np.zeros(n),
        J=np.zeros((6, n)),
        zeros=np.zeros(n),
    )


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _friction(model, qd, v_eps, out):
    for i in range(qd.shape[0]):
        out[i] = model.coulomb[i] * math.tanh(qd[i] / v_eps) + model.viscous[i] * qd[i]


@njit(cache=True)
def _external(model, ws, dist, t, pw):
    """Sum active disturbances into pw.ext; returns False when none is active.

    Frames must already be filled for the current q.
    """
    n = model.n_joints
    active = False
    for k in range(dist.window.shape[0]):
        if dist.window[k, 0] <= t < dist.window[k, 1]:
            if not active:
                _model._jacobian_frames(ws, pw.J)
                for i in range(n):
                    pw.ext[i] = 0.0
                active = True
            for i in range(n):
                s = dist.joint_torque[k, i]
                for r in range(6):
                    s += pw.J[r, i] * dist.wrench[k, r]
                pw.ext[i] += s
    return active


@njit(cache=True)
def _plant_step(model, state, ws, pw, tau_m, dist, dt, substeps, v_eps, friction_on):
    """Advance the plant by dt; returns 0 on success, 1 on divergence."""
    n = model.n_joints
    h = dt / substeps
    t0 = state.t[0]
    for k in range(substeps):
        t = t0 + k * h
        q = state.q
        qd = state.qd
        _model._frames(model, q, ws)
        _model._mass_matrix_frames(model, ws, pw.M)
        _model._rnea_frames(model, ws, qd, pw.zeros, 1.0, pw.bias)
        if friction_on:
            _friction(model, qd, v_eps, pw.tau_f)
        else:
            for i in range(n):
                pw.tau_f[i] = 0.0
        has_ext = _external(model, ws, dist, t, pw)
        for i in range(n):
            r = tau_m[i] - pw.tau_f[i] - pw.bias[i]
            if has_ext:
                r += pw.ext[i]
            pw.rhs[i] = r
            for j in range(n):
                pw.A[i, j] = pw.M[i, j]
            pw.A[i, i] += model.rotor_inertia[i]
        if not cholesky_solve(pw.A, pw.rhs, pw.L, pw.qdd):
            return 1
        for i in range(n):
            s = pw.bias[i]
            for j in range(n):
                s += pw.M[i, j] * pw.qdd[j]
            if has_ext:
                s -= pw.ext[i]
            state.last_tau_sensor[i] = s
            state.last_qdd[i] = pw.qdd[i]
            state.last_tau_f[i] = pw.tau_f[i]
        for i in range(n):
            qd[i] += pw.qdd[i] * h
            q[i] += qd[i] * h
        for i in range(n):
            if not (math.isfinite(q[i]) and math.isfinite(qd[i])) or abs(q[i]) > 4.0 * math.pi:
                state.t[0] = t + h
                return 1
    state.t[0] = t0 + dt
    return 0


@njit(cache=True)
def _read_sensors(state, noise_row, q_out, qd_out, tau_out):
    n = q_out.shape[0]
    for i in range(n):
        q_out[i] = state.q[i] + noise_row[i]
        qd_out[i] = state.qd[i] + noise_row[n + i]
        tau_out[i] = state.last_tau_sensor[i] + noise_row[2 * n + i]


@njit(cache=True)
def _mechanical_energy(model, ws, q, qd, M, with_potential):
    """0.5 qd^T (M + K_r) qd, plus gravity potential when requested."""
    _model._frames(model, q, ws)
    _model._mass_matrix_frames(model, ws, M)
    n = q.shape[0]
    e = 0.0
    for i in range(n):
        s = model.rotor_inertia[i] * qd[i]
        for j in range(n):
            s += M[i, j] * qd[j]
        e += 0.5 * qd[i] * s
    if with_potential:
        e += _model._potential_energy(model, ws)
    return e


# --------------------------------------------------------------------------
# public functions


def friction_torque(model: ChainModel, qd, v_eps: float = DEFAULT_V_EPS) -> np.ndarray:
    """Smooth Coulomb plus viscous friction, tau_f = fc tanh(qd / v_eps) + fv qd."""
    qd = _model._joint_vector(model, qd, "qd")
    out = np.empty(model.n_joints)
    _friction(model, qd, float(v_eps), out)
    return out


def plant_step(
    state: PlantState,
    model: ChainModel,
    tau_m,
    dist: ExternalDisturbance | Sequence[ExternalDisturbance] | None = None,
    dt: float = 1e-3,
    substeps: int = 10,
    *,
    v_eps: float = DEFAULT_V_EPS,
    friction: bool = True,
) -> PlantState:
    """Integrate one control period with semi-implicit Euler substeps (in place)."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    n = model.n_joints
    tau_m = _model._joint_vector(model, tau_m, "tau_m")
    if dist is None:
        dists = []
    elif isinstance(dist, ExternalDisturbance):
        dists = [dist]
    else:
        dists = list(dist)
    code = _plant_step(
        model,
        state,
        make_workspace(n),
        make_plant_workspace(n),
        tau_m,
        disturbance_arrays(dists, n),
        float(dt),
        int(substeps),
        float(v_eps),
        bool(friction),
    )
    if code:
        raise DivergenceError(float(state.t[0]))
    return state


def read_sensors(state: PlantState, noise_seed=None, sigma=(0.0, 0.0, 0.0)) -> JointState:
    """Measured (q, qd, tau); Gaussian noise with std sigma = (q, qd, tau) if non-zero.

    ``noise_seed`` may be an int or a ``numpy.random.Generator``.
    """
    q = state.q.copy()
    qd = state.qd.copy()
    tau = state.last_tau_sensor.copy()
    if any(s > 0 for s in sigma):
        rng = noise_seed if isinstance(noise_seed, np.random.Generator) else np.random.default_rng(noise_seed)
        n = q.shape[0]
        noise = rng.standard_normal((3, n))
        q += sigma[0] * noise[0]
        qd += sigma[1] * noise[1]
        tau += sigma[2] * noise[2]
    return JointState(q, qd, tau)


def mechanical_energy(model: ChainModel, q, qd, with_potential: bool = True) -> float:
    """Kinetic energy including rotor inertia, plus gravity potential if requested."""
    n = model.n_joints
    return float(
        _mechanical_energy(
            model,
            make_workspace(n),
            _model._joint_vector(model, q),
            _model._joint_vector(model, qd, "qd"),
            np.empty((n, n)),
            with_potential,
        )
    )


def estimate_ee_wrench(model: ChainModel, q, tau, damping: float = 1e-6) -> np.ndarray:
    """Diagnostic end-effector wrench from joint torques, (J J^T + lambda I)^-1 J tau.

    Only meaningful where J has full row rank; not used by the controller.
    """
    J = _model.geometric_jacobian(model, q)
    tau = _model._joint_vector(model, tau, "tau")
    return np.linalg.solve(J @ J.T + damping * np.eye(6), J @ tau)


class Simulator:
    """Convenience owner of a plant state, its buffers and disturbance schedule."""

    def __init__(
        self,
        model: ChainModel,
        q0,
        qd0=None,
        *,
        disturbances: Sequence[ExternalDisturbance] = (),
        friction: bool = True,
        substeps: int = 10,
        v_eps: float = DEFAULT_V_EPS,
    ):
        n = model.n_joints
        self.model = model
        self.state = make_plant_state(q0, qd0)
        self.ws = make_workspace(n)
        self.pw = make_plant_workspace(n)
        self.dist = disturbance_arrays(list(disturbances), n)
        self.friction = bool(friction)
        self.substeps = int(substeps)
        self.v_eps = float(v_eps)
        # seed the sensor with the static torque so the first reading is consistent
        self.state.last_tau_sensor[:] = _model.gravity_torques(model, self.state.q)

    @property
    def t(self) -> float:
        return float(self.state.t[0])

    def step(self, tau_m, dt: float) -> PlantState:
        code = _plant_step(
            self.model,
            self.state,
            self.ws,
            self.pw,
            np.ascontiguousarray(tau_m, dtype=float),
            self.dist,
            float(dt),
            self.substeps,
            self.v_eps,
            self.friction,
        )
        if code:
            raise DivergenceError(self.t)
        return self.state

    def sensors(self) -> JointState:
        return read_sensors(self.state)
