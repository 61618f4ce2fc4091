"""Serial-chain model: file loading, kinematics and rigid-body dynamics.

All joints are revolute. Each joint frame is placed by a fixed transform
(xyz + rpy) from the previous link frame and then rotated about its axis by
the joint angle; link inertial data is expressed in the resulting link frame.
Quantities returned by the public functions are expressed in the base frame.

The ``_``-prefixed kernels are numba-compiled and write into caller-owned
buffers; the controller and simulator call them directly from the
real-time loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numba import njit

from .spatial import axis_angle_entries, matrix_to_quaternion, rpy_to_matrix


class ModelError(ValueError):
    """Raised for unparseable or physically invalid model files."""


class ChainModel(NamedTuple):
    """Kinematic and dynamic description of an N-joint revolute arm.

    Per-joint arrays have a leading dimension of ``n_joints``. Inertias are
    about the link COM, in the link frame. ``rotor_inertia`` is the reflected
    motor-side inertia (the diagonal of K_r).
    """

    n_joints: int
    joint_xyz: np.ndarray  # (n, 3)
    joint_rpy: np.ndarray  # (n, 3)
    joint_rot: np.ndarray  # (n, 3, 3) rotation from joint_rpy
    axis: np.ndarray  # (n, 3)
    mass: np.ndarray
    com: np.ndarray  # (n, 3)
    inertia: np.ndarray  # (n, 3, 3)
    rotor_inertia: np.ndarray
    coulomb: np.ndarray
    viscous: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    tau_limit: np.ndarray
    gravity: np.ndarray  # (3,)
    ee_xyz: np.ndarray
    ee_rpy: np.ndarray
    ee_rot: np.ndarray  # (3, 3)


@dataclass(frozen=True)
class Pose:
    """Position (m) and unit quaternion (w, x, y, z), canonicalised to w >= 0."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.array(self.position, dtype=float).reshape(3)
        qv = np.array(self.orientation, dtype=float).reshape(4)
        norm = np.linalg.norm(qv)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("orientation quaternion must be non-zero")
        qv = qv / norm
        if qv[0] < 0.0:
            qv = -qv
        p.flags.writeable = False
        qv.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", qv)

    @classmethod
    def from_matrix(cls, position, rotation) -> "Pose":
        qv = np.empty(4)
        matrix_to_quaternion(np.ascontiguousarray(rotation, dtype=float), qv)
        return cls(position, qv)

    def rotation(self) -> np.ndarray:
        w, x, y, z = self.orientation
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


@dataclass(frozen=True)
class JointState:
    """Measured joint positions (rad), velocities (rad/s) and link-side torques (N m)."""

    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        n = len(self.q)
        for name in ("q", "qd", "tau"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if v.shape[0] != n:
                raise ValueError(f"{name} has length {v.shape[0]}, expected {n}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, v)


# --------------------------------------------------------------------------
# file format

_JOINT_FIELDS = (
    ("xyz", 3),
    ("rpy", 3),
    ("axis", 3),
    ("mass", 1),
    ("com", 3),
    ("inertia", 6),
    ("rotor", 1),
    ("coulomb", 1),
    ("viscous", 1),
    ("qmin", 1),
    ("qmax", 1),
    ("vmax", 1),
    ("taumax", 1),
)


def _parse_fields(tokens, spec, lineno):
    """Parse ``key v1 v2 ... key v1 ...`` tokens against (key, count) pairs."""
    out = {}
    known = dict(spec)
    i = 0
    while i < len(tokens):
        key = tokens[i]
        if key not in known:
            raise ModelError(f"line {lineno}: unknown field '{key}'")
        if key in out:
            raise ModelError(f"line {lineno}: duplicate field '{key}'")
        count = known[key]
        values = tokens[i + 1 : i + 1 + count]
        if len(values) != count:
            raise ModelError(f"line {lineno}: field '{key}' expects {count} values")
        try:
            out[key] = [float(v) for v in values]
        except ValueError:
            raise ModelError(f"line {lineno}: field '{key}' has a non-numeric value") from None
        i += 1 + count
    missing = [k for k, _ in spec if k not in out]
    if missing:
        raise ModelError(f"line {lineno}: missing field(s) {', '.join(missing)}")
    return out


def _logical_lines(text):
    """Yield (lineno, tokens); a joint block may continue over indented lines."""
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if line[0].isspace() and current is not None:
            current[1].extend(line.split())
            continue
        if current is not None:
            yield current
        current = (lineno, line.split())
    if current is not None:
        yield current


def parse_model(text: str) -> ChainModel:
    """Parse model-file text into a validated :class:`ChainModel`."""
    n = None
    gravity = [0.0, 0.0, -9.81]
    joints = {}
    ee = None
    for lineno, tokens in _logical_lines(text):
        head = tokens[0]
        if head == "njoints":
            if len(tokens) != 2:
                raise ModelError(f"line {lineno}: expected 'njoints <n>'")
            try:
                n = int(tokens[1])
            except ValueError:
                raise ModelError(f"line {lineno}: njoints must be an integer") from None
        elif head == "gravity":
            if len(tokens) != 4:
                raise ModelError(f"line {lineno}: expected 'gravity <gx> <gy> <gz>'")
            try:
                gravity = [float(v) for v in tokens[1:]]
            except ValueError:
                raise ModelError(f"line {lineno}: gravity has a non-numeric value") from None
        elif head == "joint":
            if len(tokens) < 2:
                raise ModelError(f"line {lineno}: joint index missing")
            try:
                idx = int(tokens[1])
            except ValueError:
                raise ModelError(f"line {lineno}: joint index must be an integer") from None
            if idx in joints:
                raise ModelError(f"line {lineno}: joint {idx} defined twice")
            joints[idx] = (lineno, _parse_fields(tokens[2:], _JOINT_FIELDS, lineno))
        elif head == "ee":
            ee = _parse_fields(tokens[1:], (("xyz", 3), ("rpy", 3)), lineno)
        else:
            raise ModelError(f"line {lineno}: unknown directive '{head}'")

    if n is None:
        raise ModelError("missing 'njoints' header")
    if n < 1:
        raise ModelError("njoints must be >= 1")
    first = min(joints) if joints else 1
    expected = list(range(first, first + n))
    if first not in (0, 1) or sorted(joints) != expected:
        raise ModelError(f"expected joints numbered {first}..{first + n - 1}, got {sorted(joints)}")
    if ee is None:
        ee = {"xyz": [0.0, 0.0, 0.0], "rpy": [0.0, 0.0, 0.0]}

    blocks = [joints[i][1] for i in expected]
    inertia = np.zeros((n, 3, 3))
    for j, b in enumerate(blocks):
        ixx, iyy, izz, ixy, ixz, iyz = b["inertia"]
        inertia[j] = [[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]]
    model = build_model(
        joint_xyz=[b["xyz"] for b in blocks],
        joint_rpy=[b["rpy"] for b in blocks],
        axis=[b["axis"] for b in blocks],
        mass=[b["mass"][0] for b in blocks],
        com=[b["com"] for b in blocks],
        inertia=inertia,
        rotor_inertia=[b["rotor"][0] for b in blocks],
        coulomb=[b["coulomb"][0] for b in blocks],
        viscous=[b["viscous"][0] for b in blocks],
        q_min=[b["qmin"][0] for b in blocks],
        q_max=[b["qmax"][0] for b in blocks],
        v_max=[b["vmax"][0] for b in blocks],
        tau_limit=[b["taumax"][0] for b in blocks],
        gravity=gravity,
        ee_xyz=ee["xyz"],
        ee_rpy=ee["rpy"],
        joint_labels=[joints[i][0] for i in expected],
        first_index=first,
    )
    return model


def load_model(path) -> ChainModel:
    """Load and validate a model file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelError(f"{path}: {exc.strerror}") from exc
    try:
        return parse_model(text)
    except ModelError as exc:
        raise ModelError(f"{path}: {exc}") from None


def build_model(
    *,
    joint_xyz,
    joint_rpy,
    axis,
    mass,
    com,
    inertia,
    rotor_inertia,
    coulomb=None,
    viscous=None,
    q_min=None,
    q_max=None,
    v_max=None,
    tau_limit=None,
    gravity=(0.0, 0.0, -9.81),
    ee_xyz=(0.0, 0.0, 0.0),
    ee_rpy=(0.0, 0.0, 0.0),
    joint_labels=None,
    first_index=1,
) -> ChainModel:
    """Assemble a ChainModel from per-joint sequences, enforcing its invariants."""
    joint_xyz = np.array(joint_xyz, dtype=float).reshape(-1, 3)
    n = joint_xyz.shape[0]

    def vec(v, default):
        if v is None:
            v = np.full(n, default)
        return np.array(v, dtype=float).reshape(n)

    joint_rpy = np.array(joint_rpy, dtype=float).reshape(n, 3)
    axis = np.array(axis, dtype=float).reshape(n, 3)
    mass = vec(mass, 0.0)
    com = np.array(com, dtype=float).reshape(n, 3)
    inertia = np.array(inertia, dtype=float).reshape(n, 3, 3)
    rotor = vec(rotor_inertia, 0.0)
    coulomb = vec(coulomb, 0.0)
    viscous = vec(viscous, 0.0)
    q_min = vec(q_min, -4 * math.pi)
    q_max = vec(q_max, 4 * math.pi)
    v_max = vec(v_max, 1.0)
    tau_limit = vec(tau_limit, 100.0)
    labels = joint_labels or [None] * n

    def fail(j, msg):
        where = f"line {labels[j]}: " if labels[j] is not None else ""
        raise ModelError(f"{where}joint {j + first_index}: {msg}")

    if n < 1:
        raise ModelError("njoints must be >= 1")
    for j in range(n):
        if abs(np.linalg.norm(axis[j]) - 1.0) >= 1e-9:
            fail(j, "axis not unit norm")
        if not mass[j] > 0.0:
            fail(j, "mass must be positive")
        I = inertia[j]
        if not np.allclose(I, I.T, atol=0.0):
            fail(j, "inertia not symmetric")
        if np.linalg.eigvalsh(I).min() <= 0.0:
            fail(j, "inertia not positive definite")
        if not rotor[j] > 0.0:
            fail(j, "rotor inertia must be positive")
        if coulomb[j] < 0.0:
            fail(j, "coulomb friction must be non-negative")
        if viscous[j] < 0.0:
            fail(j, "viscous friction must be non-negative")
        if not q_min[j] < q_max[j]:
            fail(j, "qmin must be below qmax")
        if not v_max[j] > 0.0:
            fail(j, "vmax must be positive")
        if not tau_limit[j] > 0.0:
            fail(j, "taumax must be positive")
    arrays = [joint_xyz, joint_rpy, axis, mass, com, inertia, rotor, coulomb, viscous]
    arrays += [q_min, q_max, v_max, tau_limit]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ModelError("model contains non-finite values")

    joint_rot = np.empty((n, 3, 3))
    for j in range(n):
        rpy_to_matrix(joint_rpy[j, 0], joint_rpy[j, 1], joint_rpy[j, 2], joint_rot[j])
    ee_xyz = np.array(ee_xyz, dtype=float).reshape(3)
    ee_rpy = np.array(ee_rpy, dtype=float).reshape(3)
    ee_rot = np.empty((3, 3))
    rpy_to_matrix(ee_rpy[0], ee_rpy[1], ee_rpy[2], ee_rot)
    gravity = np.array(gravity, dtype=float).reshape(3)

    fields = dict(
        joint_xyz=joint_xyz,
        joint_rpy=joint_rpy,
        joint_rot=joint_rot,
        axis=axis,
        mass=mass,
        com=com,
        inertia=inertia,
        rotor_inertia=rotor,
        coulomb=coulomb,
        viscous=viscous,
        q_min=q_min,
        q_max=q_max,
        v_max=v_max,
        tau_limit=tau_limit,
        gravity=gravity,
        ee_xyz=ee_xyz,
        ee_rpy=ee_rpy,
        ee_rot=ee_rot,
    )
    for a in fields.values():
        a.flags.writeable = False
    return ChainModel(n_joints=n, **fields)


def format_model(model: ChainModel) -> str:
    """Serialise a model back to the text format (round-trips through parse_model)."""
    f = lambda vals: " ".join(repr(float(v)) for v in np.ravel(vals))  # noqa: E731
    lines = [f"njoints {model.n_joints}", f"gravity {f(model.gravity)}"]
    for j in range(model.n_joints):
        I = model.inertia[j]
        inertia = (I[0, 0], I[1, 1], I[2, 2], I[0, 1], I[0, 2], I[1, 2])
        lines.append(
            f"joint {j + 1} xyz {f(model.joint_xyz[j])} rpy {f(model.joint_rpy[j])}"
            f" axis {f(model.axis[j])}\n"
            f"  mass {f(model.mass[j])} com {f(model.com[j])} inertia {f(inertia)}\n"
            f"  rotor {f(model.rotor_inertia[j])} coulomb {f(model.coulomb[j])}"
            f" viscous {f(model.viscous[j])}\n"
            f"  qmin {f(model.q_min[j])} qmax {f(model.q_max[j])}"
            f" vmax {f(model.v_max[j])} taumax {f(model.tau_limit[j])}"
        )
    lines.append(f"ee xyz {f(model.ee_xyz)} rpy {f(model.ee_rpy)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# kernels


class DynamicsWorkspace(NamedTuple):
    """Scratch buffers for the kinematics/dynamics kernels of one chain."""

    R: np.ndarray  # (n, 3, 3) link orientations
    p: np.ndarray  # (n, 3) joint origins
    z: np.ndarray  # (n, 3) joint axes
    c: np.ndarray  # (n, 3) link COMs
    Iw: np.ndarray  # (n, 3, 3) link inertias in base axes
    Ree: np.ndarray  # (3, 3)
    pee: np.ndarray  # (3,)
    w: np.ndarray
    wd: np.ndarray
    ao: np.ndarray
    f: np.ndarray
    nm: np.ndarray
    cm: np.ndarray  # composite mass per subtree
    ch: np.ndarray  # composite first moment per subtree
    cI: np.ndarray  # composite inertia about base origin per subtree


def make_workspace(n: int) -> DynamicsWorkspace:
    return DynamicsWorkspace(
        R=np.zeros((n, 3, 3)),
        p=np.zeros((n, 3)),
        z=np.zeros((n, 3)),
        c=np.zeros((n, 3)),
        Iw=np.zeros((n, 3, 3)),
        Ree=np.zeros((3, 3)),
        pee=np.zeros(3),
        w=np.zeros((n, 3)),
        wd=np.zeros((n, 3)),
        ao=np.zeros((n, 3)),
        f=np.zeros((n, 3)),
        nm=np.zeros((n, 3)),
        cm=np.zeros(n),
        ch=np.zeros((n, 3)),
        cI=np.zeros((n, 3, 3)),
    )


@njit(cache=True)
def _frames(model, q, ws):
    """Fill link orientations, origins, axes, COMs and base-axis inertias."""
    n = model.n_joints
    R = ws.R
    p = ws.p
    for i in range(n):
        jR = model.joint_rot[i]
        jx = model.joint_xyz[i]
        ax = model.axis[i]
        r = axis_angle_entries(ax[0], ax[1], ax[2], q[i])
        for row in range(3):
            if i == 0:
                a0 = jR[row, 0]
                a1 = jR[row, 1]
                a2 = jR[row, 2]
                p[i, row] = jx[row]
            else:
                Rp = R[i - 1]
                a0 = Rp[row, 0] * jR[0, 0] + Rp[row, 1] * jR[1, 0] + Rp[row, 2] * jR[2, 0]
                a1 = Rp[row, 0] * jR[0, 1] + Rp[row, 1] * jR[1, 1] + Rp[row, 2] * jR[2, 1]
                a2 = Rp[row, 0] * jR[0, 2] + Rp[row, 1] * jR[1, 2] + Rp[row, 2] * jR[2, 2]
                p[i, row] = p[i - 1, row] + Rp[row, 0] * jx[0] + Rp[row, 1] * jx[1] + Rp[row, 2] * jx[2]
            R[i, row, 0] = a0 * r[0] + a1 * r[3] + a2 * r[6]
            R[i, row, 1] = a0 * r[1] + a1 * r[4] + a2 * r[7]
            R[i, row, 2] = a0 * r[2] + a1 * r[5] + a2 * r[8]
        Ri = R[i]
        cl = model.com[i]
        for row in range(3):
            ws.z[i, row] = Ri[row, 0] * ax[0] + Ri[row, 1] * ax[1] + Ri[row, 2] * ax[2]
            ws.c[i, row] = p[i, row] + Ri[row, 0] * cl[0] + Ri[row, 1] * cl[1] + Ri[row, 2] * cl[2]
        Il = model.inertia[i]
        for a in range(3):
            for b in range(3):
                s = 0.0
                for k in range(3):
                    for m in range(3):
                        s += Ri[a, k] * Il[k, m] * Ri[b, m]
                ws.Iw[i, a, b] = s
    Rn = R[n - 1]
    ex = model.ee_xyz
    eR = model.ee_rot
    for row in range(3):
        ws.pee[row] = p[n - 1, row] + Rn[row, 0] * ex[0] + Rn[row, 1] * ex[1] + Rn[row, 2] * ex[2]
        for col in range(3):
            ws.Ree[row, col] = Rn[row, 0] * eR[0, col] + Rn[row, 1] * eR[1, col] + Rn[row, 2] * eR[2, col]


@njit(cache=True)
def _jacobian_frames(ws, J):
    """Geometric Jacobian at the end-effector point from already-computed frames."""
    n = ws.z.shape[0]
    for i in range(n):
        zx, zy, zz = ws.z[i, 0], ws.z[i, 1], ws.z[i, 2]
        dx = ws.pee[0] - ws.p[i, 0]
        dy = ws.pee[1] - ws.p[i, 1]
        dz = ws.pee[2] - ws.p[i, 2]
        J[0, i] = zy * dz - zz * dy
        J[1, i] = zz * dx - zx * dz
        J[2, i] = zx * dy - zy * dx
        J[3, i] = zx
        J[4, i] = zy
        J[5, i] = zz


@njit(cache=True)
def _rnea_frames(model, ws, qd, qdd, gravity_scale, tau):
    """Recursive Newton-Euler in base-frame coordinates.

    tau = M(q) qdd + C(q, qd) qd + gravity_scale * g(q). Frames must already
    be filled by ``_frames``. Rotor inertias are not included.
    """
    n = model.n_joints
    g = model.gravity
    w = ws.w
    wd = ws.wd
    ao = ws.ao
    for i in range(n):
        zx, zy, zz = ws.z[i, 0], ws.z[i, 1], ws.z[i, 2]
        if i == 0:
            pw0 = 0.0
            pw1 = 0.0
            pw2 = 0.0
            pa0 = 0.0
            pa1 = 0.0
            pa2 = 0.0
            # base linear acceleration -g folds gravity into the recursion
            ao[i, 0] = -gravity_scale * g[0]
            ao[i, 1] = -gravity_scale * g[1]
            ao[i, 2] = -gravity_scale * g[2]
        else:
            pw0, pw1, pw2 = w[i - 1, 0], w[i - 1, 1], w[i - 1, 2]
            pa0, pa1, pa2 = wd[i - 1, 0], wd[i - 1, 1], wd[i - 1, 2]
            rx = ws.p[i, 0] - ws.p[i - 1, 0]
            ry = ws.p[i, 1] - ws.p[i - 1, 1]
            rz = ws.p[i, 2] - ws.p[i - 1, 2]
            # a_o(i) = a_o(i-1) + wd x r + w x (w x r)
            wr0 = pw1 * rz - pw2 * ry
            wr1 = pw2 * rx - pw0 * rz
            wr2 = pw0 * ry - pw1 * rx
            ao[i, 0] = ao[i - 1, 0] + (pa1 * rz - pa2 * ry) + (pw1 * wr2 - pw2 * wr1)
            ao[i, 1] = ao[i - 1, 1] + (pa2 * rx - pa0 * rz) + (pw2 * wr0 - pw0 * wr2)
            ao[i, 2] = ao[i - 1, 2] + (pa0 * ry - pa1 * rx) + (pw0 * wr1 - pw1 * wr0)
        v = qd[i]
        w[i, 0] = pw0 + zx * v
        w[i, 1] = pw1 + zy * v
        w[i, 2] = pw2 + zz * v
        # wd(i) = wd(i-1) + z qdd + w(i-1) x z qd
        wd[i, 0] = pa0 + zx * qdd[i] + (pw1 * zz - pw2 * zy) * v
        wd[i, 1] = pa1 + zy * qdd[i] + (pw2 * zx - pw0 * zz) * v
        wd[i, 2] = pa2 + zz * qdd[i] + (pw0 * zy - pw1 * zx) * v

    for i in range(n - 1, -1, -1):
        m = model.mass[i]
        w0, w1, w2 = w[i, 0], w[i, 1], w[i, 2]
        a0, a1, a2 = wd[i, 0], wd[i, 1], wd[i, 2]
        rx = ws.c[i, 0] - ws.p[i, 0]
        ry = ws.c[i, 1] - ws.p[i, 1]
        rz = ws.c[i, 2] - ws.p[i, 2]
        wr0 = w1 * rz - w2 * ry
        wr1 = w2 * rx - w0 * rz
        wr2 = w0 * ry - w1 * rx
        ac0 = ao[i, 0] + (a1 * rz - a2 * ry) + (w1 * wr2 - w2 * wr1)
        ac1 = ao[i, 1] + (a2 * rx - a0 * rz) + (w2 * wr0 - w0 * wr2)
        ac2 = ao[i, 2] + (a0 * ry - a1 * rx) + (w0 * wr1 - w1 * wr0)
        F0 = m * ac0
        F1 = m * ac1
        F2 = m * ac2
        I = ws.Iw[i]
        Ia0 = I[0, 0] * a0 + I[0, 1] * a1 + I[0, 2] * a2
        Ia1 = I[1, 0] * a0 + I[1, 1] * a1 + I[1, 2] * a2
        Ia2 = I[2, 0] * a0 + I[2, 1] * a1 + I[2, 2] * a2
        Iw0 = I[0, 0] * w0 + I[0, 1] * w1 + I[0, 2] * w2
        Iw1 = I[1, 0] * w0 + I[1, 1] * w1 + I[1, 2] * w2
        Iw2 = I[2, 0] * w0 + I[2, 1] * w1 + I[2, 2] * w2
        N0 = Ia0 + (w1 * Iw2 - w2 * Iw1)
        N1 = Ia1 + (w2 * Iw0 - w0 * Iw2)
        N2 = Ia2 + (w0 * Iw1 - w1 * Iw0)
        # moment about the joint origin
        n0 = N0 + (ry * F2 - rz * F1)
        n1 = N1 + (rz * F0 - rx * F2)
        n2 = N2 + (rx * F1 - ry * F0)
        f0 = F0
        f1 = F1
        f2 = F2
        if i < n - 1:
            cf0, cf1, cf2 = ws.f[i + 1, 0], ws.f[i + 1, 1], ws.f[i + 1, 2]
            dx = ws.p[i + 1, 0] - ws.p[i, 0]
            dy = ws.p[i + 1, 1] - ws.p[i, 1]
            dz = ws.p[i + 1, 2] - ws.p[i, 2]
            f0 += cf0
            f1 += cf1
            f2 += cf2
            n0 += ws.nm[i + 1, 0] + (dy * cf2 - dz * cf1)
            n1 += ws.nm[i + 1, 1] + (dz * cf0 - dx * cf2)
            n2 += ws.nm[i + 1, 2] + (dx * cf1 - dy * cf0)
        ws.f[i, 0] = f0
        ws.f[i, 1] = f1
        ws.f[i, 2] = f2
        ws.nm[i, 0] = n0
        ws.nm[i, 1] = n1
        ws.nm[i, 2] = n2
        tau[i] = ws.z[i, 0] * n0 + ws.z[i, 1] * n1 + ws.z[i, 2] * n2


@njit(cache=True)
def _mass_matrix_frames(model, ws, M):
    """Composite-rigid-body mass matrix from already-computed frames."""
    n = model.n_joints
    for i in range(n - 1, -1, -1):
        m = model.mass[i]
        cx, cy, cz = ws.c[i, 0], ws.c[i, 1], ws.c[i, 2]
        cc = cx * cx + cy * cy + cz * cz
        ws.cm[i] = m
        ws.ch[i, 0] = m * cx
        ws.ch[i, 1] = m * cy
        ws.ch[i, 2] = m * cz
        for a in range(3):
            for b in range(3):
                v = ws.Iw[i, a, b] - m * ws.c[i, a] * ws.c[i, b]
                if a == b:
                    v += m * cc
                ws.cI[i, a, b] = v
        if i < n - 1:
            ws.cm[i] += ws.cm[i + 1]
            for a in range(3):
                ws.ch[i, a] += ws.ch[i + 1, a]
                for b in range(3):
                    ws.cI[i, a, b] += ws.cI[i + 1, a, b]

    for i in range(n):
        zx, zy, zz = ws.z[i, 0], ws.z[i, 1], ws.z[i, 2]
        ox, oy, oz = ws.p[i, 0], ws.p[i, 1], ws.p[i, 2]
        mc = ws.cm[i]
        # F = z x (h - m o): force needed to give the subtree unit rotation about axis i
        hx = ws.ch[i, 0] - mc * ox
        hy = ws.ch[i, 1] - mc * oy
        hz = ws.ch[i, 2] - mc * oz
        F0 = zy * hz - zz * hy
        F1 = zz * hx - zx * hz
        F2 = zx * hy - zy * hx
        # moment about the base origin: I_o z - h x (z x o)
        zo0 = zy * oz - zz * oy
        zo1 = zz * ox - zx * oz
        zo2 = zx * oy - zy * ox
        h0, h1, h2 = ws.ch[i, 0], ws.ch[i, 1], ws.ch[i, 2]
        I = ws.cI[i]
        M0 = I[0, 0] * zx + I[0, 1] * zy + I[0, 2] * zz - (h1 * zo2 - h2 * zo1)
        M1 = I[1, 0] * zx + I[1, 1] * zy + I[1, 2] * zz - (h2 * zo0 - h0 * zo2)
        M2 = I[2, 0] * zx + I[2, 1] * zy + I[2, 2] * zz - (h0 * zo1 - h1 * zo0)
        for j in range(i + 1):
            px, py, pz = ws.p[j, 0], ws.p[j, 1], ws.p[j, 2]
            m0 = M0 - (py * F2 - pz * F1)
            m1 = M1 - (pz * F0 - px * F2)
            m2 = M2 - (px * F1 - py * F0)
            v = ws.z[j, 0] * m0 + ws.z[j, 1] * m1 + ws.z[j, 2] * m2
            M[j, i] = v
            M[i, j] = v


@njit(cache=True)
def _potential_energy(model, ws):
    """Gravitational potential energy U = -sum m_i g . c_i for filled frames."""
    U = 0.0
    g = model.gravity
    for i in range(model.n_joints):
        U -= model.mass[i] * (g[0] * ws.c[i, 0] + g[1] * ws.c[i, 1] + g[2] * ws.c[i, 2])
    return U


# --------------------------------------------------------------------------
# public functions


def _joint_vector(model: ChainModel, v, name="q") -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != model.n_joints:
        raise ValueError(f"{name} has length {arr.shape[0]}, model has {model.n_joints} joints")
    return arr


def out_of_limits(model: ChainModel, q) -> np.ndarray:
    """Boolean mask of joints outside their position limits."""
    q = _joint_vector(model, q)
    return (q < model.q_min) | (q > model.q_max)


def forward_kinematics(model: ChainModel, q) -> Pose:
    """End-effector pose in the base frame. Out-of-limit q is evaluated as given."""
    q = _joint_vector(model, q)
    ws = make_workspace(model.n_joints)
    _frames(model, q, ws)
    return Pose.from_matrix(ws.pee.copy(), ws.Ree)


def geometric_jacobian(model: ChainModel, q) -> np.ndarray:
    """6 x n Jacobian, linear rows first, base frame, at the end-effector point."""
    q = _joint_vector(model, q)
    ws = make_workspace(model.n_joints)
    _frames(model, q, ws)
    J = np.empty((6, model.n_joints))
    _jacobian_frames(ws, J)
    return J


def gravity_torques(model: ChainModel, q) -> np.ndarray:
    """Joint torques that hold the arm static against gravity at q."""
    q = _joint_vector(model, q)
    n = model.n_joints
    ws = make_workspace(n)
    _frames(model, q, ws)
    tau = np.empty(n)
    zero = np.zeros(n)
    _rnea_frames(model, ws, zero, zero, 1.0, tau)
    return tau


def inverse_dynamics(model: ChainModel, q, qd, qdd) -> np.ndarray:
    """tau = M(q) qdd + C(q, qd) qd + g(q), link side only."""
    q = _joint_vector(model, q)
    qd = _joint_vector(model, qd, "qd")
    qdd = _joint_vector(model, qdd, "qdd")
    ws = make_workspace(model.n_joints)
    _frames(model, q, ws)
    tau = np.empty(model.n_joints)
    _rnea_frames(model, ws, qd, qdd, 1.0, tau)
    return tau


def mass_matrix(model: ChainModel, q) -> np.ndarray:
    """Link-side joint-space inertia matrix M(q)."""
    q = _joint_vector(model, q)
    n = model.n_joints
    ws = make_workspace(n)
    _frames(model, q, ws)
    M = np.empty((n, n))
    _mass_matrix_frames(model, ws, M)
    return M


def potential_energy(model: ChainModel, q) -> float:
    q = _joint_vector(model, q)
    ws = make_workspace(model.n_joints)
    _frames(model, q, ws)
    return float(_potential_energy(model, ws))


def link_frames(model: ChainModel, q):
    """Base-frame (R, origin) of every link frame plus the end-effector, as arrays."""
    q = _joint_vector(model, q)
    ws = make_workspace(model.n_joints)
    _frames(model, q, ws)
    return ws.R.copy(), ws.p.copy(), ws.Ree.copy(), ws.pee.copy()
