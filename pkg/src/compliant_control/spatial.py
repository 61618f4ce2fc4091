"""Small rotation helpers shared by the numeric kernels.

Everything here is written against scalars or caller-owned buffers so the
kernels that use it never allocate.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def rpy_to_matrix(roll, pitch, yaw, out):
    """Fixed-axis roll/pitch/yaw, R = Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    out[0, 0] = cy * cp
    out[0, 1] = cy * sp * sr - sy * cr
    out[0, 2] = cy * sp * cr + sy * sr
    out[1, 0] = sy * cp
    out[1, 1] = sy * sp * sr + cy * cr
    out[1, 2] = sy * sp * cr - cy * sr
    out[2, 0] = -sp
    out[2, 1] = cp * sr
    out[2, 2] = cp * cr


@njit(cache=True)
def axis_angle_entries(ax, ay, az, angle):
    """Rodrigues rotation about a unit axis, returned row-major as 9 scalars."""
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    return (
        t * ax * ax + c,
        t * ax * ay - s * az,
        t * ax * az + s * ay,
        t * ax * ay + s * az,
        t * ay * ay + c,
        t * ay * az - s * ax,
        t * ax * az - s * ay,
        t * ay * az + s * ax,
        t * az * az + c,
    )


@njit(cache=True)
def rotation_log(R, out):
    """Rotation vector of R (axis * angle, angle in [0, pi]) written to out[0:3].

    At exactly pi the axis sign is ambiguous; the component with the largest
    diagonal entry is taken positive.
    """
    vx = 0.5 * (R[2, 1] - R[1, 2])
    vy = 0.5 * (R[0, 2] - R[2, 0])
    vz = 0.5 * (R[1, 0] - R[0, 1])
    s = math.sqrt(vx * vx + vy * vy + vz * vz)
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    angle = math.atan2(s, c)
    if c > -0.9:
        # theta / sin(theta), series near zero
        if s < 1e-7:
            k = 1.0 + angle * angle / 6.0
        else:
            k = angle / s
        out[0] = k * vx
        out[1] = k * vy
        out[2] = k * vz
        return
    # near pi: axis from the symmetric part, sign from the skew part
    one_minus_c = 1.0 - c
    d0 = R[0, 0] - c
    d1 = R[1, 1] - c
    d2 = R[2, 2] - c
    if d0 >= d1 and d0 >= d2:
        a0 = math.sqrt(max(d0 / one_minus_c, 0.0))
        a1 = 0.5 * (R[0, 1] + R[1, 0]) / (one_minus_c * a0)
        a2 = 0.5 * (R[0, 2] + R[2, 0]) / (one_minus_c * a0)
    elif d1 >= d2:
        a1 = math.sqrt(max(d1 / one_minus_c, 0.0))
        a0 = 0.5 * (R[0, 1] + R[1, 0]) / (one_minus_c * a1)
        a2 = 0.5 * (R[1, 2] + R[2, 1]) / (one_minus_c * a1)
    else:
        a2 = math.sqrt(max(d2 / one_minus_c, 0.0))
        a0 = 0.5 * (R[0, 2] + R[2, 0]) / (one_minus_c * a2)
        a1 = 0.5 * (R[1, 2] + R[2, 1]) / (one_minus_c * a2)
    norm = math.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
    a0 /= norm
    a1 /= norm
    a2 /= norm
    if a0 * vx + a1 * vy + a2 * vz < 0.0:
        a0, a1, a2 = -a0, -a1, -a2
    out[0] = angle * a0
    out[1] = angle * a1
    out[2] = angle * a2


@njit(cache=True)
def matrix_to_quaternion(R, out):
    """Unit quaternion (w, x, y, z) with w >= 0."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        w = (R[2, 1] - R[1, 2]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        w = (R[0, 2] - R[2, 0]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        w = (R[1, 0] - R[0, 1]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if w < 0.0:
        n = -n
    out[0] = w / n
    out[1] = x / n
    out[2] = y / n
    out[3] = z / n


@njit(cache=True)
def quaternion_to_matrix(qv, out):
    w, x, y, z = qv[0], qv[1], qv[2], qv[3]
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def cholesky_solve(A, b, L, x):
    """Solve A x = b for symmetric positive definite A using scratch L.

    Returns False if A is not numerically positive definite.
    """
    n = A.shape[0]
    for j in range(n):
        d = A[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if d <= 0.0:
            return False
        ljj = math.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return True


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
