"""Controller and observer gains.

A :class:`GainSet` is an immutable snapshot. The control loop keeps a
:class:`GainArrays` buffer and copies a whole snapshot into it between
ticks, so a step never sees a half-applied update.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

JOINT_FIELDS = ("Kp", "Kd", "tau_d_max", "tau_max", "Kl", "Klp", "Kli")
TASK_FIELDS = ("Kpx", "Kdx", "wrench_d_max")
SCALAR_FIELDS = ("joint_scale", "task_scale", "T_int")
FLAG_FIELDS = ("gravity_at_target", "task_uses_nominal")


class GainError(ValueError):
    """A gain snapshot violates its invariants."""


class GainArrays(NamedTuple):
    """Kernel-side gain buffer.

    ``scal`` holds [joint_scale, task_scale, T_int, gravity_at_target,
    task_uses_nominal] so flags travel with the numeric gains.
    """

    Kp: np.ndarray
    Kd: np.ndarray
    tau_d_max: np.ndarray
    tau_max: np.ndarray
    Kl: np.ndarray
    Klp: np.ndarray
    Kli: np.ndarray
    Kpx: np.ndarray
    Kdx: np.ndarray
    wrench_d_max: np.ndarray
    scal: np.ndarray


def _frozen(v, n, name):
    a = np.array(v, dtype=float)
    if a.ndim == 0:
        a = np.full(n, float(a))
    a = a.reshape(-1)
    if a.shape[0] != n:
        raise GainError(f"{name} has length {a.shape[0]}, expected {n}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class GainSet:
    """All gains of the blended impedance controller and friction observer.

    Joint quantities are per joint; task quantities have 6 entries
    (force rows then torque rows). Scalars broadcast on construction.
    """

    Kp: np.ndarray
    Kd: np.ndarray
    Kpx: np.ndarray
    Kdx: np.ndarray
    joint_scale: float = 1.0
    task_scale: float = 0.0
    tau_d_max: np.ndarray = None
    wrench_d_max: np.ndarray = None
    tau_max: np.ndarray = None
    Kl: np.ndarray = None
    Klp: np.ndarray = None
    Kli: np.ndarray = None
    T_int: float = 1.0
    gravity_at_target: bool = True
    task_uses_nominal: bool = False
    n_joints: int = field(default=None, compare=False)

    def __post_init__(self):
        n = self.n_joints
        if n is None:
            n = np.size(self.Kp) if np.ndim(self.Kp) else None
        if n is None:
            raise GainError("n_joints is required when Kp is a scalar")
        object.__setattr__(self, "n_joints", int(n))
        defaults = {"tau_d_max": np.inf, "tau_max": np.inf, "Kl": 0.0, "Klp": 0.0, "Kli": 0.0}
        for name in JOINT_FIELDS:
            v = getattr(self, name)
            object.__setattr__(self, name, _frozen(defaults[name] if v is None else v, n, name))
        for name in TASK_FIELDS:
            v = getattr(self, name)
            object.__setattr__(self, name, _frozen(np.inf if v is None else v, 6, name))
        for name in SCALAR_FIELDS:
            object.__setattr__(self, name, float(getattr(self, name)))
        for name in FLAG_FIELDS:
            object.__setattr__(self, name, bool(getattr(self, name)))
        self._check()

    def _check(self):
        for name in JOINT_FIELDS + TASK_FIELDS:
            v = getattr(self, name)
            if np.any(np.isnan(v)) or np.any(v < 0):
                raise GainError(f"{name} must be non-negative")
            if name not in ("tau_d_max", "tau_max", "wrench_d_max") and not np.all(np.isfinite(v)):
                raise GainError(f"{name} must be finite")
        for name in ("joint_scale", "task_scale"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise GainError(f"{name} must lie in [0, 1], got {v}")
        if not self.T_int > 0.0 or not np.isfinite(self.T_int):
            raise GainError("T_int must be positive")

    def validate_for(self, model) -> "GainSet":
        """Check model-dependent invariants (dimension, tau_max <= torque limit)."""
        if self.n_joints != model.n_joints:
            raise GainError(f"gains are for {self.n_joints} joints, model has {model.n_joints}")
        bad = np.nonzero(self.tau_max > model.tau_limit)[0]
        if bad.size:
            j = int(bad[0])
            raise GainError(
                f"tau_max[{j + 1}] = {self.tau_max[j]} exceeds the model torque limit {model.tau_limit[j]}"
            )
        return self

    def replace(self, **changes) -> "GainSet":
        """New snapshot with some fields overridden (validated)."""
        return dataclasses.replace(self, **changes)

    @property
    def alpha(self) -> float:
        return self.task_scale

    def to_arrays(self) -> GainArrays:
        arrays = GainArrays(
            **{name: np.array(getattr(self, name)) for name in JOINT_FIELDS + TASK_FIELDS},
            scal=np.zeros(5),
        )
        self.write_into(arrays)
        return arrays

    def write_into(self, arrays: GainArrays) -> None:
        """Copy this snapshot into an existing kernel buffer (no reallocation)."""
        for name in JOINT_FIELDS + TASK_FIELDS:
            getattr(arrays, name)[:] = getattr(self, name)
        arrays.scal[0] = self.joint_scale
        arrays.scal[1] = self.task_scale
        arrays.scal[2] = self.T_int
        arrays.scal[3] = 1.0 if self.gravity_at_target else 0.0
        arrays.scal[4] = 1.0 if self.task_uses_nominal else 0.0


def set_blend(gains: GainSet, alpha: float) -> GainSet:
    """Map a blend factor onto the scales: joint_scale = 1 - alpha, task_scale = alpha.

    alpha = 0 is joint-only, alpha = 1 task-only, 0.5 the balanced default.
    The underlying gain matrices are not touched.
    """
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise GainError(f"alpha must lie in [0, 1], got {alpha}")
    return gains.replace(joint_scale=1.0 - alpha, task_scale=alpha)
