"""Tracking metrics computed from run logs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .logs import RunLog

TASK_XYZ = "task_xyz"
JOINT = "joint"


def _window_mask(t, window):
    t0, t1 = window
    if not t1 > t0:
        raise ValueError(f"empty RMSE window {t0}:{t1}")
    if len(t) == 0:
        raise ValueError("log has no rows")
    tol = 1e-9
    if t0 < t[0] - tol or t1 > t[-1] + tol:
        raise ValueError(f"RMSE window {t0}:{t1} lies outside the log span {t[0]}:{t[-1]}")
    mask = (t >= t0 - tol) & (t <= t1 + tol)
    if not mask.any():
        raise ValueError(f"RMSE window {t0}:{t1} contains no samples")
    return mask


def compute_rmse(log: RunLog, window=None, frame: str = TASK_XYZ) -> np.ndarray:
    """Per-axis RMSE of actual minus reference over ``window`` (default: whole log).

    ``task_xyz`` reports base-frame position in cm, ``joint`` reports rad.
    """
    t = log.t
    if window is None:
        if len(t) == 0:
            raise ValueError("log has no rows")
        window = (t[0], t[-1]) if len(t) > 1 else (t[0], t[0] + 1.0)
    mask = _window_mask(t, window) if len(t) > 1 else np.ones(len(t), bool)
    if frame == TASK_XYZ:
        err = (log.group("x")[mask, :3] - log.group("xs")[mask, :3]) * 100.0
    elif frame == JOINT:
        err = log.group("q")[mask] - log.group("q_star")[mask]
    else:
        raise ValueError(f"unknown frame '{frame}'")
    return np.sqrt(np.mean(err**2, axis=0))


@dataclass
class Metrics:
    rows: int
    window: tuple | None
    rmse_xyz_cm: list | None
    rmse_joint_rad: list | None
    max_abs_tau_m: list
    clamp_ticks: int
    clamp_counts: list
    tau_f_hat_mean_abs: list
    tau_f_hat_max_abs: list
    latency_us_p50: float
    latency_us_p99: float
    latency_us_max: float
    allocations_after_init: int | None
    diverged: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        lines = [f"rows {self.rows}"]
        if self.rmse_xyz_cm is not None:
            lines.append(
                "rmse_xyz_cm " + " ".join(f"{v:.4f}" for v in self.rmse_xyz_cm) + f" over {self.window[0]:g}:{self.window[1]:g} s"
            )
            lines.append("rmse_joint_rad " + " ".join(f"{v:.2e}" for v in self.rmse_joint_rad))
        lines.append("max_abs_tau_m " + " ".join(f"{v:.3f}" for v in self.max_abs_tau_m))
        lines.append(f"clamped_ticks {self.clamp_ticks}")
        lines.append("tau_f_hat_max_abs " + " ".join(f"{v:.3f}" for v in self.tau_f_hat_max_abs))
        lines.append(
            f"latency_us p50 {self.latency_us_p50:.1f} p99 {self.latency_us_p99:.1f} max {self.latency_us_max:.1f}"
        )
        if self.allocations_after_init is not None:
            lines.append(f"allocations_after_init {self.allocations_after_init}")
        if self.diverged:
            lines.append("DIVERGED")
        return "\n".join(lines)


def compute_metrics(log: RunLog, window, *, latency=None, allocations=None, diverged=False) -> Metrics:
    n = log.n_joints
    rows = len(log)
    rmse_x = rmse_q = None
    if rows > 1 and window is not None:
        rmse_x = compute_rmse(log, window, TASK_XYZ).tolist()
        rmse_q = compute_rmse(log, window, JOINT).tolist()
    if rows:
        tau_m = np.abs(log.group("tau_m"))
        tfh = np.abs(log.group("tau_f_hat"))
        flags = log.column("clamp_flags").astype(np.int64)
        counts = [int(np.count_nonzero(flags & (1 << i))) for i in range(n)]
        max_tau = tau_m.max(axis=0).tolist()
        tfh_mean = tfh.mean(axis=0).tolist()
        tfh_max = tfh.max(axis=0).tolist()
    else:
        flags = np.zeros(0, np.int64)
        counts = [0] * n
        max_tau = tfh_mean = tfh_max = [0.0] * n
    lat = np.asarray(latency if latency is not None else [], dtype=float) * 1e6
    if lat.size:
        p50, p99, pmax = (float(v) for v in np.percentile(lat, [50, 99, 100]))
    else:
        p50 = p99 = pmax = 0.0
    return Metrics(
        rows=rows,
        window=tuple(window) if window is not None else None,
        rmse_xyz_cm=rmse_x,
        rmse_joint_rad=rmse_q,
        max_abs_tau_m=max_tau,
        clamp_ticks=int(np.count_nonzero(flags)),
        clamp_counts=counts,
        tau_f_hat_mean_abs=tfh_mean,
        tau_f_hat_max_abs=tfh_max,
        latency_us_p50=p50,
        latency_us_p99=p99,
        latency_us_max=pmax,
        allocations_after_init=allocations,
        diverged=bool(diverged),
    )
