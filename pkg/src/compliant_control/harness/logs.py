"""CSV run logs: fixed column layout, buffered in memory and written post-run."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

POSE_FIELDS = ("px", "py", "pz", "qw", "qx", "qy", "qz")
JOINT_GROUPS = ("q", "q_star", "qn", "qd", "tau_m", "tau_q", "tau_x", "tau_f_hat", "g")


def log_columns(n: int) -> list[str]:
    cols = ["t"]
    for group in JOINT_GROUPS:
        cols += [f"{group}_{i}" for i in range(1, n + 1)]
    cols += [f"x_{f}" for f in POSE_FIELDS]
    cols += [f"xs_{f}" for f in POSE_FIELDS]
    cols += ["clamp_flags", "alpha"]
    return cols


def column_offsets(n: int) -> dict:
    """Start index of each column group in a log row."""
    off = {"t": 0}
    k = 1
    for group in JOINT_GROUPS:
        off[group] = k
        k += n
    off["x"] = k
    off["xs"] = k + 7
    off["clamp_flags"] = k + 14
    off["alpha"] = k + 15
    off["width"] = k + 16
    return off


@dataclass
class RunLog:
    """In-memory log: ``data`` has one row per control tick."""

    columns: list
    data: np.ndarray

    @property
    def n_joints(self) -> int:
        return (len(self.columns) - 17) // len(JOINT_GROUPS)

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def group(self, name: str) -> np.ndarray:
        """All columns of a joint group (``q``, ``tau_m``...) or ``x`` / ``xs`` pose blocks."""
        off = column_offsets(self.n_joints)
        width = 7 if name in ("x", "xs") else self.n_joints
        return self.data[:, off[name] : off[name] + width]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]


def write_log(path, log: RunLog) -> Path:
    """Write header plus rows with round-trip float formatting.

    Identical arrays always produce identical bytes.
    """
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(log.columns) + "\n")
        if len(log):
            np.savetxt(fh, log.data, fmt="%.17g", delimiter=",")
    return path


def read_log(path) -> RunLog:
    path = Path(path)
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: empty log file")
        columns = header.split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(columns)))
    if data.shape[1] != len(columns):
        raise ValueError(f"{path}: rows have {data.shape[1]} fields, header has {len(columns)}")
    return RunLog(columns, data)


def write_events(path, events) -> Path:
    """Sidecar event log: one row per applied or rejected reconfiguration."""
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("t,tick,kind,status,detail\n")
        for ev in events:
            fh.write(f"{ev.t!r},{ev.tick},{ev.kind},{ev.status},{ev.detail}\n")
    return path


def events_path(log_path) -> Path:
    log_path = Path(log_path)
    return log_path.with_name(log_path.stem + ".events.csv")
