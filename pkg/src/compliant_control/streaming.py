"""Setpoint/trajectory wire format, command mailbox and socket listener.

Records are newline-delimited ASCII::

    SP t=<s> q=<v1,...,vn> [qd=<v1,...,vn>]
    TRAJ n=<k> [t=<s>] [interp=cubic|linear]
    PT t=<s> q=<...> [qd=<...>]          (k times)
    END

``t`` on an ``SP`` record, and the optional ``t`` on ``TRAJ``, is the
delivery time used when a recorded stream is replayed from a file. Live
socket clients may send any value; records are applied on arrival.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .trajectory import Trajectory, TrajectoryPoint

log = logging.getLogger(__name__)


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class SetpointMsg:
    t: float
    point: TrajectoryPoint


@dataclass(frozen=True)
class TrajectoryMsg:
    t: float
    trajectory: Trajectory


def _fields(tokens, lineno, allowed):
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or key not in allowed:
            raise WireError(f"line {lineno}: unexpected token '{tok}'")
        if key in out:
            raise WireError(f"line {lineno}: duplicate '{key}'")
        out[key] = value
    return out


def _floats(text, lineno, key):
    try:
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise WireError(f"line {lineno}: '{key}' is not a comma-separated list of numbers") from None
    if not np.all(np.isfinite(vals)):
        raise WireError(f"line {lineno}: '{key}' has non-finite values")
    return vals


def _scalar(text, lineno, key):
    try:
        return float(text)
    except ValueError:
        raise WireError(f"line {lineno}: '{key}' is not a number") from None


def _point(fields, lineno):
    if "t" not in fields or "q" not in fields:
        raise WireError(f"line {lineno}: record needs t= and q=")
    qd = _floats(fields["qd"], lineno, "qd") if "qd" in fields else None
    try:
        return TrajectoryPoint(_scalar(fields["t"], lineno, "t"), _floats(fields["q"], lineno, "q"), qd)
    except ValueError as exc:
        raise WireError(f"line {lineno}: {exc}") from None


class RecordParser:
    """Incremental line parser; :meth:`feed` returns a message once one is complete."""

    def __init__(self):
        self._pending = None  # (t, interp, expected, points, lineno)
        self.lineno = 0

    def feed(self, line: str):
        self.lineno += 1
        lineno = self.lineno
        text = line.split("#", 1)[0].strip()
        if not text:
            return None
        tokens = text.split()
        head, rest = tokens[0], tokens[1:]
        if self._pending is not None:
            t, interp, expected, points, start = self._pending
            if head == "PT":
                points.append(_point(_fields(rest, lineno, ("t", "q", "qd")), lineno))
                return None
            if head == "END":
                self._pending = None
                if len(points) != expected:
                    raise WireError(f"line {lineno}: TRAJ from line {start} announced {expected} points, got {len(points)}")
                try:
                    return TrajectoryMsg(t, Trajectory(tuple(points), interp))
                except ValueError as exc:
                    raise WireError(f"line {lineno}: {exc}") from None
            self._pending = None
            raise WireError(f"line {lineno}: expected PT or END inside TRAJ block")
        if head == "SP":
            f = _fields(rest, lineno, ("t", "q", "qd"))
            point = _point(f, lineno)
            return SetpointMsg(point.t_from_start, point)
        if head == "TRAJ":
            f = _fields(rest, lineno, ("n", "t", "interp"))
            if "n" not in f:
                raise WireError(f"line {lineno}: TRAJ needs n=")
            try:
                expected = int(f["n"])
            except ValueError:
                raise WireError(f"line {lineno}: n must be an integer") from None
            if expected < 1:
                raise WireError(f"line {lineno}: empty trajectory")
            t = _scalar(f.get("t", "0"), lineno, "t")
            interp = f.get("interp", "cubic")
            self._pending = (t, interp, expected, [], lineno)
            return None
        raise WireError(f"line {lineno}: unknown record '{head}'")

    def close(self):
        if self._pending is not None:
            raise WireError(f"unterminated TRAJ block starting at line {self._pending[4]}")


def parse_records(lines: Iterable[str]) -> Iterator:
    parser = RecordParser()
    for line in lines:
        msg = parser.feed(line)
        if msg is not None:
            yield msg
    parser.close()


def load_records(path) -> list:
    with open(path, encoding="ascii") as fh:
        return list(parse_records(fh))


def _fmt(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def format_setpoint(point: TrajectoryPoint, t: float | None = None) -> str:
    t = point.t_from_start if t is None else t
    line = f"SP t={t!r} q={_fmt(point.q_star)}"
    if point.qd_star is not None:
        line += f" qd={_fmt(point.qd_star)}"
    return line


def format_trajectory(traj: Trajectory, t: float | None = None) -> str:
    head = f"TRAJ n={len(traj.points)}"
    if t is not None:
        head += f" t={float(t)!r}"
    if traj.interpolation != "cubic":
        head += f" interp={traj.interpolation}"
    lines = [head]
    for p in traj.points:
        line = f"PT t={p.t_from_start!r} q={_fmt(p.q_star)}"
        if p.qd_star is not None:
            line += f" qd={_fmt(p.qd_star)}"
        lines.append(line)
    lines.append("END")
    return "\n".join(lines)


def load_trajectory(path) -> Trajectory:
    """First trajectory in a record file."""
    for msg in load_records(path):
        if isinstance(msg, TrajectoryMsg):
            return msg.trajectory
    raise WireError(f"{path}: no TRAJ block")


class Mailbox:
    """Bounded hand-over queue between a producer thread and the control loop.

    ``put`` drops the oldest message when full and counts the drop.
    ``drain`` never blocks: if a producer holds the lock it returns nothing
    and the messages are picked up on the next tick.
    """

    def __init__(self, capacity: int = 64):
        self._q = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.dropped = 0

    def put(self, msg) -> None:
        with self._lock:
            if len(self._q) == self._q.maxlen:
                self.dropped += 1
            self._q.append(msg)

    def drain(self) -> list:
        if not self._lock.acquire(blocking=False):
            return []
        try:
            out = list(self._q)
            self._q.clear()
            return out
        finally:
            self._lock.release()

    def __len__(self) -> int:
        return len(self._q)


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        parser = RecordParser()
        for raw in self.rfile:
            try:
                msg = parser.feed(raw.decode("ascii", errors="replace"))
            except WireError as exc:
                self.server.errors += 1
                log.warning("rejected record from %s: %s", self.client_address, exc)
                continue
            if msg is not None:
                self.server.mailbox.put(msg)


class _Server(socketserver.ThreadingMixIn, socketserver.TCPServer):
    allow_reuse_address = True
    daemon_threads = True


class StreamServer:
    """TCP listener on localhost feeding parsed records into a mailbox."""

    def __init__(self, mailbox: Mailbox, port: int = 0, host: str = "127.0.0.1"):
        self.mailbox = mailbox
        self._server = _Server((host, port), _Handler)
        self._server.mailbox = mailbox
        self._server.errors = 0
        self._thread = threading.Thread(target=self._server.serve_forever, name="stream-ingest", daemon=True)

    @property
    def address(self):
        return self._server.server_address

    @property
    def errors(self) -> int:
        return self._server.errors

    def start(self) -> "StreamServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def send_lines(address, lines: Iterable[str], timeout: float = 5.0) -> None:
    """Small client used by tests and scripts: send records to a StreamServer."""
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.sendall(("\n".join(lines) + "\n").encode("ascii"))
