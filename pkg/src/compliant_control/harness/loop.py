"""Closed-loop scenario driver.

All buffers are allocated before the first tick. Each tick runs two
compiled kernels: the control part (sensors, reference, observer, control
law, log row) and the plant part. The Python driver applies scheduled
events between ticks and times the control part.

``segmented=True`` runs whole stretches between events inside a single
kernel call. That mode exists to count allocations: with
``NUMBA_NRT_STATS=1`` the driver compares each segment against a
zero-tick call and reports the difference.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from .. import model as _model
from ..controller import (
    CommandArrays,
    ControlWorkspace,
    ImpedanceController,
    ReferenceArrays,
    _control_tick,
)
from ..gains import GainArrays, GainError
from ..model import DynamicsWorkspace, make_workspace
from ..observer import ObserverState
from ..simulator import (
    DisturbanceArrays,
    DivergenceError,
    PlantState,
    PlantWorkspace,
    _plant_step,
    _read_sensors,
    disturbance_arrays,
    make_plant_state,
    make_plant_workspace,
)
from ..spatial import matrix_to_quaternion
from ..streaming import Mailbox, SetpointMsg, TrajectoryMsg, load_records, load_trajectory
from ..trajectory import ReferenceSource, SourceArrays, _sample
from .config import Scenario
from .logs import RunLog, column_offsets, log_columns
from .metrics import Metrics, compute_metrics


class Sensors(NamedTuple):
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray


class LogWorkspace(NamedTuple):
    ws: DynamicsWorkspace
    quat: np.ndarray  # (4,)


class ControlPath(NamedTuple):
    model: _model.ChainModel
    gains: GainArrays
    obs: ObserverState
    ws: DynamicsWorkspace
    cws: ControlWorkspace
    src: SourceArrays
    src_ws: DynamicsWorkspace
    src_J: np.ndarray
    ref: ReferenceArrays
    plant: PlantState
    noise: np.ndarray  # (ticks, 3n)
    sens: Sensors
    cmd: CommandArrays
    lws: LogWorkspace
    log: np.ndarray  # (ticks, width)
    offsets: np.ndarray  # int64 column group starts
    dt: float


class PlantPath(NamedTuple):
    model: _model.ChainModel
    plant: PlantState
    ws: DynamicsWorkspace
    pw: PlantWorkspace
    dist: DisturbanceArrays
    tau_m: np.ndarray
    dt: float
    substeps: int
    v_eps: float
    friction: bool


# --------------------------------------------------------------------------
# kernels


@njit(cache=True)
def _log_row(c, k, t):
    n = c.sens.q.shape[0]
    row = c.log[k]
    o = c.offsets
    row[0] = t
    for i in range(n):
        row[o[0] + i] = c.plant.q[i]
        row[o[1] + i] = c.ref.q_star[i]
        row[o[2] + i] = c.obs.q_n[i]
        row[o[3] + i] = c.plant.qd[i]
        row[o[4] + i] = c.cmd.tau_m[i]
        row[o[5] + i] = c.cmd.tau_q[i]
        row[o[6] + i] = c.cmd.tau_x[i]
        row[o[7] + i] = c.cmd.tau_f_hat[i]
        row[o[8] + i] = c.cmd.g_comp[i]
    _model._frames(c.model, c.plant.q, c.lws.ws)
    for a in range(3):
        row[o[9] + a] = c.lws.ws.pee[a]
        row[o[10] + a] = c.ref.p_star[a]
    matrix_to_quaternion(c.lws.ws.Ree, c.lws.quat)
    for a in range(4):
        row[o[9] + 3 + a] = c.lws.quat[a]
    matrix_to_quaternion(c.ref.R_star, c.lws.quat)
    for a in range(4):
        row[o[10] + 3 + a] = c.lws.quat[a]
    flags = 0
    for i in range(n):
        if c.cmd.clamped[i]:
            flags |= 1 << i
    row[o[11]] = flags
    row[o[12]] = c.gains.scal[1]


@njit(cache=True)
def _control_part(c, k):
    t = k * c.dt
    _read_sensors(c.plant, c.noise[k], c.sens.q, c.sens.qd, c.sens.tau)
    _sample(c.src, t, c.model, c.src_ws, c.src_J, c.ref)
    _control_tick(c.model, c.gains, c.obs, c.ws, c.cws, c.ref, c.sens.q, c.sens.qd, c.sens.tau, c.dt, c.cmd)
    _log_row(c, k, t)


@njit(cache=True)
def _plant_part(p):
    return _plant_step(p.model, p.plant, p.ws, p.pw, p.tau_m, p.dist, p.dt, p.substeps, p.v_eps, p.friction)


@njit(cache=True)
def _run_ticks(c, p, k0, k1, last):
    """Ticks k0..k1-1; the plant is not stepped after tick ``last``.

    Returns the first tick not completed, or -(k+1) if the plant diverged
    after tick k.
    """
    for k in range(k0, k1):
        _control_part(c, k)
        if k < last:
            if _plant_part(p) != 0:
                return -(k + 1)
    return k1


# --------------------------------------------------------------------------
# driver


@dataclass
class EventRecord:
    t: float
    tick: int
    kind: str
    status: str
    detail: str = ""


@dataclass
class RunResult:
    metrics: Metrics
    log: RunLog
    events: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""


def _nrt_stats():
    from numba.core.runtime import rtsys

    try:
        s = rtsys.get_allocation_stats()
    except RuntimeError:
        return None
    return s.alloc


class ClosedLoop:
    """Owns every buffer of one scenario run."""

    def __init__(self, scenario: Scenario, *, mailbox: Mailbox | None = None):
        sc = scenario
        model = sc.model
        n = model.n_joints
        self.scenario = sc
        self.model = model
        self.dt = float(sc.dt)
        self.n_steps = sc.n_ticks
        self.n_rows = self.n_steps + 1 if self.n_steps > 0 else 0
        self.mailbox = mailbox

        rng = np.random.default_rng(sc.seed)
        q0 = np.array(sc.q0, dtype=float)
        if sc.start_offset > 0.0:
            q0 = q0 + rng.uniform(-sc.start_offset, sc.start_offset, n)
        rows = max(self.n_rows, 1)
        noise = np.zeros((rows, 3 * n))
        sigma = np.asarray(sc.noise, dtype=float)
        if np.any(sigma > 0.0):
            draw = rng.standard_normal((rows, 3 * n))
            noise = draw * np.repeat(sigma, n)[None, :]

        self.plant = make_plant_state(q0)
        self.plant.last_tau_sensor[:] = _model.gravity_torques(model, q0)
        t_int_max = max([sc.gains.T_int] + [ev.overrides.get("T_int", 0.0) for ev in sc.reconfig])
        self.ctrl = ImpedanceController(model, sc.gains, self.dt, observer=sc.observer, T_int_max=t_int_max)
        self.ctrl.reset(q0, np.zeros(n), tau_m=self.plant.last_tau_sensor.copy())
        self.source = ReferenceSource(
            model, q0, rate_limit=sc.rate_limit, passivity_mode=sc.passivity_mode, now=0.0
        )
        off = column_offsets(n)
        names = ("q", "q_star", "qn", "qd", "tau_m", "tau_q", "tau_x", "tau_f_hat", "g", "x", "xs", "clamp_flags", "alpha")
        self.columns = log_columns(n)
        self.log = np.zeros((rows, off["width"]))
        self.c = ControlPath(
            model=model,
            gains=self.ctrl.garrays,
            obs=self.ctrl.obs,
            ws=self.ctrl.ws,
            cws=self.ctrl.cws,
            src=self.source.src,
            src_ws=self.source.ws,
            src_J=self.source.J,
            ref=self.ctrl.ref,
            plant=self.plant,
            noise=noise,
            sens=Sensors(np.zeros(n), np.zeros(n), np.zeros(n)),
            cmd=self.ctrl.cmd,
            lws=LogWorkspace(make_workspace(n), np.zeros(4)),
            log=self.log,
            offsets=np.array([off[k] for k in names], dtype=np.int64),
            dt=self.dt,
        )
        self.p = PlantPath(
            model=model,
            plant=self.plant,
            ws=make_workspace(n),
            pw=make_plant_workspace(n),
            dist=disturbance_arrays(sc.disturbances, n),
            tau_m=self.ctrl.cmd.tau_m,
            dt=self.dt,
            substeps=int(sc.substeps),
            v_eps=float(sc.v_eps),
            friction=bool(sc.friction),
        )
        self.schedule = self._build_schedule()
        self.events: list[EventRecord] = []
        self.latency = np.zeros(self.n_rows)
        self.allocations = None

    # -- schedule -------------------------------------------------------------

    def tick_of(self, t: float) -> int:
        return max(0, int(math.ceil(t / self.dt - 1e-9)))

    def _build_schedule(self) -> list:
        sc = self.scenario
        items = []
        if sc.reference == "trajectory":
            items.append((sc.reference_start, "trajectory", load_trajectory(sc.reference_path)))
        elif sc.reference == "stream":
            for msg in load_records(sc.reference_path):
                items.append((sc.reference_start + msg.t, "record", msg))
        for ev in sc.reconfig:
            items.append((ev.t, "reconfig", ev))
        out = [(self.tick_of(t), i, t, kind, payload) for i, (t, kind, payload) in enumerate(items)]
        out.sort(key=lambda e: (e[0], e[1]))
        return [(k, t, kind, payload) for k, _, t, kind, payload in out]

    def _apply(self, k: int, t: float, kind: str, payload) -> None:
        now = k * self.dt
        if kind == "trajectory":
            self.source.start_trajectory(payload, now)
            self.events.append(EventRecord(t, k, "trajectory", "applied", f"{len(payload.points)} points"))
        elif kind == "record":
            self._apply_message(k, payload)
        elif kind == "reconfig":
            self._reconfigure(k, payload)

    def _apply_message(self, k: int, msg) -> None:
        now = k * self.dt
        try:
            if isinstance(msg, SetpointMsg):
                self.source.push_setpoint(msg.point, now)
                kind = "setpoint"
            else:
                self.source.start_trajectory(msg.trajectory, now)
                kind = "trajectory"
        except ValueError as exc:
            self.events.append(EventRecord(now, k, "record", "rejected", str(exc)))
            return
        self.events.append(EventRecord(now, k, kind, "applied", ""))

    def _reconfigure(self, k: int, ev) -> None:
        if ev.observer is not None:
            self.ctrl.set_observer(ev.observer, self.plant.q, self.plant.qd)
            self.events.append(EventRecord(ev.t, k, "observer", "applied", ev.text))
            return
        try:
            self.ctrl.set_gains(self.ctrl.gains.replace(**ev.overrides))
        except GainError as exc:
            self.events.append(EventRecord(ev.t, k, "reconfig", "rejected", f"{ev.text}: {exc}"))
            return
        self.events.append(EventRecord(ev.t, k, "reconfig", "applied", ev.text))

    def _drain_mailbox(self, k: int) -> None:
        for msg in self.mailbox.drain():
            if isinstance(msg, (SetpointMsg, TrajectoryMsg)):
                self._apply_message(k, msg)

    # -- execution ------------------------------------------------------------

    def run(self, *, segmented: bool = False, realtime: bool = False) -> RunResult:
        if self.n_rows == 0:
            return self._finish(0, diverged=False)
        if segmented:
            return self._run_segmented()
        return self._run_per_tick(realtime)

    def _run_per_tick(self, realtime: bool) -> RunResult:
        last = self.n_steps
        sched = self.schedule
        si = 0
        clock = time.perf_counter
        wall0 = clock()
        for k in range(self.n_rows):
            while si < len(sched) and sched[si][0] <= k:
                self._apply(k, *sched[si][1:])
                si += 1
            if self.mailbox is not None:
                self._drain_mailbox(k)
            if realtime:
                lag = wall0 + k * self.dt - clock()
                if lag > 0:
                    time.sleep(lag)
            t0 = clock()
            _control_part(self.c, k)
            self.latency[k] = clock() - t0
            if k < last and _plant_part(self.p) != 0:
                return self._finish(k + 1, diverged=True)
        return self._finish(self.n_rows, diverged=False)

    def _run_segmented(self) -> RunResult:
        """Whole inter-event stretches per kernel call; counts NRT allocations if enabled."""
        if self.mailbox is not None:
            raise ValueError("segmented mode cannot serve a live mailbox")
        last = self.n_steps
        bounds = sorted({k for k, *_ in self.schedule if 0 < k < self.n_rows} | {1, self.n_rows})
        sched = self.schedule
        si = 0
        counting = _nrt_stats() is not None
        extra = 0
        k = 0
        for k1 in bounds:
            while si < len(sched) and sched[si][0] <= k:
                self._apply(k, *sched[si][1:])
                si += 1
            if counting and k > 0:
                a0 = _nrt_stats()
                _run_ticks(self.c, self.p, k, k, last)
                base = _nrt_stats() - a0
            t0 = time.perf_counter()
            a0 = _nrt_stats() if counting else 0
            r = _run_ticks(self.c, self.p, k, k1, last)
            if counting and k > 0:
                extra += (_nrt_stats() - a0) - base
            elapsed = time.perf_counter() - t0
            self.latency[k:k1] = elapsed / max(k1 - k, 1)
            if r < 0:
                return self._finish(-r, diverged=True)
            k = k1
        if counting:
            self.allocations = int(extra)
        return self._finish(self.n_rows, diverged=False)

    def _finish(self, rows: int, diverged: bool) -> RunResult:
        log = RunLog(self.columns, self.log[:rows])
        message = ""
        if diverged:
            message = f"plant diverged after t={(rows - 1) * self.dt:.6f} s"
        metrics = compute_metrics(
            log,
            self.scenario.window() if not diverged else None,
            latency=self.latency[1:rows],
            allocations=self.allocations,
            diverged=diverged,
        )
        return RunResult(metrics, log, self.events, diverged, message)


def run_scenario(
    scenario: Scenario,
    *,
    log_path=None,
    segmented: bool = False,
    mailbox: Mailbox | None = None,
    realtime: bool = False,
    raise_on_divergence: bool = False,
) -> RunResult:
    """Run one scenario; writes the CSV log (and event sidecar) when a path is given."""
    from .logs import events_path, write_events, write_log

    loop = ClosedLoop(scenario, mailbox=mailbox)
    result = loop.run(segmented=segmented, realtime=realtime)
    path = log_path if log_path is not None else scenario.log_path
    if path is not None:
        write_log(path, result.log)
        if result.events:
            write_events(events_path(path), result.events)
    if result.diverged and raise_on_divergence:
        raise DivergenceError(float(result.log.t[-1]) if len(result.log) else 0.0)
    return result
