"""Scenario and gain files.

Both use the model-file dialect: one ``key value ...`` directive per line,
``#`` comments, indented lines continue the previous directive. Paths are
resolved relative to the file that names them.

Gain file keys: Kp Kd Kpx Kdx tau_d_max wrench_d_max tau_max Kl Klp Kli
(one value broadcasts), T_int, alpha or joint_scale/task_scale,
gravity_at_target, task_uses_nominal.

Scenario keys::

    model <path>                 gains <path>
    gain <key> <values...>       inline gain override
    q0 <n values>                start_offset <rad>   (seeded uniform offset)
    duration <s>                 dt <s>               substeps <k>
    observer on|off              friction on|off      passivity on|off
    rate_limit on|off            v_eps <rad/s>        noise <sq> <sqd> <stau>
    reference hold | trajectory <path> [at <s>] | stream <path> | socket
    disturbance wrench <fx fy fz mx my mz> from <t0> to <t1>
    disturbance joint <j> <tau> from <t0> to <t1>
    reconfig <t> alpha <a> | <gain key> <values...> | observer on|off
    rmse_window <t0> <t1>        log <path>           seed <int>
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..gains import FLAG_FIELDS, JOINT_FIELDS, TASK_FIELDS, GainError, GainSet
from ..model import ChainModel, ModelError, _logical_lines, load_model
from ..simulator import DEFAULT_V_EPS, ExternalDisturbance


class ConfigError(ValueError):
    """Invalid scenario or gain configuration."""


_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _bool(tok, where):
    try:
        return _BOOL[tok.lower()]
    except KeyError:
        raise ConfigError(f"{where}: expected on/off, got '{tok}'") from None


def _floats(tokens, where):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ConfigError(f"{where}: non-numeric value in {' '.join(tokens)}") from None


def gain_overrides(key: str, values: list[str], n: int, where: str) -> dict:
    """Translate one gain directive into GainSet keyword overrides."""
    if key in JOINT_FIELDS:
        v = _floats(values, where)
        if len(v) not in (1, n):
            raise ConfigError(f"{where}: {key} needs 1 or {n} values")
        return {key: v[0] if len(v) == 1 else v}
    if key in TASK_FIELDS:
        v = _floats(values, where)
        if len(v) not in (1, 6):
            raise ConfigError(f"{where}: {key} needs 1 or 6 values")
        return {key: v[0] if len(v) == 1 else v}
    if key in ("joint_scale", "task_scale", "T_int", "alpha"):
        v = _floats(values, where)
        if len(v) != 1:
            raise ConfigError(f"{where}: {key} takes one value")
        if key == "alpha":
            if not 0.0 <= v[0] <= 1.0:
                raise ConfigError(f"{where}: alpha must lie in [0, 1]")
            return {"joint_scale": 1.0 - v[0], "task_scale": v[0]}
        return {key: v[0]}
    if key in FLAG_FIELDS:
        if len(values) != 1:
            raise ConfigError(f"{where}: {key} takes one value")
        return {key: _bool(values[0], where)}
    raise ConfigError(f"{where}: unknown gain '{key}'")


def parse_gains(text: str, n: int, origin: str = "<gains>") -> GainSet:
    kwargs = {"Kp": 0.0, "Kd": 0.0, "Kpx": 0.0, "Kdx": 0.0}
    for lineno, tokens in _logical_lines(text):
        kwargs.update(gain_overrides(tokens[0], tokens[1:], n, f"{origin}:{lineno}"))
    try:
        return GainSet(n_joints=n, **kwargs)
    except GainError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def load_gains(path, n: int) -> GainSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_gains(text, n, str(path))


@dataclass(frozen=True)
class ReconfigEvent:
    t: float
    overrides: dict = field(default_factory=dict)
    observer: bool | None = None
    text: str = ""


@dataclass
class Scenario:
    model_path: Path
    model: ChainModel
    gains: GainSet
    duration: float
    q0: np.ndarray
    dt: float = 1e-3
    substeps: int = 10
    observer: bool = True
    friction: bool = True
    passivity_mode: bool = False
    rate_limit: bool = True
    v_eps: float = DEFAULT_V_EPS
    noise: tuple = (0.0, 0.0, 0.0)
    reference: str = "hold"  # hold | trajectory | stream | socket
    reference_path: Path | None = None
    reference_start: float = 0.0
    disturbances: list = field(default_factory=list)
    reconfig: list = field(default_factory=list)
    rmse_window: tuple | None = None
    log_path: Path | None = None
    seed: int = 0
    start_offset: float = 0.0
    source: Path | None = None

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def window(self) -> tuple:
        return self.rmse_window if self.rmse_window is not None else (0.0, self.duration)


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else (base / p)


def parse_scenario(text: str, base: Path, origin: str = "<scenario>") -> Scenario:
    base = Path(base)
    model = None
    model_path = None
    gains_path = None
    inline_gains = []
    raw_reconfig = []
    raw_dist = []
    opts: dict = {}
    for lineno, tokens in _logical_lines(text):
        where = f"{origin}:{lineno}"
        key, args = tokens[0], tokens[1:]

        def one():
            if len(args) != 1:
                raise ConfigError(f"{where}: '{key}' takes one value")
            return args[0]

        if key == "model":
            model_path = _resolve(base, one())
            try:
                model = load_model(model_path)
            except ModelError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        elif key == "gains":
            gains_path = _resolve(base, one())
        elif key == "gain":
            if not args:
                raise ConfigError(f"{where}: gain needs a key")
            inline_gains.append((args[0], args[1:], where))
        elif key in ("duration", "dt", "v_eps", "start_offset"):
            opts[key] = _floats([one()], where)[0]
        elif key == "substeps" or key == "seed":
            try:
                opts[key] = int(one())
            except ValueError:
                raise ConfigError(f"{where}: {key} must be an integer") from None
        elif key in ("observer", "friction", "rate_limit"):
            opts[key] = _bool(one(), where)
        elif key == "passivity":
            opts["passivity_mode"] = _bool(one(), where)
        elif key == "q0":
            opts["q0"] = np.array(_floats(args, where))
        elif key == "noise":
            if len(args) != 3:
                raise ConfigError(f"{where}: noise takes <sigma_q> <sigma_qd> <sigma_tau>")
            opts["noise"] = tuple(_floats(args, where))
        elif key == "reference":
            if not args:
                raise ConfigError(f"{where}: reference needs a kind")
            kind = args[0]
            if kind == "hold" or kind == "socket":
                if len(args) != 1:
                    raise ConfigError(f"{where}: 'reference {kind}' takes no arguments")
            elif kind in ("trajectory", "stream"):
                if len(args) not in (2, 4) or (len(args) == 4 and args[2] != "at"):
                    raise ConfigError(f"{where}: expected 'reference {kind} <path> [at <s>]'")
                opts["reference_path"] = _resolve(base, args[1])
                if not opts["reference_path"].exists():
                    raise ConfigError(f"{where}: {opts['reference_path']} does not exist")
                if len(args) == 4:
                    opts["reference_start"] = _floats([args[3]], where)[0]
            else:
                raise ConfigError(f"{where}: unknown reference kind '{kind}'")
            opts["reference"] = kind
        elif key == "disturbance":
            raw_dist.append((args, where))
        elif key == "reconfig":
            raw_reconfig.append((args, where))
        elif key == "rmse_window":
            if len(args) != 2:
                raise ConfigError(f"{where}: rmse_window takes <t0> <t1>")
            opts["rmse_window"] = tuple(_floats(args, where))
        elif key == "log":
            opts["log_path"] = _resolve(base, one())
        else:
            raise ConfigError(f"{where}: unknown key '{key}'")

    if model is None:
        raise ConfigError(f"{origin}: missing 'model'")
    n = model.n_joints
    gains = load_gains(gains_path, n) if gains_path else GainSet(Kp=0.0, Kd=0.0, Kpx=0.0, Kdx=0.0, n_joints=n)
    overrides = {}
    for gkey, values, where in inline_gains:
        overrides.update(gain_overrides(gkey, values, n, where))
    try:
        gains = gains.replace(**overrides).validate_for(model)
    except GainError as exc:
        raise ConfigError(f"{origin}: {exc}") from None

    if "duration" not in opts:
        raise ConfigError(f"{origin}: missing 'duration'")
    if not opts["duration"] > 0:
        raise ConfigError(f"{origin}: duration must be positive")
    dt = opts.get("dt", 1e-3)
    if not dt > 0:
        raise ConfigError(f"{origin}: dt must be positive")
    if opts.get("substeps", 10) < 1:
        raise ConfigError(f"{origin}: substeps must be >= 1")
    q0 = opts.pop("q0", np.zeros(n))
    if q0.shape != (n,):
        raise ConfigError(f"{origin}: q0 has {q0.shape[0]} values, model has {n} joints")

    dists = []
    for args, where in raw_dist:
        dists.append(_parse_disturbance(args, where, n))
    events = []
    for args, where in raw_reconfig:
        events.append(_parse_reconfig(args, where, n))
    times = [e.t for e in events]
    if times != sorted(times):
        raise ConfigError(f"{origin}: reconfig events must be time-sorted")
    if opts.get("reference") in ("trajectory", "stream"):
        _check_reference(opts["reference"], opts["reference_path"], n, origin)
    if "rmse_window" in opts:
        t0, t1 = opts["rmse_window"]
        if not 0.0 <= t0 < t1 <= opts["duration"] + 1e-9:
            raise ConfigError(f"{origin}: rmse_window must lie within the run duration")
    return Scenario(
        model_path=model_path,
        model=model,
        gains=gains,
        q0=q0,
        disturbances=dists,
        reconfig=events,
        source=Path(origin) if origin != "<scenario>" else None,
        **opts,
    )


def _check_reference(kind, path, n, origin):
    from ..streaming import TrajectoryMsg, WireError, load_records

    try:
        msgs = load_records(path)
    except (OSError, WireError) as exc:
        raise ConfigError(f"{origin}: {path}: {exc}") from None
    if kind == "trajectory" and not any(isinstance(m, TrajectoryMsg) for m in msgs):
        raise ConfigError(f"{origin}: {path}: no TRAJ block")
    for m in msgs:
        pts = m.trajectory.points if isinstance(m, TrajectoryMsg) else (m.point,)
        if pts[0].q_star.shape[0] != n:
            raise ConfigError(f"{origin}: {path}: records have {pts[0].q_star.shape[0]} joints, model has {n}")


def _parse_window(args, where):
    if len(args) != 4 or args[0] != "from" or args[2] != "to":
        raise ConfigError(f"{where}: expected '... from <t0> to <t1>'")
    t0, t1 = _floats([args[1], args[3]], where)
    if not t0 < t1:
        raise ConfigError(f"{where}: disturbance window needs t0 < t1")
    return t0, t1


def _parse_disturbance(args, where, n):
    if not args:
        raise ConfigError(f"{where}: disturbance needs a kind")
    if args[0] == "wrench":
        w = _floats(args[1:7], where)
        if len(w) != 6:
            raise ConfigError(f"{where}: wrench needs 6 values")
        t0, t1 = _parse_window(args[7:], where)
        return ExternalDisturbance(t0, t1, wrench=tuple(w))
    if args[0] == "joint":
        if len(args) < 3:
            raise ConfigError(f"{where}: expected 'disturbance joint <j> <tau> from <t0> to <t1>'")
        try:
            j = int(args[1])
        except ValueError:
            raise ConfigError(f"{where}: joint index must be an integer") from None
        if not 1 <= j <= n:
            raise ConfigError(f"{where}: joint index {j} out of range 1..{n}")
        tau = np.zeros(n)
        tau[j - 1] = _floats([args[2]], where)[0]
        t0, t1 = _parse_window(args[3:], where)
        return ExternalDisturbance(t0, t1, joint_torque=tuple(tau))
    raise ConfigError(f"{where}: unknown disturbance kind '{args[0]}'")


def _parse_reconfig(args, where, n):
    if len(args) < 3:
        raise ConfigError(f"{where}: expected 'reconfig <t> <key> <values...>'")
    t = _floats([args[0]], where)[0]
    key, values = args[1], args[2:]
    text = " ".join(args[1:])
    if key == "observer":
        if len(values) != 1:
            raise ConfigError(f"{where}: observer takes on/off")
        return ReconfigEvent(t, observer=_bool(values[0], where), text=text)
    return ReconfigEvent(t, overrides=gain_overrides(key, values, n, where), text=text)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_scenario(text, path.parent, str(path))
