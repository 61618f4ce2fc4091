"""Model-free friction observer.

A friction-free nominal plant ``K_r qdd_n = u - tau`` is driven by the
command before friction compensation (``u = tau_m + tau_f_hat``) and the
sensed link-side torque ``tau``. The estimate is a PID on the gap between
measured and nominal motion::

    tau_f_hat = K_r K_l ((qd - qd_n) + K_lp (q - q_n) + K_li * int_{t-T}^{t} (q - q_n) dt)

``tau_f_hat`` is the friction torque acting on the joints, so the command
subtracts it (``tau_m = ... - tau_f_hat``). The gap then obeys
``e'' + K_l e' + K_l K_lp e + K_l K_li int e = -tau_f / K_r`` with
``e = q - q_n``, and the controller closes its joint loop on the
nominal state. With ``K_li = 0`` the observer is a PD.

The window integral is a ring buffer of per-tick trapezoid increments with
an O(1) running sum. Capacity is fixed when the state is created.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from numba import njit

from .gains import GainSet


class ObserverState(NamedTuple):
    q_n: np.ndarray
    qd_n: np.ndarray
    integral_buffer: np.ndarray  # (capacity, n) trapezoid increments of (q_n - q)
    ring: np.ndarray  # int64 [head, count]
    gap_prev: np.ndarray  # (q_n - q) at the previous tick
    raw_integral: np.ndarray  # unclamped window sum
    integral_value: np.ndarray  # clamped window sum used by the law
    tau_f_hat: np.ndarray  # last output
    enabled: np.ndarray  # bool (1,)

    @property
    def capacity(self) -> int:
        return self.integral_buffer.shape[0]


def window_ticks(T_int: float, dt: float) -> int:
    return max(1, int(round(T_int / dt)))


def make_observer_state(n: int, T_int: float, dt: float, enabled: bool = True) -> ObserverState:
    """Allocate observer state whose ring buffer spans T_int at step dt."""
    cap = window_ticks(T_int, dt)
    return ObserverState(
        q_n=np.zeros(n),
        qd_n=np.zeros(n),
        integral_buffer=np.zeros((cap, n)),
        ring=np.zeros(2, dtype=np.int64),
        gap_prev=np.zeros(n),
        raw_integral=np.zeros(n),
        integral_value=np.zeros(n),
        tau_f_hat=np.zeros(n),
        enabled=np.array([enabled]),
    )


@njit(cache=True)
def _reset(st, q, qd):
    for i in range(q.shape[0]):
        st.q_n[i] = q[i]
        st.qd_n[i] = qd[i]
        st.gap_prev[i] = 0.0
        st.raw_integral[i] = 0.0
        st.integral_value[i] = 0.0
        st.tau_f_hat[i] = 0.0
    st.integral_buffer[:, :] = 0.0
    st.ring[0] = 0
    st.ring[1] = 0


@njit(cache=True)
def _observer_step(st, gains, rotor, u_prev, tau_meas, q, qd, dt):
    """Advance the nominal plant one tick and refresh st.tau_f_hat."""
    n = q.shape[0]
    if not st.enabled[0]:
        for i in range(n):
            st.q_n[i] = q[i]
            st.qd_n[i] = qd[i]
            st.tau_f_hat[i] = 0.0
        return
    cap = st.integral_buffer.shape[0]
    window = int(round(gains.scal[2] / dt))
    if window < 1:
        window = 1
    if window > cap:
        window = cap

    head = st.ring[0]
    count = st.ring[1]
    # drop samples that fall out of the window, including the slot about to be overwritten
    while count > window - 1 or count >= cap:
        oldest = (head - count) % cap
        for i in range(n):
            st.raw_integral[i] -= st.integral_buffer[oldest, i]
        count -= 1
    for i in range(n):
        kr = rotor[i]
        # semi-implicit Euler on the nominal plant
        st.qd_n[i] += (u_prev[i] - tau_meas[i]) / kr * dt
        st.q_n[i] += st.qd_n[i] * dt
        gap = st.q_n[i] - q[i]
        inc = 0.5 * (gap + st.gap_prev[i]) * dt
        st.gap_prev[i] = gap
        st.integral_buffer[head, i] = inc
        st.raw_integral[i] += inc
    head = (head + 1) % cap
    count += 1
    st.ring[0] = head
    st.ring[1] = count

    for i in range(n):
        kr = rotor[i]
        kl = gains.Kl[i]
        kli = gains.Kli[i]
        integral = st.raw_integral[i]
        gain_i = kr * kl * kli
        if gain_i > 0.0:
            # anti-windup: the integral term alone may not exceed tau_max / 2
            lim = 0.5 * gains.tau_max[i] / gain_i
            if integral > lim:
                integral = lim
            elif integral < -lim:
                integral = -lim
        st.integral_value[i] = integral
        gap = st.q_n[i] - q[i]
        law = (st.qd_n[i] - qd[i]) + gains.Klp[i] * gap
        if kli != 0.0:
            law += kli * integral
        st.tau_f_hat[i] = -kr * kl * law


def reset(state: ObserverState, q, qd) -> ObserverState:
    """Re-seat the nominal plant on the measured state and clear the integral."""
    q = np.ascontiguousarray(q, dtype=float)
    qd = np.ascontiguousarray(qd, dtype=float)
    n = state.q_n.shape[0]
    if q.shape != (n,) or qd.shape != (n,):
        raise ValueError(f"expected joint vectors of length {n}")
    _reset(state, q, qd)
    return state


def set_enabled(state: ObserverState, enabled: bool, q, qd) -> ObserverState:
    """Switch the observer on or off; switching on performs a reset (bumpless)."""
    if enabled and not state.enabled[0]:
        reset(state, q, qd)
    state.enabled[0] = bool(enabled)
    if not enabled:
        reset(state, q, qd)
    return state


def observer_step(state: ObserverState, gains: GainSet, model, tau_cmd_prev, tau_meas, q, qd, dt):
    """One observer tick; updates ``state`` in place.

    ``tau_cmd_prev`` is the command applied over the elapsed tick *before*
    friction compensation, i.e. ``tau_m + tau_f_hat`` of that tick.
    Returns ``(state, tau_f_hat)``.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    n = model.n_joints
    vecs = []
    for name, v in (("tau_cmd_prev", tau_cmd_prev), ("tau_meas", tau_meas), ("q", q), ("qd", qd)):
        a = np.ascontiguousarray(v, dtype=float).reshape(-1)
        if a.shape[0] != n:
            raise ValueError(f"{name} has length {a.shape[0]}, expected {n}")
        vecs.append(a)
    if state.q_n.shape[0] != n:
        raise ValueError("observer state does not match the model")
    if gains.T_int > state.capacity * dt * (1 + 1e-9) and not math.isclose(
        gains.T_int, state.capacity * dt
    ):
        raise ValueError("T_int exceeds the window capacity allocated for this state")
    _observer_step(state, gains.to_arrays(), model.rotor_inertia, *vecs, float(dt))
    return state, state.tau_f_hat.copy()
