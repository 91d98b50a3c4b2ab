"""Closed-loop simulation harness and trajectory-level verifications.

Fixed-step classical RK4 integrates the plant together with the controller
states.  Each saved sample carries the controller internals and the energy
diagnostics, so every verification (storage rates, dissipation, disturbance
gain, convergence) can be recomputed from the recorded trace alone.

Single-input single-unactuated plants (``s = m = 1``) run through a scalar
fast path that evaluates the same formulas on floats; the generic array path
is the reference and the two are pinned against each other in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable, Optional, Sequence

import numpy as np

from .mechanics import (Array, DynamicsError, MechanicalSystem, State,
                        mau_gradient, muu_gradient)
from .controller import Gains, WellPosednessError, integrator_init, robust_integrator_init
from .passivity import potential_integral_VN
from . import analysis

CONTROLLERS = ("exact", "approx", "pi")


@dataclass(frozen=True)
class SetpointStep:
    """Mid-run change of the target position.

    At the step instant the integrator is re-initialized from the current
    state with the new target, so the equilibrium-assignment construction
    stays valid on each interval.
    """

    t: float
    q_a_star: Array
    q_u_star: Optional[Array] = None


@dataclass
class Trace:
    """Uniformly sampled closed-loop trajectory with controller internals."""

    t: Array
    q_u: Array
    q_a: Array
    qd_u: Array
    qd_a: Array
    z1: Array
    z1_closed: Array
    u: Array
    tau: Array
    d: Array
    y_u: Array
    y_a: Array
    y_d: Array
    H_u: Array
    H_a: Array
    H: Array
    H_d: Array
    U: Array
    detK: Array
    z2: Optional[Array] = None
    Hbar_u: Optional[Array] = None
    Hbar_a: Optional[Array] = None
    dt: float = 0.0
    controller: str = "exact"
    system: Optional[MechanicalSystem] = None
    gains: Optional[Gains] = None
    switch_times: tuple = ()
    min_abs_detK: float = float("inf")

    def state_at(self, k: int) -> State:
        return State(self.q_u[k], self.q_a[k], self.qd_u[k], self.qd_a[k])

    @property
    def n_samples(self) -> int:
        return self.t.size


class SimulationAborted(DynamicsError):
    """Integration stopped before ``t_end`` (singularity or blow-up)."""


def _trace_columns(N: int, s: int, m: int, use_z2: bool, record_robust: bool) -> dict:
    cols = {
        "t": np.empty(N),
        "q_u": np.empty((N, s)), "q_a": np.empty((N, m)),
        "qd_u": np.empty((N, s)), "qd_a": np.empty((N, m)),
        "z1": np.empty((N, m)), "z1_closed": np.empty((N, m)),
        "u": np.empty((N, m)), "tau": np.empty((N, m)), "d": np.empty((N, m)),
        "y_u": np.empty((N, m)), "y_a": np.empty((N, m)), "y_d": np.empty((N, m)),
        "H_u": np.empty(N), "H_a": np.empty(N), "H": np.empty(N),
        "H_d": np.empty(N), "U": np.empty(N), "detK": np.empty(N),
    }
    if use_z2:
        cols["z2"] = np.empty((N, m))
    if record_robust:
        cols["Hbar_u"] = np.empty(N)
        cols["Hbar_a"] = np.empty(N)
    return cols


def _build_eval_generic(sys: MechanicalSystem, gains: Gains, controller: str,
                        disturbance, det_tol: float, hold: SimpleNamespace,
                        cols: dict, use_z2: bool, record_robust: bool):
    s, m = sys.s, sys.m
    n = sys.n
    robust = gains.mode == "robust_A8"
    k_e, k_a, k_u = gains.k_e, gains.k_a, gains.k_u
    K_P, K_I, K_D = gains.K_P, gains.K_I, gains.K_D
    has_kd = bool(np.any(K_D))
    maa = sys.maa
    maa_inv = sys.maa_inv
    eye_m = np.eye(m)
    s_a = sys.affine_Va[0] if sys.affine_Va is not None else None
    c0 = sys.affine_Va[1] if sys.affine_Va is not None else 0.0

    def eval_rhs(t: float, xv: Array, record_k: Optional[int] = None) -> Array:
        q_u = xv[:s]
        q_a = xv[s: s + m]
        qd_u = xv[s + m: 2 * s + m]
        qd_a = xv[2 * s + m: 2 * n]
        z1v = xv[2 * n: 2 * n + m]
        z2v = xv[2 * n + m:] if use_z2 else None

        muu = sys.muu(q_u)
        mau = sys.mau(q_u)
        dmuu = muu_gradient(sys, q_u)
        dmau = mau_gradient(sys, q_u)
        j_uu = np.einsum("ijk,j->ik", dmuu, qd_u)
        cmu_qdu = j_uu @ qd_u - 0.5 * (j_uu.T @ qd_u)
        j_ua = np.einsum("jik,j->ik", dmau, qd_a)
        j_au = np.einsum("ijk,j->ik", dmau, qd_u)
        dmu = j_ua @ qd_u - j_au.T @ qd_a
        act_row = j_au @ qd_u
        gradVu = sys.gradVu(q_u)
        gradVa = sys.gradVa(q_a)

        y_u = -(maa_inv @ (mau @ qd_u))
        y_a = qd_a - y_u
        y_d = k_a * y_a + k_u * y_u
        muu_s = muu - mau.T @ maa_inv @ mau

        need_K = controller == "exact" or record_k is not None
        detK = np.nan
        K = None
        if need_K:
            K = k_e * eye_m + k_a * K_D @ maa_inv
            if has_kd:
                w = np.linalg.solve(muu_s, mau.T @ maa_inv)
                K = K + k_u * K_D @ maa_inv @ mau @ w
            detK = float(np.linalg.det(K))

        if controller == "exact":
            if abs(detK) < det_tol:
                raise WellPosednessError(q_u, detK, t)
            hold.min_abs_det = min(hold.min_abs_det, abs(detK))
            if has_kd:
                inner = np.linalg.solve(
                    muu_s, mau.T @ (maa_inv @ act_row) - (cmu_qdu + dmu + gradVu))
                S = -k_u * K_D @ (maa_inv @ (act_row + mau @ inner))
                if robust:
                    wsa = np.linalg.solve(muu_s, mau.T @ (maa_inv @ s_a))
                    S = S - k_a * K_D @ (maa_inv @ s_a) - k_u * K_D @ (maa_inv @ (mau @ wsa))
            else:
                S = np.zeros(m)
            u = np.linalg.solve(K, -(K_P @ y_d) - K_I @ z1v - S)
            z2dot = None
        elif controller == "approx":
            deriv = gains.filter_a * (y_d - z2v)
            u = -(K_P @ y_d + K_I @ z1v + K_D @ deriv) / k_e
            z2dot = gains.filter_b * (y_d - z2v)
        else:  # pi
            u = -(K_P @ y_d + K_I @ z1v) / k_e
            z2dot = None

        d = np.zeros(m) if disturbance is None else \
            np.asarray(disturbance(t), dtype=float).reshape(m)
        tau = u + d if robust else u + d + gradVa

        M = np.empty((n, n))
        M[:s, :s] = muu
        M[:s, s:] = mau.T
        M[s:, :s] = mau
        M[s:, s:] = maa
        force = np.empty(n)
        force[:s] = -(cmu_qdu + dmu + gradVu)
        force[s:] = tau - act_row - gradVa
        qdd = np.linalg.solve(M, force)

        xdot = np.empty_like(xv)
        xdot[:n] = xv[n: 2 * n]
        xdot[n: 2 * n] = qdd
        xdot[2 * n: 2 * n + m] = y_d
        if use_z2:
            xdot[2 * n + m:] = z2dot

        if record_k is not None:
            k = record_k
            qd = xv[n: 2 * n]
            Vu = sys.Vu(q_u)
            H_u = 0.5 * qd_u @ (muu_s @ qd_u) + Vu
            Htot = 0.5 * qd @ (M @ qd) + Vu
            top = mau.T @ maa_inv @ mau
            H_a = 0.5 * (qd_u @ (top @ qd_u)) + qd_u @ (mau.T @ qd_a) \
                + 0.5 * (qd_a @ (maa @ qd_a))
            vn = potential_integral_VN(sys, q_u)
            z1c = k_a * q_a + (k_a - k_u) * vn + hold.kappa
            if record_robust:
                V0 = float(s_a @ vn) + c0
                Hbar_u = H_u - V0
                Hbar_a = H_a + sys.Va(q_a) + V0
                cols["Hbar_u"][k] = Hbar_u
                cols["Hbar_a"][k] = Hbar_a
            if robust:
                store_u, store_a = Hbar_u, Hbar_a
            else:
                store_u, store_a = H_u, H_a
            U = k_e * (k_a * store_a + k_u * store_u) \
                + 0.5 * y_d @ (K_D @ y_d) + 0.5 * z1v @ (K_I @ z1v)
            v = k_a * (q_a - hold.q_a_star) + (k_a - k_u) * (vn - hold.vn_star)
            Vd = k_e * k_u * Vu + 0.5 * float(v @ (K_I @ v))
            Md = analysis.desired_inertia_Md(sys, gains, q_u)
            H_d = 0.5 * float(qd @ (Md @ qd)) + Vd
            cols["t"][k] = t
            cols["q_u"][k] = q_u
            cols["q_a"][k] = q_a
            cols["qd_u"][k] = qd_u
            cols["qd_a"][k] = qd_a
            cols["z1"][k] = z1v
            cols["z1_closed"][k] = z1c
            cols["u"][k] = u
            cols["tau"][k] = tau
            cols["d"][k] = d
            cols["y_u"][k] = y_u
            cols["y_a"][k] = y_a
            cols["y_d"][k] = y_d
            cols["H_u"][k] = H_u
            cols["H_a"][k] = H_a
            cols["H"][k] = Htot
            cols["H_d"][k] = H_d
            cols["U"][k] = U
            cols["detK"][k] = detK
            if use_z2:
                cols["z2"][k] = z2v
        return xdot

    return eval_rhs


def _build_eval_scalar(sys: MechanicalSystem, gains: Gains, controller: str,
                       disturbance, det_tol: float, hold: SimpleNamespace,
                       cols: dict, use_z2: bool, record_robust: bool):
    """Float-only evaluation for s = m = 1; formula-identical to the generic
    path."""
    robust = gains.mode == "robust_A8"
    k_e, k_a, k_u = gains.k_e, gains.k_a, gains.k_u
    KP = float(gains.K_P[0, 0])
    KI = float(gains.K_I[0, 0])
    KD = float(gains.K_D[0, 0])
    has_kd = KD != 0.0
    maa = float(sys.maa[0, 0])
    s_a = float(sys.affine_Va[0][0]) if sys.affine_Va is not None else 0.0
    c0 = float(sys.affine_Va[1]) if sys.affine_Va is not None else 0.0
    muu_fn, mau_fn = sys.muu_fn, sys.mau_fn
    gradVu_fn, gradVa_fn, Vu_fn, Va_fn = sys.gradVu_fn, sys.gradVa_fn, sys.Vu_fn, sys.Va_fn
    vn_fn = sys.VN_fn
    qbuf_u = np.empty(1)
    qbuf_a = np.empty(1)

    def vn_value(q_u_arr) -> float:
        if vn_fn is not None:
            return float(np.asarray(vn_fn(q_u_arr)).reshape(-1)[0])
        return float(potential_integral_VN(sys, q_u_arr)[0])

    def eval_rhs(t: float, xv: Array, record_k: Optional[int] = None) -> Array:
        q_u, q_a, qd_u, qd_a, z1 = xv[0], xv[1], xv[2], xv[3], xv[4]
        z2 = xv[5] if use_z2 else 0.0
        qbuf_u[0] = q_u
        qbuf_a[0] = q_a
        muu = float(np.asarray(muu_fn(qbuf_u)).reshape(-1)[0])
        mau = float(np.asarray(mau_fn(qbuf_u)).reshape(-1)[0])
        dmuu = float(muu_gradient(sys, qbuf_u).reshape(-1)[0])
        dmau = float(mau_gradient(sys, qbuf_u).reshape(-1)[0])
        gradVu = float(np.asarray(gradVu_fn(qbuf_u)).reshape(-1)[0])
        gradVa = float(np.asarray(gradVa_fn(qbuf_a)).reshape(-1)[0])

        cmu_qdu = 0.5 * dmuu * qd_u * qd_u
        dmu = 0.0  # the velocity cross terms cancel exactly for s = m = 1
        act_row = dmau * qd_u * qd_u
        y_u = -mau * qd_u / maa
        y_a = qd_a - y_u
        y_d = k_a * y_a + k_u * y_u
        muu_s = muu - mau * mau / maa

        need_K = controller == "exact" or record_k is not None
        detK = float("nan")
        if need_K:
            K = k_e + k_a * KD / maa
            if has_kd:
                K += k_u * KD * mau * mau / (maa * maa * muu_s)
            detK = K

        if controller == "exact":
            if abs(detK) < det_tol:
                raise WellPosednessError(np.array([q_u]), detK, t)
            if abs(detK) < hold.min_abs_det:
                hold.min_abs_det = abs(detK)
            if has_kd:
                inner = (mau * act_row / maa - (cmu_qdu + dmu + gradVu)) / muu_s
                S = -k_u * KD * (act_row + mau * inner) / maa
                if robust:
                    S -= k_a * KD * s_a / maa + k_u * KD * mau * mau * s_a / (maa * maa * muu_s)
            else:
                S = 0.0
            u = (-(KP * y_d) - KI * z1 - S) / K
        elif controller == "approx":
            u = -(KP * y_d + KI * z1 + KD * gains.filter_a * (y_d - z2)) / k_e
        else:
            u = -(KP * y_d + KI * z1) / k_e

        d = 0.0 if disturbance is None else float(np.asarray(disturbance(t)).reshape(-1)[0])
        tau = u + d if robust else u + d + gradVa

        f_u = -(cmu_qdu + dmu + gradVu)
        f_a = tau - act_row - gradVa
        det_M = muu * maa - mau * mau
        qdd_u = (maa * f_u - mau * f_a) / det_M
        qdd_a = (-mau * f_u + muu * f_a) / det_M

        xdot = np.empty_like(xv)
        xdot[0] = qd_u
        xdot[1] = qd_a
        xdot[2] = qdd_u
        xdot[3] = qdd_a
        xdot[4] = y_d
        if use_z2:
            xdot[5] = gains.filter_b * (y_d - z2)

        if record_k is not None:
            k = record_k
            Vu = float(Vu_fn(qbuf_u))
            H_u = 0.5 * muu_s * qd_u * qd_u + Vu
            top = mau * mau / maa
            H_a = 0.5 * top * qd_u * qd_u + mau * qd_u * qd_a + 0.5 * maa * qd_a * qd_a
            Htot = 0.5 * (muu * qd_u * qd_u + 2.0 * mau * qd_u * qd_a
                          + maa * qd_a * qd_a) + Vu
            vn = vn_value(qbuf_u)
            z1c = k_a * q_a + (k_a - k_u) * vn + hold.kappa_f
            if record_robust:
                V0 = s_a * vn + c0
                Hbar_u = H_u - V0
                Hbar_a = H_a + float(Va_fn(qbuf_a)) + V0
                cols["Hbar_u"][k] = Hbar_u
                cols["Hbar_a"][k] = Hbar_a
            if robust:
                store_u, store_a = Hbar_u, Hbar_a
            else:
                store_u, store_a = H_u, H_a
            U = k_e * (k_a * store_a + k_u * store_u) + 0.5 * KD * y_d * y_d \
                + 0.5 * KI * z1 * z1
            v = k_a * (q_a - hold.q_a_star_f) + (k_a - k_u) * (vn - hold.vn_star_f)
            Vd = k_e * k_u * Vu + 0.5 * KI * v * v
            A = k_e * k_u * muu_s + k_e * k_a * top + (k_a - k_u) ** 2 * top * KD / maa
            off = k_e * k_a * mau + k_a * (k_a - k_u) * KD * mau / maa
            dd = k_e * k_a * maa + k_a * k_a * KD
            H_d = 0.5 * (A * qd_u * qd_u + 2.0 * off * qd_u * qd_a
                         + dd * qd_a * qd_a) + Vd
            cols["t"][k] = t
            cols["q_u"][k, 0] = q_u
            cols["q_a"][k, 0] = q_a
            cols["qd_u"][k, 0] = qd_u
            cols["qd_a"][k, 0] = qd_a
            cols["z1"][k, 0] = z1
            cols["z1_closed"][k, 0] = z1c
            cols["u"][k, 0] = u
            cols["tau"][k, 0] = tau
            cols["d"][k, 0] = d
            cols["y_u"][k, 0] = y_u
            cols["y_a"][k, 0] = y_a
            cols["y_d"][k, 0] = y_d
            cols["H_u"][k] = H_u
            cols["H_a"][k] = H_a
            cols["H"][k] = Htot
            cols["H_d"][k] = H_d
            cols["U"][k] = U
            cols["detK"][k] = detK
            if use_z2:
                cols["z2"][k, 0] = z2
        return xdot

    return eval_rhs


def simulate(sys: MechanicalSystem, gains: Gains, q0, qd0, t_end: float, dt: float,
             *, controller: str = "exact",
             disturbance: Optional[Callable[[float], Array]] = None,
             setpoints: Sequence[SetpointStep] = (),
             z1_0: Optional[Array] = None,
             det_tol: float = 1e-10,
             robust_equilibrium_init: bool = False,
             force_generic: bool = False) -> Trace:
    """Integrate the closed loop and record a full diagnostic trace.

    ``controller`` selects the implicit law (``"exact"``), the filtered
    approximation (``"approx"``) or the PI simplification (``"pi"``).  The
    external signal ``disturbance`` is added to the controller output at the
    plant input junction; the controller never sees it.  Unless ``z1_0`` is
    given, the integrator starts at the equilibrium-assigning value for the
    initial target (plus the holding correction when
    ``robust_equilibrium_init`` is set in the no-cancellation mode).

    Raises :class:`SimulationAborted` when the well-posedness matrix crosses
    the singularity threshold (exact law only) or the state stops being
    finite; the message carries the offending time and configuration.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"controller must be one of {CONTROLLERS}")
    s, m, n = sys.s, sys.m, sys.n
    q0 = np.asarray(q0, dtype=float).reshape(n)
    qd0 = np.asarray(qd0, dtype=float).reshape(n)
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive integer number of steps")
    robust = gains.mode == "robust_A8"
    if robust_equilibrium_init and not robust:
        raise ValueError("robust_equilibrium_init applies to robust_A8 mode only")

    cur_gains = gains
    if z1_0 is None:
        if robust_equilibrium_init:
            z1, kappa = robust_integrator_init(sys, cur_gains, q0)
        else:
            z1, kappa = integrator_init(sys, cur_gains, q0)
    else:
        z1 = np.asarray(z1_0, dtype=float).reshape(m)
        kappa = z1 - gains.k_a * q0[s:] \
            - (gains.k_a - gains.k_u) * potential_integral_VN(sys, q0[:s])

    use_z2 = controller == "approx"
    x = np.concatenate([q0, qd0, z1, np.zeros(m) if use_z2 else np.zeros(0)])
    if use_z2:
        # start the derivative filter on the current output to avoid a kick
        st0 = State(q0[:s], q0[s:], qd0[:s], qd0[s:])
        from .passivity import passive_outputs
        x[2 * n + m:] = passive_outputs(sys, st0, gains).y_d

    N = n_steps + 1
    record_robust = sys.affine_Va is not None
    if robust and sys.affine_Va is None:
        raise ValueError("robust_A8 mode requires affine actuated-potential data")
    cols = _trace_columns(N, s, m, use_z2, record_robust)

    hold = SimpleNamespace(min_abs_det=float("inf"))

    def refresh_hold():
        hold.kappa = kappa
        hold.q_a_star = cur_gains.q_a_star
        hold.vn_star = potential_integral_VN(sys, cur_gains.q_u_star)
        hold.kappa_f = float(np.asarray(kappa).reshape(-1)[0])
        hold.q_a_star_f = float(cur_gains.q_a_star[0])
        hold.vn_star_f = float(hold.vn_star[0])

    refresh_hold()

    scalar = (s == 1 and m == 1) and not force_generic
    builder = _build_eval_scalar if scalar else _build_eval_generic
    eval_rhs = builder(sys, gains, controller, disturbance, det_tol, hold,
                       cols, use_z2, record_robust)

    steps = sorted((sp for sp in setpoints if sp.t <= t_end * (1 + 1e-12)),
                   key=lambda sp: sp.t)
    switch_idx = {}
    for sp in steps:
        k = int(round(sp.t / dt))
        if abs(k * dt - sp.t) > 1e-9 * max(1.0, t_end) or k <= 0:
            raise ValueError(f"setpoint time {sp.t} is not on the integration grid")
        switch_idx[k] = sp

    half = 0.5 * dt
    sixth = dt / 6.0
    try:
        # divergence is detected by the explicit finiteness check, so the
        # transient inf/nan arithmetic on the way there stays silent
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(n_steps):
                t = k * dt
                k1 = eval_rhs(t, x, record_k=k)
                k2 = eval_rhs(t + half, x + half * k1)
                k3 = eval_rhs(t + half, x + half * k2)
                k4 = eval_rhs(t + dt, x + dt * k3)
                x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
                if not np.all(np.isfinite(x)):
                    raise SimulationAborted(f"state became non-finite at t={t + dt:.6g}s")
                if (k + 1) in switch_idx:
                    sp = switch_idx[k + 1]
                    cur_gains = cur_gains.with_target(q_u_star=sp.q_u_star,
                                                      q_a_star=sp.q_a_star)
                    if robust_equilibrium_init:
                        z1_new, kappa = robust_integrator_init(sys, cur_gains, x[:n])
                    else:
                        z1_new, kappa = integrator_init(sys, cur_gains, x[:n])
                    x[2 * n: 2 * n + m] = z1_new
                    refresh_hold()
        eval_rhs(n_steps * dt, x, record_k=n_steps)
    except WellPosednessError as exc:
        raise SimulationAborted(
            f"well-posedness matrix singular at t={exc.t:.6g}s, q_u={exc.q_u}"
        ) from exc

    return Trace(
        **cols,
        dt=dt, controller=controller, system=sys, gains=gains,
        switch_times=tuple(sp.t for sp in steps),
        min_abs_detK=hold.min_abs_det if hold.min_abs_det < float("inf") else float("nan"),
    )


def simulate_open_loop(sys: MechanicalSystem, q0, qd0, t_end: float, dt: float,
                       tau_fn: Optional[Callable[[float], Array]] = None) -> dict:
    """Integrate the raw plant under an applied force (zero by default).

    Returns time, positions, velocities and the total energy, which is
    conserved for the unforced plant and serves as the integrator audit.
    """
    from .mechanics import assemble_inertia, forward_dynamics
    s = sys.s
    q0 = np.asarray(q0, dtype=float).reshape(sys.n)
    qd0 = np.asarray(qd0, dtype=float).reshape(sys.n)
    n_steps = int(round(t_end / dt))
    x = np.concatenate([q0, qd0])

    def rhs(t, xv):
        st = State.from_vectors(xv[: sys.n], xv[sys.n:], s)
        tau = np.zeros(sys.m) if tau_fn is None else np.asarray(tau_fn(t), dtype=float)
        return np.concatenate([st.qd, forward_dynamics(sys, st, tau)])

    N = n_steps + 1
    out = {"t": np.empty(N), "q": np.empty((N, sys.n)), "qd": np.empty((N, sys.n)),
           "energy": np.empty(N)}

    def record(k, t, xv):
        q, qd = xv[: sys.n], xv[sys.n:]
        M = assemble_inertia(sys, q[:s])
        out["t"][k] = t
        out["q"][k] = q
        out["qd"][k] = qd
        out["energy"][k] = 0.5 * qd @ (M @ qd) + sys.Vu(q[:s]) + sys.Va(q[s:])

    half, sixth = 0.5 * dt, dt / 6.0
    for k in range(n_steps):
        t = k * dt
        record(k, t, x)
        k1 = rhs(t, x)
        k2 = rhs(t + half, x + half * k1)
        k3 = rhs(t + half, x + half * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + sixth * (k1 + 2.0 * (k2 + k3) + k4)
    record(n_steps, n_steps * dt, x)
    return out


# ---------------------------------------------------------------------------
# Trajectory-level verifications
# ---------------------------------------------------------------------------

_PASSIVITY_PAIRS = {
    "u->y_u": ("H_u", "y_u", "u_total"),
    "u->y_a": ("H_a", "y_a", "u_total"),
    "tau->ybar_u": ("Hbar_u", "y_u", "tau"),
    "tau->ybar_a": ("Hbar_a", "y_a", "tau"),
}


def verify_passivity(trace: Trace, which: str = "u->y_u") -> float:
    """Worst relative mismatch between a storage rate and its supplied power.

    The storage derivative comes from central differences of the recorded
    column, the power from the recorded input and output; endpoints are
    excluded.  Disturbances count as part of the input, since they enter at
    the same junction.
    """
    if which not in _PASSIVITY_PAIRS:
        raise ValueError(f"unknown pair {which!r}; options: {sorted(_PASSIVITY_PAIRS)}")
    store_name, y_name, input_name = _PASSIVITY_PAIRS[which]
    store = getattr(trace, store_name)
    if store is None:
        raise ValueError(f"trace has no {store_name} column (affine potential data missing)")
    if input_name == "u_total":
        force = trace.u + trace.d
    else:
        force = trace.tau
    power = np.einsum("ij,ij->i", force, getattr(trace, y_name))
    dstore = np.gradient(store, trace.dt)
    mask = _interior_mask(trace)
    resid = np.abs(dstore[mask] - power[mask])
    denom = np.max(np.abs(power))
    if denom == 0.0:
        denom = 1.0
    return float(resid.max() / denom)


def _interior_mask(trace: Trace, pad: int = 2) -> np.ndarray:
    mask = np.ones(trace.n_samples, dtype=bool)
    mask[0] = mask[-1] = False
    for t_sw in trace.switch_times:
        k = int(round(t_sw / trace.dt))
        mask[max(0, k - pad): k + pad + 1] = False
    return mask


def verify_lyapunov(trace: Trace) -> dict:
    """Check the dissipation identity of the shaped energy along the trace.

    The rate of the recorded Lyapunov column must equal minus the weighted
    square of the combined output, and the column must be non-increasing up
    to integration tolerance.  Samples adjacent to setpoint switches are
    skipped, since the integrator state jumps there.
    """
    diss = np.einsum("ij,jk,ik->i", trace.y_d, trace.gains.K_P, trace.y_d)
    dU = np.gradient(trace.U, trace.dt)
    mask = _interior_mask(trace)
    resid = np.abs(dU[mask] + diss[mask])
    denom = diss.max() if diss.max() > 0 else 1.0
    steps_ok = np.ones(trace.n_samples - 1, dtype=bool)
    for t_sw in trace.switch_times:
        k = int(round(t_sw / trace.dt))
        steps_ok[max(0, k - 1): k + 1] = False
    dU_step = np.diff(trace.U)
    monotone = bool(np.all(dU_step[steps_ok] <= 1e-8 * trace.dt))
    return {
        "max_residual": float(resid.max() / denom),
        "monotone": monotone,
        "dissipation": diss,
    }


def verify_l2_gain(trace: Trace, estimate_fraction: float = 0.5) -> dict:
    """Prefix-integral disturbance-gain check for sign-consistent gains.

    Computes running integrals of ``|y_d|^2`` and ``|d|^2 / lambda_min(K_P)``.
    The offset constant is estimated as the worst prefix gap over the leading
    ``estimate_fraction`` of the trace and the inequality is then required at
    every sample, so the estimate genuinely predicts the tail rather than
    restating it.  With inconsistent gain signs the bound does not apply and
    the result says so.
    """
    gains = trace.gains
    if not gains.sign_consistent:
        return {"applicable": False}
    lam = float(np.linalg.eigvalsh(gains.K_P).min())
    yd2 = np.einsum("ij,ij->i", trace.y_d, trace.y_d)
    d2 = np.einsum("ij,ij->i", trace.d, trace.d)
    from scipy.integrate import cumulative_trapezoid
    lhs = np.concatenate([[0.0], cumulative_trapezoid(yd2, dx=trace.dt)])
    rhs = np.concatenate([[0.0], cumulative_trapezoid(d2, dx=trace.dt)]) / lam
    gap = lhs - rhs
    n_est = max(1, int(round(estimate_fraction * trace.n_samples)))
    beta3 = float(gap[:n_est].max())
    slack = rhs + beta3 - lhs
    k_star = int(np.argmax(gap))
    tol = 1e-9 * max(1.0, abs(beta3), float(rhs[-1]))
    return {
        "applicable": True,
        "lhs": lhs, "rhs": rhs, "beta3": beta3, "slack": slack,
        "holds": bool(np.all(slack >= -tol)),
        "peak_time": float(trace.t[k_star]),
        "peak_fraction": k_star / (trace.n_samples - 1),
    }


def tail_residuals(trace: Trace) -> dict:
    """Invariance-principle residuals at the end of a converged run.

    On any trajectory that has settled, the combined output, the controller
    output, and the unactuated potential gradient must all have died out;
    their final magnitudes are what an invariance argument drives to zero.
    """
    grad = trace.system.gradVu(trace.q_u[-1])
    return {
        "y_d": float(np.abs(trace.y_d[-1]).max()),
        "u": float(np.abs(trace.u[-1]).max()),
        "gradVu": float(np.abs(grad).max()),
    }


def detect_convergence(trace: Trace, q_star, tol_q: float, tol_v: float,
                       window: float) -> dict:
    """Settling detector: position within ``tol_q`` (per coordinate) and
    velocity norm within ``tol_v`` over the trailing ``window`` seconds."""
    q_star = np.asarray(q_star, dtype=float).reshape(-1)
    q = np.hstack([trace.q_u, trace.q_a])
    qd = np.hstack([trace.qd_u, trace.qd_a])
    q_err = np.max(np.abs(q - q_star), axis=1)
    v = np.linalg.norm(qd, axis=1)
    ok = (q_err <= tol_q) & (v <= tol_v)
    n_window = int(round(window / trace.dt))
    tail = ok[-(n_window + 1):] if n_window > 0 else ok[-1:]
    converged = bool(np.all(tail))
    if not np.all(ok):
        last_bad = int(np.max(np.nonzero(~ok)[0]))
        settle = float(trace.t[last_bad + 1]) if last_bad + 1 < trace.n_samples else float("inf")
    else:
        settle = 0.0
    return {"converged": converged, "settle_time": settle}


# ---------------------------------------------------------------------------
# CSV serialization
# ---------------------------------------------------------------------------

def _column_layout(trace: Trace) -> list:
    s = trace.q_u.shape[1]
    m = trace.q_a.shape[1]
    layout = [("t", trace.t)]

    def add_vec(base, arr, count):
        for j in range(count):
            layout.append((f"{base}{j}", arr[:, j]))

    add_vec("q_u", trace.q_u, s)
    add_vec("q_a", trace.q_a, m)
    add_vec("qd_u", trace.qd_u, s)
    add_vec("qd_a", trace.qd_a, m)
    add_vec("z1_", trace.z1, m)
    add_vec("u", trace.u, m)
    add_vec("y_u", trace.y_u, m)
    add_vec("y_a", trace.y_a, m)
    add_vec("y_d", trace.y_d, m)
    layout.append(("H_u", trace.H_u))
    layout.append(("H_a", trace.H_a))
    layout.append(("H_d", trace.H_d))
    layout.append(("U", trace.U))
    layout.append(("detK", trace.detK))
    add_vec("d", trace.d, m)
    add_vec("tau", trace.tau, m)
    add_vec("z1_closed_", trace.z1_closed, m)
    layout.append(("H", trace.H))
    if trace.z2 is not None:
        add_vec("z2_", trace.z2, m)
    if trace.Hbar_u is not None:
        layout.append(("Hbar_u", trace.Hbar_u))
        layout.append(("Hbar_a", trace.Hbar_a))
    return layout


def write_trace_csv(trace: Trace, path) -> None:
    """Write the trace with a single header row and 17 significant digits."""
    layout = _column_layout(trace)
    header = ",".join(name for name, _ in layout)
    data = np.column_stack([col for _, col in layout])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def write_column_map(trace: Trace, path) -> None:
    """gnuplot-style column map: 1-based column index and name per line."""
    layout = _column_layout(trace)
    with open(path, "w") as fh:
        for i, (name, _) in enumerate(layout, start=1):
            fh.write(f"{i} {name}\n")


def read_trace_csv(path) -> dict:
    """Read a trace CSV back into a dict of named column arrays."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}
