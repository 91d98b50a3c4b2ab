"""PID controller wrapped around the weighted passive output.

The control law is the PID

    k_e u = -(K_P y_d + K_I z1 + K_D yd_dot),    z1' = y_d,

around ``y_d = k_a y_a + k_u y_u``.  Because ``yd_dot`` contains the
accelerations, the law is realised implicitly: substituting the plant
dynamics turns it into a linear system ``K(q_u) u = -K_P y_d - K_I z1 - S``
that is solved each evaluation, with no numerical differentiation.  An
explicit variant replaces the derivative with a first-order filter for
comparison experiments; it is not adequate when fast control action is
required.

Two plant-side modes are supported: ``cancel_Va`` feeds ``tau = u + grad
V_a(q_a)`` so the actuated potential is cancelled, while ``robust_A8``
applies the controller output directly as ``tau`` and relies on the actuated
potential being affine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .mechanics import Array, MechanicalSystem, State, coriolis_decomposition
from .passivity import passive_outputs, potential_integral_VN, schur_unactuated

MODES = ("cancel_Va", "robust_A8")


class GainSignWarning(UserWarning):
    """The outer gains do not share a sign; the L2 disturbance bound does
    not apply, although equilibrium shaping may still succeed."""


class WellPosednessError(RuntimeError):
    """The implicit control law is singular at the current configuration."""

    def __init__(self, q_u: Array, det: float, t: Optional[float] = None):
        self.q_u = np.asarray(q_u, dtype=float)
        self.det = float(det)
        self.t = t
        at = f" at t={t:.6g}s" if t is not None else ""
        super().__init__(
            f"well-posedness matrix is singular{at}: det K = {det:.3e} at q_u={self.q_u}")


def _as_gain_matrix(value, m: int, name: str, *, definite: bool) -> Array:
    mat = np.asarray(value, dtype=float)
    if mat.ndim == 0:
        mat = float(mat) * np.eye(m)
    mat = np.atleast_2d(mat)
    if mat.shape != (m, m):
        raise ValueError(f"{name} must be scalar or {(m, m)}, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    eigs = np.linalg.eigvalsh(mat)
    if definite and eigs.min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    if not definite and eigs.min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return mat


@dataclass(frozen=True)
class Gains:
    """Controller gains, target position, and derivative-filter parameters.

    ``k_e``, ``k_a``, ``k_u`` are the nonzero outer weights (``k_a != k_u``);
    ``K_P``, ``K_I`` are symmetric positive definite and ``K_D`` positive
    semidefinite.  ``q_u_star``/``q_a_star`` fix the desired equilibrium;
    the unactuated part must be a critical point of the unactuated potential.
    ``filter_a``/``filter_b`` only matter for the approximate-derivative law.
    """

    k_e: float
    k_a: float
    k_u: float
    K_P: Array
    K_I: Array
    K_D: Array
    q_u_star: Array
    q_a_star: Array
    mode: str = "cancel_Va"
    filter_a: float = 200.0
    filter_b: float = 200.0

    def __post_init__(self):
        if self.k_e * self.k_a * self.k_u == 0.0:
            raise ValueError("k_e, k_a, k_u must all be nonzero")
        if self.k_a == self.k_u:
            raise ValueError("k_a and k_u must differ")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.filter_a <= 0 or self.filter_b <= 0:
            raise ValueError("filter parameters must be positive")
        q_u_star = np.asarray(self.q_u_star, dtype=float).reshape(-1)
        q_a_star = np.asarray(self.q_a_star, dtype=float).reshape(-1)
        m = q_a_star.size
        object.__setattr__(self, "q_u_star", q_u_star)
        object.__setattr__(self, "q_a_star", q_a_star)
        object.__setattr__(self, "K_P", _as_gain_matrix(self.K_P, m, "K_P", definite=True))
        object.__setattr__(self, "K_I", _as_gain_matrix(self.K_I, m, "K_I", definite=True))
        object.__setattr__(self, "K_D", _as_gain_matrix(self.K_D, m, "K_D", definite=False))
        if not self.sign_consistent:
            warnings.warn(
                "sign(k_e), sign(k_a), sign(k_u) differ; the L2 disturbance "
                "bound does not apply", GainSignWarning, stacklevel=2)

    @property
    def sign_consistent(self) -> bool:
        return np.sign(self.k_e) == np.sign(self.k_a) == np.sign(self.k_u)

    @property
    def q_star(self) -> Array:
        return np.concatenate([self.q_u_star, self.q_a_star])

    def with_target(self, q_u_star=None, q_a_star=None) -> "Gains":
        """Copy with a new target position (used for setpoint steps)."""
        kwargs = {}
        if q_u_star is not None:
            kwargs["q_u_star"] = np.asarray(q_u_star, dtype=float)
        if q_a_star is not None:
            kwargs["q_a_star"] = np.asarray(q_a_star, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GainSignWarning)
            return replace(self, **kwargs)


@dataclass
class ControllerState:
    """Integrator state ``z1`` and, for the filtered law, filter state ``z2``."""

    z1: Array
    z2: Optional[Array] = None

    def __post_init__(self):
        self.z1 = np.asarray(self.z1, dtype=float).reshape(-1)
        if self.z2 is not None:
            self.z2 = np.asarray(self.z2, dtype=float).reshape(self.z1.shape)


def wellposedness_matrix_K(sys: MechanicalSystem, gains: Gains, q_u: Array) -> Array:
    """Matrix multiplying ``u`` in the implicit form of the PID law.

    ``K = k_e I + k_a K_D maa^{-1}
         + k_u K_D maa^{-1} m_au (m_uu^s)^{-1} m_au^T maa^{-1}``.
    The law is well posed wherever this matrix is nonsingular.
    """
    q_u = np.asarray(q_u, dtype=float).reshape(sys.s)
    K = gains.k_e * np.eye(sys.m) + gains.k_a * gains.K_D @ sys.maa_inv
    if np.any(gains.K_D):
        mau = sys.mau(q_u)
        muu_s = schur_unactuated(sys, q_u)
        w = np.linalg.solve(muu_s, mau.T @ sys.maa_inv)
        K = K + gains.k_u * gains.K_D @ sys.maa_inv @ mau @ w
    return K


def feedforward_S(sys: MechanicalSystem, gains: Gains, st: State) -> Array:
    """State-dependent term absorbed from the derivative action.

    Identically zero when ``K_D = 0``.  In ``robust_A8`` mode the constant
    actuated-potential slope enters through the same acceleration
    substitution and shows up as an extra constant piece.
    """
    if not np.any(gains.K_D):
        return np.zeros(sys.m)
    mau = sys.mau(st.q_u)
    muu_s = schur_unactuated(sys, st.q_u)
    cmu_qdu, dmu, act_row = coriolis_decomposition(sys, st)
    inner = np.linalg.solve(muu_s, mau.T @ (sys.maa_inv @ act_row)
                            - (cmu_qdu + dmu + sys.gradVu(st.q_u)))
    bracket = sys.maa_inv @ (act_row + mau @ inner)
    S = -gains.k_u * gains.K_D @ bracket
    if gains.mode == "robust_A8":
        if sys.affine_Va is None:
            raise ValueError("robust_A8 mode requires affine actuated-potential data")
        s_a, _ = sys.affine_Va
        w = np.linalg.solve(muu_s, mau.T @ (sys.maa_inv @ s_a))
        S = S - gains.k_a * gains.K_D @ (sys.maa_inv @ s_a) \
              - gains.k_u * gains.K_D @ (sys.maa_inv @ (mau @ w))
    return S


def exact_control(sys: MechanicalSystem, gains: Gains, st: State, cs: ControllerState,
                  *, det_tol: float = 1e-10, t: Optional[float] = None) -> Array:
    """Controller output of the implicit PID law.

    Solves ``K(q_u) u = -K_P y_d - K_I z1 - S(q, qd)``.  Feeding the result
    back makes the PID differential equation hold exactly, including the
    derivative term.  Raises :class:`WellPosednessError` when ``|det K|``
    falls below ``det_tol``.
    """
    out = passive_outputs(sys, st, gains)
    rhs = -(gains.K_P @ out.y_d) - gains.K_I @ cs.z1 - feedforward_S(sys, gains, st)
    K = wellposedness_matrix_K(sys, gains, st.q_u)
    det = float(np.linalg.det(K))
    if abs(det) < det_tol:
        raise WellPosednessError(st.q_u, det, t)
    return np.linalg.solve(K, rhs)


def approx_control(sys: MechanicalSystem, gains: Gains, st: State,
                   cs: ControllerState) -> tuple[Array, Array, Array]:
    """Explicit law with a filtered derivative estimate.

    Returns ``(u, z1_dot, z2_dot)`` where the derivative of ``y_d`` is
    approximated by ``filter_a * (y_d - z2)`` with ``z2' = filter_b *
    (y_d - z2)``; no matrix solve is involved.
    """
    out = passive_outputs(sys, st, gains)
    z2 = cs.z2 if cs.z2 is not None else np.zeros(sys.m)
    deriv = gains.filter_a * (out.y_d - z2)
    u = -(gains.K_P @ out.y_d + gains.K_I @ cs.z1 + gains.K_D @ deriv) / gains.k_e
    return u, out.y_d, gains.filter_b * (out.y_d - z2)


def pi_control(sys: MechanicalSystem, gains: Gains, st: State, cs: ControllerState) -> Array:
    """PI-only law (derivative gain ignored)."""
    out = passive_outputs(sys, st, gains)
    return -(gains.K_P @ out.y_d + gains.K_I @ cs.z1) / gains.k_e


def integrator_init(sys: MechanicalSystem, gains: Gains, q0: Array,
                    *, crit_tol: float = 1e-8) -> tuple[Array, Array]:
    """Integrator initialization that assigns the target equilibrium.

    Returns ``(z1_0, kappa)`` where

        z1_0  = k_a (q_a0 - q_a*) + (k_a - k_u) (V_N(q_u0) - V_N(q_u*))
        kappa = z1_0 - k_a q_a0 - (k_a - k_u) V_N(q_u0)

    so that the integrator is expressible as a position function with offset
    ``kappa`` for the whole run.  The target must be an assignable
    equilibrium, i.e. a critical point of the unactuated potential.
    """
    q0 = np.asarray(q0, dtype=float).reshape(sys.n)
    q_u0, q_a0 = q0[: sys.s], q0[sys.s:]
    grad = sys.gradVu(gains.q_u_star)
    if np.linalg.norm(grad) > crit_tol:
        raise ValueError(
            f"target q_u*={gains.q_u_star} is not a critical point of the "
            f"unactuated potential (|grad|={np.linalg.norm(grad):.3e})")
    vn0 = potential_integral_VN(sys, q_u0)
    vn_star = potential_integral_VN(sys, gains.q_u_star)
    z1_0 = gains.k_a * (q_a0 - gains.q_a_star) + (gains.k_a - gains.k_u) * (vn0 - vn_star)
    kappa = z1_0 - gains.k_a * q_a0 - (gains.k_a - gains.k_u) * vn0
    return z1_0, kappa


def robust_integrator_init(sys: MechanicalSystem, gains: Gains, q0: Array,
                           *, crit_tol: float = 1e-8) -> tuple[Array, Array]:
    """Integrator initialization for the no-cancellation mode.

    Without the actuated-potential cancellation, holding the plant at rest
    requires a constant force equal to the affine slope, which the integral
    term must supply.  Shifting the plain initialization by
    ``-k_e K_I^{-1} s_a`` makes the target an exact equilibrium again.
    """
    if sys.affine_Va is None:
        raise ValueError("robust initialization requires affine actuated-potential data")
    z1_0, kappa = integrator_init(sys, gains, q0, crit_tol=crit_tol)
    shift = -gains.k_e * np.linalg.solve(gains.K_I, sys.affine_Va[0])
    return z1_0 + shift, kappa + shift


def closed_form_z1(sys: MechanicalSystem, gains: Gains, st: State, kappa: Array) -> Array:
    """Integrator value as a position function:
    ``k_a q_a + (k_a - k_u) V_N(q_u) + kappa``."""
    kappa = np.asarray(kappa, dtype=float).reshape(sys.m)
    vn = potential_integral_VN(sys, st.q_u)
    return gains.k_a * st.q_a + (gains.k_a - gains.k_u) * vn + kappa


def plant_input(sys: MechanicalSystem, gains: Gains, u: Array, q_a: Array) -> Array:
    """Force applied to the plant for a given controller output.

    ``cancel_Va`` adds back the actuated potential gradient; ``robust_A8``
    passes the output through unchanged (and requires the affine potential
    data to be present, since that is what its storage analysis rests on).
    """
    u = np.asarray(u, dtype=float).reshape(sys.m)
    if gains.mode == "cancel_Va":
        return u + sys.gradVa(np.asarray(q_a, dtype=float))
    if sys.affine_Va is None:
        raise ValueError("robust_A8 mode requires affine actuated-potential data")
    return u.copy()
