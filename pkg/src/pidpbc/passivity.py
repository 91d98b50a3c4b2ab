"""Passive outputs and storage functions for the underactuated plant class.

Splitting the unactuated kinetic-energy block through the Schur complement
of the constant actuated block yields two outputs whose weighted sum the PID
is wrapped around.  Both are passive with respect to the post-cancellation
input; a second pair of storage functions covers the mode that keeps the
affine actuated potential in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mechanics import (
    Array,
    MechanicalSystem,
    State,
    assemble_inertia,
    coriolis_decomposition,
    mau_gradient,
    muu_gradient,
)


@dataclass(frozen=True)
class PassiveOutputs:
    """The two passive outputs and their gain-weighted combination."""

    y_u: Array
    y_a: Array
    y_d: Array


def schur_unactuated(sys: MechanicalSystem, q_u: Array) -> Array:
    """Schur complement ``m_uu - m_au^T maa^{-1} m_au``; the effective
    unactuated inertia."""
    mau = sys.mau(q_u)
    out = sys.muu(q_u) - mau.T @ sys.maa_inv @ mau
    return 0.5 * (out + out.T)


def locked_matrix_Ma(sys: MechanicalSystem, q_u: Array) -> Array:
    """Rank-m inertia remainder; the full inertia minus the Schur block."""
    mau = sys.mau(q_u)
    top = mau.T @ sys.maa_inv @ mau
    out = np.block([[0.5 * (top + top.T), mau.T], [mau, sys.maa]])
    return out


def velocity_outputs(sys: MechanicalSystem, st: State) -> tuple[Array, Array]:
    """The raw output pair ``(y_u, y_a)``; they sum to ``qd_a`` exactly."""
    y_u = -sys.maa_inv @ (sys.mau(st.q_u) @ st.qd_u)
    return y_u, st.qd_a - y_u


def passive_outputs(sys: MechanicalSystem, st: State, gains) -> PassiveOutputs:
    y_u, y_a = velocity_outputs(sys, st)
    return PassiveOutputs(y_u=y_u, y_a=y_a, y_d=gains.k_a * y_a + gains.k_u * y_u)


def storage_functions(sys: MechanicalSystem, st: State) -> tuple[float, float, float]:
    """Storage pair ``(H_u, H_a)`` and total energy ``H``; ``H_u + H_a = H``.

    ``H`` is evaluated from the assembled inertia matrix, independently of
    the split, so the sum rule is a genuine cross-check.
    """
    H_u = 0.5 * st.qd_u @ (schur_unactuated(sys, st.q_u) @ st.qd_u) + sys.Vu(st.q_u)
    H_a = 0.5 * st.qd @ (locked_matrix_Ma(sys, st.q_u) @ st.qd)
    H = 0.5 * st.qd @ (assemble_inertia(sys, st.q_u) @ st.qd) + sys.Vu(st.q_u)
    return H_u, H_a, H


def hamiltonian_outputs(sys: MechanicalSystem, st: State) -> tuple[Array, Array]:
    """Momentum-side output pair ``(maa y_u, qd_a)``; the second component is
    the row sum of the velocity pair, which collapses to the actuated
    velocity identically."""
    y_u, _ = velocity_outputs(sys, st)
    return sys.maa @ y_u, st.qd_a.copy()


class IntegrabilityError(ValueError):
    """The coupling block rows are not gradient fields, so no coupling
    potential exists."""


def coupling_row_asymmetry(sys: MechanicalSystem, q_u: Array) -> float:
    """Worst asymmetry of the coupling-row Jacobians at ``q_u``.

    Zero (up to derivative error) exactly when every row of ``m_au`` is a
    gradient field, which is what makes the coupling potential well defined.
    """
    dmau = mau_gradient(sys, np.asarray(q_u, dtype=float))
    return float(np.max(np.abs(dmau - np.transpose(dmau, (0, 2, 1)))))


def potential_integral_VN(sys: MechanicalSystem, q_u: Array, *, tol: float = 1e-10,
                          check_tol: float = 1e-6) -> Array:
    """Coupling potential with Jacobian ``maa^{-1} m_au(q_u)``.

    Uses the closed form when the system carries one; otherwise integrates
    the field along the straight path from the origin with Gauss-Legendre
    panels, doubling the panel count until two successive estimates agree to
    ``tol``.  The quadrature normalization fixes the value at the origin to
    zero; only differences of this potential enter the controller, so the
    offset is immaterial.
    """
    q_u = np.asarray(q_u, dtype=float).reshape(sys.s)
    if sys.VN_fn is not None:
        return np.asarray(sys.VN_fn(q_u), dtype=float).reshape(sys.m)
    asym = coupling_row_asymmetry(sys, q_u)
    if asym > check_tol:
        raise IntegrabilityError(
            f"coupling rows are not gradient fields at q_u={q_u} "
            f"(asymmetry {asym:.3e}); the coupling potential does not exist")

    nodes, weights = np.polynomial.legendre.leggauss(64)

    def estimate(panels: int) -> Array:
        total = np.zeros(sys.m)
        for p in range(panels):
            a, b = p / panels, (p + 1) / panels
            tt = 0.5 * (b - a) * nodes + 0.5 * (a + b)
            ww = 0.5 * (b - a) * weights
            for t, w in zip(tt, ww):
                total += w * (sys.maa_inv @ (sys.mau(t * q_u) @ q_u))
        return total

    prev = estimate(1)
    panels = 2
    while panels <= 64:
        cur = estimate(panels)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
        panels *= 2
    return prev


def holding_potential_V0(sys: MechanicalSystem, q_u: Array) -> float:
    """State-function form of the coupled supply from the affine actuated
    potential: ``s_a @ V_N(q_u) + c0``.

    Its rate along trajectories is ``-s_a @ y_u``, which is exactly the term
    that must be moved between the two storage functions for the raw-force
    input to supply both of them.
    """
    if sys.affine_Va is None:
        raise ValueError("holding potential requires affine actuated potential data")
    s_a, c0 = sys.affine_Va
    return float(s_a @ potential_integral_VN(sys, q_u) + c0)


def robust_storage(sys: MechanicalSystem, st: State) -> tuple[float, float]:
    """Storage pair for the loop that keeps the affine actuated potential.

    The pair sums to ``H + V_a(q_a)`` and is passive with respect to the raw
    force input rather than the post-cancellation one.
    """
    H_u, H_a, _ = storage_functions(sys, st)
    V0 = holding_potential_V0(sys, st.q_u)
    return H_u - V0, H_a + sys.Va(st.q_a) + V0


def power_balance_residual(sys: MechanicalSystem, st: State) -> float:
    """Residual of the internal power-balance identity of the output split.

    The rate of the unactuated storage equals the supplied power plus this
    scalar, which vanishes identically for the plant class; evaluating it is
    a direct check on the Coriolis decomposition and the Schur-complement
    rate.
    """
    mau = sys.mau(st.q_u)
    dmuu = muu_gradient(sys, st.q_u)
    dmau = mau_gradient(sys, st.q_u)
    j_uu = np.einsum("ijk,j->ik", dmuu, st.qd_u)
    cmu = j_uu - 0.5 * j_uu.T
    j_au = np.einsum("ijk,j->ik", dmau, st.qd_u)
    _, dmu, _ = coriolis_decomposition(sys, st)
    # rate of the Schur complement along qd_u
    muu_dot = np.einsum("ijk,k->ij", dmuu, st.qd_u)
    mau_dot = np.einsum("ijk,k->ij", dmau, st.qd_u)
    schur_dot = muu_dot - mau_dot.T @ sys.maa_inv @ mau - mau.T @ sys.maa_inv @ mau_dot
    bracket = schur_dot + 2.0 * mau.T @ sys.maa_inv @ j_au - 2.0 * cmu
    return float(0.5 * st.qd_u @ (bracket @ st.qd_u) - st.qd_u @ dmu)
