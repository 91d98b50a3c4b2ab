"""Underactuated Euler-Lagrange plant models and their dynamics.

The plant class covered here has a constant input matrix that feeds forces
only into the last ``m`` generalized coordinates, an inertia matrix that
depends only on the unactuated coordinates ``q_u`` with a constant actuated
block ``m_aa``, and a potential energy that separates as
``V(q) = V_u(q_u) + V_a(q_a)``.  Coordinates are ordered unactuated first,
so ``q = [q_u; q_a]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


class DynamicsError(RuntimeError):
    """Raised when the plant equations cannot be evaluated."""


class SingularInertiaError(DynamicsError):
    """Raised when the inertia matrix fails to factor at a queried point."""

    def __init__(self, q_u: Array, detail: str = ""):
        self.q_u = np.asarray(q_u, dtype=float)
        msg = f"inertia matrix not positive definite at q_u={self.q_u}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


def _as_spd(mat, name: str) -> Array:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass(frozen=True)
class MechanicalSystem:
    """Definition of an underactuated mechanical plant.

    Instances are immutable and every operation on them is a pure function,
    so concurrent read access is safe.

    Parameters
    ----------
    s, m : int
        Number of unactuated and actuated degrees of freedom; the total is
        ``n = s + m``.
    muu_fn : callable
        ``q_u -> (s, s)`` symmetric unactuated inertia block.
    mau_fn : callable
        ``q_u -> (m, s)`` coupling inertia block.
    maa : array
        Constant symmetric positive definite ``(m, m)`` actuated block.
    Vu_fn, gradVu_fn : callable
        Unactuated potential ``q_u -> float`` and its gradient ``q_u -> (s,)``.
    Va_fn, gradVa_fn : callable
        Actuated potential ``q_a -> float`` and its gradient ``q_a -> (m,)``.
    muu_jac, mau_jac : callable, optional
        Analytic derivative tensors ``q_u -> (s, s, s)`` and
        ``q_u -> (m, s, s)`` with ``[i, j, k] = d block[i, j] / d q_u[k]``.
        When absent, fourth-order central differences are used; analytic
        callbacks are preferred because the Coriolis identities are sensitive
        to derivative error.
    affine_Va : (s_a, c0), optional
        Declares ``V_a(q_a) = s_a @ q_a + c0``; required by the controller
        mode that skips the actuated-potential cancellation.
    VN_fn : callable, optional
        Closed-form coupling potential ``q_u -> (m,)`` whose Jacobian is
        ``maa^{-1} m_au(q_u)``; computed by quadrature when absent.
    """

    s: int
    m: int
    muu_fn: Callable[[Array], Array]
    mau_fn: Callable[[Array], Array]
    maa: Array
    Vu_fn: Callable[[Array], float]
    gradVu_fn: Callable[[Array], Array]
    Va_fn: Callable[[Array], float]
    gradVa_fn: Callable[[Array], Array]
    muu_jac: Optional[Callable[[Array], Array]] = None
    mau_jac: Optional[Callable[[Array], Array]] = None
    affine_Va: Optional[tuple] = None
    VN_fn: Optional[Callable[[Array], Array]] = None
    name: str = "mechanical-system"
    maa_inv: Array = field(init=False, repr=False)

    def __post_init__(self):
        maa = _as_spd(self.maa, "maa")
        if maa.shape != (self.m, self.m):
            raise ValueError(f"maa must be {(self.m, self.m)}, got {maa.shape}")
        object.__setattr__(self, "maa", maa)
        object.__setattr__(self, "maa_inv", np.linalg.inv(maa))
        if self.affine_Va is not None:
            s_a, c0 = self.affine_Va
            s_a = np.asarray(s_a, dtype=float).reshape(self.m)
            object.__setattr__(self, "affine_Va", (s_a, float(c0)))

    @property
    def n(self) -> int:
        return self.s + self.m

    def muu(self, q_u: Array) -> Array:
        return np.atleast_2d(np.asarray(self.muu_fn(np.asarray(q_u, dtype=float)), dtype=float))

    def mau(self, q_u: Array) -> Array:
        out = np.asarray(self.mau_fn(np.asarray(q_u, dtype=float)), dtype=float)
        return out.reshape(self.m, self.s)

    def Vu(self, q_u: Array) -> float:
        return float(self.Vu_fn(np.asarray(q_u, dtype=float)))

    def gradVu(self, q_u: Array) -> Array:
        return np.asarray(self.gradVu_fn(np.asarray(q_u, dtype=float)), dtype=float).reshape(self.s)

    def Va(self, q_a: Array) -> float:
        return float(self.Va_fn(np.asarray(q_a, dtype=float)))

    def gradVa(self, q_a: Array) -> Array:
        return np.asarray(self.gradVa_fn(np.asarray(q_a, dtype=float)), dtype=float).reshape(self.m)


@dataclass(frozen=True)
class State:
    """Generalized position/velocity split into unactuated/actuated parts."""

    q_u: Array
    q_a: Array
    qd_u: Array
    qd_a: Array

    def __post_init__(self):
        for name in ("q_u", "q_a", "qd_u", "qd_a"):
            vec = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, vec)
        if self.q_u.shape != self.qd_u.shape or self.q_a.shape != self.qd_a.shape:
            raise ValueError("position/velocity dimensions do not match")

    @property
    def q(self) -> Array:
        return np.concatenate([self.q_u, self.q_a])

    @property
    def qd(self) -> Array:
        return np.concatenate([self.qd_u, self.qd_a])

    @classmethod
    def from_vectors(cls, q: Array, qd: Array, s: int) -> "State":
        q = np.asarray(q, dtype=float).reshape(-1)
        qd = np.asarray(qd, dtype=float).reshape(-1)
        return cls(q[:s], q[s:], qd[:s], qd[s:])


# ---------------------------------------------------------------------------
# Derivatives of the inertia blocks
# ---------------------------------------------------------------------------

def _fd_step(q_u: Array) -> float:
    return max(1e-6, 1e-7 * float(np.linalg.norm(q_u)))


def _block_jacobian_fd(fn: Callable[[Array], Array], q_u: Array, rows: int, cols: int) -> Array:
    """Fourth-order central-difference derivative tensor of a matrix map."""
    s = q_u.size
    h = _fd_step(q_u)
    out = np.empty((rows, cols, s))
    for k in range(s):
        e = np.zeros(s)
        e[k] = h
        f2p = np.asarray(fn(q_u + 2 * e), dtype=float).reshape(rows, cols)
        f1p = np.asarray(fn(q_u + e), dtype=float).reshape(rows, cols)
        f1m = np.asarray(fn(q_u - e), dtype=float).reshape(rows, cols)
        f2m = np.asarray(fn(q_u - 2 * e), dtype=float).reshape(rows, cols)
        out[:, :, k] = (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h)
    return out


def muu_gradient(sys: MechanicalSystem, q_u: Array) -> Array:
    """Derivative tensor ``d m_uu[i, j] / d q_u[k]`` of shape (s, s, s)."""
    if sys.muu_jac is not None:
        return np.asarray(sys.muu_jac(q_u), dtype=float).reshape(sys.s, sys.s, sys.s)
    return _block_jacobian_fd(sys.muu_fn, np.asarray(q_u, dtype=float), sys.s, sys.s)


def mau_gradient(sys: MechanicalSystem, q_u: Array) -> Array:
    """Derivative tensor ``d m_au[i, j] / d q_u[k]`` of shape (m, s, s)."""
    if sys.mau_jac is not None:
        return np.asarray(sys.mau_jac(q_u), dtype=float).reshape(sys.m, sys.s, sys.s)
    return _block_jacobian_fd(sys.mau_fn, np.asarray(q_u, dtype=float), sys.m, sys.s)


# ---------------------------------------------------------------------------
# Inertia assembly and Coriolis terms
# ---------------------------------------------------------------------------

def assemble_inertia(sys: MechanicalSystem, q_u: Array) -> Array:
    """Full inertia matrix ``[[m_uu, m_au^T], [m_au, m_aa]]`` at ``q_u``."""
    q_u = np.asarray(q_u, dtype=float).reshape(sys.s)
    muu = sys.muu(q_u)
    mau = sys.mau(q_u)
    M = np.empty((sys.n, sys.n))
    M[: sys.s, : sys.s] = 0.5 * (muu + muu.T)
    M[: sys.s, sys.s:] = mau.T
    M[sys.s:, : sys.s] = mau
    M[sys.s:, sys.s:] = sys.maa
    return M


def coriolis_decomposition(sys: MechanicalSystem, st: State):
    """Coriolis force split into its unactuated and actuated-row pieces.

    Returns ``(Cmu_qdu, Dmu, act_row)`` where ``Cmu_qdu + Dmu`` is the
    unactuated-row Coriolis force and ``act_row`` the actuated-row one.
    ``Dmu`` collects the velocity cross terms; it vanishes whenever
    ``qd_a = 0`` or ``qd = 0``.
    """
    dmuu = muu_gradient(sys, st.q_u)
    dmau = mau_gradient(sys, st.q_u)
    # Jacobian of q_u -> m_uu(q_u) qd_u, holding qd_u fixed
    j_uu = np.einsum("ijk,j->ik", dmuu, st.qd_u)
    cmu = j_uu - 0.5 * j_uu.T
    # Jacobians of q_u -> m_au^T qd_a and q_u -> m_au qd_u
    j_ua = np.einsum("jik,j->ik", dmau, st.qd_a)
    j_au = np.einsum("ijk,j->ik", dmau, st.qd_u)
    dmu = j_ua @ st.qd_u - j_au.T @ st.qd_a
    act_row = j_au @ st.qd_u
    return cmu @ st.qd_u, dmu, act_row


def christoffel_coriolis(sys: MechanicalSystem, st: State) -> Array:
    """Full Coriolis force from the kinetic-energy bracket identity.

    Evaluates ``[J - J^T / 2] qd`` where ``J`` is the Jacobian of
    ``q -> M(q_u) qd``; independent of :func:`coriolis_decomposition` so the
    two can cross-check each other.
    """
    dmuu = muu_gradient(sys, st.q_u)
    dmau = mau_gradient(sys, st.q_u)
    n, s = sys.n, sys.s
    dM = np.zeros((n, n, s))
    dM[:s, :s, :] = dmuu
    dM[s:, :s, :] = dmau
    dM[:s, s:, :] = np.transpose(dmau, (1, 0, 2))
    J = np.zeros((n, n))
    J[:, :s] = np.einsum("ijk,j->ik", dM, st.qd)
    return J @ st.qd - 0.5 * J.T @ st.qd


def potential_gradient(sys: MechanicalSystem, st: State) -> Array:
    return np.concatenate([sys.gradVu(st.q_u), sys.gradVa(st.q_a)])


def forward_dynamics(sys: MechanicalSystem, st: State, tau: Array) -> Array:
    """Accelerations of the open-loop plant under the applied force ``tau``."""
    tau = np.asarray(tau, dtype=float).reshape(sys.m)
    M = assemble_inertia(sys, st.q_u)
    cmu_qdu, dmu, act_row = coriolis_decomposition(sys, st)
    rhs = -potential_gradient(sys, st)
    rhs[: sys.s] -= cmu_qdu + dmu
    rhs[sys.s:] += tau - act_row
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise SingularInertiaError(st.q_u, str(exc)) from exc
    y = np.linalg.solve(L, rhs)
    return np.linalg.solve(L.T, y)


def reduced_unactuated_dynamics(sys: MechanicalSystem, st: State, u: Array) -> Array:
    """Unactuated accelerations after eliminating the actuated row.

    Solves the Schur-complement form of the dynamics driven by the
    post-cancellation input ``u`` (the force left after the actuated
    potential gradient has been compensated).
    """
    u = np.asarray(u, dtype=float).reshape(sys.m)
    mau = sys.mau(st.q_u)
    muu = sys.muu(st.q_u)
    muu_s = muu - mau.T @ sys.maa_inv @ mau
    cmu_qdu, dmu, act_row = coriolis_decomposition(sys, st)
    rhs = mau.T @ (sys.maa_inv @ (act_row - u)) - (cmu_qdu + dmu + sys.gradVu(st.q_u))
    try:
        return np.linalg.solve(muu_s, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularInertiaError(st.q_u, "singular Schur complement") from exc
