"""Structural assumption checks and stability certificates.

Numerics cannot certify the global statements behind the controller design,
so every sampled or gridded check reports ``sampled-pass`` rather than
``pass`` and carries its worst-case witness.  The shaped kinetic/potential
pair assembled here doubles as the Lyapunov function of the closed loop; its
defining identities are exact and are exercised by the test suite at random
states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mechanics import Array, MechanicalSystem, State, assemble_inertia
from .passivity import (coupling_row_asymmetry, potential_integral_VN,
                        schur_unactuated, storage_functions,
                        velocity_outputs)
from .controller import Gains, wellposedness_matrix_K

STATUS_PASS = "pass"
STATUS_FAIL = "fail"
STATUS_SAMPLED = "sampled-pass"
STATUS_NA = "not-applicable"

ASSUMPTION_NAMES = {
    "A1": "constant input matrix [0; I]",
    "A2": "inertia depends only on unactuated coordinates",
    "A3": "constant actuated inertia block",
    "A4": "separable potential, unactuated part bounded below",
    "A5": "well-posedness matrix nonsingular (gain-dependent)",
    "A6": "coupling-block rows are gradient fields",
    "A7": "shaped inertia positive definite, shaped potential has a minimum",
    "A8": "actuated potential affine",
    "A9": "strong inertial coupling, injective unactuated potential gradient",
}


@dataclass
class AssumptionCheck:
    status: str
    residual: Optional[float] = None
    witness: Optional[Array] = None
    note: str = ""


@dataclass
class AssumptionReport:
    checks: dict = field(default_factory=dict)
    seed: int = 0
    n_samples: int = 0

    @property
    def passed(self) -> bool:
        return all(c.status != STATUS_FAIL for c in self.checks.values())

    def to_text(self) -> str:
        lines = [f"assumption checks ({self.n_samples} samples, seed {self.seed})"]
        for key in sorted(self.checks):
            c = self.checks[key]
            line = f"  {key} [{c.status:>12}]  {ASSUMPTION_NAMES[key]}"
            if c.residual is not None:
                line += f"  worst={c.residual:.3e}"
            if c.witness is not None:
                line += f"  witness={np.array2string(np.atleast_1d(c.witness), precision=4)}"
            if c.note:
                line += f"  ({c.note})"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        out = {"seed": self.seed, "n_samples": self.n_samples, "passed": self.passed}
        for key, c in self.checks.items():
            out[key] = {
                "status": c.status,
                "name": ASSUMPTION_NAMES[key],
                "residual": None if c.residual is None else float(c.residual),
                "witness": None if c.witness is None else np.atleast_1d(c.witness).tolist(),
                "note": c.note,
            }
        return out


def check_assumptions(sys: MechanicalSystem, sample_box, n_samples: int = 400,
                      seed: int = 0) -> AssumptionReport:
    """Verify the structural plant assumptions on a sampling box.

    ``sample_box`` is an ``(n, 2)`` array of per-coordinate bounds, ordered
    unactuated first.  Structural facts guaranteed by the plant container
    (constant input matrix, inertia depending only on ``q_u``, constant
    actuated block, separable potential) report ``pass``; everything that is
    sampled reports at best ``sampled-pass``.  Failures are reported with a
    witness point, never raised.
    """
    box = np.asarray(sample_box, dtype=float).reshape(sys.n, 2)
    rng = np.random.default_rng(seed)
    qu_samples = rng.uniform(box[: sys.s, 0], box[: sys.s, 1], size=(n_samples, sys.s))
    qa_samples = rng.uniform(box[sys.s:, 0], box[sys.s:, 1], size=(n_samples, sys.m))

    report = AssumptionReport(seed=seed, n_samples=n_samples)
    structural = "structural: guaranteed by the plant container"
    report.checks["A1"] = AssumptionCheck(STATUS_PASS, note=structural)
    report.checks["A2"] = AssumptionCheck(STATUS_PASS, note=structural)
    report.checks["A3"] = AssumptionCheck(STATUS_PASS, note=structural)

    vu = np.array([sys.Vu(q) for q in qu_samples])
    k = int(np.argmin(vu))
    report.checks["A4"] = AssumptionCheck(
        STATUS_SAMPLED, residual=float(vu[k]), witness=qu_samples[k],
        note="separability structural; sampled minimum of the unactuated potential shown")

    report.checks["A5"] = AssumptionCheck(
        STATUS_NA, note="gain-dependent; use scan_A5 with a gain set")
    report.checks["A7"] = AssumptionCheck(
        STATUS_NA, note="gain-dependent; use check_A7 with a gain set")

    # A6: symmetry of the coupling-row Jacobians
    asym = np.array([coupling_row_asymmetry(sys, q) for q in qu_samples])
    k = int(np.argmax(asym))
    if asym[k] <= 1e-6:
        report.checks["A6"] = AssumptionCheck(STATUS_SAMPLED, residual=float(asym[k]),
                                              witness=qu_samples[k])
    else:
        report.checks["A6"] = AssumptionCheck(STATUS_FAIL, residual=float(asym[k]),
                                              witness=qu_samples[k])

    # A8: declared affine actuated potential matches the callable
    if sys.affine_Va is None:
        report.checks["A8"] = AssumptionCheck(STATUS_NA, note="no affine data declared")
    else:
        s_a, c0 = sys.affine_Va
        resid = np.array([abs(sys.Va(q) - float(s_a @ q) - c0) for q in qa_samples])
        k = int(np.argmax(resid))
        status = STATUS_SAMPLED if resid[k] <= 1e-9 else STATUS_FAIL
        report.checks["A8"] = AssumptionCheck(status, residual=float(resid[k]),
                                              witness=qa_samples[k])

    # A9: smallest singular value of the coupling block, plus an injectivity
    # screen on the unactuated potential gradient
    sigmas = np.array([np.linalg.svd(sys.mau(q), compute_uv=False).min()
                       for q in qu_samples])
    k = int(np.argmin(sigmas))
    if sigmas.max() < 1e-9:
        report.checks["A9"] = AssumptionCheck(
            STATUS_FAIL, residual=float(sigmas.max()), witness=qu_samples[k],
            note=f"rank of the coupling block below {sys.s} at every sample")
    else:
        grads = np.array([sys.gradVu(q) for q in qu_samples])
        note = f"worst coupling singular value {sigmas[k]:.3e}"
        status = STATUS_SAMPLED
        witness = qu_samples[k]
        resid = float(sigmas[k])
        for i in range(n_samples):
            dq = np.linalg.norm(qu_samples[i + 1:] - qu_samples[i], axis=1)
            dg = np.linalg.norm(grads[i + 1:] - grads[i], axis=1)
            bad = (dq > 1e-6) & (dg < 1e-9)
            if np.any(bad):
                j = i + 1 + int(np.nonzero(bad)[0][0])
                status = STATUS_FAIL
                witness = np.stack([qu_samples[i], qu_samples[j]])
                note = "gradient of the unactuated potential collides at two samples"
                break
        report.checks["A9"] = AssumptionCheck(status, residual=resid,
                                              witness=witness, note=note)
    return report


def scan_A5(sys: MechanicalSystem, gains: Gains, q_u_grid, *, det_tol: float = 1e-10) -> dict:
    """Determinant of the well-posedness matrix over a grid of ``q_u``.

    Reports the minimum magnitude, its location, and whether the determinant
    changes sign between neighbouring grid points (which implies a
    singularity inside the scanned range).
    """
    grid = np.atleast_2d(np.asarray(q_u_grid, dtype=float).reshape(-1, sys.s))
    dets = np.array([np.linalg.det(wellposedness_matrix_K(sys, gains, q)) for q in grid])
    k = int(np.argmin(np.abs(dets)))
    crossing = bool(np.any(np.sign(dets[:-1]) * np.sign(dets[1:]) < 0))
    ok = (not crossing) and abs(dets[k]) > det_tol
    return {"pass": ok, "min_abs_det": float(np.abs(dets[k])), "witness": grid[k],
            "sign_change": crossing, "dets": dets}


# ---------------------------------------------------------------------------
# Shaped energy (closed-loop Lyapunov data)
# ---------------------------------------------------------------------------

def desired_inertia_Md(sys: MechanicalSystem, gains: Gains, q_u: Array) -> Array:
    """Shaped inertia matrix of the closed loop.

    Its quadratic form reproduces the gain-weighted kinetic storage plus the
    derivative-term square, which is the identity the tests pin down.
    """
    k_e, k_a, k_u = gains.k_e, gains.k_a, gains.k_u
    K_D = gains.K_D
    mau = sys.mau(q_u)
    muu_s = schur_unactuated(sys, q_u)
    maa_inv = sys.maa_inv
    coup = mau.T @ maa_inv @ mau
    A = k_e * k_u * muu_s + k_e * k_a * coup \
        + (k_a - k_u) ** 2 * mau.T @ maa_inv @ K_D @ maa_inv @ mau
    off = k_e * k_a * mau.T + k_a * (k_a - k_u) * mau.T @ maa_inv @ K_D
    Md = np.block([[0.5 * (A + A.T), off],
                   [off.T, k_e * k_a * sys.maa + k_a ** 2 * K_D]])
    return Md


def desired_potential_Vd(sys: MechanicalSystem, gains: Gains, q: Array) -> float:
    """Shaped potential with its critical point at the target position."""
    q = np.asarray(q, dtype=float).reshape(sys.n)
    q_u, q_a = q[: sys.s], q[sys.s:]
    vn = potential_integral_VN(sys, q_u)
    vn_star = potential_integral_VN(sys, gains.q_u_star)
    v = gains.k_a * (q_a - gains.q_a_star) + (gains.k_a - gains.k_u) * (vn - vn_star)
    return gains.k_e * gains.k_u * sys.Vu(q_u) + 0.5 * float(v @ (gains.K_I @ v))


@dataclass(frozen=True)
class LyapunovData:
    """Evaluators for the shaped energy and its integrator-sided twin."""

    sys: MechanicalSystem
    gains: Gains
    vn_star: Array

    def M_d(self, q_u: Array) -> Array:
        return desired_inertia_Md(self.sys, self.gains, q_u)

    def V_d(self, q: Array) -> float:
        return desired_potential_Vd(self.sys, self.gains, q)

    def H_d_parts(self, q_u: Array, q_a: Array, qd: Array, vn: Optional[Array] = None) -> float:
        g = self.gains
        if vn is None:
            vn = potential_integral_VN(self.sys, q_u)
        v = g.k_a * (q_a - g.q_a_star) + (g.k_a - g.k_u) * (vn - self.vn_star)
        Vd = g.k_e * g.k_u * self.sys.Vu(q_u) + 0.5 * float(v @ (g.K_I @ v))
        Md = desired_inertia_Md(self.sys, g, q_u)
        return 0.5 * float(qd @ (Md @ qd)) + Vd

    def H_d(self, st: State) -> float:
        return self.H_d_parts(st.q_u, st.q_a, st.qd)

    def U(self, st: State, z1: Array) -> float:
        g = self.gains
        z1 = np.asarray(z1, dtype=float).reshape(self.sys.m)
        H_u, H_a, _ = storage_functions(self.sys, st)
        y_u, y_a = velocity_outputs(self.sys, st)
        y_d = g.k_a * y_a + g.k_u * y_u
        return g.k_e * (g.k_a * H_a + g.k_u * H_u) \
            + 0.5 * float(y_d @ (g.K_D @ y_d)) + 0.5 * float(z1 @ (g.K_I @ z1))


def lyapunov_Hd_and_U(sys: MechanicalSystem, gains: Gains) -> LyapunovData:
    """Build the shaped-energy evaluators for a gain set.

    ``U`` (storage plus integrator square, a function of the state and the
    integrator) coincides with ``H_d`` once the integrator is replaced by its
    position-function value; the two are computed through different paths so
    the coincidence is a real check.
    """
    return LyapunovData(sys=sys, gains=gains,
                        vn_star=potential_integral_VN(sys, gains.q_u_star))


# ---------------------------------------------------------------------------
# Finite differences for the shaped-potential certificates
# ---------------------------------------------------------------------------

def fd_gradient(fn: Callable[[Array], float], x: Array, h: float = 1e-5) -> Array:
    """Fourth-order central-difference gradient."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        out[k] = (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)
    return out


def fd_hessian(fn: Callable[[Array], float], x: Array, h: float = 1e-5) -> Array:
    """Hessian from fourth-order differences of the gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        col = (-fd_gradient(fn, x + 2 * e, h) + 8 * fd_gradient(fn, x + e, h)
               - 8 * fd_gradient(fn, x - e, h) + fd_gradient(fn, x - 2 * e, h)) / (12 * h)
        H[:, k] = col
    return 0.5 * (H + H.T)


@dataclass
class A7Result:
    passed: bool
    min_eig_profile: Array
    grid: Array
    grad_norm: float
    hessian: Array
    hessian_eigs: Array
    note: str = ("grid-local certificate: positive definiteness is checked at the "
                 "grid points and at the target only, not globally")


def check_A7(sys: MechanicalSystem, gains: Gains, q_u_grid, *, grad_tol: float = 1e-6) -> A7Result:
    """Gain admissibility: shaped inertia positive definite on the grid and
    shaped potential with a verified isolated minimum at the target."""
    grid = np.atleast_2d(np.asarray(q_u_grid, dtype=float).reshape(-1, sys.s))
    profile = np.array([np.linalg.eigvalsh(desired_inertia_Md(sys, gains, q)).min()
                        for q in grid])
    Vd = lambda q: desired_potential_Vd(sys, gains, q)
    grad = fd_gradient(Vd, gains.q_star)
    hess = fd_hessian(Vd, gains.q_star)
    hess_eigs = np.linalg.eigvalsh(hess)
    passed = bool(profile.min() > 0.0 and np.linalg.norm(grad) <= grad_tol
                  and hess_eigs.min() > 0.0)
    return A7Result(passed=passed, min_eig_profile=profile, grid=grid,
                    grad_norm=float(np.linalg.norm(grad)), hessian=hess,
                    hessian_eigs=hess_eigs)


def assignable_equilibria_residual(sys: MechanicalSystem, q_u: Array) -> Array:
    """Gradient of the unactuated potential; zero exactly on the assignable
    equilibrium set."""
    return sys.gradVu(q_u)


# ---------------------------------------------------------------------------
# Linear systems: closed-loop polynomial matrix and Hurwitz test
# ---------------------------------------------------------------------------

@dataclass
class LinearClosedLoop:
    M: Array
    S_u: Array
    m0: Array
    coeff_s2: Array
    coeff_s1: Array
    coeff_s0: Array
    det_coeffs: Array  # ascending powers
    roots: Array
    max_real: float
    hurwitz: bool


class NonLinearSystemError(ValueError):
    """The plant is not linear, so the polynomial closed-loop form does not
    apply."""


def _extract_linear_data(sys: MechanicalSystem, tol: float = 1e-9, seed: int = 3):
    rng = np.random.default_rng(seed)
    zero = np.zeros(sys.s)
    M0 = assemble_inertia(sys, zero)
    for _ in range(5):
        q = rng.uniform(-1.0, 1.0, sys.s)
        if np.max(np.abs(assemble_inertia(sys, q) - M0)) > tol * max(1.0, np.abs(M0).max()):
            raise NonLinearSystemError("inertia matrix is not constant")
    g0 = sys.gradVu(zero)
    if np.linalg.norm(g0) > tol:
        raise NonLinearSystemError("unactuated potential gradient nonzero at the origin")
    S_u = np.column_stack([sys.gradVu(e) for e in np.eye(sys.s)])
    for _ in range(5):
        q = rng.uniform(-1.0, 1.0, sys.s)
        if np.linalg.norm(sys.gradVu(q) - S_u @ q) > tol * max(1.0, np.abs(S_u).max()):
            raise NonLinearSystemError("unactuated potential is not quadratic")
    return M0, 0.5 * (S_u + S_u.T)


def linear_closed_loop(sys: MechanicalSystem, gains: Gains) -> LinearClosedLoop:
    """Quadratic polynomial matrix of the linear closed loop and its
    stability verdict.

    The loop is asymptotically stable exactly when the determinant of
    ``C2 s^2 + C1 s + C0`` is a Hurwitz polynomial.  The determinant is
    recovered by evaluation at ``2n + 1`` points and interpolation, and its
    roots come from the companion matrix of that scalar polynomial.
    """
    M, S_u = _extract_linear_data(sys)
    s, m, n = sys.s, sys.m, sys.n
    muu = M[:s, :s]
    mau = M[s:, :s]
    k_e, k_a, k_u = gains.k_e, gains.k_a, gains.k_u
    m0 = (k_a - k_u) * sys.maa_inv @ mau

    C2 = np.zeros((n, n))
    C2[:s, :s] = muu
    C2[:s, s:] = mau.T
    C2[s:, :s] = mau + gains.K_D @ m0 / k_e
    C2[s:, s:] = sys.maa + k_a * gains.K_D / k_e
    C1 = np.zeros((n, n))
    C1[s:, :s] = gains.K_P @ m0 / k_e
    C1[s:, s:] = k_a * gains.K_P / k_e
    C0 = np.zeros((n, n))
    C0[:s, :s] = S_u
    C0[s:, :s] = gains.K_I @ m0 / k_e
    C0[s:, s:] = k_a * gains.K_I / k_e

    deg = 2 * n
    scale = max(1.0, np.abs(C1).max() / max(np.abs(C2).max(), 1e-12),
                np.sqrt(np.abs(C0).max() / max(np.abs(C2).max(), 1e-12)))
    nodes = scale * np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
    vals = np.array([np.linalg.det(C2 * x * x + C1 * x + C0) for x in nodes])
    V = np.vander(nodes, deg + 1, increasing=True)
    coeffs = np.linalg.solve(V, vals)  # ascending

    lead = np.abs(coeffs).max()
    trimmed = np.array(coeffs, dtype=float)
    while trimmed.size > 1 and abs(trimmed[-1]) < 1e-12 * lead:
        trimmed = trimmed[:-1]
    roots = np.roots(trimmed[::-1]) if trimmed.size > 1 else np.array([])
    max_real = float(roots.real.max()) if roots.size else -np.inf
    return LinearClosedLoop(
        M=M, S_u=S_u, m0=m0, coeff_s2=C2, coeff_s1=C1, coeff_s0=C0,
        det_coeffs=coeffs, roots=roots, max_real=max_real,
        hurwitz=bool(max_real < -1e-8))


def companion_roots_of_pencil(C2: Array, C1: Array, C0: Array) -> Array:
    """Eigenvalues of the block linearization of the quadratic matrix
    polynomial; an independent route to the closed-loop poles."""
    n = C2.shape[0]
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -np.linalg.solve(C2, C0)
    A[n:, n:] = -np.linalg.solve(C2, C1)
    return np.linalg.eigvals(A)
