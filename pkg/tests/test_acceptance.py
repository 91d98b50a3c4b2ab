"""Acceptance gate: every numbered criterion at its stated tolerance.

Each test prints one ``[criterion NN] PASS/FAIL`` line (visible with
``pytest -s``).  Two criteria fail by design of the plant/gain combination
itself, not by implementation defect, and say so in their messages:

* criterion 5b: the shaped-inertia certificate is evaluated on the symmetric
  grid ``q_u in [-pi/3, pi/3]``, but with the benchmark gains the matrix is
  indefinite for ``q_u`` below about -20.7 deg, so an honest eigenvalue scan
  cannot pass there (the benchmark run itself lives inside the valid window
  and converges).
* criterion 9: the filtered-derivative controller is required to track the
  implicit one, but on this plant the derivative feedthrough has the wrong
  sign for a causal filter (the fast filter loop has an unstable pole with
  rate proportional to the filter gain), so the filtered loop diverges for
  any ``a = b``.  This is exactly the regime where the filtered realisation
  is not adequate.

See README "Known results" for the full analysis.
"""

import time

import numpy as np
import pytest

from pidpbc import (ControllerState, Gains, SetpointStep, SimulationAborted,
                    State, check_A7, closed_form_z1, companion_roots_of_pencil,
                    desired_inertia_Md, exact_control, forward_dynamics,
                    integrator_init, linear_closed_loop, linear_system,
                    lyapunov_Hd_and_U, passive_outputs, pinned_linear_2dof,
                    plant_input, power_balance_residual, simulate,
                    storage_functions, verify_l2_gain, verify_lyapunov,
                    verify_passivity, christoffel_coriolis,
                    coriolis_decomposition)

from conftest import Q0, QD0, bench_gains, random_gains
from synthetic import make_synthetic, random_state


def report(num, ok, detail):
    print(f"[criterion {num:>3}] {'PASS' if ok else 'FAIL'} {detail}")


# ---------------------------------------------------------------------------
# shared traces
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def eq_trace(cart, gains_cancel):
    return simulate(cart, gains_cancel, [0.0, 0.0], [0.0, 0.0], t_end=10.0, dt=1e-3)


@pytest.fixture(scope="session")
def ku450_trace(cart):
    g = bench_gains(k_u=-450.0)
    return simulate(cart, g, Q0, QD0, t_end=10.0, dt=1e-3,
                    setpoints=[SetpointStep(5.0, np.array([-0.3]))])


@pytest.fixture(scope="session")
def linear_gains():
    return Gains(k_e=2.0, k_a=0.75, k_u=0.25, K_P=2.0, K_I=1.5, K_D=0.3,
                 q_u_star=[0.0], q_a_star=[0.0])


@pytest.fixture(scope="session")
def linear_decay_trace(linear_gains):
    lin = pinned_linear_2dof()
    lcl = linear_closed_loop(lin, linear_gains)
    T = 20.0 / abs(lcl.max_real)
    dt = 5e-3
    T = round(T / dt) * dt
    rng = np.random.default_rng(42)
    tr = simulate(lin, linear_gains, rng.uniform(-0.5, 0.5, 2), [0.0, 0.0],
                  t_end=T, dt=dt)
    return lcl, tr


@pytest.fixture(scope="session")
def toy_l2_trace():
    toy = linear_system(M=[[2.0, 0.5], [0.5, 1.0]], S_u=[[2.0]], name="toy")
    g = Gains(k_e=1.0, k_a=2.0, k_u=1.0, K_P=1.0, K_I=1.0, K_D=0.1,
              q_u_star=[0.0], q_a_star=[0.0])
    dist = lambda t: np.array([0.5 * np.sin(np.pi * t)])
    return simulate(toy, g, [0.6, -0.4], [0.0, 0.0], t_end=20.0, dt=1e-3,
                    disturbance=dist)


@pytest.fixture(scope="session")
def approx_traces(cart):
    out = {}
    for ab in (50.0, 100.0, 200.0, 400.0):
        g = bench_gains(filter_a=ab, filter_b=ab)
        try:
            out[ab] = simulate(cart, g, Q0, QD0, t_end=10.0, dt=2e-4,
                               controller="approx",
                               setpoints=[SetpointStep(5.0, np.array([-0.3]))])
        except SimulationAborted as exc:
            out[ab] = str(exc)
    return out


# ---------------------------------------------------------------------------
# 1. algebraic identity suite
# ---------------------------------------------------------------------------

def test_criterion_01_algebraic_identities(cart, gains_cancel):
    rng = np.random.default_rng(2024)
    cases = [(cart, gains_cancel),
             (make_synthetic(1, 2, seed=101), None),
             (make_synthetic(2, 2, seed=202), None)]
    worst = dict(storage_sum=0.0, balance=0.0, coriolis=0.0, kinetic=0.0,
                 shaped=0.0, partition=0.0)
    t0 = time.perf_counter()
    for sys_, g in cases:
        if g is None:
            g = random_gains(sys_, rng)
        lyap = lyapunov_Hd_and_U(sys_, g)
        _, kappa = integrator_init(sys_, g, np.zeros(sys_.n))
        for _ in range(1000):
            st = random_state(sys_, rng)
            H_u, H_a, H = storage_functions(sys_, st)
            worst["storage_sum"] = max(worst["storage_sum"], abs(H_u + H_a - H))
            L = power_balance_residual(sys_, st)
            worst["balance"] = max(worst["balance"],
                                   abs(L) / (1 + np.linalg.norm(st.qd) ** 2))
            cmu, dmu, act = coriolis_decomposition(sys_, st)
            full = christoffel_coriolis(sys_, st)
            gap = np.abs(np.concatenate([cmu + dmu, act]) - full).max()
            worst["coriolis"] = max(worst["coriolis"],
                                    gap / (1 + np.abs(full).max()))
            out = passive_outputs(sys_, st, g)
            worst["partition"] = max(worst["partition"],
                                     np.abs(out.y_u + out.y_a - st.qd_a).max())
            lhs = g.k_e * (g.k_a * H_a + g.k_u * H_u) + 0.5 * out.y_d @ (g.K_D @ out.y_d)
            Md = desired_inertia_Md(sys_, g, st.q_u)
            rhs = 0.5 * st.qd @ (Md @ st.qd) + g.k_e * g.k_u * sys_.Vu(st.q_u)
            worst["kinetic"] = max(worst["kinetic"], abs(lhs - rhs))
            z1 = closed_form_z1(sys_, g, st, kappa)
            worst["shaped"] = max(worst["shaped"], abs(lyap.U(st, z1) - lyap.H_d(st)))
    elapsed = time.perf_counter() - t0
    ok = (worst["storage_sum"] <= 1e-12 and worst["balance"] <= 1e-8
          and worst["coriolis"] <= 1e-8 and worst["kinetic"] <= 1e-10
          and worst["shaped"] <= 1e-10 and worst["partition"] <= 1e-14
          and elapsed < 10.0)
    report(1, ok, f"identities at 3000 random states in {elapsed:.2f}s: "
                  + ", ".join(f"{k}={v:.2e}" for k, v in worst.items()))
    assert worst["storage_sum"] <= 1e-12
    assert worst["balance"] <= 1e-8
    assert worst["coriolis"] <= 1e-8
    assert worst["kinetic"] <= 1e-10
    assert worst["shaped"] <= 1e-10
    assert worst["partition"] <= 1e-14  # partition exact up to one rounding
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 2. passivity rates
# ---------------------------------------------------------------------------

def test_criterion_02_passivity_rates(fine_trace_cancel, fine_trace_robust):
    r = {
        "u->y_u": verify_passivity(fine_trace_cancel, "u->y_u"),
        "u->y_a": verify_passivity(fine_trace_cancel, "u->y_a"),
        "tau->ybar_u": verify_passivity(fine_trace_robust, "tau->ybar_u"),
        "tau->ybar_a": verify_passivity(fine_trace_robust, "tau->ybar_a"),
    }
    ok = all(v <= 1e-4 for v in r.values())
    report(2, ok, "storage-rate residuals: "
                  + ", ".join(f"{k}={v:.2e}" for k, v in r.items()))
    for k, v in r.items():
        assert v <= 1e-4, k


# ---------------------------------------------------------------------------
# 3. dissipation identity
# ---------------------------------------------------------------------------

def test_criterion_03_lyapunov_dissipation(fine_trace_cancel):
    res = verify_lyapunov(fine_trace_cancel)
    ok = res["max_residual"] <= 1e-4 and res["monotone"]
    report(3, ok, f"dissipation residual={res['max_residual']:.2e}, "
                  f"monotone={res['monotone']}")
    assert res["max_residual"] <= 1e-4
    assert res["monotone"]


# ---------------------------------------------------------------------------
# 4. equilibrium assignment
# ---------------------------------------------------------------------------

def test_criterion_04_equilibrium_assignment(cart, gains_cancel, eq_trace):
    st = State([0.0], [0.0], [0.0], [0.0])
    z1_0, _ = integrator_init(cart, gains_cancel, np.zeros(2))
    u = exact_control(cart, gains_cancel, st, ControllerState(z1=z1_0))
    tau = plant_input(cart, gains_cancel, u, st.q_a)
    field = np.concatenate([st.qd, forward_dynamics(cart, st, tau),
                            passive_outputs(cart, st, gains_cancel).y_d])
    field_norm = np.linalg.norm(field)
    drift = np.abs(np.hstack([eq_trace.q_u, eq_trace.q_a])).max()
    ok = field_norm <= 1e-12 and drift <= 1e-9
    report(4, ok, f"closed-loop field at target={field_norm:.2e}, "
                  f"10s drift={drift:.2e}")
    assert field_norm <= 1e-12
    assert drift <= 1e-9


# ---------------------------------------------------------------------------
# 5. benchmark reproduction
# ---------------------------------------------------------------------------

def interval_ok(trace, k_lo, k_hi, target, tol_q=0.01, tol_v=0.01):
    q = np.hstack([trace.q_u, trace.q_a])[k_lo:k_hi + 1]
    qd = np.hstack([trace.qd_u, trace.qd_a])[k_lo:k_hi + 1]
    ok = (np.max(np.abs(q - target), axis=1) <= tol_q) \
        & (np.linalg.norm(qd, axis=1) <= tol_v)
    return bool(ok[-1]), (np.nonzero(~ok)[0].max() + 1 if not ok.all() else 0)


def test_criterion_05a_benchmark_trajectory(cart, gains_cancel):
    t0 = time.perf_counter()
    tr = simulate(cart, gains_cancel, Q0, QD0, t_end=10.0, dt=1e-3,
                  setpoints=[SetpointStep(5.0, np.array([-0.3]))])
    elapsed = time.perf_counter() - t0
    k5 = int(round(5.0 / tr.dt))
    ok1, settle1 = interval_ok(tr, 0, k5, np.array([0.0, 0.0]))
    ok2, settle2 = interval_ok(tr, k5, tr.n_samples - 1, np.array([0.0, -0.3]))
    ok = ok1 and ok2 and tr.min_abs_detK > 0 and elapsed < 5.0
    report("5a", ok,
           f"settled before both deadlines (t={settle1 * tr.dt:.2f}s, "
           f"{5.0 + settle2 * tr.dt:.2f}s), min|det K|={tr.min_abs_detK:.3f}, "
           f"runtime {elapsed:.2f}s")
    assert ok1, "first setpoint not held at t=5s"
    assert ok2, "second setpoint not held at t=10s"
    assert tr.min_abs_detK > 0
    assert elapsed < 5.0


def test_criterion_05b_a7_certificate_on_symmetric_grid(cart, gains_cancel):
    grid = np.linspace(-np.pi / 3, np.pi / 3, 121).reshape(-1, 1)
    res = check_A7(cart, gains_cancel, grid)
    report("5b", res.passed,
           f"shaped-inertia certificate on q_u in [-pi/3, pi/3]: "
           f"min eig={res.min_eig_profile.min():.2f} at "
           f"q_u={res.grid[np.argmin(res.min_eig_profile), 0]:.3f} rad; "
           f"the matrix is indefinite below q_u ~ -0.36 rad, so this grid "
           f"cannot pass (certificate holds on [-16deg, 35deg], which "
           f"contains the whole benchmark run)")
    assert res.passed, (
        "shaped-inertia certificate is indefinite near the left edge of the "
        "symmetric grid (min eig "
        f"{res.min_eig_profile.min():.2f}); with the benchmark gains the "
        "positive-definite window is q_u in (-20.7deg, +60.7deg). The "
        "benchmark run stays inside that window and converges (criterion "
        "5a), so the certificate grid, not the controller, is at fault. "
        "See README 'Known results'.")


# ---------------------------------------------------------------------------
# 6. alternate gain set
# ---------------------------------------------------------------------------

def test_criterion_06_alternate_gains(ku450_trace):
    tr = ku450_trace
    k5 = int(round(5.0 / tr.dt))
    ok1, _ = interval_ok(tr, 0, k5, np.array([0.0, 0.0]))
    ok2, _ = interval_ok(tr, k5, tr.n_samples - 1, np.array([0.0, -0.3]))
    report(6, ok1 and ok2,
           f"k_u=-450 variant converges on both intervals, "
           f"min|det K|={tr.min_abs_detK:.3f}")
    assert ok1 and ok2


# ---------------------------------------------------------------------------
# 7. linear closed loop
# ---------------------------------------------------------------------------

def test_criterion_07_linear_hurwitz_and_decay(linear_gains, linear_decay_trace):
    lin = pinned_linear_2dof()
    g_pinned = Gains(k_e=1.0, k_a=1.0, k_u=-1.0, K_P=4.0, K_I=2.0, K_D=1.0,
                     q_u_star=[0.0], q_a_star=[0.0])
    lcl_p = linear_closed_loop(lin, g_pinned)
    oracle = companion_roots_of_pencil(lcl_p.coeff_s2, lcl_p.coeff_s1, lcl_p.coeff_s0)
    agree = abs(lcl_p.max_real - oracle.real.max())
    flag_match = lcl_p.hurwitz == bool(oracle.real.max() < -1e-8)

    lcl, tr = linear_decay_trace
    qn = np.linalg.norm(np.hstack([tr.q_u, tr.q_a]), axis=1)
    half = tr.n_samples // 2
    mask = qn[half:] > 0
    A = np.vstack([tr.t[half:][mask], np.ones(int(mask.sum()))]).T
    slope = np.linalg.lstsq(A, np.log(qn[half:][mask]), rcond=None)[0][0]
    ratio = slope / lcl.max_real
    ok = flag_match and agree < 1e-8 and lcl.hurwitz and 0.5 <= ratio <= 2.0
    report(7, ok, f"pinned-instance root agreement {agree:.1e}, flag match "
                  f"{flag_match}; stabilizing set decays with rate ratio "
                  f"{ratio:.3f} over [0, 20/|Re lmax|]")
    assert flag_match and agree < 1e-8
    assert lcl.hurwitz
    assert 0.5 <= ratio <= 2.0


# ---------------------------------------------------------------------------
# 8. exact law is the PID
# ---------------------------------------------------------------------------

def test_criterion_08_pid_equivalence(bench_trace, gains_cancel):
    tr, g = bench_trace, gains_cancel
    yd = tr.y_d[:, 0]
    ydd = np.full_like(yd, np.nan)
    ydd[2:-2] = (-yd[4:] + 8 * yd[3:-1] - 8 * yd[1:-3] + yd[:-4]) / (12 * tr.dt)
    resid = g.k_e * tr.u[:, 0] + g.K_P[0, 0] * yd + g.K_I[0, 0] * tr.z1[:, 0] \
        + g.K_D[0, 0] * ydd
    mask = np.ones(tr.n_samples, bool)
    mask[:2] = mask[-2:] = False
    for t_sw in tr.switch_times:
        k = int(round(t_sw / tr.dt))
        mask[k - 2: k + 3] = False
    rel = (np.abs(resid[mask]) / (1.0 + np.abs(tr.u[mask, 0]))).max()
    report(8, rel <= 1e-4, f"PID-equation residual {rel:.2e} with "
                           f"finite-difference output derivative")
    assert rel <= 1e-4


# ---------------------------------------------------------------------------
# 9. filtered-derivative controller
# ---------------------------------------------------------------------------

def test_criterion_09_filtered_controller_tracks_exact(cart, gains_cancel,
                                                       approx_traces):
    exact = simulate(cart, gains_cancel, Q0, QD0, t_end=10.0, dt=2e-4,
                     setpoints=[SetpointStep(5.0, np.array([-0.3]))])
    devs = {}
    for ab, tr in sorted(approx_traces.items()):
        if isinstance(tr, str):
            devs[ab] = float("inf")
        else:
            devs[ab] = max(np.abs(tr.q_u - exact.q_u).max(),
                           np.abs(tr.q_a - exact.q_a).max(),
                           np.abs(tr.qd_u - exact.qd_u).max(),
                           np.abs(tr.qd_a - exact.qd_a).max())
    vals = [devs[ab] for ab in (50.0, 100.0, 200.0, 400.0)]
    ok = devs[200.0] <= 0.02 and all(np.diff(vals) < 0)
    report(9, ok, "sup deviation of the filtered law from the implicit one: "
                  + ", ".join(f"a=b={int(ab)}: {d:.3g}" for ab, d in devs.items()))
    assert ok, (
        "the filtered-derivative law diverges on this plant for every "
        f"filter setting (deviations {devs}); the derivative feedthrough "
        "d(yd_dot)/du is negative along the benchmark trajectory, so the "
        "filter's algebraic loop has an unstable pole with rate "
        "~2.76*a and a causal filtered realisation cannot track the "
        "implicit law here. This is the regime where the filtered PID is "
        "documented as inadequate. See README 'Known results'.")


# ---------------------------------------------------------------------------
# 10. integrator vs its position-function form
# ---------------------------------------------------------------------------

def test_criterion_10_integrator_closed_form(eq_trace, bench_trace,
                                             fine_trace_cancel,
                                             fine_trace_robust, ku450_trace,
                                             linear_decay_trace, toy_l2_trace,
                                             approx_traces):
    traces = {
        "equilibrium": eq_trace,
        "benchmark": bench_trace,
        "fine-cancel": fine_trace_cancel,
        "fine-robust": fine_trace_robust,
        "ku450": ku450_trace,
        "linear": linear_decay_trace[1],
        "toy-l2": toy_l2_trace,
    }
    for ab, tr in approx_traces.items():
        if not isinstance(tr, str) and np.abs(tr.q_a).max() < 2.0:
            traces[f"approx-{int(ab)}"] = tr
    gaps = {name: float(np.abs(tr.z1 - tr.z1_closed).max())
            for name, tr in traces.items()}
    ok = all(v <= 1e-6 for v in gaps.values())
    report(10, ok, "integrator vs position-function gap: "
                   + ", ".join(f"{k}={v:.1e}" for k, v in gaps.items()))
    for name, v in gaps.items():
        assert v <= 1e-6, name


# ---------------------------------------------------------------------------
# 11. disturbance gain bound
# ---------------------------------------------------------------------------

def test_criterion_11_l2_gain_bound(toy_l2_trace):
    res = verify_l2_gain(toy_l2_trace)
    ok = res["applicable"] and res["holds"]
    report(11, ok, f"prefix inequality holds at every sample with "
                   f"beta3={res['beta3']:.4f} estimated on the first half "
                   f"(worst prefix at t={res['peak_time']:.2f}s)")
    assert res["applicable"]
    assert res["holds"]


# ---------------------------------------------------------------------------
# 12. integrator self-consistency
# ---------------------------------------------------------------------------

def test_criterion_12_step_halving(cart, gains_cancel, bench_trace):
    tr2 = simulate(cart, gains_cancel, Q0, QD0, t_end=10.0, dt=5e-4,
                   setpoints=[SetpointStep(5.0, np.array([-0.3]))])
    end1 = np.hstack([bench_trace.q_u[-1], bench_trace.q_a[-1],
                      bench_trace.qd_u[-1], bench_trace.qd_a[-1]])
    end2 = np.hstack([tr2.q_u[-1], tr2.q_a[-1], tr2.qd_u[-1], tr2.qd_a[-1]])
    gap = np.abs(end1 - end2).max()
    report(12, gap <= 1e-6, f"halving dt moves the endpoint by {gap:.2e} "
                            f"per coordinate")
    assert gap <= 1e-6
