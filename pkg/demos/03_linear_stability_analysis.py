"""Closed-loop pole analysis for linear plants.

For a constant-inertia plant with block-diagonal stiffness the closed loop
is a quadratic matrix polynomial in the Laplace variable; asymptotic
stability is equivalent to its determinant being Hurwitz.  The script builds
the polynomial, finds the poles two independent ways, and confirms the
predicted decay rate in simulation.
"""

import numpy as np

from pidpbc import (Gains, companion_roots_of_pencil, linear_closed_loop,
                    pinned_linear_2dof, simulate)

plant = pinned_linear_2dof()
print("inertia:\n", np.array([[2.0, 1.0], [1.0, 1.0]]))
print("unactuated stiffness: 1.0\n")

print("== a gain set that is NOT stabilizing ==")
g_bad = Gains(k_e=1.0, k_a=1.0, k_u=-1.0, K_P=4.0, K_I=2.0, K_D=1.0,
              q_u_star=[0.0], q_a_star=[0.0])
lcl = linear_closed_loop(plant, g_bad)
print("determinant polynomial (ascending):", np.round(lcl.det_coeffs, 10))
print("poles:", np.round(lcl.roots, 4))
print("Hurwitz:", lcl.hurwitz)

print("\n== a stabilizing gain set ==")
g = Gains(k_e=2.0, k_a=0.75, k_u=0.25, K_P=2.0, K_I=1.5, K_D=0.3,
          q_u_star=[0.0], q_a_star=[0.0])
lcl = linear_closed_loop(plant, g)
print("poles:", np.round(lcl.roots, 4))
print("Hurwitz:", lcl.hurwitz, " slowest real part:", round(lcl.max_real, 4))

oracle = companion_roots_of_pencil(lcl.coeff_s2, lcl.coeff_s1, lcl.coeff_s0)
print("pole gap between determinant route and block-pencil route:",
      f"{max(np.abs(np.sort_complex(oracle) - np.sort_complex(lcl.roots))):.2e}")

T = round(20.0 / abs(lcl.max_real) / 5e-3) * 5e-3
trace = simulate(plant, g, [0.4, -0.3], [0.0, 0.0], t_end=T, dt=5e-3)
qn = np.linalg.norm(np.hstack([trace.q_u, trace.q_a]), axis=1)
half = trace.n_samples // 2
A = np.vstack([trace.t[half:], np.ones(trace.n_samples - half)]).T
slope = np.linalg.lstsq(A, np.log(qn[half:]), rcond=None)[0][0]
print(f"\nsimulated over {T:.0f}s: fitted decay rate {slope:.4f} "
      f"vs slowest pole {lcl.max_real:.4f}")
print(f"final position error: {qn[-1]:.2e}")
