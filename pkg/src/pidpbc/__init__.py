"""PID passivity-based control of underactuated mechanical systems.

The package models Euler-Lagrange plants whose inertia depends only on the
unactuated coordinates, builds the pair of passive outputs obtained by
splitting the kinetic energy through a Schur complement, wraps a PID around
their weighted sum, and verifies the resulting storage, dissipation, and
equilibrium-assignment identities numerically, both at random states and
along simulated trajectories.
"""

from .mechanics import (
    MechanicalSystem,
    State,
    DynamicsError,
    SingularInertiaError,
    assemble_inertia,
    coriolis_decomposition,
    christoffel_coriolis,
    forward_dynamics,
    reduced_unactuated_dynamics,
)
from .passivity import (
    PassiveOutputs,
    IntegrabilityError,
    schur_unactuated,
    locked_matrix_Ma,
    passive_outputs,
    storage_functions,
    potential_integral_VN,
    robust_storage,
    hamiltonian_outputs,
    power_balance_residual,
)
from .controller import (
    Gains,
    ControllerState,
    GainSignWarning,
    WellPosednessError,
    wellposedness_matrix_K,
    feedforward_S,
    exact_control,
    approx_control,
    pi_control,
    integrator_init,
    robust_integrator_init,
    closed_form_z1,
    plant_input,
)
from .analysis import (
    AssumptionReport,
    check_assumptions,
    scan_A5,
    check_A7,
    desired_inertia_Md,
    desired_potential_Vd,
    lyapunov_Hd_and_U,
    linear_closed_loop,
    companion_roots_of_pencil,
    assignable_equilibria_residual,
)
from .sim import (
    Trace,
    SetpointStep,
    SimulationAborted,
    simulate,
    simulate_open_loop,
    verify_passivity,
    verify_lyapunov,
    verify_l2_gain,
    detect_convergence,
    tail_residuals,
    write_trace_csv,
    write_column_map,
    read_trace_csv,
)
from .systems import cart_pendulum_incline, linear_system, pinned_linear_2dof

__version__ = "0.1.0"
