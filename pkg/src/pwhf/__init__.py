"""Plane-wave periodic Hartree-Fock for a simple cubic crystal.

Minimizes the periodic Hartree-Fock energy over Bloch-decomposed
density matrices and checks the structural properties of the
minimizers: projector fixed points, an all-or-nothing Fermi shell, and
the exchange/direct/kinetic inequalities.
"""

from .energy import (
    EnergyBreakdown,
    TransferTables,
    coulomb_bilinear,
    exchange_energy,
    exchange_energy_G,
    external_energy,
    total_energy,
)
from .errors import (
    CapacityError,
    IntegrationError,
    InvalidParameterError,
    NumericalFailureError,
    ProbeNotApplicableError,
    SingularArgumentError,
    TruncationError,
)
from .kernels import (
    GreenKernel,
    SingularCorrection,
    compute_h,
    green_fourier,
    singular_average,
    w_eval,
)
from .lattice import KPoint, PlaneWaveBasis, build_basis, build_bases, build_kgrid
from .meanfield import (
    FockOperator,
    SpectrumTable,
    assemble_fock,
    commutator_residual,
    diagonalize,
    fock_trace,
)
from .scf import (
    FermiShell,
    ScfConfig,
    ScfReport,
    aufbau_fill,
    counting_function,
    oda_step,
    run_scf,
)
from .state import (
    DensityCoeffs,
    PeriodicState,
    check_admissible,
    density_from_state,
    electron_count,
    kinetic_energy,
    lincomb,
    load_state,
    save_state,
    state_from_orbitals,
    zero_state,
)
from .verify import (
    InequalityReport,
    OracleResult,
    ProbeResult,
    ShellReport,
    brute_force_oracle,
    charge_transfer_probe,
    fermi_shell_report,
    inequality_suite,
    make_mixed_shell_state,
    projector_residual,
    relaxed_minimum,
)

__version__ = "0.1.0"
