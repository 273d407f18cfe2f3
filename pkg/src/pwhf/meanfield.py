"""Assembly and diagonalization of the mean-field operator fibers.

(H_gamma)_xi = -(1/2) Lap_xi  - Z G + rho_gamma * G  - exchange(gamma; xi)

in the fiber plane-wave basis: a kinetic diagonal, a local-potential
block from the density coefficients, and the nonlocal exchange block.
The assembled operator is the exact derivative of the discrete energy:
d/dt E(gamma + t*delta)|_0 = sum_xi w_xi tr[(H_gamma)_xi delta_xi].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import TransferTables, local_potential_block, transfer_kernel_w
from .errors import InvalidParameterError, NumericalFailureError
from .kernels import SingularCorrection
from .state import DensityCoeffs, PeriodicState, density_from_state

HERMITICITY_TOL = 1e-12


@dataclass
class FockOperator:
    """Assembled fibers with their tagged components for diagnostics."""

    grid: list
    bases: list
    fibers: list[np.ndarray]
    parts: list[dict[str, np.ndarray]] = field(repr=False, default=None)
    mode: str = "hf"

    def exchange_norms(self) -> np.ndarray:
        """Operator norm of the exchange block per fiber."""
        return np.array(
            [np.linalg.norm(p["exchange"], 2) if p["exchange"].size else 0.0 for p in self.parts]
        )


def exchange_block(
    state: PeriodicState,
    fiber_index: int,
    correction: SingularCorrection,
    tables: TransferTables,
) -> np.ndarray:
    """Exchange block on fiber xi, entry (K, K'):

        sum_{xi'} w_xi' sum_P gamma_xi'(P, P + K' - K) V((xi+K) - (xi'+P)),

    assembled group by group over reciprocal shifts: within the shift
    dm (matched lists M_i[I] = M_j[J] + dm) the whole submatrix
    conj(gamma_xi'[J, J]) lands on [I, I] with one kernel value.
    """
    i = fiber_index
    B = state.bases[i].size
    xi_i = state.grid[i].xi
    F = np.zeros((B, B), dtype=complex)
    for j, (kp, fiber) in enumerate(zip(state.grid, state.fibers)):
        if not np.any(np.abs(fiber) > 1e-16):
            continue
        uniq, groups = tables.pair(i, j)
        V = transfer_kernel_w(xi_i, kp.xi, uniq, correction.v0)
        for t, (I, J) in enumerate(groups):
            F[np.ix_(I, I)] += (kp.weight * V[t]) * fiber[np.ix_(J, J)].conj()
    return F.T


def assemble_fock(
    state: PeriodicState,
    Z: float,
    h: float,
    correction: SingularCorrection,
    mode: str = "hf",
    sigma: float | None = None,
    tables: TransferTables | None = None,
    rho: DensityCoeffs | None = None,
) -> FockOperator:
    """Build (H_gamma)_xi for every fiber; mode="reduced" zeroes the exchange."""
    if mode not in ("hf", "reduced"):
        raise InvalidParameterError(f"mode must be 'hf' or 'reduced', got {mode!r}")
    if Z < 0.0:
        raise InvalidParameterError(f"nuclear charge must be nonnegative, got {Z}")
    if rho is None:
        rho = density_from_state(state)
    tables = tables if tables is not None else TransferTables(state.bases)
    fibers, parts = [], []
    for i, basis in enumerate(state.bases):
        kin = np.diag(basis.kinetic).astype(complex)
        loc = local_potential_block(basis, rho, Z, h, sigma)
        if mode == "hf":
            xb = exchange_block(state, i, correction, tables)
        else:
            xb = np.zeros_like(kin)
        H = kin + loc - xb
        defect = float(np.max(np.abs(H - H.conj().T))) if H.size else 0.0
        if defect > HERMITICITY_TOL:
            raise NumericalFailureError(
                f"assembled fiber {i} is not Hermitian (defect {defect:.3e})"
            )
        fibers.append(H)
        parts.append({"kinetic": kin, "local": loc, "exchange": xb})
    return FockOperator(state.grid, state.bases, fibers, parts, mode)


@dataclass
class SpectrumTable:
    """Per-fiber eigendecompositions, eigenvalues ascending."""

    grid: list
    bases: list
    eigenvalues: list[np.ndarray]
    eigenvectors: list[np.ndarray]

    @property
    def nk(self) -> int:
        return len(self.grid)


def diagonalize(fock: FockOperator) -> SpectrumTable:
    """Full eigendecomposition of every fiber.

    Verifies the reconstruction residual ||H - U L U*|| <= 1e-10 ||H||
    per fiber and raises NumericalFailureError with the fiber index
    otherwise.
    """
    evals, evecs = [], []
    for i, H in enumerate(fock.fibers):
        try:
            lam, U = np.linalg.eigh(H)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailureError(f"eigensolver failed on fiber {i}: {exc}") from exc
        resid = np.linalg.norm(H - (U * lam) @ U.conj().T)
        scale = max(np.linalg.norm(H), 1.0)
        if resid > 1e-10 * scale:
            raise NumericalFailureError(
                f"eigendecomposition residual {resid:.3e} too large on fiber {i}"
            )
        evals.append(lam)
        evecs.append(U)
    return SpectrumTable(fock.grid, fock.bases, evals, evecs)


def fock_trace(fock: FockOperator, delta: PeriodicState) -> float:
    """sum_xi w_xi Re tr[(H)_xi delta_xi] — the first-order energy change."""
    total = 0.0
    for kp, H, d in zip(fock.grid, fock.fibers, delta.fibers):
        total += kp.weight * float(np.real(np.sum(H * d.T)))
    return total


def commutator_residual(fock: FockOperator, state: PeriodicState) -> float:
    """max_xi ||[H_xi, gamma_xi]||_2 — the self-consistency residual."""
    worst = 0.0
    for H, g in zip(fock.fibers, state.fibers):
        C = H @ g - g @ H
        if C.size:
            worst = max(worst, float(np.linalg.norm(C, 2)))
    return worst
