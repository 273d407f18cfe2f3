"""Self-consistent field loop: aufbau filling plus optimal damping.

Along the segment gamma + t*(gamma' - gamma) the discrete energy is an
exact quadratic

    E(t) = E(0) + t*s + (t^2/2)*c,
    s = sum_xi w_xi tr[(H_gamma)_xi (gamma' - gamma)_xi],
    c = D(rho_delta, rho_delta) - X(delta, delta),

so the optimal step is closed form and every iteration is
energy-nonincreasing.  The aufbau candidate shares the charge left at
the Fermi level equally among near-degenerate states; when that
fractional shell survives at a stationary point of the damped
iteration, an integer-greedy refill of the shell is offered as an
alternative candidate.  Moving charge within the shell has zero slope,
and the regularized self-exchange makes the curvature negative, so the
alternative strictly lowers the energy whenever the equal-sharing
stationary point is not a minimizer; it is accepted only in that case.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import (
    EnergyBreakdown,
    TransferTables,
    coulomb_bilinear,
    exchange_energy,
    total_energy,
)
from .errors import CapacityError, InvalidParameterError
from .kernels import SingularCorrection, compute_h, singular_average
from .lattice import build_bases, build_kgrid
from .meanfield import (
    FockOperator,
    SpectrumTable,
    assemble_fock,
    commutator_residual,
    diagonalize,
    fock_trace,
)
from .state import (
    PeriodicState,
    density_from_state,
    lincomb,
    state_from_orbitals,
    zero_state,
)


@dataclass
class ScfConfig:
    Z: float
    ecut: float
    ngrid: int
    mode: str = "hf"
    nuclei: str = "point"
    sigma: float = 0.1
    max_iter: int = 200
    tol_residual: float = 1e-9
    tol_energy: float = 1e-11
    damping: str = "oda"
    damping_t: float = 0.5
    degeneracy_tol: float = 1e-7
    seed: int = 0

    def validate(self):
        if self.Z <= 0.0:
            raise InvalidParameterError(f"Z must be positive, got {self.Z}")
        if self.ecut <= 0.0:
            raise InvalidParameterError(f"ecut must be positive, got {self.ecut}")
        if not isinstance(self.ngrid, (int, np.integer)) or self.ngrid < 1:
            raise InvalidParameterError(f"ngrid must be a positive integer, got {self.ngrid}")
        if self.mode not in ("hf", "reduced"):
            raise InvalidParameterError(f"mode must be 'hf' or 'reduced', got {self.mode!r}")
        if self.nuclei not in ("point", "smeared"):
            raise InvalidParameterError(f"nuclei must be 'point' or 'smeared', got {self.nuclei!r}")
        if self.nuclei == "smeared" and self.sigma <= 0.0:
            raise InvalidParameterError(f"smearing width must be positive, got {self.sigma}")
        if self.max_iter < 1:
            raise InvalidParameterError("max_iter must be at least 1")
        if self.tol_residual <= 0.0 or self.tol_energy <= 0.0 or self.degeneracy_tol <= 0.0:
            raise InvalidParameterError("tolerances must be positive")
        if self.damping not in ("oda", "fixed"):
            raise InvalidParameterError(f"damping must be 'oda' or 'fixed', got {self.damping!r}")
        if self.damping == "fixed" and not 0.0 < self.damping_t <= 1.0:
            raise InvalidParameterError(f"fixed damping needs t in (0, 1], got {self.damping_t}")

    @property
    def effective_sigma(self) -> float | None:
        return self.sigma if self.nuclei == "smeared" else None

    @property
    def integer_filling(self) -> bool:
        """Whether Z*ngrid^3 electrons fill discrete states without a
        fractional Fermi shell being forced by counting alone."""
        total = self.Z * self.ngrid**3
        return abs(total - round(total)) <= 1e-9


def counting_function(spectrum: SpectrumTable, kappa: float) -> float:
    """C(kappa) = sum_xi w_xi #{k : lambda_k(xi) <= kappa}; nondecreasing
    and right-continuous in kappa."""
    total = 0.0
    for kp, lam in zip(spectrum.grid, spectrum.eigenvalues):
        total += kp.weight * int(np.count_nonzero(lam <= kappa))
    return total


@dataclass
class FermiShell:
    mu_raw: float
    fraction: float
    members: list[tuple[int, int]]  # (k index, band index)
    weight: float
    note: str = ""

    @property
    def empty(self) -> bool:
        return not self.members

    @property
    def fractional(self) -> bool:
        return bool(self.members) and 1e-12 < self.fraction < 1.0 - 1e-12


def _flatten(spectrum: SpectrumTable):
    lam = np.concatenate(spectrum.eigenvalues)
    w = np.concatenate(
        [np.full(len(ev), kp.weight) for kp, ev in zip(spectrum.grid, spectrum.eigenvalues)]
    )
    ki = np.concatenate(
        [np.full(len(ev), n, dtype=int) for n, ev in enumerate(spectrum.eigenvalues)]
    )
    band = np.concatenate([np.arange(len(ev)) for ev in spectrum.eigenvalues])
    return lam, w, ki, band


def aufbau_fill(
    spectrum: SpectrumTable, Z: float, degeneracy_tol: float
) -> tuple[float, PeriodicState, FermiShell]:
    """Fill eigenstates in ascending order until the charge reaches Z.

    States below the crossing level get occupation 1, states above get
    0, and states inside the window [mu_raw +- degeneracy_tol] share the
    leftover charge equally.  The returned mu sits mid-gap when the
    filling is complete and gapped (the shell is then empty), and at the
    crossing eigenvalue otherwise.
    """
    lam, w, ki, band = _flatten(spectrum)
    total_capacity = float(np.sum(w))
    if Z > total_capacity + 1e-9:
        raise CapacityError(
            f"basis holds {total_capacity} electrons per cell, cannot reach Z = {Z}"
        )
    order = np.lexsort((band, ki, lam))
    cum = np.cumsum(w[order])
    cross = int(np.searchsorted(cum, Z - 1e-12))
    cross = min(cross, len(cum) - 1)
    mu_raw = float(lam[order[cross]])

    shell_mask = np.abs(lam - mu_raw) <= degeneracy_tol
    below_mask = lam < mu_raw - degeneracy_tol
    below_w = float(np.sum(w[below_mask]))
    shell_w = float(np.sum(w[shell_mask]))
    remaining = Z - below_w
    fraction = float(np.clip(remaining / shell_w, 0.0, 1.0)) if shell_w > 0 else 0.0

    occ = np.where(below_mask, 1.0, 0.0)
    occ[shell_mask] = fraction

    members = [(int(a), int(b)) for a, b in zip(ki[shell_mask], band[shell_mask])]
    shell = FermiShell(mu_raw, fraction, members, shell_w)

    above = lam[lam > mu_raw + degeneracy_tol]
    if fraction >= 1.0 - 1e-12:
        if above.size and float(np.min(above)) - mu_raw > 2.0 * degeneracy_tol:
            mu = 0.5 * (mu_raw + float(np.min(above)))
            shell.note = "filling complete and gapped; mu placed mid-gap"
        else:
            mu = mu_raw
    else:
        mu = mu_raw

    state = _state_from_flat_occ(spectrum, occ, ki)
    return mu, state, shell


def greedy_fill(
    spectrum: SpectrumTable, Z: float, degeneracy_tol: float
) -> tuple[float, PeriodicState, FermiShell]:
    """Like aufbau_fill but the shell charge is concentrated: shell
    states are filled to 1 in (k index, band) order until the charge is
    exhausted.  Used as an escape candidate off equal-sharing
    stationary points; the tie-break is deterministic."""
    lam, w, ki, band = _flatten(spectrum)
    order = np.lexsort((band, ki, lam))
    cum = np.cumsum(w[order])
    if Z > cum[-1] + 1e-9:
        raise CapacityError(f"basis cannot reach Z = {Z}")
    cross = min(int(np.searchsorted(cum, Z - 1e-12)), len(cum) - 1)
    mu_raw = float(lam[order[cross]])

    shell_mask = np.abs(lam - mu_raw) <= degeneracy_tol
    below_mask = lam < mu_raw - degeneracy_tol
    occ = np.where(below_mask, 1.0, 0.0)
    remaining = Z - float(np.sum(w[below_mask]))

    shell_idx = np.flatnonzero(shell_mask)
    shell_order = shell_idx[np.lexsort((band[shell_idx], ki[shell_idx]))]
    for idx in shell_order:
        if remaining <= 1e-14:
            break
        take = min(1.0, remaining / w[idx])
        occ[idx] = take
        remaining -= take * w[idx]

    members = [(int(a), int(b)) for a, b in zip(ki[shell_mask], band[shell_mask])]
    shell = FermiShell(mu_raw, 1.0, members, float(np.sum(w[shell_mask])), note="greedy")
    state = _state_from_flat_occ(spectrum, occ, ki)
    return mu_raw, state, shell


def _state_from_flat_occ(spectrum: SpectrumTable, occ: np.ndarray, ki: np.ndarray) -> PeriodicState:
    per_k = [occ[ki == n] for n in range(spectrum.nk)]
    return state_from_orbitals(spectrum.grid, spectrum.bases, spectrum.eigenvectors, per_k)


@dataclass
class OdaInfo:
    slope: float
    curvature: float
    t_star: float
    stalled: bool


def oda_step(
    current: PeriodicState,
    candidate: PeriodicState,
    fock: FockOperator,
    h: float,
    correction: SingularCorrection,
    mode: str = "hf",
    tables: TransferTables | None = None,
) -> tuple[PeriodicState, float, OdaInfo]:
    """Optimal damping along the segment toward the candidate.

    t* = 1 when the curvature is nonpositive or the quadratic minimum
    lies beyond the segment, else t* = -s/c clamped to [0, 1].  A
    positive slope means the candidate is not a descent direction; the
    step is refused (t* = 0) and flagged.
    """
    delta = lincomb(1.0, candidate, -1.0, current)
    scale = max((float(np.max(np.abs(f))) if f.size else 0.0) for f in delta.fibers) if delta.fibers else 0.0
    if scale < 1e-15:
        return candidate, 1.0, OdaInfo(0.0, 0.0, 1.0, False)
    s = fock_trace(fock, delta)
    rho_d = density_from_state(delta)
    c = coulomb_bilinear(rho_d, rho_d, h)
    if mode == "hf":
        c -= exchange_energy(delta, delta, correction, tables=tables)
    # slopes below the roundoff floor are zero, not ascent directions
    if s > 1e-13:
        return current.copy(), 0.0, OdaInfo(s, c, 0.0, True)
    if c <= 0.0 or -s / c >= 1.0:
        t = 1.0
    elif abs(s) + 0.5 * abs(c) <= 1e-13:
        # the model change over the whole segment is at the roundoff
        # floor: take the refill so the fixed-point contraction finishes
        t = 1.0
    else:
        t = float(np.clip(-s / c, 0.0, 1.0))
    return lincomb(1.0, current, t, delta), t, OdaInfo(s, c, t, False)


@dataclass
class ScfReport:
    config: ScfConfig
    energy: EnergyBreakdown
    mu: float
    epsilon_flag: str
    shell_note: str
    iterations: int
    residual_trace: list[tuple[int, float, float]]
    converged: bool
    spectrum: SpectrumTable
    occupations: list[np.ndarray]
    final_state: PeriodicState
    h: float
    v0: float
    charge_trace: list[float] = field(default_factory=list)


def _final_occupations(state: PeriodicState, spectrum: SpectrumTable) -> list[np.ndarray]:
    occs = []
    for g, U in zip(state.fibers, spectrum.eigenvectors):
        occs.append(np.real(np.einsum("ij,ij->j", U.conj(), g @ U)))
    return occs


def run_scf(config: ScfConfig) -> ScfReport:
    """Iterate assemble -> diagonalize -> fill -> damp to self-consistency.

    Deterministic: the initial guess is the aufbau filling of the core
    operator (gamma = 0).  Convergence requires both the commutator
    residual max_xi ||[H_xi, gamma_xi]|| <= tol_residual and an energy
    change below tol_energy; non-convergence is reported, not raised.
    """
    from .verify import fermi_shell_report  # deferred: verify also builds on scf

    config.validate()
    grid = build_kgrid(config.ngrid)
    bases = build_bases(grid, config.ecut)
    h = compute_h()
    correction = singular_average(config.ngrid)
    tables = TransferTables(bases)
    sigma = config.effective_sigma

    def fock_of(st, rho=None):
        return assemble_fock(st, config.Z, h, correction, config.mode, sigma, tables, rho)

    def energy_of(st):
        return total_energy(st, config.Z, h, correction, config.mode, sigma, tables)

    core = fock_of(zero_state(grid, bases))
    spectrum = diagonalize(core)
    _, gamma, _ = aufbau_fill(spectrum, config.Z, config.degeneracy_tol)
    energy = energy_of(gamma)
    fock = fock_of(gamma)
    spectrum = diagonalize(fock)

    trace: list[tuple[int, float, float]] = []
    charges: list[float] = []
    converged = False
    last_de = np.inf
    iterations = 0

    for it in range(1, config.max_iter + 1):
        iterations = it
        residual = commutator_residual(fock, gamma)
        trace.append((it, residual, energy.total))
        charges.append(sum(kp.weight * np.trace(f).real for kp, f in zip(grid, gamma.fibers)))
        if residual <= config.tol_residual and abs(last_de) <= config.tol_energy:
            converged = True
            break

        _, candidate, shell = aufbau_fill(spectrum, config.Z, config.degeneracy_tol)
        candidates = [candidate]
        if shell.fractional:
            candidates.append(greedy_fill(spectrum, config.Z, config.degeneracy_tol)[1])

        best_state, best_energy = None, None
        for cand in candidates:
            if config.damping == "oda":
                stepped, _, _ = oda_step(gamma, cand, fock, h, correction, config.mode, tables)
            else:
                stepped = lincomb(1.0 - config.damping_t, gamma, config.damping_t, cand)
            e_next = energy_of(stepped)
            if best_energy is None or e_next.total < best_energy.total:
                best_state, best_energy = stepped, e_next

        last_de = best_energy.total - energy.total
        gamma, energy = best_state, best_energy
        fock = fock_of(gamma)
        spectrum = diagonalize(fock)

    mu, _, shell = aufbau_fill(spectrum, config.Z, config.degeneracy_tol)
    shell_report = fermi_shell_report(gamma, spectrum, mu, config.degeneracy_tol)
    return ScfReport(
        config=config,
        energy=energy,
        mu=mu,
        epsilon_flag=shell_report.flag,
        shell_note=shell_report.note,
        iterations=iterations,
        residual_trace=trace,
        converged=converged,
        spectrum=spectrum,
        occupations=_final_occupations(gamma, spectrum),
        final_state=gamma,
        h=h,
        v0=correction.v0,
        charge_trace=charges,
    )
