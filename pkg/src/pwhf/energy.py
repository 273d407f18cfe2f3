"""Terms of the periodic Hartree-Fock functional.

E(gamma) = kinetic + external + (1/2) D(rho, rho) - (1/2) X(gamma, gamma)

with the direct form D through the Green kernel G and the exchange form
X through W.  In the plane-wave fiber representation both quadratic
forms reduce to momentum-conserving sums: a matrix element pair
(P, Q) x (P', Q') couples only when P - P' = Q - Q', and the Coulomb
factor depends on the transfer q = (xi + P) - (xi' + P').  The q = 0
self-transfer uses the microcell average v0 from the singular
correction, in the energy and (via the gradient) in the Fock operator,
so the discrete functional stays exactly quadratic with a consistent
derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .kernels import SingularCorrection, green_coeff_msq
from .lattice import TWO_PI
from .state import (
    DensityCoeffs,
    PeriodicState,
    density_from_state,
    gamma_tilde_matrix,
    kinetic_energy,
    max_mode_radius,
    realspace_points,
    self_transfer_table,
)

EIG_KEEP = 1e-14


class TransferTables:
    """Momentum-conservation bookkeeping between fiber bases.

    For a basis pair (i, j) the entries are grouped by the reciprocal
    shift dm = m_i - m_j; each group carries aligned index lists (I, J)
    with M_i[I] = M_j[J] + dm.  Groups are what both the exchange energy
    and the exchange block of the Fock operator iterate over.
    """

    def __init__(self, bases):
        self.bases = bases
        self._pairs: dict[tuple[int, int], tuple[np.ndarray, list]] = {}

    def pair(self, i: int, j: int):
        key = (i, j)
        hit = self._pairs.get(key)
        if hit is not None:
            return hit
        Ma, Mb = self.bases[i].mvecs, self.bases[j].mvecs
        nb = Mb.shape[0]
        D = (Ma[:, None, :] - Mb[None, :, :]).reshape(-1, 3)
        uniq, inv = np.unique(D, axis=0, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        groups = []
        for t in range(len(uniq)):
            flat = order[bounds[t]:bounds[t + 1]]
            groups.append((flat // nb, flat % nb))
        result = (uniq, groups)
        self._pairs[key] = result
        return result


def transfer_kernel_w(xi_i, xi_j, dms: np.ndarray, v0: float) -> np.ndarray:
    """4*pi/|q|^2 at q = xi_i - xi_j + 2*pi*dm, with v0 at q = 0."""
    q = (xi_i - xi_j)[None, :] + TWO_PI * dms
    qsq = np.sum(q * q, axis=1)
    zero = qsq < 1e-18
    vals = np.empty(len(dms))
    vals[zero] = v0
    vals[~zero] = 4.0 * np.pi / qsq[~zero]
    return vals


def transfer_kernel_g(dms: np.ndarray, h: float) -> np.ndarray:
    """G coefficients on the reciprocal shifts (the xi-difference is dropped)."""
    return np.asarray(green_coeff_msq(np.sum(dms * dms, axis=1), h), dtype=float)


def _spectral_fibers(state: PeriodicState):
    """Eigen-decompose each fiber, keeping eigenvalues above EIG_KEEP."""
    out = []
    for f in state.fibers:
        if not np.any(np.abs(f) > EIG_KEEP):
            out.append(None)
            continue
        o, V = np.linalg.eigh(0.5 * (f + f.conj().T))
        keep = np.abs(o) > EIG_KEEP
        out.append((o[keep], V[:, keep]) if np.any(keep) else None)
    return out


def _check_same_discretization(a: PeriodicState, b: PeriodicState):
    if a is not b and not a.same_discretization(b):
        raise InvalidParameterError("states live on different grids or bases")


def exchange_energy(
    a: PeriodicState,
    b: PeriodicState,
    correction: SingularCorrection | None = None,
    *,
    kernel: str = "w",
    h: float | None = None,
    tables: TransferTables | None = None,
) -> float:
    """The exchange bilinear form X(a, b).

    X = sum_{xi,xi'} w w' sum over momentum-conserving index pairs of
    a_xi(P,Q) conj(b_xi'(P',Q')) V(q), V(q) = 4*pi/|q|^2 regularized by
    correction.v0 at q = 0.  kernel="g" swaps V for the xi-independent
    G coefficients (then h is required), which is the momentum-space
    route to the G-kernel exchange.

    Real for Hermitian fiber families; positive when a = b is
    positive semidefinite.
    """
    _check_same_discretization(a, b)
    if kernel == "w":
        if correction is None:
            raise InvalidParameterError("the W-kernel exchange needs a SingularCorrection")
    elif kernel == "g":
        if h is None:
            raise InvalidParameterError("the G-kernel exchange needs h")
    else:
        raise InvalidParameterError(f"unknown exchange kernel {kernel!r}")
    tables = tables if tables is not None else TransferTables(a.bases)
    eig_a = _spectral_fibers(a)
    eig_b = eig_a if b is a else _spectral_fibers(b)
    total = 0.0
    for i, ea in enumerate(eig_a):
        if ea is None:
            continue
        oa, Ca = ea
        wi = a.grid[i].weight
        xi_i = a.grid[i].xi
        for j, eb in enumerate(eig_b):
            if eb is None:
                continue
            ob, Cb = eb
            uniq, groups = tables.pair(i, j)
            if kernel == "w":
                V = transfer_kernel_w(xi_i, a.grid[j].xi, uniq, correction.v0)
            else:
                V = transfer_kernel_g(uniq, h)
            S = np.zeros((len(oa), len(ob)))
            for t, (I, J) in enumerate(groups):
                A = Ca[I, :].T @ Cb[J, :].conj()
                S += V[t] * (A.real**2 + A.imag**2)
            total += wi * a.grid[j].weight * float(oa @ S @ ob)
    return total


def exchange_energy_G(
    a: PeriodicState,
    h: float,
    method: str = "momentum",
    tables: TransferTables | None = None,
) -> float:
    """X_G(a, a): the exchange form with W replaced by the Green kernel.

    The momentum route reuses the transfer machinery with G
    coefficients.  The real-space route integrates
    G(x - y) |gamma~(x, y)|^2 on a grid fine enough to make the
    band-limited quadrature exact; it exists as an independent
    cross-check of the assembly.
    """
    if method == "momentum":
        return exchange_energy(a, a, kernel="g", h=h, tables=tables)
    if method != "realspace":
        raise InvalidParameterError(f"unknown X_G method {method!r}")
    mmax = max_mode_radius(a.bases)
    npts = 4 * mmax + 1
    gt = gamma_tilde_matrix(a, npts)
    # G sampled on the displacement grid, modes up to the difference set
    m = np.fft.fftfreq(npts, d=1.0 / npts).astype(np.int64)
    M1, M2, M3 = np.meshgrid(m, m, m, indexing="ij")
    msq = M1**2 + M2**2 + M3**2
    box = np.maximum(np.maximum(np.abs(M1), np.abs(M2)), np.abs(M3)) <= 2 * mmax
    coeff = np.where(box, green_coeff_msq(msq, h), 0.0)
    g_grid = np.fft.ifftn(coeff).real * npts**3
    idx = np.arange(npts**3)
    c1, c2, c3 = idx // npts**2, (idx // npts) % npts, idx % npts
    d1 = (c1[:, None] - c1[None, :]) % npts
    d2 = (c2[:, None] - c2[None, :]) % npts
    d3 = (c3[:, None] - c3[None, :]) % npts
    gxy = g_grid[d1, d2, d3]
    return float(np.sum(gxy * (gt.real**2 + gt.imag**2)) / npts**6)


def coulomb_bilinear(f: DensityCoeffs, g: DensityCoeffs, h: float) -> float:
    """D(f, g) = sum_K G_hat(K) f_hat(K) conj(g_hat(K)).

    Coefficient supports are aligned by treating missing keys as zero.
    Real for conjugate-symmetric (real-valued) f and g.
    """
    total = 0.0 + 0.0j
    for m, fv in f.coeffs.items():
        gv = g.coeffs.get(m)
        if gv is None:
            continue
        total += green_coeff_msq(m[0] ** 2 + m[1] ** 2 + m[2] ** 2, h) * fv * np.conj(gv)
    return float(total.real)


def nuclear_form_factor(msq, sigma: float | None):
    """Fourier coefficients of the periodized nuclear shape: 1 for point
    charges, exp(-sigma^2 |K|^2 / 2) for Gaussian-smeared ones."""
    if sigma is None:
        return np.ones_like(np.asarray(msq, dtype=float))
    if sigma <= 0.0:
        raise InvalidParameterError(f"smearing width must be positive, got {sigma}")
    return np.exp(-0.5 * sigma**2 * TWO_PI**2 * np.asarray(msq, dtype=float))


def external_energy(rho: DensityCoeffs, Z: float, h: float, sigma: float | None = None) -> float:
    """-Z sum_K G_hat(K) m_hat(K) conj(rho_hat(K)), the lattice-potential term."""
    if Z < 0.0:
        raise InvalidParameterError(f"nuclear charge must be nonnegative, got {Z}")
    total = 0.0 + 0.0j
    for m, rv in rho.coeffs.items():
        msq = m[0] ** 2 + m[1] ** 2 + m[2] ** 2
        total += green_coeff_msq(msq, h) * float(nuclear_form_factor(msq, sigma)) * np.conj(rv)
    return float(-Z * total.real)


@dataclass(frozen=True)
class EnergyBreakdown:
    """Energy terms in Hartree; hartree and exchange are stored after the
    factor 1/2, so total = kinetic + external + hartree - exchange."""

    kinetic: float
    external: float
    hartree: float
    exchange: float

    @property
    def total(self) -> float:
        return self.kinetic + self.external + self.hartree - self.exchange

    def as_dict(self) -> dict:
        return {
            "kinetic": self.kinetic,
            "external": self.external,
            "hartree": self.hartree,
            "exchange": self.exchange,
            "total": self.total,
        }


def total_energy(
    state: PeriodicState,
    Z: float,
    h: float,
    correction: SingularCorrection,
    mode: str = "hf",
    sigma: float | None = None,
    tables: TransferTables | None = None,
    rho: DensityCoeffs | None = None,
) -> EnergyBreakdown:
    """Assemble every term; mode="reduced" drops the exchange term exactly."""
    if mode not in ("hf", "reduced"):
        raise InvalidParameterError(f"mode must be 'hf' or 'reduced', got {mode!r}")
    if rho is None:
        rho = density_from_state(state)
    kin = kinetic_energy(state)
    ext = external_energy(rho, Z, h, sigma)
    har = 0.5 * coulomb_bilinear(rho, rho, h)
    exc = 0.5 * exchange_energy(state, state, correction, tables=tables) if mode == "hf" else 0.0
    return EnergyBreakdown(kin, ext, har, exc)


def local_potential_block(basis, rho: DensityCoeffs, Z: float, h: float, sigma: float | None):
    """Entry (K, K') = G_hat(K - K') * (rho_hat(K-K') - Z m_hat(K-K')).

    This is the Hartree-plus-external multiplication operator projected
    on one fiber basis; at K = K' it contributes h*(rho_hat(0) - Z),
    which vanishes at neutrality.
    """
    uniq, inv = self_transfer_table(basis)
    msq = np.sum(uniq * uniq, axis=1)
    rvals = np.array([rho.get(m) for m in uniq], dtype=complex)
    coeff = green_coeff_msq(msq, h) * (rvals - Z * nuclear_form_factor(msq, sigma))
    return coeff[inv]


def hartree_block(basis, rho: DensityCoeffs, h: float):
    uniq, inv = self_transfer_table(basis)
    msq = np.sum(uniq * uniq, axis=1)
    rvals = np.array([rho.get(m) for m in uniq], dtype=complex)
    coeff = green_coeff_msq(msq, h) * rvals
    return coeff[inv]
