"""Periodic density matrices as Bloch-fiber matrices.

A state gamma with 0 <= gamma <= 1 that commutes with lattice
translations is block-diagonal over quasi-momentum: one Hermitian matrix
gamma_xi per k-point, expressed in that fiber's plane-wave basis.  The
Brillouin-zone integral (2*pi)^-3 int dxi becomes the weighted k-sum.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .lattice import TWO_PI, KPoint, PlaneWaveBasis

HERMITICITY_TOL = 1e-12
EIGENVALUE_TOL = 1e-10
CHARGE_TOL = 1e-10


class PeriodicState:
    """One Hermitian fiber matrix per k-point, eigenvalues in [0, 1]."""

    def __init__(self, grid: list[KPoint], bases: list[PlaneWaveBasis], fibers: list[np.ndarray]):
        if not (len(grid) == len(bases) == len(fibers)):
            raise InvalidParameterError("grid, bases and fibers must have equal length")
        self.grid = list(grid)
        self.bases = list(bases)
        self.fibers = []
        for b, f in zip(bases, fibers):
            f = np.asarray(f, dtype=complex)
            if f.shape != (b.size, b.size):
                raise InvalidParameterError(
                    f"fiber shape {f.shape} does not match basis size {b.size}"
                )
            self.fibers.append(f.copy())

    @property
    def nk(self) -> int:
        return len(self.grid)

    def copy(self) -> "PeriodicState":
        return PeriodicState(self.grid, self.bases, [f.copy() for f in self.fibers])

    def same_discretization(self, other: "PeriodicState") -> bool:
        if self.nk != other.nk:
            return False
        for ka, kb, ba, bb in zip(self.grid, other.grid, self.bases, other.bases):
            if not np.allclose(ka.xi, kb.xi, atol=1e-14):
                return False
            if ba.size != bb.size or not np.array_equal(ba.mvecs, bb.mvecs):
                return False
        return True


def zero_state(grid, bases) -> PeriodicState:
    return PeriodicState(grid, bases, [np.zeros((b.size, b.size), complex) for b in bases])


def lincomb(ca: float, a: PeriodicState, cb: float, b: PeriodicState) -> PeriodicState:
    """ca*a + cb*b fiberwise; the states must share grid and bases."""
    if not a.same_discretization(b):
        raise InvalidParameterError("states live on different grids or bases")
    return PeriodicState(
        a.grid, a.bases, [ca * fa + cb * fb for fa, fb in zip(a.fibers, b.fibers)]
    )


def state_from_orbitals(grid, bases, vectors, occupations) -> PeriodicState:
    """Assemble fibers V diag(occ) V^dag from per-k orbital matrices."""
    fibers = []
    for V, occ in zip(vectors, occupations):
        occ = np.asarray(occ, dtype=float)
        fibers.append((V * occ) @ V.conj().T)
    return PeriodicState(grid, bases, fibers)


@dataclass
class DensityCoeffs:
    """Fourier coefficients of the periodic electron density.

    Keys are integer reciprocal coordinates m (the coefficient lives at
    K = 2*pi*m); the support is the difference set of the fiber bases.
    """

    coeffs: dict[tuple[int, int, int], complex]

    @property
    def electron_count(self) -> float:
        return float(np.real(self.coeffs.get((0, 0, 0), 0.0)))

    def get(self, m) -> complex:
        return self.coeffs.get(tuple(int(v) for v in m), 0.0 + 0.0j)

    def conjugate_symmetry_defect(self) -> float:
        worst = 0.0
        for m, v in self.coeffs.items():
            mirror = self.coeffs.get((-m[0], -m[1], -m[2]), 0.0 + 0.0j)
            worst = max(worst, abs(np.conj(mirror) - v))
        return worst

    def realspace(self, npts: int) -> np.ndarray:
        """Density on the uniform npts^3 grid over the cell (exact for
        npts larger than twice the coefficient radius)."""
        mmax = max((max(abs(c) for c in m) for m in self.coeffs), default=0)
        if npts <= 2 * mmax:
            raise InvalidParameterError(
                f"{npts}^3 grid aliases density modes up to |m|_inf = {mmax}"
            )
        arr = np.zeros((npts, npts, npts), dtype=complex)
        for m, v in self.coeffs.items():
            arr[m[0] % npts, m[1] % npts, m[2] % npts] += v
        rho = np.fft.ifftn(arr) * npts**3
        return rho.real


def self_transfer_table(basis: PlaneWaveBasis):
    """Unique momentum differences m_r - m_c within one fiber basis.

    Returns (unique_dm, inverse) with inverse of shape (B, B) mapping
    each matrix entry to its row in unique_dm.
    """
    M = basis.mvecs
    D = (M[:, None, :] - M[None, :, :]).reshape(-1, 3)
    uniq, inv = np.unique(D, axis=0, return_inverse=True)
    return uniq, inv.reshape(basis.size, basis.size)


def density_from_state(state: PeriodicState) -> DensityCoeffs:
    """rho_hat(K) = sum_xi w_xi sum_P gamma_xi(P + K, P)."""
    acc: dict[tuple[int, int, int], complex] = {}
    for kp, basis, fiber in zip(state.grid, state.bases, state.fibers):
        uniq, inv = self_transfer_table(basis)
        sums = np.zeros(len(uniq), dtype=complex)
        np.add.at(sums, inv.ravel(), fiber.ravel())
        for m, v in zip(uniq, sums):
            key = (int(m[0]), int(m[1]), int(m[2]))
            acc[key] = acc.get(key, 0.0 + 0.0j) + kp.weight * v
    return DensityCoeffs(acc)


def electron_count(state: PeriodicState) -> float:
    return float(sum(kp.weight * np.trace(f).real for kp, f in zip(state.grid, state.fibers)))


def kinetic_energy(state: PeriodicState) -> float:
    """sum_xi w_xi sum_K (|xi + K|^2 / 2) gamma_xi(K, K)."""
    total = 0.0
    for kp, basis, fiber in zip(state.grid, state.bases, state.fibers):
        total += kp.weight * float(np.real(np.diag(fiber)) @ basis.kinetic)
    return total


@dataclass
class AdmissibilityReport:
    hermiticity_defect: float
    min_eigenvalue: float
    max_eigenvalue: float
    electron_count: float
    charge_defect: float | None
    passed: bool


def check_admissible(state: PeriodicState, target_charge: float | None = None) -> AdmissibilityReport:
    """Diagnose the 0 <= gamma <= 1 constraints fiber by fiber."""
    herm = 0.0
    lo, hi = np.inf, -np.inf
    for f in state.fibers:
        herm = max(herm, float(np.max(np.abs(f - f.conj().T))))
        ev = np.linalg.eigvalsh(0.5 * (f + f.conj().T))
        lo = min(lo, float(ev[0]))
        hi = max(hi, float(ev[-1]))
    count = electron_count(state)
    charge_defect = None if target_charge is None else abs(count - target_charge)
    passed = (
        herm <= HERMITICITY_TOL
        and lo >= -EIGENVALUE_TOL
        and hi <= 1.0 + EIGENVALUE_TOL
        and (charge_defect is None or charge_defect <= CHARGE_TOL)
    )
    return AdmissibilityReport(herm, lo, hi, count, charge_defect, passed)


def realspace_points(npts: int) -> np.ndarray:
    """Uniform npts^3 sample of the unit cell, C-ordered, in [0, 1)^3."""
    t = np.arange(npts) / npts
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)


def gamma_tilde_matrix(state: PeriodicState, npts: int) -> np.ndarray:
    """Kernel of sum_xi w_xi U_xi^* gamma_xi U_xi on the sample grid.

    gamma_tilde(x, y) = sum_xi w_xi sum_{P,Q} gamma_xi(P,Q) e^{iPx} e^{-iQy},
    i.e. the Bloch phases are gauged away; its diagonal is the density.
    """
    pts = realspace_points(npts)
    out = np.zeros((len(pts), len(pts)), dtype=complex)
    for kp, basis, fiber in zip(state.grid, state.bases, state.fibers):
        E = np.exp(1j * TWO_PI * (pts @ basis.mvecs.T))
        out += kp.weight * (E @ fiber @ E.conj().T)
    return out


def max_mode_radius(bases) -> int:
    return max(int(np.max(np.abs(b.mvecs))) if b.size else 0 for b in bases)


# --- snapshot serialization (JSON, fiber blobs as little-endian complex128) ---

SNAPSHOT_FORMAT = "pwhf-state-v1"


def save_state(state: PeriodicState, path, extra: dict | None = None) -> None:
    doc = {
        "format": SNAPSHOT_FORMAT,
        "kpoints": [
            {"xi": [float(v) for v in kp.xi], "weight": kp.weight, "index": kp.index}
            for kp in state.grid
        ],
        "bases": [
            {"mvecs": b.mvecs.tolist(), "ecut": b.ecut} for b in state.bases
        ],
        "fibers": [
            {
                "shape": list(f.shape),
                "data_b64": base64.b64encode(
                    np.ascontiguousarray(f, dtype="<c16").tobytes()
                ).decode("ascii"),
            }
            for f in state.fibers
        ],
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_state(path) -> tuple[PeriodicState, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != SNAPSHOT_FORMAT:
        raise InvalidParameterError(f"unrecognized snapshot format {doc.get('format')!r}")
    grid = [
        KPoint(np.array(k["xi"]), k["weight"], index=k.get("index", i))
        for i, k in enumerate(doc["kpoints"])
    ]
    bases = [
        PlaneWaveBasis(kp, np.array(b["mvecs"], dtype=np.int64), b["ecut"])
        for kp, b in zip(grid, doc["bases"])
    ]
    fibers = []
    for rec in doc["fibers"]:
        raw = base64.b64decode(rec["data_b64"])
        arr = np.frombuffer(raw, dtype="<c16").reshape(rec["shape"]).astype(complex)
        fibers.append(arr)
    return PeriodicState(grid, bases, fibers), doc.get("extra", {})
