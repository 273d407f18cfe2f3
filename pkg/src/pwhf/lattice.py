"""Unit cell, Brillouin zone sampling and per-fiber plane-wave bases.

The crystal lattice is Z^3 with unit cell Gamma = [-1/2, 1/2)^3, so the
reciprocal lattice is 2*pi*Z^3 and the Brillouin zone is
Gamma* = [-pi, pi)^3.  Each Bloch sector at quasi-momentum xi is spanned
by the plane waves exp(i*(xi + K).x) with K on the reciprocal lattice.
All quantities are in Hartree atomic units; the cell volume is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class KPoint:
    """One Brillouin-zone sample with its quadrature weight."""

    xi: np.ndarray          # shape (3,), components in [-pi, pi)
    weight: float
    index: int = 0

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        object.__setattr__(self, "xi", xi)
        if xi.shape != (3,):
            raise InvalidParameterError(f"xi must be a 3-vector, got shape {xi.shape}")
        if not np.all((xi >= -np.pi - 1e-12) & (xi < np.pi)):
            raise InvalidParameterError(f"xi components must lie in [-pi, pi): {xi}")
        if self.weight <= 0.0:
            raise InvalidParameterError(f"weight must be positive, got {self.weight}")


@dataclass(frozen=True, eq=False)
class PlaneWaveBasis:
    """Plane waves exp(i*(xi + 2*pi*m).x) kept by the kinetic cutoff.

    ``mvecs`` holds the integer reciprocal coordinates m (K = 2*pi*m),
    sorted by (|xi + K|^2, lexicographic m) so the ordering is
    reproducible across runs.
    """

    xi: KPoint
    mvecs: np.ndarray       # int array, shape (B, 3)
    ecut: float
    kinetic: np.ndarray = field(default=None, repr=False)  # |xi+K|^2 / 2 per row

    def __post_init__(self):
        mv = np.asarray(self.mvecs, dtype=np.int64)
        object.__setattr__(self, "mvecs", mv)
        ksq = np.sum((self.xi.xi + TWO_PI * mv) ** 2, axis=1)
        object.__setattr__(self, "kinetic", 0.5 * ksq)

    @property
    def kvecs(self) -> np.ndarray:
        """The reciprocal vectors K = 2*pi*m, in basis order."""
        return TWO_PI * self.mvecs.astype(float)

    @property
    def size(self) -> int:
        return self.mvecs.shape[0]


def build_kgrid(n: int) -> list[KPoint]:
    """Uniform n^3 sampling of Gamma* with equal weights summing to 1.

    The grid is the shifted uniform mesh xi_j = (2*j + 1 - n)*pi/n,
    j = 0..n-1 per axis, which lies entirely in [-pi, pi) and is
    symmetric as a set under xi -> -xi.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParameterError(f"grid order must be a positive integer, got {n!r}")
    pts = (2 * np.arange(n) + 1 - n) * np.pi / n
    w = 1.0 / n**3
    grid = []
    idx = 0
    for a in pts:
        for b in pts:
            for c in pts:
                grid.append(KPoint(np.array([a, b, c]), w, index=idx))
                idx += 1
    return grid


def build_basis(kpoint: KPoint, ecut: float) -> PlaneWaveBasis:
    """All K = 2*pi*m with |xi + K|^2 / 2 <= ecut, deterministically ordered."""
    if ecut <= 0.0:
        raise InvalidParameterError(f"ecut must be positive, got {ecut}")
    xi = kpoint.xi
    radius = np.sqrt(2.0 * ecut)
    lo = np.floor((-radius - xi) / TWO_PI).astype(int)
    hi = np.ceil((radius - xi) / TWO_PI).astype(int)
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
    M = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    ksq = np.sum((xi + TWO_PI * M) ** 2, axis=1)
    keep = ksq <= 2.0 * ecut
    M, ksq = M[keep], ksq[keep]
    # primary key last in lexsort; ties broken lexicographically on m
    order = np.lexsort((M[:, 2], M[:, 1], M[:, 0], ksq))
    return PlaneWaveBasis(kpoint, M[order], float(ecut))


def build_bases(grid: list[KPoint], ecut: float) -> list[PlaneWaveBasis]:
    return [build_basis(k, ecut) for k in grid]
