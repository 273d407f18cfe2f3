"""Periodic Coulomb kernels for the simple cubic lattice.

Two kernels drive the model.  The periodic Green function

    G(x) = h + sum_{K != 0} (4*pi/|K|^2) exp(i K.x),     K in 2*pi*Z^3,

solves -Lap G = 4*pi*(sum_k delta_k - 1) with min G = 0; the zero-mode
constant h = int_Gamma G > 0 is fixed by that normalization and is
computed here rather than imported.  The exchange kernel

    W(eta, x) = 4*pi*exp(-i eta.x) * sum_K exp(i K.x) / |eta - K|^2

couples Bloch sectors through the momentum transfer eta.  Its |q|^-2
singularity at zero transfer is integrable over the Brillouin zone, so
the discrete exchange sums replace the divergent q = 0 factor by the
exact average of 4*pi/|q|^2 over one Brillouin-zone microcell.

Truncations use the max-norm box |m|_inf <= radius on integer reciprocal
coordinates; box partial sums of these lattice series converge at the
evaluation points we need, unlike spherical shells.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import erfc

from .errors import (
    IntegrationError,
    InvalidParameterError,
    SingularArgumentError,
    TruncationError,
)

TWO_PI = 2.0 * np.pi

DEFAULT_RADIUS = 32


def _as_mvec(K) -> np.ndarray:
    """Validate K in 2*pi*Z^3 and return the integer coordinates."""
    K = np.asarray(K, dtype=float)
    if K.shape != (3,):
        raise InvalidParameterError(f"K must be a 3-vector, got shape {K.shape}")
    m = K / TWO_PI
    mi = np.rint(m)
    if np.max(np.abs(m - mi)) > 1e-9:
        raise InvalidParameterError(f"K = {K} is not on the reciprocal lattice 2*pi*Z^3")
    return mi.astype(np.int64)


def green_fourier(K, h: float) -> float:
    """Fourier coefficient of G: h at K = 0, else 4*pi/|K|^2."""
    m = _as_mvec(K)
    msq = int(np.dot(m, m))
    if msq == 0:
        return float(h)
    return 4.0 * np.pi / (TWO_PI**2 * msq)


def green_coeff_msq(msq, h: float):
    """Vectorized coefficient lookup from integer |m|^2 values."""
    msq = np.asarray(msq)
    out = np.where(msq == 0, h, 4.0 * np.pi / (TWO_PI**2 * np.maximum(msq, 1)))
    return out if out.ndim else float(out)


@lru_cache(maxsize=8)
def _box_mvecs(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    M = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    return M


def compute_h(fourier_radius: int = DEFAULT_RADIUS, grid_resolution: int | None = None) -> float:
    """Zero-mode constant h = -min_x sum_{K != 0} (4*pi/|K|^2) exp(i K.x).

    The raw box partial sums oscillate by several percent even at large
    radii, so the synthesis damps the coefficients by a Gaussian
    exp(-|K|^2/(4 a^2)) with a = radius/2 and restores the exactly known
    compensation: the damped series equals G - h - r_a(x) + pi/a^2 with
    r_a(x) = sum_k erfc(a|x-k|)/|x-k| <= 8 erfc(a sqrt(3)/2)/sqrt(3)*2 at
    the minimum, which is below 1e-5 for radius >= 8 and decays
    superexponentially.  The minimum is taken over a uniform real-space
    grid covering the cell (the minimizer is the cell corner).

    Raises TruncationError if doubling the radius moves the result by
    more than 1% relative.
    """
    if fourier_radius < 8:
        raise InvalidParameterError(f"fourier_radius must be >= 8, got {fourier_radius}")
    h_coarse = _h_at_radius(fourier_radius, grid_resolution)
    h_fine = _h_at_radius(2 * fourier_radius, None if grid_resolution is None else 2 * grid_resolution)
    if abs(h_coarse - h_fine) > 1e-2 * abs(h_fine):
        raise TruncationError(
            f"h did not stabilize: h({fourier_radius}) = {h_coarse}, "
            f"h({2 * fourier_radius}) = {h_fine}"
        )
    return h_fine


def _h_at_radius(radius: int, grid_resolution: int | None) -> float:
    N = 2 * radius + 2 if grid_resolution is None else int(grid_resolution)
    if N < 2 * radius + 1:
        raise InvalidParameterError(
            f"grid resolution {N} aliases Fourier content of radius {radius}"
        )
    alpha = radius / 2.0
    m = np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)
    M1, M2, M3 = np.meshgrid(m, m, m, indexing="ij")
    msq = M1**2 + M2**2 + M3**2
    box = np.maximum(np.maximum(np.abs(M1), np.abs(M2)), np.abs(M3)) <= radius
    inside = (msq > 0) & box
    coeff = np.zeros((N, N, N))
    ksq = TWO_PI**2 * msq[inside]
    coeff[inside] = 4.0 * np.pi / ksq * np.exp(-ksq / (4.0 * alpha**2))
    S = np.fft.ifftn(coeff).real * N**3
    return float(np.pi / alpha**2 - S.min())


def green_series(x, radius: int, h: float):
    """Box-truncated synthesis h + sum_{0 < |m|_inf <= radius} of G's modes.

    Pointwise this converges only slowly; it is meant for identities in
    which the same truncation appears on both sides and cancels.
    Accepts a single 3-vector or an (n, 3) batch.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    M = _box_mvecs(radius)
    msq = np.sum(M * M, axis=1)
    nz = msq > 0
    coeff = 4.0 * np.pi / (TWO_PI**2 * msq[nz])
    phases = np.exp(1j * TWO_PI * (x @ M[nz].T))
    vals = h + (phases @ coeff).real
    return vals if vals.size > 1 else float(vals[0])


def green_realspace(x, h: float, alpha: float = 5.0):
    """Machine-accurate G(x) via the screened real/reciprocal split.

    G(x) = h + r_a(x) + sum_{K != 0} (4*pi/|K|^2) e^{-|K|^2/4a^2} e^{iK.x}
           - pi/a^2,   r_a(x) = sum_k erfc(a|x-k|)/|x-k|.

    Accepts a single 3-vector or an (n, 3) batch.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sites = _box_mvecs(2).astype(float)
    d = np.linalg.norm(x[:, None, :] - sites[None, :, :], axis=2)
    d = np.maximum(d, 1e-300)
    real_part = np.sum(erfc(alpha * d) / d, axis=1)
    mrec = int(np.ceil(2.0 * alpha))
    M = _box_mvecs(mrec)
    msq = np.sum(M * M, axis=1)
    nz = msq > 0
    ksq = TWO_PI**2 * msq[nz]
    coeff = 4.0 * np.pi / ksq * np.exp(-ksq / (4.0 * alpha**2))
    phases = np.exp(1j * TWO_PI * (x @ M[nz].T))
    recip = (phases @ coeff).real
    vals = h + real_part + recip - np.pi / alpha**2
    return vals if vals.size > 1 else float(vals[0])


def w_eval(eta, x, fourier_radius: int = DEFAULT_RADIUS) -> complex:
    """Box-truncated W(eta, x) = 4*pi e^{-i eta.x} sum_K e^{iK.x}/|eta - K|^2."""
    eta = np.asarray(eta, dtype=float)
    x = np.asarray(x, dtype=float)
    if eta.shape != (3,) or x.shape != (3,):
        raise InvalidParameterError("eta and x must be 3-vectors")
    m = eta / TWO_PI
    if np.max(np.abs(m - np.rint(m))) < 1e-12:
        raise SingularArgumentError(f"eta = {eta} lies on the reciprocal lattice")
    M = _box_mvecs(fourier_radius)
    den = np.sum((eta - TWO_PI * M) ** 2, axis=1)
    phases = np.exp(1j * TWO_PI * (M @ x))
    return complex(4.0 * np.pi * np.exp(-1j * np.dot(eta, x)) * np.sum(phases / den))


def w_smooth_remainder(eta, x, radius: int, h: float) -> complex:
    """Lipschitz remainder f(eta, x) of the one-box decomposition of W.

    W(eta,x) = 4*pi e^{-i eta.x}/|eta|^2 + e^{-i eta.x}(G(x) - h)
               + e^{-i eta.x} f(eta, x),  with f(0, .) = 0.

    Both W and G are truncated at the same box radius so the slow parts
    of the two series cancel exactly.
    """
    eta = np.asarray(eta, dtype=float)
    w = w_eval(eta, x, fourier_radius=radius)
    g = green_series(x, radius, h)
    return complex(
        np.exp(1j * np.dot(eta, np.asarray(x, dtype=float))) * w
        - 4.0 * np.pi / float(np.dot(eta, eta))
        - (g - h)
    )


@lru_cache(maxsize=1)
def _cell_average_unit() -> float:
    """(1/(2*pi)^3) * int_{[-pi,pi)^3} 4*pi/|q|^2 dq, to quadrature accuracy.

    Integrating the radial direction first maps the cell integral to a
    smooth face integral:  int_{[-a,a]^3} |q|^-2 dq = 6*a*J with
    J = int_{[-1,1]^2} du dv / (1 + u^2 + v^2).
    """
    J, est = integrate.dblquad(
        lambda v, u: 1.0 / (1.0 + u * u + v * v), -1.0, 1.0, -1.0, 1.0,
        epsabs=1e-12, epsrel=1e-12,
    )
    if est > 1e-4 * J:
        raise IntegrationError(f"cell-average quadrature error estimate {est} too large")
    return 4.0 * np.pi * 6.0 * np.pi * J / TWO_PI**3


@dataclass(frozen=True)
class SingularCorrection:
    """Replacement value for the 4*pi/|q|^2 factor at zero momentum transfer."""

    v0: float
    n: int

    def __post_init__(self):
        if self.v0 <= 0.0:
            raise InvalidParameterError(f"v0 must be positive, got {self.v0}")


def singular_average(n: int) -> SingularCorrection:
    """Average of 4*pi/|q|^2 over the microcell [-pi/n, pi/n)^3.

    v0(n) = n^3/(2*pi)^3 * int_{cell(n)} 4*pi/|q|^2 dq; the change of
    variables q -> q/n reduces every n to the unit-cell quadrature, so
    v0(n) = n^2 * v0(1) exactly.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidParameterError(f"grid order must be a positive integer, got {n!r}")
    return SingularCorrection(v0=float(n * n * _cell_average_unit()), n=int(n))


@dataclass(frozen=True)
class GreenKernel:
    """The Green function G through its Fourier data and computed h."""

    h: float
    realspace_cutoff: int = DEFAULT_RADIUS

    def __post_init__(self):
        if self.h <= 0.0:
            raise InvalidParameterError(f"h must be positive, got {self.h}")

    @classmethod
    def build(cls, fourier_radius: int = DEFAULT_RADIUS) -> "GreenKernel":
        return cls(h=compute_h(fourier_radius), realspace_cutoff=fourier_radius)

    def fourier(self, K) -> float:
        return green_fourier(K, self.h)

    def series(self, x):
        return green_series(x, self.realspace_cutoff, self.h)

    def realspace(self, x):
        return green_realspace(x, self.h)
