import numpy as np
import pytest

import pwhf

ECUT_SMALL = 2 * np.pi**2 + 0.1


@pytest.fixture(scope="session")
def h():
    return pwhf.compute_h()


@pytest.fixture(scope="session")
def v0_unit():
    return pwhf.singular_average(1).v0


def random_admissible(grid, bases, rng, occ_lo=0.0, occ_hi=1.0):
    """Random unitary times random occupations in [occ_lo, occ_hi] per fiber."""
    fibers = []
    for b in bases:
        A = rng.normal(size=(b.size, b.size)) + 1j * rng.normal(size=(b.size, b.size))
        Q, _ = np.linalg.qr(A)
        occ = rng.uniform(occ_lo, occ_hi, size=b.size)
        fibers.append((Q * occ) @ Q.conj().T)
    return pwhf.PeriodicState(grid, bases, fibers)


def random_hermitian_direction(bases, rng):
    fibers = []
    for b in bases:
        A = rng.normal(size=(b.size, b.size)) + 1j * rng.normal(size=(b.size, b.size))
        H = 0.5 * (A + A.conj().T)
        fibers.append(H / np.linalg.norm(H))
    return fibers


@pytest.fixture(scope="session")
def make_random_state():
    return random_admissible


@pytest.fixture(scope="session")
def uniform_rank_one():
    """Single Gamma point, one basis vector, gamma = |e_0><e_0| (density 1)."""
    grid = pwhf.build_kgrid(1)
    bases = pwhf.build_bases(grid, 1.0)
    assert bases[0].size == 1
    return pwhf.PeriodicState(grid, bases, [np.ones((1, 1), complex)])


@pytest.fixture(scope="session")
def hf_battery():
    """Converged hf runs shared by the solver and theorem tests.

    Includes the Gamma-point Z=5 configuration whose top occupied level
    is an exactly threefold-degenerate, completely filled multiplet.
    """
    runs = {}
    for Z, n in [(1.0, 1), (1.0, 2), (2.0, 1), (2.0, 2), (5.0, 1)]:
        cfg = pwhf.ScfConfig(Z=Z, ecut=ECUT_SMALL, ngrid=n, mode="hf")
        runs[(Z, n)] = pwhf.run_scf(cfg)
    return runs


@pytest.fixture(scope="session")
def reduced_battery():
    runs = {}
    for Z, n in [(1.0, 1), (1.0, 2), (2.0, 1), (2.0, 2)]:
        cfg = pwhf.ScfConfig(Z=Z, ecut=ECUT_SMALL, ngrid=n, mode="reduced")
        runs[(Z, n)] = pwhf.run_scf(cfg)
    return runs
