import numpy as np
import pytest

import pwhf
from pwhf.energy import TransferTables
from pwhf.errors import InvalidParameterError
from pwhf.state import DensityCoeffs

from conftest import ECUT_SMALL, random_admissible, random_hermitian_direction


def coeffs(d):
    return DensityCoeffs({k: complex(v) for k, v in d.items()})


# --- coulomb_bilinear --------------------------------------------------------


def test_direct_form_uniform_density_gives_h(h):
    one = coeffs({(0, 0, 0): 1.0})
    assert pwhf.coulomb_bilinear(one, one, h) == pytest.approx(h, abs=1e-14)


def test_direct_form_two_mode_pair(h):
    a = 0.3 - 0.7j
    f = coeffs({(1, 0, 0): a, (-1, 0, 0): np.conj(a)})
    expected = 2 * abs(a) ** 2 / np.pi
    assert pwhf.coulomb_bilinear(f, f, h) == pytest.approx(expected, rel=1e-13)


def test_direct_form_positive_on_random_densities(h):
    rng = np.random.default_rng(12)
    for _ in range(100):
        d = {}
        d[(0, 0, 0)] = complex(rng.normal())
        for _ in range(6):
            m = tuple(int(v) for v in rng.integers(-3, 4, size=3))
            if m == (0, 0, 0):
                continue
            val = rng.normal() + 1j * rng.normal()
            d[m] = d.get(m, 0) + val
            mm = (-m[0], -m[1], -m[2])
            d[mm] = d.get(mm, 0) + np.conj(val)
        f = coeffs(d)
        assert pwhf.coulomb_bilinear(f, f, h) >= 0.0


def test_direct_form_aligns_supports_by_zero_padding(h):
    f = coeffs({(0, 0, 0): 2.0, (1, 0, 0): 1.0, (-1, 0, 0): 1.0})
    g = coeffs({(0, 0, 0): 3.0})
    assert pwhf.coulomb_bilinear(f, g, h) == pytest.approx(6.0 * h, rel=1e-13)


# --- external_energy ---------------------------------------------------------


def test_external_uniform_neutral(h):
    Z = 2.0
    rho = coeffs({(0, 0, 0): Z})
    assert pwhf.external_energy(rho, Z, h) == pytest.approx(-Z * Z * h, rel=1e-13)


def test_external_smeared_approaches_point(h):
    rho = coeffs({(0, 0, 0): 1.0, (1, 0, 0): 0.2, (-1, 0, 0): 0.2})
    point = pwhf.external_energy(rho, 1.0, h)
    for sigma in (0.3, 0.1, 0.01, 1e-4):
        smeared = pwhf.external_energy(rho, 1.0, h, sigma=sigma)
        last = abs(smeared - point)
    assert last < 1e-6


def test_external_smeared_single_mode(h):
    # pair rho(+-2*pi*e1) = 1: contribution -Z*(1/pi)*exp(-sigma^2*(2*pi)^2/2)*2
    sigma, Z = 0.1, 1.5
    rho = coeffs({(1, 0, 0): 1.0, (-1, 0, 0): 1.0})
    expected = -Z * (1 / np.pi) * np.exp(-(sigma**2) * (2 * np.pi) ** 2 / 2) * 2
    assert pwhf.external_energy(rho, Z, h, sigma=sigma) == pytest.approx(expected, rel=1e-13)


def test_external_rejects_bad_sigma(h):
    rho = coeffs({(0, 0, 0): 1.0})
    with pytest.raises(InvalidParameterError):
        pwhf.external_energy(rho, 1.0, h, sigma=0.0)
    with pytest.raises(InvalidParameterError):
        pwhf.external_energy(rho, -1.0, h)


# --- exchange forms ----------------------------------------------------------


@pytest.fixture(scope="module")
def n2_setup():
    grid = pwhf.build_kgrid(2)
    bases = pwhf.build_bases(grid, ECUT_SMALL)
    return grid, bases, pwhf.singular_average(2), TransferTables(bases)


def test_exchange_positive_and_real_on_admissible(n2_setup):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(13)
    for _ in range(5):
        state = random_admissible(grid, bases, rng)
        x = pwhf.exchange_energy(state, state, corr, tables=tables)
        assert isinstance(x, float)
        assert x >= 0.0


def test_exchange_symmetric_bilinear(n2_setup):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(14)
    a = random_admissible(grid, bases, rng)
    b = random_admissible(grid, bases, rng)
    xab = pwhf.exchange_energy(a, b, corr, tables=tables)
    xba = pwhf.exchange_energy(b, a, corr, tables=tables)
    assert xab == pytest.approx(xba, rel=1e-10, abs=1e-12)


def test_exchange_uniform_rank_one_is_v0(uniform_rank_one, v0_unit):
    corr = pwhf.singular_average(1)
    x = pwhf.exchange_energy(uniform_rank_one, uniform_rank_one, corr)
    assert x == pytest.approx(v0_unit, rel=1e-13)


def test_exchange_rejects_grid_mismatch():
    grid = pwhf.build_kgrid(1)
    a = pwhf.zero_state(grid, pwhf.build_bases(grid, ECUT_SMALL))
    b = pwhf.zero_state(grid, pwhf.build_bases(grid, 1.0))
    with pytest.raises(InvalidParameterError):
        pwhf.exchange_energy(a, b, pwhf.singular_average(1))


def test_exchange_g_uniform_rank_one_equals_h_and_direct(uniform_rank_one, h):
    xg = pwhf.exchange_energy_G(uniform_rank_one, h)
    rho = pwhf.density_from_state(uniform_rank_one)
    D = pwhf.coulomb_bilinear(rho, rho, h)
    assert xg == pytest.approx(h, abs=1e-12)
    assert abs(xg - D) <= 1e-10


def test_exchange_g_zero_state(h):
    grid = pwhf.build_kgrid(1)
    bases = pwhf.build_bases(grid, ECUT_SMALL)
    assert pwhf.exchange_energy_G(pwhf.zero_state(grid, bases), h) == 0.0


def test_exchange_g_bounded_by_direct(n2_setup, h):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(15)
    for _ in range(10):
        state = random_admissible(grid, bases, rng)
        rho = pwhf.density_from_state(state)
        D = pwhf.coulomb_bilinear(rho, rho, h)
        XG = pwhf.exchange_energy_G(state, h, tables=tables)
        assert XG <= D + 1e-8


def test_exchange_g_momentum_matches_realspace(n2_setup, h):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(16)
    state = random_admissible(grid, bases, rng)
    a = pwhf.exchange_energy_G(state, h, method="momentum", tables=tables)
    b = pwhf.exchange_energy_G(state, h, method="realspace")
    assert a == pytest.approx(b, abs=1e-8)


def test_exchange_kernel_swap_matches_g_route(n2_setup, h):
    # replacing the transfer Coulomb factors by G coefficients inside the
    # W-form assembly must reproduce the G-kernel exchange exactly
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(17)
    state = random_admissible(grid, bases, rng)
    a = pwhf.exchange_energy(state, state, kernel="g", h=h, tables=tables)
    b = pwhf.exchange_energy_G(state, h, tables=tables)
    assert a == pytest.approx(b, abs=1e-10)


# --- total_energy ------------------------------------------------------------


def test_total_energy_zero_state(h):
    grid = pwhf.build_kgrid(1)
    bases = pwhf.build_bases(grid, ECUT_SMALL)
    e = pwhf.total_energy(pwhf.zero_state(grid, bases), 1.0, h, pwhf.singular_average(1))
    assert e.total == 0.0
    assert e.kinetic == e.external == e.hartree == e.exchange == 0.0


def test_total_energy_uniform_rank_one(uniform_rank_one, h, v0_unit):
    corr = pwhf.singular_average(1)
    e = pwhf.total_energy(uniform_rank_one, 1.0, h, corr, mode="hf")
    assert e.kinetic == 0.0
    assert e.external == pytest.approx(-h, rel=1e-13)
    assert e.hartree == pytest.approx(h / 2, rel=1e-13)
    assert e.exchange == pytest.approx(v0_unit / 2, rel=1e-13)
    assert e.total == pytest.approx(-h / 2 - v0_unit / 2, rel=1e-12)


def test_reduced_mode_drops_exactly_half_exchange(n2_setup, h):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(18)
    state = random_admissible(grid, bases, rng)
    e_hf = pwhf.total_energy(state, 1.0, h, corr, "hf", tables=tables)
    e_red = pwhf.total_energy(state, 1.0, h, corr, "reduced", tables=tables)
    x = pwhf.exchange_energy(state, state, corr, tables=tables)
    assert e_red.exchange == 0.0
    assert e_red.total - e_hf.total == pytest.approx(0.5 * x, rel=1e-12)
    assert e_hf.kinetic == e_red.kinetic


def test_energy_is_exactly_quadratic_along_segments(n2_setup, h):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(19)
    a = random_admissible(grid, bases, rng, occ_lo=0.2, occ_hi=0.8)
    b = random_admissible(grid, bases, rng, occ_lo=0.2, occ_hi=0.8)
    delta = pwhf.lincomb(1.0, b, -1.0, a)
    fock = pwhf.assemble_fock(a, 1.0, h, corr, "hf", tables=tables)
    slope = pwhf.fock_trace(fock, delta)
    rho_d = pwhf.density_from_state(delta)
    curv = pwhf.coulomb_bilinear(rho_d, rho_d, h) - pwhf.exchange_energy(
        delta, delta, corr, tables=tables
    )
    e0 = pwhf.total_energy(a, 1.0, h, corr, "hf", tables=tables).total
    for t in (0.15, 0.6, 1.0):
        direct = pwhf.total_energy(
            pwhf.lincomb(1.0, a, t, delta), 1.0, h, corr, "hf", tables=tables
        ).total
        model = e0 + t * slope + 0.5 * t * t * curv
        assert direct == pytest.approx(model, abs=1e-10)


def test_hartree_and_exchange_nonnegative(n2_setup, h):
    grid, bases, corr, tables = n2_setup
    rng = np.random.default_rng(20)
    for _ in range(5):
        state = random_admissible(grid, bases, rng)
        e = pwhf.total_energy(state, 1.0, h, corr, "hf", tables=tables)
        assert e.hartree >= 0.0
        assert e.exchange >= 0.0


def test_total_energy_rejects_unknown_mode(uniform_rank_one, h):
    with pytest.raises(InvalidParameterError):
        pwhf.total_energy(uniform_rank_one, 1.0, h, pwhf.singular_average(1), mode="rhf")
