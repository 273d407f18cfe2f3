import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import pwhf
from pwhf.errors import InvalidParameterError


def test_gamma_point_grid():
    grid = pwhf.build_kgrid(1)
    assert len(grid) == 1
    np.testing.assert_allclose(grid[0].xi, 0.0)
    assert grid[0].weight == 1.0


def test_n2_grid_enumerated_by_hand():
    # shifted uniform mesh: components (2j + 1 - 2)*pi/2 for j in {0, 1}
    grid = pwhf.build_kgrid(2)
    assert len(grid) == 8
    pts = sorted(tuple(k.xi) for k in grid)
    expected = sorted(
        (a, b, c)
        for a in (-np.pi / 2, np.pi / 2)
        for b in (-np.pi / 2, np.pi / 2)
        for c in (-np.pi / 2, np.pi / 2)
    )
    np.testing.assert_allclose(pts, expected)
    assert all(k.weight == 1 / 8 for k in grid)


@given(n=st.integers(min_value=1, max_value=6))
@settings(max_examples=20, deadline=None)
def test_grid_weights_normalized_and_in_bz(n):
    grid = pwhf.build_kgrid(n)
    assert len(grid) == n**3
    assert abs(sum(k.weight for k in grid) - 1.0) < 1e-14
    for k in grid:
        assert np.all(k.xi >= -np.pi) and np.all(k.xi < np.pi)


@given(n=st.integers(min_value=1, max_value=5))
@settings(max_examples=10, deadline=None)
def test_grid_negation_symmetry(n):
    grid = pwhf.build_kgrid(n)
    pts = {tuple(np.round(k.xi, 12)) for k in grid}
    for k in grid:
        assert tuple(np.round(-k.xi, 12)) in pts


def test_grid_rejects_zero():
    with pytest.raises(InvalidParameterError):
        pwhf.build_kgrid(0)


def test_basis_gamma_small_cutoff_single_wave():
    # |2*pi*e_1|^2/2 = 2*pi^2 > 1, so only K = 0 survives
    grid = pwhf.build_kgrid(1)
    b = pwhf.build_basis(grid[0], 1.0)
    assert b.size == 1
    assert np.array_equal(b.mvecs, [[0, 0, 0]])


def test_basis_gamma_seven_vector_shell():
    grid = pwhf.build_kgrid(1)
    b = pwhf.build_basis(grid[0], 2 * np.pi**2 + 0.1)
    assert b.size == 7
    got = {tuple(m) for m in b.mvecs}
    expected = {(0, 0, 0)} | {
        tuple(s * np.eye(3, dtype=int)[i]) for i in range(3) for s in (+1, -1)
    }
    assert got == expected
    # K = 0 first (lowest kinetic), then the shell
    assert tuple(b.mvecs[0]) == (0, 0, 0)
    assert np.all(np.diff(b.kinetic) >= -1e-14)


def test_basis_cutoff_invariant_and_zero_included():
    for kp in pwhf.build_kgrid(3):
        b = pwhf.build_basis(kp, 9.0)
        assert np.all(b.kinetic <= 9.0 + 1e-12)
        if 0.5 * float(kp.xi @ kp.xi) <= 9.0:
            assert (0, 0, 0) in {tuple(m) for m in b.mvecs}


def test_basis_determinism():
    kp = pwhf.build_kgrid(2)[3]
    a = pwhf.build_basis(kp, 30.0)
    b = pwhf.build_basis(kp, 30.0)
    assert np.array_equal(a.mvecs, b.mvecs)


def test_basis_count_scales_like_ball_volume():
    grid = pwhf.build_kgrid(1)
    n1 = pwhf.build_basis(grid[0], 50.0).size
    n2 = pwhf.build_basis(grid[0], 200.0).size
    # quadrupling ecut doubles the radius: expect ~8x the count
    assert 5.5 < n2 / n1 < 10.5


def test_basis_rejects_nonpositive_cutoff():
    kp = pwhf.build_kgrid(1)[0]
    with pytest.raises(InvalidParameterError):
        pwhf.build_basis(kp, 0.0)
    with pytest.raises(InvalidParameterError):
        pwhf.build_basis(kp, -3.0)
