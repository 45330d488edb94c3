import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from husimi_esqpt.errors import GridResolutionError
from husimi_esqpt.phase_space import (
    DISK_AREA,
    PhasePoint,
    build_grid,
    cartesian_grid,
    check_resolution,
    closure_residual,
    coherent_amplitudes,
    coherent_overlap_closed_form,
    coherent_state,
    conj_amplitude_matrix,
    grid_for_spin,
    mandated_resolution,
    minimum_resolution,
    polar_grid,
    read_grid_binary,
    write_grid_binary,
    write_grid_text,
    zeta_from_pq,
)
from oracles import coherent_by_exponential, coherent_by_matrix_exponential, random_state

inside = st.tuples(st.floats(0, 0.999), st.floats(0, 2 * math.pi)).map(
    lambda rt: PhasePoint(2 * rt[0] * math.sin(rt[1]), 2 * rt[0] * math.cos(rt[1])))


def test_zeta_values():
    assert zeta_from_pq(0.0, 0.0) == 0
    assert abs(zeta_from_pq(0.0, 1.0) - 1 / math.sqrt(3)) < 1e-15
    z = zeta_from_pq(0.4, -1.1)
    assert abs(zeta_from_pq(-0.4, 1.1) + z) < 1e-15


@pytest.mark.parametrize("p,q", [(0.0, 2.0), (2.0, 0.0), (1.5, 1.5)])
def test_rim_rejected(p, q):
    with pytest.raises(ValueError):
        zeta_from_pq(p, q)
    with pytest.raises(ValueError):
        PhasePoint(p, q)


def test_origin_is_lowest_weight_state():
    vec = coherent_state(3, PhasePoint(0.0, 0.0))
    expected = np.zeros(7)
    expected[0] = 1.0
    assert np.array_equal(vec, expected)


@pytest.mark.parametrize("j", [0.5, 2, 7.5, 12])
@pytest.mark.parametrize("p,q", [(0.3, -0.9), (-1.2, 0.4), (0.0, 1.7)])
def test_coherent_state_matches_exponential_oracle(j, p, q):
    vec = coherent_state(j, PhasePoint(p, q))
    assert np.max(np.abs(vec - coherent_by_exponential(j, p, q))) < 1e-12
    assert np.max(np.abs(vec - coherent_by_matrix_exponential(j, p, q))) < 1e-12


@given(inside)
def test_large_spin_normalization(pt):
    amps = coherent_amplitudes(200, pt)
    assert amps.norm_residual() < 1e-10
    assert abs(np.linalg.norm(amps.vector()) - 1.0) < 1e-10


def test_extreme_spin_stays_finite():
    vec = coherent_state(500, PhasePoint(0.01, 1.9999))
    assert np.all(np.isfinite(vec))
    assert abs(np.linalg.norm(vec) - 1.0) < 1e-10


@given(inside, inside)
def test_overlap_closed_form(a, b):
    j = 10
    direct = abs(np.vdot(coherent_state(j, a), coherent_state(j, b))) ** 2
    assert abs(direct - coherent_overlap_closed_form(j, a, b)) < 1e-10


def test_overlap_decays_along_rays(rng):
    j = 6
    for _ in range(20):
        p0, q0 = rng.uniform(-1, 1, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        ref = coherent_state(j, PhasePoint(p0, q0))
        # walk outward along the ray until the disk edge
        reach = []
        for s in np.linspace(0, 2.0, 200):
            p, q = p0 + s * np.sin(angle), q0 + s * np.cos(angle)
            if p * p + q * q >= 3.99:
                break
            reach.append(abs(np.vdot(ref, coherent_state(j, PhasePoint(p, q)))) ** 2)
        assert np.all(np.diff(reach) <= 1e-12)


@pytest.mark.parametrize("grid", [polar_grid(3, 5), polar_grid(40, 90), cartesian_grid(0.05), cartesian_grid(0.2)])
def test_weights_cover_disk(grid):
    assert abs(math.fsum(grid.weights) - DISK_AREA) < 1e-8 * DISK_AREA
    assert abs(grid.integrate(np.ones(grid.size)) - DISK_AREA) < 1e-8
    assert np.all(grid.p**2 + grid.q**2 < 4.0)


def test_polar_nodes_are_gauss_legendre_in_u():
    g = polar_grid(7, 12)
    x, _ = np.polynomial.legendre.leggauss(7)
    assert np.allclose(g.u_nodes, 0.5 * (x + 1))
    assert np.allclose(g.u, np.repeat(g.u_nodes, 12))
    assert np.allclose(g.theta_nodes, 2 * np.pi * np.arange(12) / 12)


@pytest.mark.parametrize("j", [5, 50])
def test_closure_on_mandated_grid(j):
    grid = grid_for_spin(j)
    assert closure_residual(grid, j) < (1e-8 if j == 5 else 1e-6)


def test_closure_breaks_on_coarse_grid():
    j = 5
    fine = closure_residual(grid_for_spin(j), j)
    coarse = closure_residual(polar_grid(3, 22), j)
    assert coarse > 1e6 * fine


def test_random_state_normalization_j50(rng):
    j = 50
    grid = grid_for_spin(j)
    amp = conj_amplitude_matrix(j, grid)
    for _ in range(5):
        psi = random_state(rng, 101)
        q = np.abs(amp @ psi) ** 2
        assert abs((2 * j + 1) / DISK_AREA * grid.integrate(q) - 1.0) < 1e-8


def test_resolution_rules():
    assert minimum_resolution(10) == (11, 42)
    assert mandated_resolution(10) == (22, 44)
    assert minimum_resolution(2.5) == (4, 12)
    with pytest.raises(GridResolutionError):
        build_grid("polar-gauss", 5, 42, j=10)
    build_grid("polar-gauss", 5, 42, j=10, override=True)
    with pytest.raises(GridResolutionError):
        check_resolution(cartesian_grid(0.05), 2)
    with pytest.raises(GridResolutionError):
        cartesian_grid(0.0)
    with pytest.raises(ValueError):
        build_grid("hexagonal")


def test_binary_grid_roundtrip(tmp_path):
    grid = polar_grid(6, 10)
    extra = np.arange(grid.size, dtype=float)
    path = write_grid_binary(grid, tmp_path / "g.hqg", extra=extra)
    back, data = read_grid_binary(path)
    assert np.array_equal(back.p, grid.p) and np.array_equal(back.weights, grid.weights)
    assert np.array_equal(data[0], extra)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    (tmp_path / "bad.hqg").write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        read_grid_binary(tmp_path / "bad.hqg")
    cart = cartesian_grid(0.25)
    back, _ = read_grid_binary(write_grid_binary(cart, tmp_path / "c.hqg"))
    assert np.array_equal(back.q, cart.q) and back.scheme == "cartesian-masked"


def test_text_grid_export(tmp_path):
    grid = polar_grid(2, 3)
    table = np.loadtxt(write_grid_text(grid, tmp_path / "g.txt"))
    assert np.array_equal(table[:, 2], grid.weights)
