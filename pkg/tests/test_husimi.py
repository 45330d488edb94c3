import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from husimi_esqpt.errors import GridResolutionError
from husimi_esqpt.husimi import (
    antipodal_permutation,
    bridges_antipodes,
    coherent_wehrl_entropy,
    count_peaks,
    husimi_of_factors,
    husimi_of_state,
    husimi_values,
    localization_measures,
    marginal_measures,
    marginals,
    maximally_mixed,
    second_moment,
    second_moment_bound,
    superlevel_components,
    wehrl_entropy,
)
from husimi_esqpt.phase_space import (
    PhasePoint,
    cartesian_grid,
    coherent_state,
    even_coherent_state,
    grid_for_spin,
    polar_grid,
)
from husimi_esqpt.spin_algebra import SpinBasis, parity_diagonal
from oracles import disk_integral, husimi_point, random_density, random_state

# W of a coherent state at j = 10, from the 4x-refined quadrature (frozen)
COHERENT_W_J10 = 0.9523809523809523


def test_field_values_match_exponential_oracle(rng):
    j = 3
    grid = grid_for_spin(j)
    rho = random_density(rng, 7, rank=3)
    field = husimi_of_state(rho, grid)
    idx = rng.choice(grid.size, size=25, replace=False)
    for i in idx:
        assert abs(field.values[i] - husimi_point(j, grid.p[i], grid.q[i], rho)) < 1e-12


@pytest.mark.parametrize("j", [2, 7.5, 20])
def test_three_evaluation_paths_agree(rng, j):
    dim = int(2 * j + 1)
    grid = grid_for_spin(j)
    factors = rng.normal(size=(dim, 4)) + 1j * rng.normal(size=(dim, 4))
    factors /= np.linalg.norm(factors)
    rho = factors @ factors.conj().T
    from_vectors = husimi_values(j, grid, vectors=factors)
    from_density = husimi_values(j, grid, rho=rho)
    # a cartesian grid goes through the generic point evaluator
    cart = cartesian_grid(0.3)
    generic = husimi_values(j, cart, vectors=factors)
    assert np.max(np.abs(from_vectors - from_density)) < 1e-13
    assert np.max(np.abs(generic - husimi_values(j, cart, rho=rho))) < 1e-13


@pytest.mark.parametrize("j", [10, 50, 200])
def test_normalization_random_states(rng, j):
    grid = grid_for_spin(j)
    for _ in range(5):
        field = husimi_of_state(random_state(rng, int(2 * j + 1)), grid)
        assert field.norm_residual < 1e-6
        assert np.all(field.values >= 0) and np.all(field.values <= 1 + 1e-12)


def test_measures_against_adaptive_quadrature(rng):
    j = 2
    psi = random_state(rng, 5)
    rho = np.outer(psi, psi.conj())
    field = husimi_of_state(psi, grid_for_spin(j))
    pref = (2 * j + 1) / (4 * np.pi)
    norm = pref * disk_integral(lambda p, q: husimi_point(j, p, q, rho))
    m2 = pref * disk_integral(lambda p, q: husimi_point(j, p, q, rho) ** 2)
    assert abs(norm - 1.0) < 1e-9
    assert abs(second_moment(field) - m2) < 1e-9


@pytest.mark.parametrize("j", [1, 2.5])
def test_coherent_second_moment_oracle(j):
    # adaptive quadrature of the closed-form overlap to the fourth power
    pref = (2 * j + 1) / (4 * np.pi)
    oracle = pref * disk_integral(lambda p, q: (1 - (p * p + q * q) / 4) ** (4 * j))
    assert abs(oracle - second_moment_bound(j)) < 1e-9


@pytest.mark.parametrize("j", [10, 50])
def test_coherent_state_measures(j):
    pt = PhasePoint(0.7, -1.1)
    field = husimi_of_state(coherent_state(j, pt), grid_for_spin(j))
    assert abs(second_moment(field) - (2 * j + 1) / (4 * j + 1)) < 1e-8
    fine = husimi_of_state(coherent_state(j, pt), grid_for_spin(j, factor=4))
    assert abs(wehrl_entropy(field) - wehrl_entropy(fine)) < 1e-8
    assert abs(wehrl_entropy(fine) - coherent_wehrl_entropy(j)) < 1e-8


def test_coherent_entropy_frozen_value():
    field = husimi_of_state(coherent_state(10, PhasePoint(0.2, 0.3)), grid_for_spin(10, factor=4))
    assert abs(wehrl_entropy(field) - COHERENT_W_J10) < 1e-10
    # the minimum quoted as j / (j + 1) does not hold under this normalization
    assert abs(COHERENT_W_J10 - 10 / 11) > 0.04


@pytest.mark.parametrize("j", [3, 10])
def test_maximally_mixed(j):
    field = husimi_of_state(maximally_mixed(j), grid_for_spin(j))
    assert np.max(np.abs(field.values - 1 / (2 * j + 1))) < 1e-12
    assert abs(second_moment(field) - 1 / (2 * j + 1)) < 1e-10
    assert abs(wehrl_entropy(field) - math.log(2 * j + 1)) < 1e-10


def test_peak_sits_at_nearest_node():
    j = 12
    grid = grid_for_spin(j)
    pt = PhasePoint(-0.8, 0.9)
    field = husimi_of_state(coherent_state(j, pt), grid)
    nearest = np.argmin((grid.p - pt.p) ** 2 + (grid.q - pt.q) ** 2)
    assert np.argmax(field.values) == nearest


def test_even_coherent_state_has_antipodal_twin_peaks():
    j = 20
    grid = grid_for_spin(j)
    field = husimi_of_state(even_coherent_state(j, PhasePoint(0.0, 1.3)), grid)
    perm = antipodal_permutation(grid)
    assert np.max(np.abs(field.values - field.values[perm])) < 1e-13
    top = np.argmax(field.values)
    assert abs(field.values[top] - field.values[perm[top]]) < 1e-13
    assert superlevel_components(field, 0.2) == 2


@given(st.integers(0, 2**31 - 1))
def test_even_states_are_antipodally_symmetric(seed):
    rng = np.random.default_rng(seed)
    j = 6
    psi = random_state(rng, 13) * (parity_diagonal(SpinBasis(j)) > 0)
    psi /= np.linalg.norm(psi)
    field = husimi_of_state(psi, grid_for_spin(j))
    assert np.max(np.abs(field.values - field.values[antipodal_permutation(field.grid)])) < 1e-13


def test_input_validation(rng):
    grid = grid_for_spin(3)
    with pytest.raises(ValueError):
        husimi_of_state(2 * random_state(rng, 7), grid)
    bad = np.diag([0.6, 0.6, -0.2, 0, 0, 0, 0])
    with pytest.raises(ValueError):
        husimi_of_state(bad, grid)
    with pytest.raises(ValueError):
        husimi_of_state(np.eye(7) / 6, grid)
    with pytest.raises(GridResolutionError):
        husimi_of_state(random_state(rng, 7), polar_grid(2, 8))
    with pytest.raises(ValueError):
        husimi_of_factors(np.ones((7, 2)), grid)


def test_override_accepts_coarse_grid(rng):
    psi = random_state(rng, 21)
    field = husimi_of_state(psi, polar_grid(3, 12), override_grid_check=True)
    # the residual is recorded rather than enforced once the check is overridden
    assert field.norm_residual > 1e-6


def test_bounds_on_random_pure_states(rng):
    j = 20
    grid = grid_for_spin(j)
    states = rng.normal(size=(41, 1000)) + 1j * rng.normal(size=(41, 1000))
    states /= np.linalg.norm(states, axis=0)
    ln_dim = math.log(41)
    for k in range(states.shape[1]):
        field = husimi_of_state(states[:, k], grid)
        m2, w = second_moment(field), wehrl_entropy(field)
        assert 0 <= m2 <= 0.5 + 1e-6
        assert coherent_wehrl_entropy(j) - 1e-9 <= w <= ln_dim + 1e-6


def test_mixing_convexity(rng):
    j = 10
    grid = grid_for_spin(j)
    for _ in range(5):
        r1, r2 = random_density(rng, 21, 2), random_density(rng, 21, 3)
        lams = np.linspace(0, 1, 11)
        m2 = [second_moment(husimi_of_state(l * r1 + (1 - l) * r2, grid)) for l in lams]
        w = [wehrl_entropy(husimi_of_state(l * r1 + (1 - l) * r2, grid)) for l in lams]
        assert np.all(np.diff(m2, 2) >= -1e-12)
        assert np.all(np.diff(w, 2) <= 1e-12)


def test_separated_mixture_halves_second_moment():
    j = 20
    grid = grid_for_spin(j)
    a = coherent_state(j, PhasePoint(0.0, 1.5))
    b = coherent_state(j, PhasePoint(0.0, -1.5))
    mix = 0.5 * (np.outer(a, a.conj()) + np.outer(b, b.conj()))
    single = second_moment(husimi_of_state(a, grid))
    assert abs(second_moment(husimi_of_state(mix, grid)) / single - 0.5) < 1e-3


def test_separated_mixture_adds_ln2_entropy():
    j = 50
    grid = grid_for_spin(j)
    a = coherent_state(j, PhasePoint(0.0, 1.4))
    b = coherent_state(j, PhasePoint(0.0, -1.4))
    mix = 0.5 * (np.outer(a, a.conj()) + np.outer(b, b.conj()))
    gain = wehrl_entropy(husimi_of_state(mix, grid)) - wehrl_entropy(husimi_of_state(a, grid))
    assert abs(gain / math.log(2) - 1.0) < 0.01


@pytest.mark.parametrize("j", [5, 30])
def test_marginal_normalization(rng, j):
    field = husimi_of_state(random_state(rng, 2 * j + 1), grid_for_spin(j))
    qm, pm = marginals(field)
    assert abs(qm.normalization() - 1.0) < 1e-6
    assert abs(pm.normalization() - 1.0) < 1e-6


def test_maximally_mixed_marginal_is_chord_profile():
    j = 8
    qm, pm = marginals(husimi_of_state(maximally_mixed(j), grid_for_spin(j)))
    pref = math.sqrt((2 * j + 1) / (4 * math.pi))
    chord = pref * 2 * np.sqrt(4 - qm.nodes**2) / (2 * j + 1)
    assert np.max(np.abs(qm.values - chord)) < 1e-12
    assert abs(qm.wehrl_entropy() - pm.wehrl_entropy()) < 1e-9


def test_even_state_marginals_are_even(rng):
    j = 9.5
    psi = random_state(rng, 20) * (parity_diagonal(SpinBasis(j)) > 0)
    psi /= np.linalg.norm(psi)
    qm, pm = marginals(husimi_of_state(psi, grid_for_spin(j)))
    # GL nodes are symmetric, so reversing the array reflects x -> -x
    assert np.allclose(qm.nodes, -qm.nodes[::-1])
    assert np.max(np.abs(qm.values - qm.values[::-1])) < 1e-9
    assert np.max(np.abs(pm.values - pm.values[::-1])) < 1e-9


def test_product_defect_shrinks_with_size():
    defects = []
    for j in (10, 20, 40):
        field = husimi_of_state(coherent_state(j, PhasePoint(0.3, -0.5)), grid_for_spin(j))
        mm = marginal_measures(*marginals(field), field=field)
        defects.append(mm.delta_W)
    assert defects[0] > defects[1] > defects[2]


def test_localization_measures_bundle(rng):
    field = husimi_of_state(random_state(rng, 11), grid_for_spin(5))
    lm = localization_measures(field, with_marginals=True)
    assert lm.M2 == second_moment(field) and lm.W == wehrl_entropy(field)
    assert lm.M2_q is not None and lm.W_p is not None


def test_peak_counting():
    j = 20
    single = husimi_of_state(coherent_state(j, PhasePoint(0.0, 1.2)), grid_for_spin(j))
    double = husimi_of_state(even_coherent_state(j, PhasePoint(0.0, 1.2)), grid_for_spin(j))
    assert count_peaks(marginals(single)[0]) == 1
    assert count_peaks(marginals(double)[0]) == 2
    assert superlevel_components(single) == 1


def test_antipodal_bridging():
    j = 20
    g = grid_for_spin(j)
    double = husimi_of_state(even_coherent_state(j, PhasePoint(0.0, 1.2)), g)
    assert not bridges_antipodes(double, 0.2)
    assert bridges_antipodes(husimi_of_state(maximally_mixed(j), g), 0.5)
    # a packet at the origin is its own antipode
    assert bridges_antipodes(husimi_of_state(coherent_state(j, PhasePoint(0.0, 0.0)), g), 0.2)
