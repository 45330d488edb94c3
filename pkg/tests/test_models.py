import numpy as np
import pytest

from husimi_esqpt.models import (
    CoupledTopSpec,
    LipkinSpec,
    coupled_top_hamiltonian,
    density_of_states,
    dos_derivative,
    lipkin_hamiltonian,
    local_extrema,
    spectrum,
)


@pytest.mark.parametrize("N", [0, 3, 7.5, -2])
def test_lipkin_rejects_bad_size(N):
    with pytest.raises(ValueError):
        LipkinSpec(N, 0.4)


def test_spec_validation():
    with pytest.raises(ValueError):
        LipkinSpec(10, 1.5)
    with pytest.raises(ValueError):
        CoupledTopSpec(2.5, 1.0)
    with pytest.raises(ValueError):
        CoupledTopSpec(0, 1.0)
    with pytest.raises(ValueError):
        CoupledTopSpec(3, -0.1)
    with pytest.raises(ValueError):
        lipkin_hamiltonian(LipkinSpec(4, 0.2), "V++")
    assert LipkinSpec(40, 0.4).j == 20


def test_lipkin_limits():
    assert np.allclose(spectrum(lipkin_hamiltonian(LipkinSpec(4, 1.0), "full")), [0, 1, 2, 3, 4])
    assert np.allclose(spectrum(lipkin_hamiltonian(LipkinSpec(4, 0.0), "full")), [-4, -4, -1, -1, 0])


def test_lipkin_two_spins_by_hand():
    # N = 2: j = 1, Jx^2 = [[1/2, 0, 1/2], [0, 1, 0], [1/2, 0, 1/2]]
    k = 0.3
    jx2 = np.array([[0.5, 0, 0.5], [0, 1, 0], [0.5, 0, 0.5]])
    expected = -2 * (1 - k) * jx2 + k * np.diag([0.0, 1.0, 2.0])
    assert np.allclose(lipkin_hamiltonian(LipkinSpec(2, k), "full").matrix, expected)


@pytest.mark.parametrize("N,kappa", [(20, 0.4), (40, 0.9), (30, 0.1)])
def test_lipkin_parity_decomposition(N, kappa):
    spec = LipkinSpec(N, kappa)
    full = spectrum(lipkin_hamiltonian(spec, "full"))
    even = spectrum(lipkin_hamiltonian(spec, "even"))
    odd = spectrum(lipkin_hamiltonian(spec, "odd"))
    assert even.size == N // 2 + 1
    assert np.max(np.abs(np.sort(np.concatenate([even, odd])) - full)) < 1e-9
    assert abs(even[0] - full[0]) < 1e-9 * max(1.0, abs(full[0]))


def test_lipkin_ground_energy_size_trend():
    # E0 / (2j) approaches the mean-field value -5/12 from below, so it rises with N
    # while E0 itself keeps falling
    sizes = (20, 40, 80)
    e0 = [spectrum(lipkin_hamiltonian(LipkinSpec(N, 0.4)))[0] for N in sizes]
    per_site = [e / N for e, N in zip(e0, sizes)]
    assert e0[0] >= e0[1] >= e0[2]
    assert per_site[0] <= per_site[1] <= per_site[2] <= -5 / 12


def test_coupled_top_decoupled():
    levels = spectrum(coupled_top_hamiltonian(CoupledTopSpec(1, 0.0), "full"))
    assert np.allclose(levels, [-2, -1, -1, 0, 0, 0, 1, 1, 2])


@pytest.mark.parametrize("j", [1, 2, 4, 6])
def test_coupled_top_sector_union(j):
    spec = CoupledTopSpec(j, 1.7)
    full = spectrum(coupled_top_hamiltonian(spec, "full"))
    parts = [spectrum(coupled_top_hamiltonian(spec, s)) for s in ("V++", "V+-", "V-+", "V--")]
    assert parts[0].size == (j + 1) ** 2
    assert np.max(np.abs(np.sort(np.concatenate(parts)) - full)) < 1e-9
    assert abs(parts[0][0] - full[0]) < 1e-9


def test_coupled_top_sector_dimension():
    assert coupled_top_hamiltonian(CoupledTopSpec(7, 3.0)).dim == 64


def test_coupled_top_ground_energy_near_fixed_point():
    j = 30
    e0 = spectrum(coupled_top_hamiltonian(CoupledTopSpec(j, 3.0)))[0] / j
    assert abs(e0 + 10 / 3) < 1.0 / j


def test_histogram_conserves_levels(rng):
    levels = np.sort(rng.normal(size=900))
    hist = density_of_states(levels, energy_scale=0.25, density_scale=3.0)
    assert abs(hist.integral() - 900) / 900 < 1e-3
    assert np.all(hist.density >= 0)
    assert hist.density.size == 30


def test_histogram_rejects_few_bins():
    with pytest.raises(ValueError):
        density_of_states(np.linspace(0, 1, 50), bins=9)
    with pytest.raises(ValueError):
        density_of_states(np.linspace(0, 1, 64))


def _interior(hist, margin=12.0):
    c = hist.centers
    lo, hi = hist.bin_edges[0], hist.bin_edges[-1]
    pad = margin * hist.smoothing_width
    return (c > lo + pad) & (c < hi - pad)


def test_uniform_spectrum_is_flat():
    n = 10_000
    hist = density_of_states((np.arange(n) + 0.5) / n)
    inner = _interior(hist)
    assert np.max(np.abs(hist.density[inner] / n - 1.0)) < 0.05


def test_linear_density_has_constant_derivative():
    # levels with cumulative count n (x^2 - 1) / 3 on [1, 2], i.e. density 2 n x / 3
    n = 40_000
    x = np.sqrt(1.0 + 3.0 * (np.arange(n) + 0.5) / n)
    hist = density_of_states(x)
    d = dos_derivative(hist)
    inner = _interior(hist)
    assert np.max(np.abs(d.values[inner] / (2 * n / 3) - 1.0)) < 0.05


def test_symmetric_spectrum_gives_odd_derivative(rng):
    half = np.sort(rng.exponential(size=3000)) + 0.05
    levels = np.concatenate([-half[::-1], half])
    d = dos_derivative(density_of_states(levels))
    scale = np.max(np.abs(d.values))
    assert np.max(np.abs(d.values + d.values[::-1])) < 1e-9 * scale
    assert np.allclose(d.centers, -d.centers[::-1])


def test_local_extrema_tags():
    x = np.linspace(0, 2 * np.pi, 201)
    pos, _, tags = local_extrema(x, np.sin(x))
    assert tags == ["max", "min"]
    assert np.allclose(pos, [np.pi / 2, 3 * np.pi / 2], atol=0.04)


def test_lipkin_levels_collapse_near_zero():
    N = 1000
    levels = spectrum(lipkin_hamiltonian(LipkinSpec(N, 0.4))) / N
    hist = density_of_states(levels)
    assert abs(hist.centers[np.argmax(hist.density)]) <= 0.05
    near = np.count_nonzero(np.abs(levels) < 0.02)
    # a flat density over the full span would put 0.04 / span of the levels there
    assert near > 1.5 * 0.04 / (levels[-1] - levels[0]) * levels.size


@pytest.mark.slow
def test_coupled_top_density_derivative_extrema_large_spin():
    j = 70
    levels = spectrum(coupled_top_hamiltonian(CoupledTopSpec(j, 3.0)))
    hist = density_of_states(levels, energy_scale=1.0 / j)
    d = dos_derivative(hist)
    pos, _, _ = local_extrema(d.centers, d.values)
    for target in (-2.0, 2.0):
        assert np.min(np.abs(pos - target)) < 0.2
    inner = (hist.centers > -2) & (hist.centers < 2)
    dens = hist.density
    neighbours = 0.5 * (dens[:-2] + dens[2:])
    assert np.all(dens[1:-1][inner[1:-1]] <= 3.0 * neighbours[inner[1:-1]])
