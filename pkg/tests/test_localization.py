"""Simplex measures, dispersion, localization profile, and the dichotomy."""

import json
import math

import numpy as np
import pytest

from coagsim import dynamics, lattice, localization
from coagsim.dynamics import PopulationState, SourceSpec
from coagsim.localization import (
    CALIBRATED_DIMENSION_CONSTANT,
    DichotomyViolation,
    SimplexMeasure,
    dichotomy,
    dispersion,
    dispersion_moment_identity,
    effective_theta0,
    lambda_measure,
    localization_profile,
    write_profile_csv,
)


def loop_dispersion(measure):
    thetas, weights = measure.arrays()
    total = 0.0
    for i in range(len(weights)):
        for j in range(len(weights)):
            diff = thetas[i] - thetas[j]
            total += weights[i] * weights[j] * float(diff @ diff)
    return total


def random_measure(rng, d, atoms):
    thetas = rng.dirichlet(np.ones(d), size=atoms)
    weights = rng.dirichlet(np.ones(atoms))
    return SimplexMeasure.from_arrays(thetas, weights)


def test_simplex_measure_validation():
    with pytest.raises(ValueError):
        SimplexMeasure(())
    with pytest.raises(ValueError):
        SimplexMeasure((((0.5, 0.5), 0.5),))  # weights sum to 0.5
    with pytest.raises(ValueError):
        SimplexMeasure((((0.7, 0.7), 1.0),))  # off the simplex
    with pytest.raises(ValueError):
        SimplexMeasure((((1.0, 0.0), 1.5), ((0.0, 1.0), -0.5)))
    with pytest.raises(ValueError):
        SimplexMeasure((((1.0,), 0.5), ((0.0, 1.0), 0.5)))


def test_dispersion_closed_forms():
    point = SimplexMeasure((((0.3, 0.7), 1.0),))
    assert dispersion(point) == 0.0
    two = SimplexMeasure((((1.0, 0.0), 0.5), ((0.0, 1.0), 0.5)))
    assert dispersion(two) == 1.0  # 2 * (1/2)(1/2) * |e1 - e2|^2 = 1, exact
    w = 0.25
    skew = SimplexMeasure((((1.0, 0.0), w), ((0.0, 1.0), 1.0 - w)))
    assert dispersion(skew) == pytest.approx(2.0 * w * (1 - w) * 2.0, rel=1e-14)


def test_dispersion_matches_loop_and_moment_identity():
    rng = np.random.default_rng(11)
    for d, atoms in ((2, 17), (3, 23)):
        m = random_measure(rng, d, atoms)
        v = dispersion(m)
        assert v == pytest.approx(loop_dispersion(m), rel=1e-13)
        assert v == pytest.approx(dispersion_moment_identity(m), rel=1e-12)


def test_lambda_measure_merges_rays_and_normalizes():
    lat = lattice.LatticeIndex(2, 4)
    n = np.zeros(lat.size)
    n[lat.index_of((2, 0))] = 0.3
    n[lat.index_of((1, 1))] = 0.2
    n[lat.index_of((2, 2))] = 0.1  # same ray as (1, 1)
    n[lat.index_of((3, 1))] = 0.4
    state = PopulationState(lat, n)
    measure, Z = lambda_measure(state, 2.0)
    assert Z == pytest.approx(1.0)
    got = {theta: w for theta, w in measure.atoms}
    assert got[(1.0, 0.0)] == pytest.approx(0.3)
    assert got[(0.5, 0.5)] == pytest.approx(0.3)  # 0.2 + 0.1 merged
    assert got[(0.75, 0.25)] == pytest.approx(0.4)
    assert len(got) == 3


def test_lambda_measure_kernel_gamma_weighting():
    lat = lattice.LatticeIndex(1, 8)
    n = np.zeros(lat.size)
    n[lat.index_of((2,))] = 1.0
    n[lat.index_of((4,))] = 1.0
    state = PopulationState(lat, n)
    # gamma = 1 weights each size shell by |alpha|
    measure, Z = lambda_measure(state, 2.0, kernel_gamma=1.0)
    assert Z == pytest.approx(6.0)
    with pytest.raises(ValueError, match="empty tail"):
        lambda_measure(state, 5.0)


def test_localization_profile_point_mass_is_fully_concentrated():
    lat = lattice.LatticeIndex(2, 16)
    n = np.zeros(lat.size)
    for k in (1, 2, 4, 8):
        n[lat.index_of((k, k))] = 1.0 / k
    state = PopulationState(lat, n)
    src = SourceSpec((((1, 1), 1.0),))  # theta0 = (0.5, 0.5)
    prof = localization_profile(state, src, [2.0, 4.0, 8.0], epsilon=0.1)
    assert prof.theta0 == (0.5, 0.5)
    assert prof.concentration_fraction == (1.0, 1.0, 1.0)
    assert prof.dispersion == (0.0, 0.0, 0.0)
    assert prof.theta0_err_l1 == (0.0, 0.0, 0.0)
    assert prof.delta_star_90 == (0.0, 0.0, 0.0)
    assert prof.empty_radii == ()


def test_localization_profile_mass_weighted_fraction():
    lat = lattice.LatticeIndex(2, 8)
    n = np.zeros(lat.size)
    n[lat.index_of((2, 2))] = 3.0   # on theta0, size 4
    n[lat.index_of((8, 0))] = 0.5   # corner, size 8
    state = PopulationState(lat, n)
    src = SourceSpec((((1, 1), 1.0),))
    prof = localization_profile(state, src, [4.0], epsilon=0.1, b=0.5)
    # band [4, 8]: mass 3*4 = 12 on-target, 0.5*8 = 4 off-target
    assert prof.concentration_fraction[0] == pytest.approx(12.0 / 16.0)
    # species mass (10, 6), mean direction (0.625, 0.375), L1 error 0.25
    assert prof.theta0_err_l1[0] == pytest.approx(0.25, rel=1e-12)
    # 90% of band mass needs the corner atom at L1 distance 1.0
    assert prof.delta_star_90[0] == pytest.approx(1.0)


def test_localization_profile_flags_empty_bands():
    lat = lattice.LatticeIndex(2, 16)
    n = np.zeros(lat.size)
    n[lat.index_of((1, 1))] = 1.0
    state = PopulationState(lat, n)
    src = SourceSpec((((1, 1), 1.0),))
    prof = localization_profile(state, src, [2.0, 8.0], epsilon=0.2)
    assert prof.concentration_fraction[0] == pytest.approx(1.0)
    assert math.isnan(prof.concentration_fraction[1])
    assert prof.empty_radii == (8.0,)
    assert math.isnan(prof.dispersion[1])


def test_localization_profile_validation():
    lat = lattice.LatticeIndex(1, 4)
    state = PopulationState(lat, np.ones(lat.size))
    src = SourceSpec((((1,), 1.0),))
    with pytest.raises(ValueError):
        localization_profile(state, src, [2.0], epsilon=0.0)
    with pytest.raises(ValueError):
        localization_profile(state, src, [2.0], epsilon=0.1, b=1.0)


def test_effective_theta0_closed_form():
    lat = lattice.LatticeIndex(2, 8)
    n = np.zeros(lat.size)
    n[lat.index_of((3, 1))] = 2.0
    n[lat.index_of((1, 3))] = 1.0
    state = PopulationState(lat, n)
    theta_bar, spread = effective_theta0(state, [4.0, 4.0])
    np.testing.assert_allclose(theta_bar, [7.0 / 12.0, 5.0 / 12.0], rtol=1e-14)
    assert spread >= 0.0
    with pytest.raises(ValueError):
        effective_theta0(state, [7.0, 8.0])


def test_effective_theta0_exchange_symmetry(symmetric_run):
    state = symmetric_run["state"]
    theta_bar, _ = effective_theta0(state, [8.0, 32.0])
    np.testing.assert_allclose(theta_bar, [0.5, 0.5], atol=1e-12)


def test_dichotomy_two_atom_case_is_dispersed_exactly():
    two = SimplexMeasure((((1.0, 0.0), 0.5), ((0.0, 1.0), 0.5)))
    for eps, delta in ((0.05, 0.05), (0.1, 0.3), (0.3, 0.1)):
        result = dichotomy(two, eps, delta)
        assert result.branch == "dispersed"
        assert result.value == 1.0


def test_dichotomy_point_mass_is_covered():
    point = SimplexMeasure((((0.25, 0.75), 1.0),))
    result = dichotomy(point, 0.1, 0.1)
    assert result.branch == "covered"
    assert result.mass == pytest.approx(1.0)
    np.testing.assert_allclose(result.center, (0.25, 0.75), atol=0.1)


def test_dichotomy_d1_everything_is_covered():
    one = SimplexMeasure((((1.0,), 1.0),))
    assert dichotomy(one, 0.2, 0.2).branch == "covered"


def test_dichotomy_raises_when_constant_is_inflated():
    # genuinely spread measure: neither branch can hold at c_d = 1e9
    rng = np.random.default_rng(0)
    m = random_measure(rng, 2, 12)
    with pytest.raises(DichotomyViolation):
        dichotomy(m, 0.3, 0.3, c_d=1e9)


def test_dichotomy_validation():
    two = SimplexMeasure((((1.0, 0.0), 0.5), ((0.0, 1.0), 0.5)))
    with pytest.raises(ValueError):
        dichotomy(two, 0.0, 0.1)
    with pytest.raises(ValueError):
        dichotomy(two, 0.1, 1.0)
    with pytest.raises(ValueError):
        dichotomy(two, 0.1, 0.1, c_d=0.0)


def test_dichotomy_random_suite_at_shipped_constants():
    rng = np.random.default_rng(7)
    for d in (2, 3):
        assert CALIBRATED_DIMENSION_CONSTANT[d] > 0
        for _ in range(150):
            m = random_measure(rng, d, int(rng.integers(1, 8)))
            for eps in (0.05, 0.1, 0.3):
                for delta in (0.05, 0.1, 0.3):
                    result = dichotomy(m, eps, delta)
                    assert result.branch in ("covered", "dispersed")


def test_write_profile_csv_layout(tmp_path):
    lat = lattice.LatticeIndex(2, 8)
    n = np.ones(lat.size)
    state = PopulationState(lat, n)
    src = SourceSpec((((1, 0), 2.0), ((0, 1), 1.0)))
    prof = localization_profile(state, src, [2.0, 4.0], epsilon=0.15)
    path = tmp_path / "profile.csv"
    write_profile_csv(prof, path, {"epsilon": 0.15})
    lines = path.read_text().splitlines()
    assert json.loads(lines[0][len("# config: "):]) == {"epsilon": 0.15}
    assert lines[1].split(",") == [
        "R", "fraction_eps", "V", "theta0_err_l1", "delta_star_90", "delta_star_99"
    ]
    assert len(lines) == 2 + 2
