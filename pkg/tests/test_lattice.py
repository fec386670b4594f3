"""Lattice enumeration, indexing, and shell aggregation."""

import itertools
import math

import numpy as np
import pytest

from coagsim import dynamics, lattice
from coagsim.lattice import (
    Composition,
    LatticeIndex,
    PolarPoint,
    enumerate_lattice,
    shell_sum,
    to_polar,
)


def brute_points(d, n_max):
    pts = [
        alpha
        for alpha in itertools.product(range(n_max + 1), repeat=d)
        if 1 <= sum(alpha) <= n_max
    ]
    pts.sort(key=lambda a: (sum(a), a))
    return pts


@pytest.mark.parametrize("d,n_max", [(1, 7), (2, 6), (3, 5), (2, 1), (3, 1)])
def test_enumeration_matches_brute_force(d, n_max):
    lat = enumerate_lattice(d, n_max)
    expected = brute_points(d, n_max)
    assert lat.size == len(expected) == math.comb(n_max + d, d) - 1
    assert [tuple(row) for row in lat.compositions] == expected


@pytest.mark.parametrize("d,n_max", [(1, 9), (2, 8), (3, 6)])
def test_index_of_is_inverse_of_enumeration(d, n_max):
    lat = LatticeIndex(d, n_max)
    idx = lat.index_of(lat.compositions)
    assert np.array_equal(idx, np.arange(lat.size))
    # single-composition path
    assert lat.index_of(tuple(lat.compositions[-1])) == lat.size - 1


def test_index_of_oversize_maps_to_minus_one():
    lat = LatticeIndex(2, 4)
    assert lat.index_of((3, 2)) == -1
    mixed = lat.index_of(np.array([[1, 0], [4, 4], [2, 2]]))
    assert list(mixed) == [lat.index_of((1, 0)), -1, lat.index_of((2, 2))]


def test_index_of_rejects_origin_and_negative():
    lat = LatticeIndex(2, 4)
    with pytest.raises(ValueError):
        lat.index_of((0, 0))
    with pytest.raises(ValueError):
        lat.index_of((-1, 2))
    with pytest.raises(ValueError):
        lat.index_of((1, 2, 3))


def test_shells_are_contiguous_and_ordered():
    lat = LatticeIndex(3, 7)
    for s in range(1, 8):
        rng = lat.shell_range(s)
        assert np.all(lat.sizes[rng.start : rng.stop] == s)
    assert lat.shell_starts[-1] == lat.size
    with pytest.raises(ValueError):
        lat.shell_range(0)
    with pytest.raises(ValueError):
        lat.shell_range(8)


def test_constructor_validation():
    with pytest.raises(ValueError):
        LatticeIndex(0, 5)
    with pytest.raises(ValueError):
        LatticeIndex(4, 5)
    with pytest.raises(ValueError):
        LatticeIndex(1, 0)
    with pytest.raises(ValueError):
        LatticeIndex(3, 500, memory_budget=1024)


def test_arrays_are_immutable():
    lat = LatticeIndex(2, 3)
    with pytest.raises(ValueError):
        lat.compositions[0, 0] = 9
    with pytest.raises(ValueError):
        lat.sizes[0] = 9


def test_composition_algebra():
    a = Composition((1, 2))
    b = Composition((0, 3))
    assert (a + b).counts == (1, 5)
    assert a.size == 3 and a.d == 2
    with pytest.raises(ValueError):
        Composition((0, 0))
    with pytest.raises(ValueError):
        Composition((-1, 1))
    with pytest.raises(ValueError):
        a + Composition((1, 1, 1))


def test_to_polar_splits_size_and_direction():
    p = to_polar((2, 6))
    assert p.r == 8.0
    assert p.theta == (0.25, 0.75)
    assert to_polar(Composition((3,))).theta == (1.0,)
    with pytest.raises(ValueError):
        to_polar((0, 0))
    with pytest.raises(ValueError):
        PolarPoint(1.0, (0.7, 0.7))
    with pytest.raises(ValueError):
        PolarPoint(0.0, (1.0,))


def test_shell_sum_matches_direct_summation():
    lat = LatticeIndex(2, 12)
    rng = np.random.default_rng(3)
    n = rng.random(lat.size)
    state = dynamics.PopulationState(lat, n)
    for lo, hi, q in [(1, 12, 0.0), (3, 7, 1.0), (2.5, 9.7, -0.5), (5, 5, 2.0)]:
        mask = (lat.sizes >= math.ceil(lo)) & (lat.sizes <= math.floor(hi))
        expected = float(np.sum(n[mask] * lat.sizes[mask].astype(float) ** q))
        assert shell_sum(state, lo, hi, q) == pytest.approx(expected, rel=1e-13)


def test_shell_sum_empty_and_invalid_ranges():
    lat = LatticeIndex(1, 5)
    state = dynamics.PopulationState(lat, np.ones(lat.size))
    # span beyond n_max contributes nothing
    assert shell_sum(state, 6, 50) == 0.0
    assert shell_sum(state, 2.2, 2.8) == 0.0
    with pytest.raises(ValueError):
        shell_sum(state, 0.0, 3.0)
    with pytest.raises(ValueError):
        shell_sum(state, 4.0, 2.0)


def test_flat_indices_embed_into_dense_grid():
    lat = LatticeIndex(2, 5)
    grid = np.zeros(lat.grid_shape)
    grid.ravel()[lat.flat_indices] = np.arange(1, lat.size + 1)
    for i, alpha in enumerate(lat.compositions):
        assert grid[tuple(alpha)] == i + 1
