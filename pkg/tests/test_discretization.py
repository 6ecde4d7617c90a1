import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wvspace.discretization import (build_dictionary, build_direction_grid, build_offset_grid,
                                    direction_grid_size, minimal_budget, periodic_distance,
                                    planar_boundary_points)
from wvspace.exceptions import BudgetError


def brute_force_directions(d, k):
    """Every face vertex, normalized, deduplicated with a 1e-12 tolerance by greedy scan."""
    r = 2 ** k
    ticks = [-1 + 2 * i / r for i in range(r + 1)]
    pts = []
    for axis in range(d):
        for sign in (-1.0, 1.0):
            for rest in itertools.product(ticks, repeat=d - 1):
                v = list(rest)
                v.insert(axis, sign)
                v = np.array(v)
                pts.append(v / np.linalg.norm(v))
    pts = np.array(sorted(map(tuple, pts)))
    keep = [pts[0]]
    for p in pts[1:]:
        if all(np.abs(p - q).max() > 1e-12 for q in keep[-4 * d:]):
            keep.append(p)
    uniq = []
    for p in keep:
        if not any(np.abs(p - q).max() <= 1e-12 for q in uniq):
            uniq.append(p)
    return np.array(uniq)


def test_planar_grid_k1():
    g = build_direction_grid(2, 1)
    h = math.sqrt(2) / 2
    expected = {(1, 0), (-1, 0), (0, 1), (0, -1), (h, h), (h, -h), (-h, h), (-h, -h)}
    got = {tuple(np.round(p, 12) + 0.0) for p in g.points}
    assert got == {tuple(np.round(np.array(e, dtype=float), 12) + 0.0) for e in expected}


def test_planar_grid_k2_is_nested():
    coarse, fine = build_direction_grid(2, 1), build_direction_grid(2, 2)
    assert len(fine) == 16
    dist = np.abs(coarse.points[:, None, :] - fine.points[None, :, :]).max(axis=2).min(axis=1)
    assert dist.max() <= 1e-12


@pytest.mark.parametrize("d,k", [(2, 1), (2, 3), (3, 1), (3, 2), (4, 1)])
def test_grid_size_matches_brute_force(d, k):
    g = build_direction_grid(d, k)
    assert len(g) == len(brute_force_directions(d, k)) == direction_grid_size(d, k)


def test_d3_count_differs_from_face_accounting():
    # 2d 2^{k(d-1)} counts faces without their shared edges; the distinct set is larger
    assert len(build_direction_grid(3, 1)) == 26 != 2 * 3 * 2 ** 2


@pytest.mark.parametrize("d,k", [(3, 1), (3, 2), (4, 2)])
def test_nesting(d, k):
    a, b = build_direction_grid(d, k), build_direction_grid(d, k + 1)
    for row in a.lattice:
        assert b.lookup(2 * row) is not None


@pytest.mark.parametrize("d", [2, 3])
def test_quasi_uniform_spacing(d):
    bands = []
    for k in range(1, 5):
        nn = build_direction_grid(d, k).nearest_neighbor_distances() * 2 ** k
        bands.append((nn.min(), nn.max()))
    lo = min(b[0] for b in bands)
    hi = max(b[1] for b in bands)
    assert 0.3 < lo and hi < 3.0


def test_overflow_guard():
    with pytest.raises(OverflowError):
        build_direction_grid(6, 6, cap=10 ** 5)


def test_offset_grid_examples():
    np.testing.assert_allclose(build_offset_grid(2).points, [-0.5, 0.0, math.cos(math.pi / 4), 1.0],
                               atol=1e-15)
    expected = [-0.75, -0.5, -0.25, 0.0, 0.38268343236508984, 0.70710678118654757,
                0.92387953251128674, 1.0]
    np.testing.assert_allclose(build_offset_grid(4).points, expected, atol=1e-15)


@given(st.integers(2, 200))
def test_offset_grid_invariants(m):
    g = build_offset_grid(m)
    assert g.points[-1] == 1.0
    assert len(g) == 2 * m
    assert np.all(np.diff(g.points) > 0)
    assert g.spacing_violations() == []


@pytest.mark.parametrize("n,k,m,size", [(64, 1, 2, 32), (127, 1, 2, 32), (128, 2, 4, 128)])
def test_dictionary_sizing(n, k, m, size):
    D = build_dictionary(2, n)
    assert (D.k, D.m, len(D)) == (k, m, size)


def test_dictionary_budget_errors():
    with pytest.raises(BudgetError):
        build_dictionary(2, 31)
    # 4d 2^d = 96 admits k = 1 by the sizing rule, but |W_1| 2m = 104 atoms do not fit
    with pytest.raises(BudgetError):
        build_dictionary(3, 96)


@given(st.integers(2, 4), st.integers(0, 3), st.integers(0, 5000))
def test_dictionary_never_exceeds_budget(d, extra, slack):
    n = minimal_budget(d, 1) * (1 + extra) + slack
    D = build_dictionary(d, n)
    assert len(D) <= n
    assert len(D) == len(D.directions) * 2 * D.m


def test_minimal_budget_selects_level():
    for d, k in [(2, 1), (2, 3), (3, 2), (3, 3)]:
        assert build_dictionary(d, minimal_budget(d, k)).k == k


def test_dictionary_json_export():
    D = build_dictionary(2, 64)
    blob = json.loads(D.to_json())
    assert blob["k"] == 1 and len(blob["atoms"]) == len(D)
    i, j = blob["atoms"][5]
    atoms = D.atoms
    assert np.allclose(atoms.directions[5], blob["directions"][i])
    assert atoms.offsets[5] == blob["offsets"][j]


def test_planar_boundary_points():
    np.testing.assert_allclose(planar_boundary_points(4), [[1, 0], [0, 1], [-1, 0], [0, -1]],
                               atol=1e-15)
    np.testing.assert_allclose(planar_boundary_points(8)[1], [math.sqrt(2) / 2] * 2, atol=1e-15)
    with pytest.raises(ValueError):
        planar_boundary_points(5)


@given(st.integers(2, 100).map(lambda v: 2 * v))
def test_periodic_distance_wraps(m):
    assert periodic_distance(0, m - 1, m) == 1
    assert periodic_distance(0, m // 2, m) == m // 2
