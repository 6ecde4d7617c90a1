"""Direction grids on the sphere, graded offset grids and the finite dictionary.

Directions come from the dyadic vertices of the faces of [-1, 1]^d pushed to the
sphere.  Offsets are uniform on [-1, 0] and cosine-graded on [0, 1], so they
cluster near t = 1 where atoms have small support.
"""
import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import BudgetError
from .geometry import AtomCombination, TOL

logger = logging.getLogger(__name__)

DIRECTION_CAP = 10 ** 7


@dataclass(frozen=True, eq=False)
class DirectionGrid:
    """Unit directions W_k.

    ``lattice`` holds the integer cube coordinates of each point, scaled by 2^k, so
    point = lattice / ||lattice||.
    """

    k: int
    dim: int
    points: np.ndarray
    lattice: np.ndarray

    def __len__(self):
        return len(self.points)

    @property
    def resolution(self):
        return 2 ** self.k

    def lookup(self, lattice_vector):
        """Row index of an integer cube vertex, or None."""
        return self._index().get(tuple(int(v) for v in lattice_vector))

    def _index(self):
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {tuple(row): i for i, row in enumerate(self.lattice.tolist())}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def nearest_neighbor_distances(self):
        """Euclidean distance from each point to its nearest other point."""
        from scipy.spatial import cKDTree

        dist, _ = cKDTree(self.points).query(self.points, k=2)
        return dist[:, 1]


def direction_grid_size(d, k):
    """Number of distinct vertices on the surface of the cube: (2^k+1)^d - (2^k-1)^d."""
    return (2 ** k + 1) ** d - (2 ** k - 1) ** d


@lru_cache(maxsize=32)
def build_direction_grid(d, k, cap=DIRECTION_CAP):
    """Dyadic face vertices of [-1,1]^d with 2^k intervals per axis, normalized.

    Duplicates shared by several faces are removed on the exact integer lattice,
    which is equivalent to a 1e-12 tolerance after normalization.
    """
    if d < 2 or k < 1:
        raise ValueError("need d >= 2 and k >= 1")
    r = 2 ** k
    per_face = (r + 1) ** (d - 1)
    if 2 * d * per_face > cap:
        raise OverflowError(f"direction grid with {2 * d * per_face} vertices exceeds cap {cap}")
    ticks = np.arange(-r, r + 1, 2)
    face = np.stack(np.meshgrid(*([ticks] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    blocks = []
    for axis in range(d):
        for sign in (-1, 1):
            block = np.insert(face, axis, sign * r, axis=1)
            blocks.append(block)
    lattice = np.unique(np.vstack(blocks), axis=0)
    points = lattice / np.linalg.norm(lattice, axis=1, keepdims=True)
    lattice.flags.writeable = False
    points.flags.writeable = False
    return DirectionGrid(k, d, points, lattice)


@dataclass(frozen=True, eq=False)
class OffsetGrid:
    """Sorted offsets t_1 < ... < t_{2m} = 1."""

    m: int
    points: np.ndarray

    def __len__(self):
        return len(self.points)

    def smallest_at_least(self, t, tol=TOL):
        """0-based index of the smallest grid offset >= t - tol, or None."""
        j = int(np.searchsorted(self.points, t - tol, side="left"))
        return j if j < len(self.points) else None

    def spacing_violations(self, tol=TOL):
        """Indices j (1-based) in the cosine region where the spacing bounds fail."""
        m, t = self.m, self.points
        bad = []
        for j in range(m + 1, 2 * m - 1):
            lo_t, hi_t = t[j - 1], t[j]
            gap = hi_t - lo_t
            lower = math.pi * math.sqrt(max(0.0, 1.0 - hi_t ** 2)) / (2 * m)
            upper = math.pi * math.sqrt(max(0.0, 1.0 - lo_t ** 2)) / (2 * m)
            if not (lower - tol <= gap <= upper + tol):
                bad.append(j)
        return bad


@lru_cache(maxsize=64)
def build_offset_grid(m):
    """t_j = -1 + j/m for j <= m, then t_{m+j} = cos(pi (m - j) / (2m))."""
    if m < 2:
        raise ValueError("offset grid needs m >= 2")
    j = np.arange(1, m + 1)
    points = np.concatenate([-1.0 + j / m, np.cos(np.pi * (m - j) / (2 * m))])
    points[m - 1] = 0.0
    points[-1] = 1.0
    points.flags.writeable = False
    grid = OffsetGrid(m, points)
    bad = grid.spacing_violations()
    if bad:
        raise ArithmeticError(f"offset spacing inequality fails at {bad}")
    return grid


@dataclass(frozen=True, eq=False)
class DiscreteDictionary:
    """All atoms (xi, t) with xi in W_k and t in T_m."""

    directions: DirectionGrid
    offsets: OffsetGrid

    @property
    def dim(self):
        return self.directions.dim

    @property
    def k(self):
        return self.directions.k

    @property
    def m(self):
        return self.offsets.m

    def __len__(self):
        return len(self.directions) * len(self.offsets)

    @property
    def atoms(self):
        """Every dictionary atom with unit coefficient, direction-major order."""
        D, T = self.directions.points, self.offsets.points
        return AtomCombination(np.repeat(D, len(T), axis=0), np.tile(T, len(D)),
                               np.ones(len(D) * len(T)))

    def to_json(self):
        n_dir, n_off = len(self.directions), len(self.offsets)
        pairs = [[i, j] for i in range(n_dir) for j in range(n_off)]
        return json.dumps({
            "dim": self.dim, "k": self.k, "m": self.m,
            "directions": self.directions.points.tolist(),
            "offsets": self.offsets.points.tolist(),
            "atoms": pairs,
        })


def dictionary_size(d, k):
    return direction_grid_size(d, k) * 2 * 2 ** k


def build_dictionary(d, n):
    """Largest dyadic dictionary whose size fits the budget n.

    k is the largest integer with 4d 2^{kd} <= n; it is lowered further if the
    measured number of atoms |W_k| * 2m would exceed n (this only happens for d >= 3).
    """
    if n < 4 * d * 2 ** d:
        raise BudgetError(f"budget n={n} is below the minimum 4d*2^d = {4 * d * 2 ** d}")
    k = 1
    while 4 * d * 2 ** ((k + 1) * d) <= n:
        k += 1
    while k >= 1 and dictionary_size(d, k) > n:
        k -= 1
    if k < 1:
        raise BudgetError(f"budget n={n} cannot hold the k=1 dictionary of size "
                          f"{dictionary_size(d, 1)}")
    return DiscreteDictionary(build_direction_grid(d, k), build_offset_grid(2 ** k))


def minimal_budget(d, k):
    """Smallest budget n for which build_dictionary selects level k."""
    return max(4 * d * 2 ** (k * d), dictionary_size(d, k))


def planar_boundary_points(m):
    """mu_j = (cos 2 pi j/m, sin 2 pi j/m) for j = 0..m-1."""
    if m < 4 or m % 2:
        raise ValueError("m must be an even integer >= 4")
    ang = 2.0 * np.pi * np.arange(m) / m
    return np.column_stack([np.cos(ang), np.sin(ang)])


def periodic_distance(i, j, m):
    r = (i - j) % m
    return min(r, m - r)


SQUARE_PERIMETER = 8.0


def square_boundary_point(s):
    """Point of the square boundary at arc length s from (1, 0), counterclockwise."""
    s = np.mod(np.asarray(s, dtype=float), SQUARE_PERIMETER)
    x = np.select([s <= 1, s <= 3, s <= 5, s <= 7],
                  [np.ones_like(s), 2.0 - s, -np.ones_like(s), s - 6.0], np.ones_like(s))
    y = np.select([s <= 1, s <= 3, s <= 5, s <= 7],
                  [s, np.ones_like(s), 4.0 - s, -np.ones_like(s)], s - 8.0)
    return np.stack([x, y], axis=-1)


def square_arc_length(p):
    """Inverse of square_boundary_point for points on the boundary."""
    p = np.atleast_2d(p)
    x, y = p[:, 0], p[:, 1]
    on_right = np.abs(x - 1.0) <= TOL
    on_top = np.abs(y - 1.0) <= TOL
    on_left = np.abs(x + 1.0) <= TOL
    s = np.where(on_right & (y >= 0), y,
        np.where(on_top, 2.0 - x,
        np.where(on_left, 4.0 - y,
        np.where(np.abs(y + 1.0) <= TOL, 6.0 + x, 8.0 + y))))
    return np.mod(s, SQUARE_PERIMETER)


def square_boundary_points(m):
    """m points equally spaced in arc length on the boundary of [-1, 1]^2."""
    if m < 4 or m % 2:
        raise ValueError("m must be an even integer >= 4")
    return square_boundary_point(SQUARE_PERIMETER * np.arange(m) / m)
