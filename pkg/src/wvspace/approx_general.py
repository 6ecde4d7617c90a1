"""Approximation of a ReLU atom on B^d by atoms of the discrete dictionary.

The offset of the atom is promoted to the grid offset t+ at which every cap of a
nearby grid direction fits inside the atom's cap.  The direction is written as an
affine combination of nearby grid directions whose coefficients sum to one, by
balancing a fine and a coarse convex representation of its cube-face projection.
Splitting the weight between t+ and the next grid offset then reproduces the
offset exactly, and the resulting combination agrees with the atom off a thin
region near the atom's hyperplane.
"""
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BelowResolutionError
from .geometry import Atom, AtomCombination, Domain, Slab, TOL, sample_slab, slab_volume

logger = logging.getLogger(__name__)

DEFAULT_A = 2
# coarse cell sizes tried in turn when the balance condition fails
_A_FALLBACK = 2


def _min_over_cap(xi, xi_i, t_j):
    """min of xi.x over {x in B^d : xi_i.x >= t_j}, vectorized over t_j.

    With c = xi.xi_i and s the length of the part of xi orthogonal to xi_i, the
    minimum is t_j c - sqrt(1 - t_j^2) s, saturating at -1 once the cap reaches
    the antipode of xi (c < -t_j).  s is formed from the orthogonal part, not
    from sqrt(1 - c^2), so identical directions give exactly t_j.
    """
    c = float(np.clip(np.dot(xi, xi_i), -1.0, 1.0))
    s = float(np.linalg.norm(xi - c * xi_i))
    t_j = np.clip(t_j, -1.0, 1.0)
    val = t_j * c - np.sqrt(1.0 - t_j * t_j) * s
    return np.where(c < -t_j, -1.0, val)


def halfspace_contained(xi_i, t_j, xi, t, tol=TOL):
    """Whether the cap {xi_i.x >= t_j} of the ball lies inside {xi.x >= t}."""
    if abs(t_j) > 1.0 + tol:
        raise ValueError("grid offset must lie in [-1, 1]")
    return bool(_min_over_cap(np.asarray(xi, float), np.asarray(xi_i, float), t_j) >= t - tol)


def t_plus(xi_i, xi, t, grid):
    """Smallest grid offset whose cap around xi_i sits inside the atom's cap, and its successor."""
    T = grid.points
    ok = _min_over_cap(np.asarray(xi, float), np.asarray(xi_i, float), T) >= t - TOL
    hits = np.flatnonzero(ok)
    if hits.size == 0 or hits[0] >= len(T) - 1:
        raise BelowResolutionError(
            f"no contained offset below t_(2m) for t={t:.6g}, m={grid.m}")
    j = int(hits[0])
    return float(T[j]), float(T[j + 1])


@dataclass
class DirectionDecomposition:
    """xi = sum_j b_j xi_j with sum_j b_j = 1 over nearby grid directions."""

    center: np.ndarray
    directions: np.ndarray
    coefficients: np.ndarray
    epsilon: float = 0.0
    epsilon_coarse: float = 0.0
    alpha: float = 1.0
    spread: float = 0.0
    A: int = DEFAULT_A

    @property
    def reconstruction_error(self):
        return float(np.linalg.norm(self.center - self.coefficients @ self.directions))

    @property
    def l1_mass(self):
        return float(np.abs(self.coefficients).sum())

    @property
    def radius(self):
        """Largest distance from the center to a member direction."""
        return float(np.linalg.norm(self.directions - self.center, axis=1).max())


def _vertex_table(d1):
    return np.array(list(itertools.product((0, 1), repeat=d1)), dtype=float)


def _representation(P, xbar, N, gamma, offsets_face):
    """Coefficients a_nu = gamma_nu ||P_nu|| / ||xbar|| and eps = sum(a) - 1, computed stably.

    offsets_face holds P_nu - xbar (nonzero only off the face axis); the first-order
    part of ||P_nu|| - ||xbar|| cancels in the gamma-weighted sum and is dropped.
    """
    norms = np.linalg.norm(P, axis=1)
    coef = gamma * norms / N
    dot = offsets_face @ xbar
    sq = np.einsum("ij,ij->i", offsets_face, offsets_face)
    gap = (2.0 * dot + sq) / (norms + N)
    second = sq / (norms + N) - dot * gap / (N * (norms + N))
    eps = float(np.dot(gamma, second)) / N
    return coef, eps


def decompose_direction(xi, grid, A=DEFAULT_A):
    """Affine decomposition of xi over nearby directions of the grid W_k.

    The cube projection xbar = xi / ||xi||_inf lies on a face; its fine cell (one
    lattice step) and a coarse cell (A steps, anchored at a vertex of the fine cell
    and reflected away from face edges) give two convex vertex representations.
    Lifted to the sphere their coefficient sums are 1 + eps and 1 + eps' with
    0 < 2 eps < eps'; the combination with weight alpha = eps'/(eps' - eps) sums to one.
    """
    xi = np.asarray(xi, dtype=float)
    d = xi.size
    r = grid.resolution
    axis = int(np.argmax(np.abs(xi)))
    sign = 1.0 if xi[axis] > 0 else -1.0
    xbar = xi / abs(xi[axis])
    N = float(np.linalg.norm(xbar))
    others = [c for c in range(d) if c != axis]
    u = (xbar[others] + 1.0) * r / 2.0
    near = np.round(u)
    if np.all(np.abs(u - near) <= TOL * r):
        lattice = np.insert(2 * near.astype(int) - r, axis, int(sign) * r)
        idx = grid.lookup(lattice)
        if idx is None:
            raise BelowResolutionError("grid vertex missing from the direction grid")
        return DirectionDecomposition(xi, grid.points[idx][None, :], np.ones(1), A=A)
    if r < A:
        raise BelowResolutionError(f"coarse cell of {A} steps does not fit in 2^k = {r}")

    cell = np.minimum(np.floor(u), r - 1)
    y = u - cell
    origin = cell.copy()
    step = np.ones(d - 1)
    flip = cell + A > r
    origin[flip] = cell[flip] + 1.0
    step[flip] = -1.0
    y[flip] = 1.0 - y[flip]
    if np.any(origin[flip] - A < 0):
        raise BelowResolutionError("coarse cell straddles both edges of the face")

    E = _vertex_table(d - 1)
    weights = np.prod(np.where(E > 0, y, 1.0 - y), axis=1)
    fine_u = origin + E * step
    coarse_u = origin + A * E * step
    coarse_w = weights / A
    coarse_w[0] = 1.0 - 1.0 / A + weights[0] / A

    def lift(lat_u):
        face = 2.0 * lat_u / r - 1.0
        P = np.insert(face, axis, sign, axis=1)
        return P

    h = 2.0 / r
    P_fine, P_coarse = lift(fine_u), lift(coarse_u)
    off_fine = np.insert(h * step * (E - y), axis, 0.0, axis=1)
    off_coarse = np.insert(h * step * (A * E - y), axis, 0.0, axis=1)
    a_fine, eps = _representation(P_fine, xbar, N, weights, off_fine)
    a_coarse, eps_c = _representation(P_coarse, xbar, N, coarse_w, off_coarse)
    if not (0.0 < 2.0 * eps < eps_c):
        raise BelowResolutionError(
            f"balance condition 0 < 2 eps < eps' fails (eps={eps:.3g}, eps'={eps_c:.3g})")
    alpha = eps_c / (eps_c - eps)

    lat = np.vstack([fine_u, coarse_u])
    coefs = np.concatenate([alpha * a_fine, (1.0 - alpha) * a_coarse])
    keys, inverse = np.unique(lat, axis=0, return_inverse=True)
    b = np.zeros(len(keys))
    np.add.at(b, inverse.ravel(), coefs)
    lattice = np.insert(2 * keys.astype(int) - r, axis, int(sign) * r, axis=1)
    rows = []
    for row in lattice:
        idx = grid.lookup(row)
        if idx is None:
            raise BelowResolutionError("decomposition vertex missing from the direction grid")
        rows.append(idx)
    spread = float(np.dot(weights, np.sum((E - y) ** 2, axis=1))) * h * h
    return DirectionDecomposition(xi, grid.points[rows], b, eps, eps_c, alpha, spread, A)


@dataclass
class GeneralApproximant:
    """g = sum_j beta b_j (xi_j.x - t+)_+ + sum_j (1 - beta) b_j (xi_j.x - t~)_+."""

    atom: Atom
    branch: str
    combination: AtomCombination
    support: Slab
    decomposition: DirectionDecomposition = None
    t_plus: float = None
    t_tilde: float = None
    beta: float = None
    neighbor_offsets: np.ndarray = field(default=None, repr=False)

    def __call__(self, X):
        return self.combination(X)

    @property
    def l1_mass(self):
        return float(np.abs(self.combination.coefficients).sum())


def _zero(atom, d):
    return GeneralApproximant(atom, "zero", AtomCombination.empty(d),
                              Slab(atom.direction, atom.offset - TOL, 1.0))


def _two_offset(atom, dirs, b, tp, tt):
    beta = (atom.offset - tt) / (tp - tt)
    D = np.vstack([dirs, dirs])
    offs = np.concatenate([np.full(len(dirs), tp), np.full(len(dirs), tt)])
    coefs = np.concatenate([beta * b, (1.0 - beta) * b])
    return beta, AtomCombination(D, offs, coefs)


def _balanced_decomposition(xi, grid, A):
    for a in range(A, A + _A_FALLBACK + 1):
        try:
            return decompose_direction(xi, grid, a)
        except BelowResolutionError as exc:
            if "balance" not in str(exc) or a == A + _A_FALLBACK:
                raise
            logger.debug("balance fails with A=%d, retrying with A=%d", a, a + 1)


def approximate_atom_general(atom, dictionary, A=DEFAULT_A, L=None):
    """Approximant of `atom` by atoms of the dictionary (directions W_k, offsets T_m).

    Branches: ``zero`` when the atom is too close to the boundary for the grid
    (t >= t_(2m-L) with L = (A+1)^2 by default, or whenever some neighbor admits
    no contained offset below t_(2m)); ``grid`` when the direction is a grid point;
    ``construction`` otherwise.  If the balance condition fails for the coarse
    cell size A, the next sizes A+1, A+2 are tried before giving up.
    """
    d = atom.dim
    grid = dictionary.offsets
    T = grid.points
    m = grid.m
    xi, t = atom.direction, atom.offset
    if L is None:
        L = (A + 1) ** 2
    if t >= 1.0 or (L is not None and 2 * m - L >= 1 and t >= T[2 * m - L - 1]):
        return _zero(atom, d)
    dec = _balanced_decomposition(xi, dictionary.directions, A)
    try:
        pairs = [t_plus(n, xi, t, grid) for n in dec.directions]
    except BelowResolutionError:
        return _zero(atom, d)
    neighbor_tp = np.array([p[0] for p in pairs])
    tp = float(neighbor_tp.max())
    j = int(np.searchsorted(T, tp))
    tt = float(T[j + 1])
    beta, comb = _two_offset(atom, dec.directions, dec.coefficients, tp, tt)
    cos = np.clip(dec.directions @ xi, -1.0, 1.0)
    reach = np.cos(np.maximum(0.0, np.arccos(tt) - np.arccos(cos))).max()
    branch = "grid" if len(dec.directions) == 1 else "construction"
    return GeneralApproximant(atom, branch, comb, Slab(xi, t - TOL, min(1.0, reach + TOL)),
                              dec, tp, tt, beta, neighbor_tp)


@dataclass
class RegionReport:
    sup_gap: float
    region_measure: float
    outside_gap: float
    gap_constant: float
    measure_constant: float


def error_region_diagnostics(atom, g, dictionary, q=None, samples=100_000, seed=0):
    """Monte Carlo sup |phi - g| over the error region and its measure.

    The region is {xi.x > t and xi_i.x <= t~ for some neighbor xi_i}.  Constants
    are normalized as sup_gap m / sqrt(1 - t^2) and measure m / (1 - t^2)^(d/2).
    """
    if q is not None:
        samples, seed = q.samples, q.seed
    d, t, m = atom.dim, atom.offset, dictionary.m
    xi = atom.direction
    dom = Domain.ball(d)
    rng = np.random.default_rng(seed)
    X = sample_slab(dom, xi, t, 1.0, samples, rng)
    cap = slab_volume(dom, xi, t, 1.0)
    gap = np.abs(np.maximum(X @ xi - t, 0.0) - g(X))
    if g.decomposition is None:
        region = np.ones(len(X), dtype=bool)
    else:
        region = np.any(X @ g.decomposition.directions.T <= g.t_tilde, axis=1)
    sup_gap = float(gap[region].max(initial=0.0))
    measure = cap * float(region.mean())
    outside = float(gap[~region].max(initial=0.0))
    s = max(1.0 - t * t, 1e-300)
    return RegionReport(sup_gap, measure, outside, sup_gap * m / math.sqrt(s),
                        measure * m / s ** (d / 2.0))
