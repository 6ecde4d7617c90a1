"""Planar approximation of a ReLU atom by three grid atoms.

The boundary of the disk (or of the square) carries m equally spaced grid points.
A chord whose endpoints fall on the arcs i and j is replaced by a combination of
the three grid chords mu_i mu_{j+1}, mu_i mu_j and mu_{i+1} mu_{j+1}, oriented like
the atom.  The combination agrees with the atom outside the strip swept by chords
joining arc i to arc j.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import (SQUARE_PERIMETER, periodic_distance, planar_boundary_points,
                             square_arc_length, square_boundary_point, square_boundary_points)
from .exceptions import InactiveAtomError
from .geometry import Atom, AtomCombination, Domain, Slab, TOL

logger = logging.getLogger(__name__)

_SNAP = 1e-9


def _perp(v):
    return np.array([-v[1], v[0]])


class Boundary:
    """m equally spaced grid points on the circle or on the square boundary.

    Positions along the boundary are measured in grid units, so arc i is the
    half-open interval [i, i+1) of positions.
    """

    def __init__(self, kind, m):
        if m < 4 or m % 2:
            raise ValueError("m must be an even integer >= 4")
        if kind not in ("ball", "square"):
            raise ValueError(f"unknown boundary kind {kind!r}")
        self.kind = kind
        self.m = m
        self.points = planar_boundary_points(m) if kind == "ball" else square_boundary_points(m)

    def point(self, pos):
        pos = np.asarray(pos, dtype=float)
        if self.kind == "ball":
            ang = 2.0 * np.pi * pos / self.m
            return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        return square_boundary_point(SQUARE_PERIMETER * pos / self.m)

    def position(self, p):
        p = np.atleast_2d(p)
        if self.kind == "ball":
            pos = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2.0 * np.pi) * self.m / (2.0 * np.pi)
        else:
            pos = square_arc_length(p) * self.m / SQUARE_PERIMETER
        near = np.round(pos)
        pos = np.where(np.abs(pos - near) < _SNAP, near, pos)
        return np.mod(pos, self.m)

    def arc_index(self, p):
        return np.floor(self.position(p)).astype(int) % self.m

    def grid_point(self, i):
        return self.points[i % self.m]

    def chord_endpoints(self, atom):
        """Intersection of the line xi.x = t with the boundary, or InactiveAtomError."""
        xi, t = atom.direction, atom.offset
        along = _perp(xi)
        if self.kind == "ball":
            if abs(t) >= 1.0 - TOL:
                raise InactiveAtomError(f"chord of offset {t} misses the open disk")
            h = math.sqrt(1.0 - t * t)
            return t * xi - h * along, t * xi + h * along
        lo, hi = _clip_interval(t * xi, along)
        if hi - lo <= TOL:
            raise InactiveAtomError(f"line with offset {t} misses the open square")
        return t * xi + lo * along, t * xi + hi * along

    def exit_point(self, a, x):
        """Second intersection with the boundary of the line through a and each row of x."""
        X = np.atleast_2d(x)
        V = X - a
        if self.kind == "ball":
            s = -2.0 * (V @ a) / np.einsum("ij,ij->i", V, V)
        else:
            lo, hi = _clip_many(np.broadcast_to(a, V.shape), V)
            s = np.where(np.abs(hi) > np.abs(lo), hi, lo)
        out = a + s[:, None] * V
        return out if np.ndim(x) > 1 else out[0]

    def extent(self, direction, start, stop, samples=64):
        """(min, max) of direction.p over the boundary path from position start to stop."""
        pos = np.linspace(start, stop, samples + 1)
        if self.kind == "square":
            corners = np.arange(1, 8, 2) * self.m / SQUARE_PERIMETER
            shifts = corners[None, :] + self.m * np.arange(-1, 3)[:, None]
            extra = shifts.ravel()
            pos = np.concatenate([pos, extra[(extra > start) & (extra < stop)]])
            pad = TOL
        else:
            step = 2.0 * np.pi * (stop - start) / (self.m * samples)
            pad = 0.5 * step ** 2 + TOL
        vals = self.point(pos) @ direction
        return float(vals.min() - pad), float(vals.max() + pad)


def _clip_many(P, V):
    """Row-wise parameter range of {p + s v} inside [-1, 1]^2."""
    lo = np.full(len(P), -np.inf)
    hi = np.full(len(P), np.inf)
    for c in range(2):
        flat = np.abs(V[:, c]) < TOL
        v = np.where(flat, 1.0, V[:, c])
        a, b = (-1.0 - P[:, c]) / v, (1.0 - P[:, c]) / v
        lo = np.where(flat, lo, np.maximum(lo, np.minimum(a, b)))
        hi = np.where(flat, hi, np.minimum(hi, np.maximum(a, b)))
    return lo, hi


def _clip_interval(p, v):
    """Parameter range of {p + s v} inside [-1, 1]^2."""
    lo, hi = -np.inf, np.inf
    for c in range(2):
        if abs(v[c]) < TOL:
            if abs(p[c]) > 1.0 + TOL:
                return 0.0, 0.0
            continue
        a, b = (-1.0 - p[c]) / v[c], (1.0 - p[c]) / v[c]
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    return lo, hi


@dataclass
class StripAssignment:
    """Arcs i, j holding the chord endpoints, ordered so that j - i (mod m) <= m/2."""

    i: int
    j: int
    m: int
    endpoints: tuple
    kind: str = "ball"

    @property
    def distance(self):
        return periodic_distance(self.i, self.j, self.m)

    @property
    def boundary(self):
        return Boundary(self.kind, self.m)


def _locate(atom, boundary):
    a, b = boundary.chord_endpoints(atom)
    ia, ib = boundary.arc_index(np.vstack([a, b]))
    m = boundary.m
    if (ib - ia) % m > m // 2:
        ia, ib, a, b = ib, ia, b, a
    return StripAssignment(int(ia), int(ib), m, (a, b), boundary.kind)


def locate_strip(atom, m, kind="ball"):
    """Arcs of the boundary grid that contain the endpoints of the atom's chord."""
    return _locate(atom, Boundary(kind, m))


def strip_contains(strip, x):
    """Whether x lies on some chord joining arc i to arc j (closed arcs)."""
    bd = strip.boundary
    m, i, j = strip.m, strip.i, strip.j
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(len(X), dtype=bool)
    if bd.kind == "ball":
        on_edge = np.einsum("ij,ij->i", X, X) >= 1.0 - 1e-12
    else:
        on_edge = np.max(np.abs(X), axis=1) >= 1.0 - 1e-12
    pos = bd.position(X)
    edge_in = np.array([_in_closed_arc(q, i, m) or _in_closed_arc(q, j, m) for q in pos[on_edge]],
                       dtype=bool)
    out[on_edge] = edge_in
    inner = X[~on_edge]
    if len(inner):
        b0 = bd.position(bd.exit_point(bd.grid_point(i), inner))
        b1 = bd.position(bd.exit_point(bd.grid_point(i + 1), inner))
        span = (b1 - b0) % m
        out[~on_edge] = ((j - b0) % m <= span + _SNAP) | ((b0 - j) % m <= 1.0 + _SNAP)
    return out if np.ndim(x) > 1 else bool(out[0])


def _in_closed_arc(pos, i, m):
    return (pos - i) % m <= 1.0 + _SNAP or (i - pos) % m <= _SNAP


def _line(p, q):
    """Unit normal and offset of the line through p and q, in canonical orientation."""
    nu = _perp(q - p)
    nu = nu / np.linalg.norm(nu)
    return nu, float(nu @ p)


def grid_chord_atom(boundary, i, j, sign):
    """Atom of the grid chord mu_i mu_j; canonical up to `sign` so repeats are bit-identical."""
    i, j = i % boundary.m, j % boundary.m
    if i == j:
        raise ValueError("a grid chord needs two distinct points")
    lo, hi = min(i, j), max(i, j)
    nu, tau = _line(boundary.points[lo], boundary.points[hi])
    return Atom(sign * nu, sign * tau)


@dataclass
class PlanarApproximant:
    """g = sum_k c_k phi_k approximating `atom` with grid chords phi_k."""

    atom: Atom
    strip: StripAssignment
    coefficients: np.ndarray
    atoms: list
    degenerate: bool
    branch: str
    zeta: np.ndarray = None
    support: Slab = field(default=None, repr=False)

    @property
    def combination(self):
        return AtomCombination.from_terms(zip(self.atoms, self.coefficients), dim=2)

    def __call__(self, X):
        return self.combination(X)

    @property
    def n(self):
        """Dimension m(m - 1) of the planar linear space."""
        return self.strip.m * (self.strip.m - 1)


def _orientation_samples(boundary, i, j):
    """Boundary points strictly between the arcs, on both sides of the strip."""
    m = boundary.m
    delta = (j - i) % m
    short = np.linspace(i + 1, i + delta, 10)[1:-1] if delta >= 2 else np.empty(0)
    long_end = i + m
    long = np.linspace(i + delta + 1, long_end, 18)[1:-1]
    return boundary.point(np.concatenate([short, long]))


def _orient(nu, tau, ref_nu, ref_tau, samples):
    """Sign making nu.x - tau agree with ref_nu.x - ref_tau on the sample points."""
    own = samples @ nu - tau
    ref = samples @ ref_nu - ref_tau
    useful = (np.abs(own) > 1e-12) & (np.abs(ref) > 1e-12)
    vote = np.sum(np.sign(own[useful]) * np.sign(ref[useful]))
    return -1.0 if vote < 0 else 1.0


def _three_atoms(atom, boundary, i, j):
    """Coefficients and oriented grid atoms for the chord family (i, j)."""
    P = boundary.grid_point
    pairs = [(i, j + 1), (i, j), (i + 1, j + 1)]
    samples = _orientation_samples(boundary, i, j)
    xi, t = atom.direction, atom.offset
    atoms = []
    for p, q in pairs:
        base = grid_chord_atom(boundary, p, q, 1.0)
        sign = _orient(base.direction, base.offset, xi, t, samples)
        atoms.append(grid_chord_atom(boundary, p, q, sign))
    ell = lambda x: float(xi @ x - t)
    lines = [(a.direction, a.offset) for a in atoms]
    val = lambda k, x: float(lines[k][0] @ x - lines[k][1])

    A2 = np.array([lines[1][0], lines[2][0]])
    zeta = None
    if abs(np.linalg.det(A2)) > 1e-12:
        zeta = np.linalg.solve(A2, [lines[1][1], lines[2][1]])
        denoms = (val(0, zeta), val(1, P(j + 1)), val(2, P(i)))
        if min(abs(v) for v in denoms) > 1e-14:
            c = np.array([ell(zeta) / denoms[0], ell(P(j + 1)) / denoms[1], ell(P(i)) / denoms[2]])
            return c, atoms, zeta
    # parallel or degenerate lines: solve the affine identity directly
    M = np.array([[*ln[0], -ln[1]] for ln in lines]).T
    c = np.linalg.lstsq(M, np.array([*xi, -t]), rcond=None)[0]
    return c, atoms, zeta


def _support_slab(atom, boundary, i, j, stop_extra=0):
    """Slab along the atom's direction containing the hull of arcs i..j+1 pieces used."""
    xi = atom.direction
    m = boundary.m
    delta = (j - i) % m
    lo1, hi1 = boundary.extent(xi, i, i + 1 + stop_extra)
    lo2, hi2 = boundary.extent(xi, i + delta, i + delta + 1)
    return Slab(xi, min(lo1, lo2), max(hi1, hi2))


def _best_three_atoms(atom, boundary, candidates):
    """Among candidate (i, j) arc pairs, the construction with the smallest max |c|."""
    best = None
    for i, j in candidates:
        c, atoms, zeta = _three_atoms(atom, boundary, i, j)
        if best is None or np.abs(c).max() < np.abs(best[0]).max():
            best = (c, atoms, zeta, i, j)
    return best


def _approximate(atom, boundary):
    strip = _locate(atom, boundary)
    i, j, m = strip.i, strip.j, boundary.m
    delta = (j - i) % m
    if delta >= 2:
        # at delta = m/2 both orderings are admissible; keep the better conditioned one
        candidates = [(i, j), (j, i)] if 2 * delta == m else [(i, j)]
        c, atoms, zeta, i2, j2 = _best_three_atoms(atom, boundary, candidates)
        strip = StripAssignment(i2, j2, m, strip.endpoints, strip.kind)
        return PlanarApproximant(atom, strip, c, atoms, False, "three_atom", zeta,
                                 _support_slab(atom, boundary, i2, j2))
    # both endpoints on one arc or on adjacent arcs: zero or the affine part
    far = _orientation_samples(boundary, i, i + 1)
    positive_far = np.mean(far @ atom.direction - atom.offset > 0) > 0.5
    if not positive_far:
        support = _support_slab(atom, boundary, i, i, stop_extra=1)
        return PlanarApproximant(atom, strip, np.zeros(0), [], True, "zero", None, support)
    candidates = [(i, i + 1)] if delta == 1 else [(i - 1, i), (i, i + 1)]
    c, atoms, zeta, i2, _ = _best_three_atoms(atom, boundary, candidates)
    support = _support_slab(atom, boundary, i2, i2, stop_extra=2)
    return PlanarApproximant(atom, strip, c, atoms, True, "affine", zeta, support)


def exact_affine(atom, boundary):
    """Exact representation of xi.x - t on the domain by grid atoms.

    Uses l = (l)_+ - (-l)_+ on three grid lines in general position: two chords
    through the center and the chord mu_0 mu_1.
    """
    m = boundary.m
    pairs = [(0, m // 2), (1, m // 2 + 1), (0, 1)]
    base = [grid_chord_atom(boundary, p, q, 1.0) for p, q in pairs]
    M = np.array([[*a.direction, -a.offset] for a in base]).T
    c = np.linalg.solve(M, np.array([*atom.direction, -atom.offset]))
    atoms, coefs = [], []
    for (p, q), a, ck in zip(pairs, base, c):
        atoms += [a, grid_chord_atom(boundary, p, q, -1.0)]
        coefs += [ck, -ck]
    return atoms, np.array(coefs)


def approximate_atom_planar(atom, m):
    """Three-grid-atom approximant of an atom on the unit disk (m grid points)."""
    if atom.dim != 2:
        raise ValueError("planar approximation needs a 2-D atom")
    return _approximate(atom, Boundary("ball", m))


def approximate_atom_square(atom, m):
    """Same construction with m points equally spaced in arc length on the square."""
    if atom.dim != 2:
        raise ValueError("planar approximation needs a 2-D atom")
    return _approximate(atom, Boundary("square", m))


def approximate_atom_on(dom, atom, m):
    if dom.kind == "ball":
        return approximate_atom_planar(atom, m)
    return approximate_atom_square(atom, m)


def planar_dictionary(m, kind="ball"):
    """All m(m - 1) oriented grid chords as unit-coefficient atoms."""
    bd = Boundary(kind, m)
    terms = []
    for p in range(m):
        for q in range(p + 1, m):
            for sign in (1.0, -1.0):
                a = grid_chord_atom(bd, p, q, sign)
                terms.append((a, 1.0))
    return AtomCombination.from_terms(terms, dim=2)


def strip_area(strip, samples=200_000, seed=0):
    """Monte Carlo area of the strip, sampled inside the hull of the two arcs."""
    bd = strip.boundary
    rng = np.random.default_rng(seed)
    ends = bd.point(np.array([strip.i, strip.i + 1, strip.j, strip.j + 1], dtype=float))
    mid = bd.point(np.array([strip.i + 0.5, strip.j + 0.5]))
    pts = np.vstack([ends, mid])
    lo, hi = pts.min(axis=0) - 0.02, pts.max(axis=0) + 0.02
    X = rng.uniform(lo, hi, size=(samples, 2))
    dom = Domain("ball" if bd.kind == "ball" else "square", 2)
    X = X[dom.contains(X)]
    box = float(np.prod(hi - lo))
    if len(X) == 0:
        return 0.0
    inside = strip_contains(strip, X)
    return box * inside.sum() / samples
