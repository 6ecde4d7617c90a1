"""Domains, ReLU atoms, weights and L2 integration on the unit ball and the square.

An atom is the ridge function x -> max(0, xi.x - t) with a unit direction xi and
an offset t.  Finite linear combinations of atoms are stored column-wise in
:class:`AtomCombination` so that evaluation is a single matrix product.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .exceptions import InadmissibleWeightError

logger = logging.getLogger(__name__)

TOL = 1e-12
_EVAL_CHUNK = 4_000_000


def unit_ball_volume(d):
    """Lebesgue measure of the unit ball in R^d (d = 0 gives 1)."""
    return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0))


@dataclass(frozen=True)
class Domain:
    """The unit Euclidean ball B^d or the square [-1, 1]^2."""

    kind: str
    dim: int

    def __post_init__(self):
        if self.kind not in ("ball", "square"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError("domain dimension must be at least 2")
        if self.kind == "square" and self.dim != 2:
            raise ValueError("the square domain is only supported in dimension 2")

    @classmethod
    def ball(cls, d):
        return cls("ball", int(d))

    @classmethod
    def square(cls):
        return cls("square", 2)

    @property
    def volume(self):
        return unit_ball_volume(self.dim) if self.kind == "ball" else 4.0

    def contains(self, X):
        X = np.atleast_2d(X)
        if self.kind == "ball":
            return np.einsum("ij,ij->i", X, X) <= 1.0 + TOL
        return np.all(np.abs(X) <= 1.0 + TOL, axis=1)

    def offset_range(self, directions):
        """Offsets t for which the hyperplane xi.x = t meets the closed domain."""
        directions = np.atleast_2d(directions)
        if self.kind == "ball":
            r = np.ones(len(directions))
        else:
            r = np.abs(directions).sum(axis=1)
        return -r, r


class Atom:
    """The ReLU ridge function x -> max(0, direction.x - offset)."""

    __slots__ = ("direction", "offset")

    def __init__(self, direction, offset):
        direction = np.array(direction, dtype=float).ravel()
        if abs(np.linalg.norm(direction) - 1.0) > TOL:
            raise ValueError("atom direction must have unit norm")
        direction.flags.writeable = False
        self.direction = direction
        self.offset = float(offset)

    @property
    def dim(self):
        return self.direction.size

    def __call__(self, X):
        return atom_eval(self, X)

    def __repr__(self):
        return f"Atom(direction={self.direction.tolist()}, offset={self.offset!r})"

    def __eq__(self, other):
        return (isinstance(other, Atom) and self.offset == other.offset
                and np.array_equal(self.direction, other.direction))

    def __hash__(self):
        return hash((self.direction.tobytes(), self.offset))


def atom_eval(atom, x):
    """max(0, xi.x - t) at a point or at each row of an array of points."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x @ atom.direction - atom.offset, 0.0)


class AtomCombination:
    """Finite sum  sum_j a_j max(0, xi_j.x - t_j)  stored as arrays."""

    def __init__(self, directions, offsets, coefficients):
        directions = np.array(directions, dtype=float)
        offsets = np.array(offsets, dtype=float).ravel()
        coefficients = np.array(coefficients, dtype=float).ravel()
        if directions.ndim != 2:
            raise ValueError("directions must be a 2-D array")
        if not (len(directions) == len(offsets) == len(coefficients)):
            raise ValueError("directions, offsets and coefficients differ in length")
        for arr in (directions, offsets, coefficients):
            arr.flags.writeable = False
        self.directions = directions
        self.offsets = offsets
        self.coefficients = coefficients

    @classmethod
    def empty(cls, d):
        return cls(np.zeros((0, d)), [], [])

    @classmethod
    def from_terms(cls, terms, dim=None):
        terms = list(terms)
        if not terms:
            if dim is None:
                raise ValueError("dimension required for an empty combination")
            return cls.empty(dim)
        return cls([a.direction for a, _ in terms], [a.offset for a, _ in terms],
                   [c for _, c in terms])

    @classmethod
    def single(cls, atom, coefficient=1.0):
        return cls(atom.direction[None, :], [atom.offset], [coefficient])

    @property
    def dim(self):
        return self.directions.shape[1]

    def __len__(self):
        return len(self.offsets)

    def atom(self, j):
        return Atom(self.directions[j], self.offsets[j])

    @property
    def terms(self):
        return [(self.atom(j), float(self.coefficients[j])) for j in range(len(self))]

    def __iter__(self):
        return iter(self.terms)

    def __call__(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(len(X))
        if len(self) == 0:
            return out
        step = max(1, _EVAL_CHUNK // len(self))
        D, t, c = self.directions.T, self.offsets, self.coefficients
        for start in range(0, len(X), step):
            block = X[start:start + step] @ D - t
            np.maximum(block, 0.0, out=block)
            out[start:start + step] = block @ c
        return out

    def __add__(self, other):
        if len(other) == 0:
            return self
        if len(self) == 0:
            return other
        return AtomCombination(np.vstack([self.directions, other.directions]),
                               np.concatenate([self.offsets, other.offsets]),
                               np.concatenate([self.coefficients, other.coefficients]))

    def scaled(self, factor):
        return AtomCombination(self.directions, self.offsets, factor * self.coefficients)

    def __neg__(self):
        return self.scaled(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def merged(self, decimals=12, drop_zero=True):
        """Combine terms whose (direction, offset) agree to `decimals` places."""
        if len(self) == 0:
            return self
        keys = np.round(np.column_stack([self.directions, self.offsets]), decimals) + 0.0
        uniq, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
        coefs = np.zeros(len(uniq))
        np.add.at(coefs, inverse.ravel(), self.coefficients)
        order = np.argsort(first)
        idx, coefs = first[order], coefs[order]
        if drop_zero:
            keep = coefs != 0.0
            idx, coefs = idx[keep], coefs[keep]
        return AtomCombination(self.directions[idx], self.offsets[idx], coefs)

    def __repr__(self):
        return f"AtomCombination(dim={self.dim}, terms={len(self)})"


class WeightFn:
    """Weight w(xi, t) attached to atoms.

    Kinds: ``ball_power`` (1 - t)^(1/2 + d/4), ``square_chord_sqrt`` (square root of
    the chord length on the square), ``unweighted`` and ``custom``, a table of
    values over offsets interpolated linearly.
    """

    KINDS = ("ball_power", "square_chord_sqrt", "unweighted", "custom")

    def __init__(self, kind, dim, table=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown weight kind {kind!r}")
        if kind == "square_chord_sqrt" and dim != 2:
            raise ValueError("the chord weight is only defined on the square (d = 2)")
        if kind == "custom":
            if table is None:
                raise ValueError("custom weight needs a (offsets, values) table")
            ts, vals = (np.asarray(a, dtype=float) for a in table)
            if np.any(np.diff(ts) <= 0) or np.any(vals < 0):
                raise ValueError("custom table needs increasing offsets and nonnegative values")
            table = (ts, vals)
        self.kind = kind
        self.dim = int(dim)
        self.table = table

    @classmethod
    def ball_power(cls, d):
        return cls("ball_power", d)

    @classmethod
    def square_chord(cls):
        return cls("square_chord_sqrt", 2)

    @classmethod
    def unweighted(cls, d):
        return cls("unweighted", d)

    @classmethod
    def custom(cls, d, offsets, values):
        return cls("custom", d, (offsets, values))

    @property
    def exponent(self):
        return 0.5 + self.dim / 4.0

    def __call__(self, directions, offsets):
        offsets = np.asarray(offsets, dtype=float)
        if self.kind == "ball_power":
            return np.maximum(1.0 - offsets, 0.0) ** self.exponent
        if self.kind == "unweighted":
            return np.ones_like(offsets)
        if self.kind == "custom":
            ts, vals = self.table
            return np.interp(offsets, ts, vals)
        return np.sqrt(square_chord_length(np.atleast_2d(directions), np.atleast_1d(offsets)))

    def __repr__(self):
        return f"WeightFn({self.kind!r}, dim={self.dim})"


def weight(wf, atom):
    return float(wf(atom.direction[None, :], np.array([atom.offset]))[0])


def square_chord_length(directions, offsets):
    """Length of {x in [-1,1]^2 : xi.x = t} by exact clipping of the line."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    offsets = np.atleast_1d(np.asarray(offsets, dtype=float))
    foot = directions * offsets[:, None]
    along = np.column_stack([-directions[:, 1], directions[:, 0]])
    lo = np.full(len(offsets), -np.inf)
    hi = np.full(len(offsets), np.inf)
    for c in range(2):
        p, v = foot[:, c], along[:, c]
        flat = np.abs(v) < TOL
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (-1.0 - p) / v
            b = (1.0 - p) / v
        lo = np.where(flat, np.where(np.abs(p) <= 1.0 + TOL, lo, np.inf), np.maximum(lo, np.minimum(a, b)))
        hi = np.where(flat, np.where(np.abs(p) <= 1.0 + TOL, hi, -np.inf), np.minimum(hi, np.maximum(a, b)))
    return np.maximum(hi - lo, 0.0)


def chord_length(atom, dom):
    """Euclidean length of the hyperplane section H_phi within a planar domain."""
    if dom.dim != 2:
        raise ValueError("chord length is defined for planar domains")
    if dom.kind == "ball":
        return 2.0 * math.sqrt(max(0.0, 1.0 - atom.offset ** 2))
    return float(square_chord_length(atom.direction, atom.offset)[0])


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration method: 1-D slice quadrature or seeded Monte Carlo."""

    method: str = "monte_carlo"
    points: int = 256
    samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("slice", "monte_carlo"):
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if self.points < 16:
            raise ValueError("slice quadrature needs at least 16 points")
        if self.samples < 1000:
            raise ValueError("Monte Carlo needs at least 1000 samples")

    @classmethod
    def slice(cls, points=256):
        return cls("slice", points=points)

    @classmethod
    def monte_carlo(cls, samples=100_000, seed=0):
        return cls("monte_carlo", samples=samples, seed=seed)

    def with_seed(self, seed):
        return QuadratureSpec(self.method, self.points, self.samples, seed)


@lru_cache(maxsize=8)
def _gauss_legendre(points):
    return np.polynomial.legendre.leggauss(points)


def slice_integral(profile, d, kinks=(), lo=-1.0, hi=1.0, points=256):
    """v_{d-1} * integral over s in [lo, hi] of profile(s) (1 - s^2)^((d-1)/2) ds.

    With s = cos(theta) the integrand becomes profile(cos theta) sin^d(theta), which
    is smooth away from the kinks of `profile`; each smooth piece gets its own
    Gauss-Legendre rule.
    """
    lo, hi = max(lo, -1.0), min(hi, 1.0)
    if hi <= lo:
        return 0.0
    cuts = sorted({lo, hi, *[k for k in kinks if lo < k < hi]})
    thetas = np.arccos(np.clip(cuts, -1.0, 1.0))
    nodes, wts = _gauss_legendre(points)
    total = 0.0
    for th_hi, th_lo in zip(thetas[:-1], thetas[1:]):
        half = 0.5 * (th_hi - th_lo)
        theta = th_lo + half * (nodes + 1.0)
        total += half * np.dot(wts, profile(np.cos(theta)) * np.sin(theta) ** d)
    return unit_ball_volume(d - 1) * total


def atom_l2_norm(atom, dom, q=None):
    """L2(dom) norm of a single atom.

    On the ball the norm squared is v_{d-1} * int_t^1 (s - t)^2 (1 - s^2)^((d-1)/2) ds,
    evaluated by slice quadrature.  On the square a seeded Monte Carlo estimate is used.
    """
    q = q or QuadratureSpec()
    t = atom.offset
    if dom.kind == "ball":
        if t >= 1.0:
            return 0.0
        sq = slice_integral(lambda s: np.maximum(s - t, 0.0) ** 2, dom.dim, kinks=(t,),
                            lo=max(t, -1.0), points=max(q.points, 256))
        return math.sqrt(max(sq, 0.0))
    X = sample_domain(dom, q.samples, q.seed)
    return math.sqrt(dom.volume * np.mean(atom_eval(atom, X) ** 2))


def vw_cost(f, wf):
    """Weighted l1 mass  sum_j w(phi_j) |a_j|."""
    if len(f) == 0:
        return 0.0
    return float(np.dot(wf(f.directions, f.offsets), np.abs(f.coefficients)))


# ---------------------------------------------------------------- sampling

def random_unit_vectors(n, d, rng):
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sample_ball(n, d, rng):
    if d > 4:
        r = rng.random(n) ** (1.0 / d)
        return random_unit_vectors(n, d, rng) * r[:, None]
    out, have = np.empty((n, d)), 0
    while have < n:
        batch = rng.uniform(-1.0, 1.0, size=(max(2 * (n - have), 1024), d))
        batch = batch[np.einsum("ij,ij->i", batch, batch) <= 1.0][: n - have]
        out[have:have + len(batch)] = batch
        have += len(batch)
    return out


@lru_cache(maxsize=16)
def _cached_domain_samples(kind, dim, n, seed):
    rng = np.random.default_rng(seed)
    X = _sample_ball(n, dim, rng) if kind == "ball" else rng.uniform(-1.0, 1.0, size=(n, 2))
    X.flags.writeable = False
    return X


def sample_domain(dom, n, seed):
    """Uniform points in the domain; identical (n, seed) give identical arrays."""
    return _cached_domain_samples(dom.kind, dom.dim, int(n), int(seed))


def orthonormal_complement(direction):
    """(d, d-1) matrix whose columns span the orthogonal complement of `direction`."""
    d = direction.size
    Q, _ = np.linalg.qr(np.column_stack([direction, np.eye(d)]))
    return Q[:, 1:d]


def _clip_polygon(poly, normal, level, keep_above):
    """Sutherland-Hodgman clip of a convex polygon against normal.x >= level (or <=)."""
    out = []
    sign = 1.0 if keep_above else -1.0
    vals = sign * (poly @ normal - level)
    for k in range(len(poly)):
        p, q = poly[k], poly[(k + 1) % len(poly)]
        vp, vq = vals[k], vals[(k + 1) % len(poly)]
        if vp >= 0:
            out.append(p)
        if (vp >= 0) != (vq >= 0):
            out.append(p + (q - p) * (vp / (vp - vq)))
    return np.array(out).reshape(-1, 2)


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def slab_volume(dom, direction, lo, hi):
    """Measure of {x in dom : lo <= direction.x <= hi}."""
    if dom.kind == "ball":
        return slice_integral(lambda s: np.ones_like(s), dom.dim, lo=lo, hi=hi)
    square = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    poly = _clip_polygon(_clip_polygon(square, direction, lo, True), direction, hi, False)
    return _polygon_area(poly)


def sample_slab(dom, direction, lo, hi, n, rng):
    """n uniform points of {x in dom : lo <= direction.x <= hi}."""
    d = dom.dim
    basis = orthonormal_complement(direction)
    if dom.kind == "ball":
        lo, hi = max(lo, -1.0), min(hi, 1.0)
        peak = 1.0 - (0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi))
        s = np.empty(0)
        while len(s) < n:
            cand = rng.uniform(lo, hi, size=2 * (n - len(s)) + 64)
            ratio = np.clip(1.0 - cand ** 2, 0.0, None) / peak
            keep = rng.random(len(cand)) < ratio ** (0.5 * (d - 1))
            s = np.concatenate([s, cand[keep]])[:n]
        radius = np.sqrt(np.clip(1.0 - s ** 2, 0.0, None)) * rng.random(n) ** (1.0 / (d - 1))
        eta = random_unit_vectors(n, d - 1, rng) * radius[:, None]
        return s[:, None] * direction + eta @ basis.T
    across = basis[:, 0]
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) @ across
    out, have = np.empty((n, 2)), 0
    while have < n:
        m = 2 * (n - have) + 64
        pts = (rng.uniform(lo, hi, m)[:, None] * direction
               + rng.uniform(corners.min(), corners.max(), m)[:, None] * across)
        pts = pts[np.all(np.abs(pts) <= 1.0, axis=1)][: n - have]
        out[have:have + len(pts)] = pts
        have += len(pts)
    return out


@dataclass(frozen=True, eq=False)
class Slab:
    """The set {x in dom : lo <= direction.x <= hi}."""

    direction: np.ndarray
    lo: float
    hi: float

    def contains(self, X):
        s = X @ self.direction
        return (s >= self.lo) & (s <= self.hi)


class SlabUnionSampler:
    """Importance sampler over a union of slabs.

    Components are drawn in proportion to their volume, so the sampling density at
    x is count(x) / total where count(x) is the number of slabs containing x.
    """

    def __init__(self, dom, slabs, samples, seed):
        self.dom = dom
        slabs = [s for s in slabs if s.hi > s.lo]
        vols = np.array([slab_volume(dom, s.direction, s.lo, s.hi) for s in slabs])
        keep = vols > 0
        self.slabs = [s for s, k in zip(slabs, keep) if k]
        vols = vols[keep]
        self.total = float(vols.sum())
        rng = np.random.default_rng(seed)
        if not self.slabs:
            self.points = np.zeros((0, dom.dim))
            self.scale = np.zeros(0)
            return
        counts = rng.multinomial(samples, vols / self.total)
        pts = [sample_slab(dom, s.direction, s.lo, s.hi, c, rng)
               for s, c in zip(self.slabs, counts) if c > 0]
        self.points = np.vstack(pts)
        D = np.array([s.direction for s in self.slabs])
        proj = self.points @ D.T
        lo = np.array([s.lo for s in self.slabs])
        hi = np.array([s.hi for s in self.slabs])
        multiplicity = ((proj >= lo) & (proj <= hi)).sum(axis=1)
        # every point lies in the slab it was drawn from, up to roundoff at the faces
        self.scale = self.total / np.maximum(multiplicity, 1) / len(self.points)


def _squared_integral(values, weights):
    """Estimate of sum(weights * values^2) with its standard error."""
    contrib = weights * values ** 2
    n = len(contrib)
    total = float(contrib.sum())
    if n < 2:
        return total, 0.0
    return total, float(np.std(contrib * n, ddof=1) / math.sqrt(n))


def _shared_direction_profile(f, g):
    """If every atom of f - g is a function of s = xi.x alone, return (xi, profile, kinks)."""
    diff = f - g
    if len(diff) == 0:
        return None
    xi = diff.directions[0]
    dots = diff.directions @ xi
    if not np.all(np.abs(np.abs(dots) - 1.0) <= TOL):
        return None
    signs = np.sign(dots)
    t, c = diff.offsets, diff.coefficients

    def profile(s):
        return (np.maximum(np.outer(s, signs) - t, 0.0) @ c) ** 2

    return xi, profile, tuple(signs * t)


def l2_error_estimate(f, g, dom, q=None, support=None):
    """(||f - g||_{L2(dom)}, standard error).

    `support` is an optional list of :class:`Slab` whose union contains the support
    of f - g; sampling is then restricted to it.  Slice quadrature is used on the
    ball when both inputs depend on a single direction.
    """
    q = q or QuadratureSpec()
    diff = f - g
    if len(diff) == 0:
        return 0.0, 0.0
    if q.method == "slice" and dom.kind == "ball":
        shared = _shared_direction_profile(f, g)
        if shared is not None:
            _, profile, kinks = shared
            val = slice_integral(profile, dom.dim, kinks=kinks, points=q.points)
            return math.sqrt(max(val, 0.0)), 0.0
    if support is None:
        X = sample_domain(dom, q.samples, q.seed)
        w = np.full(len(X), dom.volume / len(X))
    else:
        sampler = SlabUnionSampler(dom, support, q.samples, q.seed)
        X, w = sampler.points, sampler.scale
    sq, se = _squared_integral(diff(X), w)
    err = math.sqrt(max(sq, 0.0))
    return err, (se / (2.0 * err) if err > 0 else 0.0)


def l2_error(f, g, dom, q=None, support=None):
    """||f - g|| in L2(dom), deterministic for a fixed quadrature seed."""
    return l2_error_estimate(f, g, dom, q, support)[0]


# ------------------------------------------------------------ admissibility

@dataclass
class AdmissibilityReport:
    max_ratio: float
    worst_atom: Atom
    refined_max_ratio: float
    stable: bool


def _probe_atoms(dom, density, rng):
    d = dom.dim
    if d == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, density, endpoint=False)
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        dirs = np.vstack([np.eye(d)[:1], random_unit_vectors(density - 1, d, rng)])
    frac = np.concatenate([np.linspace(0.0, 1.0, density, endpoint=False),
                           1.0 - 0.5 ** np.arange(2, density // 2 + 2)])
    atoms = []
    for xi in dirs:
        lo, hi = dom.offset_range(xi)
        for f in frac:
            atoms.append(Atom(xi, lo[0] + f * (hi[0] - lo[0])))
    return atoms


def _max_ratio(wf, dom, density, q, tol):
    rng = np.random.default_rng(q.seed)
    best, worst, bad = -1.0, None, []
    for atom in _probe_atoms(dom, density, rng):
        norm = atom_l2_norm(atom, dom, q)
        w = weight(wf, atom)
        if w <= 0.0:
            if norm > tol:
                bad.append(atom)
            continue
        if norm / w > best:
            best, worst = norm / w, atom
    if bad:
        raise InadmissibleWeightError(
            f"weight vanishes on {len(bad)} atoms with nonzero norm", bad)
    return best, worst


def check_admissible(wf, dom, grid_density=16, q=None, tol=1e-10):
    """Largest ||phi|| / w(phi) over a direction-by-offset grid, and at twice the density.

    Raises InadmissibleWeightError when w = 0 on an atom whose norm exceeds `tol`.
    """
    if grid_density < 8:
        raise ValueError("grid_density must be at least 8")
    q = q or QuadratureSpec.monte_carlo(samples=20_000)
    coarse, worst = _max_ratio(wf, dom, grid_density, q, tol)
    fine, fine_worst = _max_ratio(wf, dom, 2 * grid_density, q, tol)
    if fine > coarse:
        worst = fine_worst
    stable = np.isfinite(fine) and fine <= 1.5 * coarse
    return AdmissibilityReport(max(coarse, fine), worst, fine, bool(stable))
