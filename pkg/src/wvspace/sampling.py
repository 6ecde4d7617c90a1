"""Maurey sampling, a greedy comparator and least-squares projection.

All three work with an :class:`Expansion` h = sum_j c_j psi_j whose elements
psi_j are themselves short atom combinations, and with Gram matrices estimated on
one shared Monte Carlo sample set.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AtomCombination, QuadratureSpec, SlabUnionSampler, WeightFn, sample_domain

logger = logging.getLogger(__name__)

_GRAM_ROWS = 20_000


class Expansion:
    """h = sum_j c_j psi_j with each psi_j an AtomCombination."""

    def __init__(self, elements, coefficients, dim=None):
        self.elements = list(elements)
        self.coefficients = np.asarray(coefficients, dtype=float).ravel()
        if len(self.elements) != len(self.coefficients):
            raise ValueError("one coefficient per element is required")
        self.dim = dim if dim is not None else (self.elements[0].dim if self.elements else None)
        parts = [e for e in self.elements if len(e)]
        if parts:
            self._atoms = AtomCombination(np.vstack([e.directions for e in parts]),
                                          np.concatenate([e.offsets for e in parts]),
                                          np.ones(sum(len(e) for e in parts)))
        else:
            self._atoms = AtomCombination.empty(self.dim or 1)
        owner = np.repeat(np.arange(len(self.elements)), [len(e) for e in self.elements])
        weights = np.concatenate([e.coefficients for e in self.elements]) if parts else np.zeros(0)
        self._mix = np.zeros((len(self._atoms), len(self.elements)))
        self._mix[np.arange(len(self._atoms)), owner] = weights

    @classmethod
    def from_combination(cls, h, wf=None):
        """Elements phi_j / w(phi_j) with coefficients a_j w(phi_j)."""
        w = np.ones(len(h)) if wf is None else wf(h.directions, h.offsets)
        if np.any(w <= 0):
            raise ValueError("cannot rescale atoms whose weight vanishes")
        elements = [AtomCombination(h.directions[j:j + 1], h.offsets[j:j + 1], [1.0 / w[j]])
                    for j in range(len(h))]
        return cls(elements, h.coefficients * w, dim=h.dim)

    def __len__(self):
        return len(self.elements)

    @property
    def variation(self):
        return float(np.abs(self.coefficients).sum())

    def element_values(self, X):
        """Matrix of psi_j(x) with one row per point."""
        if len(self._atoms) == 0:
            return np.zeros((len(X), len(self.elements)))
        A = np.maximum(X @ self._atoms.directions.T - self._atoms.offsets, 0.0)
        return A @ self._mix

    def __call__(self, X):
        return self.element_values(X) @ self.coefficients

    def combination(self, coefficients=None):
        """Atom form of sum_j coefficients_j psi_j, with repeated atoms merged."""
        c = self.coefficients if coefficients is None else np.asarray(coefficients, dtype=float)
        if len(self._atoms) == 0:
            return AtomCombination.empty(self.dim)
        return AtomCombination(self._atoms.directions, self._atoms.offsets,
                               self._mix @ c).merged()


def quadrature_points(dom, q, support=None):
    """Sample points and per-point weights for integrals over dom."""
    q = q or QuadratureSpec()
    if support is None:
        X = sample_domain(dom, q.samples, q.seed)
        return X, np.full(len(X), dom.volume / len(X))
    sampler = SlabUnionSampler(dom, support, q.samples, q.seed)
    return sampler.points, sampler.scale


def gram_matrix(expansion, X, weights):
    """G_jl = integral of psi_j psi_l, accumulated over row blocks."""
    J = len(expansion)
    G = np.zeros((J, J))
    for start in range(0, len(X), _GRAM_ROWS):
        V = expansion.element_values(X[start:start + _GRAM_ROWS])
        G += V.T @ (V * weights[start:start + _GRAM_ROWS, None])
    return G


def _quadratic_error(G, r):
    return math.sqrt(max(float(r @ G @ r), 0.0))


@dataclass
class MaureyConfig:
    n: int
    trials: int = 10
    seed: int = 0
    normalization: WeightFn = None

    def __post_init__(self):
        if self.n < 1 or self.trials < 1:
            raise ValueError("Maurey sampling needs n >= 1 and trials >= 1")


@dataclass
class MaureyResult:
    combination: AtomCombination
    coefficients: np.ndarray
    error: float
    trial_errors: np.ndarray
    variation: float
    delta: float
    bound: float
    gram: np.ndarray = field(default=None, repr=False)

    @property
    def mean_error(self):
        return float(np.mean(self.trial_errors)) if len(self.trial_errors) else 0.0


def _as_expansion(h, wf):
    return h if isinstance(h, Expansion) else Expansion.from_combination(h, wf)


def maurey_compress(h, cfg, dom, q=None, support=None, gram=None):
    """n-term random compression (V/n) sum_k sign(c_jk) psi_jk, best of cfg.trials draws.

    Indices are drawn i.i.d. with probability |c_j| / V.  Errors are measured with
    the Gram matrix of the elements, so every trial is scored on the same samples.
    """
    exp = _as_expansion(h, cfg.normalization)
    V = exp.variation
    if V == 0.0:
        empty = AtomCombination.empty(exp.dim)
        return MaureyResult(empty, np.zeros(len(exp)), 0.0, np.zeros(0), 0.0, 0.0, 0.0)
    if gram is None:
        X, w = quadrature_points(dom, q, support)
        gram = gram_matrix(exp, X, w)
    c = exp.coefficients
    prob = np.abs(c) / V
    delta = math.sqrt(max(float(np.max(np.diag(gram)[prob > 0])), 0.0))
    best, errors = None, []
    for child in np.random.default_rng(cfg.seed).bit_generator.seed_seq.spawn(cfg.trials):
        rng = np.random.default_rng(child)
        counts = rng.multinomial(cfg.n, prob)
        e = (V / cfg.n) * np.sign(c) * counts
        err = _quadratic_error(gram, c - e)
        errors.append(err)
        if best is None or err < best[1]:
            best = (e, err)
    e, err = best
    return MaureyResult(exp.combination(e), e, err, np.array(errors), V, delta,
                        V * delta / math.sqrt(cfg.n), gram)


@dataclass
class GreedyResult:
    combination: AtomCombination
    coefficients: np.ndarray
    selected: list
    error: float


def greedy_compress(h, n, dom, q=None, support=None, wf=None, gram=None):
    """Orthogonal greedy selection of n elements of h with least-squares refit."""
    exp = _as_expansion(h, wf)
    if gram is None:
        X, w = quadrature_points(dom, q, support)
        gram = gram_matrix(exp, X, w)
    c = exp.coefficients
    target = gram @ c
    norms = np.sqrt(np.maximum(np.diag(gram), 1e-300))
    x = np.zeros(len(exp))
    selected = []
    for _ in range(min(n, len(exp))):
        corr = np.abs(target - gram @ x) / norms
        corr[selected] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 1e-15 * max(1.0, np.abs(target).max()):
            break
        selected.append(j)
        sub = gram[np.ix_(selected, selected)]
        x = np.zeros(len(exp))
        x[selected] = np.linalg.lstsq(sub, target[selected], rcond=None)[0]
    err = _quadratic_error(gram, c - x)
    return GreedyResult(exp.combination(x), x, selected, err)


@dataclass
class ProjectionResult:
    combination: AtomCombination
    coefficients: np.ndarray
    error: float


def project_onto_span(f, basis, dom, q=None, ridge=0.0, support=None, cond_limit=1e12):
    """Least-squares projection of f onto the span of the basis atoms.

    `basis` is a DiscreteDictionary or an AtomCombination whose atoms are used with
    unit coefficients.  Solves (G + ridge I) x = b with G the Monte Carlo Gram matrix.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    atoms = basis.atoms if hasattr(basis, "atoms") else basis
    X, w = quadrature_points(dom, q, support)
    fx = f(X)
    if len(atoms) == 0:
        err = math.sqrt(max(float(np.dot(w, fx ** 2)), 0.0))
        return ProjectionResult(AtomCombination.empty(f.dim), np.zeros(0), err)
    exp = Expansion([AtomCombination(atoms.directions[j:j + 1], atoms.offsets[j:j + 1], [1.0])
                     for j in range(len(atoms))], np.zeros(len(atoms)), dim=f.dim)
    G = gram_matrix(exp, X, w)
    b = np.zeros(len(atoms))
    for start in range(0, len(X), _GRAM_ROWS):
        V = exp.element_values(X[start:start + _GRAM_ROWS])
        b += V.T @ (w[start:start + _GRAM_ROWS] * fx[start:start + _GRAM_ROWS])
    if ridge == 0.0:
        cond = np.linalg.cond(G)
        if not np.isfinite(cond) or cond > cond_limit:
            raise ValueError(f"Gram matrix is ill-conditioned (cond={cond:.3g}); "
                             "use a ridge > 0")
    x = np.linalg.solve(G + ridge * np.eye(len(G)), b)
    comb = AtomCombination(atoms.directions, atoms.offsets, x)
    resid = fx - comb(X)
    err = math.sqrt(max(float(np.dot(w, resid ** 2)), 0.0))
    return ProjectionResult(comb, x, err)
