"""End-to-end n-term approximation and convergence-rate experiments.

A finite combination f = sum_j a_j phi_j is split as g + h with g = sum_j a_j g_j
built from the linear scaffold X_n and h = sum_j a_j (phi_j - g_j).  The residual
h is compressed to n terms by Maurey sampling after rescaling each element by the
weight of its atom, and the output is g + T.
"""
import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np
from scipy import stats

from .approx_general import DEFAULT_A, approximate_atom_general
from .approx_planar import Boundary, approximate_atom_on, exact_affine
from .discretization import build_dictionary, minimal_budget
from .exceptions import BelowResolutionError, BudgetError, InactiveAtomError
from .geometry import (Atom, AtomCombination, Domain, QuadratureSpec, Slab, WeightFn,
                       l2_error_estimate, random_unit_vectors, vw_cost)
from .sampling import Expansion, MaureyConfig, maurey_compress

logger = logging.getLogger(__name__)


def planar_resolution(n):
    """Largest even m >= 4 with m (m - 1) <= n."""
    m = int((1 + math.sqrt(1 + 4 * n)) // 2)
    m -= m % 2
    while m * (m - 1) > n:
        m -= 2
    if m < 4:
        raise BudgetError(f"budget n={n} is below the planar minimum 12")
    return m


def budget_for_resolution(dom, m):
    """Budget n whose scaffold has m boundary points (planar) or m = 2^k offsets."""
    if dom.dim == 2:
        if m < 4 or m % 2:
            raise ValueError("planar resolution m must be an even integer >= 4")
        return m * (m - 1)
    k = int(round(math.log2(m)))
    if m < 2 or 2 ** k != m:
        raise ValueError("resolution m must be a power of two for d >= 3")
    return minimal_budget(dom.dim, k)


@dataclass
class AtomApproximation:
    combination: AtomCombination
    support: Slab = None
    branch: str = ""


class Scaffold:
    """Constructive approximation of single atoms inside the linear space X_n."""

    def __init__(self, dom, n, A=DEFAULT_A):
        self.dom = dom
        self.n = n
        self.A = A
        if dom.dim == 2:
            self.m = planar_resolution(n)
            self.boundary = Boundary(dom.kind, self.m)
            self.dictionary = None
        else:
            self.dictionary = build_dictionary(dom.dim, n)
            self.m = self.dictionary.m
            self.boundary = None

    def approximate(self, atom):
        lo, hi = self.dom.offset_range(atom.direction)
        if atom.offset >= hi[0]:
            return AtomApproximation(AtomCombination.empty(atom.dim), None, "vanishing")
        if self.boundary is not None:
            if atom.offset <= lo[0]:
                atoms, c = exact_affine(atom, self.boundary)
                return AtomApproximation(AtomCombination.from_terms(zip(atoms, c), dim=2),
                                         None, "affine_exact")
            try:
                g = approximate_atom_on(self.dom, atom, self.m)
            except InactiveAtomError:
                return AtomApproximation(AtomCombination.empty(2), None, "vanishing")
            return AtomApproximation(g.combination, g.support, g.branch)
        g = approximate_atom_general(atom, self.dictionary, A=self.A)
        return AtomApproximation(g.combination, g.support, g.branch)


@dataclass
class PipelineResult:
    combination: AtomCombination
    error: float
    stderr: float
    scaffold_terms: int
    maurey_error: float
    maurey_bound: float
    variation: float
    resolution: int
    branches: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.combination)


def approximate_function(f, n, wf, dom, cfg=None, q=None, A=DEFAULT_A):
    """n-term approximant g + T of a finite combination f.

    The result has at most 3n terms.  Its error is estimated on the union of the
    support slabs of phi_j - g_j with an independent sample set.
    """
    cfg = cfg or MaureyConfig(n)
    q = q or QuadratureSpec.monte_carlo(200_000)
    if q.method != "monte_carlo":
        q = QuadratureSpec.monte_carlo(q.samples, q.seed)
    scaffold = Scaffold(dom, n, A)
    f = f.merged()
    g_parts, elements, coefs, slabs = [], [], [], []
    branches = {}
    for atom, a in f.terms:
        approx = scaffold.approximate(atom)
        branches[approx.branch] = branches.get(approx.branch, 0) + 1
        g_parts.append(approx.combination.scaled(a))
        diff = (AtomCombination.single(atom) - approx.combination).merged(drop_zero=True)
        if len(diff) == 0 or approx.branch in ("vanishing", "affine_exact"):
            continue
        w = float(wf(atom.direction[None, :], np.array([atom.offset]))[0])
        if w <= 0.0:
            raise ValueError(f"atom {atom} has zero weight but is active on the domain")
        elements.append(diff.scaled(1.0 / w))
        coefs.append(a * w)
        slabs.append(approx.support)
    g_parts = [p for p in g_parts if len(p)]
    if g_parts:
        g = AtomCombination(np.vstack([p.directions for p in g_parts]),
                            np.concatenate([p.offsets for p in g_parts]),
                            np.concatenate([p.coefficients for p in g_parts])).merged()
    else:
        g = AtomCombination.empty(dom.dim)
    h = Expansion(elements, coefs, dim=dom.dim)
    maurey = maurey_compress(h, MaureyConfig(n, cfg.trials, cfg.seed), dom, q, support=slabs)
    out = (g + maurey.combination).merged()
    if len(out) > 3 * n:
        logger.warning("output has %d terms, above the 3n = %d contract", len(out), 3 * n)
    check = q.with_seed(q.seed + 1)
    err, se = l2_error_estimate(f, out, dom, check, support=slabs or None)
    return PipelineResult(out, err, se, len(g), maurey.error, maurey.bound, maurey.variation,
                          scaffold.m, branches)


# ------------------------------------------------------------------ generators

@dataclass
class RandomCombination:
    """N random atoms with random signs, rescaled to weighted cost `cost`.

    Offsets are drawn uniformly from `offsets`, read as fractions of the range in
    which the hyperplane meets the domain.
    """

    N: int
    seed: int = 0
    offsets: tuple = (-0.999, 0.999)
    cost: float = 1.0
    unweighted_mass: float = None

    def build(self, dom, wf):
        rng = np.random.default_rng(self.seed)
        D = random_unit_vectors(self.N, dom.dim, rng)
        lo, hi = dom.offset_range(D)
        frac = rng.uniform(*self.offsets, size=self.N)
        T = np.where(frac >= 0, frac * hi, -frac * lo)
        a = rng.choice([-1.0, 1.0], size=self.N) * rng.uniform(0.5, 1.0, size=self.N)
        f = AtomCombination(D, T, a)
        if self.unweighted_mass is not None:
            return f.scaled(self.unweighted_mass / np.abs(a).sum())
        return f.scaled(self.cost / vw_cost(f, wf))


@dataclass
class SingleAtom:
    """One atom with offset t and a fixed generic direction."""

    t: float
    direction: tuple = None
    seed: int = 0

    def build(self, dom, wf=None):
        if self.direction is None:
            xi = random_unit_vectors(1, dom.dim, np.random.default_rng(self.seed))[0]
        else:
            xi = np.asarray(self.direction, dtype=float)
            xi = xi / np.linalg.norm(xi)
        return Atom(xi, self.t)


def random_combination(N, seed=0, **kw):
    return RandomCombination(N, seed, **kw)


def single_atom(t, direction=None, seed=0):
    return SingleAtom(t, direction, seed)


# ------------------------------------------------------------------ experiments

@dataclass
class RateEntry:
    n: int
    error: float
    stderr: float
    seed: int
    resolution: int = 0


@dataclass
class RateReport:
    entries: list
    fitted_slope: float
    fitted_intercept: float
    slope_stderr: float
    target_slope: float
    fitted_n: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def passes(self, threshold):
        return bool(np.isfinite(self.fitted_slope) and self.fitted_slope <= threshold)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "error", "stderr", "seed"])
            for e in self.entries:
                w.writerow([e.n, f"{e.error:.17g}", f"{e.stderr:.17g}", e.seed])

    def summary(self, threshold=None):
        out = {
            "slope": self.fitted_slope,
            "intercept": self.fitted_intercept,
            "slope_stderr": self.slope_stderr,
            "target": self.target_slope,
            "fitted_n": self.fitted_n,
            "notes": self.notes,
            "entries": [asdict(e) for e in self.entries],
        }
        if threshold is not None:
            out["threshold"] = threshold
            out["pass"] = self.passes(threshold)
        return out

    def write_json(self, path, threshold=None, config=None):
        body = self.summary(threshold)
        body["config"] = config or {}
        body["created"] = datetime.now(timezone.utc).isoformat()
        with open(path, "w") as fh:
            json.dump(body, fh, indent=2, default=float)


def fit_slope(n, errors, stderrs=None):
    """OLS fit of log error on log n with the exclusions used by rate experiments.

    Returns (slope, intercept, slope_stderr, kept_n, notes).
    """
    n = np.asarray(n, dtype=float)
    errors = np.asarray(errors, dtype=float)
    stderrs = np.zeros_like(errors) if stderrs is None else np.asarray(stderrs, dtype=float)
    notes = []
    keep = errors > 0
    for k in np.flatnonzero(~keep):
        notes.append(f"n={int(n[k])}: non-positive error excluded from the fit")
    idx = np.flatnonzero(keep)
    if len(idx) >= 2:
        a, b = idx[0], idx[1]
        if abs(errors[a] - errors[b]) <= 3.0 * math.hypot(stderrs[a], stderrs[b]):
            notes.append(f"n={int(n[a])}: within 3 stderr of the next entry, excluded as pre-asymptotic")
            idx = idx[1:]
    if len(idx) < 3:
        notes.append("fewer than 3 entries left, no slope fitted")
        return math.nan, math.nan, math.nan, [int(v) for v in n[idx]], notes
    res = stats.linregress(np.log(n[idx]), np.log(errors[idx]))
    return float(res.slope), float(res.intercept), float(res.stderr), [int(v) for v in n[idx]], notes


def _run_cell(args):
    generator, n, dom, wf, q, cfg, A = args
    try:
        if isinstance(generator, SingleAtom):
            atom = generator.build(dom, wf)
            scaffold = Scaffold(dom, n, A)
            approx = scaffold.approximate(atom)
            err, se = l2_error_estimate(AtomCombination.single(atom), approx.combination, dom, q,
                                        support=[approx.support] if approx.support else None)
            return RateEntry(n, err, se, q.seed, scaffold.m), None
        f = generator.build(dom, wf)
        res = approximate_function(f, n, wf, dom, cfg, q, A)
        return RateEntry(n, res.error, res.stderr, cfg.seed, res.resolution), None
    except BelowResolutionError as exc:
        return None, f"n={n}: skipped ({exc})"


def target_slope(generator, d):
    if isinstance(generator, SingleAtom):
        return -3.0 / (2 * d)
    return -(0.5 + 3.0 / (2 * d))


def rate_experiment(generator, n_list=None, d=2, dom=None, wf=None, q=None, cfg=None,
                    m_list=None, workers=1, A=DEFAULT_A):
    """Error versus budget n with an OLS slope fit of log error on log n.

    Either `n_list` or `m_list` (scaffold resolutions) is given.  Cells run in a
    process pool when workers > 1; the report is assembled in list order.
    """
    dom = dom or Domain.ball(d)
    wf = wf or (WeightFn.square_chord() if dom.kind == "square" else WeightFn.ball_power(dom.dim))
    if m_list is not None:
        n_list = [budget_for_resolution(dom, m) for m in m_list]
    if not n_list:
        raise ValueError("rate experiment needs a non-empty n list")
    n_list = [int(v) for v in n_list]
    if len(n_list) < 3 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n list must be strictly increasing with at least 3 entries")
    q = q or QuadratureSpec.monte_carlo(200_000)
    cfg = cfg or MaureyConfig(n_list[0])
    if isinstance(generator, SingleAtom) and q.method == "slice" and dom.kind != "ball":
        q = QuadratureSpec.monte_carlo(q.samples, q.seed)
    cells = [(generator, n, dom, wf, q, cfg, A) for n in n_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    entries = [e for e, _ in results if e is not None]
    notes = [msg for _, msg in results if msg]
    slope, icpt, se, kept, fit_notes = fit_slope([e.n for e in entries],
                                                  [e.error for e in entries],
                                                  [e.stderr for e in entries])
    return RateReport(entries, slope, icpt, se, target_slope(generator, dom.dim), kept,
                      notes + fit_notes)


def default_workers():
    env = os.environ.get("WVSPACE_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1
