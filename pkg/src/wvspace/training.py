"""Shallow ReLU network fitting with a bias-aware weighted regularizer.

Penalties are 1-homogeneous in (xi, t), so the fit works in the reduced
coordinates u = xi/|xi| (unit), s = t/|xi| and c = a |xi|, where the network is an
atom combination and the penalty is sum_j |c_j| w(u_j, s_j).  The coefficients
take proximal (soft-threshold) steps, directions take projected steps on the
sphere, and every accepted step decreases the objective.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .geometry import AtomCombination, Domain, WeightFn, random_unit_vectors, vw_cost

logger = logging.getLogger(__name__)

REGULARIZERS = ("weighted_vw", "path_norm", "weight_decay")
_ALIASES = {"weightedvw": "weighted_vw", "pathnorm": "path_norm", "weightdecay": "weight_decay"}


def regularizer_kind(kind):
    key = str(kind).lower().replace("-", "_")
    key = _ALIASES.get(key.replace("_", ""), key)
    if key not in REGULARIZERS:
        raise ValueError(f"unknown regularizer {kind!r}; choose from {REGULARIZERS}")
    return key


class ShallowNet:
    """f(x) = sum_j a_j (xi_j . x - t_j)_+ with unconstrained input weights."""

    def __init__(self, input_weights, biases, output_weights):
        self.input_weights = np.atleast_2d(np.asarray(input_weights, dtype=float))
        self.biases = np.asarray(biases, dtype=float).ravel()
        self.output_weights = np.asarray(output_weights, dtype=float).ravel()
        if not (len(self.input_weights) == len(self.biases) == len(self.output_weights)):
            raise ValueError("neuron arrays differ in length")

    @classmethod
    def empty(cls, d):
        return cls(np.zeros((0, d)), [], [])

    @classmethod
    def from_combination(cls, comb):
        return cls(comb.directions, comb.offsets, comb.coefficients)

    @property
    def dim(self):
        return self.input_weights.shape[1]

    def __len__(self):
        return len(self.biases)

    @property
    def neurons(self):
        return list(zip(self.input_weights, self.biases, self.output_weights))

    def __call__(self, X):
        X = np.atleast_2d(X)
        if len(self) == 0:
            return np.zeros(len(X))
        return np.maximum(X @ self.input_weights.T - self.biases, 0.0) @ self.output_weights

    def rescaled(self, c):
        """(c xi, c t, a / c) for every neuron; the function is unchanged for c > 0."""
        c = np.broadcast_to(np.asarray(c, dtype=float), self.biases.shape)
        return ShallowNet(self.input_weights * c[:, None], self.biases * c, self.output_weights / c)

    def to_combination(self):
        """Atom form with unit directions; neurons with zero input weight are dropped."""
        r = np.linalg.norm(self.input_weights, axis=1)
        keep = r > 0
        return AtomCombination(self.input_weights[keep] / r[keep, None], self.biases[keep] / r[keep],
                               self.output_weights[keep] * r[keep])

    def active_count(self, rel=1e-6):
        a = np.abs(self.output_weights)
        if len(a) == 0 or a.max() == 0:
            return 0
        return int(np.sum(a > rel * a.max()))

    def merged(self):
        """Combine neurons with parallel (xi, t) into one."""
        return ShallowNet.from_combination(self.to_combination().merged(decimals=9))

    def to_json(self):
        return [{"input_weight": w.tolist(), "bias": float(b), "output_weight": float(a)}
                for w, b, a in self.neurons]


def neuron_vw_norm(xi, t, wf):
    """|xi| w(xi/|xi|, t/|xi|)."""
    xi = np.asarray(xi, dtype=float)
    r = float(np.linalg.norm(xi))
    if r == 0.0:
        raise ValueError("neuron norm is undefined for a zero input weight")
    return r * float(wf((xi / r)[None, :], np.array([t / r]))[0])


def _neuron_scales(net, kind):
    r = np.linalg.norm(net.input_weights, axis=1)
    bad = (r == 0) & (net.output_weights != 0)
    if kind != "weight_decay" and np.any(bad):
        raise ValueError(f"neurons {np.flatnonzero(bad).tolist()} have zero input weight "
                         "but nonzero output weight")
    return r


def regularizer_terms(net, kind, wf=None):
    """Per-neuron penalty values."""
    kind = regularizer_kind(kind)
    if len(net) == 0:
        return np.zeros(0)
    r = _neuron_scales(net, kind)
    a = np.abs(net.output_weights)
    if kind == "weight_decay":
        return 0.5 * (a ** 2 + r ** 2)
    if kind == "path_norm":
        return a * r
    wf = wf or WeightFn.ball_power(net.dim)
    out = np.zeros(len(net))
    live = r > 0
    out[live] = a[live] * r[live] * wf(net.input_weights[live] / r[live, None],
                                       net.biases[live] / r[live])
    if np.any(net.biases[live] / r[live] < -1.0):
        logger.info("neurons with t/|xi| < -1 are affine on the whole ball")
    return out


def regularizer_value(net, kind, wf=None):
    return float(regularizer_terms(net, kind, wf).sum())


@dataclass
class FitProblem:
    data_sites: np.ndarray
    targets: np.ndarray
    lam: float
    n_neurons: int
    regularizer: str = "weighted_vw"
    domain: Domain = None

    def __post_init__(self):
        self.data_sites = np.atleast_2d(np.asarray(self.data_sites, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if len(self.data_sites) != len(self.targets):
            raise ValueError("one target per data site is required")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.n_neurons < 1:
            raise ValueError("need at least one neuron")
        self.regularizer = regularizer_kind(self.regularizer)
        if self.domain is None:
            self.domain = Domain.ball(self.data_sites.shape[1])
        inside = self.domain.contains(self.data_sites)
        if self.domain.kind == "ball":
            inside &= np.linalg.norm(self.data_sites, axis=1) < 1.0
        if not np.all(inside):
            raise ValueError("data sites must lie in the interior of the domain")

    @property
    def dim(self):
        return self.data_sites.shape[1]


@dataclass
class FitResult:
    net: ShallowNet
    objective: float
    data_fit: float
    regularizer: float
    active: int
    trace: list = field(default_factory=list)
    restart_objectives: list = field(default_factory=list)
    iterations: int = 0

    def to_json(self, wf=None, kind="weighted_vw"):
        return {
            "objective": self.objective,
            "data_fit": self.data_fit,
            "regularizer": self.regularizer,
            "active": self.active,
            "trace": self.trace[:: max(1, len(self.trace) // 200)],
            "restart_objectives": self.restart_objectives,
            "neurons": self.net.to_json(),
            "penalty_per_neuron": regularizer_terms(self.net, kind, wf).tolist(),
        }


class _Reduced:
    """Objective in the reduced coordinates (U unit rows, s, c)."""

    def __init__(self, X, y, lam, wf):
        self.X, self.y, self.lam, self.wf = X, y, lam, wf

    def weights(self, U, s):
        if self.wf is None:
            return np.ones(len(s))
        return self.wf(U, s)

    def value(self, U, s, c):
        r = np.maximum(self.X @ U.T - s, 0.0) @ c - self.y
        data = float(r @ r)
        return data + self.lam * float(np.abs(c) @ self.weights(U, s)), data

    def smooth_grad(self, U, s, c):
        """Gradient of the data term in (U, s, c) and of the penalty in (U, s)."""
        Z = self.X @ U.T - s
        act = (Z > 0).astype(float)
        r = np.maximum(Z, 0.0) @ c - self.y
        gc = 2.0 * np.maximum(Z, 0.0).T @ r
        coeff = 2.0 * (act * r[:, None]) * c
        gU = coeff.T @ self.X
        gs = -coeff.sum(axis=0)
        if self.wf is not None and self.lam > 0:
            dU, ds = self._weight_grad(U, s)
            gU = gU + self.lam * np.abs(c)[:, None] * dU
            gs = gs + self.lam * np.abs(c) * ds
        return gU, gs, gc

    def _weight_grad(self, U, s, h=1e-7):
        base = self.weights(U, s)
        ds = (self.weights(U, s + h) - self.weights(U, s - h)) / (2 * h)
        dU = np.zeros_like(U)
        if self.wf.kind == "square_chord_sqrt":
            for k in range(U.shape[1]):
                E = np.zeros_like(U)
                E[:, k] = h
                dU[:, k] = (self.weights(U + E, s) - base) / h
        return dU, ds


def _split_objective(obj, n, d):
    """Objective and gradient in z = (V, s, c+, c-) with U = V/|V| row-wise and c = c+ - c-.

    Splitting c makes the penalty lambda w (c+ + c-) smooth under the bounds c+- >= 0.
    """

    def fun(z):
        V = z[: n * d].reshape(n, d)
        s = z[n * d: n * d + n]
        cp, cm = z[n * d + n: n * d + 2 * n], z[n * d + 2 * n:]
        r = np.linalg.norm(V, axis=1, keepdims=True)
        r = np.where(r > 0, r, 1.0)
        U = V / r
        c = cp - cm
        w = obj.weights(U, s)
        F_data = obj.value(U, s, c)[1]
        F = F_data + obj.lam * float(w @ (cp + cm))
        gU, gs, gc = obj.smooth_grad(U, s, c)
        if obj.wf is not None and obj.lam > 0:
            # smooth_grad used |c|; here the penalty multiplies c+ + c-
            dU, ds = obj._weight_grad(U, s)
            extra = obj.lam * (cp + cm - np.abs(c))
            gU = gU + extra[:, None] * dU
            gs = gs + extra * ds
        gV = (gU - np.sum(gU * U, axis=1, keepdims=True) * U) / r
        grad = np.concatenate([gV.ravel(), gs, gc + obj.lam * w, -gc + obj.lam * w])
        return F, grad

    return fun


def _descent(obj, U, s, c, iterations):
    """Quasi-Newton minimization with bounds; every iterate lowers the objective."""
    n, d = U.shape
    z0 = np.concatenate([U.ravel(), s, np.maximum(c, 0.0), np.maximum(-c, 0.0)])
    fun = _split_objective(obj, n, d)
    F0 = fun(z0)[0]
    if not np.isfinite(F0):
        raise FloatingPointError(f"objective is {F0} at the starting point")
    trace = [F0]
    if iterations == 0:
        return U, s, c, trace, 0

    def record(zk):
        trace.append(fun(zk)[0])

    bounds = [(None, None)] * (n * d + n) + [(0.0, None)] * (2 * n)
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                            callback=record,
                            options={"maxiter": iterations, "maxfun": 4 * iterations + 20,
                                     "ftol": 1e-16, "gtol": 1e-14, "maxcor": 30})
    if not np.isfinite(res.fun):
        raise FloatingPointError(f"objective became {res.fun} after {res.nit} iterations "
                                 f"({res.message})")
    z = res.x
    V = z[: n * d].reshape(n, d)
    r = np.linalg.norm(V, axis=1, keepdims=True)
    U = V / np.where(r > 0, r, 1.0)
    s = z[n * d: n * d + n]
    c = z[n * d + n: n * d + 2 * n] - z[n * d + 2 * n:]
    return U, s, c, trace, int(res.nit)


def _reduced_objective(problem, wf):
    kind = problem.regularizer
    if kind == "weighted_vw":
        wf = wf or WeightFn.ball_power(problem.dim)
    else:
        wf = None
    return _Reduced(problem.data_sites, problem.targets, problem.lam, wf)


def _initial_state(problem, seed):
    rng = np.random.default_rng(seed)
    U = random_unit_vectors(problem.n_neurons, problem.dim, rng)
    s = rng.uniform(-1.0, 1.0, problem.n_neurons)
    return U, s, np.zeros(problem.n_neurons)


def _net_from_reduced(U, s, c, kind):
    if kind == "weight_decay":
        # balanced scaling |a| = |xi| minimizes (a^2 + |xi|^2)/2 at fixed product
        r = np.sqrt(np.abs(c))
        r_safe = np.where(r > 0, r, 1.0)
        return ShallowNet(U * r_safe[:, None], s * r_safe, np.sign(c) * r)
    return ShallowNet(U, s, c)


def _reduced_from_net(net):
    r = np.linalg.norm(net.input_weights, axis=1)
    r = np.where(r > 0, r, 1.0)
    return net.input_weights / r[:, None], net.biases / r, net.output_weights * r


def _evaluate(problem, net, wf):
    resid = net(problem.data_sites) - problem.targets
    data = float(resid @ resid)
    reg = regularizer_value(net, problem.regularizer, wf)
    return data + problem.lam * reg, data, reg


def _single_run(args):
    problem, wf, budget, seed, init = args
    obj = _reduced_objective(problem, wf)
    U, s, c = init if init is not None else _initial_state(problem, seed)
    U, s, c, trace, its = _descent(obj, U, s, c, budget)
    return U, s, c, trace, its


def fit(problem, wf=None, optimizer_budget=5000, restarts=1, seed=0, workers=1, init=None):
    """Minimize sum_i |y_i - f(x_i)|^2 + lambda R(f) and return the best restart.

    Weight decay is solved through its path-norm equivalent and returned with
    balanced neuron scales.  `init` (a ShallowNet) replaces the random start of the
    first restart, which is how warm starts are done.
    """
    if problem.lam <= 0:
        raise ValueError("fit needs lambda > 0")
    if restarts < 1 or optimizer_budget < 0:
        raise ValueError("need restarts >= 1 and a nonnegative budget")
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    inits = [None] * restarts
    if init is not None:
        inits[0] = _reduced_from_net(init)
    jobs = [(problem, wf, optimizer_budget, sq, ini) for sq, ini in zip(seeds, inits)]
    if workers > 1 and restarts > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_single_run, jobs))
    else:
        runs = [_single_run(j) for j in jobs]
    results = []
    for U, s, c, trace, its in runs:
        net = _net_from_reduced(U, s, c, problem.regularizer)
        results.append((_evaluate(problem, net, wf), net, trace, its))
    if any(not np.isfinite(r[0][0]) for r in results):
        raise FloatingPointError("fit diverged: objective is not finite "
                                 f"(restart objectives {[r[0][0] for r in results]})")
    best = min(results, key=lambda r: r[0][0])
    (F, data, reg), net, trace, its = best
    return FitResult(net, F, data, reg, net.active_count(), trace,
                     [r[0][0] for r in results], its)


@dataclass
class PathPoint:
    lam: float
    net: ShallowNet
    vw_cost: float
    residual: float
    objective: float


def min_norm_path(problem, lambdas, wf=None, optimizer_budget=5000, restarts=1, seed=0):
    """Warm-started fits along a decreasing lambda sequence."""
    lambdas = [float(v) for v in lambdas]
    if not lambdas or any(b >= a for a, b in zip(lambdas, lambdas[1:])) or lambdas[-1] <= 0:
        raise ValueError("lambda list must be positive and strictly decreasing")
    wf_cost = wf or WeightFn.ball_power(problem.dim)
    path, init = [], None
    for k, lam in enumerate(lambdas):
        sub = FitProblem(problem.data_sites, problem.targets, lam, problem.n_neurons,
                         problem.regularizer, problem.domain)
        res = fit(sub, wf, optimizer_budget, restarts if k == 0 else 1, seed, init=init)
        init = res.net
        cost = vw_cost(res.net.to_combination(), wf_cost)
        path.append(PathPoint(lam, res.net, cost, math.sqrt(res.data_fit), res.objective))
    return path


def ridge_interpolant(sites, targets, direction):
    """Exact interpolant on the ball built from one direction.

    The data are interpolated piecewise linearly along s = direction . x; the affine
    part uses the antipodal pair of atoms with offset -1, since on the ball
    (s + 1)_+ + (1 - s)_+ = 2 and (s + 1)_+ - (1 - s)_+ = 2 s.
    """
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    y = np.asarray(targets, dtype=float).ravel()
    xi = np.asarray(direction, dtype=float)
    xi = xi / np.linalg.norm(xi)
    proj = sites @ xi
    order = np.argsort(proj)
    sv, yv = proj[order], y[order]
    if np.any(np.diff(sv) <= 1e-12):
        raise ValueError("direction does not separate the data sites")
    slopes = np.diff(yv) / np.diff(sv) if len(sv) > 1 else np.zeros(1)
    A = yv[0] - slopes[0] * sv[0]
    B = slopes[0]
    dirs = [xi, -xi]
    offs = [-1.0, -1.0]
    coefs = [(A + B) / 2.0, (A - B) / 2.0]
    for k in range(1, len(sv) - 1):
        dirs.append(xi)
        offs.append(sv[k])
        coefs.append(slopes[k] - slopes[k - 1])
    return AtomCombination(np.array(dirs), offs, coefs).merged()
