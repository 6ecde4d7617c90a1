import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wvspace.geometry import Atom, AtomCombination, WeightFn, vw_cost, weight
from wvspace.training import (FitProblem, ShallowNet, fit, min_norm_path, neuron_vw_norm,
                              regularizer_kind, regularizer_value, ridge_interpolant)

from conftest import unit

WF2 = WeightFn.ball_power(2)


def random_net(n, d, seed):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(n, d)) * rng.uniform(0.3, 3.0, (n, 1))
    r = np.linalg.norm(xi, axis=1)
    return ShallowNet(xi, r * rng.uniform(-0.95, 0.95, n), rng.normal(size=n))


def sites_in_disk(m, seed):
    rng = np.random.default_rng(seed)
    r = 0.9 * np.sqrt(rng.uniform(size=m))
    ang = rng.uniform(0, 2 * np.pi, m)
    return np.column_stack([r * np.cos(ang), r * np.sin(ang)])


def test_neuron_norm_examples():
    assert neuron_vw_norm(np.array([2.0, 0.0]), 1.0, WF2) == pytest.approx(1.0, abs=1e-15)
    xi = unit([0.3, -0.4])
    for t in (-0.7, 0.0, 0.42):
        assert neuron_vw_norm(xi, t, WF2) == pytest.approx(weight(WF2, Atom(xi, t)), abs=1e-15)
    with pytest.raises(ValueError):
        neuron_vw_norm(np.zeros(2), 0.3, WF2)


@given(st.floats(0.01, 100.0), st.floats(-0.99, 0.99))
def test_neuron_norm_is_homogeneous(c, t):
    xi = np.array([0.6, 0.8])
    assert neuron_vw_norm(c * xi, c * t, WF2) == pytest.approx(c * neuron_vw_norm(xi, t, WF2),
                                                                rel=1e-12)


def test_regularizer_examples():
    net = ShallowNet(np.array([[1.0, 0.0]]), [0.0], [1.0])
    for kind in ("weighted_vw", "path_norm", "weight_decay"):
        assert regularizer_value(net, kind) == pytest.approx(1.0, abs=1e-15)
        assert regularizer_value(ShallowNet.empty(2), kind) == 0.0
    assert regularizer_kind("WeightedVw") == "weighted_vw"
    with pytest.raises(ValueError):
        regularizer_kind("lasso")


def test_zero_input_weight():
    net = ShallowNet(np.array([[0.0, 0.0]]), [0.0], [1.0])
    for kind in ("weighted_vw", "path_norm"):
        with pytest.raises(ValueError):
            regularizer_value(net, kind)
    assert regularizer_value(net, "weight_decay") == pytest.approx(0.5)
    idle = ShallowNet(np.array([[0.0, 0.0]]), [0.0], [0.0])
    assert regularizer_value(idle, "weighted_vw") == 0.0


@given(st.floats(0.05, 20.0), st.integers(0, 1000))
def test_homogeneity_invariance(c, seed):
    net = random_net(6, 3, seed)
    scaled = net.rescaled(c)
    X = np.random.default_rng(seed).uniform(-0.5, 0.5, (100, 3))
    assert np.allclose(scaled(X), net(X), rtol=1e-12, atol=1e-12)
    for kind in ("weighted_vw", "path_norm"):
        assert regularizer_value(scaled, kind) == pytest.approx(regularizer_value(net, kind),
                                                                rel=1e-12)


def test_weight_decay_depends_on_balance():
    net = random_net(4, 2, 1)
    assert regularizer_value(net.rescaled(3.0), "weight_decay") != pytest.approx(
        regularizer_value(net, "weight_decay"))


@pytest.mark.parametrize("d", [2, 3, 5])
def test_regularizer_matches_vw_cost_at_unit_norm(d):
    rng = np.random.default_rng(d)
    dirs = rng.normal(size=(8, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    comb = AtomCombination(dirs, rng.uniform(-0.9, 0.9, 8), rng.normal(size=8))
    net = ShallowNet.from_combination(comb)
    assert regularizer_value(net, "weighted_vw") == pytest.approx(
        vw_cost(comb, WeightFn.ball_power(d)), abs=1e-12)


def test_problem_validation():
    with pytest.raises(ValueError):
        FitProblem(np.array([[1.0, 0.0]]), [1.0], 1e-3, 2)
    with pytest.raises(ValueError):
        FitProblem(np.array([[0.1, 0.0]]), [1.0, 2.0], 1e-3, 2)
    prob = FitProblem(np.array([[0.1, 0.0]]), [1.0], 0.0, 2)
    with pytest.raises(ValueError):
        fit(prob)


def test_zero_targets_give_zero_network():
    X = sites_in_disk(6, 0)
    lam = 1e-2
    res = fit(FitProblem(X, np.zeros(6), lam, 8), optimizer_budget=200)
    assert res.objective <= lam * 1e-8


def test_single_data_point(capsys):
    X = np.array([[0.3, -0.2]])
    res = fit(FitProblem(X, [1.5], 1e-3, 6), optimizer_budget=1500, restarts=3)
    merged = res.net.merged()
    with capsys.disabled():
        print(f"\n  single-point fit: {res.active} active neurons, {len(merged)} after merge")
    assert abs(res.net(X)[0] - 1.5) < 0.05
    assert merged.active_count() <= 3


@pytest.mark.parametrize("kind", ["weighted_vw", "path_norm", "weight_decay"])
def test_objective_improves_with_budget(kind):
    X = sites_in_disk(8, 1)
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    prob = FitProblem(X, y, 1e-3, 16, kind)
    short = fit(prob, optimizer_budget=50, restarts=2, seed=3)
    long = fit(prob, optimizer_budget=800, restarts=2, seed=3)
    assert long.objective <= short.objective * (1 + 1e-12)
    assert long.data_fit + 1e-3 * long.regularizer == pytest.approx(long.objective, rel=1e-9)


def test_weight_decay_solution_is_balanced():
    X = sites_in_disk(5, 2)
    res = fit(FitProblem(X, X[:, 0] ** 2, 1e-2, 6, "weight_decay"), optimizer_budget=400)
    r = np.linalg.norm(res.net.input_weights, axis=1)
    a = np.abs(res.net.output_weights)
    live = a > 1e-9
    assert np.allclose(r[live], a[live], rtol=1e-9)


def test_ridge_interpolant_is_exact():
    X = sites_in_disk(7, 4)
    y = np.cos(2 * X[:, 1]) - X[:, 0]
    g = ridge_interpolant(X, y, unit([0.37, 0.93]))
    assert np.allclose(g(X), y, atol=1e-12)
    const = ridge_interpolant(X, np.full(7, 2.0), unit([1.0, 0.2]))
    assert len(const) == 2
    assert np.allclose(const(X), 2.0, atol=1e-12)


def test_min_norm_path(capsys):
    X = sites_in_disk(6, 5)
    y = X[:, 0] - 2 * X[:, 1] ** 2
    # the cheapest of several one-direction interpolants bounds the path objective
    M = min(vw_cost(ridge_interpolant(X, y, [math.cos(a), math.sin(a)]), WF2)
            for a in np.linspace(0.05, np.pi, 16))
    lambdas = [1e-1, 1e-2, 1e-3, 1e-4]
    path = min_norm_path(FitProblem(X, y, lambdas[0], 12), lambdas, optimizer_budget=1500,
                         restarts=3)
    last = path[-1]
    assert last.residual <= 10 * math.sqrt(last.lam * M)
    costs = [p.vw_cost for p in path]
    for a, b in zip(costs, costs[1:]):
        assert b >= 0.95 * a
    with capsys.disabled():
        print("\n  path residuals", [f"{p.residual:.2e}" for p in path],
              "costs", [f"{c:.3f}" for c in costs], f"interpolant cost {M:.3f}")


def test_constant_targets_path(capsys):
    X = sites_in_disk(5, 6)
    y = np.full(5, 0.8)
    ref = vw_cost(ridge_interpolant(X, y, unit([1.0, 0.0])), WF2)
    path = min_norm_path(FitProblem(X, y, 1e-2, 8), [1e-2, 1e-3, 1e-4],
                         optimizer_budget=1500, restarts=2)
    with capsys.disabled():
        print(f"\n  constant targets: path cost {path[-1].vw_cost:.4f}, "
              f"two-atom construction {ref:.4f}")
    assert path[-1].residual <= 10 * math.sqrt(1e-4 * ref)
    assert path[-1].vw_cost <= 1.05 * ref


def test_path_rejects_bad_lambdas():
    prob = FitProblem(sites_in_disk(3, 0), [1, 2, 3], 1e-2, 4)
    for lams in ([], [1e-2, 1e-2], [1e-3, 1e-2], [1e-2, 0.0]):
        with pytest.raises(ValueError):
            min_norm_path(prob, lams)
