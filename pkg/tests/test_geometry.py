import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from wvspace.exceptions import InadmissibleWeightError
from wvspace.geometry import (Atom, AtomCombination, Domain, QuadratureSpec, SlabUnionSampler,
                              Slab, WeightFn, atom_eval, atom_l2_norm, check_admissible,
                              l2_error, l2_error_estimate, sample_domain, vw_cost, weight)

E1 = np.array([1.0, 0.0])


def ball_norm_oracle(t, d):
    """||(x1 - t)_+|| on B^d from 40-digit quadrature of the slice integral."""
    if t >= 1:
        return 0.0
    with mpmath.workdps(40):
        t = mpmath.mpf(t)
        lo = max(t, -1)
        val = mpmath.quad(lambda s: (s - t) ** 2 * (1 - s * s) ** (mpmath.mpf(d - 1) / 2), [lo, 1])
        vol = mpmath.pi ** (mpmath.mpf(d - 1) / 2) / mpmath.gamma(mpmath.mpf(d - 1) / 2 + 1)
        return float(mpmath.sqrt(vol * val))


def test_domain_rules():
    assert Domain.ball(3).dim == 3
    with pytest.raises(ValueError):
        Domain("square", 3)
    with pytest.raises(ValueError):
        Domain.ball(1)
    assert Domain.square().volume == 4.0
    assert Domain.ball(2).volume == pytest.approx(math.pi)


def test_atom_rejects_non_unit_direction():
    with pytest.raises(ValueError):
        Atom(np.array([1.0, 1.0]), 0.0)


@pytest.mark.parametrize("atom,x,expected", [
    (Atom(E1, 0.0), (0.5, 0.0), 0.5),
    (Atom(E1, 0.5), (0.2, 0.9), 0.0),
    (Atom(np.array([math.sqrt(2) / 2, math.sqrt(2) / 2]), 0.5), (1.0, 0.0), math.sqrt(2) / 2 - 0.5),
])
def test_atom_eval_examples(atom, x, expected):
    assert atom_eval(atom, np.array(x)) == pytest.approx(expected, abs=1e-15)


def test_quarter_disk_integral_oracle():
    # ||(x1)_+||^2 = 2 int_0^1 s^2 sqrt(1 - s^2) ds = pi / 8, on a 20001-point Simpson grid
    s = np.linspace(0.0, 1.0, 20001)
    simpson = integrate.simpson(s ** 2 * np.sqrt(1 - s ** 2), x=s)
    assert 2 * simpson == pytest.approx(math.pi / 8, abs=1e-6)


def test_norm_at_zero_offset_d2():
    norm = atom_l2_norm(Atom(E1, 0.0), Domain.ball(2), QuadratureSpec.slice())
    assert norm == pytest.approx(math.sqrt(math.pi / 8), abs=1e-12)
    assert norm == pytest.approx(0.62666, abs=1e-5)


def test_norm_vanishes_at_unit_offset():
    assert atom_l2_norm(Atom(E1, 1.0), Domain.ball(2)) == 0.0
    assert atom_l2_norm(Atom(E1, 1.5), Domain.ball(2)) == 0.0


@pytest.mark.parametrize("d", [2, 3, 4, 5])
@pytest.mark.parametrize("t", [-1.3, -0.9, -0.2, 0.0, 0.4, 0.9, 0.999])
def test_slice_norm_matches_adaptive_quadrature(d, t):
    xi = np.zeros(d)
    xi[-1] = 1.0
    got = atom_l2_norm(Atom(xi, t), Domain.ball(d), QuadratureSpec.slice())
    assert got == pytest.approx(ball_norm_oracle(t, d), rel=1e-9, abs=1e-15)


def test_monte_carlo_norm_agrees_with_slice():
    atom = Atom(np.array([0.6, 0.8]), 0.2)
    mc = atom_l2_norm(atom, Domain.ball(2), QuadratureSpec.monte_carlo(400_000, seed=3))
    assert mc == pytest.approx(ball_norm_oracle(0.2, 2), rel=0.01)


def test_square_norm_by_monte_carlo():
    # (x - 0)_+ on [-1,1]^2: int_0^1 x^2 dx * 2 = 2/3
    norm = atom_l2_norm(Atom(E1, 0.0), Domain.square(), QuadratureSpec.monte_carlo(400_000))
    assert norm == pytest.approx(math.sqrt(2 / 3), rel=0.01)


def test_norm_band_d3_near_boundary():
    ratios = [ball_norm_oracle(t, 3) / (1 - t) ** 2 for t in np.linspace(-0.9, 0.9999, 30)]
    got = atom_l2_norm(Atom(np.array([0.0, 0.0, 1.0]), 0.9), Domain.ball(3), QuadratureSpec.slice())
    assert min(ratios) <= got / 0.1 ** 2 <= max(ratios)
    assert max(ratios) / min(ratios) <= 10


@given(st.floats(-0.99, 0.99), st.floats(0, 2 * math.pi), st.floats(0, math.pi))
def test_norm_is_rotation_invariant(t, phi, theta):
    xi = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    xi /= np.linalg.norm(xi)
    a = atom_l2_norm(Atom(xi, t), Domain.ball(3), QuadratureSpec.slice())
    b = atom_l2_norm(Atom(np.array([1.0, 0, 0]), t), Domain.ball(3), QuadratureSpec.slice())
    assert a == pytest.approx(b, abs=1e-10)


def test_weight_examples():
    assert weight(WeightFn.ball_power(2), Atom(E1, 0.0)) == 1.0
    assert weight(WeightFn.ball_power(4), Atom(np.array([1.0, 0, 0, 0]), 0.5)) == pytest.approx(0.353553, abs=1e-6)
    assert weight(WeightFn.square_chord(), Atom(E1, 0.0)) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert weight(WeightFn.unweighted(3), Atom(np.array([0, 1.0, 0]), 0.3)) == 1.0


@given(st.floats(-1, 1))
def test_ball_power_is_linear_in_the_plane(t):
    assert weight(WeightFn.ball_power(2), Atom(E1, t)) == pytest.approx(1 - t, abs=1e-15)


def _clip_oracle(xi, t):
    """Chord length inside [-1,1]^2 by dense sampling along the line."""
    along = np.array([-xi[1], xi[0]])
    s = np.linspace(-3, 3, 600_001)
    pts = t * xi + s[:, None] * along
    inside = np.all(np.abs(pts) <= 1, axis=1)
    return inside.sum() * (s[1] - s[0])


@pytest.mark.parametrize("angle,t", [(0.0, 0.3), (0.7, 0.2), (math.pi / 4, 1.2), (2.0, -0.5)])
def test_square_chord_weight_matches_segment_oracle(angle, t):
    xi = np.array([math.cos(angle), math.sin(angle)])
    w = weight(WeightFn.square_chord(), Atom(xi, t))
    assert w ** 2 == pytest.approx(_clip_oracle(xi, t), abs=2e-5)


def test_custom_weight_interpolates():
    wf = WeightFn.custom(2, [-1.0, 0.0, 1.0], [2.0, 1.0, 0.0])
    assert weight(wf, Atom(E1, 0.5)) == pytest.approx(0.5)


def test_admissible_ball_power_bounded():
    rep = check_admissible(WeightFn.ball_power(2), Domain.ball(2), grid_density=16,
                           q=QuadratureSpec.slice())
    assert np.isfinite(rep.max_ratio) and rep.stable
    # ||phi|| / w behaves like (1 - t)^(3/4): largest where the atom is widest
    assert rep.worst_atom.offset < 0


def test_unweighted_ratio_bounded_by_widest_atom():
    rep = check_admissible(WeightFn.unweighted(2), Domain.ball(2), grid_density=8,
                           q=QuadratureSpec.slice())
    assert rep.max_ratio <= atom_l2_norm(Atom(E1, -1.0), Domain.ball(2)) + 1e-12


def test_vanishing_weight_is_flagged():
    wf = WeightFn.custom(2, [-1.0, -0.999, 1.0], [1.0, 0.0, 0.0])
    with pytest.raises(InadmissibleWeightError) as info:
        check_admissible(wf, Domain.ball(2), grid_density=8, q=QuadratureSpec.slice())
    assert info.value.atoms


def test_l2_error_examples():
    dom = Domain.ball(2)
    f = AtomCombination.single(Atom(E1, 0.0))
    assert l2_error(f, f, dom) == 0.0
    assert l2_error(f, AtomCombination.empty(2), dom, QuadratureSpec.slice()) == pytest.approx(0.62666, abs=1e-5)
    mc = l2_error(f, AtomCombination.empty(2), dom, QuadratureSpec.monte_carlo(400_000))
    assert mc == pytest.approx(0.62666, rel=0.01)


def test_l2_error_relu_identity():
    # (x1)_+ - (-x1)_+ = x1 = ((x1 + 1)_+ - (-x1 + 1)_+) / 2 on the disk
    dom = Domain.ball(2)
    f = AtomCombination([E1, -E1], [0.0, 0.0], [1.0, -1.0])
    g = AtomCombination([E1, -E1], [-1.0, -1.0], [0.5, -0.5])
    X = sample_domain(dom, 10_000, 1)
    assert np.abs(f(X) - g(X)).max() <= 1e-12
    assert l2_error(f, g, dom) <= 1e-12


def test_l2_error_is_deterministic_per_seed():
    dom = Domain.ball(3)
    rng = np.random.default_rng(1)
    D = rng.standard_normal((5, 3))
    D /= np.linalg.norm(D, axis=1, keepdims=True)
    f = AtomCombination(D, rng.uniform(-1, 1, 5), rng.standard_normal(5))
    q = QuadratureSpec.monte_carlo(20_000, seed=9)
    assert l2_error(f, AtomCombination.empty(3), dom, q) == l2_error(f, AtomCombination.empty(3), dom, q)


def test_slab_sampler_agrees_with_uniform_sampling():
    dom = Domain.ball(2)
    f = AtomCombination([E1], [0.8], [1.0])
    slabs = [Slab(E1, 0.8, 1.0)]
    restricted, se = l2_error_estimate(f, AtomCombination.empty(2), dom,
                                       QuadratureSpec.monte_carlo(100_000, 2), support=slabs)
    exact = ball_norm_oracle(0.8, 2)
    assert abs(restricted - exact) <= 4 * se + 1e-3 * exact


def test_slab_union_density_counts_overlaps():
    dom = Domain.ball(2)
    slabs = [Slab(E1, -0.2, 0.4), Slab(np.array([0.0, 1.0]), -0.3, 0.3)]
    s = SlabUnionSampler(dom, slabs, 200_000, 4)
    # sum of weights estimates the area of the union
    X = sample_domain(dom, 2_000_000, 5)
    union = (slabs[0].contains(X) | slabs[1].contains(X)).mean() * math.pi
    assert s.scale.sum() == pytest.approx(union, rel=5e-3)


def test_vw_cost_examples():
    wf = WeightFn.ball_power(2)
    assert vw_cost(AtomCombination.empty(2), wf) == 0.0
    assert vw_cost(AtomCombination.single(Atom(E1, 0.5), 2.0), wf) == pytest.approx(1.0)


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-5, 5)), min_size=1, max_size=8))
def test_vw_cost_monotone_in_weight(terms):
    f = AtomCombination([E1] * len(terms), [t for t, _ in terms], [a for _, a in terms])
    small = WeightFn.ball_power(2)
    big = WeightFn.custom(2, [-1.0, 1.0], [2.5, 0.5])   # 2.5 - t >= 1 - t
    assert vw_cost(f, big) >= vw_cost(f, small) >= 0


@given(st.floats(-1.5, 1.5), st.floats(0, 2 * math.pi))
def test_relu_decomposition_identity(t, ang):
    xi = np.array([math.cos(ang), math.sin(ang)])
    X = sample_domain(Domain.ball(2), 500, 0)
    diff = atom_eval(Atom(xi, t), X) - atom_eval(Atom(-xi, -t), X)
    np.testing.assert_allclose(diff, X @ xi - t, atol=1e-12)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec.slice(points=8)
    with pytest.raises(ValueError):
        QuadratureSpec.monte_carlo(samples=10)
    q = QuadratureSpec.monte_carlo(5000, seed=3)
    a = sample_domain(Domain.ball(3), q.samples, q.seed)
    b = sample_domain(Domain.ball(3), q.samples, q.seed)
    assert np.array_equal(a, b)


def test_high_dimensional_sampling_is_uniform():
    X = sample_domain(Domain.ball(6), 200_000, 0)
    r = np.linalg.norm(X, axis=1)
    assert r.max() <= 1.0
    # P(|x| <= 1/2) = 2^-6
    assert (r <= 0.5).mean() == pytest.approx(2 ** -6, abs=3 * math.sqrt(2 ** -6 / 200_000))


def test_merged_combines_repeats():
    f = AtomCombination([E1, E1, -E1], [0.1, 0.1, 0.2], [1.0, 2.0, 0.5]).merged()
    assert len(f) == 2
    assert sorted(f.coefficients.tolist()) == [0.5, 3.0]
