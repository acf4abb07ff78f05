import math
from fractions import Fraction

import numpy as np
import pytest

from boolperc.bounds import (
    RecursionHypothesisError,
    ScaleGridError,
    constants,
    decompose_scale,
    escape_prob_bound,
    far_tail_sum,
    iterate_scale_recursion,
    near_reach_bound,
    reach_tail_bound,
    recursion_inputs,
    retention_threshold,
    scales_until,
)
from boolperc.geometry import sphere_cardinality, sphere_offsets
from boolperc.radii import DivergentMomentError, Geometric, PointMass, PowerLaw


def test_constants_by_enumeration():
    c1 = constants(1)
    assert len(sphere_offsets(1, 10)) == 2 and len(sphere_offsets(1, 80)) == 2
    assert c1.sphere_pair == 4
    assert c1.ball_constant == 3
    assert c1.escape_coef == 30 and c1.near_coef == 300
    c2 = constants(2)
    assert len(sphere_offsets(2, 20)) == 80
    assert len(sphere_offsets(2, 160)) == 640
    assert c2.sphere_pair == 80 * 640 == 51200
    c3 = constants(3)
    assert c3.sphere_pair == sphere_cardinality(3, 30) * sphere_cardinality(3, 240)


def test_escape_and_near_bounds():
    c = constants(1)
    assert escape_prob_bound(0.0, 5, c) == 0.0
    assert escape_prob_bound(1e-3, 2, c) == pytest.approx(4 * 1e-3 * 30 * 2)
    # bounded radius 1 kills the near-reach bound at every scale r >= 1
    # where r*d > 1
    assert near_reach_bound(0.5, 2, c, PointMass(1)) == 0.0
    assert near_reach_bound(0.5, 1, c, PointMass(1)) > 0.0
    with pytest.raises(DivergentMomentError):
        near_reach_bound(0.5, 1, c, PowerLaw(2.0))


def test_retention_threshold_exact_value():
    p0 = retention_threshold(1, PointMass(1))
    assert p0 == 1 / 4800
    assert p0 == float(min(Fraction(1, 2400), Fraction(1, 4800)))


def test_retention_threshold_monotone_in_moment():
    vals = [retention_threshold(1, PointMass(m)) for m in (1, 2, 4, 8)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_retention_threshold_zero_radius():
    # radius 0: the near-term is vacuous, first term alone survives
    assert retention_threshold(1, PointMass(0)) == 1 / 2400
    assert retention_threshold(1, PointMass(0)) == float(Fraction(1, 2400))


def test_retention_threshold_power_law():
    # d + 3 exponent has a finite d-th moment in any small dimension
    for d in (1, 2):
        p0 = retention_threshold(d, PowerLaw(d + 3))
        assert 0.0 < p0 < 1.0
    with pytest.raises(DivergentMomentError):
        retention_threshold(1, PowerLaw(2.0))


def test_recursion_closed_forms():
    rows = iterate_scale_recursion(0.5, [0.0] * 6)
    for row in rows:
        assert row.direct == 0.5 ** (2 ** row.n)
        assert row.induction == 2.0 ** -(row.n + 1)
    # fixed point at the hypothesis boundary
    rows = iterate_scale_recursion(0.5, [0.25] * 6)
    for row in rows:
        assert row.direct == 0.5
        assert row.induction == 0.5
    # bounded radius: g vanishes from some scale on, bound heads to zero
    gs = [0.2, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    rows = iterate_scale_recursion(0.5, gs)
    assert rows[-1].direct < 1e-4
    assert rows[-1].direct < rows[0].direct


def test_recursion_hypothesis_errors():
    with pytest.raises(RecursionHypothesisError):
        iterate_scale_recursion(0.6, [0.0])
    with pytest.raises(RecursionHypothesisError):
        iterate_scale_recursion(0.5, [0.3])


def test_induction_dominates_direct():
    gen = np.random.default_rng(0)
    for _ in range(200):
        f0 = gen.uniform(0, 0.5)
        gs = gen.uniform(0, 0.25, size=8)
        rows = iterate_scale_recursion(f0, gs)
        for row in rows:
            assert row.direct <= row.induction + 1e-15


def test_threshold_makes_hypotheses_hold():
    # for p <= p0: escape bound <= 1/2 on scales 1..10 and near bound
    # <= 1/4 at every scale
    for d, law in [(1, Geometric(0.5)), (1, PointMass(3)), (2, Geometric(0.5))]:
        c = constants(d)
        p0 = retention_threshold(d, law)
        for r in range(1, 11):
            assert escape_prob_bound(p0, r, c) <= 0.5 + 1e-12
        for r in [1, 2, 5, 10, 100, 1000]:
            assert near_reach_bound(p0, r, c, law) <= 0.25 + 1e-12
        f0, gs = recursion_inputs(p0, c, law, 6)
        rows = iterate_scale_recursion(f0, gs)  # no hypothesis error
        assert rows[-1].direct <= 0.5


def test_recursion_reaches_any_epsilon():
    d = 1
    law = Geometric(0.5)
    c = constants(d)
    p = retention_threshold(d, law) / 2
    for eps in (1e-2, 1e-3, 1e-6, 1e-9):
        n = scales_until(eps, *_pipeline(p, c, law))
        f0, gs = recursion_inputs(p, c, law, n)
        assert iterate_scale_recursion(f0, gs)[-1].direct < eps


def _pipeline(p, c, law):
    f0 = escape_prob_bound(p, 10, c)
    return f0, lambda j: near_reach_bound(p, 10 ** j, c, law)


def test_far_tail_sum_values():
    # bounded radius 1: every term vanishes once floor(k/10) >= 1
    assert far_tail_sum(0.5, PointMass(1), 1, 10) == 0.0
    assert far_tail_sum(0.5, PointMass(1), 1, 5) > 0.0
    # geometric: certified value dominates and hugs a long explicit sum
    law = Geometric(0.5)
    for d in (1, 2):
        ks = np.arange(21, 4000)
        spheres = np.array([sphere_cardinality(d, int(k)) for k in ks], dtype=float)
        brute = 0.5 * float((spheres * 0.5 ** (ks // 10 + 1)).sum())
        val = far_tail_sum(0.5, law, d, 20, rel_tol=1e-9)
        assert brute <= val <= brute * (1 + 2e-9) + 1e-15
        assert far_tail_sum(0.5, law, d, 20) >= brute
    # power law with finite d-th moment; oracle tail via vectorized zeta
    from scipy.special import zeta as hz

    s = 4.5
    law = PowerLaw(s)
    ks = np.arange(31, 300_000)
    tails = hz(s, ks // 10 + 2) / hz(s, 1)
    brute = 0.25 * float((2.0 * tails).sum())  # |S_k| = 2 in d = 1
    val = far_tail_sum(0.25, law, 1, 30)
    assert val >= brute
    assert val <= brute * 1.01
    with pytest.raises(DivergentMomentError):
        far_tail_sum(0.5, PowerLaw(2.0), 1, 10)


def test_decompose_scale():
    assert decompose_scale(2000, 1) == (3, 2)
    assert decompose_scale(5, 1) == (0, 5)
    assert decompose_scale(40, 2) == (1, 2)
    assert decompose_scale(10, 1) == (0, 10)
    with pytest.raises(ScaleGridError):
        decompose_scale(13, 1)
    with pytest.raises(ScaleGridError):
        decompose_scale(3, 2)


def test_reach_tail_bound_point_mass():
    c = constants(1)
    law = PointMass(1)
    p = retention_threshold(1, law) / 2
    bnd = reach_tail_bound(p, 1000, c, law)
    assert bnd.far_part == 0.0
    f0, gs = recursion_inputs(p, c, law, bnd.scale_level)
    rows = iterate_scale_recursion(f0, gs)
    assert bnd.total == rows[-1].induction / c.sphere_pair
    assert bnd.total_direct <= bnd.total
    assert bnd.scale_level == 2 and bnd.base_scale == 10


def test_reach_tail_bound_p_zero_limit():
    # p far below threshold gives a strictly smaller certified bound
    c = constants(1)
    law = Geometric(0.5)
    p0 = retention_threshold(1, law)
    big = reach_tail_bound(p0, 100, c, law)
    small = reach_tail_bound(p0 / 100, 100, c, law)
    assert small.total < big.total
    with pytest.raises(ValueError):
        reach_tail_bound(2 * p0, 100, c, law)


def test_reach_tail_bound_vs_monte_carlo():
    # certified bound dominates the simulated reach-tail frequency
    from boolperc.geometry import Window
    from boolperc.model import ModelParams, diameter, estimate

    law = Geometric(0.5)
    c = constants(1)
    p = retention_threshold(1, law) / 2
    r = 10
    bnd = reach_tail_bound(p, r, c, law)

    params = ModelParams(1, p, law, Window.cube(1, 12 * r), margin=20)
    res = estimate(
        lambda s: diameter(s, (0,)).value > 8 * r, params, 2000, seed=13
    )
    assert res.estimate <= bnd.total + 3 * res.stderr + 1e-9
