import math

import numpy as np
import pytest

from boolperc import rng
from boolperc.coupling import (
    DominatingMarkLaw,
    RateField,
    Schedule,
    coupled_radius,
    coupled_site,
    dominating_site,
    h_ratio,
    harris_edges,
    harris_islands,
    mark_cdf_given_event,
    max_mark_cdf,
    monotone_h_check,
    safe_time_horizon,
    sample_schedule,
    sample_window_schedules,
    schedule_for_site,
    t_monotonicity_check,
)
from boolperc.geometry import Window, ball_sites
from boolperc.radii import DivergentMomentError, FiniteTable, Geometric, PointMass, PowerLaw


def gen_of(seed):
    return rng.substream(seed, 99)


def test_schedule_basic_shape():
    sched = sample_schedule(2.0, Geometric(0.5), 1.0, gen_of(0), site=(0,))
    assert sched.n_events == len(sched.marks) == len(sched.uniforms)
    assert np.all(np.diff(sched.times) > 0)
    assert np.all((sched.times > 0) & (sched.times <= 1.0))
    assert np.all((sched.uniforms > 0) & (sched.uniforms <= 1.0))


def test_schedule_determinism():
    a = schedule_for_site(RateField((2.0,)), (Geometric(0.5),), 1.0, 7, 0, (3,))
    b = schedule_for_site(RateField((2.0,)), (Geometric(0.5),), 1.0, 7, 0, (3,))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.marks, b.marks)
    assert np.array_equal(a.uniforms, b.uniforms)
    c = schedule_for_site(RateField((2.0,)), (Geometric(0.5),), 1.0, 7, 1, (3,))
    assert not np.array_equal(a.times, c.times) or not np.array_equal(
        a.uniforms, c.uniforms
    )


def test_schedule_count_moments():
    gen = gen_of(4)
    counts = [
        sample_schedule(2.0, PointMass(1), 1.0, gen).n_events for _ in range(20_000)
    ]
    mean = np.mean(counts)
    assert abs(mean - 2.0) <= 3 * math.sqrt(2.0 / 20_000)
    # t -> 0: no events with probability -> 1
    gen = gen_of(5)
    empty = sum(
        sample_schedule(2.0, PointMass(1), 1e-4, gen).n_events == 0
        for _ in range(2000)
    )
    assert empty >= 1995


def test_max_mark_cdf_closed_forms():
    law = Geometric(0.5)
    # above any support point the tail vanishes: value 1
    assert max_mark_cdf(1.0, PointMass(3), 1.0, 3).unconditional == 1.0
    assert max_mark_cdf(1.0, PointMass(3), 1.0, 5).conditional == 1.0
    # below the support the tail is 1: no-event probability
    assert max_mark_cdf(1.5, PointMass(3), 2.0, 0).unconditional == pytest.approx(
        math.exp(-3.0)
    )
    assert max_mark_cdf(1.0, law, 1.0, 0).unconditional == pytest.approx(
        math.exp(-0.5), abs=1e-15
    )
    v = mark_cdf_given_event(1.0, law, 1.0, 0)
    assert v == pytest.approx(
        (math.exp(-0.5) - math.exp(-1.0)) / (1.0 - math.exp(-1.0))
    )
    assert v == pytest.approx(0.37754, abs=5e-6)


def test_max_mark_cdf_monte_carlo():
    law = Geometric(0.5)
    gen = gen_of(6)
    n = 30_000
    hits = 0
    for _ in range(n):
        sched = sample_schedule(1.0, law, 1.0, gen)
        hits += sched.max_mark(1.0) <= 0
    target = math.exp(-0.5)
    sigma = math.sqrt(target * (1 - target) / n)
    assert abs(hits / n - target) <= 3 * sigma


def test_mark_cdf_is_cdf():
    for law in (Geometric(0.5), PointMass(4), FiniteTable((0.5, 0.25, 0.25))):
        for rate, t in [(0.5, 0.3), (1.0, 1.0), (2.0, 0.9)]:
            vals = [mark_cdf_given_event(rate, law, t, r) for r in range(-1, 40)]
            assert vals[0] == pytest.approx(0.0, abs=1e-15)
            assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
            assert vals[-1] == pytest.approx(1.0, abs=1e-9)
    # fixed r: non-increasing in t
    law = Geometric(0.5)
    ts = np.linspace(0.05, 1.0, 40)
    for r in range(4):
        vals = [mark_cdf_given_event(2.0, law, float(t), r) for t in ts]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_coupled_site_edges():
    law = Geometric(0.5)
    # u1 = 1 can never be occupied at finite rate * t
    x, _ = coupled_site(1.0, law, 1.0, 1.0, 0.5)
    assert x == 0
    # tiny u2 lands at the bottom of the support
    assert coupled_radius(1.0, law, 1.0, 1e-16) == 0
    assert coupled_radius(1.0, PointMass(4), 0.7, 0.2) == 4
    # quantile semantics against the cdf itself
    for u in np.linspace(1e-6, 1 - 1e-9, 500):
        r = coupled_radius(1.3, law, 0.8, float(u))
        assert mark_cdf_given_event(1.3, law, 0.8, r) >= u
        assert r == 0 or mark_cdf_given_event(1.3, law, 0.8, r - 1) < u


def test_coupled_joint_law_matches_schedules():
    # P(X = 1, R <= r) from the coupling equals P(N >= 1, max mark <= r)
    # from raw schedules, within 3 sigma, on a grid
    law = Geometric(0.5)
    n = 20_000
    for rate, t, r in [(1.0, 0.5, 1), (2.0, 0.9, 0), (0.7, 1.0, 2)]:
        gen = gen_of(1000 + int(rate * 10))
        u1 = rng.uniforms_halfopen(gen, n)
        u2 = rng.uniforms_halfopen(gen, n)
        hit_c = 0
        for i in range(n):
            x, radius = coupled_site(rate, law, t, float(u1[i]), float(u2[i]))
            hit_c += x == 1 and radius <= r
        gen2 = gen_of(2000 + int(rate * 10))
        hit_s = 0
        for _ in range(n):
            sched = sample_schedule(rate, law, t, gen2)
            hit_s += sched.n_events >= 1 and sched.max_mark(t) <= r
        p_pool = (hit_c + hit_s) / (2 * n)
        sigma = math.sqrt(max(p_pool * (1 - p_pool), 1e-12) * 2 / n)
        assert abs(hit_c - hit_s) / n <= 3 * sigma


def test_h_ratio_monotone():
    assert h_ratio(0.5, 0.0) == 0.5
    assert monotone_h_check(0.5, [0.0, 1.0, 2.0, 4.0, 8.0])
    assert h_ratio(0.5, 100.0) == pytest.approx(1.0, abs=1e-12)
    assert monotone_h_check(0.25, np.linspace(0.0, 50.0, 2000))
    assert monotone_h_check(1 - 1e-12, [0.1, 1.0, 10.0])
    vals = [h_ratio(1 - 1e-12, z) for z in (0.1, 1.0, 10.0)]
    assert all(v == pytest.approx(1.0, abs=1e-9) for v in vals)
    with pytest.raises(ValueError):
        monotone_h_check(1.5, [0.1])


def test_t_monotonicity_sweep():
    law = Geometric(0.5)
    gen = gen_of(8)
    u1 = rng.uniforms_halfopen(gen, 1000)
    u2 = rng.uniforms_halfopen(gen, 1000)
    assert all(
        t_monotonicity_check(2.0, law, 0.3, 0.9, float(a), float(b))
        for a, b in zip(u1, u2)
    )
    # u2 = 1 on a bounded law: both radii at the top of the support
    assert coupled_radius(2.0, PointMass(5), 0.3, 1.0) == 5
    assert coupled_radius(2.0, PointMass(5), 0.9, 1.0) == 5
    # direct cdf ordering at every r
    for r in range(-1, 30):
        assert mark_cdf_given_event(2.0, law, 0.9, r) <= mark_cdf_given_event(
            2.0, law, 0.3, r
        ) + 1e-15


def test_dominating_single_class_matches():
    law = Geometric(0.5)
    rates = RateField((1.0,))
    dom = DominatingMarkLaw(rates, (law,))
    for u in np.linspace(1e-6, 1 - 1e-9, 300):
        assert dom.quantile(float(u)) == coupled_radius(1.0, law, 1.0, float(u))
    for r in range(-1, 20):
        assert dom.cdf(r) == mark_cdf_given_event(1.0, law, 1.0, r)


def test_dominating_two_classes_pathwise():
    rates = RateField((1.0, 2.0))
    laws = (Geometric(0.5), Geometric(0.5))
    gen = gen_of(9)
    u1 = rng.uniforms_halfopen(gen, 1000)
    u2 = rng.uniforms_halfopen(gen, 1000)
    for t in (0.3, 1.0):
        for a, b in zip(u1, u2):
            x_star, r_star = dominating_site(rates, laws, t, float(a), float(b))
            for rate, law in zip(rates.rates, laws):
                x, radius = coupled_site(rate, law, t, float(a), float(b))
                assert x <= x_star
                assert radius <= r_star


def test_dominating_pmf_ratio_bound():
    # pmf of the dominating law under the explicit kappa * sup pmf bound
    rates = RateField((1.0, 2.0))
    laws = (Geometric(0.5), Geometric(0.5))
    dom = DominatingMarkLaw(rates, laws)
    kappa = rates.sup_rate / -math.expm1(-rates.inf_rate)
    for r in range(0, 101):
        sup_pmf = max(law.pmf(r) for law in laws)
        assert dom.pmf(r) <= kappa * sup_pmf + 1e-15


def test_dominating_moment_condition():
    rates = RateField((1.0, 2.0))
    dom = DominatingMarkLaw(rates, (Geometric(0.5), PowerLaw(2.0)))
    with pytest.raises(DivergentMomentError):
        dom.require_moment(1)
    with pytest.raises(DivergentMomentError):
        dominating_site(rates, (Geometric(0.5), PowerLaw(2.0)), 1.0, 0.5, 0.5)
    # with the condition satisfied the inf cdf reaches 1 at finite range
    dom = DominatingMarkLaw(rates, (Geometric(0.5), Geometric(0.75)))
    r_star = dom.quantile(1 - 1e-9)
    assert r_star < math.inf and dom.cdf(r_star) >= 1 - 1e-9
    assert dom.dth_moment(1) < math.inf


def test_safe_time_horizon():
    assert safe_time_horizon(RateField((1.0,)), 1 - 1e-12) == 1.0
    t0 = safe_time_horizon(RateField((1.0,)), 1 / 4800)
    assert t0 == pytest.approx(2.0835e-4, rel=1e-3)
    assert 1 - math.exp(-t0) <= 1 / 4800 + 1e-15
    # doubling the top rate halves the horizon before the cap
    t0_fast = safe_time_horizon(RateField((2.0,)), 1 / 4800)
    assert t0_fast == pytest.approx(t0 / 2)


def make_schedules(window, events):
    """events: {site: [(time, mark, u), ...]}"""
    out = {}
    for site in window.sites():
        evs = sorted(events.get(site, []))
        out[site] = Schedule(
            site,
            1.0,
            np.array([e[0] for e in evs], dtype=float),
            np.array([e[1] for e in evs], dtype=np.int64),
            np.array([e[2] for e in evs], dtype=float),
        )
    return out


def test_harris_graph_no_events():
    win = Window.cube(1, 5)
    scheds = make_schedules(win, {})
    assert harris_edges(scheds, win, 0.0, 1.0) == set()
    part = harris_islands(scheds, win, 0.0, 1.0)
    assert part.n_islands == win.n_sites


def test_harris_graph_single_event():
    win = Window.cube(1, 5)
    scheds = make_schedules(win, {(0,): [(0.4, 2, 0.5)]})
    edges = harris_edges(scheds, win, 0.0, 1.0)
    assert edges == {
        tuple(sorted(((0,), y))) for y in ball_sites((0,), 2) if y != (0,)
    }
    part = harris_islands(scheds, win, 0.0, 1.0)
    island = set(part.island_sites(part.island_of((0,))))
    assert island == set(ball_sites((0,), 2))
    # event outside the slice does not bind
    part2 = harris_islands(scheds, win, 0.5, 1.0)
    assert part2.n_islands == win.n_sites


def test_harris_islands_match_edge_components():
    rates = RateField((1.0,))
    laws = (Geometric(0.5),)
    win = Window.cube(2, 4)
    for seed in range(25):
        scheds = sample_window_schedules(rates, laws, win, 0.8, gen_of(300 + seed))
        part = harris_islands(scheds, win, 0.0, 0.8)
        # oracle components from the explicit edge set
        adj = {}
        for a, b in harris_edges(scheds, win, 0.0, 0.8):
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        seen = {}
        cid = 0
        for start in win.sites():
            if start in seen:
                continue
            stack = [start]
            seen[start] = cid
            while stack:
                z = stack.pop()
                for w in adj.get(z, ()):
                    if w not in seen:
                        seen[w] = cid
                        stack.append(w)
            cid += 1
        mapping = {}
        for site in win.sites():
            a, b = part.island_of(site), seen[site]
            assert mapping.setdefault(a, b) == b
        assert part.n_islands == cid


def test_island_fraction_shrinks_with_window():
    # below the safe horizon, origin islands rarely touch the boundary,
    # and less often on larger windows
    from boolperc.bounds import retention_threshold

    rates = RateField((1.0,))
    law = Geometric(0.5)
    dom = DominatingMarkLaw(rates, (law,))
    p0 = retention_threshold(1, dom)
    t0 = safe_time_horizon(rates, p0)
    fracs = []
    for hw in (4, 12):
        hits = 0
        n = 300
        for seed in range(n):
            win = Window.cube(1, hw)
            scheds = sample_window_schedules(
                rates, (law,), win, t0, gen_of(7000 + seed)
            )
            part = harris_islands(scheds, win, 0.0, t0)
            island = part.island_sites(part.island_of((0,)))
            hits += any(win.on_boundary(s) for s in island)
        fracs.append(hits / n)
    assert fracs[1] <= fracs[0]
