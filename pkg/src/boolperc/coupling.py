"""Marked Poisson schedules and the couplings that tame them.

Each site carries a rate-M Poisson clock whose events hold a range mark
(law nu) and an update uniform.  Over a horizon t the maximal mark seen
at a site, conditioned on the clock ringing at all, has an explicit cdf;
inverting that cdf with shared uniforms couples the whole family across
horizons and site classes.  The graph whose edges are "some event at x
reached y (or vice versa)" is what bounds the information flow, and its
components are the islands the particle-system construction evolves
independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import rng
from .geometry import Site, Window, ball_offsets
from .radii import DivergentMomentError, RadiusLaw


@dataclass(frozen=True)
class RateField:
    """Per-class jump intensities with their inf and sup."""

    rates: tuple

    def __post_init__(self):
        rates = tuple(float(m) for m in self.rates)
        if not rates or any(not (0.0 < m < math.inf) for m in rates):
            raise ValueError("rates must be finite and strictly positive")
        object.__setattr__(self, "rates", rates)

    @property
    def n_classes(self) -> int:
        return len(self.rates)

    @property
    def inf_rate(self) -> float:
        return min(self.rates)

    @property
    def sup_rate(self) -> float:
        return max(self.rates)

    def class_of(self, site: Site) -> int:
        return sum(site) % self.n_classes

    def rate_at(self, site: Site) -> float:
        return self.rates[self.class_of(site)]


@dataclass(frozen=True)
class Schedule:
    """Ordered clock events of one site on (0, horizon]."""

    site: Site
    horizon: float
    times: np.ndarray
    marks: np.ndarray
    uniforms: np.ndarray

    @property
    def n_events(self) -> int:
        return len(self.times)

    def events_in(self, tau: float, t: float):
        """Indices of events with time in (tau, t]."""
        lo = int(np.searchsorted(self.times, tau, side="right"))
        hi = int(np.searchsorted(self.times, t, side="right"))
        return range(lo, hi)

    def max_mark(self, t: float) -> int:
        """Largest mark among events up to time t; 0 with no events."""
        hi = int(np.searchsorted(self.times, t, side="right"))
        if hi == 0:
            return 0
        return int(self.marks[:hi].max())


def sample_schedule(
    rate: float, law: RadiusLaw, t: float, gen: np.random.Generator, site: Site = ()
) -> Schedule:
    """Poisson(rate * t) events with iid marks and uniforms on (0, t]."""
    if rate <= 0 or t <= 0:
        raise ValueError("rate and horizon must be positive")
    n = int(gen.poisson(rate * t))
    times = np.sort(1.0 - gen.random(n)) * t
    # strict ordering; float ties have probability zero but replays must
    # stay deterministic, so nudge duplicates apart
    for i in range(1, n):
        if times[i] <= times[i - 1]:
            times[i] = np.nextafter(times[i - 1], math.inf)
    marks = law.quantile_array(rng.uniforms_halfopen(gen, n))
    uniforms = rng.uniforms_halfopen(gen, n)
    return Schedule(site, t, times, marks, uniforms)


def schedule_for_site(
    rates: RateField, laws: tuple, t: float, seed, interval: int, site: Site
) -> Schedule:
    """Deterministic per-(interval, site) schedule; far sites stay lazy."""
    seed_path = seed if isinstance(seed, tuple) else (seed,)
    gen = rng.substream(
        *seed_path, rng.DOMAIN_SCHEDULE, interval, *(rng.zigzag(c) for c in site)
    )
    cls = rates.class_of(site)
    return sample_schedule(rates.rates[cls], laws[cls], t, gen, site=site)


def sample_window_schedules(
    rates: RateField, laws: tuple, window: Window, t: float, gen: np.random.Generator
) -> dict:
    """Schedules for every window site from one stream, in site order."""
    return {
        site: sample_schedule(rates.rate_at(site), laws[rates.class_of(site)], t, gen, site)
        for site in window.sites()
    }


# ---------------------------------------------------------------------------
# Maximal-mark law and the per-site coupling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxMarkCdf:
    unconditional: float  # P(max mark over (0,t] <= r), no-event case counts
    conditional: float    # same given at least one event


def max_mark_cdf(rate: float, law: RadiusLaw, t: float, r: int) -> MaxMarkCdf:
    """Closed forms exp(-M t G(r)) and its conditioning on N >= 1."""
    if t <= 0:
        raise ValueError("horizon must be positive")
    g = law.tail(r)
    unconditional = math.exp(-rate * t * g)
    denom = -math.expm1(-rate * t)
    conditional = (unconditional - math.exp(-rate * t)) / denom
    return MaxMarkCdf(unconditional, conditional)


def mark_cdf_given_event(rate: float, law: RadiusLaw, t: float, r: int) -> float:
    """F_{x,t}(r): cdf of the maximal mark given the clock rang."""
    return max_mark_cdf(rate, law, t, r).conditional


def coupled_radius(rate: float, law: RadiusLaw, t: float, u2: float) -> int:
    """Generalized inverse of the conditional maximal-mark cdf at u2.

    Computed by mapping u2 through the closed form onto the base law's
    quantile, then pinned to the exact generalized-inverse semantics
    with a local fix-up against the cdf itself.
    """
    if not (0.0 < u2 <= 1.0):
        raise ValueError("u2 must be in (0, 1]")
    if u2 >= 1.0:
        top = law.support_max
        if top is None:
            raise OverflowError("coupled radius at u2 = 1 needs bounded support")
        return top
    mt = rate * t
    tau = -math.log(math.exp(-mt) + u2 * -math.expm1(-mt)) / mt
    target = min(max(1.0 - tau, 1e-17), 1.0)
    r = law.quantile(target) if target < 1.0 else (law.support_max or 0)
    while mark_cdf_given_event(rate, law, t, r) < u2:
        r += 1
    while r > 0 and mark_cdf_given_event(rate, law, t, r - 1) >= u2:
        r -= 1
    return r


def coupled_site(
    rate: float, law: RadiusLaw, t: float, u1: float, u2: float
) -> tuple:
    """(occupied, radius) of the Boolean stand-in for one site's clocks.

    Occupancy is "the clock rang on (0, t]", the radius is the maximal
    mark given that; both read off shared uniforms so different horizons
    stay pathwise ordered.
    """
    if not (0.0 < u1 <= 1.0):
        raise ValueError("u1 must be in (0, 1]")
    occupied = 1 if u1 <= -math.expm1(-rate * t) else 0
    return occupied, coupled_radius(rate, law, t, u2)


def h_ratio(a: float, z: float) -> float:
    """h(z) = (1 - exp(-a z)) / (1 - exp(-z)), continued as a at z = 0."""
    if z == 0.0:
        return a
    return -math.expm1(-a * z) / -math.expm1(-z)


def monotone_h_check(a: float, grid, tol: float = 1e-12) -> bool:
    """h is non-decreasing for 0 < a < 1; verified on the given grid."""
    if not (0.0 < a < 1.0):
        raise ValueError("a must be in (0, 1)")
    values = [h_ratio(a, float(z)) for z in sorted(grid)]
    return all(b >= a_ - tol for a_, b in zip(values, values[1:]))


def t_monotonicity_check(
    rate: float, law: RadiusLaw, t_small: float, t_big: float, u1: float, u2: float
) -> bool:
    """Pathwise (X, R) at t_small never exceeds the pair at t_big."""
    if not (0.0 < t_small < t_big <= 1.0):
        raise ValueError("need 0 < t' < t <= 1")
    x_s, r_s = coupled_site(rate, law, t_small, u1, u2)
    x_b, r_b = coupled_site(rate, law, t_big, u1, u2)
    return x_s <= x_b and r_s <= r_b


# ---------------------------------------------------------------------------
# Dominating marked point process over finitely many site classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DominatingMarkLaw(RadiusLaw):
    """Law of the horizon-1 maximal mark dominating every site class.

    cdf(r) is the infimum over classes of the conditional maximal-mark
    cdfs at t = 1, which stochastically dominates every class at every
    horizon t <= 1 by the horizon monotonicity.  Its pmf is bounded by
    sup_x nu_x(r) times M_sup / (1 - exp(-M_inf)), which is what makes
    its d-th moment finite whenever the class range laws' are.
    """

    rates: RateField
    laws: tuple

    def __post_init__(self):
        if len(self.laws) != self.rates.n_classes:
            raise ValueError("one range law per rate class")
        object.__setattr__(self, "laws", tuple(self.laws))

    def require_moment(self, d: int) -> None:
        bad = [law for law in self.laws if not law.moment_is_finite(d)]
        if bad:
            raise DivergentMomentError(
                "range-law moment condition fails: "
                + ", ".join(l.spec_string() for l in bad)
            )

    @property
    def pmf_ratio(self) -> float:
        return self.rates.sup_rate / -math.expm1(-self.rates.inf_rate)

    def cdf(self, r: int) -> float:
        return min(
            mark_cdf_given_event(m, law, 1.0, r)
            for m, law in zip(self.rates.rates, self.laws)
        )

    def pmf(self, r: int) -> float:
        return self.cdf(r) - self.cdf(r - 1)

    @property
    def support_max(self) -> int | None:
        tops = [law.support_max for law in self.laws]
        if any(t is None for t in tops):
            return None
        return max(tops)

    def moment_is_finite(self, d: int) -> bool:
        return all(law.moment_is_finite(d) for law in self.laws)

    def dth_moment(self, d: int):
        if not self.moment_is_finite(d):
            return math.inf
        return self.tail_moment(d, 0)

    def tail_moment(self, d: int, r0: int):
        self.require_moment(d)
        total = 0.0
        start, n = r0, max(r0, 1)
        while True:
            for r in range(start, n + 1):
                total += r ** d * self.pmf(r)
            rem = self.pmf_ratio * sum(
                law.tail_moment(d, n + 1) for law in self.laws
            )
            if rem <= 1e-13 * max(total, 1.0):
                return total + rem
            start = n + 1
            n *= 2

    def quantile(self, u: float) -> int:
        if not (0.0 < u <= 1.0):
            raise ValueError(f"quantile argument must be in (0, 1], got {u}")
        if u >= 1.0:
            top = self.support_max
            if top is None:
                raise OverflowError("quantile(1.0) of an unbounded law")
            return top
        return max(
            coupled_radius(m, law, 1.0, u)
            for m, law in zip(self.rates.rates, self.laws)
        )

    def tail_envelope(self) -> list:
        # 1 - F_{x,1}(r) <= kappa_x G_x(r) with kappa_x = M_x/(1-e^-M_x)
        out = []
        for m, law in zip(self.rates.rates, self.laws):
            kappa = m / -math.expm1(-m)
            for prim in law.tail_envelope():
                if prim[0] == "bounded":
                    out.append(prim)
                else:
                    out.append((prim[0], kappa * prim[1], prim[2]))
        return out

    def spec_string(self) -> str:
        inner = ";".join(
            f"{m}:{law.spec_string()}" for m, law in zip(self.rates.rates, self.laws)
        )
        return f"dominating({inner})"


def dominating_site(
    rates: RateField, laws: tuple, t: float, u1: float, u2: float
) -> tuple:
    """(X*, R*): occupancy at the sup rate, radius from the inf cdf.

    Requires the moment condition on the class range laws, which is
    exactly what makes the infimum cdf reach one.  Pathwise dominates
    ``coupled_site`` at any horizon t <= 1 for every class.
    """
    if not (0.0 < t <= 1.0):
        raise ValueError("need 0 < t <= 1")
    dom = DominatingMarkLaw(rates, tuple(laws))
    dom.require_moment(1)
    occupied = 1 if u1 <= -math.expm1(-rates.sup_rate * t) else 0
    return occupied, dom.quantile(u2)


def safe_time_horizon(rates: RateField, p0: float) -> float:
    """Largest t (capped at 1) with 1 - exp(-M_sup t) <= p0."""
    if not (0.0 < p0 < 1.0):
        raise ValueError("p0 must be in (0, 1)")
    return min(-math.log1p(-p0) / rates.sup_rate, 1.0)


# ---------------------------------------------------------------------------
# The event-reach graph over a window and its islands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IslandPartition:
    window: Window
    labels: np.ndarray

    @property
    def n_islands(self) -> int:
        return int(self.labels.max()) + 1

    def island_of(self, site: Site) -> int:
        return int(self.labels[self.window.flat_index(site)])

    def island_sites(self, label: int) -> list:
        return [
            self.window.site_of_flat(int(f))
            for f in np.flatnonzero(self.labels == label)
        ]

    def islands(self) -> list:
        return [self.island_sites(i) for i in range(self.n_islands)]


def harris_edges(schedules: dict, window: Window, tau: float, t: float) -> set:
    """Edge set: an event at x in (tau, t] reached y, or vice versa."""
    if tau >= t:
        raise ValueError("need tau < t")
    out = set()
    for site, sched in schedules.items():
        if not window.contains(site):
            continue
        for i in sched.events_in(tau, t):
            k = int(sched.marks[i])
            for off in ball_offsets(window.dim, k):
                other = tuple(a + b for a, b in zip(site, off))
                if other != site and window.contains(other):
                    out.add(tuple(sorted((site, other))))
    return out


def harris_islands(
    schedules: dict, window: Window, tau: float, t: float
) -> IslandPartition:
    """Connected components of the event-reach graph on the window."""
    if tau >= t:
        raise ValueError("need tau < t")
    n = window.n_sites
    parent = list(range(n))

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    for site, sched in schedules.items():
        if not window.contains(site):
            continue
        base = window.flat_index(site)
        for i in sched.events_in(tau, t):
            k = int(sched.marks[i])
            if k == 0:
                continue
            ra = find(base)
            for off in ball_offsets(window.dim, k):
                other = tuple(a + b for a, b in zip(site, off))
                if other != site and window.contains(other):
                    rb = find(window.flat_index(other))
                    if ra != rb:
                        parent[rb] = ra
                        ra = find(base)
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    _, labels = np.unique(roots, return_inverse=True)
    return IslandPartition(window, labels)
