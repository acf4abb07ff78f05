"""Interacting particle systems driven by per-site Poisson clocks.

Jump intensities decompose as rate times a mixture over interaction
ranges of finite-range update kernels.  A trajectory is a deterministic
function of the clock events (time, range mark, uniform): at each event
the site redraws its spin from the kernel at the sampled range, by
inverse cdf over the ordered alphabet.  Over a short enough horizon the
event-reach graph splits the window into islands whose evolutions are
independent, which is both the construction and the thing the tests
verify bit for bit against a single globally ordered pass.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bounds import retention_threshold
from .coupling import (
    DominatingMarkLaw,
    RateField,
    safe_time_horizon,
    schedule_for_site,
)
from .geometry import Site, Window, ball_offsets, ball_sites


class KernelNormalizationError(ValueError):
    """A kernel's probabilities do not sum to one."""


# ---------------------------------------------------------------------------
# Update kernels: p^[r](s | configuration restricted to B(x, r))
# ---------------------------------------------------------------------------


class UniformKernel:
    """Range-free resampling: uniform over the alphabet."""

    def probabilities(self, site, r, spin_at, alphabet):
        return [1.0 / len(alphabet)] * len(alphabet)


@dataclass(frozen=True)
class PointMassKernel:
    """Always jumps to one fixed spin."""

    spin: object

    def probabilities(self, site, r, spin_at, alphabet):
        return [1.0 if s == self.spin else 0.0 for s in alphabet]


class FlipKernel:
    """Deterministically flips a two-spin alphabet."""

    def probabilities(self, site, r, spin_at, alphabet):
        if len(alphabet) != 2:
            raise ValueError("flip kernel needs a two-spin alphabet")
        current = spin_at(site)
        return [1.0 if s != current else 0.0 for s in alphabet]


class VoterKernel:
    """Adopt the spin of a uniformly chosen site of B(x, r) (x included)."""

    def probabilities(self, site, r, spin_at, alphabet):
        ball = ball_sites(site, r)
        counts = {s: 0 for s in alphabet}
        for y in ball:
            counts[spin_at(y)] += 1
        total = len(ball)
        return [counts[s] / total for s in alphabet]


@dataclass(frozen=True)
class MajorityKernel:
    """Majority spin of B(x, r) with probability 1 - noise * (|S| - 1);
    every other spin gets probability noise.  Ties split the top mass."""

    noise: float = 0.1

    def probabilities(self, site, r, spin_at, alphabet):
        if not (0.0 <= self.noise < 1.0 / len(alphabet)):
            raise ValueError("noise too large for the alphabet")
        counts = {s: 0 for s in alphabet}
        for y in ball_sites(site, r):
            counts[spin_at(y)] += 1
        top = max(counts.values())
        winners = [s for s in alphabet if counts[s] == top]
        loser_mass = self.noise * (len(alphabet) - len(winners))
        win_p = (1.0 - loser_mass) / len(winners)
        return [win_p if s in winners else self.noise for s in alphabet]


@dataclass(frozen=True)
class NoisyCopyKernel:
    """Copy the spin r steps along the first axis, else uniform noise.

    Asymmetric on purpose: the read set is the single site x + r e_1,
    which still lies inside B(x, r).
    """

    noise: float = 0.05

    def probabilities(self, site, r, spin_at, alphabet):
        source = (site[0] + r,) + tuple(site[1:])
        copied = spin_at(source)
        base = self.noise / len(alphabet)
        return [base + (1.0 - self.noise) * (s == copied) for s in alphabet]


KERNELS = {
    "uniform": lambda: UniformKernel(),
    "voter": lambda: VoterKernel(),
    "majority": lambda: MajorityKernel(),
    "noisy-copy": lambda: NoisyCopyKernel(),
}


# ---------------------------------------------------------------------------
# System specification and boundary policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParticleSystemSpec:
    """Finite spin alphabet, per-class rates and range laws, one kernel.

    The kernel's output at range r may depend on the configuration only
    through B(x, r); the locality tests perturb spins outside that ball
    and demand identical updates.
    """

    alphabet: tuple
    rates: RateField
    range_laws: tuple
    kernel: object

    def __post_init__(self):
        if len(self.alphabet) < 2 or len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet must hold at least two distinct spins")
        if len(self.range_laws) != self.rates.n_classes:
            raise ValueError("one range law per rate class")
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        object.__setattr__(self, "range_laws", tuple(self.range_laws))

    def class_of(self, site: Site) -> int:
        return self.rates.class_of(site)

    def dominating_law(self) -> DominatingMarkLaw:
        return DominatingMarkLaw(self.rates, self.range_laws)

    def safe_interval(self, dim: int) -> float:
        """Horizon below which islands are subcritical: t0 from the
        dominating mark law's retention threshold."""
        p0 = retention_threshold(dim, self.dominating_law())
        return safe_time_horizon(self.rates, p0)


@dataclass(frozen=True)
class FrozenBoundary:
    """Reads outside the window return one constant fill spin."""

    fill: object

    def resolve(self, site: Site, window: Window):
        return None  # read the constant instead

    def describe(self) -> str:
        return f"frozen:{self.fill}"


@dataclass(frozen=True)
class PeriodicBoundary:
    """Reads outside the window wrap around torus-style."""

    def resolve(self, site: Site, window: Window):
        return tuple(
            (c - a) % n + a for c, a, n in zip(site, window.lo, window.shape)
        )

    def describe(self) -> str:
        return "periodic"


def make_spin_lookup(config: dict, window: Window, boundary) -> Callable:
    def spin_at(site: Site):
        if window.contains(site):
            return config[site]
        inside = boundary.resolve(site, window)
        if inside is None:
            return boundary.fill
        return config[inside]

    return spin_at


def update_value(
    spec: ParticleSystemSpec, x: Site, r: int, spin_at: Callable, u: float
):
    """Inverse-cdf draw from the range-r kernel at site x.

    Deterministic in (the configuration on B(x, r), u); the alphabet
    order fixes the inverse cdf.
    """
    if not (0.0 < u <= 1.0):
        raise ValueError("update uniform must be in (0, 1]")
    probs = spec.kernel.probabilities(x, r, spin_at, spec.alphabet)
    total = math.fsum(probs)
    if abs(total - 1.0) > 1e-12 or any(p < -1e-15 for p in probs):
        raise KernelNormalizationError(
            f"kernel probabilities sum to {total} at {x}, range {r}"
        )
    acc = 0.0
    for s, p in zip(spec.alphabet, probs):
        acc += p
        if u <= acc:
            return s
    return spec.alphabet[-1]


# ---------------------------------------------------------------------------
# Island-wise evolution
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Piecewise-constant path: replaying the events rebuilds the final
    configuration from the initial one."""

    window: Window
    initial: dict
    events: list  # (absolute time, site, new spin)
    final: dict
    boundary: str
    interval_length: float
    n_intervals: int
    boundary_event_count: int
    seed: object

    def replay(self) -> dict:
        config = dict(self.initial)
        for _, site, spin in self.events:
            config[site] = spin
        return config

    def config_at(self, t: float) -> dict:
        config = dict(self.initial)
        for time, site, spin in self.events:
            if time > t:
                break
            config[site] = spin
        return config


def islands(schedules: dict, window: Window, tau: float, t: float, boundary=None):
    """Partition of the window into non-interacting islands on (tau, t].

    Under a periodic boundary the event reach wraps, so wrapped sites
    join the island too; frozen boundaries just truncate at the edge.
    """
    n = window.n_sites
    parent = list(range(n))

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    wrap = isinstance(boundary, PeriodicBoundary)
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
                if not window.contains(other):
                    if not wrap:
                        continue
                    other = boundary.resolve(other, window)
                if other == site:
                    continue
                rb = find(window.flat_index(other))
                if ra != rb:
                    parent[rb] = ra
                    ra = find(base)
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    labels_map = {}
    groups = {}
    for flat, root in enumerate(roots.tolist()):
        lbl = labels_map.setdefault(root, len(labels_map))
        groups.setdefault(lbl, []).append(window.site_of_flat(flat))
    return [groups[i] for i in range(len(groups))]


def evolve_island(
    spec: ParticleSystemSpec,
    island: Sequence[Site],
    schedules: dict,
    config: dict,
    window: Window,
    boundary,
    t_offset: float = 0.0,
) -> tuple:
    """Apply the island's events in time order; mutates config in place.

    Returns (event log, boundary touch count).  Exactly one site updates
    per event; between events the configuration is constant.
    """
    pending = []
    for site in island:
        sched = schedules[site]
        for i in range(sched.n_events):
            pending.append(
                (
                    float(sched.times[i]),
                    window.flat_index(site),
                    site,
                    int(sched.marks[i]),
                    float(sched.uniforms[i]),
                )
            )
    pending.sort(key=lambda e: (e[0], e[1]))
    spin_at = make_spin_lookup(config, window, boundary)
    log = []
    boundary_touches = 0
    for time, _, site, mark, u in pending:
        if not window.contains_ball(site, mark):
            boundary_touches += 1
        new_spin = update_value(spec, site, mark, spin_at, u)
        config[site] = new_spin
        log.append((t_offset + time, site, new_spin))
    return log, boundary_touches


def simulate(
    spec: ParticleSystemSpec,
    window: Window,
    eta: dict,
    horizon: float,
    seed,
    boundary=None,
    interval: float | None = None,
    start_interval: int = 0,
    use_islands: bool = True,
) -> Trajectory:
    """Evolve the window over [0, horizon] in safe-length intervals.

    Each interval samples fresh per-site schedules (derived from the
    master seed and the absolute interval index), partitions the window
    into islands, evolves every island independently, and splices the
    intervals by the Markov property.  ``use_islands=False`` runs the
    same schedules as one globally time-ordered pass; the two must agree
    event for event.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if boundary is None:
        boundary = FrozenBoundary(spec.alphabet[0])
    for site in window.sites():
        if site not in eta:
            raise ValueError(f"initial configuration misses {site}")
    tau = interval if interval is not None else spec.safe_interval(window.dim)
    if interval is not None:
        safe = spec.safe_interval(window.dim)
        if interval > safe:
            warnings.warn(
                f"interval {interval} above the safe horizon {safe:.3g}: "
                "islands may span the window",
                stacklevel=2,
            )
    n_intervals = max(1, math.ceil(horizon / tau - 1e-12))
    config = dict(eta)
    events = []
    boundary_touches = 0
    for j in range(n_intervals):
        length = min(tau, horizon - j * tau)
        scheds = {
            site: schedule_for_site(
                spec.rates, spec.range_laws, length, seed, start_interval + j, site
            )
            for site in window.sites()
        }
        offset = j * tau
        if use_islands:
            parts = islands(scheds, window, 0.0, length, boundary)
        else:
            parts = [list(window.sites())]
        interval_log = []
        for part in parts:
            log, touches = evolve_island(
                spec, part, scheds, config, window, boundary, t_offset=offset
            )
            interval_log.extend(log)
            boundary_touches += touches
        interval_log.sort(key=lambda e: (e[0], window.flat_index(e[1])))
        events.extend(interval_log)
    return Trajectory(
        window=window,
        initial=dict(eta),
        events=events,
        final=config,
        boundary=boundary.describe(),
        interval_length=tau,
        n_intervals=n_intervals,
        boundary_event_count=boundary_touches,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Generator rate verification on tiny systems
# ---------------------------------------------------------------------------


def mixture_jump_probability(
    spec: ParticleSystemSpec, x: Site, s, spin_at: Callable, tol: float = 1e-12
) -> float:
    """p_x(s | sigma) = sum_r nu_x(r) p^[r](s | sigma), truncated where
    the range tail is below tol (kernel probabilities are at most 1)."""
    law = spec.range_laws[spec.class_of(x)]
    total = 0.0
    r = 0
    while True:
        w = law.pmf(r)
        if w > 0.0:
            idx = spec.alphabet.index(s)
            total += w * spec.kernel.probabilities(x, r, spin_at, spec.alphabet)[idx]
        if law.tail(r) < tol:
            return total
        r += 1


@dataclass(frozen=True)
class RateCheckResult:
    site: Site
    spin: object
    replicas: int
    hits: int
    empirical: float
    target: float
    z_score: float


def generator_rate_check(
    spec: ParticleSystemSpec,
    window: Window,
    eta: dict,
    x: Site,
    s,
    dt: float,
    replicas: int,
    seed: int,
    boundary=None,
) -> RateCheckResult:
    """Frequency of seeing exactly the single jump eta -> eta_{x,s} on
    [0, dt] versus the generator rate dt * M_x * p_x(s | eta).

    Needs M_sup * dt small so multi-event corrections stay inside the
    Monte Carlo noise.
    """
    if spec.rates.sup_rate * dt > 0.05:
        raise ValueError("dt too large for a first-order rate check")
    if boundary is None:
        boundary = FrozenBoundary(spec.alphabet[0])
    target_conf = dict(eta)
    target_conf[x] = s
    if target_conf == eta:
        target_conf = None  # invisible jump; frequency compared against 0
    spin_at = make_spin_lookup(dict(eta), window, boundary)
    rate = spec.rates.rates[spec.class_of(x)]
    p_jump = mixture_jump_probability(spec, x, s, spin_at)
    target = 0.0 if target_conf is None else dt * rate * p_jump
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i in range(replicas):
            traj = simulate(
                spec,
                window,
                eta,
                dt,
                (seed, i),
                boundary=boundary,
                interval=dt,
            )
            if target_conf is not None and traj.final == target_conf:
                hits += 1
    empirical = hits / replicas
    if target > 0.0:
        sigma = math.sqrt(target * (1 - target) / replicas)
        z = (empirical - target) / sigma
    else:
        z = 0.0 if hits == 0 else math.inf
    return RateCheckResult(x, s, replicas, hits, empirical, target, z)
