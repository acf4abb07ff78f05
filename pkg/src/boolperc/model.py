"""Bernoulli marked point process on a finite window and its random graph.

A sample holds occupied sites and their radii.  Two sites are adjacent
when either is occupied with a ball covering the other; clusters are the
connected components of that covering graph, including covered but
unoccupied sites.  The events driving the multiscale analysis (local
escape past 8r inside the 10r ball, far sites with radius above a tenth
of their norm, near sites with radius at least r) are evaluated litera
lly on the window; whatever lives outside the window is accounted for by
an explicit analytic bound, never silently dropped.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import rng
from .bounds import far_tail_sum
from .geometry import Site, Window, ball_offsets, l1_dist, l1_norm
from .radii import (
    DivergentMomentError,
    RadiusLaw,
    SiteLawField,
    envelope,
)


class WindowTooSmallError(ValueError):
    """The sampled window cannot decide the requested event."""


@dataclass(frozen=True)
class ModelParams:
    """Sampling parameters: dimension, retention, radius law, window.

    ``retention`` is a single probability or one per site class (sites
    are classed by coordinate sum mod the number of classes).  ``law``
    is a single radius law or a per-class field.  The target window is
    enlarged by ``margin`` before sampling; with margin None the margin
    is the law's quantile at 1 - margin_epsilon, which caps how much the
    ignored exterior can matter and is reported alongside far-reach
    events.
    """

    dim: int
    retention: float | tuple
    law: RadiusLaw | SiteLawField
    window: Window
    margin: int | None = None
    margin_epsilon: float = 1e-6

    def __post_init__(self):
        if self.dim != self.window.dim:
            raise ValueError("window dimension mismatch")
        ps = self.retention if isinstance(self.retention, tuple) else (self.retention,)
        if not ps or any(not (0.0 < p < 1.0) for p in ps):
            raise ValueError("retention probabilities must lie strictly in (0, 1)")

    @property
    def retention_max(self) -> float:
        if isinstance(self.retention, tuple):
            return max(self.retention)
        return self.retention

    @property
    def effective_law(self) -> RadiusLaw:
        """Single law whose tail dominates every class tail."""
        if isinstance(self.law, SiteLawField):
            return envelope(self.law)
        return self.law

    def resolved_margin(self) -> int:
        if self.margin is not None:
            return self.margin
        return self.effective_law.quantile(1.0 - self.margin_epsilon)

    def sampling_window(self) -> Window:
        return self.window.expand(self.resolved_margin())


def _bernoulli_positions(gen: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Positions of successes of n iid Bernoulli(p) trials.

    Drawn as geometric gaps between successes, which is the same process
    without touching the (1-p) fraction of sites; cuts the dominant cost
    on large windows.
    """
    mean = n * p
    chunk = int(mean + 6.0 * math.sqrt(mean * (1.0 - p)) + 16)
    log_q = math.log1p(-p)

    def draw(size: int) -> np.ndarray:
        # geometric gaps by inversion: 1 + floor(ln U / ln(1-p))
        u = gen.random(size)
        np.clip(u, 1e-300, None, out=u)
        return 1 + np.floor(np.log(u) / log_q).astype(np.int64)

    pos = np.cumsum(draw(chunk)) - 1
    while pos[-1] < n - 1:
        pos = np.concatenate([pos, pos[-1] + np.cumsum(draw(chunk))])
    return pos[pos < n]


def _coords_from_flat(flat: np.ndarray, window: Window) -> np.ndarray:
    out = np.empty((len(flat), window.dim), dtype=np.int64)
    rem = flat.astype(np.int64)
    for ax in range(window.dim - 1, -1, -1):
        rem, off = np.divmod(rem, window.shape[ax])
        out[:, ax] = off + window.lo[ax]
    return out


def _class_array(coords: np.ndarray, n_classes: int) -> np.ndarray:
    return np.mod(coords.sum(axis=1), n_classes)


def _site_class_sums(window: Window) -> np.ndarray:
    total = np.zeros(window.shape, dtype=np.int64)
    for ax in range(window.dim):
        idx = np.arange(window.lo[ax], window.hi[ax] + 1)
        shape = [1] * window.dim
        shape[ax] = len(idx)
        total = total + idx.reshape(shape)
    return total.reshape(-1)


@dataclass
class CoverIndex:
    """Covering incidence of a sample, both directions, CSR layout."""

    cov_flat: np.ndarray   # flat index of the covered site, per incidence
    occ_of: np.ndarray     # occupied-site ordinal, per incidence
    fwd_ptr: np.ndarray    # per occupied ordinal: slice into fwd_cov
    fwd_cov: np.ndarray
    rev_ptr: np.ndarray    # per window site: slice into rev_occ
    rev_occ: np.ndarray


@dataclass(frozen=True)
class MarkedSample:
    """One realization: occupied sites with radii on a finite window."""

    window: Window
    target_window: Window
    occ_flat: np.ndarray
    occ_coords: np.ndarray
    radii: np.ndarray
    seed: object
    params: ModelParams

    @property
    def n_occupied(self) -> int:
        return len(self.occ_flat)

    @cached_property
    def norms(self) -> np.ndarray:
        return np.abs(self.occ_coords).sum(axis=1)

    @cached_property
    def _occ_lookup(self) -> dict:
        return {int(f): i for i, f in enumerate(self.occ_flat)}

    def is_occupied(self, site: Site) -> bool:
        return self.window.flat_index(site) in self._occ_lookup

    def radius_at(self, site: Site) -> int:
        idx = self._occ_lookup.get(self.window.flat_index(site))
        if idx is None:
            raise KeyError(f"site {site} is not occupied")
        return int(self.radii[idx])

    @cached_property
    def cover(self) -> CoverIndex:
        win = self.window
        chunks_cov = []
        chunks_occ = []
        for r in np.unique(self.radii) if len(self.radii) else []:
            sel = np.flatnonzero(self.radii == r)
            offs = np.array(ball_offsets(win.dim, int(r)), dtype=np.int64)
            pts = self.occ_coords[sel][:, None, :] + offs[None, :, :]
            ok = np.ones(pts.shape[:2], dtype=bool)
            for ax in range(win.dim):
                ok &= (pts[:, :, ax] >= win.lo[ax]) & (pts[:, :, ax] <= win.hi[ax])
            flat = np.zeros(pts.shape[:2], dtype=np.int64)
            for ax in range(win.dim):
                flat = flat * win.shape[ax] + (pts[:, :, ax] - win.lo[ax])
            occ_ids = np.broadcast_to(sel[:, None], pts.shape[:2])
            chunks_cov.append(flat[ok])
            chunks_occ.append(occ_ids[ok])
        if chunks_cov:
            cov = np.concatenate(chunks_cov)
            occ = np.concatenate(chunks_occ)
        else:
            cov = np.empty(0, dtype=np.int64)
            occ = np.empty(0, dtype=np.int64)
        order = np.argsort(occ, kind="stable")
        fwd_cov = cov[order]
        fwd_counts = np.bincount(occ, minlength=self.n_occupied)
        fwd_ptr = np.concatenate([[0], np.cumsum(fwd_counts)])
        order2 = np.argsort(cov, kind="stable")
        rev_occ = occ[order2]
        rev_counts = np.bincount(cov, minlength=win.n_sites)
        rev_ptr = np.concatenate([[0], np.cumsum(rev_counts)])
        return CoverIndex(cov, occ, fwd_ptr, fwd_cov, rev_ptr, rev_occ)

    def covered_mask(self) -> np.ndarray:
        mask = np.zeros(self.window.n_sites, dtype=bool)
        mask[self.cover.cov_flat] = True
        return mask


def sample(params: ModelParams, seed) -> MarkedSample:
    """Draw one sample; bit-reproducible from (params, seed).

    Radii are drawn only at occupied sites, in flat-index order, which
    is distributionally equivalent to marking every site (unoccupied
    radii never touch the graph) and halves the uniforms consumed.
    """
    seed_path = seed if isinstance(seed, tuple) else (seed,)
    win = params.sampling_window()
    n = win.n_sites
    gen_occ = rng.substream(*seed_path, rng.DOMAIN_OCCUPANCY)
    if isinstance(params.retention, tuple):
        u = gen_occ.random(n)
        classes = np.mod(_site_class_sums(win), len(params.retention))
        p_site = np.asarray(params.retention)[classes]
        occ_flat = np.flatnonzero(u < p_site)
    else:
        occ_flat = _bernoulli_positions(gen_occ, n, params.retention)
    coords = _coords_from_flat(occ_flat, win)
    gen_rad = rng.substream(*seed_path, rng.DOMAIN_RADII)
    u_rad = rng.uniforms_halfopen(gen_rad, len(occ_flat))
    if isinstance(params.law, SiteLawField):
        radii = np.zeros(len(occ_flat), dtype=np.int64)
        cls = _class_array(coords, params.law.n_classes)
        for c, law in enumerate(params.law.laws):
            m = cls == c
            if m.any():
                radii[m] = law.quantile_array(u_rad[m])
    else:
        radii = params.law.quantile_array(u_rad)
    return MarkedSample(
        window=win,
        target_window=params.window,
        occ_flat=occ_flat,
        occ_coords=coords,
        radii=radii,
        seed=seed,
        params=params,
    )


def sample_with_uniforms(
    params: ModelParams, u_occ: np.ndarray, u_rad: np.ndarray
) -> MarkedSample:
    """Build a sample from explicit per-site uniforms (for couplings).

    Unlike ``sample`` this consumes one radius uniform per site, whether
    occupied or not, so two parameter sets driven by the same uniforms
    are coupled site by site.
    """
    win = params.sampling_window()
    if len(u_occ) != win.n_sites or len(u_rad) != win.n_sites:
        raise ValueError("need one uniform pair per window site")
    if isinstance(params.retention, tuple):
        classes = np.mod(_site_class_sums(win), len(params.retention))
        p_site = np.asarray(params.retention)[classes]
        occ_flat = np.flatnonzero(u_occ < p_site)
    else:
        occ_flat = np.flatnonzero(u_occ < params.retention)
    coords = _coords_from_flat(occ_flat, win)
    ur = u_rad[occ_flat]
    if isinstance(params.law, SiteLawField):
        radii = np.zeros(len(occ_flat), dtype=np.int64)
        cls = _class_array(coords, params.law.n_classes)
        for c, law in enumerate(params.law.laws):
            m = cls == c
            if m.any():
                radii[m] = law.quantile_array(ur[m])
    else:
        radii = params.law.quantile_array(ur)
    return MarkedSample(
        window=win,
        target_window=params.window,
        occ_flat=occ_flat,
        occ_coords=coords,
        radii=radii,
        seed=None,
        params=params,
    )


# ---------------------------------------------------------------------------
# Graph structure: adjacency, clusters, reach
# ---------------------------------------------------------------------------


def adjacent(s: MarkedSample, x: Site, y: Site) -> bool:
    """Direct evaluation of the edge rule; the adjacency oracle."""
    if x == y:
        return False
    d = l1_dist(x, y)
    if s.is_occupied(x) and d <= s.radius_at(x):
        return True
    if s.is_occupied(y) and d <= s.radius_at(y):
        return True
    return False


def edges(s: MarkedSample) -> set:
    """Explicit edge set as sorted site pairs; small windows only."""
    out = set()
    cov = s.cover
    for i in range(s.n_occupied):
        center = tuple(int(c) for c in s.occ_coords[i])
        for f in cov.fwd_cov[cov.fwd_ptr[i]: cov.fwd_ptr[i + 1]]:
            other = s.window.site_of_flat(int(f))
            if other != center:
                out.add(tuple(sorted((center, other))))
    return out


def _neighbors(s: MarkedSample, flat: int) -> list:
    cov = s.cover
    out = []
    occ_idx = s._occ_lookup.get(flat)
    if occ_idx is not None:
        out.extend(
            int(f) for f in cov.fwd_cov[cov.fwd_ptr[occ_idx]: cov.fwd_ptr[occ_idx + 1]]
        )
    for oi in cov.rev_occ[cov.rev_ptr[flat]: cov.rev_ptr[flat + 1]]:
        out.append(int(s.occ_flat[oi]))
    return out


@dataclass(frozen=True)
class ClusterReport:
    """Partition of the window sites into covering-graph components."""

    window: Window
    labels: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.labels.max()) + 1

    def component_of(self, site: Site) -> int:
        return int(self.labels[self.window.flat_index(site)])

    def component_sites(self, label: int) -> list:
        return [
            self.window.site_of_flat(int(f))
            for f in np.flatnonzero(self.labels == label)
        ]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels)


def clusters(s: MarkedSample) -> ClusterReport:
    """Union-find over the covering incidences; every site gets a label."""
    n = s.window.n_sites
    parent = list(range(n))

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    cov = s.cover
    occ_flat = s.occ_flat
    for occ_i, covered in zip(cov.occ_of.tolist(), cov.cov_flat.tolist()):
        ra, rb = find(int(occ_flat[occ_i])), find(covered)
        if ra != rb:
            parent[rb] = ra
    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    _, labels = np.unique(roots, return_inverse=True)
    return ClusterReport(s.window, labels)


@dataclass(frozen=True)
class ReachResult:
    """Max L1 distance reached by a cluster, with boundary censoring."""

    value: int
    censored: bool


def diameter(s: MarkedSample, x: Site) -> ReachResult:
    """Reach of the cluster of x: max L1 distance from x over C(x).

    Censored when the cluster touches the window boundary, in which case
    the true reach on the infinite lattice may be larger.
    """
    if not s.window.contains(x):
        raise ValueError(f"site {x} outside the window")
    win = s.window
    start = win.flat_index(x)
    seen = {start}
    queue = [start]
    best = 0
    censored = win.on_boundary(x)
    while queue:
        nxt = []
        for f in queue:
            for g in _neighbors(s, f):
                if g not in seen:
                    seen.add(g)
                    site = win.site_of_flat(g)
                    dist = l1_dist(site, x)
                    if dist > best:
                        best = dist
                    if win.on_boundary(site):
                        censored = True
                    nxt.append(g)
        queue = nxt
    return ReachResult(best, censored)


def local_escape(s: MarkedSample, x: Site, r: int) -> bool:
    """Whether x connects past B(x, 8r) within the graph induced on B(x, 10r)."""
    if r < 1:
        raise ValueError("scale r must be >= 1")
    if not s.window.contains_ball(x, 10 * r):
        raise WindowTooSmallError(
            f"window does not contain the radius-{10 * r} ball around {x}"
        )
    win = s.window
    start = win.flat_index(x)
    seen = {start}
    queue = [start]
    inner, outer = 8 * r, 10 * r
    while queue:
        nxt = []
        for f in queue:
            for g in _neighbors(s, f):
                if g in seen:
                    continue
                site = win.site_of_flat(g)
                dist = l1_dist(site, x)
                if dist > outer:
                    continue
                if dist > inner:
                    return True
                seen.add(g)
                nxt.append(g)
        queue = nxt
    return False


# ---------------------------------------------------------------------------
# Far / near large-radius events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FarReachResult:
    """Far-large-radius event on the window plus exterior truncation bound.

    ``observed`` is the literal evaluation over sampled sites; the
    unobserved exterior can flip a False to True with probability at
    most ``exterior_bound`` (a union bound; inf for laws with divergent
    d-th moment).
    """

    observed: bool
    exterior_bound: float

    def __bool__(self) -> bool:
        return self.observed


def window_inradius(window: Window) -> int:
    return min(min(-a for a in window.lo), min(window.hi))


def far_reach_event(s: MarkedSample, r: int) -> FarReachResult:
    """Some occupied site outside B(0, 10r) with radius above a tenth of
    its norm."""
    if r < 1:
        raise ValueError("scale r must be >= 1")
    if not s.window.contains_ball((0,) * s.window.dim, 10 * r):
        raise WindowTooSmallError("window does not contain B(0, 10r)")
    mask = (s.norms > 10 * r) & (10 * s.radii > s.norms)
    observed = bool(mask.any())
    k_min = max(window_inradius(s.window), 10 * r)
    try:
        bound = far_tail_sum(
            s.params.retention_max, s.params.effective_law, s.window.dim, k_min
        )
    except DivergentMomentError:
        bound = math.inf
    return FarReachResult(observed, bound)


def near_reach_event(s: MarkedSample, r: int) -> bool:
    """Some occupied site inside B(0, 100r) with radius at least r."""
    if r < 1:
        raise ValueError("scale r must be >= 1")
    if not s.window.contains_ball((0,) * s.window.dim, 100 * r):
        raise WindowTooSmallError("window does not contain B(0, 100r)")
    return bool(((s.norms <= 100 * r) & (s.radii >= r)).any())


# ---------------------------------------------------------------------------
# Desk-scale percolation surrogate
# ---------------------------------------------------------------------------


def percolation_proxy(s: MarkedSample) -> bool:
    """Whether the covered region spans the window along some axis.

    The covered region (union of the occupied balls) is read with
    nearest-neighbor adjacency, which is the discrete counterpart of
    component connectivity for ball unions: with radius identically 0 it
    reduces exactly to independent site percolation.  Spanning means one
    component meets both opposite faces of the window along some axis,
    the standard desk-scale surrogate for an infinite cluster.
    """
    mask = s.covered_mask().reshape(s.window.shape)
    if not mask.any():
        return False
    structure = ndimage.generate_binary_structure(s.window.dim, 1)
    labels, _ = ndimage.label(mask, structure=structure)
    for ax in range(s.window.dim):
        first = np.take(labels, 0, axis=ax)
        last = np.take(labels, -1, axis=ax)
        common = np.intersect1d(first[first > 0], last[last > 0])
        if len(common):
            return True
    return False


# ---------------------------------------------------------------------------
# Replica Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateResult:
    n: int
    successes: int
    estimate: float
    stderr: float
    wilson_low: float
    wilson_high: float


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple:
    if n <= 0:
        raise ValueError("need n >= 1")
    phat = k / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n))
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def replica_seed(master_seed: int, i: int) -> tuple:
    return (master_seed, rng.DOMAIN_REPLICA, i)


def replicate(
    fn: Callable[[MarkedSample], object],
    params: ModelParams,
    replicas: int,
    seed: int,
) -> list:
    """Evaluate fn on independent replica samples with derived substreams."""
    return [fn(sample(params, replica_seed(seed, i))) for i in range(replicas)]


def _estimate_chunk(args) -> int:
    fn, params, seed, lo, hi = args
    count = 0
    for i in range(lo, hi):
        if fn(sample(params, replica_seed(seed, i))):
            count += 1
    return count


def estimate(
    event: Callable[[MarkedSample], bool],
    params: ModelParams,
    replicas: int,
    seed: int,
    workers: int = 1,
) -> EstimateResult:
    """Monte Carlo frequency of an event over independent replicas.

    Replica i always consumes the substream (seed, replica-domain, i),
    so the result is identical for any worker count.
    """
    if replicas < 1:
        raise ValueError("need replicas >= 1")
    if workers > 1:
        bounds_ = np.linspace(0, replicas, workers + 1).astype(int)
        chunks = [
            (event, params, seed, int(a), int(b))
            for a, b in zip(bounds_, bounds_[1:])
            if b > a
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            k = sum(pool.map(_estimate_chunk, chunks))
    else:
        k = _estimate_chunk((event, params, seed, 0, replicas))
    phat = k / replicas
    lo, hi = wilson_interval(k, replicas)
    stderr = math.sqrt(phat * (1 - phat) / replicas)
    return EstimateResult(replicas, k, phat, stderr, lo, hi)


# ---------------------------------------------------------------------------
# Serialization: one CSV record per occupied site
# ---------------------------------------------------------------------------


def write_sample_csv(s: MarkedSample, path, extra_meta: dict | None = None) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        for key, val in (extra_meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(f"# dim={s.window.dim}\n")
        fh.write(f"# window_lo={','.join(map(str, s.window.lo))}\n")
        fh.write(f"# window_hi={','.join(map(str, s.window.hi))}\n")
        if isinstance(s.params.retention, tuple):
            fh.write(f"# p={';'.join(map(str, s.params.retention))}\n")
        else:
            fh.write(f"# p={s.params.retention}\n")
        if isinstance(s.params.law, SiteLawField):
            law_s = ";".join(l.spec_string() for l in s.params.law.laws)
        else:
            law_s = s.params.law.spec_string()
        fh.write(f"# law={law_s}\n")
        fh.write(f"# seed={s.seed}\n")
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(s.window.dim)] + ["radius"])
        for coords, radius in zip(s.occ_coords, s.radii):
            writer.writerow([*map(int, coords), int(radius)])


def read_sample_csv(path) -> tuple:
    """Read back (metadata dict, coords array, radii array)."""
    import csv

    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val
                continue
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    dim = len(header) - 1
    coords, radii = [], []
    for row in reader:
        if not row:
            continue
        coords.append([int(v) for v in row[:dim]])
        radii.append(int(row[dim]))
    return (
        meta,
        np.array(coords, dtype=np.int64).reshape(-1, dim),
        np.array(radii, dtype=np.int64),
    )
