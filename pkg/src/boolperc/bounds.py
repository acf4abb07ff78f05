"""Certified numeric pipeline for the subcritical regime.

Provides the explicit dimensional constants, the retention threshold
below which the scale recursion contracts, the recursion itself (both
the proved induction bound and the sharper direct iterate), and a fully
computable upper bound on the tail of the cluster reach.

Every number produced here is an upper bound: series remainders are
always over-approximated, never dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .geometry import ball_count_constant, sphere_cardinality
from .radii import DivergentMomentError, RadiusLaw


class RecursionHypothesisError(ValueError):
    """Inputs violate the contraction hypotheses (f0 <= 1/2, g <= 1/4)."""


class ScaleGridError(ValueError):
    """Requested radius is not of the certified form 10^n * d * r'."""


@dataclass(frozen=True)
class BoundConstants:
    """Explicit constants entering the scale recursion for dimension d.

    ball_constant C satisfies |B(0,r)| <= C r^d (C = 3^d).
    sphere_pair is |S_{10d}| * |S_{80d}|, the number of center pairs in
    the two-scale containment.  escape_coef = 10^d C bounds
    P(escape at scale r) / (p r^d); near_coef = 100^d C plays the same
    role for the near-large-radius event.
    """

    dim: int
    ball_constant: int
    sphere_pair: int
    escape_coef: int
    near_coef: int


def constants(dim: int) -> BoundConstants:
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    c = ball_count_constant(dim)
    pair = sphere_cardinality(dim, 10 * dim) * sphere_cardinality(dim, 80 * dim)
    return BoundConstants(
        dim=dim,
        ball_constant=c,
        sphere_pair=pair,
        escape_coef=10 ** dim * c,
        near_coef=100 ** dim * c,
    )


def escape_prob_bound(p: float, r: int, consts: BoundConstants) -> float:
    """Upper bound on C1 * P(escape at scale r*d): C1 * p * C2 * (r d)^d."""
    if p < 0:
        raise ValueError("retention must be >= 0")
    d = consts.dim
    return consts.sphere_pair * p * consts.escape_coef * (r * d) ** d


def near_reach_bound(
    p: float, r: int, consts: BoundConstants, law: RadiusLaw
) -> float:
    """Upper bound on C1 * P(some near site has radius >= r*d)."""
    if p < 0:
        raise ValueError("retention must be >= 0")
    d = consts.dim
    tail_m = law.tail_moment(d, r * d)
    return consts.sphere_pair * p * consts.near_coef * float(tail_m)


def retention_threshold(dim: int, law: RadiusLaw) -> float:
    """Retention p0 below which the recursion hypotheses hold.

    p0 = min( 1 / (2 C1 C2 (10 d)^d), 1 / (4 C1 C3 E[R^d]) ).

    For the degenerate radius 0 the second term is vacuous (the
    near-large-radius event is empty), so p0 reduces to the first term.
    Divergent d-th moments admit no threshold at all.
    """
    if not law.moment_is_finite(dim):
        raise DivergentMomentError(
            "d-th moment diverges: no subcritical threshold (coverage regime)"
        )
    c = constants(dim)
    term1 = Fraction(1, 2 * c.sphere_pair * c.escape_coef * (10 * dim) ** dim)
    moment = law.dth_moment(dim)
    if moment == 0:
        return float(term1)
    if isinstance(moment, int):
        term2 = Fraction(1, 4 * c.sphere_pair * c.near_coef * moment)
        return float(min(term1, term2))
    term2 = 1.0 / (4 * c.sphere_pair * c.near_coef * float(moment))
    return float(min(float(term1), term2))


@dataclass(frozen=True)
class RecursionRow:
    """One scale level: bound on the rescaled escape probability."""

    n: int
    direct: float
    induction: float


def iterate_scale_recursion(f0: float, g_seq) -> list[RecursionRow]:
    """Run the contraction f(next scale) <= f^2 + g up the scale ladder.

    Returns rows n = 0 .. len(g_seq).  ``direct`` iterates
    F_{n+1} = F_n^2 + G_n; ``induction`` is the closed-form bound
    2^-(n+1) + sum_j 2^-j G_{n-1-j}, which is what the contraction
    argument proves and which always dominates the direct iterate.
    """
    g_seq = [float(g) for g in g_seq]
    if not (0.0 <= f0 <= 0.5):
        raise RecursionHypothesisError(f"need 0 <= f0 <= 1/2, got {f0}")
    for j, g in enumerate(g_seq):
        if not (0.0 <= g <= 0.25):
            raise RecursionHypothesisError(f"need 0 <= g <= 1/4, got g[{j}] = {g}")
    rows = [RecursionRow(0, f0, 0.5)]
    direct = f0
    for n in range(1, len(g_seq) + 1):
        direct = direct * direct + g_seq[n - 1]
        induction = 2.0 ** -(n + 1) + sum(
            2.0 ** -j * g_seq[n - 1 - j] for j in range(n)
        )
        rows.append(RecursionRow(n, direct, min(induction, 0.5)))
    return rows


def recursion_inputs(
    p: float, consts: BoundConstants, law: RadiusLaw, n_scales: int
) -> tuple[float, list[float]]:
    """Certified (f0, g sequence) feeding the scale recursion at retention p.

    f0 bounds the rescaled escape probability over the first decade of
    scales; g[j] bounds the near-large-radius term at scale 10^j.
    """
    f0 = escape_prob_bound(p, 10, consts)
    g_seq = [near_reach_bound(p, 10 ** j, consts, law) for j in range(n_scales)]
    return f0, g_seq


def scales_until(eps: float, f0: float, g_of_n, n_cap: int = 60) -> int:
    """Smallest scale level n with direct bound F_n < eps.

    ``g_of_n`` maps a scale index j to the g bound at that scale.
    """
    direct = f0
    if direct < eps:
        return 0
    for n in range(1, n_cap + 1):
        g = g_of_n(n - 1)
        if not (0.0 <= g <= 0.25):
            raise RecursionHypothesisError(f"g[{n - 1}] = {g} out of range")
        direct = direct * direct + g
        if direct < eps:
            return n
    raise RuntimeError(f"bound did not reach {eps} within {n_cap} scale levels")


# ---------------------------------------------------------------------------
# Union bound for the far-large-radius event, with certified remainders
# ---------------------------------------------------------------------------


def _certified_sphere_upper(dim: int, k: int) -> float:
    # |S_k| <= 3^d k^(d-1) for k >= 1, from |S_k| = sum_j 2^j C(d,j) C(k-1,j-1)
    return float(ball_count_constant(dim)) * float(k) ** (dim - 1)


def _remainder_bound(primitives, dim: int, k_done: int) -> float:
    """Upper bound on sum_{k > k_done} |S_k| * G(floor(k/10)) given tail
    envelope primitives.  Returns inf when more exact terms are needed."""
    total = 0.0
    three_d = float(ball_count_constant(dim))
    for prim in primitives:
        kind = prim[0]
        if kind == "bounded":
            rmax = prim[1]
            if k_done >= 10 * rmax:
                continue
            return math.inf
        if kind == "geometric":
            _, amp, q = prim
            rho = q ** 0.1
            gamma = ((k_done + 2) / (k_done + 1)) ** (dim - 1) * rho
            if gamma >= 1.0:
                return math.inf
            first = (amp / q) * three_d * (k_done + 1) ** (dim - 1) * rho ** (
                k_done + 1
            )
            total += first / (1.0 - gamma)
            continue
        if kind == "power":
            _, amp, s = prim
            if s <= dim + 1:
                raise DivergentMomentError(
                    "far-tail union bound diverges: power exponent too small"
                )
            total += (
                amp
                * three_d
                * 10.0 ** (s - 1)
                * k_done ** (dim - s + 1)
                / (s - dim - 1)
            )
            continue
        raise ValueError(f"unknown tail envelope primitive {prim!r}")
    return total


@lru_cache(maxsize=4096)
def far_tail_sum(
    p: float, law: RadiusLaw, dim: int, k_min: int, rel_tol: float = 1e-6
) -> float:
    """Certified upper bound on p * sum_{k > k_min} |S_k| * G(floor(k/10)).

    This is a union bound on the event that some occupied site beyond
    norm k_min carries a radius above a tenth of its norm; the multiscale
    argument only needs that this probability vanishes, but a computable
    value is required to report truncation bias and cluster reach tails.
    Exact sphere counts and exact law tails are summed decade by decade
    (the tail is constant within a decade of norms) until the analytic
    remainder from the law's tail envelope is below rel_tol of the
    running sum; the remainder is then added, keeping the result an
    upper bound with at most that relative slack.
    """
    if not law.moment_is_finite(dim):
        raise DivergentMomentError("far tail bound needs a finite d-th moment")
    primitives = law.tail_envelope()
    exact = 0.0
    k = k_min
    while True:
        m = (k + 1) // 10  # decade of the next norm
        decade_end = m * 10 + 9
        g = law.tail(m)
        if g > 0.0:
            for kk in range(k + 1, decade_end + 1):
                exact += sphere_cardinality(dim, kk) * g
        k = decade_end
        rem = _remainder_bound(primitives, dim, k)
        if rem <= rel_tol * max(exact, 1e-300) or rem < 1e-300:
            return p * (exact + rem)
        if k > 40_000_000:
            raise RuntimeError("far tail sum did not converge")


@dataclass(frozen=True)
class ReachTailBound:
    """Certified bound on P(cluster reach from the origin exceeds 8r)."""

    r: int
    scale_level: int
    base_scale: int
    escape_part_induction: float
    escape_part_direct: float
    far_part: float

    @property
    def total(self) -> float:
        return self.escape_part_induction + self.far_part

    @property
    def total_direct(self) -> float:
        return self.escape_part_direct + self.far_part


def decompose_scale(r: int, dim: int) -> tuple[int, int]:
    """Write r = 10^n * dim * r' with r' in {1..10}; raises off the grid."""
    if r < 1 or r % dim != 0:
        raise ScaleGridError(f"radius {r} is not a multiple of the dimension {dim}")
    q = r // dim
    n = 0
    while q > 10:
        if q % 10:
            raise ScaleGridError(f"radius {r} not of the form 10^n * d * r'")
        q //= 10
        n += 1
    return n, q


def reach_tail_bound(
    p: float, r: int, consts: BoundConstants, law: RadiusLaw
) -> ReachTailBound:
    """Bound P(reach > 8r) by escape-bound(r) + far-tail union bound.

    Requires p at or below the retention threshold so the recursion
    hypotheses hold, and r on the certified grid 10^n * d * r'.
    """
    d = consts.dim
    p0 = retention_threshold(d, law)
    if p > p0:
        raise ValueError(f"certified bound needs p <= threshold {p0}, got {p}")
    n, r_prime = decompose_scale(r, d)
    f0, g_seq = recursion_inputs(p, consts, law, n)
    rows = iterate_scale_recursion(f0, g_seq)
    far = far_tail_sum(p, law, d, 10 * r)
    return ReachTailBound(
        r=r,
        scale_level=n,
        base_scale=r_prime,
        escape_part_induction=rows[n].induction / consts.sphere_pair,
        escape_part_direct=rows[n].direct / consts.sphere_pair,
        far_part=far,
    )
