"""Exact L1 geometry of the integer lattice.

Balls and spheres are taken in the L1 (taxicab) norm.  Everything here
is integer arithmetic; the only rational arithmetic lives in
``rounding_distance_check`` which needs exact sums of fractional
coordinates.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

Site = tuple  # d-tuple of ints


class CoveringBudgetError(RuntimeError):
    """Raised when a covering check would enumerate too many sphere sites."""


def l1_norm(x: Site) -> int:
    return sum(abs(c) for c in x)


def l1_dist(x: Site, y: Site) -> int:
    return sum(abs(a - b) for a, b in zip(x, y))


@lru_cache(maxsize=None)
def ball_offsets(dim: int, r: int) -> tuple:
    """All offsets o with ||o|| <= r, lexicographically ordered."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if r < 0:
        raise ValueError("radius must be >= 0")
    if dim == 1:
        return tuple((c,) for c in range(-r, r + 1))
    out = []
    for c in range(-r, r + 1):
        for rest in ball_offsets(dim - 1, r - abs(c)):
            out.append((c,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def sphere_offsets(dim: int, r: int) -> tuple:
    """All offsets o with ||o|| == r."""
    if r == 0:
        return ((0,) * dim,)
    if dim == 1:
        return ((-r,), (r,))
    out = []
    for c in range(-r, r + 1):
        for rest in sphere_offsets(dim - 1, r - abs(c)):
            out.append((c,) + rest)
    return tuple(out)


def ball_sites(x: Site, r: int) -> list:
    """Sites of the closed L1 ball of radius r centred at x."""
    return [tuple(a + b for a, b in zip(x, o)) for o in ball_offsets(len(x), r)]


def sphere_sites(dim: int, r: int) -> list:
    """Sites of the L1 sphere of radius r around the origin."""
    return [o for o in sphere_offsets(dim, r)]


def ball_cardinality(dim: int, r: int) -> int:
    """|B(0,r)| by the exact binomial count sum_k 2^k C(d,k) C(r,k)."""
    if r < 0:
        return 0
    return sum(
        (1 << k) * math.comb(dim, k) * math.comb(r, k)
        for k in range(0, min(dim, r) + 1)
    )


def sphere_cardinality(dim: int, r: int) -> int:
    if r == 0:
        return 1
    return ball_cardinality(dim, r) - ball_cardinality(dim, r - 1)


def ball_count_constant(dim: int) -> int:
    """Published constant C with |B(0,r)| <= C * r^d for every r >= 1.

    C = 3^d works because |B(0,r)| <= (2r+1)^d <= (3r)^d for r >= 1.
    Explicit and provable; downstream bound constants inherit it.
    """
    return 3 ** dim


@dataclass(frozen=True)
class Window:
    """Finite axis-aligned box of lattice sites, bounds inclusive."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or len(self.lo) == 0:
            raise ValueError("lo/hi must be same nonzero dimension")
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError("empty window")

    @classmethod
    def cube(cls, dim: int, half_width: int, center: Site | None = None) -> "Window":
        if half_width < 0:
            raise ValueError("half_width must be >= 0")
        c = center if center is not None else (0,) * dim
        return cls(
            tuple(ci - half_width for ci in c),
            tuple(ci + half_width for ci in c),
        )

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def n_sites(self) -> int:
        return math.prod(self.shape)

    @property
    def center(self) -> Site:
        return tuple((a + b) // 2 for a, b in zip(self.lo, self.hi))

    def contains(self, site: Site) -> bool:
        return all(a <= c <= b for a, b, c in zip(self.lo, self.hi, site))

    def contains_ball(self, center: Site, r: int) -> bool:
        """Whether the L1 ball B(center, r) lies fully inside the window.

        The per-axis extremes center +- r*e_i are the farthest ball
        points along each axis, so the per-axis test is exact.
        """
        return all(
            c - r >= a and c + r <= b
            for a, b, c in zip(self.lo, self.hi, center)
        )

    def on_boundary(self, site: Site) -> bool:
        return any(
            c == a or c == b for a, b, c in zip(self.lo, self.hi, site)
        )

    def expand(self, margin: int) -> "Window":
        if margin < 0:
            raise ValueError("margin must be >= 0")
        return Window(
            tuple(a - margin for a in self.lo),
            tuple(b + margin for b in self.hi),
        )

    def flat_index(self, site: Site) -> int:
        idx = 0
        for a, n, c in zip(self.lo, self.shape, site):
            idx = idx * n + (c - a)
        return idx

    def site_of_flat(self, flat: int) -> Site:
        coords = []
        for n in reversed(self.shape):
            flat, rem = divmod(flat, n)
            coords.append(rem)
        return tuple(c + a for c, a in zip(reversed(coords), self.lo))

    def sites(self) -> Iterator[Site]:
        ranges = [range(a, b + 1) for a, b in zip(self.lo, self.hi)]
        return itertools.product(*ranges)


@dataclass(frozen=True)
class CoveringResult:
    ok: bool
    uncovered: tuple

    def __bool__(self) -> bool:
        return self.ok


def sphere_covering_check(
    dim: int, n: int, r: int, budget: int = 2_000_000
) -> CoveringResult:
    """Check that S_{nr} is covered by balls B(r*x, ceil(d*r/2)), x in S_n.

    The covering radius d*r/2 may be non-integer; lattice membership is
    tested against ceil(d*r/2) to keep the arithmetic integral, which is
    conservative for the downstream scale containments (those use the
    larger radius r*d).
    """
    if n < 1 or r < 1:
        raise ValueError("n and r must be >= 1")
    if sphere_cardinality(dim, n * r) > budget:
        raise CoveringBudgetError(
            f"|S_{n * r}| in dimension {dim} exceeds budget {budget}"
        )
    cover_radius = -(-dim * r // 2)  # ceil(d*r/2)
    centers = [tuple(r * c for c in x) for x in sphere_offsets(dim, n)]
    uncovered = []
    for z in sphere_offsets(dim, n * r):
        if not any(l1_dist(z, c) <= cover_radius for c in centers):
            uncovered.append(z)
    return CoveringResult(not uncovered, tuple(uncovered))


def _as_fraction(value) -> Fraction:
    # Floats go through their shortest decimal repr so that inputs like
    # 0.9 mean the exact rational 9/10.
    if isinstance(value, float):
        return Fraction(str(value))
    return Fraction(value)


def rounding_distance_check(dim: int, m: int, samples: Iterable[Sequence]) -> bool:
    """Verify the rounding bound ||y - x|| <= d/2 on each sample point.

    Each sample is a d-tuple of rationals, sorted non-increasing, with
    coordinates in [0, 1] and exact sum m (1 <= m < d).  The rounded
    point is y = (1,...,1,0,...,0) with m ones.  Both the bound and the
    identity ||y - x|| = 2 * sum_{i>m} x_i are checked in exact rational
    arithmetic.  Boundary coordinates equal to 0 or 1 are accepted.
    """
    if not (1 <= m < dim):
        raise ValueError("need 1 <= m < d")
    half_d = Fraction(dim, 2)
    for raw in samples:
        x = [_as_fraction(v) for v in raw]
        if len(x) != dim:
            raise ValueError(f"sample has dimension {len(x)}, expected {dim}")
        if any(not (0 <= v <= 1) for v in x):
            raise ValueError("coordinates must lie in [0, 1]")
        if any(x[i] < x[i + 1] for i in range(dim - 1)):
            raise ValueError("coordinates must be sorted non-increasing")
        if sum(x) != m:
            raise ValueError("coordinates must sum exactly to m")
        dist = sum(1 - v for v in x[:m]) + sum(x[m:])
        if dist != 2 * sum(x[m:]):
            return False
        if dist > half_d:
            return False
    return True
