"""Probability laws for integer radii and range marks.

Four parametric families cover everything the experiments need:
point mass, geometric on {0,1,2,...}, power law with optional
truncation, and an explicit finite table.  Each family carries closed
forms for its tail, its d-th moments and tail moments, and a
generalized-inverse quantile, so sampling never truncates the support
and moment divergence is decided analytically, never from partial sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import zeta as _hurwitz_zeta


class DivergentMomentError(ArithmeticError):
    """Raised when an operation needs a moment that diverges."""


@lru_cache(maxsize=None)
def _stirling2(n: int, k: int) -> int:
    """Stirling numbers of the second kind, exact."""
    if k == 0:
        return 1 if n == 0 else 0
    if k > n:
        return 0
    total = 0
    for i in range(k + 1):
        total += (-1) ** i * math.comb(k, i) * (k - i) ** n
    return total // math.factorial(k)


def _check_u(u: float) -> None:
    if not (0.0 < u <= 1.0):
        raise ValueError(f"quantile argument must be in (0, 1], got {u}")


class RadiusLaw:
    """Common interface: pmf, cdf, tail, quantile, exact moments."""

    def pmf(self, r: int) -> float:
        raise NotImplementedError

    def cdf(self, r: int) -> float:
        """P(R <= r); defined for any integer r (0 below the support)."""
        raise NotImplementedError

    def tail(self, r: int) -> float:
        """G(r) = P(R > r)."""
        return 1.0 - self.cdf(r)

    @property
    def support_max(self) -> int | None:
        """Largest support point, or None for unbounded laws."""
        return None

    def moment_is_finite(self, d: int) -> bool:
        raise NotImplementedError

    def dth_moment(self, d: int):
        """E[R^d]; returns math.inf when the moment diverges."""
        raise NotImplementedError

    def tail_moment(self, d: int, r0: int):
        """E[R^d 1{R >= r0}].  Raises DivergentMomentError if E[R^d] = inf."""
        raise NotImplementedError

    def quantile(self, u: float) -> int:
        """Generalized inverse: smallest r with F(r) >= u, u in (0, 1]."""
        _check_u(u)
        if u >= 1.0:
            top = self.support_max
            if top is None:
                raise OverflowError("quantile(1.0) of an unbounded law")
            return top
        r = self._quantile_guess(u)
        while self.cdf(r) < u:
            r += 1
        while r > 0 and self.cdf(r - 1) >= u:
            r -= 1
        return r

    def _quantile_guess(self, u: float) -> int:
        # Exponential search default; families override with closed forms.
        r = 0
        while self.cdf(r) < u:
            r = 2 * r + 1
        return r

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        """Vectorized quantile; semantics identical to ``quantile``."""
        return np.fromiter(
            (self.quantile(float(v)) for v in u), dtype=np.int64, count=len(u)
        )

    def tail_envelope(self) -> list:
        """Certified upper envelopes for G(r), used by tail union bounds.

        Returns a list of primitives whose sum dominates G(r) for all
        r >= 0.  Primitives are ("bounded", rmax), ("geometric", A, q)
        meaning A * q**r, or ("power", A, s) meaning A * (r + 1)**(1 - s).
        """
        raise NotImplementedError

    def spec_string(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(RadiusLaw):
    """Deterministic radius."""

    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("radius must be >= 0")

    def pmf(self, r: int) -> float:
        return 1.0 if r == self.value else 0.0

    def cdf(self, r: int) -> float:
        return 1.0 if r >= self.value else 0.0

    @property
    def support_max(self) -> int:
        return self.value

    def moment_is_finite(self, d: int) -> bool:
        return True

    def dth_moment(self, d: int):
        return self.value ** d

    def tail_moment(self, d: int, r0: int):
        return self.value ** d if self.value >= r0 else 0

    def quantile(self, u: float) -> int:
        _check_u(u)
        return self.value

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        return np.full(len(u), self.value, dtype=np.int64)

    def tail_envelope(self) -> list:
        return [("bounded", self.value)]

    def spec_string(self) -> str:
        return f"point-mass:{self.value}"


@dataclass(frozen=True)
class Geometric(RadiusLaw):
    """nu(r) = a * (1-a)^r on {0, 1, 2, ...}."""

    a: float

    def __post_init__(self):
        if not (0.0 < self.a < 1.0):
            raise ValueError("success probability must be in (0, 1)")

    def pmf(self, r: int) -> float:
        if r < 0:
            return 0.0
        return self.a * (1.0 - self.a) ** r

    def cdf(self, r: int) -> float:
        if r < 0:
            return 0.0
        return 1.0 - (1.0 - self.a) ** (r + 1)

    def tail(self, r: int) -> float:
        if r < 0:
            return 1.0
        return (1.0 - self.a) ** (r + 1)

    def moment_is_finite(self, d: int) -> bool:
        return True

    def dth_moment(self, d: int):
        q = (1.0 - self.a) / self.a
        return float(
            sum(_stirling2(d, j) * math.factorial(j) * q ** j for j in range(d + 1))
        )

    def tail_moment(self, d: int, r0: int):
        # sum_{r>=m} r^d a q^r with q = 1-a, via the binomial shift
        # r = m + i and the closed form sum_i i^j q^i.
        if r0 <= 0:
            return self.dth_moment(d)
        q = 1.0 - self.a
        total = 0.0
        for j in range(d + 1):
            inner = sum(
                _stirling2(j, k) * math.factorial(k) * q ** k / (1.0 - q) ** (k + 1)
                for k in range(j + 1)
            )
            total += math.comb(d, j) * r0 ** (d - j) * inner
        return self.a * q ** r0 * total

    def _quantile_guess(self, u: float) -> int:
        g = math.log1p(-u) / math.log1p(-self.a) - 1.0
        return max(0, math.ceil(g))

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        log_q = math.log1p(-self.a)
        with np.errstate(divide="ignore"):
            guess = np.ceil(np.log1p(-u) / log_q - 1.0)
        guess = np.where(np.isfinite(guess), guess, 0.0)
        r = np.maximum(guess, 0.0).astype(np.int64)
        # two exact correction passes against the closed-form cdf
        for _ in range(2):
            low = -np.expm1((r + 1) * log_q) < u
            r[low] += 1
            high = (r > 0) & (-np.expm1(r * log_q) >= u)
            r[high] -= 1
        return r

    def tail_envelope(self) -> list:
        return [("geometric", 1.0 - self.a, 1.0 - self.a)]

    def spec_string(self) -> str:
        return f"geometric:{self.a}"


@dataclass(frozen=True)
class PowerLaw(RadiusLaw):
    """nu(r) proportional to (r+1)^(-s); optional truncation at rmax.

    Untruncated laws need s > 1.  The d-th moment is finite exactly when
    s > d + 1; both the moment and its tails reduce to Hurwitz zeta
    values, so no series is ever summed numerically.
    """

    s: float
    rmax: int | None = None
    _cdf_table: np.ndarray = field(init=False, repr=False, compare=False)

    _TABLE_N = 4096

    def __post_init__(self):
        if self.rmax is None:
            if self.s <= 1.0:
                raise ValueError("untruncated power law needs s > 1")
            top = self._TABLE_N
        else:
            if self.rmax < 0:
                raise ValueError("rmax must be >= 0")
            top = self.rmax
        # table entries must equal cdf() bit for bit, so build them from
        # the same tail expression the scalar accessors use
        table = np.array([self._cdf_scalar(r) for r in range(top + 1)])
        table = np.maximum.accumulate(table)
        object.__setattr__(self, "_cdf_table", table)

    def _z(self) -> float:
        if self.rmax is None:
            return float(_hurwitz_zeta(self.s, 1))
        return float(
            _hurwitz_zeta(self.s, 1) - _hurwitz_zeta(self.s, self.rmax + 2)
        )

    def _cdf_scalar(self, r: int) -> float:
        if r < 0:
            return 0.0
        if self.rmax is not None and r >= self.rmax:
            return 1.0
        top = float(_hurwitz_zeta(self.s, self.rmax + 2)) if self.rmax is not None else 0.0
        return 1.0 - (float(_hurwitz_zeta(self.s, r + 2)) - top) / self._z()

    def pmf(self, r: int) -> float:
        if r < 0 or (self.rmax is not None and r > self.rmax):
            return 0.0
        return (r + 1.0) ** (-self.s) / self._z()

    def cdf(self, r: int) -> float:
        return self._cdf_scalar(r)

    def tail(self, r: int) -> float:
        return 1.0 - self._cdf_scalar(r)

    @property
    def support_max(self) -> int | None:
        return self.rmax

    def moment_is_finite(self, d: int) -> bool:
        return self.rmax is not None or self.s > d + 1

    def _alternating_zeta_sum(self, d: int, q: int) -> float:
        # sum_{k>=q} (k-1)^d k^(-s) = sum_j C(d,j) (-1)^(d-j) zeta(s-j, q)
        return float(
            sum(
                math.comb(d, j) * (-1) ** (d - j) * _hurwitz_zeta(self.s - j, q)
                for j in range(d + 1)
            )
        )

    def dth_moment(self, d: int):
        if not self.moment_is_finite(d):
            return math.inf
        if self.rmax is not None:
            return sum(r ** d * self.pmf(r) for r in range(self.rmax + 1))
        return self._alternating_zeta_sum(d, 1) / self._z()

    def tail_moment(self, d: int, r0: int):
        if not self.moment_is_finite(d):
            raise DivergentMomentError(f"E[R^{d}] diverges for {self.spec_string()}")
        if r0 <= 0:
            return self.dth_moment(d)
        if self.rmax is not None:
            return sum(r ** d * self.pmf(r) for r in range(r0, self.rmax + 1))
        return self._alternating_zeta_sum(d, r0 + 1) / self._z()

    def quantile(self, u: float) -> int:
        _check_u(u)
        if u >= 1.0:
            if self.rmax is None:
                raise OverflowError("quantile(1.0) of an unbounded law")
            return self.rmax
        idx = int(np.searchsorted(self._cdf_table, u, side="left"))
        if idx < len(self._cdf_table):
            return idx
        # beyond the table: exponential then binary search on the tail
        lo = len(self._cdf_table)
        hi = 2 * lo
        while self.cdf(hi) < u:
            lo, hi = hi, 2 * hi
        while lo < hi:
            mid = (lo + hi) // 2
            if self.cdf(mid) >= u:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        r = np.searchsorted(self._cdf_table, u, side="left").astype(np.int64)
        over = r >= len(self._cdf_table)
        if over.any():
            r[over] = [self.quantile(float(v)) for v in u[over]]
        return r

    def tail_envelope(self) -> list:
        if self.rmax is not None:
            return [("bounded", self.rmax)]
        # G(r) = zeta(s, r+2)/Z <= (r+1)^(1-s) / ((s-1) Z)
        return [("power", 1.0 / ((self.s - 1.0) * self._z()), self.s)]

    def spec_string(self) -> str:
        if self.rmax is None:
            return f"power-law:{self.s}"
        return f"power-law:{self.s}:{self.rmax}"


@dataclass(frozen=True)
class FiniteTable(RadiusLaw):
    """Explicit pmf on {0, ..., len(weights)-1}, exact rational internals."""

    weights: tuple

    def __post_init__(self):
        fracs = tuple(Fraction(w) for w in self.weights)
        if not fracs or any(w < 0 for w in fracs):
            raise ValueError("weights must be non-negative and non-empty")
        if sum(fracs) != 1:
            raise ValueError("weights must sum to exactly 1")
        object.__setattr__(self, "weights", fracs)

    def pmf(self, r: int) -> float:
        if 0 <= r < len(self.weights):
            return float(self.weights[r])
        return 0.0

    def cdf(self, r: int) -> float:
        if r < 0:
            return 0.0
        return float(sum(self.weights[: r + 1]))

    def tail(self, r: int) -> float:
        if r < 0:
            return 1.0
        return float(sum(self.weights[r + 1:]))

    @property
    def support_max(self) -> int:
        last = max(i for i, w in enumerate(self.weights) if w > 0)
        return last

    def moment_is_finite(self, d: int) -> bool:
        return True

    def dth_moment(self, d: int):
        return float(sum(Fraction(r ** d) * w for r, w in enumerate(self.weights)))

    def tail_moment(self, d: int, r0: int):
        return float(
            sum(
                Fraction(r ** d) * w
                for r, w in enumerate(self.weights)
                if r >= r0
            )
        )

    def quantile(self, u: float) -> int:
        _check_u(u)
        acc = Fraction(0)
        for r, w in enumerate(self.weights):
            acc += w
            if float(acc) >= u:
                return r
        return self.support_max

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        cdf = np.cumsum([float(w) for w in self.weights])
        r = np.searchsorted(cdf, u, side="left").astype(np.int64)
        return np.minimum(r, len(self.weights) - 1)

    def tail_envelope(self) -> list:
        return [("bounded", self.support_max)]

    def spec_string(self) -> str:
        return "table:" + ",".join(str(float(w)) for w in self.weights)


def quantile(law: RadiusLaw, u: float) -> int:
    """Module-level alias for the generalized inverse of a law's cdf."""
    return law.quantile(u)


def dth_moment(law: RadiusLaw, d: int):
    return law.dth_moment(d)


def tail_moment(law: RadiusLaw, d: int, r0: int):
    return law.tail_moment(d, r0)


# ---------------------------------------------------------------------------
# Site-inhomogeneous fields and their stochastic-domination envelope
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SiteLawField:
    """Radius laws varying over finitely many site classes.

    Sites are classified by the periodic coloring sum(coords) mod k,
    which keeps every infimum over sites a finite minimum over classes.
    """

    laws: tuple

    def __post_init__(self):
        if not self.laws:
            raise ValueError("need at least one class")
        object.__setattr__(self, "laws", tuple(self.laws))

    @classmethod
    def uniform(cls, law: RadiusLaw) -> "SiteLawField":
        return cls((law,))

    @property
    def n_classes(self) -> int:
        return len(self.laws)

    def class_of(self, site) -> int:
        return sum(site) % self.n_classes

    def law_at(self, site) -> RadiusLaw:
        return self.laws[self.class_of(site)]


@dataclass(frozen=True)
class EnvelopeLaw(RadiusLaw):
    """Law whose cdf is the pointwise infimum of finitely many class cdfs.

    Stochastically dominates every class law; the shared-uniform coupling
    quantile is the max of the class quantiles, which is exactly the
    generalized inverse of the infimum cdf.
    """

    laws: tuple

    def __post_init__(self):
        if not self.laws:
            raise ValueError("need at least one class law")
        object.__setattr__(self, "laws", tuple(self.laws))

    def cdf(self, r: int) -> float:
        return min(law.cdf(r) for law in self.laws)

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
        if not self.moment_is_finite(d):
            raise DivergentMomentError("some class moment diverges")
        # pmf(r) <= max over classes of class pmf(r) (inf-sup inequality),
        # so the remainder beyond N is at most the sum of class tails.
        total = 0.0
        n = max(r0, 1)
        start = r0
        while True:
            for r in range(start, n + 1):
                total += r ** d * self.pmf(r)
            rem = sum(law.tail_moment(d, n + 1) for law in self.laws)
            if rem <= 1e-13 * max(total, 1.0):
                return total + rem
            start = n + 1
            n *= 2

    def quantile(self, u: float) -> int:
        _check_u(u)
        return max(law.quantile(u) for law in self.laws)

    def quantile_array(self, u: np.ndarray) -> np.ndarray:
        qs = [law.quantile_array(u) for law in self.laws]
        return np.maximum.reduce(qs)

    def tail_envelope(self) -> list:
        out = []
        for law in self.laws:
            out.extend(law.tail_envelope())
        return out

    def spec_string(self) -> str:
        return "envelope(" + ";".join(l.spec_string() for l in self.laws) + ")"


def envelope(field: SiteLawField) -> RadiusLaw:
    """Dominating law with cdf inf over class cdfs.

    With finitely many proper class laws the inf of the cdfs always
    reaches 1, so the domination hypothesis holds by construction; the
    class count being finite is exactly what makes the inf computable.
    """
    first = field.laws[0]
    if all(law == first for law in field.laws):
        return first
    return EnvelopeLaw(field.laws)


def shared_uniform_coupling(field: SiteLawField, envelope_law: RadiusLaw, u: float):
    """Quantile-couple every class law and the envelope at one uniform.

    Returns (per-class radii tuple, envelope radius); pathwise the
    envelope radius dominates every class radius.
    """
    per_class = tuple(law.quantile(u) for law in field.laws)
    return per_class, envelope_law.quantile(u)


# ---------------------------------------------------------------------------
# Real-valued counterexample family: bounded means, divergent envelope mean
# ---------------------------------------------------------------------------


class CdfOnReals:
    """Right-continuous cdf on [0, inf) with exact mean accessors."""

    def cdf(self, x: float) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        """E[X] = integral of (1 - F); math.inf when divergent."""
        raise NotImplementedError

    def partial_mean(self, k: float) -> float:
        """integral over [0, k] of (1 - F)."""
        raise NotImplementedError


@dataclass(frozen=True)
class CounterexampleCdf(CdfOnReals):
    """Member n of the family with uniformly bounded means.

    Four pieces: an atom at 0 of mass 1 - 3/(4n), a linear ramp of slope
    1/(4n(n-1)) on [1, n), a flat stretch at 1 - 1/(2n) on [n, n+1), and
    an atom at n+1 closing the distribution.
    """

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("family index must be >= 2")

    def cdf(self, x: float) -> float:
        n = self.n
        if x < 0:
            return 0.0
        if x < 1:
            return 1.0 - 3.0 / (4 * n)
        if x < n:
            return (x - 1.0) / (4 * n * (n - 1)) + 1.0 - 3.0 / (4 * n)
        if x < n + 1:
            return 1.0 - 1.0 / (2 * n)
        return 1.0

    def mean(self) -> float:
        return float(self.mean_exact())

    def mean_exact(self) -> Fraction:
        n = self.n
        # piecewise-exact integral of (1 - F): the tail is 3/(4n) on
        # [0,1), ramps down linearly to 1/(2n) on [1,n), and is 1/(2n)
        # on [n, n+1).
        atom0 = Fraction(3, 4 * n)
        ramp = Fraction(3, 4 * n) * (n - 1) - Fraction(n - 1, 8 * n)
        flat = Fraction(1, 2 * n)
        return atom0 + ramp + flat

    def partial_mean(self, k: float) -> float:
        # exact piecewise integral of the tail 1 - F over [0, k]
        if k <= 0:
            return 0.0
        n = self.n
        total = Fraction(3, 4 * n) * min(Fraction(str(float(k))), 1)
        if k > 1:
            b = min(Fraction(str(float(k))), n)
            # tail on [1, n): 3/(4n) - (x-1)/(4n(n-1))
            total += Fraction(3, 4 * n) * (b - 1)
            total -= Fraction(1, 8 * n * (n - 1)) * (b - 1) ** 2
        if k > n:
            total += Fraction(1, 2 * n) * (min(Fraction(str(float(k))), n + 1) - n)
        return float(total)


@dataclass(frozen=True)
class CounterexampleEnvelope(CdfOnReals):
    """Pointwise infimum of the family cdfs: flat at 1 - 1/(2m) on [m, m+1).

    The tail is 0 below 2 and decays like 1/(2x), so the mean diverges
    logarithmically even though every family member has a bounded mean.
    """

    def cdf(self, x: float) -> float:
        if x < 2:
            return 0.0
        return 1.0 - 1.0 / (2 * math.floor(x))

    def mean(self) -> float:
        return math.inf

    def mean_is_finite(self) -> bool:
        return False

    def partial_mean(self, k: float) -> float:
        if k <= 0:
            return 0.0
        if k <= 2:
            return float(k)
        total = 2.0
        m = 2
        while m + 1 <= k:
            total += 0.5 / m
            m += 1
        if k > m:
            total += 0.5 / m * (k - m)
        return total

    def partial_mean_exceeds(self, target: float, k_cap: int = 10 ** 8) -> int:
        """Smallest integer K with partial_mean(K) > target."""
        total = 2.0
        m = 2
        while m <= k_cap:
            if total > target:
                return m
            total += 0.5 / m
            m += 1
        raise RuntimeError(f"partial mean did not exceed {target} below {k_cap}")


def counterexample_family(n: int) -> CounterexampleCdf:
    return CounterexampleCdf(n)


def counterexample_envelope() -> CounterexampleEnvelope:
    return CounterexampleEnvelope()


# ---------------------------------------------------------------------------
# Law specification grammar used by the CLI config
# ---------------------------------------------------------------------------


def parse_law(spec: str) -> RadiusLaw:
    """Parse 'point-mass:R', 'geometric:A', 'power-law:S[:RMAX]',
    'table:W0,W1,...' into a law object."""
    parts = spec.strip().split(":")
    name = parts[0].strip().lower()
    try:
        if name in ("point-mass", "pointmass", "pm"):
            return PointMass(int(parts[1]))
        if name in ("geometric", "geom"):
            return Geometric(float(parts[1]))
        if name in ("power-law", "power", "powerlaw"):
            if len(parts) >= 3:
                return PowerLaw(float(parts[1]), int(parts[2]))
            return PowerLaw(float(parts[1]))
        if name == "table":
            weights = tuple(Fraction(w) for w in parts[1].split(","))
            return FiniteTable(weights)
    except (IndexError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"bad law spec {spec!r}: {exc}") from exc
    raise ValueError(f"unknown law family in {spec!r}")
