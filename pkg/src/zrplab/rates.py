"""Jump-rate functions and the single-site measures they induce.

A jump-rate function g is nondecreasing with g(0) = 0 < g(1), normalised so
that its limit value is 1, and equal to 1 beyond a finite table.  For an
intensity parameter lam in [0, 1) the single-site law puts mass
proportional to lam**n / (g(1)*...*g(n)) on occupancy n.  Because g equals
1 beyond the table, every series used here (normalisation, first and second
moments, tail of the CDF) has an exactly summable geometric tail, so Z, the
mean and the variance are evaluated in closed form rather than by
truncation; the truncated pmf table is only used for sampling and for
distribution comparisons.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, SupercriticalError

EPS_TAIL = 1e-12
PMF_CAP = 10**6


@dataclass(frozen=True)
class RateFunction:
    """Jump rates g(1..n) as a finite table; g(n) = 1 beyond the table.

    kind is one of "constant-rate", "tabulated", "parametric-concave".
    The concave tag additionally requires nonincreasing increments.
    """

    values: tuple = ()
    kind: str = "constant-rate"

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if self.kind not in ("constant-rate", "tabulated", "parametric-concave"):
            raise ValueError(f"unknown rate-function kind: {self.kind!r}")
        table = (1.0,) if not vals else vals
        if table[0] <= 0.0:
            raise ValueError("g(1) must be positive")
        if any(v <= 0.0 or v > 1.0 for v in table):
            raise ValueError("rates must lie in (0, 1]")
        if any(b < a for a, b in zip(table, table[1:])):
            raise ValueError("g must be nondecreasing")
        if self.kind == "parametric-concave":
            incs = [table[0]] + [b - a for a, b in zip(table, table[1:])]
            # increment from the table end to the tail value 1
            incs.append(1.0 - table[-1])
            if any(b > a + 1e-15 for a, b in zip(incs, incs[1:])):
                raise ValueError("concave tag requires nonincreasing increments")

    @property
    def table(self) -> tuple:
        return self.values if self.values else (1.0,)

    def g(self, n) -> float:
        """g(n), with g(0) = 0 and g(n) = 1 beyond the table."""
        if n is math.inf:
            return 1.0
        if n <= 0:
            return 0.0
        tab = self.table
        return tab[n - 1] if n <= len(tab) else 1.0

    def g_array(self, n_cap: int) -> np.ndarray:
        """Lookup table g(0..n_cap) for the event engine."""
        tab = self.table
        if len(tab) > n_cap:
            raise ValueError("rate table longer than the engine lookup cap")
        out = np.ones(n_cap + 1)
        out[0] = 0.0
        out[1 : len(tab) + 1] = tab
        return out

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "g_values": list(self.values)})

    @classmethod
    def from_json(cls, text: str) -> "RateFunction":
        obj = json.loads(text)
        return cls(values=tuple(obj["g_values"]), kind=obj["kind"])


def constant_rate() -> RateFunction:
    """g(n) = 1 for n >= 1: the single-site law is geometric."""
    return RateFunction(values=(), kind="constant-rate")


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam < 1.0:
        raise DomainError("theta_lambda undefined at or above 1")
    return lam


def _factorial_products(g: RateFunction) -> np.ndarray:
    """Cumulative products g(n)! for n = 0..len(table)."""
    tab = np.asarray(g.table)
    return np.concatenate(([1.0], np.cumprod(tab)))


def _geom_s0(k: int, lam: float) -> float:
    """sum_{n>=k} lam**n."""
    return lam**k / (1.0 - lam)


def _geom_s1(k: int, lam: float) -> float:
    """sum_{n>=k} n lam**n."""
    return lam**k * (k - (k - 1) * lam) / (1.0 - lam) ** 2


def _geom_s2(k: int, lam: float) -> float:
    """sum_{n>=k} n**2 lam**n."""
    num = k * k - (2 * k * k - 2 * k - 1) * lam + (k - 1) ** 2 * lam * lam
    return lam**k * num / (1.0 - lam) ** 3


def partition_function(g: RateFunction, lam: float) -> float:
    """Normalising constant Z(lam) = sum_n lam**n / g(n)!.

    The head of the series (up to the table length) is summed term by term;
    the remainder is an exact geometric tail since g = 1 there.
    """
    lam = _check_lambda(lam)
    G = _factorial_products(g)
    m = len(G) - 1
    powers = lam ** np.arange(m + 1)
    head = float(np.sum(powers / G))
    if lam == 0.0:
        return head if m >= 0 else 1.0
    return head + _geom_s0(m + 1, lam) / G[m]


def mean_density_R(g: RateFunction, lam: float) -> float:
    """Mean occupancy R(lam) of the single-site law; strictly increasing."""
    lam = _check_lambda(lam)
    if lam == 0.0:
        return 0.0
    G = _factorial_products(g)
    m = len(G) - 1
    n = np.arange(m + 1)
    powers = lam**n
    num = float(np.sum(n * powers / G)) + _geom_s1(m + 1, lam) / G[m]
    return num / partition_function(g, lam)


def occupancy_variance(g: RateFunction, lam: float) -> float:
    """Variance of the single-site law at intensity lam."""
    lam = _check_lambda(lam)
    if lam == 0.0:
        return 0.0
    G = _factorial_products(g)
    m = len(G) - 1
    n = np.arange(m + 1)
    powers = lam**n
    num2 = float(np.sum(n * n * powers / G)) + _geom_s2(m + 1, lam) / G[m]
    mean = mean_density_R(g, lam)
    return num2 / partition_function(g, lam) - mean * mean


@dataclass(frozen=True)
class SingleSiteLaw:
    """Truncated pmf/cdf table of the single-site law plus exact moments."""

    lam: float
    pmf: np.ndarray = field(repr=False)
    cdf: np.ndarray = field(repr=False)
    mean: float
    variance: float
    tail_ratio: float  # pmf(n+1)/pmf(n) beyond the table (= lam, g there is 1)

    @property
    def n_trunc(self) -> int:
        return len(self.pmf) - 1

    def sample(self, u) -> np.ndarray:
        """Generalised-inverse sampling, vectorised over uniforms in (0,1).

        Left-continuous convention: smallest n with F(n) >= u.
        """
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        n = np.searchsorted(self.cdf, arr, side="left").astype(np.int64)
        over = n >= len(self.cdf)
        if np.any(over):
            # geometric tail: 1 - F(N + k) = (1 - F(N)) * r**k
            tail = 1.0 - self.cdf[-1]
            r = self.tail_ratio
            k = np.ceil(np.log(np.maximum(1.0 - arr[over], 1e-300) / tail) / np.log(r))
            n[over] = len(self.cdf) - 1 + np.maximum(k, 1).astype(np.int64)
        return n if np.ndim(u) else int(n[0])


@lru_cache(maxsize=4096)
def site_law(g: RateFunction, lam: float) -> SingleSiteLaw:
    """Build (and cache) the truncated single-site law for (g, lam)."""
    lam = _check_lambda(lam)
    Z = partition_function(g, lam)
    G = _factorial_products(g)
    m = len(G) - 1
    terms = [1.0]
    n = 0
    total = 1.0
    while n < PMF_CAP:
        n += 1
        gn = G[n] / G[n - 1] if n <= m else 1.0
        term = terms[-1] * lam / gn
        if term <= 0.0:
            break
        terms.append(term)
        total += term
        if n > m and term < EPS_TAIL * total:
            break
    pmf = np.asarray(terms) / Z
    cdf = np.cumsum(pmf)
    return SingleSiteLaw(
        lam=lam,
        pmf=pmf,
        cdf=cdf,
        mean=mean_density_R(g, lam),
        variance=occupancy_variance(g, lam),
        tail_ratio=lam if lam > 0 else 0.0,
    )


def sample_theta(g: RateFunction, lam: float, u):
    """Occupancy sample F_lam^{-1}(u); monotone in both u and lam."""
    law = site_law(g, lam)
    return law.sample(u)


def sample_product_measure(env, g: RateFunction, lam: float, uniforms) -> np.ndarray:
    """Sample the product measure with per-site marginal at intensity lam/alpha(x).

    uniforms is the per-site u-field aligned with the environment window.
    Sharing the u-field across two values of lam produces sitewise-ordered
    configurations, because each inverse CDF is monotone in lam.
    """
    lam = float(lam)
    if lam > env.c:
        raise SupercriticalError(
            "supercritical parameter: lambda/alpha(x) >= 1 possible"
        )
    u = np.asarray(uniforms, dtype=float)
    if u.shape != env.alpha.shape:
        raise ValueError("u-field must align with the environment window")
    out = np.zeros(u.shape, dtype=np.int64)
    if lam == 0.0:
        return out
    kappas = lam / env.alpha
    for kappa in np.unique(kappas):
        mask = kappas == kappa
        out[mask] = site_law(g, float(kappa)).sample(u[mask])
    return out


def mean_capped(g: RateFunction, lam: float, cap: int) -> float:
    """E[min(occupancy, cap)] under the single-site law (exact)."""
    law = site_law(g, lam)
    n = np.arange(len(law.pmf))
    val = float(np.sum(np.minimum(n, cap) * law.pmf))
    # geometric tail beyond the table is all at least cap when cap <= n_trunc
    tail = 1.0 - law.cdf[-1]
    return val + cap * tail
