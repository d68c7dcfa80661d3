"""Marginal laws for site rates, with CDF, generalised inverse and expectations.

These laws live on an interval (lo, hi] (or finitely many atoms) and are the
single handle used both to generate environments (through the left-continuous
inverse CDF) and to integrate observables against the marginal (adaptive
quadrature for continuous laws, exact sums for discrete ones).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate


@dataclass(frozen=True)
class PowerLaw:
    """Density proportional to (a - lo)**exponent on (lo, hi].

    exponent = 0 is the uniform law; exponent = 1 rises linearly from the
    floor (the standard finite-critical-density benchmark).
    """

    lo: float
    hi: float
    exponent: float = 0.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("need lo < hi")
        if self.exponent < 0:
            raise ValueError("exponent must be >= 0")

    @property
    def is_discrete(self) -> bool:
        return False

    def density(self, a):
        a = np.asarray(a, dtype=float)
        k = self.exponent + 1.0
        scale = k / (self.hi - self.lo) ** k
        return np.where(
            (a > self.lo) & (a <= self.hi), scale * (a - self.lo) ** self.exponent, 0.0
        )

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        z = np.clip((t - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        return z ** (self.exponent + 1.0)

    def inv(self, u):
        """Left-continuous inverse CDF."""
        u = np.asarray(u, dtype=float)
        return self.lo + (self.hi - self.lo) * u ** (1.0 / (self.exponent + 1.0))

    def expect(self, fn, points=None) -> float:
        """Integrate fn against the law by adaptive quadrature."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(
                lambda a: fn(a) * float(self.density(a)),
                self.lo,
                self.hi,
                epsabs=1e-12,
                epsrel=1e-12,
                limit=400,
                points=points,
            )
        return val

    def spec_string(self) -> str:
        return f"power:{self.lo},{self.hi},{self.exponent}"


@dataclass(frozen=True)
class DiscreteLaw:
    """Finitely many atoms with positive weights summing to one."""

    atoms: tuple
    weights: tuple

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        weights = tuple(float(w) for w in self.weights)
        if len(atoms) != len(weights) or not atoms:
            raise ValueError("need matching nonempty atoms and weights")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        total = sum(weights)
        order = np.argsort(atoms)
        object.__setattr__(self, "atoms", tuple(atoms[i] for i in order))
        object.__setattr__(self, "weights", tuple(weights[i] / total for i in order))

    @property
    def is_discrete(self) -> bool:
        return True

    @property
    def lo(self) -> float:
        return self.atoms[0]

    @property
    def hi(self) -> float:
        return self.atoms[-1]

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.atoms, t, side="right")
        out = np.where(idx > 0, cum[np.minimum(idx, len(cum)) - 1], 0.0)
        return np.where(idx == 0, 0.0, out)

    def inv(self, u):
        u = np.asarray(u, dtype=float)
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, u, side="left")
        idx = np.minimum(idx, len(self.atoms) - 1)
        return np.asarray(self.atoms)[idx]

    def expect(self, fn, points=None) -> float:
        return float(sum(w * fn(a) for a, w in zip(self.atoms, self.weights)))

    def spec_string(self) -> str:
        pairs = ",".join(f"{a}:{w}" for a, w in zip(self.atoms, self.weights))
        return f"discrete:{pairs}"


def point_mass(a: float) -> DiscreteLaw:
    return DiscreteLaw(atoms=(a,), weights=(1.0,))


def uniform_law(lo: float, hi: float) -> PowerLaw:
    return PowerLaw(lo=lo, hi=hi, exponent=0.0)


def triangular_law(lo: float, hi: float) -> PowerLaw:
    """Density rising linearly from lo; the finite-rho_c benchmark law."""
    return PowerLaw(lo=lo, hi=hi, exponent=1.0)


def parse_disorder(spec: str):
    """Parse CLI specs like point:0.9, uniform:0.5,1, power:0.5,1,1."""
    kind, _, rest = spec.partition(":")
    if kind == "point":
        return point_mass(float(rest))
    if kind == "uniform":
        lo, hi = (float(v) for v in rest.split(","))
        return uniform_law(lo, hi)
    if kind == "power":
        lo, hi, expo = (float(v) for v in rest.split(","))
        return PowerLaw(lo=lo, hi=hi, exponent=expo)
    if kind == "discrete":
        pairs = [p.split(":") for p in rest.split(",")]
        return DiscreteLaw(
            atoms=tuple(float(a) for a, _ in pairs),
            weights=tuple(float(w) for _, w in pairs),
        )
    raise ValueError(f"unknown disorder spec: {spec!r}")
