"""Stationary analysis of the window process with infinite-occupancy sources.

With a source set S pinned at infinite occupancy, the remaining sites form
an open network whose stationary intensities solve the balance equations
lam(x) = sum_y lam(y) p(x-y) off S with lam = alpha on S.  In one dimension
with nearest-neighbour jumps the free regions decouple into intervals and
each interval is a tridiagonal solve.  The probabilistic representation
(mean alpha at the point where the reversed walk first hits S) provides an
independent Monte Carlo cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels as K
from .environment import Environment
from .errors import DomainError, WindowTooSmallError
from .rates import RateFunction, site_law

BALANCE_TOL = 1e-12
WALK_STEP_CAP = 10**7


@dataclass
class TrafficSolution:
    x_min: int
    x_max: int
    in_S: np.ndarray = field(repr=False)
    lam: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    p: float = 1.0
    recurrent: bool = False
    residual: float = 0.0

    def index(self, x: int) -> int:
        if not self.x_min <= x <= self.x_max:
            raise IndexError(f"site {x} outside window")
        return x - self.x_min

    @property
    def free_sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)[~self.in_S]

    def lambda_at(self, x: int) -> float:
        return float(self.lam[self.index(x)])

    def save(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site", "lambda", "alpha", "in_S"])
            for i, x in enumerate(range(self.x_min, self.x_max + 1)):
                writer.writerow(
                    [x, repr(float(self.lam[i])), repr(float(self.alpha[i])), int(self.in_S[i])]
                )


def _source_mask(env: Environment, S) -> np.ndarray:
    mask = np.zeros(env.n_sites, dtype=bool)
    for x in S:
        mask[env.index(int(x))] = True
    return mask


def solve_traffic(env: Environment, S, p: float, alpha=None) -> TrafficSolution:
    """Direct solve of the balance equations on the window.

    S is the set of source sites (absolute coordinates).  Both window edges
    must belong to S so every free site has its full neighbourhood in the
    window.  Free intervals decouple and are solved as tridiagonal systems.
    """
    if not 0.5 < p <= 1.0:
        raise DomainError("kernel requires p in (1/2, 1]")
    alpha = env.alpha if alpha is None else np.asarray(alpha, dtype=float)
    mask = _source_mask(env, S)
    free = ~mask
    if not free.any():
        raise DomainError("free set is empty (every site is a source)")
    if free[0] or free[-1]:
        raise WindowTooSmallError("window edges must belong to the source set")
    q = 1.0 - p
    lam = alpha.copy()

    w = env.n_sites
    i = 0
    while i < w:
        if not free[i]:
            i += 1
            continue
        j = i
        while j + 1 < w and free[j + 1]:
            j += 1
        n = j - i + 1
        ab = np.zeros((3, n))
        ab[1, :] = 1.0
        ab[0, 1:] = -q  # superdiagonal: coefficient of lam(x+1)
        ab[2, :-1] = -p  # subdiagonal: coefficient of lam(x-1)
        rhs = np.zeros(n)
        rhs[0] += p * lam[i - 1]
        rhs[-1] += q * lam[j + 1]
        lam[i : j + 1] = solve_banded((1, 1), ab, rhs)
        i = j + 1

    residual = 0.0
    for i in np.nonzero(free)[0]:
        r = abs(lam[i] - p * lam[i - 1] - q * lam[i + 1])
        residual = max(residual, r)
    if residual >= BALANCE_TOL:
        raise RuntimeError(f"balance residual {residual:.2e} above tolerance")
    recurrent = bool(np.all(lam[free] < alpha[free]))
    return TrafficSolution(
        x_min=env.x_min,
        x_max=env.x_max,
        in_S=mask,
        lam=lam,
        alpha=alpha,
        p=p,
        recurrent=recurrent,
        residual=residual,
    )


def traffic_by_hitting(env: Environment, S, p: float, x: int, n_walks: int, seed: int):
    """Monte Carlo of the hitting representation; returns (estimate, SE).

    The reversed kernel swaps the jump probabilities, so the walk steps left
    with probability p.  It stops on the first source site and pays the rate
    there.
    """
    mask = _source_mask(env, S)
    start = env.index(x)
    if mask[start]:
        raise DomainError("start site belongs to the source set")
    state = K.site_states(seed, 0, 0)[0]
    total, total2, done = K._hitting_walks(
        state, start, ~mask, env.alpha, p, n_walks, WALK_STEP_CAP
    )
    if done < n_walks:
        raise RuntimeError("reversed walk failed to hit the source set")
    mean = total / done
    var = max(total2 / done - mean * mean, 0.0)
    return mean, math.sqrt(var / done)


def augment_source(env: Environment, S, traffic: TrafficSolution):
    """Push non-recurrent sites into the source set with their traffic rate.

    Returns (S_prime as a sorted list of sites, alpha_prime).  The modified
    rates dominate the original ones on the new sources, which is the
    hypothesis of the coupling with modified sources.
    """
    mask = _source_mask(env, S)
    violating = (~mask) & (traffic.lam >= traffic.alpha)
    alpha_prime = traffic.alpha.copy()
    alpha_prime[violating] = traffic.lam[violating]
    mask_prime = mask | violating
    sites = env.sites[mask_prime]
    return [int(s) for s in sites], alpha_prime


def stationary_measure(env: Environment, S, traffic: TrafficSolution, g: RateFunction):
    """Per-free-site single-site laws of the invariant product measure."""
    if not traffic.recurrent:
        raise DomainError("stationary measure requires a recurrent solution")
    mask = _source_mask(env, S)
    out = {}
    for i in np.nonzero(~mask)[0]:
        x = env.x_min + i
        out[x] = site_law(g, float(traffic.lam[i] / traffic.alpha[i]))
    return out


@dataclass
class BarrierResult:
    S: list
    traffic: TrafficSolution
    S_augmented: list
    alpha_augmented: np.ndarray
    traffic_augmented: TrafficSolution
    lambda_F: dict


def barrier_construction(
    env: Environment, epsilon: float, delta: float, p: float, F=(0,)
) -> BarrierResult:
    """Source set of slow or far sites, solved and made recurrent.

    S contains every site with rate below c + epsilon and every site beyond
    1/delta.  Falling rates at the requested sites F as epsilon shrinks are
    the quantitative trace of the convergence mechanism.
    """
    radius = int(math.floor(1.0 / delta))
    if env.x_min > -radius - 1 or env.x_max < radius + 1:
        raise WindowTooSmallError("window must extend beyond 1/delta")
    slow = env.alpha < env.c + epsilon
    far = np.abs(env.sites) > radius
    mask = slow | far
    if mask.all():
        raise DomainError("degenerate barrier: every site is a source")
    if not slow.any():
        raise WindowTooSmallError(f"window too small for epsilon={epsilon}")
    for x in F:
        if mask[env.index(int(x))]:
            raise DomainError(f"requested site {x} lies inside the source set")
    S = [int(s) for s in env.sites[mask]]
    traffic = solve_traffic(env, S, p)
    S_prime, alpha_prime = augment_source(env, S, traffic)
    traffic_prime = solve_traffic(env, S_prime, p, alpha=alpha_prime)
    lam_F = {int(x): traffic_prime.lambda_at(int(x)) for x in F}
    return BarrierResult(
        S=S,
        traffic=traffic,
        S_augmented=S_prime,
        alpha_augmented=alpha_prime,
        traffic_augmented=traffic_prime,
        lambda_F=lam_F,
    )


def pick_delta(
    env: Environment,
    epsilon: float,
    p: float,
    start: int = 0,
    target: float = 0.99,
    n_walks: int = 10**4,
    seed: int = 0,
):
    """Radius choice heuristic: enlarge 1/delta until almost every reversed
    walk leaves the free set through a slow site rather than the far edge.

    The exact coupling of epsilon and delta in the underlying argument is
    non-constructive; this exit-fraction criterion is an explicit stand-in
    and is labelled as such in reports.
    """
    slow = env.alpha < env.c + epsilon
    if not slow.any():
        raise WindowTooSmallError(f"window too small for epsilon={epsilon}")
    slow_sites = env.sites[slow]
    base = max(int(np.abs(slow_sites).min()), 1)
    radius = 2 * base
    max_radius = min(-env.x_min, env.x_max) - 1
    state = K.site_states(seed, 1, 1)[0]
    while True:
        far = np.abs(env.sites) > radius
        in_free = ~(slow | far)
        frac = 0.0
        if in_free[env.index(start)]:
            hits, done = K._exit_kind_walks(
                state, env.index(start), slow, in_free, p, n_walks, WALK_STEP_CAP
            )
            frac = hits / max(done, 1)
        if frac >= target:
            return 1.0 / radius, frac
        if radius >= max_radius:
            return 1.0 / radius, frac
        radius = min(2 * radius, max_radius)
