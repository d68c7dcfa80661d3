"""Quenched rate fields on finite windows.

An environment assigns to every site of a finite integer window a rate
alpha(x) in (c, 1], where c is the declared floor.  Everything downstream
(simulation, traffic solving, assumption checks) consumes materialised
windows; the window is a first-class parameter because the whole laboratory
is finite-volume.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .disorder import parse_disorder
from .errors import ConstructionError, DomainError, WindowTooSmallError
from .rates import mean_density_R


@dataclass(frozen=True)
class Environment:
    c: float
    x_min: int
    x_max: int
    alpha: np.ndarray = field(repr=False)
    generator: str = "explicit"
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.c < 1.0:
            raise ConstructionError("floor c must lie in (0,1)")
        if self.x_min > self.x_max:
            raise ConstructionError("empty window")
        alpha = np.asarray(self.alpha, dtype=float)
        if len(alpha) != self.n_sites:
            raise ConstructionError("alpha table does not match window")
        if np.any(alpha <= self.c) or np.any(alpha > 1.0):
            raise ConstructionError("alpha values must lie in (c, 1]")
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_sites(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def index(self, x: int) -> int:
        if not self.x_min <= x <= self.x_max:
            raise IndexError(f"site {x} outside window [{self.x_min},{self.x_max}]")
        return x - self.x_min

    def a(self, x: int) -> float:
        return float(self.alpha[self.index(x)])

    def restrict(self, x_min: int, x_max: int) -> "Environment":
        if x_min < self.x_min or x_max > self.x_max:
            raise WindowTooSmallError("requested window exceeds materialised one")
        lo, hi = self.index(x_min), self.index(x_max)
        return Environment(
            c=self.c,
            x_min=x_min,
            x_max=x_max,
            alpha=self.alpha[lo : hi + 1].copy(),
            generator=self.generator,
            seed=self.seed,
        )

    def save(self, path) -> None:
        """CSV with header site,alpha plus a JSON sidecar with metadata."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site", "alpha"])
            for x, a in zip(self.sites, self.alpha):
                writer.writerow([int(x), repr(float(a))])
        sidecar = {
            "c": self.c,
            "window": [self.x_min, self.x_max],
            "generator": self.generator,
            "seed": self.seed,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))

    @classmethod
    def load(cls, path) -> "Environment":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        sites, alphas = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                sites.append(int(row["site"]))
                alphas.append(float(row["alpha"]))
        order = np.argsort(sites)
        return cls(
            c=meta["c"],
            x_min=int(min(sites)),
            x_max=int(max(sites)),
            alpha=np.asarray(alphas)[order],
            generator=meta["generator"],
            seed=meta["seed"],
        )


@dataclass(frozen=True)
class DefectSchedule:
    """Endpoints x_0 = 0 > x_1 > x_2 > ... of the defect intervals.

    The j-th interval is [x_{j+1}, x_j - 1]; its sites carry ranks
    k = 1..(x_j - x_{j+1}) counted down from x_j.  Prefix checks enforce the
    two trend conditions: gaps do not shrink (they must grow without bound)
    and successive endpoint ratios move toward one.
    """

    endpoints: tuple

    def __post_init__(self):
        ep = tuple(int(v) for v in self.endpoints)
        if len(ep) < 2 or ep[0] != 0:
            raise ConstructionError("schedule must start at x_0 = 0")
        if any(b >= a for a, b in zip(ep, ep[1:])):
            raise ConstructionError("endpoints must be strictly decreasing")
        gaps = [a - b for a, b in zip(ep, ep[1:])]
        if any(b < a for a, b in zip(gaps, gaps[1:])):
            raise ConstructionError("interval gaps must be nondecreasing")
        if len(ep) >= 4:
            ratios = [ep[j + 1] / ep[j] for j in range(1, len(ep) - 1)]
            if ratios[-1] > ratios[0] + 1e-9:
                raise ConstructionError("endpoint ratios must trend toward 1")
        object.__setattr__(self, "endpoints", ep)

    @property
    def depth(self) -> int:
        return self.endpoints[-1]

    def beta(self, x) -> np.ndarray:
        """Rank fraction k/(gap+1) at site x (mirrored to positive sites)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if np.any(x == 0):
            raise ValueError("beta is not defined at the origin")
        y = -np.abs(x)
        if np.any(y < self.depth):
            raise WindowTooSmallError("window not covered by schedule")
        neg = -np.asarray(self.endpoints)  # ascending 0, |x_1|, |x_2|, ...
        j = np.searchsorted(neg, -y, side="left") - 1
        k = (-neg[j]) - y
        gap = neg[j + 1] - neg[j]
        return k / (gap + 1.0)


def quadratic_schedule(j_max: int) -> DefectSchedule:
    """Default endpoints x_j = -j^2: gaps 2j+1 grow, ratios tend to one."""
    return DefectSchedule(endpoints=tuple(-(j * j) for j in range(j_max + 1)))


def schedule_covering(window) -> DefectSchedule:
    """Quadratic schedule deep enough to cover the window on both sides."""
    x_min, x_max = window
    depth = max(abs(int(x_min)), abs(int(x_max)), 1)
    j = int(np.ceil(np.sqrt(depth))) + 1
    return quadratic_schedule(j)


def build_iid_environment(c, Q, window, seed) -> Environment:
    """alpha(x) i.i.d. with marginal Q, via inverse-CDF of seeded uniforms."""
    x_min, x_max = window
    if Q.lo < c or (Q.is_discrete and min(Q.atoms) <= c):
        raise ConstructionError("disorder law puts mass at or below the floor c")
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=x_max - x_min + 1)
    alpha = np.minimum(np.asarray(Q.inv(u), dtype=float), 1.0)
    return Environment(
        c=c, x_min=x_min, x_max=x_max, alpha=alpha, generator="iid", seed=seed
    )


def build_sparse_defect_environment(c, Q, schedule, window) -> Environment:
    """Deterministic environment with mirrored defect ranks.

    alpha(x) = Q^{-1}(beta(x)) with beta the rank fraction of the schedule,
    alpha(0) = 1.  Slow sites appear once per interval, so their spatial
    density decays while their empirical law still converges to Q.
    """
    x_min, x_max = window
    if Q.lo < c or (Q.is_discrete and min(Q.atoms) <= c):
        raise ConstructionError("disorder law puts mass at or below the floor c")
    sites = np.arange(x_min, x_max + 1)
    alpha = np.ones(len(sites))
    off_origin = sites != 0
    beta = schedule.beta(sites[off_origin])
    alpha[off_origin] = np.minimum(np.asarray(Q.inv(beta), dtype=float), 1.0)
    return Environment(
        c=c, x_min=x_min, x_max=x_max, alpha=alpha, generator="sparse-defect"
    )


def slow_site_boundaries(env: Environment, epsilon: float):
    """Nearest slow sites around the origin: (max x<=0, min x>=0) with
    alpha <= c + epsilon."""
    if env.x_min > 0 or env.x_max < 0:
        raise WindowTooSmallError("window must contain the origin")
    thresh = env.c + epsilon
    sites = env.sites
    ok = env.alpha <= thresh
    left = sites[(sites <= 0) & ok]
    right = sites[(sites >= 0) & ok]
    if len(left) == 0 or len(right) == 0:
        raise WindowTooSmallError(f"window too small for epsilon={epsilon}")
    return int(left.max()), int(right.min())


def check_slow_site_density(env, epsilon_grid, n_grid, slack=0.02) -> dict:
    """Advisory report on whether min alpha over [-n, -n(1-eps)] trends to c.

    Finite windows cannot verify the limit; the verdict only states whether
    the deepest probed minimum is within `slack` of the floor and no larger
    than the shallowest one.
    """
    report = {}
    for eps in epsilon_grid:
        mins = {}
        for n in n_grid:
            lo, hi = -int(n), -int(np.floor(n * (1 - eps)))
            lo = max(lo, env.x_min)
            seg = env.alpha[env.index(lo) : env.index(min(hi, env.x_max)) + 1]
            mins[int(n)] = float(seg.min()) if len(seg) else float("nan")
        vals = [v for v in mins.values() if np.isfinite(v)]
        trend = bool(vals and vals[-1] <= env.c + slack and vals[-1] <= vals[0] + 1e-12)
        report[float(eps)] = {"min_alpha": mins, "trends_to_c": trend}
    return report


def empirical_annealed_density(env, g, lam, n):
    """Window averages of the quenched mean density on both sides of 0."""
    lam = float(lam)
    if lam >= env.c:
        raise DomainError("empirical annealed density requires lambda < c")
    if env.x_min > -n or env.x_max < n:
        raise WindowTooSmallError("window does not cover [-n, n]")
    left = env.alpha[env.index(-n) : env.index(0) + 1]
    right = env.alpha[env.index(0) : env.index(n) + 1]

    def avg(alphas):
        total = 0.0
        for a, count in zip(*np.unique(alphas, return_counts=True)):
            total += count * mean_density_R(g, lam / a)
        return total / len(alphas)

    return avg(left), avg(right)


def environment_from_spec(spec: dict) -> Environment:
    """Build an environment from a declarative description (CLI/config use)."""
    kind = spec["kind"]
    window = tuple(spec["window"])
    c = float(spec["c"])
    if kind == "iid":
        return build_iid_environment(
            c, parse_disorder(spec["q"]), window, spec.get("seed", 0)
        )
    if kind == "sparse-defect":
        return build_sparse_defect_environment(
            c, parse_disorder(spec["q"]), schedule_covering(window), window
        )
    if kind == "constant":
        value = float(spec["value"])
        alpha = np.full(window[1] - window[0] + 1, value)
        return Environment(
            c=c, x_min=window[0], x_max=window[1], alpha=alpha, generator="explicit"
        )
    if kind == "file":
        return Environment.load(spec["path"])
    raise ConstructionError(f"unknown environment kind {kind!r}")
