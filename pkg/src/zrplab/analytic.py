"""Macroscopic theory of the disordered process on sampled grids.

Everything here is a function of the annealed mean density: the average of
the quenched single-site mean against the rate-marginal law.  From it we
tabulate the critical density (a one-sided limit, taken by extrapolation on
a geometrically refined grid), the flux as a function of density, its
Legendre transform, the concave envelope, the self-similar fan profile and
the front speed.  All objects are grid tables with explicit clustering near
the critical intensity, because that endpoint is where every one-sided
limit lives.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainError
from .rates import RateFunction, mean_density_R

DELTA_H_FRACTION = 0.01  # margin band for the convexity condition
DIVERGENCE_CAP_FACTOR = 1e6
CONTRACTION_THRESHOLD = 0.85


def _rbar_point(g: RateFunction, Q, lam: float) -> float:
    """Annealed mean density: integral of R(lam/a) against Q."""
    if lam == 0.0:
        return 0.0
    return Q.expect(lambda a: mean_density_R(g, lam / a))


def annealed_density_from_Q(g, Q, lambda_grid, c=None):
    """Tabulate the annealed density and estimate the critical density.

    Returns (Rbar values over lambda_grid, rho_c).  rho_c is +inf when the
    left limit at c diverges; that is a flag, not an exception.
    """
    c = Q.lo if c is None else float(c)
    grid = np.asarray(lambda_grid, dtype=float)
    if np.any(grid < 0) or np.any(grid >= c):
        raise DomainError("lambda grid must lie in [0, c)")
    vals = np.array([_rbar_point(g, Q, lam) for lam in grid])
    rho_c = _critical_density(g, Q, c)
    return vals, rho_c


def _tail_limit(values, noise_floor):
    """Limit of a sequence sampled along a geometric approach, or +inf.

    First differences that sink below the noise floor certify convergence;
    otherwise persistent non-contraction of the differences flags
    divergence (this catches logarithmic blowup that no value cap would).
    """
    a = np.asarray(values, dtype=float)
    if np.any(~np.isfinite(a)):
        return math.inf
    d = np.diff(a)
    small = np.abs(d) <= noise_floor
    if np.any(small):
        k = int(np.argmax(small)) + 1
        return _aitken(a[: k + 1])
    ratios = np.abs(d[1:]) / np.maximum(np.abs(d[:-1]), 1e-300)
    probe = ratios[-6:] if len(ratios) >= 6 else ratios
    if len(probe) == 0 or np.median(probe) > CONTRACTION_THRESHOLD:
        return math.inf
    return _aitken(a)


def _aitken(a):
    """One pass of Aitken's delta-squared, reading off the last finite entry."""
    a = np.asarray(a, dtype=float)
    if len(a) < 3:
        return float(a[-1])
    d1 = a[2:] - a[1:-1]
    d0 = a[1:-1] - a[:-2]
    denom = d1 - d0
    acc = np.where(np.abs(denom) > 1e-300, a[2:] - d1 * d1 / denom, a[2:])
    good = acc[np.isfinite(acc)]
    return float(good[-1]) if len(good) else float(a[-1])


def _critical_density(g, Q, c, k_range=range(6, 47)) -> float:
    """Left limit of the annealed density at c along lambda = c(1 - 2^-k)."""
    cap = DIVERGENCE_CAP_FACTOR * max(_rbar_point(g, Q, c / 2), 1e-12)
    vals = []
    for k in k_range:
        v = _rbar_point(g, Q, c * (1.0 - 2.0**-k))
        vals.append(v)
        if not math.isfinite(v) or v > cap:
            return math.inf
    floor = 1e-9 * max(1.0, abs(vals[-1]))
    return _tail_limit(vals, floor)


def _derivative_at_c(g, Q, c, rho_c, k_range=range(12, 31)) -> float:
    """One-sided derivative of the annealed density at c, or +inf.

    Difference quotients along the geometric grid, accelerated by one
    Richardson level; a non-contracting quotient sequence means the
    derivative blows up.
    """
    ks = np.asarray(list(k_range))
    h = c * 2.0 ** (-ks.astype(float))
    quot = np.array(
        [(rho_c - _rbar_point(g, Q, c - hh)) / hh for hh in h]
    )
    richardson = 2.0 * quot[1:] - quot[:-1]
    val = _tail_limit(richardson, 1e-7 * max(1.0, abs(richardson[-1])))
    return val


@dataclass
class FluxTable:
    """Sampled macroscopic objects for one (g, Q, c, p) setting."""

    c: float
    p: float
    rate_fn: RateFunction
    lambda_grid: np.ndarray = field(repr=False)
    Rbar: np.ndarray = field(repr=False)
    rho_c: float = math.inf
    Rbar_prime_plus_c: float = math.inf
    v0: float = 0.0
    holds_H: bool = False
    margin: float = math.nan
    v_grid: np.ndarray = field(default=None, repr=False)
    fstar: np.ndarray = field(default=None, repr=False)
    fhat: np.ndarray = field(default=None, repr=False)
    Rv: np.ndarray = field(default=None, repr=False)
    lam_minus: np.ndarray = field(default=None, repr=False)
    rbar_fn: object = field(default=None, repr=False)  # exact evaluator if cheap

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def drift(self) -> float:
        return self.p - self.q

    @property
    def rho_grid(self) -> np.ndarray:
        return self.Rbar

    @property
    def f_grid(self) -> np.ndarray:
        return self.drift * self.lambda_grid

    @cached_property
    def _rbar_interp(self):
        return PchipInterpolator(self.lambda_grid, self.Rbar, extrapolate=False)

    @cached_property
    def _inverse_interp(self):
        return PchipInterpolator(self.Rbar, self.lambda_grid, extrapolate=False)

    def rbar_at(self, lam):
        """Annealed density off the grid: exact for discrete marginals,
        monotone interpolation of the table otherwise."""
        lam = np.asarray(lam, dtype=float)
        capped = np.clip(lam, 0.0, self.lambda_grid[-1])
        if self.rbar_fn is not None:
            out = np.asarray(
                [self.rbar_fn(x) for x in np.atleast_1d(capped)], dtype=float
            )
            out = out.reshape(capped.shape)
        else:
            out = self._rbar_interp(capped)
        return out if out.shape else float(out)

    def save(self, path) -> None:
        path = Path(path)
        n = max(len(self.lambda_grid), len(self.v_grid))

        def pad(arr):
            out = [""] * n
            for i, v in enumerate(arr):
                out[i] = repr(float(v))
            return out

        cols = {
            "lambda": pad(self.lambda_grid),
            "Rbar": pad(self.Rbar),
            "rho": pad(self.rho_grid),
            "f": pad(self.f_grid),
            "v": pad(self.v_grid),
            "fstar": pad(self.fstar),
            "fhat": pad(self.fhat),
            "Rv": pad(self.Rv),
        }
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols.keys())
            for i in range(n):
                writer.writerow([cols[k][i] for k in cols])
        header = {
            "c": self.c,
            "p": self.p,
            "q": self.q,
            "rho_c": self.rho_c if math.isfinite(self.rho_c) else "inf",
            "v0": self.v0,
            "holdsH": self.holds_H,
            "margin": self.margin if math.isfinite(self.margin) else "inf",
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(header))


def _profile_max(ft: FluxTable, v: float, lam_hi: float):
    """Maximise drift*lam - v*Rbar(lam) over [0, lam_hi].

    Returns (value, smallest maximiser).  Grid candidates are exact table
    entries, so the returned value never undercuts the grid maximum; local
    refinement uses the monotone interpolant.  Ties resolve to the smallest
    intensity.
    """
    drift = ft.drift
    grid = ft.lambda_grid
    mask = grid <= lam_hi
    pts = grid[mask]
    vals = drift * pts - v * ft.Rbar[mask]
    if lam_hi not in pts:
        if not math.isfinite(ft.rho_c) and lam_hi >= grid[-1]:
            pass  # profile tends to -inf at c; endpoint irrelevant
        else:
            pts = np.append(pts, lam_hi)
            vals = np.append(vals, drift * lam_hi - v * ft.rbar_at(lam_hi))
    best = float(vals.max())
    tie = 1e-11 * max(1.0, abs(best))
    idx = int(np.argmax(vals >= best - tie))
    lam_star = float(pts[idx])

    lo = pts[idx - 1] if idx > 0 else pts[0]
    hi = pts[idx + 1] if idx + 1 < len(pts) else pts[-1]
    for _ in range(4):
        if hi - lo < 1e-13:
            break
        xs = np.linspace(lo, hi, 65)
        ys = drift * xs - v * np.asarray(ft.rbar_at(xs))
        m = float(np.nanmax(ys))
        j = int(np.argmax(ys >= m - tie))
        if m > best + tie:
            best, lam_star = m, float(xs[j])
        elif m >= best - tie and xs[j] < lam_star:
            lam_star = float(xs[j])
        step = xs[1] - xs[0]
        lo, hi = max(xs[j] - step, pts[0]), min(xs[j] + step, pts[-1])
    return best, lam_star


def flux(ft: FluxTable, rho: float) -> float:
    """f(rho) = drift * Rbar^{-1}(rho), with the endpoint pinned at drift*c."""
    rho = float(rho)
    if rho < 0 or rho > ft.rho_c:
        raise DomainError("density outside [0, rho_c]")
    if rho == ft.rho_c:
        return ft.drift * ft.c
    if rho > ft.Rbar[-1]:
        raise DomainError("density beyond tabulated range")
    return ft.drift * float(ft._inverse_interp(rho))


def legendre_fstar(ft: FluxTable, v: float) -> float:
    """Legendre transform of the flux at speed v."""
    v = float(v)
    if v == 0.0:
        return ft.drift * ft.c  # attained as the intensity tends to c
    if v < 0:
        if not math.isfinite(ft.rho_c):
            raise DomainError("fstar undefined for v < 0 with infinite rho_c")
        return ft.drift * ft.c - v * ft.rho_c
    return _profile_max(ft, v, ft.c)[0]


def restricted_fstar(ft: FluxTable, v: float, lam_cap: float) -> float:
    """Legendre transform restricted to intensities in [0, lam_cap]."""
    lam_cap = float(lam_cap)
    if not 0.0 <= lam_cap <= ft.c:
        raise DomainError("restriction cap must lie in [0, c]")
    v = float(v)
    if v == 0.0:
        return ft.drift * lam_cap
    if v < 0:
        rb = ft.rho_c if lam_cap == ft.c else float(ft.rbar_at(lam_cap))
        if not math.isfinite(rb):
            raise DomainError("restricted fstar undefined for v < 0 here")
        return ft.drift * lam_cap - v * rb
    if lam_cap == 0.0:
        return 0.0
    return _profile_max(ft, v, lam_cap)[0]


def riemann_fan(ft: FluxTable, v: float):
    """Fan density and smallest maximising intensity at ray speed v."""
    v = float(v)
    if v < 0:
        raise DomainError("fan is defined for v >= 0")
    _, lam_star = _profile_max(ft, v, ft.c)
    if lam_star >= ft.lambda_grid[-1]:
        return ft.rho_c, ft.c
    return float(ft.rbar_at(lam_star)), lam_star


def front_speed_v0(ft: FluxTable):
    """Front speed, whether the convexity condition holds, and its margin."""
    if not math.isfinite(ft.rho_c):
        raise DomainError("front speed requires a finite critical density")
    return ft.v0, ft.holds_H, ft.margin


def concave_envelope(ft: FluxTable) -> np.ndarray:
    """Upper concave hull of the (rho, f) grid points, evaluated on the grid."""
    return _upper_hull_values(ft.rho_grid, ft.f_grid)


def _upper_hull_values(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    hull = []  # indices of hull vertices, left to right
    for i in range(len(x)):
        while len(hull) >= 2:
            i1, i2 = hull[-2], hull[-1]
            cross = (x[i2] - x[i1]) * (y[i] - y[i1]) - (y[i2] - y[i1]) * (
                x[i] - x[i1]
            )
            if cross >= 0:  # middle point on or below the chord: drop it
                hull.pop()
            else:
                break
        hull.append(i)
    hx, hy = x[hull], y[hull]
    out = np.interp(x, hx, hy)
    return np.maximum(out, y)


def build_flux_table(
    g: RateFunction,
    Q,
    c: float,
    p: float,
    n_coarse: int = 96,
    k_max: int = 46,
    n_v: int = 161,
) -> FluxTable:
    """Tabulate the whole macroscopic theory for one setting."""
    if not 0.5 < p <= 1.0:
        raise DomainError("nearest-neighbour kernel needs p in (1/2, 1]")
    drift = 2.0 * p - 1.0
    ks = np.arange(4, k_max + 1)
    geo = c * (1.0 - 2.0 ** (-ks.astype(float)))
    coarse = np.linspace(0.0, c * (1.0 - 2.0**-4), n_coarse + 1)
    lam = np.unique(np.concatenate([coarse, geo]))
    rbar = np.array([_rbar_point(g, Q, x) for x in lam])
    rho_c = _critical_density(g, Q, c)

    if math.isfinite(rho_c):
        lam = np.append(lam, c)
        rbar = np.append(rbar, rho_c)
        d_plus = _derivative_at_c(g, Q, c, rho_c)
    else:
        d_plus = math.inf

    ft = FluxTable(
        c=c,
        p=p,
        rate_fn=g,
        lambda_grid=lam,
        Rbar=rbar,
        rho_c=rho_c,
        Rbar_prime_plus_c=d_plus,
        rbar_fn=(lambda x: _rbar_point(g, Q, x)) if getattr(Q, "is_discrete", False) else None,
    )

    delta_h = c * DELTA_H_FRACTION
    if math.isfinite(rho_c):
        band = lam <= c - delta_h
        if math.isfinite(d_plus):
            gaps = rbar[band] - rho_c + (c - lam[band]) * d_plus
            ft.margin = float(gaps.min())
            ft.holds_H = bool(ft.margin > 0)
        else:
            # derivative blows up: the supporting line at c is vertical and
            # the condition holds as soon as Rbar stays strictly below rho_c
            ft.margin = math.inf
            ft.holds_H = bool(np.all(rbar[band] < rho_c))
        if ft.holds_H and math.isfinite(d_plus):
            ft.v0 = drift / d_plus
        elif ft.holds_H:
            ft.v0 = 0.0
        else:
            interior = lam < c
            ratios = (c - lam[interior]) / np.maximum(rho_c - rbar[interior], 1e-300)
            ft.v0 = drift * float(ratios.min())
    else:
        ft.v0 = 0.0
        ft.holds_H = False
        ft.margin = math.nan

    slope0 = (rbar[1] - rbar[0]) / (lam[1] - lam[0])
    v_max = 1.25 * drift / slope0
    v_grid = np.linspace(0.0, v_max, n_v)
    if math.isfinite(ft.v0) and 0.0 < ft.v0 < v_max:
        v_grid = np.unique(np.append(v_grid, ft.v0))
    ft.v_grid = v_grid
    ft.fstar = np.array([legendre_fstar(ft, v) for v in v_grid])
    fan = [riemann_fan(ft, v) for v in v_grid]
    ft.Rv = np.array([r for r, _ in fan])
    ft.lam_minus = np.array([l for _, l in fan])
    ft.fhat = concave_envelope(ft)
    return ft
