"""Event-driven simulation of the disordered process on a finite window.

Configurations live on a window with explicit edge policies; infinite
occupancies (source sites) are a dedicated mask, never a large integer, and
obey the absorbing arithmetic of the dynamics.  Trajectories are handles
that can be replayed deterministically, which is how currents and block
rates are measured without storing event logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .environment import Environment
from .errors import DomainError, InvariantViolation, SupercriticalError
from .rates import RateFunction, site_law

CLOSED, SINK, SOURCE = "closed", "sink", "source"

G_TABLE_CAP = 4096  # occupancies above this use the tail rate 1


@dataclass
class Configuration:
    x_min: int
    x_max: int
    counts: np.ndarray = field(repr=False)
    source_mask: np.ndarray = field(repr=False)
    left_boundary: str = CLOSED
    right_boundary: str = CLOSED

    def __post_init__(self):
        self.counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        self.source_mask = np.ascontiguousarray(self.source_mask, dtype=np.bool_)
        if len(self.counts) != self.n_sites or len(self.source_mask) != self.n_sites:
            raise ValueError("arrays do not match window")
        if np.any(self.counts < 0):
            raise ValueError("negative occupancy")
        for pol in (self.left_boundary, self.right_boundary):
            if pol not in (CLOSED, SINK, SOURCE):
                raise ValueError(f"unknown boundary policy {pol!r}")
        if self.left_boundary == SOURCE and not self.source_mask[0]:
            raise ValueError("source edge requires an infinite edge site")
        if self.right_boundary == SOURCE and not self.source_mask[-1]:
            raise ValueError("source edge requires an infinite edge site")
        self.counts[self.source_mask] = 0

    @property
    def n_sites(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.x_min, self.x_max + 1)

    def index(self, x: int) -> int:
        if not self.x_min <= x <= self.x_max:
            raise IndexError(f"site {x} outside window")
        return x - self.x_min

    def occupancy(self, x: int):
        i = self.index(x)
        return math.inf if self.source_mask[i] else int(self.counts[i])

    def occupancies(self) -> np.ndarray:
        """Float view with inf at source sites."""
        out = self.counts.astype(float)
        out[self.source_mask] = math.inf
        return out

    def right_mass(self, x0: int) -> float:
        """Total occupancy strictly right of x0 (inf if a source lies there)."""
        i = self.index(x0)
        if np.any(self.source_mask[i + 1 :]):
            return math.inf
        return float(self.counts[i + 1 :].sum())

    def total_mass(self) -> float:
        if np.any(self.source_mask):
            return math.inf
        return float(self.counts.sum())

    def copy(self) -> "Configuration":
        return replace(self, counts=self.counts.copy(), source_mask=self.source_mask.copy())


def empty_configuration(window, left=CLOSED, right=CLOSED) -> Configuration:
    x_min, x_max = window
    n = x_max - x_min + 1
    return Configuration(
        x_min=x_min,
        x_max=x_max,
        counts=np.zeros(n, np.int64),
        source_mask=np.zeros(n, np.bool_),
        left_boundary=left,
        right_boundary=right,
    )


@dataclass(frozen=True)
class HarrisEventStream:
    """Seeded stream of potential jump events over a window of sites.

    Per site the stream is a pure function of (seed, site), so replaying
    with the same seed gives identical events regardless of the window;
    sharing the stream across configurations couples them exactly.
    """

    seed: int
    x_min: int
    x_max: int
    horizon: float
    p: float

    def covers(self, config: Configuration) -> bool:
        return self.x_min <= config.x_min and self.x_max >= config.x_max

    def states_for(self, x_min: int, x_max: int) -> np.ndarray:
        return K.site_states(self.seed, x_min, x_max)

    def materialize(self):
        """All events up to the horizon, globally time-ordered."""
        states = self.states_for(self.x_min, self.x_max)
        ts, xs, us, zs = K._materialize(states, self.horizon, self.p)
        order = np.lexsort((xs, ts))
        return EventTable(
            times=ts[order],
            sites=xs[order] + self.x_min,
            marks=us[order],
            directions=zs[order],
        )


@dataclass(frozen=True)
class EventTable:
    times: np.ndarray
    sites: np.ndarray
    marks: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.times)


def generate_events(seed, window, horizon, p) -> HarrisEventStream:
    """Declare the Poisson stream; actual draws happen lazily per site."""
    if not 0.5 < p <= 1.0:
        raise DomainError(
            "nearest-neighbour kernel with non-zero rightward drift requires p in (1/2, 1]"
        )
    if horizon < 0:
        raise DomainError("horizon must be nonnegative")
    x_min, x_max = window
    return HarrisEventStream(
        seed=int(seed), x_min=int(x_min), x_max=int(x_max), horizon=float(horizon), p=float(p)
    )


@dataclass(frozen=True)
class PathSpec:
    """Piecewise-constant nearest-neighbour path for current measurement."""

    kind: str = "fixed"  # fixed | drift | table
    x0: int = 0
    v: float = 0.0
    jump_times: np.ndarray | None = None
    jump_positions: np.ndarray | None = None

    def realize(self, until: float):
        """Jump times/positions up to `until`; positions are absolute sites."""
        if self.kind == "fixed" or (self.kind == "drift" and self.v == 0.0):
            return np.empty(0), np.empty(0, np.int64), int(self.x0)
        if self.kind == "drift":
            speed = abs(self.v)
            n = int(math.floor(speed * until))
            ks = np.arange(1, n + 1)
            times = ks / speed
            step = 1 if self.v > 0 else -1
            pos = self.x0 + step * ks
            return times, pos.astype(np.int64), int(self.x0)
        if self.kind == "table":
            t = np.asarray(self.jump_times, dtype=float)
            x = np.asarray(self.jump_positions, dtype=np.int64)
            prev = np.concatenate(([self.x0], x[:-1]))
            if np.any(np.abs(x - prev) > 1):
                raise DomainError("path jump size > 1")
            keep = t <= until
            return t[keep], x[keep], int(self.x0)
        raise ValueError(f"unknown path kind {self.kind!r}")


def fixed_path(x0: int) -> PathSpec:
    return PathSpec(kind="fixed", x0=x0)


def drift_path(x0: int, v: float) -> PathSpec:
    return PathSpec(kind="drift", x0=x0, v=v)


@dataclass
class CurrentLedger:
    path: PathSpec
    count: int
    jump_part: int
    path_part: int


@dataclass
class Trajectory:
    """Replayable handle: initial data plus the evolved state."""

    initial: Configuration
    final: Configuration
    alpha: np.ndarray = field(repr=False)
    g: RateFunction = None
    stream: HarrisEventStream = None
    until: float = 0.0
    escaped: np.ndarray = None  # (left, right) exits of finite particles
    snapshots: dict = field(default_factory=dict)
    n_events: int = 0


def _alpha_row(env_or_alpha, config: Configuration) -> np.ndarray:
    if isinstance(env_or_alpha, Environment):
        if (env_or_alpha.x_min, env_or_alpha.x_max) != (config.x_min, config.x_max):
            raise ValueError("environment window must equal configuration window")
        return env_or_alpha.alpha
    alpha = np.asarray(env_or_alpha, dtype=float)
    if alpha.shape != (config.n_sites,):
        raise ValueError("alpha row must match configuration window")
    return alpha


def _run_engine(
    configs,
    alphas,
    g: RateFunction,
    stream: HarrisEventStream,
    until: float,
    snapshot_times=(),
    paths=(),
    blocks=(),
    assert_order=False,
    max_events=-1,
):
    base = configs[0]
    for cfg in configs:
        if (cfg.x_min, cfg.x_max) != (base.x_min, base.x_max):
            raise ValueError("coupled configurations need identical windows")
        if (cfg.left_boundary, cfg.right_boundary) != (
            base.left_boundary,
            base.right_boundary,
        ):
            raise ValueError("coupled configurations need identical edge policies")
    if not stream.covers(base):
        raise InvariantViolation("event stream does not cover the window")
    if until > stream.horizon + 1e-12:
        raise ValueError("evolution time beyond stream horizon")

    k = len(configs)
    w = base.n_sites
    counts = np.stack([cfg.counts.copy() for cfg in configs])
    infmask = np.stack([cfg.source_mask for cfg in configs])
    alpha = np.stack([np.asarray(a, dtype=float) for a in alphas])
    g_arr = g.g_array(G_TABLE_CAP)
    left_sink = base.left_boundary in (SINK, SOURCE)
    right_sink = base.right_boundary in (SINK, SOURCE)
    escaped = np.zeros((k, 2))

    snap_times = np.asarray(sorted(snapshot_times), dtype=float)
    snap_out = np.zeros((len(snap_times), k, w), np.int64)

    jt_list, jx_list, starts = [], [], []
    for spec in paths:
        t, x, x0 = spec.realize(until)
        lo = min([x0] + list(x)) if len(x) else x0
        hi = max([x0] + list(x)) if len(x) else x0
        if lo < base.x_min or hi > base.x_max:
            raise ValueError("path leaves the window")
        jt_list.append(t)
        jx_list.append(x - base.x_min)
        starts.append(x0 - base.x_min)
    path_off = np.zeros(len(paths) + 1, np.int64)
    for i, t in enumerate(jt_list):
        path_off[i + 1] = path_off[i] + len(t)
    path_jt = np.concatenate(jt_list) if jt_list else np.empty(0)
    path_jx = (
        np.concatenate(jx_list).astype(np.int64) if jx_list else np.empty(0, np.int64)
    )
    path_start = np.asarray(starts, dtype=np.int64)
    gamma_jump = np.zeros((k, len(paths)))
    gamma_path = np.zeros((k, len(paths)))

    block_lo = np.asarray([b[0] - base.x_min for b in blocks], dtype=np.int64)
    block_hi = np.asarray([b[1] - base.x_min for b in blocks], dtype=np.int64)
    if len(blocks) and (block_lo.min() < 0 or block_hi.max() >= w):
        raise ValueError("block leaves the window")
    block_int = np.zeros((k, len(blocks)))

    states = stream.states_for(base.x_min, base.x_max)
    n_ev, status = K._engine(
        states,
        float(until),
        stream.p,
        counts,
        infmask,
        alpha,
        g_arr,
        left_sink,
        right_sink,
        escaped,
        snap_times,
        snap_out,
        path_off,
        path_jt,
        path_jx,
        path_start,
        gamma_jump,
        gamma_path,
        block_lo,
        block_hi,
        block_int,
        assert_order,
        max_events,
    )
    if status == K.STATUS_ORDER_VIOLATION:
        raise InvariantViolation("sitewise ordering broke under shared clocks")
    if status == K.STATUS_INF_PICKUP:
        raise InvariantViolation("current path crossed an infinite-occupancy site")

    trajectories = []
    for i, cfg in enumerate(configs):
        final = replace(
            cfg, counts=counts[i].copy(), source_mask=cfg.source_mask.copy()
        )
        trajectories.append(
            Trajectory(
                initial=cfg.copy(),
                final=final,
                alpha=alpha[i],
                g=g,
                stream=stream,
                until=until,
                escaped=escaped[i],
                snapshots={
                    float(t): snap_out[j, i].copy() for j, t in enumerate(snap_times)
                },
                n_events=n_ev,
            )
        )
    extras = {
        "gamma_jump": gamma_jump,
        "gamma_path": gamma_path,
        "block_integral": block_int,
        "n_events": n_ev,
    }
    return trajectories, extras


def evolve(config, env, g, events, until, snapshot_times=()) -> Trajectory:
    """Run one configuration forward; between events nothing changes."""
    alpha = _alpha_row(env, config)
    trajs, _ = _run_engine(
        [config], [alpha], g, events, until, snapshot_times=snapshot_times
    )
    return trajs[0]


def evolve_coupled(configs, envs, g, events, until, assert_order=True):
    """Drive several configurations by one stream; assert preserved order.

    envs may be a single environment/alpha row (shared) or one per
    configuration, matching the coupling with modified sources.
    """
    if isinstance(envs, (Environment, np.ndarray)):
        alphas = [_alpha_row(envs, configs[0])] * len(configs)
    else:
        alphas = [_alpha_row(e, c) for e, c in zip(envs, configs)]
    trajs, _ = _run_engine(
        configs, alphas, g, events, until, assert_order=assert_order
    )
    return trajs


@dataclass
class InterfaceTracker:
    """Separating location of a coupled pair plus its jump log."""

    x_final: int
    jump_times: np.ndarray
    jump_positions: np.ndarray
    n_events: int
    max_sign_changes: int
    zeta_final: Configuration
    pi_final: Configuration


def track_interface(
    zeta: Configuration,
    pi: Configuration,
    env,
    g,
    events: HarrisEventStream,
    until: float,
    x0: int,
    full_scan: bool = False,
    max_events: int = -1,
) -> InterfaceTracker:
    """Evolve the pair keeping zeta <= pi at/left of the tracked site and
    zeta >= pi right of it; the ordering is asserted after every event."""
    if (zeta.x_min, zeta.x_max) != (pi.x_min, pi.x_max):
        raise ValueError("pair needs identical windows")
    w = zeta.n_sites
    occ_z, occ_p = zeta.occupancies(), pi.occupancies()
    xi0 = x0 - zeta.x_min
    if not -1 <= xi0 <= w - 1:
        raise ValueError("initial location outside window")
    left_ok = np.all(occ_z[: xi0 + 1] <= occ_p[: xi0 + 1])
    right_ok = np.all(occ_z[xi0 + 1 :] >= occ_p[xi0 + 1 :])
    if not (left_ok and right_ok):
        raise ValueError("initial pair violates the two-sided ordering")

    alpha = _alpha_row(env, zeta)
    counts = np.stack([zeta.counts.copy(), pi.counts.copy()])
    infmask = np.stack([zeta.source_mask, pi.source_mask])
    g_arr = g.g_array(G_TABLE_CAP)
    cap = max_events if max_events >= 0 else int(w * until * 1.6 + 10000)
    log_t = np.zeros(cap)
    log_x = np.zeros(cap, np.int64)
    states = events.states_for(zeta.x_min, zeta.x_max)
    n_ev, status, xi, n_log, max_changes = K._interface_engine(
        states,
        float(until),
        events.p,
        counts,
        infmask,
        np.stack([alpha, alpha]),
        g_arr,
        zeta.left_boundary in (SINK, SOURCE),
        zeta.right_boundary in (SINK, SOURCE),
        xi0,
        log_t,
        log_x,
        full_scan,
        max_events,
    )
    if status == K.STATUS_ORDER_VIOLATION:
        raise InvariantViolation("interface ordering violated (engine bug)")
    if status == K.STATUS_LOG_FULL:
        raise InvariantViolation("interface jump log overflow")
    return InterfaceTracker(
        x_final=int(xi) + zeta.x_min,
        jump_times=log_t[:n_log].copy(),
        jump_positions=log_x[:n_log] + zeta.x_min,
        n_events=n_ev,
        max_sign_changes=int(max_changes),
        zeta_final=replace(zeta, counts=counts[0].copy(), source_mask=zeta.source_mask.copy()),
        pi_final=replace(pi, counts=counts[1].copy(), source_mask=pi.source_mask.copy()),
    )


def measure_current(traj: Trajectory, path: PathSpec) -> CurrentLedger:
    """Signed rightward current across the path, by exact replay.

    For a fixed-site path with finite right mass the ledger is checked
    against the mass-difference identity (escaped mass included).
    """
    _, extras = _run_engine(
        [traj.initial], [traj.alpha], traj.g, traj.stream, traj.until, paths=[path]
    )
    jump = extras["gamma_jump"][0, 0]
    pathp = extras["gamma_path"][0, 0]
    ledger = CurrentLedger(
        path=path, count=int(round(jump + pathp)), jump_part=int(round(jump)),
        path_part=int(round(pathp)),
    )
    if path.kind == "fixed":
        m0 = traj.initial.right_mass(path.x0)
        if math.isfinite(m0):
            mt = traj.final.right_mass(path.x0) + traj.escaped[1]
            if int(round(mt - m0)) != ledger.count:
                raise InvariantViolation(
                    "current ledger disagrees with the mass-difference identity"
                )
    return ledger


def block_averaged_rate(traj: Trajectory, x: int, L: int, t: float) -> float:
    """Time-averaged, block-averaged jump intensity over [x, x+L-1]."""
    if t > traj.until:
        raise ValueError("block average beyond evolved horizon")
    _, extras = _run_engine(
        [traj.initial], [traj.alpha], traj.g, traj.stream, t, blocks=[(x, x + L - 1)]
    )
    return float(extras["block_integral"][0, 0]) / (t * L)


def make_source_process(env, g, x_t: int, fill=None, u_field=None):
    """Source half-line configuration; everything right of x_t starts empty.

    fill=None is the pure source: infinite occupancies on [x_min, x_t].
    fill=Lambda is the truncated-equilibrium variant: occupancies drawn by
    inversion from the product measure at intensity Lambda on (x_min, x_t],
    with the left window edge pinned infinite at modified rate Lambda so
    that the feed into the sampled stretch is exactly stationary (constant
    traffic solution).  Sharing the u-field with an equilibrium sample makes
    the two agree at every site up to x_t.

    Returns (configuration, alpha row to simulate with).
    """
    n = env.x_max - env.x_min + 1
    i_t = x_t - env.x_min
    if not 0 <= i_t < n:
        raise ValueError("source location outside window")
    mask = np.zeros(n, np.bool_)
    counts = np.zeros(n, np.int64)
    alpha = env.alpha.copy()
    if fill is None:
        mask[: i_t + 1] = True
    else:
        lam = float(fill)
        if lam > env.c:
            raise SupercriticalError("fill intensity above the floor c")
        if lam == 0.0:
            pass  # empty configuration; nothing feeds it
        else:
            mask[0] = True
            alpha[0] = lam
            if u_field is None:
                raise ValueError("an explicit u-field is required for the fill")
            u = np.asarray(u_field, dtype=float)
            for j in range(1, i_t + 1):
                kappa = lam / env.alpha[j]
                counts[j] = site_law(g, float(kappa)).sample(u[j])
    cfg = Configuration(
        x_min=env.x_min,
        x_max=env.x_max,
        counts=counts,
        source_mask=mask,
        left_boundary=SOURCE if mask[0] else CLOSED,
        right_boundary=SINK,
    )
    return cfg, alpha


def make_equilibrium_process(env, g, lam: float, u_field):
    """Window process whose law is exactly invariant: edge sites are pinned
    infinite with modified rate lam, so the constant intensity solves the
    balance equations and the product measure is preserved.

    Returns (configuration, alpha row to simulate with).
    """
    lam = float(lam)
    if not 0.0 <= lam <= env.c:
        raise SupercriticalError("equilibrium intensity must lie in [0, c]")
    if lam == 0.0:
        # the empty closed window is trivially stationary
        return empty_configuration((env.x_min, env.x_max)), env.alpha.copy()
    n = env.x_max - env.x_min + 1
    mask = np.zeros(n, np.bool_)
    mask[0] = True
    mask[-1] = True
    cfg = Configuration(
        x_min=env.x_min,
        x_max=env.x_max,
        counts=np.zeros(n, np.int64),
        source_mask=mask,
        left_boundary=SOURCE,
        right_boundary=SOURCE,
    )
    alpha = env.alpha.copy()
    alpha[0] = lam
    alpha[-1] = lam
    u = np.asarray(u_field, dtype=float)
    for j in range(1, cfg.n_sites - 1):
        cfg.counts[j] = site_law(g, float(lam / env.alpha[j])).sample(u[j])
    return cfg, alpha
