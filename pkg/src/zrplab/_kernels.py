"""Event-driven engine kernels.

Per-site event streams are pure functions of (seed, site): a counter-based
64-bit mixer yields, per site, the i.i.d. sequence
(interarrival, rate mark, direction draw) repeated event by event.  The
engine merges sites by a binary heap keyed on next event time (site index
breaks float ties), so a trajectory is a deterministic function of
(seed, initial state, horizon) and any two processes driven by the same
seed share their clocks exactly, which is what makes coupling arguments
testable event by event.

All kernels operate on window-relative indices.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
U_M1 = np.uint64(0xBF58476D1CE4E5B9)
U_M2 = np.uint64(0x94D049BB133111EB)
U_K1 = np.uint64(0xD1B54A32D192ED03)
U_K2 = np.uint64(0x8CB92BA72F3D8DD7)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
INV53 = 2.0**-53

STATUS_OK = 0
STATUS_ORDER_VIOLATION = 1
STATUS_INF_PICKUP = 2
STATUS_LOG_FULL = 3


def site_states(seed: int, x_min: int, x_max: int) -> np.ndarray:
    """Initial mixer states, one per site, independent of the window."""
    sites = np.arange(x_min, x_max + 1, dtype=np.int64)
    zig = np.where(sites >= 0, 2 * sites, -2 * sites - 1).astype(np.uint64)
    with np.errstate(over="ignore"):
        s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * U_K1
        s = s ^ (zig * U_K2)
        for _ in range(2):
            s = s + U_GOLDEN
            s = (s ^ (s >> S30)) * U_M1
            s = (s ^ (s >> S27)) * U_M2
            s = s ^ (s >> S31)
    return s.astype(np.uint64)


@njit(cache=True, inline="always")
def _next_unit(states, x):
    """Advance site x's stream and return a uniform in (0,1)."""
    s = states[x] + U_GOLDEN
    states[x] = s
    z = (s ^ (s >> S30)) * U_M1
    z = (z ^ (z >> S27)) * U_M2
    z = z ^ (z >> S31)
    return (float(z >> S11) + 0.5) * INV53


@njit(cache=True, inline="always")
def _g_at(count, is_inf, g_arr):
    if is_inf:
        return g_arr[len(g_arr) - 1]
    n = count if count < len(g_arr) - 1 else len(g_arr) - 1
    return g_arr[n]


@njit(cache=True, inline="always")
def _gt(c1, i1, c2, i2):
    """occupancy1 > occupancy2 with infinite occupancies ordered on top."""
    if i1 and i2:
        return False
    if i1:
        return True
    if i2:
        return False
    return c1 > c2


@njit(cache=True, inline="always")
def _heap_less(t1, s1, t2, s2):
    return t1 < t2 or (t1 == t2 and s1 < s2)


@njit(cache=True)
def _heapify(ht, hs):
    n = len(ht)
    for i in range(n // 2 - 1, -1, -1):
        _sift_down(ht, hs, i, n)


@njit(cache=True)
def _sift_down(ht, hs, i, n):
    t, s = ht[i], hs[i]
    while True:
        child = 2 * i + 1
        if child >= n:
            break
        if child + 1 < n and _heap_less(ht[child + 1], hs[child + 1], ht[child], hs[child]):
            child += 1
        if _heap_less(ht[child], hs[child], t, s):
            ht[i], hs[i] = ht[child], hs[child]
            i = child
        else:
            break
    ht[i], hs[i] = t, s


@njit(cache=True)
def _engine(
    states,
    horizon,
    p,
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
):
    """Evolve k coupled configurations through the merged event stream.

    counts/infmask/alpha have shape (k, w).  Optional observables: snapshots
    (counts dumped at given times), signed currents across piecewise paths
    (jump and path-motion parts kept separate), and time integrals of the
    block-summed jump intensity.  Ordering of consecutive configurations is
    asserted at touched sites after every event when requested.
    """
    k, w = counts.shape
    heap_t = np.empty(w)
    heap_s = np.empty(w, np.int64)
    for x in range(w):
        heap_t[x] = -np.log(_next_unit(states, x))
        heap_s[x] = x
    _heapify(heap_t, heap_s)

    npaths = len(path_off) - 1
    cur_pos = path_start.copy()
    ptr = np.zeros(npaths, np.int64)
    nblocks = len(block_lo)
    block_sum = np.zeros((k, nblocks))
    for b in range(nblocks):
        for i in range(k):
            acc = 0.0
            for x in range(block_lo[b], block_hi[b] + 1):
                acc += alpha[i, x] * _g_at(counts[i, x], infmask[i, x], g_arr)
            block_sum[i, b] = acc

    prev_t = 0.0
    si = 0
    n_ev = 0
    status = STATUS_OK
    n_snaps = len(snap_times)

    while True:
        t = heap_t[0]
        x = heap_s[0]
        if t > horizon or (max_events >= 0 and n_ev >= max_events):
            break

        # snapshots and path motion strictly before this event
        while si < n_snaps and snap_times[si] < t:
            for i in range(k):
                for y in range(w):
                    snap_out[si, i, y] = counts[i, y]
            si += 1
        for j in range(npaths):
            while ptr[j] < path_off[j + 1] - path_off[j] and path_jt[path_off[j] + ptr[j]] < t:
                new = path_jx[path_off[j] + ptr[j]]
                old = cur_pos[j]
                pick = new if new > old else old
                for i in range(k):
                    if 0 <= pick < w:
                        if infmask[i, pick]:
                            status = STATUS_INF_PICKUP
                        amount = float(counts[i, pick])
                    else:
                        amount = 0.0
                    gamma_path[i, j] -= (new - old) * amount
                cur_pos[j] = new
                ptr[j] += 1
        if status != STATUS_OK:
            break

        if nblocks > 0:
            dt = t - prev_t
            for b in range(nblocks):
                for i in range(k):
                    block_int[i, b] += block_sum[i, b] * dt

        u = _next_unit(states, x)
        zd = _next_unit(states, x)
        z = 1 if zd < p else -1
        tgt = x + z

        for i in range(k):
            inf_x = infmask[i, x]
            cnt = counts[i, x]
            gv = _g_at(cnt, inf_x, g_arr)
            if u <= alpha[i, x] * gv:
                if 0 <= tgt < w:
                    g_old_src = gv
                    if not inf_x:
                        counts[i, x] = cnt - 1
                    g_new_src = _g_at(counts[i, x], inf_x, g_arr)
                    inf_t = infmask[i, tgt]
                    g_old_tgt = _g_at(counts[i, tgt], inf_t, g_arr)
                    if not inf_t:
                        counts[i, tgt] += 1
                    g_new_tgt = _g_at(counts[i, tgt], inf_t, g_arr)
                    for b in range(nblocks):
                        if block_lo[b] <= x <= block_hi[b]:
                            block_sum[i, b] += alpha[i, x] * (g_new_src - g_old_src)
                        if block_lo[b] <= tgt <= block_hi[b]:
                            block_sum[i, b] += alpha[i, tgt] * (g_new_tgt - g_old_tgt)
                    for j in range(npaths):
                        if z > 0:
                            if x == cur_pos[j]:
                                gamma_jump[i, j] += 1.0
                        else:
                            if tgt == cur_pos[j]:
                                gamma_jump[i, j] -= 1.0
                else:
                    sink = right_sink if tgt >= w else left_sink
                    if sink:
                        if not inf_x:
                            counts[i, x] = cnt - 1
                            escaped[i, 1 if tgt >= w else 0] += 1.0
                        g_new_src = _g_at(counts[i, x], inf_x, g_arr)
                        for b in range(nblocks):
                            if block_lo[b] <= x <= block_hi[b]:
                                block_sum[i, b] += alpha[i, x] * (g_new_src - gv)
                        for j in range(npaths):
                            if z > 0 and x == cur_pos[j]:
                                gamma_jump[i, j] += 1.0
                    # closed edge: potential jump suppressed

        if assert_order and k >= 2:
            for i in range(k - 1):
                bad = _gt(counts[i, x], infmask[i, x], counts[i + 1, x], infmask[i + 1, x])
                if not bad and 0 <= tgt < w:
                    bad = _gt(
                        counts[i, tgt],
                        infmask[i, tgt],
                        counts[i + 1, tgt],
                        infmask[i + 1, tgt],
                    )
                if bad:
                    status = STATUS_ORDER_VIOLATION
            if status != STATUS_OK:
                break

        prev_t = t
        n_ev += 1
        heap_t[0] = t - np.log(_next_unit(states, x))
        heap_s[0] = x
        _sift_down(heap_t, heap_s, 0, w)

    # flush to the horizon
    if status == STATUS_OK:
        while si < n_snaps and snap_times[si] <= horizon:
            for i in range(k):
                for y in range(w):
                    snap_out[si, i, y] = counts[i, y]
            si += 1
        for j in range(npaths):
            while (
                ptr[j] < path_off[j + 1] - path_off[j]
                and path_jt[path_off[j] + ptr[j]] <= horizon
            ):
                new = path_jx[path_off[j] + ptr[j]]
                old = cur_pos[j]
                pick = new if new > old else old
                for i in range(k):
                    if 0 <= pick < w:
                        if infmask[i, pick]:
                            status = STATUS_INF_PICKUP
                        amount = float(counts[i, pick])
                    else:
                        amount = 0.0
                    gamma_path[i, j] -= (new - old) * amount
                cur_pos[j] = new
                ptr[j] += 1
        if nblocks > 0:
            dt = horizon - prev_t
            for b in range(nblocks):
                for i in range(k):
                    block_int[i, b] += block_sum[i, b] * dt

    return n_ev, status


@njit(cache=True)
def _count_sign_changes(counts, infmask, w):
    """Sign changes of (zeta - pi) across the window, zeros skipped."""
    changes = 0
    last = 0
    for y in range(w):
        if _gt(counts[0, y], infmask[0, y], counts[1, y], infmask[1, y]):
            s = 1
        elif _gt(counts[1, y], infmask[1, y], counts[0, y], infmask[0, y]):
            s = -1
        else:
            s = 0
        if s != 0:
            if last != 0 and s != last:
                changes += 1
            last = s
    return changes


@njit(cache=True)
def _interface_engine(
    states,
    horizon,
    p,
    counts,
    infmask,
    alpha,
    g_arr,
    left_sink,
    right_sink,
    x_if0,
    log_t,
    log_x,
    full_scan,
    max_events,
):
    """Coupled pair with the nearest-neighbour separating location.

    counts[0] is the lower-left process (below the interface), counts[1]
    the upper-left one.  After every potential event the location moves by
    at most one site so that counts[0] <= counts[1] at and left of it and
    counts[0] >= counts[1] strictly right of it; the two-sided ordering is
    asserted at the touched sites (and over the whole window in full-scan
    mode, along with the single-sign-change property).
    """
    w = counts.shape[1]
    heap_t = np.empty(w)
    heap_s = np.empty(w, np.int64)
    for x in range(w):
        heap_t[x] = -np.log(_next_unit(states, x))
        heap_s[x] = x
    _heapify(heap_t, heap_s)

    xi = x_if0
    n_ev = 0
    n_log = 0
    status = STATUS_OK
    max_changes = 0

    while True:
        t = heap_t[0]
        x = heap_s[0]
        if t > horizon or (max_events >= 0 and n_ev >= max_events):
            break
        u = _next_unit(states, x)
        zd = _next_unit(states, x)
        z = 1 if zd < p else -1
        tgt = x + z

        moved0 = False
        moved1 = False
        for i in range(2):
            inf_x = infmask[i, x]
            cnt = counts[i, x]
            gv = _g_at(cnt, inf_x, g_arr)
            if u <= alpha[i, x] * gv:
                if 0 <= tgt < w:
                    if not inf_x:
                        counts[i, x] = cnt - 1
                    if not infmask[i, tgt]:
                        counts[i, tgt] += 1
                    if i == 0:
                        moved0 = True
                    else:
                        moved1 = True
                else:
                    sink = right_sink if tgt >= w else left_sink
                    if sink:
                        if not inf_x:
                            counts[i, x] = cnt - 1
                        if i == 0:
                            moved0 = True
                        else:
                            moved1 = True

        if moved1 and not moved0:
            if x == xi and xi + 1 < w:
                if _gt(counts[1, xi + 1], infmask[1, xi + 1], counts[0, xi + 1], infmask[0, xi + 1]):
                    xi += 1
                    if n_log < len(log_t):
                        log_t[n_log] = t
                        log_x[n_log] = xi
                        n_log += 1
                    else:
                        status = STATUS_LOG_FULL
                        break
        elif moved0 and not moved1:
            if x == xi + 1 and xi >= 0:
                if _gt(counts[0, xi], infmask[0, xi], counts[1, xi], infmask[1, xi]):
                    xi -= 1
                    if n_log < len(log_t):
                        log_t[n_log] = t
                        log_x[n_log] = xi
                        n_log += 1
                    else:
                        status = STATUS_LOG_FULL
                        break

        # two-sided ordering at the touched sites
        for rep in range(2):
            y = x if rep == 0 else tgt
            if 0 <= y < w:
                if y <= xi:
                    if _gt(counts[0, y], infmask[0, y], counts[1, y], infmask[1, y]):
                        status = STATUS_ORDER_VIOLATION
                else:
                    if _gt(counts[1, y], infmask[1, y], counts[0, y], infmask[0, y]):
                        status = STATUS_ORDER_VIOLATION
        if status != STATUS_OK:
            break

        if full_scan:
            changes = _count_sign_changes(counts, infmask, w)
            if changes > max_changes:
                max_changes = changes
            for y in range(w):
                if y <= xi:
                    if _gt(counts[0, y], infmask[0, y], counts[1, y], infmask[1, y]):
                        status = STATUS_ORDER_VIOLATION
                else:
                    if _gt(counts[1, y], infmask[1, y], counts[0, y], infmask[0, y]):
                        status = STATUS_ORDER_VIOLATION
            if status != STATUS_OK:
                break

        n_ev += 1
        heap_t[0] = t - np.log(_next_unit(states, x))
        heap_s[0] = x
        _sift_down(heap_t, heap_s, 0, w)

    return n_ev, status, xi, n_log, max_changes


@njit(cache=True)
def _materialize(states, horizon, p):
    """Flatten the per-site streams into arrays (two passes, same draws)."""
    w = len(states)
    n_per = np.zeros(w, np.int64)
    probe = states.copy()
    for x in range(w):
        t = 0.0
        while True:
            t += -np.log(_next_unit(probe, x))
            if t > horizon:
                break
            _next_unit(probe, x)
            _next_unit(probe, x)
            n_per[x] += 1
    total = 0
    for x in range(w):
        total += n_per[x]
    ts = np.empty(total)
    xs = np.empty(total, np.int64)
    us = np.empty(total)
    zs = np.empty(total, np.int8)
    pos = 0
    for x in range(w):
        t = 0.0
        while True:
            t += -np.log(_next_unit(states, x))
            if t > horizon:
                break
            u = _next_unit(states, x)
            zd = _next_unit(states, x)
            ts[pos] = t
            xs[pos] = x
            us[pos] = u
            zs[pos] = 1 if zd < p else -1
            pos += 1
    return ts, xs, us, zs


@njit(cache=True)
def _hitting_walks(state, start, in_free, alpha_vals, p_rev_left, n_walks, step_cap):
    """Monte Carlo of the boundary value hit by the reversed walk.

    in_free marks window-relative free sites; the walk starts inside and
    stops on the first site outside the free set, paying alpha there.
    Returns (sum, sum of squares, walks completed) for mean and SE.
    """
    w = len(in_free)
    total = 0.0
    total2 = 0.0
    done = 0
    st = np.empty(1, np.uint64)
    st[0] = state
    for _ in range(n_walks):
        x = start
        steps = 0
        while 0 <= x < w and in_free[x] and steps < step_cap:
            if _next_unit(st, 0) < p_rev_left:
                x -= 1
            else:
                x += 1
            steps += 1
        if 0 <= x < w and not in_free[x]:
            total += alpha_vals[x]
            total2 += alpha_vals[x] * alpha_vals[x]
            done += 1
    return total, total2, done


@njit(cache=True)
def _exit_kind_walks(state, start, is_slow, in_free, p_rev_left, n_walks, step_cap):
    """Fraction of reversed walks whose first exit from the free set is slow."""
    w = len(in_free)
    slow_exits = 0
    done = 0
    st = np.empty(1, np.uint64)
    st[0] = state
    for _ in range(n_walks):
        x = start
        steps = 0
        while 0 <= x < w and in_free[x] and steps < step_cap:
            if _next_unit(st, 0) < p_rev_left:
                x -= 1
            else:
                x += 1
            steps += 1
        if 0 <= x < w and not in_free[x]:
            done += 1
            if is_slow[x]:
                slow_exits += 1
    return slow_exits, done
