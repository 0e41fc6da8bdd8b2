"""Jitted event loops for the two particle schemes.

Particle rates depend on the particle only through its state, so the
engines keep per-state buckets of particle indices: the exponential race
picks a state with weight ``count * rate`` and then a uniform member of its
bucket.  Every event costs O(S), independent of N.
"""
import math

import numba
import numpy as np

MUTATION, SELECTION, KILL = 0, 1, 2
REFRESH_EVERY = 10_000


@numba.njit(cache=True, inline="always")
def _pick_row(cum, lo, hi, u):
    hi -= 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True)
def _pick_weighted(w, total, u):
    target = u * total
    acc = 0.0
    last = -1
    for x in range(len(w)):
        if w[x] > 0.0:
            acc += w[x]
            last = x
            if target < acc:
                return x
    return last


@numba.njit(cache=True)
def _grow_f(a, n):
    if n < len(a):
        return a
    b = np.empty(2 * len(a), a.dtype)
    b[:len(a)] = a
    return b


@numba.njit(cache=True)
def _grow_i(a, n):
    if n < len(a):
        return a
    b = np.empty(2 * len(a), a.dtype)
    b[:len(a)] = a
    return b


@numba.njit(cache=True)
def _buckets(states, size):
    n = len(states)
    cnt = np.zeros(size, np.int64)
    bucket = np.empty((size, n), np.int64)
    pos = np.empty(n, np.int64)
    for i in range(n):
        x = states[i]
        bucket[x, cnt[x]] = i
        pos[i] = cnt[x]
        cnt[x] += 1
    return cnt, bucket, pos


@numba.njit(cache=True, inline="always")
def _relocate(i, b, states, cnt, bucket, pos):
    a = states[i]
    p = pos[i]
    last = bucket[a, cnt[a] - 1]
    bucket[a, p] = last
    pos[last] = p
    cnt[a] -= 1
    bucket[b, cnt[b]] = i
    pos[i] = cnt[b]
    cnt[b] += 1
    states[i] = b


@numba.njit(cache=True)
def _shifted_sum(cnt, v, vmin):
    s = 0.0
    for x in range(len(cnt)):
        s += cnt[x] * (v[x] - vmin)
    return s


@numba.njit(cache=True, nogil=True)
def meanfield_kernel(rng, states, clock, obs, t_indptr, t_indices, t_cum, t_esc, v, w,
                     check, record, out_int, out_occ, out_cnt, out_nev):
    size = len(t_esc)
    n = len(states)
    cnt, bucket, pos = _buckets(states, size)
    horizon = obs[-1]
    # m(V) kept as vmin + shifted/N so a constant potential is reproduced exactly
    vmin = v.min()
    shifted = _shifted_sum(cnt, v, vmin)
    mv = vmin + shifted / n
    acc, t_mark = 0.0, clock
    occ = np.zeros(size)
    occ_mark = np.full(size, clock)
    sel_row = np.zeros(size)
    for x in range(size):
        for y in range(size):
            sel_row[x] += w[x, y] * cnt[y]
    wm = np.empty(size)
    ws = np.empty(size)
    wy = np.empty(size)

    cap = 1024 if record else 1
    r_t = np.empty(cap)
    r_kind = np.empty(cap, np.int64)
    r_actor = np.empty(cap, np.int64)
    r_partner = np.empty(cap, np.int64)
    r_pre = np.empty(cap, np.int64)
    r_post = np.empty(cap, np.int64)
    nrec = 0

    t = clock
    nev = 0
    ck = 0
    while True:
        mut_tot = 0.0
        sel_tot = 0.0
        for x in range(size):
            wm[x] = cnt[x] * t_esc[x]
            ws[x] = cnt[x] * sel_row[x]
            mut_tot += wm[x]
            sel_tot += ws[x]
        total = mut_tot + sel_tot / n
        t_next = t + rng.exponential(1.0) / total if total > 0.0 else math.inf
        while ck < len(obs) and obs[ck] <= t_next:
            tau = obs[ck]
            out_int[ck] = acc + mv * (tau - t_mark)
            for x in range(size):
                out_occ[ck, x] = occ[x] + cnt[x] * (tau - occ_mark[x])
                out_cnt[ck, x] = cnt[x]
            out_nev[ck] = nev
            ck += 1
        if t_next > horizon:
            break
        t = t_next
        if rng.random() * total < mut_tot:
            kind = MUTATION
            x = _pick_weighted(wm, mut_tot, rng.random())
            i = bucket[x, rng.integers(0, cnt[x])]
            e = _pick_row(t_cum, t_indptr[x], t_indptr[x + 1], rng.random())
            y = t_indices[e]
            partner = -1
        else:
            kind = SELECTION
            x = _pick_weighted(ws, sel_tot, rng.random())
            i = bucket[x, rng.integers(0, cnt[x])]
            wsum = 0.0
            for z in range(size):
                wy[z] = w[x, z] * cnt[z]
                wsum += wy[z]
            y = _pick_weighted(wy, wsum, rng.random())
            partner = bucket[y, rng.integers(0, cnt[y])]
        nev += 1
        if record:
            r_t = _grow_f(r_t, nrec)
            r_kind = _grow_i(r_kind, nrec)
            r_actor = _grow_i(r_actor, nrec)
            r_partner = _grow_i(r_partner, nrec)
            r_pre = _grow_i(r_pre, nrec)
            r_post = _grow_i(r_post, nrec)
            r_t[nrec] = t
            r_kind[nrec] = kind
            r_actor[nrec] = i
            r_partner[nrec] = partner
            r_pre[nrec] = x
            r_post[nrec] = y
            nrec += 1
        if y != x:
            occ[x] += cnt[x] * (t - occ_mark[x])
            occ_mark[x] = t
            occ[y] += cnt[y] * (t - occ_mark[y])
            occ_mark[y] = t
            _relocate(i, y, states, cnt, bucket, pos)
            for z in range(size):
                sel_row[z] += w[z, y] - w[z, x]
            d = (v[y] - vmin) - (v[x] - vmin)
            if d != 0.0:
                acc += mv * (t - t_mark)
                t_mark = t
                shifted += d
                mv = vmin + shifted / n
        if nev % REFRESH_EVERY == 0:
            for z in range(size):
                s = 0.0
                for y2 in range(size):
                    s += w[z, y2] * cnt[y2]
                sel_row[z] = s
            fresh = _shifted_sum(cnt, v, vmin)
            if fresh != shifted:
                acc += mv * (t - t_mark)
                t_mark = t
                shifted = fresh
                mv = vmin + shifted / n
        if check:
            cached = 0.0
            for z in range(size):
                cached += cnt[z] * t_esc[z] + cnt[z] * sel_row[z] / n
            direct = 0.0
            for a in range(n):
                direct += t_esc[states[a]]
                s = 0.0
                for b in range(n):
                    s += w[states[a], states[b]]
                direct += s / n
            if abs(cached - direct) > 1e-9 * max(1.0, abs(direct)):
                raise AssertionError("cached total rate drifted from direct recomputation")
    return (r_t[:nrec], r_kind[:nrec], r_actor[:nrec], r_partner[:nrec], r_pre[:nrec], r_post[:nrec])


@numba.njit(cache=True, nogil=True)
def cloning_kernel(rng, states, clock, obs, t_indptr, t_indices, t_cum, t_esc, v,
                   floor_m, frac_m, kill, max_changed, log_factor0, check, record,
                   out_int, out_occ, out_cnt, out_nev, out_logf):
    size = len(t_esc)
    n = len(states)
    cnt, bucket, pos = _buckets(states, size)
    perm = np.arange(n)
    horizon = obs[-1]
    vmin = v.min()
    shifted = _shifted_sum(cnt, v, vmin)
    mv = vmin + shifted / n
    acc, t_mark = 0.0, clock
    occ = np.zeros(size)
    occ_mark = np.full(size, clock)
    logf = log_factor0
    log_kill = math.log1p(-1.0 / n) if n > 1 else -math.inf
    wm = np.empty(size)
    wk = np.empty(size)

    cap = 1024 if record else 1
    r_t = np.empty(cap)
    r_kind = np.empty(cap, np.int64)
    r_actor = np.empty(cap, np.int64)
    r_pre = np.empty(cap, np.int64)
    r_post = np.empty(cap, np.int64)
    r_size = np.empty(cap, np.int64)
    r_logf = np.empty(cap)
    r_off = np.zeros(cap + 1, np.int64)
    r_aff = np.empty(cap, np.int64)
    nrec = 0
    naff = 0

    t = clock
    nev = 0
    ck = 0
    while True:
        mut_tot = 0.0
        kill_tot = 0.0
        for x in range(size):
            wm[x] = cnt[x] * t_esc[x]
            wk[x] = cnt[x] * kill[x]
            mut_tot += wm[x]
            kill_tot += wk[x]
        total = mut_tot + kill_tot
        t_next = t + rng.exponential(1.0) / total if total > 0.0 else math.inf
        while ck < len(obs) and obs[ck] <= t_next:
            tau = obs[ck]
            out_int[ck] = acc + mv * (tau - t_mark)
            for x in range(size):
                out_occ[ck, x] = occ[x] + cnt[x] * (tau - occ_mark[x])
                out_cnt[ck, x] = cnt[x]
            out_nev[ck] = nev
            out_logf[ck] = logf
            ck += 1
        if t_next > horizon:
            break
        t = t_next
        if record:
            r_t = _grow_f(r_t, nrec)
            r_kind = _grow_i(r_kind, nrec)
            r_actor = _grow_i(r_actor, nrec)
            r_pre = _grow_i(r_pre, nrec)
            r_post = _grow_i(r_post, nrec)
            r_size = _grow_i(r_size, nrec)
            r_logf = _grow_f(r_logf, nrec)
            r_off = _grow_i(r_off, nrec + 1)
        old_shifted = shifted
        if rng.random() * total < mut_tot:
            x = _pick_weighted(wm, mut_tot, rng.random())
            i = bucket[x, rng.integers(0, cnt[x])]
            m = floor_m[x]
            if frac_m[x] > 0.0 and rng.random() < frac_m[x]:
                m += 1
            # partial Fisher-Yates: perm[:m] is a uniform m-subset of all indices
            for r in range(m):
                j = r + rng.integers(0, n - r)
                tmp = perm[r]
                perm[r] = perm[j]
                perm[j] = tmp
            changed = 0
            for r in range(m):
                j = perm[r]
                if record:
                    r_aff = _grow_i(r_aff, naff)
                    r_aff[naff] = j
                    naff += 1
                if j != i and states[j] != x:
                    z = states[j]
                    occ[z] += cnt[z] * (t - occ_mark[z])
                    occ_mark[z] = t
                    occ[x] += cnt[x] * (t - occ_mark[x])
                    occ_mark[x] = t
                    _relocate(j, x, states, cnt, bucket, pos)
                    shifted += v[x] - v[z]
                    changed += 1
            e = _pick_row(t_cum, t_indptr[x], t_indptr[x + 1], rng.random())
            y = t_indices[e]
            occ[x] += cnt[x] * (t - occ_mark[x])
            occ_mark[x] = t
            occ[y] += cnt[y] * (t - occ_mark[y])
            occ_mark[y] = t
            _relocate(i, y, states, cnt, bucket, pos)
            shifted += v[y] - v[x]
            changed += 1
            if changed > max_changed:
                raise AssertionError("event changed more particles than the clone-size bound")
            if m > 0:
                logf += math.log1p(m / n)
            kind = MUTATION
            pre, post, csize = x, y, m
        else:
            x = _pick_weighted(wk, kill_tot, rng.random())
            i = bucket[x, rng.integers(0, cnt[x])]
            j = rng.integers(0, n)
            y = states[j]
            if record:
                r_aff = _grow_i(r_aff, naff)
                r_aff[naff] = j
                naff += 1
            if y != x:
                occ[x] += cnt[x] * (t - occ_mark[x])
                occ_mark[x] = t
                occ[y] += cnt[y] * (t - occ_mark[y])
                occ_mark[y] = t
                _relocate(i, y, states, cnt, bucket, pos)
                shifted += v[y] - v[x]
            logf += log_kill
            kind = KILL
            pre, post, csize = x, y, -1
        nev += 1
        if nev % REFRESH_EVERY == 0:
            shifted = _shifted_sum(cnt, v, vmin)
        if shifted != old_shifted:
            acc += mv * (t - t_mark)
            t_mark = t
            mv = vmin + shifted / n
        if record:
            r_t[nrec] = t
            r_kind[nrec] = kind
            r_actor[nrec] = i
            r_pre[nrec] = pre
            r_post[nrec] = post
            r_size[nrec] = csize
            r_logf[nrec] = logf
            r_off[nrec + 1] = naff
            nrec += 1
        if check:
            direct_m = 0.0
            direct_k = 0.0
            for a in range(n):
                direct_m += t_esc[states[a]]
                direct_k += kill[states[a]]
            cached = 0.0
            for z in range(size):
                cached += cnt[z] * t_esc[z] + cnt[z] * kill[z]
            if abs(cached - direct_m - direct_k) > 1e-9 * max(1.0, cached):
                raise AssertionError("cached total rate drifted from direct recomputation")
    return (r_t[:nrec], r_kind[:nrec], r_actor[:nrec], r_pre[:nrec], r_post[:nrec],
            r_size[:nrec], r_logf[:nrec], r_off[:nrec + 1], r_aff[:naff], logf)
