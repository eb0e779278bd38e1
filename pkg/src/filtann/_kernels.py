"""numba kernels for graph construction and search.

Graph layout (shared by every kernel):

* ``links0[n, M0]`` / ``deg0[n]``: base-layer adjacency.
* ``up_links[slots, M]`` / ``up_deg[slots]``: upper-layer adjacency; node ``i``
  at layer ``l >= 1`` uses row ``up_off[i] + l - 1`` (``up_off[i] = -1`` for
  nodes living only on layer 0).

Heaps store ``(key, id, flag)`` triples in three parallel arrays and order
by ``(key, id)`` so equal distances resolve deterministically.  ``flag``
carries the TD bit of the entry.

Visited sets use an epoch array: node ``v`` is visited iff ``visited[v] == tag``.

``stats`` layout: ``[distance computations, hops, TD hops]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ST_DIST, ST_HOPS, ST_TD_HOPS = 0, 1, 2
N_STATS = 3

M_PLAIN, M_FAVOR, M_RSF = 0, 1, 2


@njit(inline="always")
def _less(d1, i1, d2, i2):
    return d1 < d2 or (d1 == d2 and i1 < i2)


@njit(cache=True)
def dist(vectors, a, q):
    s = 0.0
    for j in range(q.shape[0]):
        t = np.float64(vectors[a, j]) - np.float64(q[j])
        s += t * t
    return math.sqrt(s)


# -- heaps -------------------------------------------------------------------


@njit(cache=True)
def min_push(keys, ids, flags, size, d, i, fl):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(d, i, keys[parent], ids[parent]):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            flags[pos] = flags[parent]
            pos = parent
        else:
            break
    keys[pos] = d
    ids[pos] = i
    flags[pos] = fl
    return size + 1


@njit(cache=True)
def min_pop(keys, ids, flags, size):
    size -= 1
    if size == 0:
        return 0
    d = keys[size]
    i = ids[size]
    fl = flags[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _less(keys[child + 1], ids[child + 1], keys[child], ids[child]):
            child += 1
        if _less(keys[child], ids[child], d, i):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            flags[pos] = flags[child]
            pos = child
        else:
            break
    keys[pos] = d
    ids[pos] = i
    flags[pos] = fl
    return size


@njit(cache=True)
def max_push(keys, ids, flags, size, d, i, fl):
    pos = size
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(keys[parent], ids[parent], d, i):
            keys[pos] = keys[parent]
            ids[pos] = ids[parent]
            flags[pos] = flags[parent]
            pos = parent
        else:
            break
    keys[pos] = d
    ids[pos] = i
    flags[pos] = fl
    return size + 1


@njit(cache=True)
def max_pop(keys, ids, flags, size):
    size -= 1
    if size == 0:
        return 0
    d = keys[size]
    i = ids[size]
    fl = flags[size]
    pos = 0
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _less(keys[child], ids[child], keys[child + 1], ids[child + 1]):
            child += 1
        if _less(d, i, keys[child], ids[child]):
            keys[pos] = keys[child]
            ids[pos] = ids[child]
            flags[pos] = flags[child]
            pos = child
        else:
            break
    keys[pos] = d
    ids[pos] = i
    flags[pos] = fl
    return size


@njit(cache=True)
def sort_pairs(keys, ids, n):
    """In-place insertion sort of the first ``n`` pairs by (key, id)."""
    for a in range(1, n):
        d = keys[a]
        i = ids[a]
        b = a - 1
        while b >= 0 and _less(d, i, keys[b], ids[b]):
            keys[b + 1] = keys[b]
            ids[b + 1] = ids[b]
            b -= 1
        keys[b + 1] = d
        ids[b + 1] = i


# -- filter programs -----------------------------------------------------------


@njit(cache=True)
def eval_filter(node, ops, fargs, setvals, bools, ints, floats, stack):
    sp = 0
    for t in range(ops.shape[0]):
        code = ops[t, 0]
        a = ops[t, 1]
        if code == 0:
            stack[sp] = True
            sp += 1
        elif code == 1:
            stack[sp] = (bools[node, a] != 0) == (ops[t, 2] != 0)
            sp += 1
        elif code == 2:
            stack[sp] = np.int64(ints[node, a]) == ops[t, 2]
            sp += 1
        elif code == 3:
            v = np.int64(ints[node, a])
            hit = False
            for s in range(ops[t, 2], ops[t, 2] + ops[t, 3]):
                if setvals[s] == v:
                    hit = True
                    break
            stack[sp] = hit
            sp += 1
        elif code == 4:
            x = np.float64(floats[node, a])
            stack[sp] = x >= fargs[t, 0] and x <= fargs[t, 1]
            sp += 1
        elif code == 5:
            r = True
            for s in range(sp - a, sp):
                r = r and stack[s]
            sp -= a
            stack[sp] = r
            sp += 1
        elif code == 6:
            r = False
            for s in range(sp - a, sp):
                r = r or stack[s]
            sp -= a
            stack[sp] = r
            sp += 1
        else:
            stack[sp - 1] = not stack[sp - 1]
    return stack[0]


@njit(cache=True)
def filter_mask_at(idx, ops, fargs, setvals, bools, ints, floats):
    stack = np.empty(ops.shape[0], dtype=np.bool_)
    out = np.empty(idx.shape[0], dtype=np.bool_)
    for t in range(idx.shape[0]):
        out[t] = eval_filter(idx[t], ops, fargs, setvals, bools, ints, floats, stack)
    return out


# -- searches ---------------------------------------------------------------


@njit(inline="always")
def _row(node, layer, up_off):
    return up_off[node] + layer - 1


@njit(cache=True)
def greedy_search(q, vectors, links0, deg0, up_links, up_deg, up_off, ep, ef, layer,
                  visited, tag, ck, ci, cf, rk, ri, rf, stats):
    """Beam search on one layer with plain distances.  Returns |R|; R is the max-heap (rk, ri)."""
    visited[ep] = tag
    d = dist(vectors, ep, q)
    stats[ST_DIST] += 1
    cs = min_push(ck, ci, cf, 0, d, ep, 0)
    rs = max_push(rk, ri, rf, 0, d, ep, 0)
    while cs > 0:
        da = ck[0]
        a = ci[0]
        cs = min_pop(ck, ci, cf, cs)
        if da > rk[0]:
            break
        stats[ST_HOPS] += 1
        if layer == 0:
            nb = links0[a]
            cnt = deg0[a]
        else:
            r = _row(a, layer, up_off)
            nb = up_links[r]
            cnt = up_deg[r]
        for t in range(cnt):
            v = nb[t]
            if visited[v] == tag:
                continue
            visited[v] = tag
            dv = dist(vectors, v, q)
            stats[ST_DIST] += 1
            if dv < rk[0] or rs < ef:
                cs = min_push(ck, ci, cf, cs, dv, v, 0)
                rs = max_push(rk, ri, rf, rs, dv, v, 0)
                if rs > ef:
                    rs = max_pop(rk, ri, rf, rs)
    return rs


@njit(cache=True)
def opti_greedy_search(q, vectors, links0, deg0, ep, ef, excl, gamma, td_fraction, term_opt,
                       ops, fargs, setvals, bools, ints, floats, fstack,
                       visited, tag, ck, ci, cf, rk, ri, rf, stats):
    """Base-layer search ordered by adjusted distance (raw + ``excl`` for NTD).

    Returns ``(|R|, td_count)``; R holds adjusted keys with TD flags.
    """
    visited[ep] = tag
    td = eval_filter(ep, ops, fargs, setvals, bools, ints, floats, fstack)
    d = dist(vectors, ep, q)
    stats[ST_DIST] += 1
    if not td:
        d += excl
    fl = 1 if td else 0
    cs = min_push(ck, ci, cf, 0, d, ep, fl)
    rs = max_push(rk, ri, rf, 0, d, ep, fl)
    n_td = fl
    while cs > 0:
        da = ck[0]
        a = ci[0]
        fa = cf[0]
        cs = min_pop(ck, ci, cf, cs)
        if term_opt:
            if da > gamma * rk[0] and n_td > td_fraction * rs:
                break
        elif da > rk[0]:
            break
        stats[ST_HOPS] += 1
        stats[ST_TD_HOPS] += fa
        nb = links0[a]
        for t in range(deg0[a]):
            v = nb[t]
            if visited[v] == tag:
                continue
            visited[v] = tag
            tdv = eval_filter(v, ops, fargs, setvals, bools, ints, floats, fstack)
            dv = dist(vectors, v, q)
            stats[ST_DIST] += 1
            if not tdv:
                dv += excl
            if dv < rk[0] or rs < ef:
                fv = 1 if tdv else 0
                cs = min_push(ck, ci, cf, cs, dv, v, fv)
                rs = max_push(rk, ri, rf, rs, dv, v, fv)
                n_td += fv
                if rs > ef:
                    n_td -= rf[0]
                    rs = max_pop(rk, ri, rf, rs)
    return rs, n_td


@njit(cache=True)
def rsf_search(q, vectors, links0, deg0, ep, ef,
               ops, fargs, setvals, bools, ints, floats, fstack,
               visited, tag, ck, ci, cf, rk, ri, rf, stats):
    """Base-layer search on raw distances where only TD may enter R.  Returns |R|."""
    visited[ep] = tag
    td = eval_filter(ep, ops, fargs, setvals, bools, ints, floats, fstack)
    d = dist(vectors, ep, q)
    stats[ST_DIST] += 1
    fl = 1 if td else 0
    cs = min_push(ck, ci, cf, 0, d, ep, fl)
    rs = 0
    if td:
        rs = max_push(rk, ri, rf, 0, d, ep, 1)
    while cs > 0:
        da = ck[0]
        a = ci[0]
        fa = cf[0]
        cs = min_pop(ck, ci, cf, cs)
        if rs == ef and da > rk[0]:
            break
        stats[ST_HOPS] += 1
        stats[ST_TD_HOPS] += fa
        nb = links0[a]
        for t in range(deg0[a]):
            v = nb[t]
            if visited[v] == tag:
                continue
            visited[v] = tag
            tdv = eval_filter(v, ops, fargs, setvals, bools, ints, floats, fstack)
            dv = dist(vectors, v, q)
            stats[ST_DIST] += 1
            if rs < ef or dv < rk[0]:
                fv = 1 if tdv else 0
                cs = min_push(ck, ci, cf, cs, dv, v, fv)
                if tdv:
                    rs = max_push(rk, ri, rf, rs, dv, v, 1)
                    if rs > ef:
                        rs = max_pop(rk, ri, rf, rs)
    return rs


@njit(cache=True)
def descend(q, vectors, links0, deg0, up_links, up_deg, up_off, entry, top, visited, tag,
            ck, ci, cf, rk, ri, rf, stats):
    """Greedy ef=1 descent from the top layer to layer 1.  Returns (ep, tag).

    Only distance computations are added to ``stats``; hop counters describe
    the base-layer path.
    """
    ep = entry
    upper = np.zeros(N_STATS, np.int64)
    for layer in range(top, 0, -1):
        tag += 1
        greedy_search(q, vectors, links0, deg0, up_links, up_deg, up_off, ep, 1, layer,
                      visited, tag, ck, ci, cf, rk, ri, rf, upper)
        ep = ri[0]
    stats[ST_DIST] += upper[ST_DIST]
    return ep, tag


@njit(cache=True)
def batch_search(method, queries, vectors, links0, deg0, up_links, up_deg, up_off, entry, top,
                 ef, k, excl, gamma, td_fraction, term_opt,
                 ops, fargs, setvals, bools, ints, floats,
                 out_ids, out_dist, out_stats, out_ntd):
    """Run one search method over every query.

    ``excl`` holds the per-query exclusion distance (favor only).  Hits are
    the TD entries of the final R ranked by raw distance then id; unused
    slots of ``out_ids`` are -1.  ``out_ntd[qi]`` is the TD count in R.
    """
    n = vectors.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    tag = 0
    ck = np.empty(n + 1, np.float64)
    ci = np.empty(n + 1, np.int64)
    cf = np.empty(n + 1, np.int64)
    rk = np.empty(ef + 2, np.float64)
    ri = np.empty(ef + 2, np.int64)
    rf = np.empty(ef + 2, np.int64)
    hk = np.empty(ef + 2, np.float64)
    hi = np.empty(ef + 2, np.int64)
    fstack = np.empty(ops.shape[0], np.bool_)
    for qi in range(queries.shape[0]):
        q = queries[qi]
        st = out_stats[qi]
        if tag > 2000000000:
            visited[:] = 0
            tag = 0
        ep, tag = descend(q, vectors, links0, deg0, up_links, up_deg, up_off, entry, top,
                          visited, tag, ck, ci, cf, rk, ri, rf, st)
        tag += 1
        if method == M_FAVOR:
            rs, _ = opti_greedy_search(q, vectors, links0, deg0, ep, ef, excl[qi], gamma,
                                       td_fraction, term_opt, ops, fargs, setvals, bools, ints,
                                       floats, fstack, visited, tag, ck, ci, cf, rk, ri, rf, st)
        elif method == M_RSF:
            rs = rsf_search(q, vectors, links0, deg0, ep, ef, ops, fargs, setvals, bools, ints,
                            floats, fstack, visited, tag, ck, ci, cf, rk, ri, rf, st)
            for t in range(rs):
                rf[t] = 1
        else:
            rs = greedy_search(q, vectors, links0, deg0, up_links, up_deg, up_off, ep, ef, 0,
                               visited, tag, ck, ci, cf, rk, ri, rf, st)
            for t in range(rs):
                rf[t] = 1 if eval_filter(ri[t], ops, fargs, setvals, bools, ints, floats, fstack) else 0
        m = 0
        for t in range(rs):
            if rf[t] == 1:
                hi[m] = ri[t]
                # TD adjusted distance equals the raw distance
                hk[m] = rk[t]
                m += 1
        out_ntd[qi] = m
        sort_pairs(hk, hi, m)
        for t in range(k):
            if t < m:
                out_ids[qi, t] = hi[t]
                out_dist[qi, t] = hk[t]
            else:
                out_ids[qi, t] = -1
                out_dist[qi, t] = np.inf


@njit(cache=True)
def brute_force(queries, vectors, k, ops, fargs, setvals, bools, ints, floats,
                out_ids, out_dist, out_stats):
    """Pre-filter every record, then exact top-k over the TD records."""
    n = vectors.shape[0]
    fstack = np.empty(ops.shape[0], np.bool_)
    rk = np.empty(k + 2, np.float64)
    ri = np.empty(k + 2, np.int64)
    rf = np.empty(k + 2, np.int64)
    for qi in range(queries.shape[0]):
        q = queries[qi]
        rs = 0
        for v in range(n):
            if not eval_filter(v, ops, fargs, setvals, bools, ints, floats, fstack):
                continue
            d = dist(vectors, v, q)
            out_stats[qi, ST_DIST] += 1
            if rs < k:
                rs = max_push(rk, ri, rf, rs, d, v, 1)
            elif _less(d, v, rk[0], ri[0]):
                rs = max_pop(rk, ri, rf, rs)
                rs = max_push(rk, ri, rf, rs, d, v, 1)
        m = rs
        sort_pairs(rk, ri, m)
        for t in range(k):
            if t < m:
                out_ids[qi, t] = ri[t]
                out_dist[qi, t] = rk[t]
            else:
                out_ids[qi, t] = -1
                out_dist[qi, t] = np.inf


# -- construction --------------------------------------------------------------


@njit(cache=True)
def select_heuristic(vectors, base_d, cand, n, cap, out):
    """Keep a sorted candidate only if it is closer to the base than to every kept one."""
    kept = 0
    for t in range(n):
        c = cand[t]
        dc = base_d[t]
        good = True
        for r in range(kept):
            if dist(vectors, c, vectors[out[r]]) <= dc:
                good = False
                break
        if good:
            out[kept] = c
            kept += 1
            if kept >= cap:
                break
    return kept


@njit(cache=True)
def build_graph(vectors, levels, up_off, M, M0, efc, alpha, beta,
                links0, deg0, up_links, up_deg):
    """Insert every vector in id order.

    Returns ``(entry, top, delta_sum, delta_count)``; the Δd accumulators hold
    ``sum((d_beta - d_alpha) / (beta - alpha))`` over insertions whose
    base-layer candidate list reached ``beta`` entries.
    """
    n = vectors.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    tag = 0
    ck = np.empty(n + 1, np.float64)
    ci = np.empty(n + 1, np.int64)
    cf = np.empty(n + 1, np.int64)
    rk = np.empty(efc + 2, np.float64)
    ri = np.empty(efc + 2, np.int64)
    rf = np.empty(efc + 2, np.int64)
    wd = np.empty(efc + 2, np.float64)
    wi = np.empty(efc + 2, np.int64)
    sel = np.empty(M0 + 1, np.int64)
    pd = np.empty(M0 + 1, np.float64)
    pi = np.empty(M0 + 1, np.int64)
    pout = np.empty(M0 + 1, np.int64)
    stats = np.zeros(N_STATS, np.int64)
    entry = 0
    top = levels[0]
    delta_sum = 0.0
    delta_count = 0
    for i in range(1, n):
        q = vectors[i]
        lvl = levels[i]
        ep = entry
        for layer in range(top, lvl, -1):
            tag += 1
            greedy_search(q, vectors, links0, deg0, up_links, up_deg, up_off, ep, 1, layer,
                          visited, tag, ck, ci, cf, rk, ri, rf, stats)
            ep = ri[0]
        for layer in range(min(lvl, top), -1, -1):
            tag += 1
            rs = greedy_search(q, vectors, links0, deg0, up_links, up_deg, up_off, ep, efc, layer,
                               visited, tag, ck, ci, cf, rk, ri, rf, stats)
            w = rs
            for t in range(w - 1, -1, -1):
                wd[t] = rk[0]
                wi[t] = ri[0]
                rs = max_pop(rk, ri, rf, rs)
            if layer == 0 and w >= beta:
                delta_sum += (wd[beta - 1] - wd[alpha - 1]) / (beta - alpha)
                delta_count += 1
            ns = select_heuristic(vectors, wd, wi, w, M, sel)
            cap = M0 if layer == 0 else M
            if layer == 0:
                for t in range(ns):
                    links0[i, t] = sel[t]
                deg0[i] = ns
            else:
                r = up_off[i] + layer - 1
                for t in range(ns):
                    up_links[r, t] = sel[t]
                up_deg[r] = ns
            re = 0
            for t in range(ns):
                e = sel[t]
                if layer == 0:
                    lst = links0[e]
                    cnt = deg0[e]
                else:
                    re = up_off[e] + layer - 1
                    lst = up_links[re]
                    cnt = up_deg[re]
                if cnt < cap:
                    lst[cnt] = i
                    cnt += 1
                else:
                    base = vectors[e]
                    for u in range(cnt):
                        pi[u] = lst[u]
                        pd[u] = dist(vectors, lst[u], base)
                    pi[cnt] = i
                    pd[cnt] = dist(vectors, i, base)
                    sort_pairs(pd, pi, cnt + 1)
                    cnt = select_heuristic(vectors, pd, pi, cnt + 1, cap, pout)
                    for u in range(cnt):
                        lst[u] = pout[u]
                if layer == 0:
                    deg0[e] = cnt
                else:
                    up_deg[re] = cnt
            ep = wi[0]
        if lvl > top:
            entry = i
            top = lvl
    return entry, top, delta_sum, delta_count
