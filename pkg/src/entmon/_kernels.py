"""Compiled inner loops for large estimator banks.

Each bank slot runs an exact-in-distribution lazy version of min-rank
sampling.  With current admission threshold ``thr`` (the rank an item must
beat to change the slot), the number of items until the next admitted
item is Geometric(thr) and the admitted rank is uniform on (0, thr), so
only admitted items are simulated.  Ranks come from a counter-based
SplitMix64 generator keyed per slot, which makes results independent of
how the slots are batched.

Tail counters use the (1+eps) ladder of CountEachSimple.  Their traffic
and estimates are computed in closed form from per-site occurrence counts:
a site holding c matching items has sent ``nrep[c]`` reports and the
coordinator holds ``lastrep[c]`` for it.

Stream index arrays (built by ``ams.StreamIndex``), all 1-based in time:
    el[j]        element of item j (el[0] unused)
    occ[j]       position of item j in the element-major order
    epos[g]      item index at element-major position g
    estart[e]    first element-major position of element e
    ck[b, e]     occurrences of e among items before b << shift
    scum[g, s]   items at site s among element-major positions < g
    pscum[t, s]  items at site s among items 1..t
"""
import numpy as np
from numba import njit

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

FN_SHANNON = 0
FN_TSALLIS = 1


@njit(inline="always")
def _sm64(s):
    s = s + _GOLD
    z = s
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return s, z


@njit(inline="always")
def _unif(s):
    s, z = _sm64(s)
    return s, (np.float64(z >> np.uint64(11)) + 0.5) * _INV53


@njit(inline="always")
def _slot_state(key, slot):
    s = np.uint64(key) ^ (np.uint64(slot) * np.uint64(0xD1B54A32D192ED03) + np.uint64(1))
    s, _ = _sm64(s)
    return s


@njit(inline="always")
def _gap(s, thr, m):
    """Items until the next one with rank below ``thr`` (at least 1)."""
    if thr >= 1.0:
        return s, 1
    s, g = _unif(s)
    step = np.log(g) / np.log1p(-thr)
    if step >= m:
        return s, m + 1
    return s, 1 + np.int64(step)


@njit(inline="always")
def xval(fn, q, r, m):
    if fn == 0:
        if r <= 0.0:
            return 0.0
        out = r * np.log2(m / r)
        if r > 1.0:
            out -= (r - 1.0) * np.log2(m / (r - 1.0))
        return out
    return 1.0 - m ** (1.0 - q) * (r**q - (r - 1.0) ** q)


@njit(inline="always")
def _last_before(epos, estart, ck, shift, e, g0, t):
    """Largest element-major position g >= g0 of element e with epos[g] <= t.

    ``ck[b, e]`` counts occurrences of e before item b << shift, which
    narrows the search to one checkpoint block.
    """
    b = t >> shift
    lo = estart[e] + ck[b, e] - 1
    if lo < g0:
        lo = g0
    hi = estart[e] + ck[b + 1, e] - 1
    while lo < hi:
        mid = (lo + hi + 1) >> 1
        if epos[mid] <= t:
            lo = mid
        else:
            hi = mid - 1
    return lo


@njit(inline="always")
def _tracker(epos, estart, ck, shift, scum, nrep, lastrep, e, g0, t0, t):
    """(R_hat, reports sent) for a tracker of e born at g0, started at t0.

    Counts cover items of e from the birth item through item t.  The
    tracker was started at time t0 >= birth: sites holding items from
    before t0 sent one catch-up report each.
    """
    k = scum.shape[1]
    gl = _last_before(epos, estart, ck, shift, e, g0, t)
    if t0 <= epos[g0]:
        g1 = g0
    elif t0 >= t:
        g1 = gl
    else:
        g1 = _last_before(epos, estart, ck, shift, e, g0, t0)
    rh = 0
    msgs = 0
    for s in range(k):
        base = scum[g0, s]
        c = scum[gl + 1, s] - base
        rh += lastrep[c]
        c0 = scum[g1 + 1, s] - base
        msgs += nrep[c]
        if c0 > 0:
            msgs += 1 - nrep[c0]
    return rh, msgs


@njit(inline="always")
def _reports(scum, nrep, g0, gl):
    """Reports sent by a tracker whose items span element-major [g0, gl]."""
    msgs = 0
    for s in range(scum.shape[1]):
        msgs += nrep[scum[gl + 1, s] - scum[g0, s]]
    return msgs


_CAP = 1 << 15


@njit(inline="always")
def _push(buf, nbuf, e, g0, t, b):
    buf[nbuf, 0] = e
    buf[nbuf, 1] = g0
    buf[nbuf, 2] = t
    buf[nbuf, 3] = b
    return nbuf + 1


@njit
def _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins):
    """Settle buffered tracker closures (element, birth g0, end item, bin).

    Closures are independent, so batching them lets their memory reads
    overlap instead of stalling the sampling loop.
    """
    for i in range(nbuf):
        e = buf[i, 0]
        g0 = buf[i, 1]
        t = buf[i, 2]
        if el[t] == e:
            gl = occ[t]
        else:
            gl = _last_before(epos, estart, ck, shift, e, g0, t)
        closed_bins[buf[i, 3]] += _reports(scum, nrep, g0, gl)
    return 0


@njit(cache=True, fastmath=True)
def chain_bank(el, occ, epos, estart, ck, shift, scum, nrep, lastrep, m, L, fn, q,
               probes, mprobe, excl, key, slot0, nslots,
               sum0, sumx, restarts, cand_bins, tail_probe, counters):
    """Element-distinct min-rank chains of length L, one per slot.

    A chain holds the L elements whose smallest item rank is smallest,
    in rank order, each with the birth position of that item and a tail
    counter.  Entry 0 is the plain min-rank sample; the first entry whose
    element is not excluded is the min-rank sample of the stream with the
    excluded elements removed.

    At probe p, ``sum0[p]`` accumulates X of entry 0 and ``sumx[p]`` X of
    the first entry not in ``excl[p]`` (0 when none), with f evaluated at
    stream length ``mprobe[p]``.  ``restarts[slot]``
    records (entry-0 replacements, all tracker starts).  ``cand_bins``
    counts chain updates by the first probe at or after them;
    ``tail_probe[p]`` gets the tail reports sent up to probe p by trackers
    still alive then, and ``counters[0]`` the total of all tail reports.
    """
    P = probes.shape[0]
    nex = excl.shape[1]
    E = np.zeros(L, np.int64)
    R = np.zeros(L, np.float64)
    G = np.zeros(L, np.int64)
    closed_bins = np.zeros(P + 1, np.int64)
    buf = np.empty((_CAP, 4), np.int64)
    nbuf = 0
    for slot in range(nslots):
        s = _slot_state(key, slot0 + slot)
        n_ent = 0
        pos = 0
        pp = 0
        r0 = 0
        rall = 0
        while True:
            if nbuf > _CAP - 8:
                nbuf = _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
            thr = R[L - 1] if n_ent == L else 1.0
            s, gap = _gap(s, thr, m)
            nxt = pos + gap
            while pp < P and probes[pp] < nxt:
                _chain_probe(epos, estart, ck, shift, scum, nrep, lastrep, fn, q, probes[pp], mprobe[pp], excl, nex,
                             pp, E, R, G, n_ent, sum0, sumx, tail_probe)
                pp += 1
            if nxt > m:
                break
            s, u = _unif(s)
            u *= thr
            pos = nxt
            e = el[nxt]
            p = -1
            for i in range(n_ent):
                if E[i] == e:
                    p = i
                    break
            if p >= 0:
                if u >= R[p]:
                    continue
                nbuf = _push(buf, nbuf, e, G[p], nxt, pp)
                for i in range(p, n_ent - 1):
                    E[i] = E[i + 1]
                    R[i] = R[i + 1]
                    G[i] = G[i + 1]
                n_ent -= 1
            elif n_ent == L:
                nbuf = _push(buf, nbuf, E[L - 1], G[L - 1], nxt, pp)
                n_ent -= 1
            ins = n_ent
            while ins > 0 and R[ins - 1] > u:
                E[ins] = E[ins - 1]
                R[ins] = R[ins - 1]
                G[ins] = G[ins - 1]
                ins -= 1
            E[ins] = e
            R[ins] = u
            G[ins] = occ[nxt]
            n_ent += 1
            cand_bins[pp] += 1
            rall += 1
            if ins == 0:
                r0 += 1
        if nbuf > _CAP - 8:
            nbuf = _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
        for i in range(n_ent):
            nbuf = _push(buf, nbuf, E[i], G[i], m, P)
        restarts[slot, 0] = r0
        restarts[slot, 1] = rall
    _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
    total = 0
    for b in range(P + 1):
        total += closed_bins[b]
    counters[0] += total
    # reports of trackers closed before each probe
    acc = 0
    for b in range(P):
        acc += closed_bins[b]
        tail_probe[b] += acc


@njit(inline="always")
def _chain_probe(epos, estart, ck, shift, scum, nrep, lastrep, fn, q, t, mt, excl, nex, pp, E, R, G, n_ent,
                 sum0, sumx, tail_probe):
    found = False
    live = 0
    for i in range(n_ent):
        rh, mg = _tracker(epos, estart, ck, shift, scum, nrep, lastrep, E[i], G[i], epos[G[i]], t)
        live += mg
        x = -1.0
        if i == 0:
            x = xval(fn, q, np.float64(rh), mt)
            sum0[pp] += x
        if not found:
            hit = False
            for z in range(nex):
                if excl[pp, z] == E[i]:
                    hit = True
                    break
            if not hit:
                found = True
                if i != 0:
                    x = xval(fn, q, np.float64(rh), mt)
                sumx[pp] += x
    tail_probe[pp] += live


@njit(cache=True, fastmath=True)
def pair_bank(el, occ, epos, estart, ck, shift, scum, nrep, lastrep, m, fn, q,
              probes, mprobe, excl, key, slot0, nslots,
              sum0, sumx, restarts, cand_bins, tail_probe, counters):
    """``chain_bank`` with L = 2 kept in scalars; identical draws and output."""
    P = probes.shape[0]
    nex = excl.shape[1]
    closed_bins = np.zeros(P + 1, np.int64)
    E = np.zeros(2, np.int64)
    R = np.zeros(2, np.float64)
    G = np.zeros(2, np.int64)
    buf = np.empty((_CAP, 4), np.int64)
    nbuf = 0
    for slot in range(nslots):
        s = _slot_state(key, slot0 + slot)
        n_ent = 0
        e0 = 0
        e1 = 0
        u0 = 0.0
        u1 = 0.0
        g0 = 0
        g1 = 0
        pos = 0
        pp = 0
        r0 = 0
        rall = 0
        thr = 1.0
        lq = 0.0
        while True:
            if nbuf > _CAP - 8:
                nbuf = _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
            if thr >= 1.0:
                nxt = pos + 1
            else:
                s, g = _unif(s)
                step = np.log(g) / lq
                nxt = m + 1 if step >= m else pos + 1 + np.int64(step)
            if pp < P and probes[pp] < nxt:
                E[0] = e0
                E[1] = e1
                R[0] = u0
                R[1] = u1
                G[0] = g0
                G[1] = g1
                while pp < P and probes[pp] < nxt:
                    _chain_probe(epos, estart, ck, shift, scum, nrep, lastrep, fn, q, probes[pp], mprobe[pp], excl, nex,
                                 pp, E, R, G, n_ent, sum0, sumx, tail_probe)
                    pp += 1
            if nxt > m:
                break
            s, u = _unif(s)
            u *= thr
            pos = nxt
            e = el[nxt]
            if n_ent > 0 and e == e0:
                if u >= u0:
                    continue
                nbuf = _push(buf, nbuf, e, g0, nxt, pp)
                u0 = u
                g0 = occ[nxt]
                r0 += 1
                rall += 1
            elif n_ent == 2 and e == e1:
                if u >= u1:
                    continue
                nbuf = _push(buf, nbuf, e, g1, nxt, pp)
                if u < u0:
                    e1 = e0
                    u1 = u0
                    g1 = g0
                    e0 = e
                    u0 = u
                    g0 = occ[nxt]
                    r0 += 1
                else:
                    u1 = u
                    g1 = occ[nxt]
                rall += 1
            else:
                if n_ent == 2:
                    nbuf = _push(buf, nbuf, e1, g1, nxt, pp)
                else:
                    n_ent += 1
                if n_ent == 1:
                    e0 = e
                    u0 = u
                    g0 = occ[nxt]
                    r0 += 1
                elif u < u0:
                    e1 = e0
                    u1 = u0
                    g1 = g0
                    e0 = e
                    u0 = u
                    g0 = occ[nxt]
                    r0 += 1
                else:
                    e1 = e
                    u1 = u
                    g1 = occ[nxt]
                rall += 1
            cand_bins[pp] += 1
            if n_ent == 2:
                thr = u1
                lq = np.log1p(-thr)
        if nbuf > _CAP - 8:
            nbuf = _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
        if n_ent >= 1:
            nbuf = _push(buf, nbuf, e0, g0, m, P)
        if n_ent == 2:
            nbuf = _push(buf, nbuf, e1, g1, m, P)
        restarts[slot, 0] = r0
        restarts[slot, 1] = rall
    _flush(buf, nbuf, el, occ, epos, estart, ck, shift, scum, nrep, closed_bins)
    total = 0
    for b in range(P + 1):
        total += closed_bins[b]
    counters[0] += total
    acc = 0
    for b in range(P):
        acc += closed_bins[b]
        tail_probe[b] += acc


@njit(cache=True, fastmath=True)
def window_bank(el, occ, epos, estart, ck, shift, scum, pscum, nrep, lastrep, m, w, fn, q,
                probes, key, slot0, nslots,
                sumx, restarts, cand_bins, pull_bins, none_bins, tail_probe, counters):
    """Min-rank sample over the last ``w`` items, one per slot.

    The sample at position p expires when item p + w arrives.  An item
    admitted before or at that time replaces it directly.  Otherwise the
    coordinator pulls each site's window minimum: all items in (p, p + w]
    are known to rank above r, so the new sample is uniform over that
    range with rank r + (1 - r) * Beta(1, w).  ``pull_bins`` counts pulls
    and ``none_bins`` the sites that had no item in the window to offer.
    """
    P = probes.shape[0]
    k = scum.shape[1]
    closed_bins = np.zeros(P + 1, np.int64)
    for slot in range(nslots):
        s = _slot_state(key, slot0 + slot)
        have = False
        e = 0
        p = 0
        r = 1.0
        g0 = 0
        t0 = 0
        pos = 0
        pp = 0
        nrs = 0
        while True:
            thr = r if have else 1.0
            s, gap = _gap(s, thr, m)
            nxt = pos + gap
            expiry = p + w if have else m + 1
            event = nxt if nxt <= expiry else expiry
            while pp < P and probes[pp] < event:
                t = probes[pp]
                rh, mg = _tracker(epos, estart, ck, shift, scum, nrep, lastrep, e, g0, t0, t)
                mt = np.float64(t if t < w else w)
                sumx[pp] += xval(fn, q, np.float64(rh), mt)
                tail_probe[pp] += mg
                pp += 1
            if event > m:
                break
            if have:
                rh, mg = _tracker(epos, estart, ck, shift, scum, nrep, lastrep, e, g0, t0, event)
                closed_bins[pp] += mg
            if nxt <= expiry:
                s, u = _unif(s)
                p = nxt
                r = u * thr
                cand_bins[pp] += 1
            else:
                s, u1 = _unif(s)
                s, u2 = _unif(s)
                off = np.int64(u1 * w)
                if off >= w:
                    off = w - 1
                lo = p
                p = lo + 1 + off
                r = r + (1.0 - r) * (1.0 - u2 ** (1.0 / w))
                pull_bins[pp] += 1
                for si in range(k):
                    if pscum[expiry, si] - pscum[lo, si] == 0:
                        none_bins[pp] += 1
            have = True
            e = el[p]
            g0 = occ[p]
            t0 = event
            pos = event
            nrs += 1
        if have:
            rh, mg = _tracker(epos, estart, ck, shift, scum, nrep, lastrep, e, g0, t0, m)
            closed_bins[P] += mg
        restarts[slot] = nrs
    total = 0
    for b in range(P + 1):
        total += closed_bins[b]
    counters[0] += total
    acc = 0
    for b in range(P):
        acc += closed_bins[b]
        tail_probe[b] += acc
