"""AMS sampling at the coordinator: samples, tail counters and estimator banks.

Two engines implement the same protocols:

* message level (:class:`ChainBank`, :class:`WindowBank`): every rank is a
  64-bit integer drawn at the receiving site, every update and counter
  report is a :class:`~entmon.netsim.Message`;
* bulk (:class:`FastChainBank`, :class:`FastWindowBank`): compiled lazy
  simulation of the same sampling process with closed-form CountEachSimple
  accounting, used for the certified bank sizes of the acceptance runs.

A "chain" of length L keeps the L elements with the smallest item ranks,
each with its tail counter.  L = 1 is the plain sampler, L = 2 keeps the
pair (S0, S1) with S1 the min-rank item among items other than S0, and
larger L serves estimators that remove a set of up to L - 1 elements.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .netsim import DOWN, UP, BitTable, CommLedger, Message, Protocol, RngStream
from .sketches import Link, RandomizedCounter, SimpleCounter, threshold_tables
from .stream import DomainError, FunctionSpec

RANK_SPACE = 1 << 64


class InfeasibleError(ValueError):
    """The requested accuracy cannot be certified for this function class."""


@dataclass(frozen=True)
class RankedSample:
    """A sampled item; ``element is None`` means no sample (rank +inf)."""

    element: int | None = None
    rank: tuple | None = None  # (64-bit rank, site, global index)
    birth_index: int = 0

    @property
    def rank_value(self) -> float:
        if self.rank is None:
            return math.inf
        return (self.rank[0] + 0.5) / RANK_SPACE


@dataclass(frozen=True)
class KappaParams:
    a: float
    b: float
    e_lower: float
    pi_sup: float
    kappa: int


def compute_kappa(eps: float, delta: float, spec: FunctionSpec) -> KappaParams:
    """Number of averaged copies for a (1+eps, delta) estimate on the class.

    kappa = ceil(eps^-2 ln(2/delta) * 3 (1 + a/E)^2 (a + b) / (a + E)),
    with X in [-a, b] and E a lower bound on the class mean of X.
    """
    if not 0 < eps or not 0 < delta < 1:
        raise ValueError("need eps > 0 and delta in (0, 1)")
    if spec.e_lower <= 0:
        raise InfeasibleError(f"{spec.name}: class mean of X is not bounded away from 0")
    pi = spec.pi_sup
    kappa = math.ceil(eps**-2 * math.log(2.0 / delta) * pi)
    return KappaParams(spec.a, spec.b, spec.e_lower, pi, kappa)


def eps_f(eps: float, spec: FunctionSpec) -> float:
    """Tail-counter precision eps / (3 lambda)."""
    return eps / (3.0 * spec.lambda_bound)


def _fn_code(spec: FunctionSpec) -> tuple[int, float]:
    if spec.name == "shannon_f":
        return K.FN_SHANNON, 0.0
    if spec.name == "tsallis_g":
        return K.FN_TSALLIS, float(spec.q)
    raise ValueError(f"no compiled form for {spec.name}")


def chain_update_bits(bits: BitTable, L: int) -> int:
    """Broadcast size of one chain update.

    L = 1: (element, rank).  L >= 2: insertion slot, vacated slot (or
    "tail dropped"), element and rank.
    """
    if L == 1:
        return bits.element + bits.rank
    return bits.selector(L) + bits.selector(L + 1) + bits.element + bits.rank


def candidate_bits(bits: BitTable) -> int:
    return bits.element + bits.rank


# ---------------------------------------------------------------------------
# message-level engine


class _Entry:
    __slots__ = ("element", "key", "birth", "counter")

    def __init__(self, element, key, birth, counter):
        self.element = element
        self.key = key
        self.birth = birth
        self.counter = counter


def _chain_change(chain: list, L: int, e: int, key) -> tuple[int, int] | None:
    """(insert position, vacated position) if (e, key) changes the chain.

    The vacated position is the index of e's old entry, L if the tail
    entry falls off, or -1 if the chain simply grows.
    """
    old = -1
    for i, ent in enumerate(chain):
        if ent[0] == e:
            old = i
            break
    if old >= 0:
        if key >= chain[old][1]:
            return None
        vac = old
    elif len(chain) < L:
        vac = -1
    elif key < chain[-1][1]:
        vac = L
    else:
        return None
    ins = 0
    for i, ent in enumerate(chain):
        if i == vac:
            continue
        if ent[1] < key:
            ins += 1
    return ins, vac


def _apply_change(chain: list, L: int, ins: int, vac: int, item) -> object | None:
    """Apply an update to a list-chain; returns the removed entry (if any)."""
    removed = None
    if vac == L:
        removed = chain.pop()
    elif vac >= 0:
        removed = chain.pop(vac)
    chain.insert(ins, item)
    return removed


class ChainBank(Protocol):
    """kappa independent chains with tail counters, message by message.

    counter: "simple" (CountEachSimple(eps_f)) or "counteach"
    (CountEach(eps_f, counter_delta)).
    """

    def __init__(self, tag: str, k: int, kappa: int, L: int, spec: FunctionSpec,
                 eps_tail: float, rng: RngStream, counter: str = "simple",
                 counter_delta: float = 0.05, exclude: Callable[[int], Sequence[int]] | None = None,
                 m_of: Callable[[int], float] | None = None):
        if counter not in ("simple", "counteach"):
            raise ValueError(f"unknown counter {counter!r}")
        self.tag = tag
        self.sample_tag = tag + ".sample"
        self.tail_tag = tag + ".tail"
        self.tags = (self.sample_tag, self.tail_tag)
        self.k = k
        self.kappa = kappa
        self.L = L
        self.spec = spec
        self.eps_tail = eps_tail
        self.counter_kind = counter
        self.counter_delta = counter_delta
        self.rng = rng
        self.exclude = exclude
        self.m_of = m_of
        self.site_rng = [None] + [rng.child(f"site{s}").generator for s in range(1, k + 1)]
        self.counter_rng = rng.child("counters").generator
        # coordinator chains of _Entry; site copies of (element, key)
        self.chains: list[list[_Entry]] = [[] for _ in range(kappa)]
        self.site_chains = [None] + [[[] for _ in range(kappa)] for _ in range(k)]
        # site-side admission thresholds (None: chain not full)
        self.site_thr = [None] + [[None] * kappa for _ in range(k)]
        self.watch: list = [None] + [dict() for _ in range(k)]  # site: element -> set(counter ids)
        self.counters: dict[int, object] = {}
        self._next_id = 0
        self.restarts = np.zeros((kappa, 2), dtype=np.int64)
        self.snapshots: dict[int, tuple[float, float]] = {}
        self.t = 0
        self.stale_discards = 0

    # counters
    def _new_counter(self):
        cid = self._next_id
        self._next_id += 1
        link = Link(
            lambda s, payload, bits: self.net.send_up(s, Message(self.tail_tag, bits, (cid, payload))),
            lambda s, payload, bits: self.net.send_down(s, Message(self.tail_tag, bits, (cid, payload))),
            lambda payload, bits: self.net.broadcast(Message(self.tail_tag, bits, (cid, payload))),
            self.net.bits,
        )
        if self.counter_kind == "simple":
            core = SimpleCounter(self.k, self.eps_tail, link)
        else:
            core = RandomizedCounter(self.k, self.eps_tail, self.counter_delta, link, self.counter_rng)
        self.counters[cid] = core
        return cid

    # site side
    def on_item(self, site: int, event) -> None:
        self.t = event.global_index
        e = event.element
        ids = self.watch[site].get(e)
        if ids:
            for cid in sorted(ids):
                self.counters[cid].site_add(site)
        raw = self.site_rng[site].bit_generator.random_raw(self.kappa)
        thr = self.site_thr[site]
        chains = self.site_chains[site]
        L = self.L
        for slot in range(self.kappa):
            t = thr[slot]
            r = int(raw[slot])
            if t is not None and r > t[0]:
                continue
            key = (r, site, event.global_index)
            if _chain_change(chains[slot], L, e, key) is None:
                continue
            self.net.send_up(site, Message(self.sample_tag, candidate_bits(self.net.bits),
                                           ("cand", slot, e, key)))

    def on_site_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.tail_tag:
            cid, payload = msg.payload
            core = self.counters.get(cid)
            if core is not None:
                core.site_receive(site, payload)
            return
        _, slot, ins, vac, e, key, cid, dropped = msg.payload
        chain = self.site_chains[site][slot]
        _apply_change(chain, self.L, ins, vac, (e, key))
        self.site_thr[site][slot] = chain[-1][1] if len(chain) == self.L else None
        watch = self.watch[site]
        if dropped is not None:
            de, dcid = dropped
            ids = watch.get(de)
            if ids is not None:
                ids.discard(dcid)
                if not ids:
                    del watch[de]
        watch.setdefault(e, set()).add(cid)
        if key[1] == site:
            self.counters[cid].site_add(site)

    # coordinator side
    def on_coordinator_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.tail_tag:
            cid, payload = msg.payload
            core = self.counters.get(cid)
            if core is not None:
                core.coordinator_receive(site, payload)
            return
        _, slot, e, key = msg.payload
        chain = self.chains[slot]
        view = [(ent.element, ent.key) for ent in chain]
        change = _chain_change(view, self.L, e, key)
        if change is None:
            self.stale_discards += 1
            return
        ins, vac = change
        cid = self._new_counter()
        removed = _apply_change(chain, self.L, ins, vac, _Entry(e, key, key[2], cid))
        dropped = None
        if removed is not None:
            dropped = (removed.element, removed.counter)
            self.counters.pop(removed.counter, None)
        if ins == 0:
            self.restarts[slot, 0] += 1
        self.restarts[slot, 1] += 1
        self.net.broadcast(Message(self.sample_tag, chain_update_bits(self.net.bits, self.L),
                                   ("set", slot, ins, vac, e, key, cid, dropped)))

    # queries
    def r_hat(self, entry: _Entry) -> float:
        return max(1.0, float(self.counters[entry.counter].estimate))

    def x_sums(self, t: float, excluded: Sequence[int] = ()) -> tuple[float, float]:
        """Sums of X over entry 0 and over the first non-excluded entry, f at length t."""
        s0 = 0.0
        sx = 0.0
        for chain in self.chains:
            if not chain:
                continue
            s0 += float(self.spec.x_value(self.r_hat(chain[0]), t))
            for ent in chain:
                if ent.element not in excluded:
                    sx += float(self.spec.x_value(self.r_hat(ent), t))
                    break
        return s0, sx

    def on_probe(self, index: int) -> None:
        excluded = tuple(self.exclude(index)) if self.exclude else ()
        m = self.m_of(index) if self.m_of else index
        self.snapshots[index] = self.x_sums(m, excluded)

    def estimate(self, index: int) -> float:
        return self.snapshots[index][0] / self.kappa

    def estimate_excluding(self, index: int) -> float:
        return self.snapshots[index][1] / self.kappa

    def samples(self, slot: int) -> list[RankedSample]:
        return [RankedSample(ent.element, ent.key, ent.birth) for ent in self.chains[slot]]


class WindowBank(Protocol):
    """kappa min-rank samplers over the most recent w items, message by message.

    Sites keep their window-alive items and the rank skyline of them (an
    item stays on the skyline while no later local item ranks lower), and
    forward an item whose rank beats their copy of the current sample.
    When the sample leaves the window the coordinator asks every site for
    its skyline head and broadcasts the smallest; sites then send one
    catch-up report of the new element's count inside the window.
    """

    def __init__(self, tag: str, k: int, kappa: int, w: int, spec: FunctionSpec,
                 eps_tail: float, rng: RngStream):
        self.tag = tag
        self.sample_tag = tag + ".sample"
        self.pull_tag = tag + ".pull"
        self.tail_tag = tag + ".tail"
        self.tags = (self.sample_tag, self.pull_tag, self.tail_tag)
        self.k = k
        self.kappa = kappa
        self.w = w
        self.spec = spec
        self.eps_tail = eps_tail
        self.site_rng = [None] + [rng.child(f"site{s}").generator for s in range(1, k + 1)]
        self.items = [None] + [[] for _ in range(k)]  # per site: (index, element, raw ranks)
        self.item_head = [0] * (k + 1)
        self.skyline = [None] + [[[] for _ in range(kappa)] for _ in range(k)]
        self.site_copy = [None] + [[None] * kappa for _ in range(k)]  # (element, key, birth)
        self.sample: list = [None] * kappa  # (element, key, birth, counter id)
        self.counters: dict[int, SimpleCounter] = {}
        self.watch = [None] + [dict() for _ in range(k)]
        self._next_id = 0
        self._pending: dict[int, list] = {}
        self.restarts = np.zeros(kappa, dtype=np.int64)
        self.pulls = 0
        self.snapshots: dict[int, float] = {}
        self.history: dict[int, list] = {}

    def _new_counter(self) -> int:
        cid = self._next_id
        self._next_id += 1
        link = Link(
            lambda s, payload, bits: self.net.send_up(s, Message(self.tail_tag, bits, (cid, payload))),
            None, None, self.net.bits,
        )
        self.counters[cid] = SimpleCounter(self.k, self.eps_tail, link)
        return cid

    def _expire_site(self, site: int, t: int) -> None:
        lo = t - self.w
        items = self.items[site]
        h = self.item_head[site]
        while h < len(items) and items[h][0] <= lo:
            h += 1
        self.item_head[site] = h
        if h > 4096 and h > len(items) // 2:
            del items[:h]
            self.item_head[site] = 0
        for sky in self.skyline[site]:
            while sky and sky[0][2] <= lo:
                sky.pop(0)

    def on_item(self, site: int, event) -> None:
        t = event.global_index
        self.t = t
        e = event.element
        for s in range(1, self.k + 1):
            self._expire_site(s, t)
        ids = self.watch[site].get(e)
        if ids:
            for cid in sorted(ids):
                self.counters[cid].site_add(site)
        raw = self.site_rng[site].bit_generator.random_raw(self.kappa)
        self.items[site].append((t, e))
        for slot in range(self.kappa):
            key = (int(raw[slot]), site, t)
            sky = self.skyline[site][slot]
            while sky and sky[-1][1] > key:
                sky.pop()
            sky.append((e, key, t))
            cur = self.site_copy[site][slot]
            if cur is None or key < cur[1]:
                self.net.send_up(site, Message(self.sample_tag, candidate_bits(self.net.bits),
                                               ("cand", slot, e, key)))

    def _install(self, slot: int, e: int, key, birth: int, t: int) -> None:
        old = self.sample[slot]
        cid = self._new_counter()
        self.sample[slot] = (e, key, birth, cid)
        self.restarts[slot] += 1
        self.net.broadcast(Message(self.sample_tag, candidate_bits(self.net.bits),
                                   ("set", slot, e, key, birth, cid, None if old is None else old[3])))
        if old is not None:
            self.counters.pop(old[3], None)

    def on_coordinator_message(self, site: int, msg: Message) -> None:
        tag = msg.protocol_tag
        if tag == self.tail_tag:
            cid, value = msg.payload
            core = self.counters.get(cid)
            if core is not None:
                core.coordinator_receive(site, value)
            return
        if tag == self.sample_tag:
            _, slot, e, key = msg.payload
            cur = self.sample[slot]
            if cur is not None and not key < cur[1]:
                return
            self._install(slot, e, key, key[2], key[2])
            return
        _, slot, offer = msg.payload
        got = self._pending[slot]
        got.append(offer)
        if len(got) == self.k:
            del self._pending[slot]
            offers = [o for o in got if o is not None]
            if offers:
                e, key, birth = min(offers, key=lambda o: o[1])
                self._install(slot, e, key, birth, self.t)
            else:
                old = self.sample[slot]
                self.sample[slot] = None
                if old is not None:
                    self.counters.pop(old[3], None)

    def on_site_message(self, site: int, msg: Message) -> None:
        tag = msg.protocol_tag
        if tag == self.pull_tag:
            slot = msg.payload[1]
            self.site_copy[site][slot] = None
            sky = self.skyline[site][slot]
            if sky:
                offer = sky[0]
                bits = self.net.bits.element + self.net.bits.rank + self.net.bits.index
            else:
                offer = None
                bits = self.net.bits.flag
            self.net.send_up(site, Message(self.pull_tag, bits, ("offer", slot, offer)))
            return
        _, slot, e, key, birth, cid, old = msg.payload
        self.site_copy[site][slot] = (e, key, birth)
        watch = self.watch[site]
        if old is not None:
            for ids in watch.values():
                ids.discard(old)
        watch.setdefault(e, set()).add(cid)
        core = self.counters[cid]
        if birth == self.t:
            if key[1] == site:
                core.site_add(site)
        else:
            items = self.items[site]
            c0 = sum(1 for idx, el in items[self.item_head[site]:] if el == e and idx >= birth)
            core.site_init(site, c0)

    def after_event(self, event) -> None:
        t = event.global_index
        self.t = t
        for slot in range(self.kappa):
            cur = self.sample[slot]
            if cur is not None and cur[2] <= t - self.w:
                self.pulls += 1
                self._pending[slot] = []
                for s in range(1, self.k + 1):
                    self.net.send_down(s, Message(self.pull_tag, self.net.bits.flag, ("pull", slot)))
                self.net.deliver_all()

    def r_hat(self, slot: int) -> float:
        cur = self.sample[slot]
        return max(1.0, float(self.counters[cur[3]].estimate))

    def on_probe(self, index: int) -> None:
        mt = min(index, self.w)
        total = 0.0
        for slot in range(self.kappa):
            if self.sample[slot] is not None:
                total += float(self.spec.x_value(self.r_hat(slot), mt))
        self.snapshots[index] = total
        self.history[index] = [None if s is None else s[2] for s in self.sample]

    def estimate(self, index: int) -> float:
        return self.snapshots[index] / self.kappa


# ---------------------------------------------------------------------------
# bulk engine


class StreamIndex:
    """Element-major occurrence tables consumed by the compiled banks."""

    def __init__(self, stream):
        m = len(stream)
        k = stream.k
        n = stream.n
        self.m = m
        self.k = k
        el = np.zeros(m + 1, dtype=np.int64)
        el[1:] = stream.elements
        site = stream.sites - 1
        order = np.argsort(stream.elements, kind="stable")
        self.el = el.astype(np.int32)
        self.epos = (order + 1).astype(np.int32)
        occ = np.zeros(m + 1, dtype=np.int32)
        occ[self.epos] = np.arange(m)
        self.occ = occ
        counts = np.bincount(stream.elements, minlength=n + 2)[: n + 2]
        self.estart = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)[: n + 2]
        scum = np.zeros((m + 1, k), dtype=np.int32)
        if m:
            onehot = np.zeros((m, k), dtype=np.int32)
            onehot[np.arange(m), site[order]] = 1
            np.cumsum(onehot, axis=0, out=scum[1:])
        self.scum = scum
        shift = 4
        while ((m >> shift) + 2) * (n + 2) > 8_000_000:
            shift += 1
        self.shift = shift
        nb = (m >> shift) + 2
        hist = np.zeros((nb, n + 2), dtype=np.int32)
        if m:
            np.add.at(hist, ((np.arange(1, m + 1) >> shift) + 1, stream.elements), 1)
        self.ck = np.cumsum(hist, axis=0, dtype=np.int32)
        self._site = site
        self._pscum = None

    @property
    def pscum(self) -> np.ndarray:
        if self._pscum is None:
            m, k = self.m, self.k
            p = np.zeros((m + 1, k), dtype=np.int32)
            if m:
                onehot = np.zeros((m, k), dtype=np.int32)
                onehot[np.arange(m), self._site] = 1
                np.cumsum(onehot, axis=0, out=p[1:])
            self._pscum = p
        return self._pscum


def stream_index(stream) -> StreamIndex:
    idx = getattr(stream, "_index", None)
    if idx is None:
        idx = StreamIndex(stream)
        stream._index = idx
    return idx


_CHUNK = 1 << 16


class FastChainBank:
    """Bulk version of :class:`ChainBank` for CountEachSimple tail counters.

    ``exclude(t)`` names the elements to skip when forming the second sum
    at probe t; it is read after the message-level pass, so it may depend
    on snapshots taken there.  ``m_of(t)`` is the stream length f is
    evaluated at for probe t (default t itself).
    """

    def __init__(self, tag: str, k: int, kappa: int, L: int, spec: FunctionSpec,
                 eps_tail: float, rng: RngStream, bits: BitTable,
                 exclude: Callable[[int], Sequence[int]] | None = None, max_excluded: int = 1,
                 m_of: Callable[[int], float] | None = None):
        self.tag = tag
        self.k = k
        self.kappa = kappa
        self.L = L
        self.spec = spec
        self.eps_tail = eps_tail
        self.key = np.uint64(rng.key64())
        self.bits = bits
        self.exclude = exclude
        self.max_excluded = max(1, max_excluded)
        self.m_of = m_of
        self.sum0 = None
        self.sumx = None
        self.restarts = None
        self.probe_index: dict[int, int] = {}

    def run_bulk(self, stream, probes: Sequence[int], ledger: CommLedger):
        idx = stream_index(stream)
        m = idx.m
        P = len(probes)
        probes_arr = np.asarray(probes, dtype=np.int64)
        excl = np.full((P, self.max_excluded), -1, dtype=np.int64)
        if self.exclude is not None:
            for i, t in enumerate(probes):
                z = list(self.exclude(int(t)))
                if len(z) > self.max_excluded:
                    raise ValueError("too many excluded elements")
                excl[i, : len(z)] = z
        if self.m_of is None:
            mprobe = probes_arr.astype(np.float64)
        else:
            mprobe = np.array([float(self.m_of(int(t))) for t in probes], dtype=np.float64)
        nrep, lastrep = threshold_tables(self.eps_tail, max(m, 1))
        fn, q = _fn_code(self.spec)
        sum0 = np.zeros(P)
        sumx = np.zeros(P)
        restarts = np.zeros((self.kappa, 2), dtype=np.int32)
        cand_bins = np.zeros(P + 1, dtype=np.int64)
        tail_probe = np.zeros(max(P, 1), dtype=np.int64)
        counters = np.zeros(1, dtype=np.int64)
        kernel = K.pair_bank if self.L == 2 else None
        for start in range(0, self.kappa, _CHUNK):
            n_slots = min(_CHUNK, self.kappa - start)
            part0 = np.zeros(P)
            partx = np.zeros(P)
            rs = restarts[start:start + n_slots]
            if kernel is not None:
                kernel(idx.el, idx.occ, idx.epos, idx.estart, idx.ck, idx.shift, idx.scum, nrep, lastrep, m, fn, q,
                       probes_arr, mprobe, excl, self.key, start, n_slots,
                       part0, partx, rs, cand_bins, tail_probe, counters)
            else:
                K.chain_bank(idx.el, idx.occ, idx.epos, idx.estart, idx.ck, idx.shift, idx.scum, nrep, lastrep, m,
                             self.L, fn, q, probes_arr, mprobe, excl, self.key, start, n_slots,
                             part0, partx, rs, cand_bins, tail_probe, counters)
            sum0 += part0
            sumx += partx
        self.sum0, self.sumx, self.restarts = sum0, sumx, restarts
        self.probe_index = {int(t): i for i, t in enumerate(probes)}
        b = self.bits
        changes = int(cand_bins.sum())
        up_bits = candidate_bits(b)
        down_bits = chain_update_bits(b, self.L)
        tail_msgs = int(counters[0])
        if changes:
            ledger.charge(self.tag + ".sample", UP, changes, changes * up_bits)
            ledger.charge(self.tag + ".sample", DOWN, changes * self.k, changes * self.k * down_bits)
        if tail_msgs:
            ledger.charge(self.tag + ".tail", UP, tail_msgs, tail_msgs * b.counter)
        cum = np.cumsum(cand_bins[:P])
        out = []
        for i in range(P):
            c = int(cum[i])
            out.append({
                self.tag + ".sample": c * (up_bits + self.k * down_bits),
                self.tag + ".tail": int(tail_probe[i]) * b.counter,
            })
        return out

    def estimate(self, index: int) -> float:
        return float(self.sum0[self.probe_index[index]]) / self.kappa

    def estimate_excluding(self, index: int) -> float:
        return float(self.sumx[self.probe_index[index]]) / self.kappa


class FastWindowBank:
    """Bulk version of :class:`WindowBank`."""

    def __init__(self, tag: str, k: int, kappa: int, w: int, spec: FunctionSpec,
                 eps_tail: float, rng: RngStream, bits: BitTable):
        self.tag = tag
        self.k = k
        self.kappa = kappa
        self.w = w
        self.spec = spec
        self.eps_tail = eps_tail
        self.key = np.uint64(rng.key64())
        self.bits = bits
        self.sumx = None
        self.restarts = None
        self.probe_index: dict[int, int] = {}

    def run_bulk(self, stream, probes: Sequence[int], ledger: CommLedger):
        idx = stream_index(stream)
        m = idx.m
        P = len(probes)
        probes_arr = np.asarray(probes, dtype=np.int64)
        nrep, lastrep = threshold_tables(self.eps_tail, max(m, 1))
        fn, q = _fn_code(self.spec)
        sumx = np.zeros(P)
        restarts = np.zeros(self.kappa, dtype=np.int32)
        cand_bins = np.zeros(P + 1, dtype=np.int64)
        pull_bins = np.zeros(P + 1, dtype=np.int64)
        none_bins = np.zeros(P + 1, dtype=np.int64)
        tail_probe = np.zeros(max(P, 1), dtype=np.int64)
        counters = np.zeros(1, dtype=np.int64)
        for start in range(0, self.kappa, _CHUNK):
            n_slots = min(_CHUNK, self.kappa - start)
            part = np.zeros(P)
            K.window_bank(idx.el, idx.occ, idx.epos, idx.estart, idx.ck, idx.shift, idx.scum, idx.pscum, nrep, lastrep,
                          m, self.w, fn, q, probes_arr, self.key, start, n_slots,
                          part, restarts[start:start + n_slots], cand_bins, pull_bins, none_bins,
                          tail_probe, counters)
            sumx += part
        self.sumx, self.restarts = sumx, restarts
        self.probe_index = {int(t): i for i, t in enumerate(probes)}
        b = self.bits
        k = self.k
        cb = candidate_bits(b)
        offer = b.element + b.rank + b.index
        cand = int(cand_bins.sum())
        pulls = int(pull_bins.sum())
        nones = int(none_bins.sum())
        tail_msgs = int(counters[0])
        if cand:
            ledger.charge(self.tag + ".sample", UP, cand, cand * cb)
        if cand or pulls:
            ledger.charge(self.tag + ".sample", DOWN, (cand + pulls) * k, (cand + pulls) * k * cb)
        if pulls:
            ledger.charge(self.tag + ".pull", DOWN, pulls * k, pulls * k * b.flag)
            ledger.charge(self.tag + ".pull", UP, pulls * k,
                          (pulls * k - nones) * offer + nones * b.flag)
        if tail_msgs:
            ledger.charge(self.tag + ".tail", UP, tail_msgs, tail_msgs * b.counter)
        cc = np.cumsum(cand_bins[:P])
        cp = np.cumsum(pull_bins[:P])
        cn = np.cumsum(none_bins[:P])
        out = []
        for i in range(P):
            c, p_, nn = int(cc[i]), int(cp[i]), int(cn[i])
            out.append({
                self.tag + ".sample": c * cb + (c + p_) * k * cb,
                self.tag + ".pull": p_ * k * b.flag + (p_ * k - nn) * offer + nn * b.flag,
                self.tag + ".tail": int(tail_probe[i]) * b.counter,
            })
        return out

    def estimate(self, index: int) -> float:
        return float(self.sumx[self.probe_index[index]]) / self.kappa


# ---------------------------------------------------------------------------
# generic tracker


def sliding_kappa(eps: float, delta: float, w: int) -> int:
    """Bank size for the windowed Shannon estimate with additive error eps.

    X lies in [-log2 e, log2 w] on any window, so with a = log2 e and
    b = log2 w the Hoeffding-style count of the generic bound applies to
    the additive target eps/2 at confidence delta/2.
    """
    a = math.log2(math.e)
    b = math.log2(max(w, 2))
    e2 = eps / 2.0
    return math.ceil(3.0 * (1.0 + a) * (a + b) * e2**-2 * math.log(2.0 / (delta / 2.0)))


class GenericTracker:
    """Est(f, R_hat, kappa) over the whole stream for a FunctionSpec.

    The caller supplies a spec built with ``m_max``; kappa defaults to the
    certified value and may be overridden for desk-scale runs.
    """

    def __init__(self, spec: FunctionSpec, k: int, eps: float, delta: float, seed: int,
                 bits: BitTable, counter: str = "simple", engine: str = "fast",
                 kappa_override: int | None = None, tag: str = "ams"):
        self.spec = spec
        self.params = compute_kappa(eps, delta, spec)
        self.kappa = kappa_override or self.params.kappa
        self.eps_tail = eps_f(eps, spec)
        rng = RngStream(seed, tag)
        if engine == "fast" and counter == "simple":
            self.bank = FastChainBank(tag, k, self.kappa, 1, spec, self.eps_tail, rng, bits)
        else:
            self.bank = ChainBank(tag, k, self.kappa, 1, spec, self.eps_tail, rng, counter=counter,
                                  counter_delta=delta / (2.0 * self.kappa))

    @property
    def protocols(self) -> list:
        return [self.bank]

    def query(self, index: int) -> float:
        if index < 1:
            raise DomainError("empty stream")
        return self.bank.estimate(index)
