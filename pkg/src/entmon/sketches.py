"""Counting and sketching primitives used by the trackers.

CountEachSimple   deterministic (1+eps) counter of a target set.
CountEach         randomized (1+eps, delta) counter with sqrt(k) traffic.
CountAll          additive-eps frequency estimates for every element.
CountMinSketch    one-sided frequency sketch with merge and serialization.

The counter cores (:class:`SimpleCounter`, :class:`RandomizedCounter`)
hold the site and coordinator halves of one counter and talk through a
small link object, so the estimator banks can run thousands of them under
a single protocol tag.
"""
from __future__ import annotations

import math
import struct
from typing import Callable

import numpy as np

from .netsim import Message, Protocol, RngStream
from .stream import DomainError


def next_threshold(v: int, eps: float) -> int:
    """Smallest report point after ``v`` on the (1+eps) ladder 1, ...."""
    if v <= 0:
        return 1
    return max(v + 1, math.ceil((1.0 + eps) * v - 1e-9))


def threshold_tables(eps: float, c_max: int) -> tuple[np.ndarray, np.ndarray]:
    """``nrep[c]`` reports issued by a count of ``c`` and ``lastrep[c]``.

    ``lastrep[c]`` is the largest ladder point not above ``c`` (0 for
    c = 0), i.e. the value the coordinator holds for that site.
    """
    ladder = []
    v = 1
    while v <= c_max:
        ladder.append(v)
        v = next_threshold(v, eps)
    ladder = np.array(ladder, dtype=np.int64)
    c = np.arange(c_max + 1)
    nrep = np.searchsorted(ladder, c, side="right").astype(np.int32)
    lastrep = np.where(nrep > 0, ladder[np.maximum(nrep - 1, 0)], 0).astype(np.int32)
    return nrep, lastrep


class Link:
    """Send hooks a counter core uses; payloads are wrapped by the owner."""

    def __init__(self, send_up, send_down, broadcast, bits):
        self.send_up = send_up
        self.send_down = send_down
        self.broadcast = broadcast
        self.bits = bits


class SimpleCounter:
    """Both halves of CountEachSimple for one target.

    A site reports its local count each time it reaches the next point of
    the (1+eps) ladder; the coordinator sums the last reported values.
    """

    def __init__(self, k: int, eps: float, link: Link):
        self.k = k
        self.eps = eps
        self.link = link
        self.count = [0] * (k + 1)
        self.next_report = [1] * (k + 1)
        self.reported = [0] * (k + 1)  # coordinator copy
        self.estimate = 0

    def site_add(self, site: int, amount: int = 1) -> None:
        c = self.count[site] + amount
        self.count[site] = c
        if c >= self.next_report[site]:
            self.next_report[site] = next_threshold(c, self.eps)
            self.link.send_up(site, c, self.link.bits.counter)

    def site_init(self, site: int, count: int) -> None:
        """Start a site at ``count`` already-seen items (one report if > 0)."""
        self.count[site] = count
        if count > 0:
            v = 1
            while next_threshold(v, self.eps) <= count:
                v = next_threshold(v, self.eps)
            self.next_report[site] = next_threshold(v, self.eps)
            self.link.send_up(site, v, self.link.bits.counter)

    def coordinator_receive(self, site: int, value) -> None:
        self.estimate += value - self.reported[site]
        self.reported[site] = value

    def site_receive(self, site: int, payload) -> None:
        pass

    def true_count(self) -> int:
        return sum(self.count)


class RandomizedCounter:
    """Both halves of CountEach for one target.

    Exact reporting while the total is below ``T0 = c sqrt(k)/eps``.  Then
    rounds with base N (doubling): every site syncs its exact count at the
    start of a round and afterwards reports its count on each increment
    with probability p = min(1, c sqrt(k)/(eps N)).  The coordinator adds
    ``last - base + 1/p - 1`` for sites that reported in the round, which
    is unbiased for the count since the round start.
    """

    def __init__(self, k: int, eps: float, delta: float, link: Link, rng: np.random.Generator):
        self.k = k
        self.eps = eps
        self.delta = delta
        self.link = link
        self.rng = rng
        self.c = max(3.0, math.sqrt(2.0 * math.log(2.0 / delta)))
        self.t0 = math.ceil(self.c * math.sqrt(k) / eps)
        self.count = [0] * (k + 1)
        self.p = 1.0
        self.skip = [0] * (k + 1)  # site-side countdown to the next report
        self.base = [0] * (k + 1)  # coordinator: synced count at round start
        self.last = [None] * (k + 1)
        self.round_n = 0
        self.rounds = 0
        self.estimate = 0.0

    # site side
    def site_add(self, site: int, amount: int = 1) -> None:
        for _ in range(amount):
            self.count[site] += 1
            if self.p >= 1.0:
                self.link.send_up(site, ("r", self.count[site]), self.link.bits.counter)
                continue
            self.skip[site] -= 1
            if self.skip[site] <= 0:
                self.link.send_up(site, ("r", self.count[site]), self.link.bits.counter)
                self.skip[site] = self._draw_skip()

    def site_init(self, site: int, count: int) -> None:
        self.count[site] = count
        if count > 0:
            self.link.send_up(site, ("s", count), self.link.bits.counter)

    def _draw_skip(self) -> int:
        return int(self.rng.geometric(self.p))

    def site_receive(self, site: int, payload) -> None:
        kind, value = payload
        if kind == "round":
            self.p = value
            self.skip[site] = self._draw_skip() if value < 1.0 else 0
            self.link.send_up(site, ("s", self.count[site]), self.link.bits.counter)

    # coordinator side
    def coordinator_receive(self, site: int, payload) -> None:
        kind, value = payload
        if kind == "s":
            self.base[site] = value
            self.last[site] = None
        else:
            self.last[site] = value
        self._recompute()
        if self.round_n == 0 and self.estimate >= self.t0:
            self._new_round(int(self.estimate))
        elif self.round_n and self.estimate >= 2 * self.round_n:
            self._new_round(2 * self.round_n)

    def _recompute(self) -> None:
        if self.round_n == 0:
            self.estimate = float(sum(v for v in self.last[1:] if v is not None)
                                  + sum(self.base[1:]))
            return
        extra = 1.0 / self.pending_p - 1.0
        total = 0.0
        for s in range(1, self.k + 1):
            if self.last[s] is None:
                total += self.base[s]
            else:
                total += self.last[s] + extra
        self.estimate = total

    def _new_round(self, n: int) -> None:
        if self.round_n == 0:
            # fold exact-phase reports into the bases before rounds start
            for s in range(1, self.k + 1):
                if self.last[s] is not None:
                    self.base[s] = self.last[s]
                    self.last[s] = None
        self.round_n = n
        self.rounds += 1
        self.pending_p = min(1.0, self.c * math.sqrt(self.k) / (self.eps * n))
        self.link.broadcast(("round", self.pending_p), self.link.bits.counter)

    def true_count(self) -> int:
        return sum(self.count)


# ---------------------------------------------------------------------------
# standalone protocols


class _CounterProtocol(Protocol):
    def __init__(self, tag: str, k: int, match: Callable[[int], bool]):
        self.tag = tag
        self.tags = (tag,)
        self.k = k
        self.match = match
        self.listeners: list[Callable[[], None]] = []

    def _link(self):
        net = self.net
        tag = self.tag
        return Link(
            lambda s, payload, bits: net.send_up(s, Message(tag, bits, payload)),
            lambda s, payload, bits: net.send_down(s, Message(tag, bits, payload)),
            lambda payload, bits: net.broadcast(Message(tag, bits, payload)),
            net.bits,
        )

    def on_item(self, site, event) -> None:
        if self.match(event.element):
            self.core.site_add(site)

    def on_coordinator_message(self, site, msg) -> None:
        self.core.coordinator_receive(site, msg.payload)
        for fn in self.listeners:
            fn()

    def on_site_message(self, site, msg) -> None:
        self.core.site_receive(site, msg.payload)

    @property
    def estimate(self):
        return self.core.estimate

    def true_count(self) -> int:
        return self.core.true_count()


class CountEachSimple(_CounterProtocol):
    """Deterministic (1+eps)-approximate count of items matching ``match``."""

    def __init__(self, tag: str, k: int, eps: float, match: Callable[[int], bool] = lambda e: True):
        super().__init__(tag, k, match)
        self.eps = eps

    def attach(self, net) -> None:
        super().attach(net)
        self.core = SimpleCounter(self.k, self.eps, self._link())


class CountEach(_CounterProtocol):
    """Randomized (1+eps, delta)-approximate count of matching items."""

    def __init__(self, tag: str, k: int, eps: float, delta: float, rng: RngStream,
                 match: Callable[[int], bool] = lambda e: True):
        super().__init__(tag, k, match)
        self.eps = eps
        self.delta = delta
        self.rng = rng

    def attach(self, net) -> None:
        super().attach(net)
        self.core = RandomizedCounter(self.k, self.eps, self.delta, self._link(), self.rng.generator)


class CountAll(Protocol):
    """Additive-eps estimates of every element's empirical probability.

    Each site keeps exact local counts and reports (element, count) when an
    element's local count moved by at least max(1, eps*M/(2k)) since its
    last report, where M is the latest total the coordinator broadcast.
    The coordinator tracks the total with CountEachSimple(eps/4), sums the
    reported counts and rebroadcasts M whenever its total estimate doubles.
    Then |p_hat_i - p_i| < eps for every i at every quiescent point.
    """

    def __init__(self, tag: str, k: int, eps: float):
        self.tag = tag
        self.tags = (tag,)
        self.k = k
        self.eps = eps
        self.total = CountEachSimple(tag + ".total", k, eps / 4.0)
        self.local = [dict() for _ in range(k + 1)]
        self.local_reported = [dict() for _ in range(k + 1)]
        self.site_total = [0] * (k + 1)  # broadcast copy at each site
        self.coord_total = 0
        self.reported: dict[int, dict[int, int]] = {}
        self.est: dict[int, int] = {}
        self.listeners: list[Callable[[int], None]] = []

    def attach(self, net) -> None:
        super().attach(net)
        net.register(self.total)
        self.total.listeners.append(self._total_changed)

    def _step(self, site: int) -> float:
        return max(1.0, self.eps * self.site_total[site] / (2.0 * self.k))

    def on_item(self, site, event) -> None:
        self.total.on_item(site, event)
        e = event.element
        loc = self.local[site]
        c = loc.get(e, 0) + 1
        loc[e] = c
        last = self.local_reported[site].get(e, 0)
        if c - last >= self._step(site):
            self.local_reported[site][e] = c
            bits = self.net.bits
            self.net.send_up(site, Message(self.tag, bits.element + bits.counter, ("c", e, c)))

    def _total_changed(self) -> None:
        m_hat = self.total.estimate
        if m_hat >= max(1, 2 * self.coord_total):
            self.coord_total = m_hat
            self.net.broadcast(Message(self.tag, self.net.bits.counter, ("m", m_hat)))

    def on_site_message(self, site, msg) -> None:
        _, value = msg.payload
        self.site_total[site] = value

    def on_coordinator_message(self, site, msg) -> None:
        _, e, c = msg.payload
        per = self.reported.setdefault(e, {})
        self.est[e] = self.est.get(e, 0) + c - per.get(site, 0)
        per[site] = c
        for fn in self.listeners:
            fn(e)

    @property
    def m_hat(self) -> int:
        return self.total.estimate

    def query(self, i: int) -> float:
        if self.m_hat <= 0:
            raise DomainError("CountAll queried before any item")
        return self.est.get(i, 0) / self.m_hat

    def count_estimate(self, i: int) -> int:
        return self.est.get(i, 0)


# ---------------------------------------------------------------------------
# CountMin


_MASK = (1 << 64) - 1


def _mix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(_MASK)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class CountMinSketch:
    """Count-min sketch with ``w = ceil(e/eps)`` columns, ``d = ceil(ln 1/delta)`` rows.

    Row ``r`` hashes element ``x`` to ``mix64(x xor seed_r) mod w``.
    Serialized layout (little endian): uint32 w, uint32 d, d uint64 seeds,
    then the d*w uint64 counters in row-major order.
    """

    def __init__(self, eps: float, delta: float, seeds=None, rng: RngStream | None = None):
        if not (eps > 0 and 0 < delta < 1):
            raise ValueError("need eps > 0 and delta in (0, 1)")
        self.eps = eps
        self.delta = delta
        self.width = math.ceil(math.e / eps)
        self.depth = max(1, math.ceil(math.log(1.0 / delta)))
        if seeds is None:
            base = rng if rng is not None else RngStream(0, "countmin")
            seeds = [base.child(f"row{r}").key64() for r in range(self.depth)]
        self.seeds = np.array(seeds, dtype=np.uint64)
        if len(self.seeds) != self.depth:
            raise ValueError("one seed per row required")
        self.table = np.zeros((self.depth, self.width), dtype=np.uint64)

    @classmethod
    def _raw(cls, width: int, depth: int, seeds) -> "CountMinSketch":
        sk = cls.__new__(cls)
        sk.eps = math.e / width
        sk.delta = math.exp(-depth)
        sk.width = width
        sk.depth = depth
        sk.seeds = np.array(seeds, dtype=np.uint64)
        sk.table = np.zeros((depth, width), dtype=np.uint64)
        return sk

    def _cols(self, elements: np.ndarray) -> np.ndarray:
        x = np.asarray(elements, dtype=np.uint64)
        with np.errstate(over="ignore"):
            h = _mix64(x[None, :] ^ self.seeds[:, None])
        return (h % np.uint64(self.width)).astype(np.int64)

    def update(self, element: int, count: int = 1) -> None:
        cols = self._cols(np.array([element]))[:, 0]
        self.table[np.arange(self.depth), cols] += np.uint64(count)

    def update_many(self, elements) -> None:
        elements = np.asarray(elements)
        if len(elements) == 0:
            return
        cols = self._cols(elements)
        for r in range(self.depth):
            self.table[r] += np.bincount(cols[r], minlength=self.width).astype(np.uint64)

    def query(self, element: int) -> int:
        cols = self._cols(np.array([element]))[:, 0]
        return int(self.table[np.arange(self.depth), cols].min())

    def query_many(self, elements) -> np.ndarray:
        cols = self._cols(np.asarray(elements))
        return self.table[np.arange(self.depth)[:, None], cols].min(axis=0).astype(np.int64)

    def compatible(self, other: "CountMinSketch") -> bool:
        return (self.width == other.width and self.depth == other.depth
                and np.array_equal(self.seeds, other.seeds))

    def merge(self, other: "CountMinSketch") -> "CountMinSketch":
        if not self.compatible(other):
            raise ValueError("count-min merge needs identical dimensions and seeds")
        out = CountMinSketch._raw(self.width, self.depth, self.seeds)
        out.eps, out.delta = self.eps, self.delta
        out.table = self.table + other.table
        return out

    def payload_bits(self, counter_bits: int) -> int:
        return self.depth * self.width * counter_bits

    def to_bytes(self) -> bytes:
        head = struct.pack("<II", self.width, self.depth)
        return head + self.seeds.astype("<u8").tobytes() + self.table.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CountMinSketch":
        width, depth = struct.unpack_from("<II", data, 0)
        off = 8
        seeds = np.frombuffer(data, dtype="<u8", count=depth, offset=off)
        off += 8 * depth
        table = np.frombuffer(data, dtype="<u8", count=depth * width, offset=off)
        sk = cls._raw(width, depth, seeds)
        sk.table = table.reshape(depth, width).astype(np.uint64)
        return sk
