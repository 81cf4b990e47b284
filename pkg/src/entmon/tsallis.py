"""Tsallis entropy S_q = (1 - sum p_i^q)/(q - 1) at the coordinator.

With g_m(x) = x - m (x/m)^q the mean g over the stream equals (q-1) S_q.
Elements holding at least 0.3 of the stream (at most four of them, the
heavy set Z) are counted directly and removed from the sample:

    (q-1) S_q = (1 - sum_Z p_z) * gbar_m(A without Z) + (1/m) sum_Z g_m(m_z).
"""
from __future__ import annotations

from dataclasses import dataclass

from .ams import ChainBank, FastChainBank, compute_kappa, eps_f
from .netsim import BitTable, Message, Protocol, RngStream
from .sketches import CountAll, Link, SimpleCounter
from .stream import DomainError, tsallis_g

HEAVY_SHARE = 0.3
TRIGGER = 0.29  # CountAll estimate that admits an element to Z
RETIRE = 0.28  # CountAll estimate below which a light member may leave Z
MAX_HEAVY = 4


@dataclass(frozen=True)
class HeavyState:
    members: tuple[int, ...]
    counts: tuple[float, ...]  # estimates of m_z, z in members
    rest: float  # estimate of the count of everything outside Z

    @property
    def total(self) -> float:
        return self.rest + sum(self.counts)


class HeavySet(Protocol):
    """Maintains Z and (1+eps)-estimates of m_z and of the count outside Z.

    CountAll(0.01) admits z once its estimated share reaches ``trigger``.
    Whenever CountAll reports, members whose count estimate is below 0.3 of
    the total and whose CountAll share is below ``retire`` are dropped.  On
    every change of Z the coordinator broadcasts Z; each site replies with
    its item count and its exact counts of the members, and fresh
    CountEachSimple(eps) counters start for each member and for the rest.
    """

    def __init__(self, tag: str, k: int, eps: float, trigger: float = TRIGGER,
                 retire: float = RETIRE, countall_eps: float = 0.01):
        self.tag = tag
        self.z_tag = tag + ".Z"
        self.pull_tag = tag + ".pull"
        self.count_tag = tag + ".count"
        self.tags = (self.z_tag, self.pull_tag, self.count_tag)
        self.k = k
        self.eps = eps
        self.trigger = trigger
        self.retire = retire
        self.countall = CountAll(tag + ".countall", k, countall_eps)
        self.site_ct = [0] * (k + 1)
        self.site_Z: list[tuple] = [()] * (k + 1)
        self.Z: tuple[int, ...] = ()
        self.generation = 0
        self.counters: list[SimpleCounter] = []  # one per member, then the rest
        self.base: list[int] = []
        self._replies: list = []
        self._waiting = False
        self.changes: list[tuple[int, tuple]] = []
        self.snapshots: dict[int, HeavyState] = {}
        self.t = 0

    def attach(self, net) -> None:
        super().attach(net)
        net.register(self.countall)
        self.countall.listeners.append(self._check)

    # site side
    def on_item(self, site: int, event) -> None:
        self.t = event.global_index
        self.countall.on_item(site, event)
        self.site_ct[site] += 1
        if not self.counters:
            return
        zs = self.site_Z[site]
        e = event.element
        slot = zs.index(e) if e in zs else len(zs)
        self.counters[slot].site_add(site)

    def on_site_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.count_tag:
            return
        _, zs = msg.payload
        self.site_Z[site] = zs
        local = self.countall.local[site]
        counts = [local.get(z, 0) for z in zs]
        bits = self.net.bits
        self.net.send_up(site, Message(self.pull_tag, bits.counter * (1 + len(zs)),
                                       ("counts", self.site_ct[site], counts)))

    # coordinator side
    def _check(self, e: int) -> None:
        if self._waiting:
            return
        ca = self.countall
        m_hat = self.state().total if self.counters else 0.0
        keep = []
        for i, z in enumerate(self.Z):
            light = self.counters and self._count(i) < HEAVY_SHARE * m_hat and ca.query(z) < self.retire
            if not light:
                keep.append(z)
        if e not in keep and ca.query(e) >= self.trigger:
            keep.append(e)
        if tuple(keep) != self.Z:
            if len(keep) > MAX_HEAVY:
                raise RuntimeError("heavy set exceeded four elements")
            self._set_Z(tuple(keep))

    def _set_Z(self, zs: tuple) -> None:
        self.Z = zs
        self.changes.append((self.t, zs))
        self.generation += 1
        gen = self.generation
        self.counters = []
        for slot in range(len(zs) + 1):
            link = Link(
                lambda s, payload, bits, slot=slot: self.net.send_up(
                    s, Message(self.count_tag, bits, (gen, slot, payload))),
                None, None, self.net.bits,
            )
            self.counters.append(SimpleCounter(self.k, self.eps, link))
        self.base = [0] * (len(zs) + 1)
        self._replies = []
        self._waiting = True
        bits = self.net.bits
        self.net.broadcast(Message(self.z_tag, bits.element * len(zs) + bits.selector(MAX_HEAVY + 1), ("Z", zs)))

    def on_coordinator_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.count_tag:
            gen, slot, payload = msg.payload
            if gen == self.generation:
                self.counters[slot].coordinator_receive(site, payload)
            return
        _, ct, counts = msg.payload
        self._replies.append((ct, counts))
        if len(self._replies) == self.k:
            zc = [sum(r[1][i] for r in self._replies) for i in range(len(self.Z))]
            total = sum(r[0] for r in self._replies)
            self.base = zc + [total - sum(zc)]
            self._replies = []
            self._waiting = False

    def _count(self, slot: int) -> float:
        return self.base[slot] + self.counters[slot].estimate

    def state(self) -> HeavyState:
        if not self.counters:
            return HeavyState((), (), float(self.countall.m_hat))
        n = len(self.Z)
        return HeavyState(self.Z, tuple(self._count(i) for i in range(n)), self._count(n))

    def on_probe(self, index: int) -> None:
        self.snapshots[index] = self.state()


class TrackTsallis:
    """(1+eps, delta) estimate of S_q for a constant q > 1.

    The bank keeps element-distinct chains of length 5 so the min-rank
    sample outside any heavy set of up to four elements is available.
    kappa is the certified size for (eps/2, delta/2) on the light class.
    """

    def __init__(self, k: int, q: float, eps: float, delta: float, seed: int, bits: BitTable,
                 m_max: int | None = None, counter: str = "simple", engine: str = "fast",
                 kappa_override: int | None = None, tag: str = "S"):
        if q <= 1:
            raise DomainError("Tsallis order q must exceed 1")
        m_max = m_max or bits.m_max
        self.q = float(q)
        self.eps = eps
        self.delta = delta
        self.spec = tsallis_g(q, m_max)
        self.params = compute_kappa(eps / 2.0, delta / 2.0, self.spec)
        self.kappa = kappa_override or self.params.kappa
        self.eps_tail = eps_f(eps / 2.0, self.spec)
        rng = RngStream(seed, tag)
        self.heavy = HeavySet(tag + ".heavy", k, eps / 4.0)
        L = MAX_HEAVY + 1
        if engine == "fast" and counter == "simple":
            self.bank = FastChainBank(tag + ".ams", k, self.kappa, L, self.spec, self.eps_tail,
                                      rng.child("bank"), bits, exclude=self._exclude, max_excluded=MAX_HEAVY)
        else:
            self.bank = ChainBank(tag + ".ams", k, self.kappa, L, self.spec, self.eps_tail, rng.child("bank"),
                                  counter=counter, counter_delta=delta / (4.0 * self.kappa),
                                  exclude=self._exclude)

    def _exclude(self, t: int):
        st = self.heavy.snapshots.get(t) or self.heavy.state()
        return list(st.members)

    @property
    def protocols(self) -> list:
        return [self.heavy, self.bank]

    def gbar(self, index: int) -> float:
        """Estimate of the mean of g_m, i.e. (q - 1) S_q."""
        st = self.heavy.snapshots[index]
        if not st.members:
            return self.bank.estimate(index)
        # shares are taken against the sum of the counter estimates, so
        # 1 - sum p_z is the rest counter's share and stays relative
        m_hat = st.total
        heavy = sum(c / m_hat - (c / m_hat) ** self.q for c in st.counts)
        return (st.rest / m_hat) * self.bank.estimate_excluding(index) + heavy

    def query(self, index: int) -> float:
        if index < 1:
            raise DomainError("empty stream")
        return self.gbar(index) / (self.q - 1.0)

    def diagnostics(self) -> dict:
        r = self.bank.restarts
        return {
            "kappa": self.kappa,
            "heavy_changes": [[t, list(z)] for t, z in self.heavy.changes],
            "restarts_s0_max": int(r[:, 0].max()) if len(r) else 0,
            "restarts_all_max": int(r[:, 1].max()) if len(r) else 0,
        }
