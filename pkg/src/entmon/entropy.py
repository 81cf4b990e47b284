"""Shannon entropy at the coordinator.

:class:`TrackProb` follows an element I holding most of the stream and
keeps a relative estimate of 1 - p_I.  :class:`TrackEntropy` combines it
with a bank of (S0, S1) sample pairs: when I is frequent the estimate is

    (1 - p_I) * Est over A without I  +  p_I log2(1 / p_I),

otherwise the plain bank average.  :class:`SlidingEntropy` estimates the
entropy of the last w items without frequent-element removal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .ams import ChainBank, FastChainBank, FastWindowBank, WindowBank, sliding_kappa
from .netsim import BitTable, Message, Protocol, RngStream
from .sketches import CountAll, CountEachSimple, CountMinSketch, Link, SimpleCounter
from .stream import DomainError, shannon_f

TRIGGER = 0.59  # CountAll estimate that makes an element the tracked I
BRANCH = 0.65  # p_I estimate above which I is removed from the sample
COUNTALL_EPS = 0.01
MAX_EPS = 1.0 / 20.0


def shannon_kappa(eps: float, delta: float, m_max: int) -> int:
    """Bank size ceil(480 eps^-2 ln(4/delta) (2 + log2 m_max))."""
    if not (eps > 0 and 0 < delta < 1):
        raise ValueError("need eps > 0 and delta in (0, 1)")
    return math.ceil(480.0 * eps**-2 * math.log(4.0 / delta) * (2.0 + math.log2(max(m_max, 2))))


@dataclass(frozen=True)
class ProbState:
    element: int | None
    p_minus: float | None  # estimate of 1 - p_I

    @property
    def p_hat(self) -> float:
        return 0.0 if self.p_minus is None else 1.0 - self.p_minus


class TrackProb(Protocol):
    """(1+eps, delta) estimate of 1 - p_I for the current frequent element I.

    CountAll(0.01) proposes I when some element reaches an estimated share
    of ``trigger``.  On every change of I the coordinator broadcasts I, each
    site answers with its CountMin(eps/4, delta) sketch and item count, and
    a fresh CountEachSimple(-I, eps/4) starts.  Then

        1 - p_I ~ (ct - CountMin[I] + gamma) / m_hat

    with ct the merged item count and m_hat a CountEachSimple(eps/4) of all
    items.
    """

    def __init__(self, tag: str, k: int, eps: float, delta: float, rng: RngStream,
                 trigger: float = TRIGGER, countall_eps: float = COUNTALL_EPS):
        self.tag = tag
        self.i_tag = tag + ".I"
        self.pull_tag = tag + ".pull"
        self.gamma_tag = tag + ".gamma"
        self.tags = (self.i_tag, self.pull_tag, self.gamma_tag)
        self.k = k
        self.eps = eps
        self.delta = delta
        self.trigger = trigger
        self.countall = CountAll(tag + ".countall", k, countall_eps)
        self.m_counter = CountEachSimple(tag + ".m", k, eps / 4.0)
        self.cm_seeds = CountMinSketch(eps / 4.0, delta, rng=rng.child("countmin")).seeds
        self.site_sketch = [None] + [CountMinSketch(eps / 4.0, delta, seeds=self.cm_seeds) for _ in range(k)]
        self.site_buffer: list = [None] + [[] for _ in range(k)]
        self.site_ct = [0] * (k + 1)
        self.site_I: list = [None] * (k + 1)
        self.I: int | None = None
        self.ct = 0
        self.global_cm: CountMinSketch | None = None
        self.cm_I = 0
        self.gamma: SimpleCounter | None = None
        self.generation = 0
        self._replies: list = []
        self.triggers: list[tuple[int, int]] = []
        self.snapshots: dict[int, ProbState] = {}
        self.t = 0

    def attach(self, net) -> None:
        super().attach(net)
        net.register(self.countall)
        net.register(self.m_counter)
        self.countall.listeners.append(self._check)

    # site side
    def on_item(self, site: int, event) -> None:
        self.t = event.global_index
        self.countall.on_item(site, event)
        self.m_counter.on_item(site, event)
        self.site_ct[site] += 1
        self.site_buffer[site].append(event.element)
        if self.gamma is not None and event.element != self.site_I[site]:
            self.gamma.site_add(site)

    def on_site_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.gamma_tag:
            return
        _, z = msg.payload
        self.site_I[site] = z
        sk = self.site_sketch[site]
        buf = self.site_buffer[site]
        if buf:
            sk.update_many(buf)
            buf.clear()
        bits = self.net.bits
        self.net.send_up(site, Message(self.pull_tag, sk.payload_bits(bits.counter) + bits.counter,
                                       ("sketch", sk.to_bytes(), self.site_ct[site])))

    # coordinator side
    def _check(self, e: int) -> None:
        if e != self.I and self.countall.query(e) >= self.trigger:
            self._set_I(e)

    def _set_I(self, z: int) -> None:
        self.I = z
        self.triggers.append((self.t, z))
        self.generation += 1
        gen = self.generation
        link = Link(
            lambda s, payload, bits: self.net.send_up(s, Message(self.gamma_tag, bits, (gen, payload))),
            None, None, self.net.bits,
        )
        self.gamma = SimpleCounter(self.k, self.eps / 4.0, link)
        self._replies = []
        self.net.broadcast(Message(self.i_tag, self.net.bits.element, ("I", z)))

    def on_coordinator_message(self, site: int, msg: Message) -> None:
        if msg.protocol_tag == self.gamma_tag:
            gen, payload = msg.payload
            if gen == self.generation:
                self.gamma.coordinator_receive(site, payload)
            return
        _, data, ct_i = msg.payload
        self._replies.append((CountMinSketch.from_bytes(data), ct_i))
        if len(self._replies) == self.k:
            merged = self._replies[0][0]
            for sk, _ in self._replies[1:]:
                merged = merged.merge(sk)
            self.global_cm = merged
            self.ct = sum(c for _, c in self._replies)
            self.cm_I = merged.query(self.I)
            self._replies = []

    # queries
    def p_minus(self) -> float | None:
        """Current estimate of 1 - p_I (None before any I exists)."""
        if self.I is None or self.global_cm is None:
            return None
        m_hat = self.m_counter.estimate
        return (self.ct - self.cm_I + self.gamma.estimate) / m_hat

    def state(self) -> ProbState:
        return ProbState(self.I, self.p_minus())

    def on_probe(self, index: int) -> None:
        self.snapshots[index] = self.state()


class TrackEntropy:
    """(1+eps, delta) estimate of the Shannon entropy of the whole stream.

    ``eps1`` is the tail-counter precision (default eps/60, the literal
    composition of the pair tracker's eps/10 with the eps/6 handed to it).
    ``m_mode="exact"`` evaluates f at the true length; ``"tracked"`` uses a
    charged CountEachSimple(eps^2) estimate instead.
    """

    def __init__(self, k: int, eps: float, delta: float, seed: int, bits: BitTable,
                 m_max: int | None = None, strict: bool = True, eps1: float | None = None,
                 m_mode: str = "exact", counter: str = "simple", engine: str = "fast",
                 kappa_override: int | None = None, tag: str = "H"):
        if strict and eps > MAX_EPS:
            raise DomainError(f"eps must be at most 1/20 (got {eps}); pass strict=False to allow it")
        if m_mode not in ("exact", "tracked"):
            raise ValueError(f"unknown m_mode {m_mode!r}")
        m_max = m_max or bits.m_max
        self.k = k
        self.eps = eps
        self.delta = delta
        self.spec = shannon_f(m_max)
        self.kappa = kappa_override or shannon_kappa(eps, delta, m_max)
        self.eps1 = eps1 if eps1 is not None else eps / 60.0
        rng = RngStream(seed, tag)
        self.prob = TrackProb(tag + ".prob", k, eps / 4.0, delta / 2.0, rng.child("prob"))
        self.m_counter = None
        self.m_snap: dict[int, int] = {}
        if m_mode == "tracked":
            self.m_counter = _Snapshotting(tag + ".m", k, eps * eps, self.m_snap)
        m_of = (lambda t: max(1, self.m_snap[t])) if self.m_counter else None
        exclude = self._exclude
        if engine == "fast" and counter == "simple":
            self.bank = FastChainBank(tag + ".ams", k, self.kappa, 2, self.spec, self.eps1,
                                      rng.child("bank"), bits, exclude=exclude, m_of=m_of)
        else:
            self.bank = ChainBank(tag + ".ams", k, self.kappa, 2, self.spec, self.eps1, rng.child("bank"),
                                  counter=counter, counter_delta=delta / (4.0 * self.kappa),
                                  exclude=exclude, m_of=m_of)

    def _exclude(self, t: int):
        st = self.prob.snapshots.get(t) or self.prob.state()
        return [] if st.element is None else [st.element]

    @property
    def protocols(self) -> list:
        out = [self.prob]
        if self.m_counter is not None:
            out.append(self.m_counter)
        out.append(self.bank)
        return out

    def branch(self, index: int) -> bool:
        """True when the frequent-element decomposition is used at ``index``."""
        return self.prob.snapshots[index].p_hat > BRANCH

    def query(self, index: int) -> float:
        if index < 1:
            raise DomainError("empty stream")
        st = self.prob.snapshots[index]
        p = st.p_hat
        if p > BRANCH:
            p = min(p, 1.0)
            tail = p * math.log2(1.0 / p) if p < 1.0 else 0.0
            return (1.0 - p) * self.bank.estimate_excluding(index) + tail
        return self.bank.estimate(index)

    def diagnostics(self) -> dict:
        r = self.bank.restarts
        return {
            "kappa": self.kappa,
            "triggers": [list(x) for x in self.prob.triggers],
            "restarts_s0_max": int(r[:, 0].max()) if len(r) else 0,
            "restarts_all_max": int(r[:, 1].max()) if len(r) else 0,
        }


class _Snapshotting(CountEachSimple):
    """CountEachSimple that records its estimate at every probe."""

    def __init__(self, tag: str, k: int, eps: float, store: dict):
        super().__init__(tag, k, eps)
        self.store = store

    def on_probe(self, index: int) -> None:
        self.store[index] = self.estimate


class SlidingEntropy:
    """Entropy of the most recent w items, additive below 1 and relative above.

    Uses a bank of window samplers with the window-aware bank size and
    tail counters of precision eps/30.
    """

    def __init__(self, k: int, eps: float, delta: float, w: int, seed: int, bits: BitTable,
                 engine: str = "fast", kappa_override: int | None = None, tag: str = "Hw"):
        if w < 1:
            raise ValueError("window length must be positive")
        self.w = w
        self.spec = shannon_f(max(w, 2))
        self.kappa = kappa_override or sliding_kappa(eps, delta, w)
        self.eps_tail = eps / (3.0 * self.spec.lambda_bound)
        rng = RngStream(seed, tag)
        cls = FastWindowBank if engine == "fast" else WindowBank
        self.bank = cls(tag + ".ams", k, self.kappa, w, self.spec, self.eps_tail, rng.child("bank"),
                        *([bits] if engine == "fast" else []))

    @property
    def protocols(self) -> list:
        return [self.bank]

    def query(self, index: int) -> float:
        if index < 1:
            raise DomainError("empty stream")
        return self.bank.estimate(index)


__all__ = [
    "BRANCH", "COUNTALL_EPS", "MAX_EPS", "TRIGGER", "ProbState", "SlidingEntropy", "TrackEntropy",
    "TrackProb", "shannon_kappa",
]
