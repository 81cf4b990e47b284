"""Deterministic simulation of the coordinator model.

k sites and one coordinator are connected in a star.  Each stream item is
handed to its site; protocol messages are then delivered in FIFO order
until the queue is empty before the next item arrives.  Every message is
charged to a :class:`CommLedger` with a payload size taken from
:class:`BitTable`, never from in-memory sizes.

Protocols that only need aggregate accounting and can be evaluated offline
(the large estimator banks) implement ``run_bulk`` and are executed after
the message-level pass; they charge their traffic to the same ledger.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .stream import StreamEvent

COORDINATOR = 0
UP = "up"  # site -> coordinator
DOWN = "down"  # coordinator -> site


class ProtocolError(RuntimeError):
    def __init__(self, tag: str, cause: BaseException):
        super().__init__(f"protocol {tag!r} failed: {cause!r}")
        self.tag = tag
        self.cause = cause


@dataclass(frozen=True)
class ChannelEnd:
    site: int
    peer: int = COORDINATOR

    def __post_init__(self):
        if (self.site == COORDINATOR) == (self.peer == COORDINATOR):
            raise ValueError("channels join a site and the coordinator")


@dataclass(frozen=True)
class Message:
    protocol_tag: str
    payload_bits: int
    payload: Any = None

    def __post_init__(self):
        if self.payload_bits < 1:
            raise ValueError("payload_bits must be at least 1")


def ceil_log2(x: int) -> int:
    return max(1, math.ceil(math.log2(x))) if x > 1 else 1


@dataclass(frozen=True)
class BitTable:
    """Payload sizes used for every message.

    element: ceil(log2 n) bits; counter or index: ceil(log2 m_max) bits;
    rank: 64 bits; flag: 1 bit; selector over L slots: ceil(log2 L) bits
    (0 for L = 1).  Protocol tags are not charged.
    """

    n: int
    m_max: int
    rank: int = 64
    flag: int = 1

    @property
    def element(self) -> int:
        return ceil_log2(self.n)

    @property
    def counter(self) -> int:
        return ceil_log2(self.m_max)

    index = counter

    @staticmethod
    def selector(slots: int) -> int:
        return 0 if slots <= 1 else math.ceil(math.log2(slots))


class CommLedger:
    """Totals of messages and bits per (protocol_tag, direction)."""

    def __init__(self):
        self._rows: dict[tuple[str, str], list[int]] = {}

    def charge(self, tag: str, direction: str, messages: int, bits: int) -> None:
        if direction not in (UP, DOWN):
            raise ValueError(direction)
        if messages < 0 or bits < 0:
            raise ValueError("ledger totals cannot decrease")
        row = self._rows.setdefault((tag, direction), [0, 0])
        row[0] += int(messages)
        row[1] += int(bits)

    def messages(self, tag: str | None = None, direction: str | None = None) -> int:
        return sum(v[0] for (t, d), v in self._rows.items() if _match(t, d, tag, direction))

    def bits(self, tag: str | None = None, direction: str | None = None) -> int:
        return sum(v[1] for (t, d), v in self._rows.items() if _match(t, d, tag, direction))

    @property
    def total_bits(self) -> int:
        return self.bits()

    def bits_by_tag(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (t, _), v in sorted(self._rows.items()):
            out[t] = out.get(t, 0) + v[1]
        return out

    def rows(self) -> list[dict]:
        return [
            {"tag": t, "direction": d, "messages": v[0], "bits": v[1]}
            for (t, d), v in sorted(self._rows.items())
        ]

    def copy(self) -> "CommLedger":
        out = CommLedger()
        out._rows = {key: list(v) for key, v in self._rows.items()}
        return out


def _match(t, d, tag, direction):
    if tag is not None and t != tag and not t.startswith(tag + "."):
        return False
    return direction is None or d == direction


class RngStream:
    """Named random substream.

    The generator is PCG64 seeded from ``(seed, sha256(label))`` so equal
    ``(seed, label)`` pairs reproduce the same draws on any platform.
    """

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = str(label)
        digest = hashlib.sha256(self.label.encode()).digest()
        words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        s = self.seed & ((1 << 64) - 1)
        self._seq = np.random.SeedSequence([s & 0xFFFFFFFF, s >> 32, *words])
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")

    def key64(self) -> int:
        """A 64-bit key derived from (seed, label), independent of draws."""
        return int(self._seq.generate_state(1, np.uint64)[0])


class Protocol:
    """Base class for message-level protocols.

    ``tags`` lists every ledger tag this object receives messages for.
    Site-side logic runs in ``on_item`` and ``on_site_message``; coordinator
    logic in ``on_coordinator_message`` and ``after_event``.
    """

    tags: tuple[str, ...] = ()

    def attach(self, net: "Network") -> None:
        self.net = net

    def on_item(self, site: int, event) -> None:
        pass

    def on_coordinator_message(self, site: int, msg: Message) -> None:
        pass

    def on_site_message(self, site: int, msg: Message) -> None:
        pass

    def after_event(self, event) -> None:
        pass

    def on_probe(self, index: int) -> None:
        pass


class Network:
    """Star network with FIFO delivery and ledger charging."""

    def __init__(self, k: int, bits: BitTable, ledger: CommLedger | None = None):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self.bits = bits
        self.ledger = ledger if ledger is not None else CommLedger()
        self._queue: deque = deque()
        self._handlers: dict[str, Protocol] = {}
        self.sent = 0
        self.delivered = 0

    def register(self, proto: Protocol) -> None:
        for tag in proto.tags:
            if tag in self._handlers and self._handlers[tag] is not proto:
                raise ValueError(f"duplicate protocol tag {tag!r}")
            self._handlers[tag] = proto
        proto.attach(self)

    def send_up(self, site: int, msg: Message) -> None:
        self.ledger.charge(msg.protocol_tag, UP, 1, msg.payload_bits)
        self.sent += 1
        self._queue.append((COORDINATOR, site, msg))

    def send_down(self, site: int, msg: Message) -> None:
        self.ledger.charge(msg.protocol_tag, DOWN, 1, msg.payload_bits)
        self.sent += 1
        self._queue.append((site, COORDINATOR, msg))

    def broadcast(self, msg: Message) -> None:
        for s in range(1, self.k + 1):
            self.send_down(s, msg)

    def pending(self) -> int:
        return len(self._queue)

    def deliver_all(self) -> None:
        q = self._queue
        while q:
            dest, src, msg = q.popleft()
            self.delivered += 1
            proto = self._handlers.get(msg.protocol_tag)
            if proto is None:
                raise ProtocolError(msg.protocol_tag, KeyError("no handler"))
            try:
                if dest == COORDINATOR:
                    proto.on_coordinator_message(src, msg)
                else:
                    proto.on_site_message(dest, msg)
            except ProtocolError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise ProtocolError(msg.protocol_tag, exc) from exc


@dataclass
class ProbeResult:
    index: int
    estimate: float
    exact: float
    total_bits: int
    bits_by_tag: dict[str, int]

    @property
    def abs_error(self) -> float:
        return abs(self.estimate - self.exact)

    @property
    def rel_error(self) -> float:
        if self.exact == 0.0:
            return 0.0 if self.estimate == 0.0 else math.inf
        return abs(self.estimate - self.exact) / abs(self.exact)

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "estimate": self.estimate,
            "exact": self.exact,
            "rel_error": self.rel_error,
            "abs_error": self.abs_error,
            "total_bits": self.total_bits,
            "bits_by_tag": self.bits_by_tag,
        }


@dataclass
class RunReport:
    probes: list[ProbeResult] = field(default_factory=list)
    ledger: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def total_bits(self) -> int:
        return sum(r["bits"] for r in self.ledger)

    def as_dict(self) -> dict:
        out = {"probes": [p.as_dict() for p in self.probes], "ledger": self.ledger}
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"),
                          default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


@dataclass(frozen=True)
class Probe:
    """A query evaluated after the run at stream index ``index``."""

    index: int
    query: Callable[[int], float]


class Simulator:
    """Runs protocols over a stream and records probes and traffic.

    Message-level protocols see every event in order; probes call
    ``on_probe`` on them right after the probed event has quiesced.  Bulk
    protocols (objects with ``run_bulk(stream, probe_indices, ledger)``)
    run afterwards; they never send messages to message-level protocols,
    so the order does not change any result.  Queries are evaluated last.
    """

    def __init__(self, k: int, bits: BitTable):
        self.k = k
        self.bits = bits
        self.ledger = CommLedger()
        self.net = Network(k, bits, self.ledger)

    def run(self, stream, protocols: Iterable = (), probes: Sequence[Probe] = (),
            exact: Callable[[int], float] | None = None) -> RunReport:
        protocols = list(protocols)
        message_level = [p for p in protocols if isinstance(p, Protocol)]
        bulk = [p for p in protocols if hasattr(p, "run_bulk")]
        for p in message_level:
            self.net.register(p)
        probes = sorted(probes, key=lambda p: p.index)
        indices = [p.index for p in probes]
        if indices and (indices[0] < 1 or indices[-1] > len(stream)):
            raise ValueError("probe index outside the stream")
        snapshots: dict[int, tuple[int, dict]] = {}
        pi = 0
        net = self.net
        el = stream.elements.tolist()
        st = stream.sites.tolist()
        need_events = bool(message_level)
        for j in range(1, len(el) + 1):
            if need_events:
                ev = StreamEvent(el[j - 1], j, st[j - 1])
                for p in message_level:
                    try:
                        p.on_item(ev.site, ev)
                    except Exception as exc:  # noqa: BLE001
                        raise ProtocolError(p.tags[0] if p.tags else type(p).__name__, exc) from exc
                    net.deliver_all()
                for p in message_level:
                    p.after_event(ev)
                    net.deliver_all()
            while pi < len(indices) and indices[pi] == j:
                for p in message_level:
                    p.on_probe(j)
                snapshots[j] = (self.ledger.total_bits, self.ledger.bits_by_tag())
                pi += 1
        bulk_bits = []
        for b in bulk:
            local = CommLedger()
            per_probe = b.run_bulk(stream, indices, local)
            for row in local.rows():
                self.ledger.charge(row["tag"], row["direction"], row["messages"], row["bits"])
            bulk_bits.append(per_probe)
        results = []
        for i, probe in enumerate(probes):
            total, by_tag = snapshots.get(probe.index, (0, {}))
            by_tag = dict(by_tag)
            for per_probe in bulk_bits:
                if per_probe is None:
                    continue
                for tag, bits in per_probe[i].items():
                    by_tag[tag] = by_tag.get(tag, 0) + bits
                    total += bits
            est = float(probe.query(probe.index))
            ex = float(exact(probe.index)) if exact is not None else float("nan")
            results.append(ProbeResult(probe.index, est, ex, int(total), dict(sorted(by_tag.items()))))
        return RunReport(results, self.ledger.rows())
