"""Streams, frequency statistics, tracked functions and brute-force oracles.

Every protocol in the package is validated against the exact quantities
computed here.  Entropies are in bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterator, Mapping

import numpy as np

LOG2E = 1.0 / math.log(2.0)


class DomainError(ValueError):
    """A quantity was requested outside the domain where it is defined."""


@dataclass(frozen=True)
class StreamEvent:
    element: int
    global_index: int
    site: int


class Stream:
    """An event stream stored column-wise.

    ``elements[j-1]`` and ``sites[j-1]`` describe the item with global
    index ``j``.  Elements live in ``[1, n]`` and sites in ``[1, k]``.
    """

    def __init__(self, elements, sites, n: int, k: int):
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.sites = np.ascontiguousarray(sites, dtype=np.int64)
        self.n = int(n)
        self.k = int(k)
        if self.elements.shape != self.sites.shape or self.elements.ndim != 1:
            raise ValueError("elements and sites must be 1-d arrays of equal length")
        if len(self.elements):
            if self.elements.min() < 1 or self.elements.max() > self.n:
                raise ValueError("element ids must lie in [1, n]")
            if self.sites.min() < 1 or self.sites.max() > self.k:
                raise ValueError("site ids must lie in [1, k]")

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[StreamEvent]:
        for j, (e, s) in enumerate(zip(self.elements.tolist(), self.sites.tolist()), start=1):
            yield StreamEvent(e, j, s)

    def event(self, j: int) -> StreamEvent:
        return StreamEvent(int(self.elements[j - 1]), j, int(self.sites[j - 1]))

    def prefix(self, t: int) -> "Stream":
        return Stream(self.elements[:t], self.sites[:t], self.n, self.k)

    def to_bytes(self) -> bytes:
        return self.elements.tobytes() + self.sites.tobytes()

    @classmethod
    def from_events(cls, events, n: int | None = None, k: int | None = None) -> "Stream":
        events = list(events)
        for j, ev in enumerate(events, start=1):
            if ev.global_index != j:
                raise ValueError("global indices must be contiguous from 1")
        el = np.array([ev.element for ev in events], dtype=np.int64)
        st = np.array([ev.site for ev in events], dtype=np.int64)
        n = n if n is not None else (int(el.max()) if len(el) else 1)
        k = k if k is not None else (int(st.max()) if len(st) else 1)
        return cls(el, st, n, k)


def write_stream(path, stream: Stream) -> None:
    """Write one ``<global_index> <element_id> <site_id>`` line per event."""
    with open(path, "w") as fh:
        for j, (e, s) in enumerate(zip(stream.elements.tolist(), stream.sites.tolist()), start=1):
            fh.write(f"{j} {e} {s}\n")


def read_stream(path, n: int | None = None, k: int | None = None) -> Stream:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            rows.append(tuple(int(x) for x in parts))
    events = [StreamEvent(e, j, s) for j, e, s in rows]
    return Stream.from_events(events, n=n, k=k)


@dataclass
class FrequencyVector:
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_elements(cls, elements) -> "FrequencyVector":
        vals, cnts = np.unique(np.asarray(elements, dtype=np.int64), return_counts=True)
        return cls({int(v): int(c) for v, c in zip(vals, cnts)})

    @classmethod
    def window(cls, elements, t: int, w: int) -> "FrequencyVector":
        """Counts of the most recent ``w`` items among the first ``t``."""
        elements = np.asarray(elements)
        return cls.from_elements(elements[max(0, t - w):t])

    def without(self, *elements: int) -> "FrequencyVector":
        drop = set(elements)
        return FrequencyVector({e: c for e, c in self.counts.items() if e not in drop})

    def m_minus(self, i: int) -> int:
        """Total count of everything except element ``i``."""
        return self.total - self.counts.get(i, 0)

    def values(self) -> np.ndarray:
        return np.array([c for c in self.counts.values() if c > 0], dtype=np.float64)


def _as_fv(fv) -> FrequencyVector:
    if isinstance(fv, FrequencyVector):
        return fv
    if isinstance(fv, Mapping):
        return FrequencyVector(dict(fv))
    return FrequencyVector.from_elements(fv)


# ---------------------------------------------------------------------------
# tracked functions


def shannon_value(x, m):
    """f_m(x) = x log2(m/x), with f_m(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log2(m / np.where(x > 0, x, 1.0)), 0.0)
    return out if out.ndim else float(out)


def tsallis_value(x, m, q):
    """g_m(x) = x - m (x/m)^q, with g_m(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    out = x - m * (x / m) ** q
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FunctionSpec:
    """A tracked function f together with the constants its analysis needs.

    ``a``, ``b`` and ``e_lower`` bound the estimator X = f(R) - f(R-1) on
    the declared input class: ``X`` lies in ``[-a, b]`` and the class mean
    is at least ``e_lower``.  ``b`` may depend on the stream length bound,
    so it is fixed when the FunctionSpec is built with ``m_max``.
    """

    name: str
    f: Callable
    lambda_bound: float
    input_class: Callable[[FrequencyVector], bool]
    a: float
    b: float | None
    e_lower: float
    q: float | None = None
    m_max: int | None = None

    @property
    def pi_sup(self) -> float:
        if self.b is None:
            raise DomainError(f"{self.name}: pi_sup needs m_max")
        a, b, e = self.a, self.b, self.e_lower
        if e <= 0:
            raise DomainError(f"{self.name}: e_lower must be positive")
        return 3.0 * (1.0 + a / e) ** 2 * (a + b) / (a + e)

    def x_value(self, r, m):
        """X(r) = f_m(r) - f_m(r - 1)."""
        r = np.asarray(r, dtype=np.float64)
        return self.f(r, m) - self.f(r - 1.0, m)


SHANNON_HEAVY_LIMIT = 0.7
TSALLIS_HEAVY_LIMIT = 0.3


def shannon_f(m_max: int | None = None, lambda_bound: float = 10.0) -> FunctionSpec:
    """f_m(x) = x log2(m/x) on streams where every m_i <= 0.7 m."""

    def member(fv):
        fv = _as_fv(fv)
        m = fv.total
        return m > 0 and max(fv.counts.values()) <= SHANNON_HEAVY_LIMIT * m

    b = math.log2(m_max) if m_max else None
    return FunctionSpec("shannon_f", shannon_value, lambda_bound, member, 0.0, b, 0.5, None, m_max)


def tsallis_g(q: float, m_max: int | None = None) -> FunctionSpec:
    """g_m(x) = x - m (x/m)^q on streams where every m_i <= 0.3 m."""
    if q <= 1:
        raise DomainError("Tsallis order q must exceed 1")

    def member(fv):
        fv = _as_fv(fv)
        m = fv.total
        return m > 0 and max(fv.counts.values()) <= TSALLIS_HEAVY_LIMIT * m

    f = lambda x, m: tsallis_value(x, m, q)  # noqa: E731
    e_lower = 1.0 - (1.0 / 3.0) ** (q - 1.0)
    return FunctionSpec("tsallis_g", f, tsallis_lambda(q), member, float(q), 1.0, e_lower, float(q), m_max)


# ---------------------------------------------------------------------------
# exact oracles


def exact_shannon(fv) -> float:
    fv = _as_fv(fv)
    c = fv.values()
    m = c.sum()
    if m < 1:
        raise DomainError("entropy of an empty stream is undefined")
    p = c / m
    return float(max(0.0, -(p * np.log2(p)).sum()))


def exact_tsallis(fv, q: float) -> float:
    if q <= 1:
        raise DomainError("Tsallis order q must exceed 1")
    fv = _as_fv(fv)
    c = fv.values()
    m = c.sum()
    if m < 1:
        raise DomainError("entropy of an empty stream is undefined")
    p = c / m
    return float((1.0 - (p**q).sum()) / (q - 1.0))


def exact_fbar(fv, spec: FunctionSpec, m: int | None = None) -> float:
    """(1/|A|) sum_i f_m(m_i); ``m`` defaults to the stream length."""
    fv = _as_fv(fv)
    c = fv.values()
    total = c.sum()
    if total < 1:
        raise DomainError("empty stream")
    m = total if m is None else m
    return float(np.sum(spec.f(c, m)) / total)


def tail_frequencies(elements) -> np.ndarray:
    """R_J for every J: occurrences of a_J at positions >= J."""
    el = np.asarray(elements, dtype=np.int64)
    out = np.empty(len(el), dtype=np.int64)
    seen: dict[int, int] = {}
    for j in range(len(el) - 1, -1, -1):
        e = int(el[j])
        seen[e] = seen.get(e, 0) + 1
        out[j] = seen[e]
    return out


def exact_tail_frequency(events, J: int) -> int:
    el = [ev.element if isinstance(ev, StreamEvent) else int(ev) for ev in events]
    if not 1 <= J <= len(el):
        raise IndexError(f"J={J} outside [1, {len(el)}]")
    target = el[J - 1]
    return sum(1 for e in el[J - 1:] if e == target)


def expected_X_oracle(events, spec: FunctionSpec, m: int | None = None) -> float:
    """(1/m) sum_J [f(R_J) - f(R_J - 1)] by brute force over every J."""
    el = [ev.element if isinstance(ev, StreamEvent) else int(ev) for ev in events]
    if not el:
        raise DomainError("empty stream")
    r = tail_frequencies(el).astype(np.float64)
    mm = len(el) if m is None else m
    return float(np.mean(spec.x_value(r, mm)))


# ---------------------------------------------------------------------------
# perturbation certificates


def shannon_lambda_violations(m: int, eps: float, lam: float = 10.0) -> int:
    """Number of r in [2, 0.7m] with max |X(r) - X(r_hat)| > lam*eps*X(r).

    r_hat ranges over the integers with |r_hat - r| <= eps*r.  X is
    decreasing in r, so the extreme r_hat values are the end points.
    """
    spec = shannon_f()
    r = np.arange(2, int(SHANNON_HEAVY_LIMIT * m) + 1, dtype=np.float64)
    lo = np.maximum(1.0, np.ceil(r - eps * r - 1e-12))
    hi = np.floor(r + eps * r + 1e-12)
    x = spec.x_value(r, m)
    dev = np.maximum(np.abs(spec.x_value(lo, m) - x), np.abs(spec.x_value(hi, m) - x))
    return int(np.count_nonzero(dev > lam * eps * x))


def shannon_lambda_violations_exhaustive(m: int, eps: float, lam: float = 10.0) -> int:
    """Same count as above, enumerating every admissible r_hat."""
    spec = shannon_f()
    bad = 0
    for r in range(2, int(SHANNON_HEAVY_LIMIT * m) + 1):
        lo = max(1, math.ceil(r - eps * r - 1e-12))
        hi = math.floor(r + eps * r + 1e-12)
        rh = np.arange(lo, hi + 1, dtype=np.float64)
        x = spec.x_value(float(r), m)
        if np.any(np.abs(spec.x_value(rh, m) - x) > lam * eps * x):
            bad += 1
    return bad


_LAMBDA_GRID_M = tuple(2**i for i in range(8, 15)) + (2**20,)
_LAMBDA_GRID_EPS = (0.01, 0.05, 0.1, 0.25)


@lru_cache(maxsize=None)
def tsallis_lambda(q: float) -> float:
    """Numerical perturbation constant for g_m on streams with m_i <= 0.3m.

    Grid search of |X(r) - X(r_hat)| / (eps X(r)) over r in [1, 0.3m],
    eps <= 1/4 and the admissible end points r_hat, rounded up to three
    decimals.  X is decreasing in r for q > 1, so end points suffice.
    """
    worst = 1.0
    for m in _LAMBDA_GRID_M:
        r = np.arange(1, int(TSALLIS_HEAVY_LIMIT * m) + 1, dtype=np.float64)
        x = 1.0 - float(m) ** (1.0 - q) * (r**q - (r - 1.0) ** q)
        for eps in _LAMBDA_GRID_EPS:
            lo = np.maximum(1.0, np.ceil(r - eps * r - 1e-12))
            hi = np.floor(r + eps * r + 1e-12)
            xl = 1.0 - float(m) ** (1.0 - q) * (lo**q - (lo - 1.0) ** q)
            xh = 1.0 - float(m) ** (1.0 - q) * (hi**q - (hi - 1.0) ** q)
            dev = np.maximum(np.abs(xl - x), np.abs(xh - x))
            worst = max(worst, float(np.max(dev / (eps * x))))
    return math.ceil(worst * 1000.0) / 1000.0
