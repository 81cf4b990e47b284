"""Workloads, tracker runs, parameter sweeps and report files."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .ams import GenericTracker
from .entropy import SlidingEntropy, TrackEntropy
from .netsim import BitTable, Probe, RngStream, RunReport, Simulator
from .stream import DomainError, Stream, read_stream, shannon_f, tsallis_g
from .tsallis import TrackTsallis

WORKLOADS = ("uniform", "zipf", "single_heavy", "oscillation", "file")
PLACEMENTS = ("round_robin", "random", "skewed")
DEFAULT_PARAM = {"zipf": 1.1, "single_heavy": 0.8, "oscillation": 0.58}


@dataclass(frozen=True)
class WorkloadSpec:
    """A synthetic or file-backed stream.

    ``param`` is the Zipf exponent, the heavy share, or c_H for the
    oscillation adversary.
    """

    kind: str = "uniform"
    n: int = 16
    m: int = 1000
    k: int = 4
    placement: str = "round_robin"
    param: float | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in WORKLOADS:
            raise ValueError(f"unknown workload {self.kind!r}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.kind != "file" and (self.n < 1 or self.m < 1 or self.k < 1):
            raise ValueError("n, m and k must be at least 1")

    @property
    def value(self) -> float | None:
        return self.param if self.param is not None else DEFAULT_PARAM.get(self.kind)

    def label(self) -> str:
        v = self.value
        return self.kind if v is None else f"{self.kind}({v:g})"


def parse_workload(text: str, n: int, m: int, k: int, placement: str = "round_robin") -> WorkloadSpec:
    """``uniform``, ``zipf(1.2)``, ``single_heavy(0.8)``, ``oscillation`` or ``file:<path>``."""
    text = text.strip()
    if text.startswith("file:"):
        return WorkloadSpec("file", n, m, k, placement, path=text[5:])
    if "(" in text:
        kind, rest = text.split("(", 1)
        return WorkloadSpec(kind.strip(), n, m, k, placement, float(rest.rstrip(")")))
    return WorkloadSpec(text, n, m, k, placement)


def _bresenham(m: int, p: float) -> np.ndarray:
    """Boolean mask with floor(j p) marked positions among the first j, for all j."""
    j = np.arange(1, m + 1)
    return np.floor(j * p + 1e-12) > np.floor((j - 1) * p + 1e-12)


def _oscillation(m: int, c: float) -> np.ndarray:
    """Two elements alternately driven to share c by runs of the other one."""
    if not 0.5 < c < 1.0:
        raise ValueError("oscillation share must lie in (0.5, 1)")
    head = min(m, 100)
    el = np.where(_bresenham(head, c), 1, 2)
    out = [el]
    a = int(np.sum(el == 1))
    b = head - a
    total = head
    major = 1
    while total < m:
        # feed the minority element until it reaches share c
        if major == 1:
            need = max(1, math.ceil((c * a - (1 - c) * b) / (1 - c)))
            run = min(need, m - total)
            out.append(np.full(run, 2))
            b += run
        else:
            need = max(1, math.ceil((c * b - (1 - c) * a) / (1 - c)))
            run = min(need, m - total)
            out.append(np.full(run, 1))
            a += run
        total += run
        major = 3 - major
    return np.concatenate(out)[:m]


def oscillation_switches(elements) -> int:
    """Number of times the majority element changes along the stream."""
    el = np.asarray(elements)
    a = np.cumsum(el == 1)
    b = np.cumsum(el == 2)
    lead = np.sign(a - b)
    lead = lead[lead != 0]
    return int(np.count_nonzero(lead[1:] != lead[:-1]))


def generate(spec: WorkloadSpec, seed: int) -> Stream:
    """Deterministic stream for (spec, seed); placement uses its own substream."""
    if spec.kind == "file":
        if not spec.path:
            raise ValueError("file workload needs a path")
        return read_stream(spec.path)
    n, m, k = spec.n, spec.m, spec.k
    rng = RngStream(seed, f"workload/{spec.kind}").generator
    v = spec.value
    if spec.kind == "uniform":
        el = rng.integers(1, n + 1, size=m)
    elif spec.kind == "zipf":
        w = np.arange(1, n + 1, dtype=np.float64) ** -float(v)
        cdf = np.cumsum(w / w.sum())
        cdf[-1] = 1.0
        el = np.searchsorted(cdf, rng.random(m), side="right") + 1
    elif spec.kind == "single_heavy":
        if not 0.0 <= v <= 1.0:
            raise ValueError("heavy share must lie in [0, 1]")
        if n < 2 and v < 1.0:
            raise ValueError("single_heavy with share < 1 needs n >= 2")
        heavy = _bresenham(m, v)
        rest = rng.integers(2, n + 1, size=m) if n >= 2 else np.ones(m, dtype=np.int64)
        el = np.where(heavy, 1, rest)
    else:
        if n < 2:
            raise ValueError("oscillation needs n >= 2")
        el = _oscillation(m, float(v))
    prng = RngStream(seed, f"placement/{spec.placement}").generator
    if spec.placement == "round_robin":
        sites = np.arange(m) % k + 1
    elif spec.placement == "random":
        sites = prng.integers(1, k + 1, size=m)
    else:
        w = 1.0 / np.arange(1, k + 1)
        cdf = np.cumsum(w / w.sum())
        cdf[-1] = 1.0
        sites = np.searchsorted(cdf, prng.random(m), side="right") + 1
    return Stream(el.astype(np.int64), sites.astype(np.int64), n, k)


def probe_schedule(kind: str, m: int) -> list[int]:
    """``geometric`` (1, 2, 4, ... and m), ``dense``, ``final`` or ``every:<step>``."""
    if m < 1:
        return []
    if kind == "geometric":
        out = [1 << i for i in range(m.bit_length()) if (1 << i) <= m]
        if out[-1] != m:
            out.append(m)
        return out
    if kind == "dense":
        return list(range(1, m + 1))
    if kind == "final":
        return [m]
    if kind.startswith("every:"):
        step = int(kind.split(":", 1)[1])
        out = list(range(step, m + 1, step))
        if not out or out[-1] != m:
            out.append(m)
        return out
    raise ValueError(f"unknown probe schedule {kind!r}")


# ---------------------------------------------------------------------------
# exact values along a stream


def prefix_shannon(elements, probes: Sequence[int]) -> np.ndarray:
    """H of every requested prefix, via H(t) = log2 t - (1/t) sum c log2 c."""
    el = np.asarray(elements, dtype=np.int64)
    c = _running_counts(el).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = c * np.log2(c) - np.where(c > 1, (c - 1) * np.log2(np.maximum(c - 1, 1)), 0.0)
    s = np.cumsum(term)
    t = np.asarray(probes, dtype=np.int64)
    out = np.log2(t) - s[t - 1] / t
    return np.maximum(out, 0.0)


def prefix_tsallis(elements, probes: Sequence[int], q: float) -> np.ndarray:
    el = np.asarray(elements, dtype=np.int64)
    c = _running_counts(el).astype(np.float64)
    s = np.cumsum(c**q - (c - 1) ** q)
    t = np.asarray(probes, dtype=np.int64).astype(np.float64)
    return (1.0 - s[np.asarray(probes) - 1] / t**q) / (q - 1.0)


def window_shannon(elements, probes: Sequence[int], w: int) -> np.ndarray:
    el = np.asarray(elements, dtype=np.int64)
    out = []
    for t in probes:
        part = el[max(0, t - w):t]
        _, cnt = np.unique(part, return_counts=True)
        p = cnt / cnt.sum()
        out.append(max(0.0, float(-(p * np.log2(p)).sum())))
    return np.array(out)


def _running_counts(el: np.ndarray) -> np.ndarray:
    """c[j] = occurrences of el[j] among el[0..j]."""
    order = np.argsort(el, kind="stable")
    s = el[order]
    start = np.r_[0, np.flatnonzero(s[1:] != s[:-1]) + 1]
    rank = np.arange(len(s)) - np.repeat(start, np.diff(np.r_[start, len(s)]))
    out = np.empty(len(el), dtype=np.int64)
    out[order] = rank + 1
    return out


# ---------------------------------------------------------------------------
# single runs


@dataclass(frozen=True)
class TrackConfig:
    """Everything that determines one tracker run."""

    function: str = "shannon"  # shannon | tsallis | generic
    generic_f: str = "shannon"  # f of the generic tracker
    q: float = 2.0
    eps: float = 0.1
    delta: float = 0.05
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    m_max: int | None = None
    window: int | None = None
    probe_schedule: str = "geometric"
    counter: str = "simple"
    engine: str = "fast"
    kappa_override: int | None = None
    strict: bool = True
    m_mode: str = "exact"

    def as_dict(self) -> dict:
        d = asdict(self)
        d["workload"] = self.workload.label()
        return d


def build_tracker(cfg: TrackConfig, seed: int, bits: BitTable):
    k = cfg.workload.k
    if cfg.function == "shannon":
        if cfg.window is not None:
            return SlidingEntropy(k, cfg.eps, cfg.delta, cfg.window, seed, bits, engine=cfg.engine,
                                  kappa_override=cfg.kappa_override)
        return TrackEntropy(k, cfg.eps, cfg.delta, seed, bits, m_max=bits.m_max, strict=cfg.strict,
                            m_mode=cfg.m_mode, counter=cfg.counter, engine=cfg.engine,
                            kappa_override=cfg.kappa_override)
    if cfg.function == "tsallis":
        return TrackTsallis(k, cfg.q, cfg.eps, cfg.delta, seed, bits, m_max=bits.m_max,
                            counter=cfg.counter, engine=cfg.engine, kappa_override=cfg.kappa_override)
    if cfg.function == "generic":
        spec = shannon_f(bits.m_max) if cfg.generic_f == "shannon" else tsallis_g(cfg.q, bits.m_max)
        return GenericTracker(spec, k, cfg.eps, cfg.delta, seed, bits, counter=cfg.counter,
                              engine=cfg.engine, kappa_override=cfg.kappa_override)
    raise ValueError(f"unknown function {cfg.function!r}")


def exact_values(cfg: TrackConfig, stream: Stream, probes: Sequence[int]) -> np.ndarray:
    if not probes:
        return np.zeros(0)
    if cfg.function == "tsallis" or (cfg.function == "generic" and cfg.generic_f == "tsallis"):
        vals = prefix_tsallis(stream.elements, probes, cfg.q)
        return vals * (cfg.q - 1.0) if cfg.function == "generic" else vals
    if cfg.window is not None:
        return window_shannon(stream.elements, probes, cfg.window)
    return prefix_shannon(stream.elements, probes)


def run_track(cfg: TrackConfig, seed: int, stream: Stream | None = None,
              observers: Sequence = ()) -> tuple[RunReport, object]:
    """One seeded run; returns the report and the tracker (for diagnostics).

    ``observers(tracker, stream)`` may build extra protocols that run after
    the tracker's own (for instance to inspect its state at every probe).
    """
    stream = stream if stream is not None else generate(cfg.workload, seed)
    m = len(stream)
    bits = BitTable(stream.n, cfg.m_max or max(m, 2))
    tracker = build_tracker(cfg, seed, bits)
    probes_idx = probe_schedule(cfg.probe_schedule, m)
    exact = dict(zip(probes_idx, exact_values(cfg, stream, probes_idx).tolist()))
    sim = Simulator(stream.k, bits)
    extra = [make(tracker, stream) for make in observers]
    report = sim.run(stream, list(tracker.protocols) + extra, [Probe(t, tracker.query) for t in probes_idx],
                     exact=lambda t: exact[t])
    report.extra = {"seed": seed, "config": cfg.as_dict()}
    if hasattr(tracker, "diagnostics"):
        report.extra["diagnostics"] = tracker.diagnostics()
    return report, tracker


CSV_COLUMNS = ["seed", "probe_index", "exact_H", "estimate", "rel_error", "abs_error", "total_bits",
               "bits_by_tag"]


def report_rows(report: RunReport, seed: int) -> list[dict]:
    return [
        {
            "seed": seed,
            "probe_index": p.index,
            "exact_H": p.exact,
            "estimate": p.estimate,
            "rel_error": p.rel_error,
            "abs_error": p.abs_error,
            "total_bits": p.total_bits,
            "bits_by_tag": json.dumps(p.bits_by_tag, sort_keys=True, separators=(",", ":")),
        }
        for p in report.probes
    ]


def write_csv(rows: Iterable[dict], columns: Sequence[str], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r.get(c, "")) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# sweeps


GRID_KEYS = ("eps", "delta", "k", "w", "q", "counter", "workload")


@dataclass
class SweepSpec:
    """Grid over ``GRID_KEYS``; missing keys take the base config's value."""

    grid: dict = field(default_factory=dict)
    seeds: int = 3
    base: TrackConfig = field(default_factory=TrackConfig)
    budget: int | None = None  # max events per cell
    first_seed: int = 0


SWEEP_COLUMNS = ["cell", "function", "workload", "eps", "delta", "k", "w", "q", "counter", "seeds",
                 "mean_rel_error", "p95_rel_error", "violation_rate", "bits_mean", "bits_sd",
                 "restarts_mean", "paired_bits_delta", "error"]


def _cells(spec: SweepSpec) -> list[dict]:
    for key in spec.grid:
        if key not in GRID_KEYS:
            raise ValueError(f"unknown sweep key {key!r}")
    if not spec.grid:
        return []
    keys = [k for k in GRID_KEYS if k in spec.grid]
    return [dict(zip(keys, vals)) for vals in itertools.product(*(spec.grid[k] for k in keys))]


def _cell_config(base: TrackConfig, cell: dict, budget: int | None) -> TrackConfig:
    wl = base.workload
    if "workload" in cell:
        wl = parse_workload(cell["workload"], wl.n, wl.m, wl.k, wl.placement)
    if "k" in cell:
        wl = replace(wl, k=int(cell["k"]))
    if budget is not None and wl.kind != "file":
        wl = replace(wl, m=min(wl.m, budget))
    cfg = replace(base, workload=wl)
    for key, attr, conv in (("eps", "eps", float), ("delta", "delta", float), ("q", "q", float),
                            ("counter", "counter", str)):
        if key in cell:
            cfg = replace(cfg, **{attr: conv(cell[key])})
    if "w" in cell:
        w = cell["w"]
        cfg = replace(cfg, window=None if w in (None, "infinite") else int(w))
    return cfg


def sweep(spec: SweepSpec) -> list[dict]:
    """Aggregate rows, one per grid cell; a failing cell is recorded and skipped."""
    rows = []
    finals: dict[tuple, list] = {}
    for ci, cell in enumerate(_cells(spec)):
        cfg = _cell_config(spec.base, cell, spec.budget)
        row = {
            "cell": ci, "function": cfg.function, "workload": cfg.workload.label(), "eps": cfg.eps,
            "delta": cfg.delta, "k": cfg.workload.k, "w": cfg.window or "infinite", "q": cfg.q,
            "counter": cfg.counter, "seeds": spec.seeds,
        }
        try:
            errs, bits, restarts = [], [], []
            for s in range(spec.first_seed, spec.first_seed + spec.seeds):
                report, tracker = run_track(cfg, s)
                final = report.probes[-1]
                errs.append(_error_measure(cfg, final))
                bits.append(final.total_bits)
                r = getattr(tracker.protocols[-1], "restarts", None)
                restarts.append(float(np.mean(r.reshape(len(r), -1)[:, -1])) if r is not None else 0.0)
            errs_a = np.array(errs)
            row.update({
                "mean_rel_error": float(errs_a.mean()),
                "p95_rel_error": float(np.percentile(errs_a, 95)),
                "violation_rate": float(np.mean(errs_a > cfg.eps)),
                "bits_mean": float(np.mean(bits)),
                "bits_sd": float(np.std(bits)),
                "restarts_mean": float(np.mean(restarts)),
                "paired_bits_delta": "",
                "error": "",
            })
            pair_key = tuple((k, v) for k, v in sorted(cell.items()) if k != "counter")
            finals.setdefault(pair_key, []).append((cfg.counter, bits, len(rows)))
        except Exception as exc:  # noqa: BLE001
            row.update({c: "" for c in SWEEP_COLUMNS if c not in row})
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    for entries in finals.values():
        by_counter = {c: (b, i) for c, b, i in entries}
        if "simple" in by_counter and "counteach" in by_counter:
            bs, _ = by_counter["simple"]
            bc, ic = by_counter["counteach"]
            rows[ic]["paired_bits_delta"] = float(np.mean(np.array(bc) - np.array(bs)))
    return rows


def _error_measure(cfg: TrackConfig, probe) -> float:
    """Relative error, or absolute error for windowed runs with H <= 1."""
    if cfg.window is not None and probe.exact <= 1.0:
        return probe.abs_error
    return probe.rel_error


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    write_csv(rows, SWEEP_COLUMNS, buf)
    return buf.getvalue()


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(x, dtype=np.float64))
    ly = np.log(np.asarray(y, dtype=np.float64))
    if len(lx) < 2:
        raise DomainError("slope needs at least two points")
    return float(np.polyfit(lx, ly, 1)[0])


# ---------------------------------------------------------------------------
# key-value config files


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment; keys may use - or _."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip().replace("-", "_")] = value.strip()
    return out
