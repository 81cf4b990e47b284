import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entmon.harness import WorkloadSpec, fit_slope, generate
from entmon.netsim import BitTable, Probe, Protocol, RngStream, Simulator
from entmon.sketches import (
    CountAll, CountEach, CountEachSimple, CountMinSketch, next_threshold, threshold_tables,
)
from entmon.stream import DomainError, Stream


def _stream(el, k=1, sites=None, n=None):
    el = np.asarray(el, dtype=np.int64)
    if sites is None:
        sites = np.arange(len(el)) % k + 1
    return Stream(el, sites, n or max(1, int(el.max()) if len(el) else 1), k)


class _Watch(Protocol):
    """Calls ``fn(t)`` at every quiescent point (after each event)."""

    def __init__(self, fn):
        self.fn = fn

    def after_event(self, event):
        self.fn(event.global_index)


# CountEachSimple


def test_ces_powers_of_two():
    ces = CountEachSimple("c", 1, 1.0)
    sim = Simulator(1, BitTable(1, 1000))
    sim.run(_stream(np.ones(1000)), [ces], [])
    assert sim.ledger.messages() == 10
    assert ces.estimate == 512


def test_ces_no_matching_items():
    ces = CountEachSimple("c", 2, 0.1, match=lambda e: e == 9)
    sim = Simulator(2, BitTable(9, 100))
    sim.run(_stream([1, 2, 3, 1], k=2, n=9), [ces], [])
    assert ces.estimate == 0
    assert sim.ledger.messages() == 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=400), st.integers(1, 5),
       st.sampled_from([0.05, 0.1, 0.5, 1.0]))
def test_ces_sandwich_and_message_bound(sites_raw, k, eps):
    sites = [min(s, k) for s in sites_raw]
    m = len(sites)
    ces = CountEachSimple("c", k, eps)
    bad = []

    def check(t):
        est = ces.estimate
        if not (t / (1 + eps) - 1e-9 <= est <= t * (1 + eps) + 1e-9):
            bad.append((t, est))

    sim = Simulator(k, BitTable(2, max(m, 2)))
    sim.run(_stream(np.ones(m), k=k, sites=np.array(sites)), [ces, _Watch(check)], [])
    assert not bad
    assert ces.estimate <= m
    # a site with count c has issued 1 + floor(log_{1+eps} c) reports at most
    bound = k * (math.floor(math.log(m) / math.log1p(eps) + 1e-9) + 1)
    assert sim.ledger.messages() <= bound


def test_threshold_tables_match_ladder():
    nrep, lastrep = threshold_tables(0.25, 200)
    v, ladder = 1, []
    while v <= 200:
        ladder.append(v)
        v = next_threshold(v, 0.25)
    for c in range(201):
        below = [x for x in ladder if x <= c]
        assert nrep[c] == len(below)
        assert lastrep[c] == (below[-1] if below else 0)


def test_ladder_strictly_increases():
    assert next_threshold(0, 0.01) == 1
    for v in range(1, 300):
        assert next_threshold(v, 0.01) > v


# CountEach


def _count_each_run(k, eps, m, seed, placement="random"):
    wl = WorkloadSpec("uniform", 1, m, k, placement)
    stream = generate(wl, seed)
    ce = CountEach("c", k, eps, 0.05, RngStream(seed, "ce"))
    sim = Simulator(k, BitTable(1, m))
    sim.run(stream, [ce], [])
    return ce.estimate, sim.ledger.messages()


def test_count_each_single_site_is_exact_at_first():
    est, msgs = _count_each_run(1, 0.1, 20, 0)
    assert est == 20
    assert msgs == 20


def test_count_each_message_scaling_in_k():
    msgs = [_count_each_run(k, 0.05, 100_000, 1)[1] for k in (16, 64)]
    slope = fit_slope([16, 64], msgs)
    assert 0.3 <= slope <= 0.7, msgs


def test_count_each_unbiased():
    m = 20_000
    ests = np.array([_count_each_run(16, 0.1, m, s)[0] for s in range(60)])
    se = ests.std(ddof=1) / math.sqrt(len(ests))
    assert abs(ests.mean() - m) <= 4 * se + 1.0
    assert np.mean(np.abs(ests - m) <= 0.1 * m) >= 0.95


# CountAll


def _count_all_violations(stream, eps):
    k = stream.k
    ca = CountAll("a", k, eps)
    counts = {}
    worst = [0.0]
    el = stream.elements

    def check(t):
        e = int(el[t - 1])
        counts[e] = counts.get(e, 0) + 1
        for i, c in counts.items():
            worst[0] = max(worst[0], abs(ca.query(i) - c / t))

    Simulator(k, BitTable(stream.n, len(stream))).run(stream, [ca, _Watch(check)], [])
    return ca, worst[0]


def test_count_all_single_element():
    ca, worst = _count_all_violations(_stream(np.ones(500), k=2), 0.05)
    assert 0.95 < ca.query(1) <= 1.0
    assert worst < 0.05


def test_count_all_uniform_band():
    stream = generate(WorkloadSpec("uniform", 10, 5000, 4, "random"), 3)
    ca, worst = _count_all_violations(stream, 0.05)
    for i in range(1, 11):
        assert 0.05 < ca.query(i) < 0.15
    assert worst < 0.05


@pytest.mark.parametrize("kind,param", [("oscillation", 0.58), ("zipf", 1.2), ("single_heavy", 0.7)])
def test_count_all_deterministic_bound(kind, param):
    stream = generate(WorkloadSpec(kind, 8, 4000, 5, "skewed", param), 11)
    _, worst = _count_all_violations(stream, 0.01)
    assert worst < 0.01


def test_count_all_query_before_items():
    ca = CountAll("a", 1, 0.1)
    Simulator(1, BitTable(2, 2)).run(_stream([]), [ca], [])
    with pytest.raises(DomainError):
        ca.query(1)


# CountMin


def test_count_min_dimensions_and_basic_contract():
    sk = CountMinSketch(0.01, 0.01, rng=RngStream(0, "cm"))
    assert sk.width == math.ceil(math.e / 0.01)
    assert sk.depth == math.ceil(math.log(100))
    assert sk.query(3) == 0
    for _ in range(10):
        sk.update(5)
    assert sk.query(5) >= 10
    assert sk.payload_bits(17) == sk.width * sk.depth * 17


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 500), max_size=300), st.lists(st.integers(1, 500), max_size=300))
def test_count_min_merge_equals_concatenation(a, b):
    rng = RngStream(1, "cm")
    sa = CountMinSketch(0.05, 0.1, rng=rng)
    sb = CountMinSketch(0.05, 0.1, seeds=sa.seeds)
    sc = CountMinSketch(0.05, 0.1, seeds=sa.seeds)
    sa.update_many(a)
    sb.update_many(b)
    sc.update_many(a + b)
    merged = sa.merge(sb)
    assert np.array_equal(merged.table, sc.table)
    counts = {}
    for e in a + b:
        counts[e] = counts.get(e, 0) + 1
    for e in range(1, 501, 7):
        assert merged.query(e) >= counts.get(e, 0)


def test_count_min_update_many_equals_updates():
    s1 = CountMinSketch(0.1, 0.05)
    s2 = CountMinSketch(0.1, 0.05, seeds=s1.seeds)
    items = [1, 5, 5, 9, 200, 1]
    s1.update_many(items)
    for e in items:
        s2.update(e)
    assert np.array_equal(s1.table, s2.table)
    assert s1.query_many([1, 5, 9]).tolist() == [s1.query(1), s1.query(5), s1.query(9)]


def test_count_min_serialization_round_trip():
    sk = CountMinSketch(0.1, 0.05, rng=RngStream(2, "cm"))
    sk.update_many([1, 2, 3, 3, 3])
    data = sk.to_bytes()
    assert len(data) == 8 + 8 * sk.depth + 8 * sk.depth * sk.width
    back = CountMinSketch.from_bytes(data)
    assert back.compatible(sk)
    assert np.array_equal(back.table, sk.table)
    assert back.query(3) == sk.query(3)


def test_count_min_merge_mismatch():
    a = CountMinSketch(0.1, 0.05, rng=RngStream(1, "x"))
    b = CountMinSketch(0.1, 0.05, rng=RngStream(2, "x"))
    c = CountMinSketch(0.2, 0.05, seeds=a.seeds)
    with pytest.raises(ValueError):
        a.merge(b)
    with pytest.raises(ValueError):
        a.merge(c)
    with pytest.raises(ValueError):
        CountMinSketch(0.0, 0.5)
