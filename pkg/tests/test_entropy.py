import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entmon.entropy import BRANCH, TRIGGER, SlidingEntropy, TrackEntropy, TrackProb, shannon_kappa
from entmon.harness import (
    TrackConfig, WorkloadSpec, generate, oscillation_switches, prefix_shannon, run_track,
)
from entmon.netsim import BitTable, Probe, RngStream, Simulator
from entmon.stream import DomainError, FrequencyVector, Stream, exact_fbar, exact_shannon, shannon_f


def _cfg(kind, n, m, k, param=None, **kw):
    kw.setdefault("strict", False)
    return TrackConfig(workload=WorkloadSpec(kind, n, m, k, "random", param), **kw)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(1, 8), min_size=2, max_size=300), st.integers(1, 8))
def test_decomposition_identity(el, z):
    fv = FrequencyVector.from_elements(el)
    m = fv.total
    pz = fv.counts.get(z, 0) / m
    rest = fv.without(z)
    if rest.total == 0:
        return
    lhs = exact_shannon(fv)
    tail = pz * math.log2(1 / pz) if pz > 0 else 0.0
    rhs = (1 - pz) * exact_fbar(rest, shannon_f(), m=m) + tail
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_shannon_kappa_value():
    assert shannon_kappa(0.1, 0.05, 100_000) == 3914302
    assert shannon_kappa(0.1, 0.05, 100_000) == math.ceil(
        480 * 100 * math.log(80) * (2 + math.log2(100_000)))


def _run_prob(stream, eps=0.1, delta=0.05, seed=0):
    tp = TrackProb("p", stream.k, eps, delta, RngStream(seed, "p"))
    probes = list(range(50, len(stream) + 1, 50))
    Simulator(stream.k, BitTable(stream.n, len(stream))).run(stream, [tp], [Probe(t, lambda t: 0.0) for t in probes])
    return tp, probes


def test_track_prob_finds_element_seven():
    m = 3000
    rng = np.random.default_rng(1)
    heavy = np.floor(np.arange(1, m + 1) * 0.6 + 1e-12) > np.floor(np.arange(m) * 0.6 + 1e-12)
    el = np.where(heavy, 7, rng.choice([1, 2, 3, 4, 5, 6, 8], size=m))
    stream = Stream(el, rng.integers(1, 5, size=m), 8, 4)
    tp, probes = _run_prob(stream)
    assert tp.I == 7
    # an early element may hold the whole prefix and trigger first
    assert tp.triggers[-1][1] == 7
    t0 = tp.triggers[-1][0]
    for t in probes:
        if t > t0 + 50:
            st_ = tp.snapshots[t]
            assert st_.element == 7
            exact = 1 - np.mean(el[:t] == 7)
            assert abs(st_.p_minus - exact) <= 0.1 * exact


def test_track_prob_accuracy_heavy():
    m = 5000
    for seed in range(5):
        stream = generate(WorkloadSpec("single_heavy", 16, m, 4, "random", 0.9), seed)
        tp, probes = _run_prob(stream, seed=seed)
        t0 = tp.triggers[0][0]
        ok = []
        for t in probes:
            if t <= t0:
                continue
            exact = 1 - np.mean(stream.elements[:t] == 1)
            ok.append(abs(tp.snapshots[t].p_minus - exact) <= 0.1 * exact)
        assert np.mean(ok) >= 0.95


@pytest.mark.parametrize("c", [0.58, 0.62, 0.7])
def test_track_prob_oscillation_updates_bounded(c):
    m = 100_000
    bound = math.log(m) / math.log(1.3)
    stream = generate(WorkloadSpec("oscillation", 2, m, 4, "random", c), 0)
    tp = TrackProb("p", 4, 0.1, 0.05, RngStream(0, "p"))
    Simulator(4, BitTable(2, m)).run(stream, [tp], [])
    assert 1 <= len(tp.triggers) <= bound
    assert oscillation_switches(stream.elements) <= bound
    ts = [t for t, _ in tp.triggers]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    if c > TRIGGER + 0.02:
        # each element in turn climbs past the trigger
        assert len(tp.triggers) >= 5


def test_track_prob_no_trigger_when_light():
    stream = generate(WorkloadSpec("uniform", 8, 2000, 3, "random"), 0)
    tp, probes = _run_prob(stream)
    # the first items may briefly make one element frequent
    assert all(t < 50 for t, _ in tp.triggers)
    assert tp.snapshots[probes[-1]].p_hat < 0.2


def test_eps_above_limit_rejected():
    with pytest.raises(DomainError):
        TrackEntropy(2, 0.1, 0.05, 0, BitTable(4, 100))
    TrackEntropy(2, 0.05, 0.05, 0, BitTable(4, 100), kappa_override=5)
    TrackEntropy(2, 0.1, 0.05, 0, BitTable(4, 100), strict=False, kappa_override=5)
    with pytest.raises(ValueError):
        TrackEntropy(2, 0.05, 0.05, 0, BitTable(4, 100), m_mode="guess", kappa_override=5)


def test_constant_stream_estimate_near_zero():
    cfg = _cfg("uniform", 1, 5000, 4, eps=0.05, kappa_override=2000, strict=True)
    report, tr = run_track(cfg, 0)
    final = report.probes[-1]
    assert final.exact == 0.0
    assert tr.branch(5000)
    assert abs(final.estimate) <= 0.05
    with pytest.raises(DomainError):
        tr.query(0)


def test_balanced_two_elements():
    cfg = _cfg("uniform", 2, 8000, 4, eps=0.05, kappa_override=20000, strict=True)
    report, tr = run_track(cfg, 1)
    final = report.probes[-1]
    assert not tr.branch(8000)
    assert final.rel_error <= 0.05


@pytest.mark.parametrize("p", [0.62, 0.66, 0.69])
def test_branch_boundary(p):
    m = 8000
    cfg = _cfg("single_heavy", 16, m, 4, param=p, eps=0.05, kappa_override=30000, strict=True)
    _, tr = run_track(cfg, 2)
    h = prefix_shannon(generate(cfg.workload, 2).elements, [m])[0]
    plain = tr.bank.estimate(m)
    ph = tr.prob.snapshots[m].p_hat
    decomposed = (1 - ph) * tr.bank.estimate_excluding(m) + ph * math.log2(1 / ph)
    assert abs(plain - h) <= 0.1 * h
    assert abs(decomposed - h) <= 0.1 * h
    assert tr.branch(m) == (ph > BRANCH)


def test_heavy_stream_uses_decomposition():
    m = 20_000
    cfg = _cfg("single_heavy", 16, m, 8, param=0.9, eps=0.05, kappa_override=20000, strict=True)
    report, tr = run_track(cfg, 3)
    assert tr.branch(m)
    assert tr.prob.I == 1
    assert report.probes[-1].rel_error <= 0.05
    assert tr.diagnostics()["triggers"][-1][1] == 1


def test_tracked_m_mode_charges_counter():
    cfg = _cfg("zipf", 32, 6000, 4, param=1.2, eps=0.05, kappa_override=5000, strict=True)
    exact_rep, _ = run_track(cfg, 0)
    from dataclasses import replace
    tracked_rep, tr = run_track(replace(cfg, m_mode="tracked"), 0)
    by_tag = tracked_rep.probes[-1].bits_by_tag
    assert by_tag.get("H.m", 0) > 0
    assert "H.m" not in exact_rep.probes[-1].bits_by_tag
    assert abs(tracked_rep.probes[-1].estimate - exact_rep.probes[-1].estimate) < 0.01 * exact_rep.probes[-1].exact
    assert tracked_rep.probes[-1].total_bits > exact_rep.probes[-1].total_bits


def test_trigger_constants():
    assert TRIGGER == 0.59 and BRANCH == 0.65


# sliding window


def test_sliding_constant_window():
    cfg = _cfg("uniform", 1, 3000, 3, eps=0.1, window=500, kappa_override=2000)
    report, _ = run_track(cfg, 0)
    for p in report.probes:
        assert -0.1 <= p.estimate <= 0.1


def test_sliding_window_larger_than_stream_matches_infinite():
    m = 4000
    base = _cfg("uniform", 16, m, 4, eps=0.05, kappa_override=20000, strict=True)
    from dataclasses import replace
    inf_rep, _ = run_track(base, 5)
    win_rep, _ = run_track(replace(base, window=m), 5)
    a, b = inf_rep.probes[-1], win_rep.probes[-1]
    assert a.exact == pytest.approx(b.exact, rel=1e-12)
    assert abs(a.estimate - b.estimate) <= 0.1 * a.exact


def test_sliding_uniform_relative():
    m, w = 8000, 1024
    cfg = _cfg("uniform", 16, m, 4, eps=0.1, window=w, probe_schedule="every:1000")
    report, tr = run_track(cfg, 1)
    assert tr.kappa == pytest.approx(tr.kappa)
    ok = [p.rel_error <= 0.1 for p in report.probes if p.index >= w]
    assert np.mean(ok) >= 0.95


def test_sliding_rejects_bad_window():
    with pytest.raises(ValueError):
        SlidingEntropy(2, 0.1, 0.05, 0, 0, BitTable(4, 100))


def test_track_prob_before_any_trigger():
    tp = TrackProb("p", 2, 0.1, 0.05, RngStream(0, "p"))
    assert tp.p_minus() is None
    assert tp.state().p_hat == 0.0
