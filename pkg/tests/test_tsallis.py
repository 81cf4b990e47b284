import numpy as np
import pytest
from dataclasses import replace

from entmon.harness import TrackConfig, WorkloadSpec, generate, prefix_tsallis, run_track
from entmon.netsim import BitTable
from entmon.stream import DomainError, FrequencyVector, exact_fbar, exact_tsallis, tsallis_g
from entmon.tsallis import HEAVY_SHARE, MAX_HEAVY, RETIRE, TRIGGER, HeavyState, TrackTsallis


def _cfg(kind, n, m, k, param=None, **kw):
    return TrackConfig(function="tsallis", workload=WorkloadSpec(kind, n, m, k, "random", param), **kw)


def test_heavy_decomposition_identity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        el = rng.integers(1, 6, size=int(rng.integers(5, 200)))
        q = float(rng.choice([1.5, 2.0, 2.5, 3.0]))
        fv = FrequencyVector.from_elements(el)
        m = fv.total
        z = [e for e, c in fv.counts.items() if c >= 0.3 * m]
        rest = fv.without(*z)
        spec = tsallis_g(q)
        lhs = (q - 1) * exact_tsallis(fv, q)
        heavy = sum(spec.f(fv.counts[e], m) for e in z) / m
        light = (rest.total / m) * exact_fbar(rest, spec, m=m) if rest.total else 0.0
        assert lhs == pytest.approx(light + heavy, rel=1e-9, abs=1e-12)


def test_constants():
    assert (HEAVY_SHARE, TRIGGER, RETIRE, MAX_HEAVY) == (0.3, 0.29, 0.28, 4)
    assert HeavyState((1,), (3.0,), 2.0).total == 5.0


def test_order_must_exceed_one():
    with pytest.raises(DomainError):
        TrackTsallis(2, 1.0, 0.1, 0.05, 0, BitTable(4, 100))
    with pytest.raises(DomainError):
        tsallis_g(0.5)


def test_kappa_certified_value():
    tr = TrackTsallis(2, 2.0, 0.1, 0.05, 0, BitTable(4, 100_000))
    assert tr.kappa == 94652
    assert tr.params.pi_sup == pytest.approx(54.0)


def test_single_element_stream():
    report, tr = run_track(_cfg("uniform", 1, 4000, 3, kappa_override=2000), 0)
    final = report.probes[-1]
    assert final.exact == 0.0
    assert abs(final.estimate) < 0.01
    assert tr.heavy.Z == (1,)


def test_balanced_two_elements():
    report, tr = run_track(_cfg("uniform", 2, 6000, 4, eps=0.1), 0)
    final = report.probes[-1]
    assert final.exact == pytest.approx(0.5, abs=0.01)
    assert final.rel_error <= 0.1
    assert set(tr.heavy.Z) == {1, 2}


def test_light_stream_has_empty_heavy_set():
    report, tr = run_track(_cfg("uniform", 32, 6000, 4, kappa_override=20000), 1)
    assert tr.heavy.snapshots[6000].members == ()
    assert report.probes[-1].rel_error <= 0.05


@pytest.mark.parametrize("kind,n,param", [("uniform", 4, None), ("zipf", 8, 1.5), ("single_heavy", 16, 0.8)])
def test_heavy_set_at_most_four(kind, n, param):
    m = 5000
    cfg = _cfg(kind, n, m, 4, param, kappa_override=5000, probe_schedule="every:100")
    report, tr = run_track(cfg, 2)
    for st in tr.heavy.snapshots.values():
        assert len(st.members) <= MAX_HEAVY
    stream = generate(cfg.workload, 2)
    fv = FrequencyVector.from_elements(stream.elements)
    truly_heavy = {e for e, c in fv.counts.items() if c >= 0.3 * m}
    assert truly_heavy <= set(tr.heavy.Z)
    assert report.probes[-1].rel_error <= 0.1


def test_heavy_counts_track_exact_counts():
    m = 8000
    cfg = _cfg("single_heavy", 16, m, 4, 0.7, kappa_override=2000)
    _, tr = run_track(cfg, 3)
    st = tr.heavy.snapshots[m]
    assert st.members == (1,)
    assert abs(st.counts[0] - 0.7 * m) <= 0.1 * 0.7 * m
    assert abs(st.total - m) <= 0.1 * m


def test_order_three():
    m = 5000
    cfg = replace(_cfg("zipf", 32, m, 4, 1.2, kappa_override=20000), q=3.0)
    report, tr = run_track(cfg, 4)
    exact = prefix_tsallis(generate(cfg.workload, 4).elements, [m], 3.0)[0]
    assert report.probes[-1].exact == pytest.approx(exact)
    assert report.probes[-1].rel_error <= 0.1


def test_query_on_empty_prefix():
    tr = TrackTsallis(2, 2.0, 0.1, 0.05, 0, BitTable(4, 100), kappa_override=3)
    with pytest.raises(DomainError):
        tr.query(0)
