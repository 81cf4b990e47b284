import io
import math
from pathlib import Path

import numpy as np
import pytest

from entmon.harness import (
    CSV_COLUMNS, SWEEP_COLUMNS, SweepSpec, TrackConfig, WorkloadSpec, fit_slope, generate,
    oscillation_switches, parse_workload, prefix_shannon, prefix_tsallis, probe_schedule, read_config,
    report_rows, run_track, sweep, sweep_csv, window_shannon, write_csv,
)
from entmon.stream import DomainError, FrequencyVector, exact_shannon, exact_tsallis

GOLDEN = Path(__file__).parent / "data" / "golden_sweep.csv"


def test_uniform_single_element_is_constant():
    s = generate(WorkloadSpec("uniform", 1, 500, 3), 0)
    assert set(s.elements.tolist()) == {1}
    assert len(s) == 500


def test_zipf_two_elements_ratio():
    s = generate(WorkloadSpec("zipf", 2, 20_000, 2, param=1.0), 4)
    c = np.bincount(s.elements, minlength=3)
    assert abs(c[1] / c[2] - 2.0) <= 0.2


def test_zipf_default_exponent():
    assert WorkloadSpec("zipf").value == 1.1
    assert WorkloadSpec("oscillation").value == 0.58
    assert WorkloadSpec("zipf", param=1.3).label() == "zipf(1.3)"


def test_oscillation_switches_bounded():
    m = 100_000
    s = generate(WorkloadSpec("oscillation", 2, m, 4), 0)
    sw = oscillation_switches(s.elements)
    assert 5 <= sw <= math.log(m) / math.log(1.3)


@pytest.mark.parametrize("p", [0.0, 0.3, 0.8, 0.95, 1.0])
def test_single_heavy_share(p):
    m = 7777
    s = generate(WorkloadSpec("single_heavy", 10, m, 3, param=p), 1)
    share = np.mean(s.elements == 1)
    assert abs(share - p) <= 0.01
    prefix = np.cumsum(s.elements == 1) / np.arange(1, m + 1)
    assert np.all(np.abs(prefix[100:] - p) <= 0.01)


def test_infeasible_specs():
    with pytest.raises(ValueError):
        generate(WorkloadSpec("single_heavy", 4, 10, 1, param=1.5), 0)
    with pytest.raises(ValueError):
        generate(WorkloadSpec("oscillation", 1, 10, 1), 0)
    with pytest.raises(ValueError):
        generate(WorkloadSpec("oscillation", 2, 10, 1, param=0.4), 0)
    with pytest.raises(ValueError):
        WorkloadSpec("gaussian")
    with pytest.raises(ValueError):
        WorkloadSpec("uniform", 0, 10, 1)
    with pytest.raises(ValueError):
        WorkloadSpec("uniform", placement="nearest")


@pytest.mark.parametrize("placement", ["round_robin", "random", "skewed"])
def test_placements(placement):
    s = generate(WorkloadSpec("uniform", 4, 6000, 4, placement), 2)
    c = np.bincount(s.sites, minlength=5)[1:]
    assert c.sum() == 6000 and (c > 0).all()
    if placement == "round_robin":
        assert s.sites[:5].tolist() == [1, 2, 3, 4, 1]
    if placement == "skewed":
        assert c[0] > c[1] > c[3]


def test_paired_seeds_identical_streams():
    a = generate(WorkloadSpec("zipf", 16, 3000, 4, "random"), 9)
    b = generate(WorkloadSpec("zipf", 16, 3000, 4, "random"), 9)
    c = generate(WorkloadSpec("zipf", 16, 3000, 4, "random"), 10)
    assert a.to_bytes() == b.to_bytes()
    assert a.to_bytes() != c.to_bytes()
    # placement draws do not disturb the element sequence
    d = generate(WorkloadSpec("zipf", 16, 3000, 4, "skewed"), 9)
    assert np.array_equal(a.elements, d.elements)


def test_parse_workload():
    assert parse_workload("zipf(1.2)", 64, 100, 8) == WorkloadSpec("zipf", 64, 100, 8, "round_robin", 1.2)
    assert parse_workload("file:/x/y", 1, 1, 1).path == "/x/y"
    assert parse_workload(" uniform ", 4, 10, 2).kind == "uniform"


def test_file_workload(tmp_path):
    from entmon.stream import write_stream
    s = generate(WorkloadSpec("uniform", 5, 50, 2), 0)
    path = tmp_path / "s.txt"
    write_stream(path, s)
    back = generate(WorkloadSpec("file", path=str(path)), 123)
    assert np.array_equal(back.elements, s.elements)
    with pytest.raises(ValueError):
        generate(WorkloadSpec("file"), 0)


def test_probe_schedules():
    assert probe_schedule("geometric", 10) == [1, 2, 4, 8, 10]
    assert probe_schedule("geometric", 8) == [1, 2, 4, 8]
    assert probe_schedule("dense", 3) == [1, 2, 3]
    assert probe_schedule("final", 7) == [7]
    assert probe_schedule("every:3", 10) == [3, 6, 9, 10]
    assert probe_schedule("geometric", 0) == []
    with pytest.raises(ValueError):
        probe_schedule("sometimes", 5)


def test_prefix_oracles_match_direct():
    rng = np.random.default_rng(2)
    el = rng.integers(1, 9, size=400)
    probes = [1, 2, 17, 128, 400]
    h = prefix_shannon(el, probes)
    s = prefix_tsallis(el, probes, 2.5)
    wh = window_shannon(el, probes, 50)
    for i, t in enumerate(probes):
        fv = FrequencyVector.from_elements(el[:t])
        assert h[i] == pytest.approx(exact_shannon(fv), rel=1e-9, abs=1e-12)
        assert s[i] == pytest.approx(exact_tsallis(fv, 2.5), rel=1e-9, abs=1e-12)
        assert wh[i] == pytest.approx(exact_shannon(FrequencyVector.window(el, t, 50)), rel=1e-9, abs=1e-12)


def test_run_track_report_and_rows():
    cfg = TrackConfig(workload=WorkloadSpec("zipf", 16, 2000, 4), eps=0.05, kappa_override=2000)
    report, tr = run_track(cfg, 3)
    assert [p.index for p in report.probes] == probe_schedule("geometric", 2000)
    assert report.extra["seed"] == 3
    assert report.extra["config"]["workload"] == "zipf(1.1)"
    assert report.extra["diagnostics"]["kappa"] == 2000
    bits = [p.total_bits for p in report.probes]
    assert bits == sorted(bits)
    assert bits[-1] == report.total_bits
    rows = report_rows(report, 3)
    buf = io.StringIO()
    write_csv(rows, CSV_COLUMNS, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == len(report.probes) + 1


def test_generic_tracker_values():
    cfg = TrackConfig(function="generic", generic_f="tsallis", q=2.0,
                      workload=WorkloadSpec("uniform", 16, 2000, 4), kappa_override=5000)
    report, _ = run_track(cfg, 0)
    final = report.probes[-1]
    assert final.exact == pytest.approx(1.0 * prefix_tsallis(generate(cfg.workload, 0).elements, [2000], 2.0)[0])
    assert final.rel_error < 0.05
    with pytest.raises(ValueError):
        run_track(TrackConfig(function="renyi"), 0)


def test_run_track_deterministic():
    cfg = TrackConfig(workload=WorkloadSpec("single_heavy", 16, 3000, 4, "random", 0.8), eps=0.05,
                      kappa_override=3000)
    assert run_track(cfg, 1)[0].to_json() == run_track(cfg, 1)[0].to_json()


def _tiny_sweep():
    base = TrackConfig(workload=WorkloadSpec("uniform", 8, 400, 2, "random"), eps=0.05, kappa_override=200)
    return SweepSpec(grid={"k": [2, 3], "counter": ["simple", "counteach"]}, seeds=2, base=base)


def test_sweep_golden_file():
    text = sweep_csv(sweep(_tiny_sweep()))
    assert text == GOLDEN.read_text()


def test_sweep_rows():
    rows = sweep(_tiny_sweep())
    assert len(rows) == 4
    assert [r["counter"] for r in rows] == ["simple", "counteach", "simple", "counteach"]
    assert rows[0]["paired_bits_delta"] == ""
    assert isinstance(rows[1]["paired_bits_delta"], float)
    assert all(r["error"] == "" for r in rows)


def test_sweep_empty_grid():
    assert sweep_csv(sweep(SweepSpec())) == ",".join(SWEEP_COLUMNS) + "\n"


def test_sweep_failing_cell_recorded():
    base = TrackConfig(workload=WorkloadSpec("uniform", 8, 300, 2), kappa_override=50)
    rows = sweep(SweepSpec(grid={"eps": [0.05, 0.2]}, seeds=1, base=base))
    assert rows[0]["error"] == ""
    assert rows[1]["error"].startswith("DomainError")
    with pytest.raises(ValueError):
        sweep(SweepSpec(grid={"colour": [1]}))


def test_sweep_budget_and_window():
    base = TrackConfig(workload=WorkloadSpec("uniform", 8, 10_000, 2), eps=0.05, kappa_override=100)
    rows = sweep(SweepSpec(grid={"w": ["infinite", 64]}, seeds=1, base=base, budget=500))
    assert rows[0]["w"] == "infinite" and rows[1]["w"] == 64
    assert all(r["error"] == "" for r in rows)


def test_fit_slope():
    assert fit_slope([1, 2, 4, 8], [3, 6, 12, 24]) == pytest.approx(1.0)
    assert fit_slope([4, 16, 64], [2, 4, 8]) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        fit_slope([1], [1])


def test_read_config(tmp_path):
    p = tmp_path / "c.conf"
    p.write_text("# defaults\nk = 8\neps=0.05  # tight\nprobe-schedule = dense\n\n")
    assert read_config(p) == {"k": "8", "eps": "0.05", "probe_schedule": "dense"}
    p.write_text("k 8\n")
    with pytest.raises(ValueError):
        read_config(p)
