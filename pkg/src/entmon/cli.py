"""Command line: generate streams, run trackers and sweeps, print exact values.

Any option can also come from a ``--config`` file of ``key = value`` lines
(keys are option names with - or _); options on the command line win.
"""
from __future__ import annotations

import argparse
import json
import sys

from .harness import (CSV_COLUMNS, GRID_KEYS, SweepSpec, TrackConfig, parse_workload, read_config,
                      report_rows, run_track, sweep, sweep_csv, write_csv, generate)
from .stream import FrequencyVector, exact_shannon, exact_tsallis, read_stream, write_stream

DEFAULTS = {
    "k": 4, "eps": 0.1, "delta": 0.05, "n": 16, "m": 10000, "m_max": None, "workload": "uniform",
    "placement": "round_robin", "seeds": "1", "window": "infinite", "probe_schedule": "geometric",
    "counter": "simple", "engine": "fast", "kappa_override": None, "q": 2.0, "f": "shannon",
    "m_mode": "exact", "allow_large_eps": False, "seed": 0, "budget": None,
}

CONVERT = {
    "k": int, "eps": float, "delta": float, "n": int, "m": int, "m_max": int, "kappa_override": int,
    "q": float, "seed": int, "budget": int,
}


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _settings(args) -> dict:
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, default in DEFAULTS.items():
        v = getattr(args, key, None)
        if v is None or v is False:
            v = conf.get(key, default if v is None else v)
        if key in CONVERT and v is not None and v != "":
            v = CONVERT[key](v)
        out[key] = v
    out["allow_large_eps"] = _bool(out["allow_large_eps"])
    out["grid"] = {k[5:]: v for k, v in conf.items() if k.startswith("grid_")}
    return out


def parse_seeds(text) -> list[int]:
    """``5`` (seeds 0..4), ``3-7`` (inclusive) or ``1,4,9``."""
    text = str(text).strip()
    if "," in text:
        return [int(x) for x in text.split(",") if x.strip()]
    if "-" in text:
        a, b = text.split("-", 1)
        return list(range(int(a), int(b) + 1))
    return list(range(int(text)))


def _track_config(function: str, s: dict) -> TrackConfig:
    wl = parse_workload(s["workload"], s["n"], s["m"], s["k"], s["placement"])
    window = None if str(s["window"]) in ("infinite", "None", "") else int(str(s["window"]).removeprefix("w:"))
    return TrackConfig(
        function=function, generic_f=s["f"], q=s["q"], eps=s["eps"], delta=s["delta"], workload=wl,
        m_max=s["m_max"], window=window, probe_schedule=s["probe_schedule"], counter=s["counter"],
        engine=s["engine"], kappa_override=s["kappa_override"], strict=not s["allow_large_eps"],
        m_mode=s["m_mode"],
    )


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file with defaults for any option")
    p.add_argument("--k", type=int, help="number of sites")
    p.add_argument("--n", type=int, help="universe size")
    p.add_argument("--m", type=int, help="stream length")
    p.add_argument("--workload", help="uniform, zipf(s), single_heavy(p), oscillation(c) or file:<path>")
    p.add_argument("--placement", choices=["round_robin", "random", "skewed"])


def cmd_generate(args) -> int:
    s = _settings(args)
    wl = parse_workload(s["workload"], s["n"], s["m"], s["k"], s["placement"])
    stream = generate(wl, s["seed"])
    if args.out:
        write_stream(args.out, stream)
    else:
        for j, (e, site) in enumerate(zip(stream.elements.tolist(), stream.sites.tolist()), start=1):
            sys.stdout.write(f"{j} {e} {site}\n")
    return 0


def cmd_track(args) -> int:
    s = _settings(args)
    cfg = _track_config(args.function, s)
    reports = []
    rows = []
    for seed in parse_seeds(s["seeds"]):
        report, _ = run_track(cfg, seed)
        reports.append(json.loads(report.to_json()))
        rows.extend(report_rows(report, seed))
    text = json.dumps(reports, sort_keys=True, separators=(",", ":"))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_csv(rows, CSV_COLUMNS, fh)
    if not args.out and not args.csv:
        write_csv(rows, CSV_COLUMNS, sys.stdout)
    return 0


def _parse_grid(items) -> dict:
    grid = {}
    for item in items or []:
        key, _, values = item.partition("=")
        key = key.strip()
        if key not in GRID_KEYS:
            raise SystemExit(f"unknown grid key {key!r}; choose from {', '.join(GRID_KEYS)}")
        grid[key] = _split_values(values)
    return grid


def _split_values(values: str) -> list[str]:
    # commas inside parentheses belong to a workload argument
    out, depth, cur = [], 0, ""
    for ch in values:
        if ch == "," and depth == 0:
            out.append(cur.strip())
            cur = ""
            continue
        depth += ch == "("
        depth -= ch == ")"
        cur += ch
    if cur.strip():
        out.append(cur.strip())
    return out


def cmd_sweep(args) -> int:
    s = _settings(args)
    grid = {k: _split_values(v) for k, v in s["grid"].items()}
    grid.update(_parse_grid(args.grid))
    seeds = parse_seeds(s["seeds"])
    spec = SweepSpec(grid=grid, seeds=len(seeds), base=_track_config(args.function, s),
                     budget=s["budget"], first_seed=seeds[0] if seeds else 0)
    text = sweep_csv(sweep(spec))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_oracle(args) -> int:
    stream = read_stream(args.stream)
    fv = FrequencyVector.from_elements(stream.elements)
    h = exact_shannon(fv)
    sq = exact_tsallis(fv, args.q)
    out = {
        "m": fv.total,
        "shannon": h,
        "shannon_fbar": h,
        "tsallis": sq,
        "tsallis_fbar": (args.q - 1.0) * sq,
        "q": args.q,
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def _add_tracker_options(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--m-max", dest="m_max", type=int, help="stream length bound used for kappa")
    p.add_argument("--seeds", help="N (seeds 0..N-1), a-b, or a,b,c")
    p.add_argument("--window", help="infinite or a window length")
    p.add_argument("--probe-schedule", dest="probe_schedule", help="geometric, dense, final or every:<step>")
    p.add_argument("--counter", choices=["simple", "counteach"])
    p.add_argument("--engine", choices=["fast", "message"])
    p.add_argument("--kappa-override", dest="kappa_override", type=int)
    p.add_argument("--q", type=float, help="Tsallis order")
    p.add_argument("--f", choices=["shannon", "tsallis"], help="function of the generic tracker")
    p.add_argument("--m-mode", dest="m_mode", choices=["exact", "tracked"])
    p.add_argument("--allow-large-eps", dest="allow_large_eps", action="store_true",
                   help="accept eps above 1/20 for the Shannon tracker")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entmon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a workload stream")
    _add_common(g)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="stream file (default stdout)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("track", help="run a tracker over seeded workloads")
    t.add_argument("function", choices=["shannon", "tsallis", "generic"])
    _add_tracker_options(t)
    t.add_argument("--out", help="JSON report file")
    t.add_argument("--csv", help="per-probe CSV file")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("sweep", help="aggregate a parameter grid")
    s.add_argument("function", nargs="?", default="shannon", choices=["shannon", "tsallis", "generic"])
    _add_tracker_options(s)
    s.add_argument("--grid", action="append", help="key=v1,v2,... (repeatable)")
    s.add_argument("--budget", type=int, help="max events per cell")
    s.add_argument("--out", help="CSV file (default stdout)")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="exact H, S_q and mean f of a stream file")
    o.add_argument("stream")
    o.add_argument("--q", type=float, default=2.0)
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
