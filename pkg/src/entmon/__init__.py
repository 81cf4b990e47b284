"""Entropy monitoring over a coordinator and k sites, with a deterministic simulator."""
from .ams import (ChainBank, FastChainBank, FastWindowBank, GenericTracker, InfeasibleError, KappaParams,
                  RankedSample, WindowBank, compute_kappa, eps_f, sliding_kappa)
from .entropy import SlidingEntropy, TrackEntropy, TrackProb, shannon_kappa
from .harness import SweepSpec, TrackConfig, WorkloadSpec, generate, probe_schedule, run_track, sweep
from .netsim import (BitTable, CommLedger, Message, Network, Probe, ProbeResult, Protocol, RngStream,
                     RunReport, Simulator)
from .sketches import CountAll, CountEach, CountEachSimple, CountMinSketch
from .stream import (DomainError, FrequencyVector, FunctionSpec, Stream, StreamEvent, exact_fbar,
                     exact_shannon, exact_tail_frequency, exact_tsallis, expected_X_oracle, read_stream,
                     shannon_f, tsallis_g, write_stream)
from .tsallis import HeavySet, TrackTsallis

__all__ = [
    "BitTable", "ChainBank", "CommLedger", "CountAll", "CountEach", "CountEachSimple", "CountMinSketch",
    "DomainError", "FastChainBank", "FastWindowBank", "FrequencyVector", "FunctionSpec", "GenericTracker",
    "HeavySet", "InfeasibleError", "KappaParams", "Message", "Network", "Probe", "ProbeResult", "Protocol",
    "RankedSample", "RngStream", "RunReport", "Simulator", "SlidingEntropy", "Stream", "StreamEvent",
    "SweepSpec", "TrackConfig", "TrackEntropy", "TrackProb", "TrackTsallis", "WindowBank", "WorkloadSpec",
    "compute_kappa", "eps_f", "exact_fbar", "exact_shannon", "exact_tail_frequency", "exact_tsallis",
    "expected_X_oracle", "generate", "probe_schedule", "read_stream", "run_track", "shannon_f",
    "shannon_kappa", "sliding_kappa", "sweep", "tsallis_g", "write_stream",
]
