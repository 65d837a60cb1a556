"""Read/write latency totals and their reduction against standard timings."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from .variation import PARAMS, STANDARD_TIMING, TimingParams

DDR3_1600_CLOCK_NS = 1.25


def read_latency(t: TimingParams) -> float:
    """ACT -> column read -> PRE -> next ACT: tRCD + tRAS + tRP."""
    return t.tRAS + t.tRP + t.tRCD


def write_latency(t: TimingParams) -> float:
    return t.tWR + t.tRP + t.tRCD


def to_cycles(ns: float, clock_period: float) -> int:
    """Nearest whole number of clock cycles (halves round up)."""
    if clock_period <= 0:
        raise ValueError("clock_period must be positive")
    return int(math.floor(ns / clock_period + 0.5))


@dataclass(frozen=True)
class LatencySummary:
    read_total: float
    write_total: float
    read_standard: float
    write_standard: float
    read_reduction_pct: float
    write_reduction_pct: float
    read_reduction_cycles: int
    write_reduction_cycles: int
    clock_period: float

    def as_row(self) -> dict:
        return asdict(self)


def summarize(timing, standard: TimingParams = STANDARD_TIMING,
              clock_period: float = DDR3_1600_CLOCK_NS) -> LatencySummary:
    """``timing`` may be a :class:`TimingParams` or anything with a
    ``chosen`` attribute holding one (a profiling outcome)."""
    t = getattr(timing, "chosen", timing)
    for p in PARAMS:
        if t[p] > standard[p] + 1e-9:
            raise ValueError(f"{p}={t[p]} exceeds the standard value {standard[p]}")
    rd, wr = read_latency(t), write_latency(t)
    rd0, wr0 = read_latency(standard), write_latency(standard)
    return LatencySummary(
        read_total=rd, write_total=wr, read_standard=rd0, write_standard=wr0,
        read_reduction_pct=100.0 * (1.0 - rd / rd0),
        write_reduction_pct=100.0 * (1.0 - wr / wr0),
        read_reduction_cycles=to_cycles(rd0 - rd, clock_period),
        write_reduction_cycles=to_cycles(wr0 - wr, clock_period),
        clock_period=clock_period)


SUMMARY_FIELDS = ("seed", "temp_c", "refresh_ms", "mechanism", "trcd_ns", "tras_ns", "trp_ns",
                  "twr_ns", "read_ns", "write_ns", "read_reduction_pct", "write_reduction_pct",
                  "read_reduction_cycles", "write_reduction_cycles")


def summary_row(seed, env, mechanism: str, timing: TimingParams,
                standard: TimingParams = STANDARD_TIMING,
                clock_period: float = DDR3_1600_CLOCK_NS) -> dict:
    s = summarize(timing, standard, clock_period)
    return {"seed": seed, "temp_c": env.temperature, "refresh_ms": env.refresh_interval,
            "mechanism": mechanism, "trcd_ns": timing.tRCD, "tras_ns": timing.tRAS,
            "trp_ns": timing.tRP, "twr_ns": timing.tWR, "read_ns": s.read_total,
            "write_ns": s.write_total, "read_reduction_pct": round(s.read_reduction_pct, 4),
            "write_reduction_pct": round(s.write_reduction_pct, 4),
            "read_reduction_cycles": s.read_reduction_cycles,
            "write_reduction_cycles": s.write_reduction_cycles}
