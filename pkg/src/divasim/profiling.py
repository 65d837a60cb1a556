"""Online latency profiling on one reserved row per subarray.

Each subarray gives up its design-slowest row as a latency test region.
Lowering a timing parameter until that row shows a multi-bit codeword error
finds the smallest safe value for the whole subarray, because no other row
in it is slower by design.  Single-bit errors are left to ECC.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .device import MAT_ROWS, external_row
from .ecc import ShuffleLayout, apply_shuffle, codeword_error_counts
from .harness import Device, ErrorLog, run_patterns, standard_patterns
from .variation import PARAMS, STANDARD_TIMING, EnvConditions, TimingParams

CLOCK_NS = 1.25
DDR3_1600_BANDWIDTH = 1600e6 * 64  # bits/s


class DeviceRejected(RuntimeError):
    """Multi-bit errors even at the standard timing."""


@dataclass(frozen=True)
class TestRegionMap:
    """One reserved row per subarray plus the two per-DIMM registers.

    ``rows`` are external addresses.  Test rows are never row-remapped by
    repair, so they stay the design-slowest rows of their subarray.
    """

    __test__ = False  # not a pytest class

    rows: tuple
    internal_rows: tuple
    fail_flag: bool = False
    slowest_region_row: int | None = None
    row_remap_exempt: bool = True

    @property
    def subarrays(self) -> int:
        return len(self.rows)

    def data_rows(self, n_rows: int) -> np.ndarray:
        mask = np.ones(n_rows, dtype=bool)
        mask[list(self.rows)] = False
        return np.nonzero(mask)[0]

    def capacity_overhead(self) -> float:
        return 1.0 / MAT_ROWS


def design_row_max(device: Device) -> np.ndarray:
    """Design-only worst requirement of each local row, summed over parameters."""
    dv = device.with_variation(device.variation.design_only())
    return sum(dv.table(p).max(axis=(0, 2)) for p in PARAMS)


def _map_for_local_rows(device: Device, local_rows) -> TestRegionMap:
    internal = [s * MAT_ROWS + int(r) for s, r in enumerate(local_rows)]
    ext = [int(x) for x in external_row(np.array(internal), device.address_map)]
    return TestRegionMap(tuple(ext), tuple(internal))


def select_test_rows(device: Device) -> TestRegionMap:
    """Per subarray, the row with the largest design-only requirement.

    Process noise is ignored, so the choice is the same for every device of
    a design.  Ties go to the lowest local row.
    """
    score = design_row_max(device)
    local = int(np.argmax(np.round(score, 12)))
    return _map_for_local_rows(device, [local] * device.geometry.subarrays_per_bank)


def select_random_rows(device: Device, seed: int) -> TestRegionMap:
    """Ablation: an arbitrary row per subarray instead of the slowest one."""
    rng = np.random.default_rng(seed)
    local = rng.integers(0, MAT_ROWS, size=device.geometry.subarrays_per_bank)
    return _map_for_local_rows(device, local)


def default_grid(param: str, floor: float = 2.5, step: float = CLOCK_NS,
                 standard: TimingParams = STANDARD_TIMING) -> list[float]:
    top = standard[param]
    n = int(np.floor((top - floor) / step + 1e-9))
    return [round(top - k * step, 6) for k in range(n + 1)]


@dataclass
class ProfileOutcome:
    minimal: TimingParams
    chosen: TimingParams
    margin_cycles: int
    clock_period: float
    env: EnvConditions
    regions: TestRegionMap
    # (param, value, multi-bit codewords, erroneous requests) per tested step
    trace: list = field(default_factory=list)

    FIELDS = ("param", "minimal_ns", "chosen_ns", "standard_ns", "margin_cycles",
              "clock_period_ns", "temp_c", "refresh_ms")

    def rows(self, standard: TimingParams = STANDARD_TIMING):
        return [{"param": p, "minimal_ns": self.minimal[p], "chosen_ns": self.chosen[p],
                 "standard_ns": standard[p], "margin_cycles": self.margin_cycles,
                 "clock_period_ns": self.clock_period, "temp_c": self.env.temperature,
                 "refresh_ms": self.env.refresh_interval} for p in PARAMS]

    def to_csv(self, path_or_file) -> None:
        own = not hasattr(path_or_file, "write")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.DictWriter(fh, self.FIELDS, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())
        finally:
            if own:
                fh.close()

    def report(self) -> str:
        buf = io.StringIO()
        buf.write(f"test regions: {self.regions.subarrays} rows, fail_flag={self.regions.fail_flag}, "
                  f"slowest_region_row={self.regions.slowest_region_row}\n")
        buf.write("param  minimal_ns  chosen_ns\n")
        for p in PARAMS:
            buf.write(f"{p:<5}  {self.minimal[p]:10.2f}  {self.chosen[p]:9.2f}\n")
        return buf.getvalue()


def multibit_codewords(log: ErrorLog, layout: ShuffleLayout | None = None) -> int:
    return int((codeword_error_counts(log, layout) >= 2).sum())


def _first_bad_row(log: ErrorLog, layout) -> int | None:
    merged = log.merged_requests()
    if layout is not None:
        merged = apply_shuffle(layout, merged)
    per_beat = np.unpackbits(merged.bits[..., None], axis=-1).sum(axis=(1, 3))
    bad = (per_beat >= 2).any(axis=1)
    return int(merged.ext_row[bad].min()) if bad.any() else None


def profile(device: Device, env: EnvConditions = EnvConditions(), grids: dict | None = None,
            patterns=None, regions: TestRegionMap | None = None, margin_cycles: int = 1,
            clock_period: float = CLOCK_NS, layout: ShuffleLayout | None = None,
            standard: TimingParams = STANDARD_TIMING, cols=None) -> ProfileOutcome:
    """Descend each parameter's grid (others held at standard) on the test
    rows; the minimal value is the last one with no multi-bit codeword.

    ``layout`` groups bits into codewords as the deployed shuffling would.
    """
    if margin_cycles < 0:
        raise ValueError("margin_cycles must be >= 0")
    regions = regions or select_test_rows(device)
    patterns = standard_patterns() if patterns is None else list(patterns)
    rows = np.array(regions.rows, dtype=np.int64)
    minimal, trace = {}, []
    fail_flag, slowest = False, None
    for p in PARAMS:
        grid = [float(v) for v in (grids or {}).get(p) or default_grid(p, standard=standard)]
        if not any(abs(v - standard[p]) < 1e-9 for v in grid):
            raise ValueError(f"{p} grid must include the standard value {standard[p]}")
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"{p} grid must be strictly descending")
        best = None
        for v in grid:
            log = run_patterns(device, standard.with_value(p, v), env, patterns, 1, rows, cols)
            bad = multibit_codewords(log, layout)
            trace.append((p, v, bad, log.erroneous_requests()))
            if bad:
                fail_flag = True
                row = _first_bad_row(log, layout)
                if slowest is None or (row is not None and row < slowest):
                    slowest = row
                break
            best = v
        if best is None:
            raise DeviceRejected(f"{p} shows multi-bit errors at the standard {standard[p]} ns")
        minimal[p] = best
    minimal_t = TimingParams(**minimal)
    chosen = TimingParams(**{p: min(minimal[p] + margin_cycles * clock_period, standard[p])
                             for p in PARAMS})
    regions = replace(regions, fail_flag=fail_flag, slowest_region_row=slowest)
    return ProfileOutcome(minimal_t, chosen, margin_cycles, clock_period, env, regions, trace)


def reprofile(device: Device, changes: dict, **kwargs) -> ProfileOutcome:
    """Profile again after the device drifted (e.g. aging), given as
    variation-config changes."""
    return profile(device.with_variation(device.variation.replace(**changes)), **kwargs)


@dataclass
class SafetyReport:
    uncorrectable: int
    design_failures: int
    erroneous_requests: int


def data_region_safety(device: Device, outcome: ProfileOutcome, patterns=None,
                       layout: ShuffleLayout | None = None, cols=None) -> SafetyReport:
    """Run the data region (everything but test rows) at the chosen timings.

    ``design_failures`` repeats the run with process noise switched off, so
    only design-induced failures can appear.
    """
    rows = outcome.regions.data_rows(device.geometry.rows_per_bank)
    log = run_patterns(device, outcome.chosen, outcome.env, patterns, 1, rows, cols)
    design = device.with_variation(device.variation.design_only())
    dlog = run_patterns(design, outcome.chosen, outcome.env, patterns, 1, rows, cols)
    return SafetyReport(multibit_codewords(log, layout), dlog.erroneous_requests(),
                        log.erroneous_requests())


def profiling_cost(tested_bytes: float, bandwidth: float = DDR3_1600_BANDWIDTH,
                   pattern_count: int = 1) -> float:
    """Seconds to write then read back ``tested_bytes`` once per pattern."""
    if tested_bytes <= 0 or bandwidth <= 0:
        raise ValueError("tested_bytes and bandwidth must be positive")
    if pattern_count < 0:
        raise ValueError("pattern_count must be >= 0")
    return tested_bytes / (bandwidth / 8.0) * pattern_count * 2


def region_bytes(device_bytes: float) -> float:
    """Capacity reserved by one test row per 512-row subarray."""
    return device_bytes / MAT_ROWS
