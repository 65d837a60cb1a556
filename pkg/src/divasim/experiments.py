"""Multi-device workflows shared by the command line and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ecc import ShuffleLayout, correctable_fraction, synthetic_log
from .harness import DataPattern, Device, ErrorLog, run_patterns
from .profiling import (data_region_safety, profile, select_random_rows,
                        select_test_rows)
from .variation import STANDARD_TIMING, EnvConditions

SHUFFLE_FIELDS = ("seed", "source", "codewords", "identity_fraction", "shuffled_fraction")


def device_log(device: Device, source: str, trp: float, env: EnvConditions,
               patterns=None, rows=None, process_trp: float | None = None,
               n_requests: int = 2000) -> ErrorLog:
    """Error log for shuffling analysis.

    ``device``: the device itself at the reduced tRP.  ``process_only``: the
    same device with every design term switched off, run at ``process_trp``
    (default ``trp``) so that a comparable number of random errors appear.
    ``synthetic``: a generated log with fixed hot positions, no device run.
    """
    patterns = [DataPattern()] if patterns is None else list(patterns)
    if source == "device":
        return run_patterns(device, STANDARD_TIMING.with_value("tRP", trp), env,
                            patterns, 1, rows)
    if source == "process_only":
        dev = device.with_variation(device.variation.process_only())
        t = trp if process_trp is None else process_trp
        return run_patterns(dev, STANDARD_TIMING.with_value("tRP", t), env, patterns, 1, rows)
    if source == "synthetic":
        return synthetic_log(device.seed, n_requests)
    raise ValueError(f"unknown log source {source!r}")


def shuffle_comparison(devices, source: str = "device", trp: float = 7.5,
                       env: EnvConditions = EnvConditions(), layout: str = "diva",
                       check_chip: bool = False, **log_kw) -> list[dict]:
    """Correctable fraction with and without shuffling, one row per device.

    Devices whose log has no erroneous codeword get ``nan`` fractions.
    """
    out = []
    for dev in devices:
        log = device_log(dev, source, trp, env, **log_kw)
        shuffled = ShuffleLayout.named(layout, min(log.chips, 8), log.beats)
        a = correctable_fraction(log, None, check_chip)
        b = correctable_fraction(log, shuffled, check_chip)
        out.append({"seed": dev.seed, "source": source,
                    "codewords": 0 if a is None else int(_codewords(log)),
                    "identity_fraction": float("nan") if a is None else a,
                    "shuffled_fraction": float("nan") if b is None else b})
    return out


def _codewords(log: ErrorLog) -> int:
    merged = log.merged_requests()
    return int(np.unpackbits(merged.bits[:, :8, :, None], axis=-1).any(axis=(1, 3)).sum())


def mean_relative_gain(rows) -> float:
    a = np.nanmean([r["identity_fraction"] for r in rows])
    b = np.nanmean([r["shuffled_fraction"] for r in rows])
    return float(b / a - 1.0)


@dataclass
class SafetyRun:
    seed: int
    env: EnvConditions
    row_choice: str
    chosen: dict
    uncorrectable: int
    design_failures: int
    erroneous_requests: int

    FIELDS = ("seed", "temp_c", "refresh_ms", "row_choice", "trcd_ns", "tras_ns", "trp_ns",
              "twr_ns", "uncorrectable", "design_failures", "erroneous_requests")

    def row(self) -> dict:
        c = self.chosen
        return {"seed": self.seed, "temp_c": self.env.temperature,
                "refresh_ms": self.env.refresh_interval, "row_choice": self.row_choice,
                "trcd_ns": c["tRCD"], "tras_ns": c["tRAS"], "trp_ns": c["tRP"],
                "twr_ns": c["tWR"], "uncorrectable": self.uncorrectable,
                "design_failures": self.design_failures,
                "erroneous_requests": self.erroneous_requests}


def profiling_safety(device: Device, env: EnvConditions, row_choice: str = "test_region",
                     layout: ShuffleLayout | None = None, patterns=None) -> SafetyRun:
    """Profile on the chosen rows, then run the data region at the result."""
    if row_choice == "test_region":
        regions = select_test_rows(device)
    elif row_choice == "random":
        regions = select_random_rows(device, device.seed)
    else:
        raise ValueError(f"unknown row_choice {row_choice!r}")
    out = profile(device, env, patterns=patterns, regions=regions, layout=layout)
    s = data_region_safety(device, out, patterns, layout)
    return SafetyRun(device.seed, env, row_choice, out.chosen.as_dict(), s.uncorrectable,
                     s.design_failures, s.erroneous_requests)
