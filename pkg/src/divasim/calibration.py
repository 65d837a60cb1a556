"""Fit the temperature and refresh sensitivities to target error-count changes.

Environment terms shift every cell's requirement by the same amount, so a
request fails at shift ``E`` iff its largest requirement exceeds
``applied - E``.  Computing that per-request maximum once turns each fit into
a one-dimensional bisection on ``E``.  The fitted coefficients are then
checked through the ordinary harness, an independent path through the
failure kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .harness import (Device, cosine_similarity, env_sensitivity,
                      standard_patterns)
from .variation import (CHARGE_PARAMS, REFERENCE_REFRESH_MS, REFERENCE_TEMP_C,
                        STANDARD_TIMING, EnvConditions)


@dataclass
class CalibrationTargets:
    param: str = "tRP"
    applied: float = 8.75
    temp_high: float = 85.0
    temp_reduction: float = 0.90     # errors drop this much going temp_high -> 45 C
    refresh_long: float = 256.0
    refresh_reduction: float = 0.15  # errors drop this much going refresh_long -> 64 ms
    tolerance: float = 0.002         # relative tolerance on the matched count


@dataclass
class CalibrationResult:
    temp_coeff: float
    refresh_coeff: float
    base_count: int
    hot_count: int
    long_count: int
    targets: CalibrationTargets = field(repr=False)

    def note(self) -> str:
        t = self.targets
        return (f"fit on {t.param}={t.applied} ns: {self.base_count} erroneous requests at "
                f"45 C/64 ms, {self.hot_count} at {t.temp_high:g} C, "
                f"{self.long_count} at {t.refresh_long:g} ms")


class RequestCriticals:
    """Per-request largest requirement, pooled over the pattern set.

    Runs whose failures are identical (e.g. all striped patterns for a
    precharge parameter) share one evaluation.
    """

    def __init__(self, device: Device, param: str, patterns, rows=None, cols=None,
                 floor: float = 0.0):
        rows = device.all_rows() if rows is None else np.asarray(rows, dtype=np.int64)
        cols = device.all_cols() if cols is None else np.asarray(cols, dtype=np.int64)
        cache = {}
        parts = []
        for pat in patterns:
            key = pat.label if param in CHARGE_PARAMS else pat.row_stripe
            if key not in cache:
                crit = device.critical_latency(param, pat, rows, cols, floor).ravel()
                cache[key] = np.sort(crit[np.isfinite(crit)])
            parts.append(cache[key])
        self.sorted = np.sort(np.concatenate(parts)) if parts else np.zeros(0)

    def count(self, applied: float, shift: float) -> int:
        """Requests failing at ``applied`` when all requirements move by ``shift``."""
        return int(len(self.sorted) - np.searchsorted(self.sorted, applied - shift, "right"))


def solve_shift(crits: RequestCriticals, applied: float, target: float, tol: float,
                hi: float = 8.0, iters: int = 200) -> float:
    """Smallest-bracket bisection for the shift whose count reaches ``target``."""
    lo = 0.0
    if crits.count(applied, hi) < target:
        raise RuntimeError(f"even a {hi} ns shift gives fewer than {target:.0f} failures")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if crits.count(applied, mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9:
            break
        if abs(crits.count(applied, hi) - target) <= tol * target:
            break
    return hi


def calibrate(device: Device, targets: CalibrationTargets = CalibrationTargets(),
              patterns=None, rows=None, cols=None) -> CalibrationResult:
    patterns = standard_patterns() if patterns is None else list(patterns)
    crits = RequestCriticals(device, targets.param, patterns, rows, cols,
                             floor=targets.applied - 8.0)
    n0 = crits.count(targets.applied, 0.0)
    if n0 == 0:
        raise RuntimeError(f"no failures at {targets.param}={targets.applied}; "
                           "pick a lower calibration point")
    hot_target = n0 / (1.0 - targets.temp_reduction)
    long_target = n0 / (1.0 - targets.refresh_reduction)
    e_hot = solve_shift(crits, targets.applied, hot_target, targets.tolerance)
    e_long = solve_shift(crits, targets.applied, long_target, targets.tolerance)
    return CalibrationResult(
        temp_coeff=e_hot / (targets.temp_high - REFERENCE_TEMP_C),
        refresh_coeff=e_long / math.log2(targets.refresh_long / REFERENCE_REFRESH_MS),
        base_count=n0,
        hot_count=crits.count(targets.applied, e_hot),
        long_count=crits.count(targets.applied, e_long),
        targets=targets)


@dataclass
class CalibrationCheck:
    temp_reduction: float
    refresh_reduction: float
    temp_cosine: float
    refresh_cosine: float
    counts: dict


def verify(device: Device, targets: CalibrationTargets = CalibrationTargets(),
           patterns=None, rows=None, cols=None) -> CalibrationCheck:
    """Measure the calibrated effects with full harness runs."""
    applied = STANDARD_TIMING.with_value(targets.param, targets.applied)
    base = EnvConditions()
    hot = EnvConditions(targets.temp_high, REFERENCE_REFRESH_MS)
    long = EnvConditions(REFERENCE_TEMP_C, targets.refresh_long)
    res = env_sensitivity(device, applied, [base, hot, long], patterns, rows, cols)
    r0, rh, rl = res
    return CalibrationCheck(
        temp_reduction=1.0 - r0.total / rh.total if rh.total else float("nan"),
        refresh_reduction=1.0 - r0.total / rl.total if rl.total else float("nan"),
        temp_cosine=cosine_similarity(r0.residue_profile, rh.residue_profile),
        refresh_cosine=cosine_similarity(r0.residue_profile, rl.residue_profile),
        counts={"base": r0.total, "hot": rh.total, "long": rl.total})

