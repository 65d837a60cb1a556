"""Simulation of design-induced DRAM latency variation.

Cell-level failure model, software test harness, row-address mapping
inference, SECDED analysis with per-chip shuffling, online profiling on
per-subarray test rows, an RC bitline transient model and a CLI.
"""

__version__ = "0.1.0"

from .device import AddressMap, ColumnLayout, DeviceGeometry  # noqa: E402
from .harness import (DataPattern, Device, ErrorLog, aggregate_by_row_mod,  # noqa: E402
                      run_patterns, run_test, sweep)
from .variation import (STANDARD_TIMING, EnvConditions, TimingParams,  # noqa: E402
                        VariationConfig)

__all__ = ["AddressMap", "ColumnLayout", "DataPattern", "Device", "DeviceGeometry",
           "EnvConditions", "ErrorLog", "STANDARD_TIMING", "TimingParams", "VariationConfig",
           "aggregate_by_row_mod", "run_patterns", "run_test", "sweep"]
