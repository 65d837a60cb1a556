"""Per-cell minimum timing requirements and pass/fail decisions.

A cell's requirement for a timing parameter is a sum of a design part that
depends only on where the cell sits (bitline and wordline distance, precharge
arrival at its mat), a Gaussian process-variation draw keyed on the cell's
coordinate, and a uniform shift from temperature and refresh interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import _kernels
from .device import MAT_COLS, MAT_ROWS, CellCoordinate, DeviceGeometry

PARAMS = ("tRCD", "tRAS", "tRP", "tWR")
PRECHARGE_PARAMS = ("tRP", "tRAS")
# Failures of these parameters only corrupt cells that hold charge; a short
# tRP corrupts a cell whenever the previous access left the opposite value.
CHARGE_PARAMS = ("tRCD", "tRAS", "tWR")

REFERENCE_TEMP_C = 45.0
REFERENCE_REFRESH_MS = 64.0


@dataclass(frozen=True)
class TimingParams:
    tRCD: float
    tRAS: float
    tRP: float
    tWR: float

    def __post_init__(self):
        for name in PARAMS:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def __getitem__(self, name):
        if name not in PARAMS:
            raise KeyError(name)
        return getattr(self, name)

    def with_value(self, name, value):
        return replace(self, **{name: float(value)})

    def as_dict(self):
        return {p: getattr(self, p) for p in PARAMS}


STANDARD_TIMING = TimingParams(tRCD=13.75, tRAS=35.0, tRP=13.75, tWR=15.0)


@dataclass(frozen=True)
class EnvConditions:
    temperature: float = REFERENCE_TEMP_C
    refresh_interval: float = REFERENCE_REFRESH_MS

    def __post_init__(self):
        if not self.refresh_interval > 0:
            raise ValueError("refresh_interval must be positive")
        if not 0.0 <= self.temperature <= 125.0:
            raise ValueError(f"temperature {self.temperature} outside the modelled range")


def _default_base():
    return {"tRCD": 4.5, "tRAS": 21.0, "tRP": 2.2, "tWR": 6.0}


@dataclass(frozen=True)
class VariationConfig:
    base_required: dict = field(default_factory=_default_base)
    bitline_coeff: float = 4.0
    wordline_coeff: float = 0.5
    alpha: float = 0.25
    beta: float = 0.15
    process_sigma: float = 0.4
    # Environment sensitivities are fitted by calibration; see
    # data/calibrated.ini and config.default_variation().
    temp_coeff: float = 0.0
    refresh_coeff: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        missing = set(PARAMS) - set(self.base_required)
        if missing:
            raise ValueError(f"base_required lacks {sorted(missing)}")
        object.__setattr__(self, "base_required",
                           {p: float(self.base_required[p]) for p in PARAMS})
        for name in ("bitline_coeff", "wordline_coeff", "alpha", "beta",
                     "process_sigma", "temp_coeff", "refresh_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.beta > 0 and not self.alpha > self.beta:
            raise ValueError("precharge timing needs alpha > beta")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValueError("rng_seed must fit in 64 bits")

    def replace(self, **changes) -> "VariationConfig":
        return replace(self, **changes)

    def design_only(self) -> "VariationConfig":
        return replace(self, process_sigma=0.0)

    def process_only(self) -> "VariationConfig":
        return replace(self, bitline_coeff=0.0, wordline_coeff=0.0, alpha=0.0, beta=0.0)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def precharge_arrival(mat: int, config: VariationConfig, mats: int) -> float:
    """Delay until the precharge command reaches ``mat``.

    The main signal enters at mat 0 and loses ``alpha`` per mat; a faster
    sub-signal enters at the far end after ``beta``.  Each mat takes
    whichever arrives first, so the latest mat is an interior one.
    """
    if not 0 <= mat < mats:
        raise IndexError(f"mat={mat} outside [0, {mats})")
    main = config.alpha * mat
    sub = config.beta + config.alpha * (mats - 1 - mat)
    return min(main, sub)


def env_shift(env: EnvConditions, config: VariationConfig) -> float:
    return (config.temp_coeff * (env.temperature - REFERENCE_TEMP_C)
            + config.refresh_coeff * math.log2(env.refresh_interval / REFERENCE_REFRESH_MS))


def _check_param(param):
    if param not in PARAMS:
        raise ValueError(f"unknown timing parameter {param!r}; expected one of {PARAMS}")


def design_latency(coord: CellCoordinate, param: str, config: VariationConfig,
                   mats: int = 8) -> float:
    _check_param(param)
    value = (config.base_required[param]
             + config.bitline_coeff * coord.bitline_distance
             + config.wordline_coeff * coord.wordline_distance)
    if param in PRECHARGE_PARAMS:
        value += precharge_arrival(coord.mat, config, mats)
    return value


def cell_counter(coord: CellCoordinate, geometry: DeviceGeometry) -> int:
    g = geometry
    return (((((coord.chip * g.banks_per_chip + coord.bank) * g.subarrays_per_bank
               + coord.subarray) * g.mats_per_subarray_row + coord.mat) * g.mat_rows
             + coord.local_row) * g.mat_cols + coord.local_col)


def process_noise(coord: CellCoordinate, param: str, config: VariationConfig,
                  geometry: DeviceGeometry | None = None) -> float:
    """Process-variation offset in ns (``sigma * z``)."""
    _check_param(param)
    if config.process_sigma == 0.0:
        return 0.0
    g = geometry or DeviceGeometry()
    key = _kernels.param_key(config.rng_seed, PARAMS.index(param))
    return config.process_sigma * _kernels.cell_z(cell_counter(coord, g), key)


def required_latency(coord: CellCoordinate, param: str, env: EnvConditions,
                     config: VariationConfig, geometry: DeviceGeometry | None = None) -> float:
    g = geometry or DeviceGeometry()
    return (design_latency(coord, param, config, g.mats_per_subarray_row)
            + env_shift(env, config)
            + process_noise(coord, param, config, g))


def fails(coord: CellCoordinate, applied: TimingParams, env: EnvConditions,
          config: VariationConfig, geometry: DeviceGeometry | None = None) -> set[str]:
    """Timing parameters whose applied value is below this cell's requirement."""
    return {p for p in PARAMS
            if applied[p] < required_latency(coord, p, env, config, geometry)}


def design_table(param: str, config: VariationConfig, mats: int) -> np.ndarray:
    """Design-only requirement for every ``(mat, local_row, local_col)``."""
    _check_param(param)
    rows = np.arange(MAT_ROWS, dtype=np.float64)[:, None]
    cols = np.arange(MAT_COLS)[None, :]
    span = MAT_ROWS - 1
    bl = np.where(cols % 2 == 0, (span - rows) / span, rows / span)
    wl = cols / (MAT_COLS - 1)
    tile = config.base_required[param] + config.bitline_coeff * bl + config.wordline_coeff * wl
    table = np.repeat(tile[None, :, :], mats, axis=0)
    if param in PRECHARGE_PARAMS:
        for m in range(mats):
            table[m] += precharge_arrival(m, config, mats)
    return np.ascontiguousarray(table)
