"""Software test harness: write a pattern, shorten timings, read back, log.

Runs are deterministic: the noise of every cell is fixed by the device seed,
so repeating an iteration reproduces the same failures.  Iterations are
recorded as metadata and only expanded when a log is written to CSV.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .device import AddressMap, ColumnLayout, DeviceGeometry, translate_row
from .variation import (CHARGE_PARAMS, PARAMS, STANDARD_TIMING, EnvConditions,
                        TimingParams, VariationConfig, design_table, env_shift)

BASE_PATTERNS = ("0000", "0101", "0011", "1001")


@dataclass(frozen=True)
class DataPattern:
    pattern: str = "0101"
    inverted: bool = False
    row_stripe: bool = True

    def __post_init__(self):
        if self.pattern not in BASE_PATTERNS:
            raise ValueError(f"pattern must be one of {BASE_PATTERNS}, got {self.pattern!r}")

    @property
    def label(self) -> str:
        label = self.pattern + ("-inv" if self.inverted else "")
        return label if self.row_stripe else label + "-flat"

    @classmethod
    def parse(cls, label: str) -> "DataPattern":
        parts = label.strip().split("-")
        flags = set(parts[1:])
        unknown = flags - {"inv", "flat"}
        if unknown:
            raise ValueError(f"bad pattern label {label!r}")
        return cls(parts[0], "inv" in flags, "flat" not in flags)

    def bits(self) -> np.ndarray:
        return np.array([int(ch) for ch in self.pattern], dtype=np.int64)

    def value(self, ext_row, bit_in_beat):
        """Stored value of data-out bit ``bit_in_beat`` in ``ext_row``."""
        v = self.bits()[np.asarray(bit_in_beat) % 4] ^ int(self.inverted)
        if self.row_stripe:
            v = v ^ (np.asarray(ext_row) % 2 == 0)
        return v.astype(np.int64) if isinstance(v, np.ndarray) else int(v)


def standard_patterns(row_stripe: bool = True) -> list[DataPattern]:
    """The eight-pattern set: four base patterns and their inverses."""
    return [DataPattern(p, inv, row_stripe) for p in BASE_PATTERNS for inv in (False, True)]


@dataclass
class Device:
    """A simulated DIMM: geometry, address scrambling and variation config."""

    geometry: DeviceGeometry
    address_map: AddressMap
    variation: VariationConfig
    bank: int = 0
    _tables: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.address_map.nbits != self.geometry.row_bits:
            raise ValueError(f"address map has {self.address_map.nbits} row bits, "
                             f"geometry needs {self.geometry.row_bits}")
        self.layout.validate(self.geometry)
        if not 0 <= self.bank < self.geometry.banks_per_chip:
            raise IndexError(f"bank={self.bank} outside the chip")

    @classmethod
    def generate(cls, seed: int, geometry: DeviceGeometry | None = None,
                 variation: VariationConfig | None = None, layout: str | ColumnLayout = "interleaved",
                 row_map: str = "default", bank: int = 0) -> "Device":
        """Build a device whose process noise is keyed on ``seed``.

        ``row_map`` is ``"default"`` (reference scrambling), ``"random"``
        (a permutation of the in-mat row bits drawn from ``seed``) or
        ``"identity"``.
        """
        geometry = geometry or DeviceGeometry()
        if isinstance(layout, str):
            layout = ColumnLayout.named(layout, geometry)
        makers = {"default": lambda: AddressMap.default(geometry, layout),
                  "random": lambda: AddressMap.scrambled(geometry, seed, layout),
                  "identity": lambda: AddressMap.identity(geometry, layout)}
        if row_map not in makers:
            raise ValueError(f"unknown row_map {row_map!r}")
        if variation is None:
            from .config import default_variation
            variation = default_variation()
        variation = variation.replace(rng_seed=int(seed))
        amap = makers[row_map]()
        return cls(geometry, amap, variation, bank)

    @property
    def layout(self) -> ColumnLayout:
        return self.address_map.layout_for(self.geometry)

    @property
    def seed(self) -> int:
        return self.variation.rng_seed

    def with_variation(self, variation: VariationConfig) -> "Device":
        return Device(self.geometry, self.address_map, variation, self.bank)

    def table(self, param: str) -> np.ndarray:
        if param not in self._tables:
            self._tables[param] = design_table(param, self.variation,
                                               self.geometry.mats_per_subarray_row)
        return self._tables[param]

    def all_rows(self) -> np.ndarray:
        return np.arange(self.geometry.rows_per_bank, dtype=np.int64)

    def all_cols(self) -> np.ndarray:
        return np.arange(self.geometry.columns_per_row, dtype=np.int64)

    def _kernel_args(self, param, ext_rows, cols):
        g = self.geometry
        ext_rows = np.ascontiguousarray(ext_rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= g.columns_per_row):
            raise IndexError("column outside the row")
        int_rows = np.ascontiguousarray(translate_row(ext_rows, self.address_map), dtype=np.int64)
        return (int_rows, ext_rows, cols, self.layout.mat, self.layout.local_col,
                self.table(param), g.chips_per_dimm, self.bank, g.banks_per_chip,
                g.subarrays_per_bank, g.mats_per_subarray_row)

    def row_max(self, param: str) -> np.ndarray:
        key = param + ":rowmax"
        if key not in self._tables:
            self._tables[key] = np.ascontiguousarray(self.table(param).max(axis=(0, 2)))
        return self._tables[key]

    def _polarity(self, pattern: DataPattern):
        return pattern.bits(), int(pattern.inverted), bool(pattern.row_stripe)

    def fail_bits(self, param: str, applied: float, env: EnvConditions,
                  pattern: DataPattern, ext_rows, cols) -> np.ndarray:
        """``uint8[rows, cols, chips, beats]`` failure masks for one parameter."""
        args = self._kernel_args(param, ext_rows, cols)
        g = self.geometry
        if param == "tRP" and not pattern.row_stripe:
            return np.zeros((len(args[0]), len(args[2]), g.chips_per_dimm, g.burst_length), np.uint8)
        margin = float(applied) - env_shift(env, self.variation)
        key = _kernels.param_key(self.seed, PARAMS.index(param))
        return _kernels.fail_bits(*args[:6], self.row_max(param), margin,
                                  float(self.variation.process_sigma), *args[6:], key,
                                  *self._polarity(pattern), param in CHARGE_PARAMS)

    def critical_latency(self, param: str, pattern: DataPattern, ext_rows, cols,
                         floor: float) -> np.ndarray:
        """Per-request largest requirement at the reference environment."""
        args = self._kernel_args(param, ext_rows, cols)
        if param == "tRP" and not pattern.row_stripe:
            return np.full((len(args[0]), len(args[2])), -np.inf)
        key = _kernels.param_key(self.seed, PARAMS.index(param))
        return _kernels.critical_latency(*args, float(floor), float(self.variation.process_sigma),
                                         key, *self._polarity(pattern), param in CHARGE_PARAMS)


@dataclass(frozen=True)
class RunInfo:
    run_id: str
    pattern: DataPattern
    applied: TimingParams
    env: EnvConditions
    seed: int
    iterations: int


def make_run_id(seed, pattern: DataPattern, applied: TimingParams, env: EnvConditions) -> str:
    text = repr((int(seed), pattern.label, tuple(applied.as_dict().items()),
                 env.temperature, env.refresh_interval))
    return hashlib.sha1(text.encode()).hexdigest()[:12]


class ErrorLog:
    """Failure records, one per (run, ext_row, ext_col, param).

    ``bits[i, chip, beat]`` holds the failing data-out bits of that beat as a
    bitmask.  All counts are derived from these arrays.
    """

    CSV_HEADER = ["run_id", "trp_ns", "trcd_ns", "tras_ns", "twr_ns", "temp_c",
                  "refresh_ms", "pattern", "iteration", "ext_row", "ext_col",
                  "chip", "beat", "bit", "param"]

    def __init__(self, runs, run_index, ext_row, ext_col, param, bits, chips=8, beats=8):
        self.runs = list(runs)
        self.run_index = np.asarray(run_index, dtype=np.int64)
        self.ext_row = np.asarray(ext_row, dtype=np.int64)
        self.ext_col = np.asarray(ext_col, dtype=np.int64)
        self.param = np.asarray(param, dtype=np.int64)
        self.bits = np.asarray(bits, dtype=np.uint8).reshape(-1, chips, beats)
        n = len(self.run_index)
        if not (len(self.ext_row) == len(self.ext_col) == len(self.param) == len(self.bits) == n):
            raise ValueError("record arrays differ in length")
        self._canonicalize()

    def _canonicalize(self):
        keep = self.bits.reshape(len(self.bits), -1).any(axis=1) if len(self.bits) \
            else np.zeros(0, dtype=bool)
        order = np.lexsort((self.param[keep], self.ext_col[keep], self.ext_row[keep],
                            self.run_index[keep]))
        for name in ("run_index", "ext_row", "ext_col", "param", "bits"):
            setattr(self, name, getattr(self, name)[keep][order])
        key = np.stack([self.run_index, self.ext_row, self.ext_col, self.param], axis=1)
        if len(key) > 1 and (np.diff(key, axis=0) == 0).all(axis=1).any():
            raise ValueError("duplicate error records")

    @classmethod
    def empty(cls, runs=(), chips=8, beats=8):
        z = np.zeros(0, dtype=np.int64)
        return cls(runs, z, z, z, z, np.zeros((0, chips, beats), np.uint8), chips, beats)

    @property
    def chips(self):
        return self.bits.shape[1]

    @property
    def beats(self):
        return self.bits.shape[2]

    def __len__(self):
        return len(self.run_index)

    def __eq__(self, other):
        return (isinstance(other, ErrorLog) and self.runs == other.runs
                and all(np.array_equal(getattr(self, n), getattr(other, n))
                        for n in ("run_index", "ext_row", "ext_col", "param", "bits")))

    def __repr__(self):
        return (f"ErrorLog(runs={len(self.runs)}, records={len(self)}, "
                f"requests={self.erroneous_requests()}, bits={self.bit_count()})")

    def select(self, mask) -> "ErrorLog":
        mask = np.asarray(mask, dtype=bool)
        return ErrorLog(self.runs, self.run_index[mask], self.ext_row[mask], self.ext_col[mask],
                        self.param[mask], self.bits[mask], self.chips, self.beats)

    def only_param(self, param: str) -> "ErrorLog":
        return self.select(self.param == PARAMS.index(param))

    def with_bits(self, bits) -> "ErrorLog":
        return ErrorLog(self.runs, self.run_index, self.ext_row, self.ext_col, self.param,
                        bits, self.chips, self.beats)

    def request_keys(self) -> np.ndarray:
        """Distinct (run, ext_row, ext_col) triples with at least one failure."""
        if not len(self):
            return np.zeros((0, 3), dtype=np.int64)
        keys = np.stack([self.run_index, self.ext_row, self.ext_col], axis=1)
        return np.unique(keys, axis=0)

    def erroneous_requests(self) -> int:
        return len(self.request_keys())

    def bit_count(self) -> int:
        return int(np.unpackbits(self.bits).sum())

    def expand_bits(self):
        """Arrays ``(record, chip, beat, bit)`` with one entry per failed bit."""
        unpacked = np.unpackbits(self.bits[..., None], axis=-1, bitorder="little")
        rec, chip, beat, bit = np.nonzero(unpacked)
        return rec, chip, beat, bit

    def merged_requests(self) -> "ErrorLog":
        """Fold the parameter dimension: one record per erroneous request, with
        bits OR-ed over parameters (param set to -1)."""
        keys = self.request_keys()
        if not len(keys):
            return ErrorLog.empty(self.runs, self.chips, self.beats)
        idx = np.searchsorted(_flat_key(keys), _flat_key(np.stack(
            [self.run_index, self.ext_row, self.ext_col], axis=1)))
        bits = np.zeros((len(keys), self.chips, self.beats), np.uint8)
        np.bitwise_or.at(bits, idx, self.bits)
        return ErrorLog(self.runs, keys[:, 0], keys[:, 1], keys[:, 2],
                        np.full(len(keys), -1), bits, self.chips, self.beats)

    @staticmethod
    def concat(logs) -> "ErrorLog":
        logs = list(logs)
        if not logs:
            return ErrorLog.empty()
        runs, parts = [], []
        for log in logs:
            parts.append(log.run_index + len(runs))
            runs.extend(log.runs)
        cat = lambda name: np.concatenate([getattr(l, name) for l in logs])  # noqa: E731
        return ErrorLog(runs, np.concatenate(parts), cat("ext_row"), cat("ext_col"),
                        cat("param"), cat("bits"), logs[0].chips, logs[0].beats)

    def to_csv(self, path_or_file, expand_iterations: bool = True) -> None:
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_HEADER)
            rec, chip, beat, bit = self.expand_bits()
            for i in range(len(rec)):
                r = rec[i]
                run = self.runs[self.run_index[r]]
                a = run.applied
                head = [run.run_id, _fmt(a.tRP), _fmt(a.tRCD), _fmt(a.tRAS), _fmt(a.tWR),
                        _fmt(run.env.temperature), _fmt(run.env.refresh_interval),
                        run.pattern.label]
                tail = [self.ext_row[r], self.ext_col[r], chip[i], beat[i], bit[i],
                        PARAMS[self.param[r]] if self.param[r] >= 0 else "any"]
                for it in range(run.iterations if expand_iterations else 1):
                    w.writerow(head + [it] + tail)
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, path, chips=8, beats=8, seed=0) -> "ErrorLog":
        """Read a log written by :meth:`to_csv`; duplicate iterations collapse."""
        runs, run_pos, iters = [], {}, {}
        recs = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(cls.CSV_HEADER) - set(reader.fieldnames or [])
            if missing - {"chip"}:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for line_no, row in enumerate(reader, start=2):
                try:
                    rid = row["run_id"]
                    if rid not in run_pos:
                        applied = TimingParams(float(row["trcd_ns"]), float(row["tras_ns"]),
                                               float(row["trp_ns"]), float(row["twr_ns"]))
                        env = EnvConditions(float(row["temp_c"]), float(row["refresh_ms"]))
                        run_pos[rid] = len(runs)
                        runs.append([rid, DataPattern.parse(row["pattern"]), applied, env])
                        iters[rid] = 0
                    iters[rid] = max(iters[rid], int(row["iteration"]) + 1)
                    param = -1 if row["param"] == "any" else PARAMS.index(row["param"])
                    key = (run_pos[rid], int(row["ext_row"]), int(row["ext_col"]), param)
                    chip = int(row.get("chip") or 0)
                    mask = recs.setdefault(key, np.zeros((chips, beats), np.uint8))
                    mask[chip, int(row["beat"])] |= np.uint8(1 << int(row["bit"]))
                except (KeyError, ValueError, IndexError) as exc:
                    raise ValueError(f"{path}:{line_no}: {exc}") from None
        run_objs = [RunInfo(rid, pat, applied, env, seed, iters[rid])
                    for rid, pat, applied, env in runs]
        if not recs:
            return cls.empty(run_objs, chips, beats)
        keys = np.array(list(recs.keys()), dtype=np.int64)
        bits = np.stack(list(recs.values()))
        return cls(run_objs, keys[:, 0], keys[:, 1], keys[:, 2], keys[:, 3], bits, chips, beats)


def _flat_key(keys):
    keys = np.asarray(keys, dtype=np.int64)
    return (keys[:, 0] << 42) | (keys[:, 1] << 16) | keys[:, 2]


def _fmt(x):
    return f"{float(x):g}"


def evenly_spaced(n_total: int, n_pick: int | None) -> np.ndarray:
    """``n_pick`` evenly spaced indices out of ``n_total`` (all if None)."""
    if n_pick is None or n_pick >= n_total:
        return np.arange(n_total, dtype=np.int64)
    return np.unique(np.linspace(0, n_total - 1, n_pick).round().astype(np.int64))


def run_test(device: Device, applied: TimingParams, env: EnvConditions = EnvConditions(),
             pattern: DataPattern = DataPattern(), iterations: int = 10,
             rows=None, cols=None) -> ErrorLog:
    """One pattern pass over the selected rows and columns of the device."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rows = device.all_rows() if rows is None else np.asarray(rows, dtype=np.int64)
    cols = device.all_cols() if cols is None else np.asarray(cols, dtype=np.int64)
    run = RunInfo(make_run_id(device.seed, pattern, applied, env), pattern, applied, env,
                  device.seed, int(iterations))
    parts = []
    for p_idx, param in enumerate(PARAMS):
        masks = device.fail_bits(param, applied[param], env, pattern, rows, cols)
        hit_r, hit_c = np.nonzero(masks.reshape(len(rows), len(cols), -1).any(axis=2))
        if len(hit_r):
            parts.append((rows[hit_r], cols[hit_c], np.full(len(hit_r), p_idx),
                          masks[hit_r, hit_c]))
    g = device.geometry
    if not parts:
        return ErrorLog.empty([run], g.chips_per_dimm, g.burst_length)
    cat = lambda k: np.concatenate([p[k] for p in parts])  # noqa: E731
    return ErrorLog([run], np.zeros(len(cat(0)), dtype=np.int64), cat(0), cat(1), cat(2),
                    cat(3), g.chips_per_dimm, g.burst_length)


def run_patterns(device: Device, applied: TimingParams, env: EnvConditions = EnvConditions(),
                 patterns=None, iterations: int = 10, rows=None, cols=None) -> ErrorLog:
    patterns = standard_patterns() if patterns is None else list(patterns)
    return ErrorLog.concat(run_test(device, applied, env, p, iterations, rows, cols)
                           for p in patterns)


def sweep(device: Device, param: str, values, env: EnvConditions = EnvConditions(),
          patterns=None, iterations: int = 10, rows=None, cols=None,
          base: TimingParams = STANDARD_TIMING) -> dict:
    """Lower one parameter step by step (others at ``base``); one log per value."""
    if param not in PARAMS:
        raise ValueError(f"unknown timing parameter {param!r}")
    values = [float(v) for v in values]
    if any(b > a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be sorted in descending order")
    return {v: run_patterns(device, base.with_value(param, v), env, patterns, iterations,
                            rows, cols) for v in values}


# --- aggregations -----------------------------------------------------------

def per_row_counts(log: ErrorLog, n_rows: int, address_map: AddressMap | None = None) -> np.ndarray:
    """Erroneous requests per row; keyed by internal row when a map is given."""
    keys = log.request_keys()
    rows = keys[:, 1]
    if address_map is not None and len(rows):
        rows = translate_row(rows, address_map)
    return np.bincount(rows, minlength=n_rows).astype(np.int64)


def per_row_bit_counts(log: ErrorLog, n_rows: int, beats=None,
                       address_map: AddressMap | None = None) -> np.ndarray:
    """Failed bits per row, optionally only those sent in ``beats``.

    In the interleaved layout odd beats come from bottom sense amps, whose
    cells get slower with the internal row index, so their counts are the
    natural input for row-mapping inference.
    """
    rec, _, beat, _ = log.expand_bits()
    if beats is not None:
        rec = rec[np.isin(beat, np.asarray(list(beats)))]
    rows = log.ext_row[rec]
    if address_map is not None and len(rows):
        rows = translate_row(rows, address_map)
    return np.bincount(rows, minlength=n_rows).astype(np.int64)


def aggregate_by_row_mod(log: ErrorLog, modulus: int = 512,
                         address_map: AddressMap | None = None) -> np.ndarray:
    if modulus <= 0:
        raise ValueError("modulus must be positive")
    keys = log.request_keys()
    rows = keys[:, 1]
    if address_map is not None and len(rows):
        rows = translate_row(rows, address_map)
    return np.bincount(rows % modulus, minlength=modulus).astype(np.int64)


def sort_and_overlay_rows(log: ErrorLog, n_rows: int, modulus: int = 512,
                          address_map: AddressMap | None = None):
    """Residues sorted ascending by total count, and every ``modulus``-row
    window reordered the same way.

    Returns ``(sorted_counts, order, windows)`` where ``windows[w, k]`` is the
    count of row ``w * modulus + order[k]``.
    """
    residue = aggregate_by_row_mod(log, modulus, address_map)
    order = np.argsort(residue, kind="stable")
    per_row = per_row_counts(log, n_rows, address_map)
    n_win = -(-n_rows // modulus)
    padded = np.zeros(n_win * modulus, dtype=np.int64)
    padded[:n_rows] = per_row
    windows = padded.reshape(n_win, modulus)[:, order]
    return residue[order], order, windows


def aggregate_by_column(log: ErrorLog, n_cols: int) -> np.ndarray:
    keys = log.request_keys()
    return np.bincount(keys[:, 2], minlength=n_cols).astype(np.int64)


def aggregate_by_burst_bit(log: ErrorLog) -> np.ndarray:
    """Failed-bit counts per data-out position ``beat * 8 + bit`` (all chips)."""
    _, _, beat, bit = log.expand_bits()
    width = log.bits.shape[2] * 8
    return np.bincount(beat * 8 + bit, minlength=width).astype(np.int64)


@dataclass
class EnvResult:
    env: EnvConditions
    total: int
    residue_profile: np.ndarray


def env_sensitivity(device: Device, applied: TimingParams, envs, patterns=None,
                    rows=None, cols=None, modulus: int = 512) -> list[EnvResult]:
    envs = list(envs)
    if not envs:
        raise ValueError("env list must not be empty")
    out = []
    for env in envs:
        log = run_patterns(device, applied, env, patterns, 1, rows, cols)
        out.append(EnvResult(env, log.erroneous_requests(),
                             aggregate_by_row_mod(log, modulus, device.address_map)))
    return out


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    return float(a @ b / (na * nb))


def lag_autocorrelation(x, lags) -> np.ndarray:
    """Pearson correlation between ``x[:-k]`` and ``x[k:]`` for each lag."""
    x = np.asarray(x, dtype=np.float64)
    out = []
    for k in lags:
        a, b = x[:-k], x[k:]
        if a.std() == 0 or b.std() == 0:
            out.append(0.0)
        else:
            out.append(float(np.corrcoef(a, b)[0, 1]))
    return np.array(out)
