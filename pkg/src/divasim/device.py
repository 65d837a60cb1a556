"""DRAM topology and the external -> internal address mapping.

A DIMM is modelled as ``chips x banks x subarrays x mats`` where every mat
is a 512x512 cell tile.  Rows are scrambled by a bit permutation followed by
an XOR mask; columns are placed by a :class:`ColumnLayout` table that says,
for every (external column, beat, bit-in-beat) of one chip's burst, which
mat and which local column holds the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MAT_ROWS = 512
MAT_COLS = 512

TOP = "top"
BOTTOM = "bottom"


@dataclass(frozen=True)
class DeviceGeometry:
    chips_per_dimm: int = 8
    banks_per_chip: int = 8
    subarrays_per_bank: int = 64
    mat_rows: int = MAT_ROWS
    mat_cols: int = MAT_COLS
    mats_per_subarray_row: int = 8
    burst_length: int = 8
    bits_per_chip_per_beat: int = 8

    def __post_init__(self):
        for name in ("chips_per_dimm", "banks_per_chip", "subarrays_per_bank",
                     "mats_per_subarray_row"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.mat_rows != MAT_ROWS or self.mat_cols != MAT_COLS:
            raise ValueError("mats are fixed at 512x512 cells")
        if self.burst_length != 8 or self.bits_per_chip_per_beat != 8:
            raise ValueError("burst_length and bits_per_chip_per_beat are fixed at 8")
        if self.subarrays_per_bank & (self.subarrays_per_bank - 1):
            raise ValueError("subarrays_per_bank must be a power of two so the "
                             "row address space is closed under bit permutation")

    @property
    def rows_per_bank(self) -> int:
        return self.subarrays_per_bank * self.mat_rows

    @property
    def row_bits(self) -> int:
        return int(math.log2(self.rows_per_bank))

    @property
    def local_row_bits(self) -> int:
        return int(math.log2(self.mat_rows))

    @property
    def bits_per_access(self) -> int:
        """Data-out bits one chip delivers per column command."""
        return self.burst_length * self.bits_per_chip_per_beat

    @property
    def bits_per_beat(self) -> int:
        """Bits crossing the DIMM data bus in one beat (one ECC data word)."""
        return self.chips_per_dimm * self.bits_per_chip_per_beat

    @property
    def columns_per_row(self) -> int:
        return self.mats_per_subarray_row * self.mat_cols // self.bits_per_access


class ColumnLayout:
    """Lookup table ``(ext_col, beat, bit) -> (mat, local_col)`` for one chip.

    Every chip of the DIMM uses the same table (same design).  ``mat`` and
    ``local_col`` are int64 arrays of shape ``(columns, burst_length, bits)``.
    """

    def __init__(self, mat, local_col, name="custom"):
        self.mat = np.ascontiguousarray(mat, dtype=np.int64)
        self.local_col = np.ascontiguousarray(local_col, dtype=np.int64)
        self.name = name
        if self.mat.shape != self.local_col.shape or self.mat.ndim != 3:
            raise ValueError("mat and local_col tables must share a 3-d shape")

    @property
    def shape(self):
        return self.mat.shape

    def validate(self, geometry: DeviceGeometry) -> None:
        expected = (geometry.columns_per_row, geometry.burst_length,
                    geometry.bits_per_chip_per_beat)
        if self.shape != expected:
            raise ValueError(f"column layout shape {self.shape} != {expected}")
        if self.mat.min() < 0 or self.mat.max() >= geometry.mats_per_subarray_row:
            raise ValueError("column layout references a mat outside the subarray row")
        if self.local_col.min() < 0 or self.local_col.max() >= geometry.mat_cols:
            raise ValueError("column layout references a local column outside the mat")
        cells = self.mat * geometry.mat_cols + self.local_col
        if np.unique(cells).size != cells.size:
            raise ValueError("column layout maps two data-out bits to the same cell")

    @classmethod
    def interleaved(cls, geometry: DeviceGeometry) -> "ColumnLayout":
        """Default wiring: DQ pin ``d`` reads mat ``d`` of its mat group, beat
        ``b`` reads local column ``(ext_col % span) * burst_length + b``.

        With eight mats every column command touches all mats, and all eight
        bits of one beat sit at the same local column of different mats.
        """
        bits = geometry.bits_per_chip_per_beat
        if geometry.mats_per_subarray_row % bits:
            raise ValueError("interleaved layout needs mats_per_subarray_row to be "
                             "a multiple of bits_per_chip_per_beat")
        span = geometry.mat_cols // geometry.burst_length  # columns per mat group
        col, beat, bit = np.meshgrid(np.arange(geometry.columns_per_row),
                                     np.arange(geometry.burst_length),
                                     np.arange(bits), indexing="ij")
        mat = (col // span) * bits + bit
        local = (col % span) * geometry.burst_length + beat
        return cls(mat, local, name="interleaved")

    @classmethod
    def mat_major(cls, geometry: DeviceGeometry) -> "ColumnLayout":
        """Alternative wiring where each column command reads one mat, so
        sweeping columns walks across mats left to right."""
        per_mat = geometry.mat_cols // geometry.bits_per_access
        col, beat, bit = np.meshgrid(np.arange(geometry.columns_per_row),
                                     np.arange(geometry.burst_length),
                                     np.arange(geometry.bits_per_chip_per_beat),
                                     indexing="ij")
        mat = col // per_mat
        local = (col % per_mat) * geometry.bits_per_access \
            + beat * geometry.bits_per_chip_per_beat + bit
        return cls(mat, local, name="mat_major")

    @classmethod
    def named(cls, name: str, geometry: DeviceGeometry) -> "ColumnLayout":
        try:
            return {"interleaved": cls.interleaved, "mat_major": cls.mat_major}[name](geometry)
        except KeyError:
            raise ValueError(f"unknown column layout {name!r}") from None

    def rows(self):
        """Yield ``(ext_col, beat, bit, mat, local_col)`` table rows."""
        it = np.ndindex(*self.shape)
        for c, b, d in it:
            yield c, b, d, int(self.mat[c, b, d]), int(self.local_col[c, b, d])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("ext_col,beat,bit,mat,local_col\n")
            for row in self.rows():
                fh.write(",".join(map(str, row)) + "\n")

    @classmethod
    def from_csv(cls, path, geometry: DeviceGeometry) -> "ColumnLayout":
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        shape = (geometry.columns_per_row, geometry.burst_length,
                 geometry.bits_per_chip_per_beat)
        mat = np.full(shape, -1, dtype=np.int64)
        local = np.full(shape, -1, dtype=np.int64)
        c, b, d = data[:, 0], data[:, 1], data[:, 2]
        mat[c, b, d] = data[:, 3]
        local[c, b, d] = data[:, 4]
        if (mat < 0).any():
            raise ValueError(f"{path}: column layout table is incomplete")
        layout = cls(mat, local, name=str(path))
        layout.validate(geometry)
        return layout

    def __eq__(self, other):
        return (isinstance(other, ColumnLayout)
                and np.array_equal(self.mat, other.mat)
                and np.array_equal(self.local_col, other.local_col))

    def __repr__(self):
        return f"ColumnLayout({self.name!r}, shape={self.shape})"


def _check_permutation(perm: Sequence[int]) -> None:
    if sorted(perm) != list(range(len(perm))):
        raise ValueError(f"row_bit_permutation {list(perm)} is not a bijection")


def permute_bits(value, perm: Sequence[int]):
    """Output bit ``k`` takes input bit ``perm[k]``.  Works on ints and arrays."""
    out = value * 0
    for k, src in enumerate(perm):
        out = out | (((value >> src) & 1) << k)
    return out


def inverse_permutation(perm: Sequence[int]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for k, src in enumerate(perm):
        inv[src] = k
    return tuple(inv)


@dataclass(frozen=True)
class AddressMap:
    """Ground-truth external -> internal address scrambling.

    ``row_bit_permutation[k]`` names the external row bit that becomes
    internal bit ``k``; the XOR mask is applied afterwards.
    """

    row_bit_permutation: tuple[int, ...]
    row_xor_mask: int = 0
    column_layout: ColumnLayout | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "row_bit_permutation", tuple(int(p) for p in self.row_bit_permutation))
        _check_permutation(self.row_bit_permutation)
        if self.row_xor_mask < 0 or self.row_xor_mask >> self.nbits:
            raise ValueError("row_xor_mask has bits outside the row address")

    @property
    def nbits(self) -> int:
        return len(self.row_bit_permutation)

    @property
    def inverse(self) -> tuple[int, ...]:
        return inverse_permutation(self.row_bit_permutation)

    @classmethod
    def identity(cls, geometry: DeviceGeometry, layout: ColumnLayout | None = None) -> "AddressMap":
        return cls(tuple(range(geometry.row_bits)), 0,
                   layout or ColumnLayout.interleaved(geometry))

    @classmethod
    def default(cls, geometry: DeviceGeometry, layout: ColumnLayout | None = None) -> "AddressMap":
        """Reference scrambling: the eight low row bits are wired in reverse
        order, the half-mat bit and the subarray bits pass straight through."""
        low = geometry.local_row_bits - 1
        perm = list(reversed(range(low))) + list(range(low, geometry.row_bits))
        return cls(tuple(perm), 0, layout or ColumnLayout.interleaved(geometry))

    @classmethod
    def scrambled(cls, geometry: DeviceGeometry, seed: int,
                  layout: ColumnLayout | None = None) -> "AddressMap":
        """Seeded permutation of the in-mat row bits; subarray bits stay put so
        every 512-row window of external addresses is one subarray."""
        rng = np.random.default_rng(seed)
        low = geometry.local_row_bits
        perm = list(rng.permutation(low)) + list(range(low, geometry.row_bits))
        return cls(tuple(int(p) for p in perm), 0,
                   layout or ColumnLayout.interleaved(geometry))

    def layout_for(self, geometry: DeviceGeometry) -> ColumnLayout:
        return self.column_layout if self.column_layout is not None \
            else ColumnLayout.interleaved(geometry)


def _check_row_range(rows, nbits):
    arr = np.asarray(rows)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << nbits)):
        raise IndexError(f"row address outside [0, {1 << nbits})")


def translate_row(ext_row, amap: AddressMap):
    """External row address -> internal row index (int or int array)."""
    _check_row_range(ext_row, amap.nbits)
    if isinstance(ext_row, (int, np.integer)):
        return int(permute_bits(int(ext_row), amap.row_bit_permutation)) ^ amap.row_xor_mask
    arr = np.asarray(ext_row, dtype=np.int64)
    return permute_bits(arr, amap.row_bit_permutation) ^ amap.row_xor_mask


def external_row(int_row, amap: AddressMap):
    """Inverse of :func:`translate_row`."""
    _check_row_range(int_row, amap.nbits)
    if isinstance(int_row, (int, np.integer)):
        return int(permute_bits(int(int_row) ^ amap.row_xor_mask, amap.inverse))
    arr = np.asarray(int_row, dtype=np.int64)
    return permute_bits(arr ^ amap.row_xor_mask, amap.inverse)


def sa_side(local_col):
    """Open bitline: even local columns hang off the top sense-amp stripe."""
    if isinstance(local_col, (int, np.integer)):
        return TOP if local_col % 2 == 0 else BOTTOM
    return np.where(np.asarray(local_col) % 2 == 0, TOP, BOTTOM)


def bitline_distance(local_row, local_col, mat_rows: int = MAT_ROWS):
    """Normalised distance between a cell and the sense amp it connects to.

    Bottom sense amps sit at row 0, top sense amps beyond row ``mat_rows-1``.
    """
    local_row = np.asarray(local_row, dtype=np.float64)
    top = np.asarray(local_col) % 2 == 0
    span = mat_rows - 1
    out = np.where(top, (span - local_row) / span, local_row / span)
    return float(out) if out.ndim == 0 else out


def wordline_distance(local_col, mat_cols: int = MAT_COLS):
    out = np.asarray(local_col, dtype=np.float64) / (mat_cols - 1)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CellCoordinate:
    chip: int
    bank: int
    subarray: int
    mat: int
    local_row: int
    local_col: int
    sa_side: str
    bitline_distance: float
    wordline_distance: float

    @classmethod
    def at(cls, chip, bank, subarray, mat, local_row, local_col,
           geometry: DeviceGeometry | None = None) -> "CellCoordinate":
        g = geometry or DeviceGeometry()
        checks = (("chip", chip, g.chips_per_dimm), ("bank", bank, g.banks_per_chip),
                  ("subarray", subarray, g.subarrays_per_bank),
                  ("mat", mat, g.mats_per_subarray_row),
                  ("local_row", local_row, g.mat_rows), ("local_col", local_col, g.mat_cols))
        for name, value, bound in checks:
            if not 0 <= value < bound:
                raise IndexError(f"{name}={value} outside [0, {bound})")
        return cls(int(chip), int(bank), int(subarray), int(mat), int(local_row),
                   int(local_col), sa_side(int(local_col)),
                   bitline_distance(local_row, local_col, g.mat_rows),
                   wordline_distance(local_col, g.mat_cols))


def locate_cell(ext_row: int, ext_col: int, beat: int, bit_in_beat: int,
                geometry: DeviceGeometry, amap: AddressMap,
                chip: int = 0, bank: int = 0) -> CellCoordinate:
    """Physical coordinate of one data-out bit of one chip."""
    if not 0 <= ext_col < geometry.columns_per_row:
        raise IndexError(f"ext_col={ext_col} outside [0, {geometry.columns_per_row})")
    if not 0 <= beat < geometry.burst_length:
        raise IndexError(f"beat={beat} outside [0, {geometry.burst_length})")
    if not 0 <= bit_in_beat < geometry.bits_per_chip_per_beat:
        raise IndexError(f"bit_in_beat={bit_in_beat} outside "
                         f"[0, {geometry.bits_per_chip_per_beat})")
    internal = translate_row(int(ext_row), amap)
    layout = amap.layout_for(geometry)
    return CellCoordinate.at(chip, bank, internal // geometry.mat_rows,
                             int(layout.mat[ext_col, beat, bit_in_beat]),
                             internal % geometry.mat_rows,
                             int(layout.local_col[ext_col, beat, bit_in_beat]),
                             geometry)


def burst_positions(ext_col: int, geometry: DeviceGeometry, amap: AddressMap,
                    ext_row: int = 0, chip: int = 0, bank: int = 0) -> list[CellCoordinate]:
    """The 64 cells one chip reads for a column command, in data-out order
    (index ``beat * 8 + bit``)."""
    return [locate_cell(ext_row, ext_col, b, d, geometry, amap, chip, bank)
            for b in range(geometry.burst_length)
            for d in range(geometry.bits_per_chip_per_beat)]
