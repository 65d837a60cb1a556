"""SECDED (72,64) codec and per-chip data-out shuffling.

Codeword layout: bit 0 is the overall parity, Hamming check bits sit at the
power-of-two positions 1..64 and the 64 data bits fill the remaining
positions 3..71 in increasing order.  One codeword protects one beat of the
DIMM bus (8 chips x 8 bits); its check bits live on a ninth chip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harness import DataPattern, ErrorLog, RunInfo
from .variation import STANDARD_TIMING, EnvConditions

N_BITS = 72
K_BITS = 64
CHECK_POSITIONS = tuple(1 << k for k in range(7))  # 1, 2, 4, ..., 64
DATA_POSITIONS = tuple(p for p in range(1, N_BITS) if p not in CHECK_POSITIONS)

CLEAN = "clean"
CORRECTED = "corrected"
UNCORRECTABLE = "detected_uncorrectable"

_DATA_MASK = (1 << K_BITS) - 1


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


@dataclass(frozen=True)
class Codeword:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < (1 << N_BITS):
            raise ValueError("codeword must fit in 72 bits")

    def bit(self, position: int) -> int:
        return (self.value >> position) & 1

    def flip(self, *positions) -> "Codeword":
        v = self.value
        for p in positions:
            if not 0 <= p < N_BITS:
                raise IndexError(f"bit position {p} outside the codeword")
            v ^= 1 << p
        return Codeword(v)

    def bits(self) -> list[int]:
        return [self.bit(i) for i in range(N_BITS)]


@dataclass(frozen=True)
class DecodeResult:
    data: int
    status: str
    position: int | None = None


def encode(data: int) -> Codeword:
    if not 0 <= data <= _DATA_MASK:
        raise ValueError("data word must fit in 64 bits")
    word = 0
    syndrome = 0
    for j, pos in enumerate(DATA_POSITIONS):
        if (data >> j) & 1:
            word |= 1 << pos
            syndrome ^= pos
    # Set each check bit so that the XOR of all set positions is zero.
    for pos in CHECK_POSITIONS:
        if syndrome & pos:
            word |= 1 << pos
    word |= _parity(word)  # overall parity into bit 0
    return Codeword(word)


def extract_data(word: int) -> int:
    data = 0
    for j, pos in enumerate(DATA_POSITIONS):
        data |= ((word >> pos) & 1) << j
    return data


def syndrome_of(word: int) -> int:
    s = 0
    w = word >> 1
    pos = 1
    while w:
        if w & 1:
            s ^= pos
        w >>= 1
        pos += 1
    return s


def decode(cw: Codeword | int) -> DecodeResult:
    word = cw.value if isinstance(cw, Codeword) else int(cw)
    s = syndrome_of(word)
    overall = _parity(word)
    if s == 0 and overall == 0:
        return DecodeResult(extract_data(word), CLEAN)
    if overall == 1:
        # Odd number of flips: assume one; syndrome 0 means the parity bit.
        if s >= N_BITS:
            return DecodeResult(extract_data(word), UNCORRECTABLE)
        fixed = word ^ (1 << s)
        return DecodeResult(extract_data(fixed), CORRECTED, s)
    return DecodeResult(extract_data(word), UNCORRECTABLE)


# --- shuffling --------------------------------------------------------------

def bit_reverse(value: int, width: int = 3) -> int:
    out = 0
    for i in range(width):
        out |= ((value >> i) & 1) << (width - 1 - i)
    return out


class ShuffleLayout:
    """Per-chip permutation of burst positions.

    ``perm[chip, b]`` is the beat that carries what the unshuffled chip would
    send in beat ``b``.  Reordering a chip's beats is what rewiring its
    low column-address lines achieves.
    """

    def __init__(self, perm, name="custom"):
        self.perm = np.asarray(perm, dtype=np.int64)
        self.name = name
        if self.perm.ndim != 2:
            raise ValueError("layout must be a (chips, positions) table")
        n = self.perm.shape[1]
        for k, row in enumerate(self.perm):
            if sorted(row.tolist()) != list(range(n)):
                raise ValueError(f"chip {k} permutation {row.tolist()} is not a bijection")

    @property
    def chips(self):
        return self.perm.shape[0]

    @property
    def positions(self):
        return self.perm.shape[1]

    @classmethod
    def identity(cls, chips: int = 8, positions: int = 8) -> "ShuffleLayout":
        return cls(np.tile(np.arange(positions), (chips, 1)), "identity")

    @classmethod
    def rotation(cls, chips: int = 8, positions: int = 8) -> "ShuffleLayout":
        return cls([[(b + k) % positions for b in range(positions)] for k in range(chips)],
                   "rotate")

    @classmethod
    def diva(cls, chips: int = 8, positions: int = 8) -> "ShuffleLayout":
        """Chip ``k`` bit-reverses the burst position, then rotates it by ``k``."""
        width = int(np.log2(positions))
        if 1 << width != positions:
            raise ValueError("the default layout needs a power-of-two burst")
        return cls([[(bit_reverse(b, width) + k) % positions for b in range(positions)]
                    for k in range(chips)], "diva")

    @classmethod
    def named(cls, name: str, chips: int = 8, positions: int = 8) -> "ShuffleLayout":
        try:
            return {"identity": cls.identity, "diva": cls.diva,
                    "rotate": cls.rotation}[name](chips, positions)
        except KeyError:
            raise ValueError(f"unknown shuffle layout {name!r}") from None

    def inverse(self) -> "ShuffleLayout":
        return ShuffleLayout(np.argsort(self.perm, axis=1), self.name + "^-1")

    def compose(self, other: "ShuffleLayout") -> "ShuffleLayout":
        """Apply ``other`` first, then ``self``."""
        return ShuffleLayout(np.take_along_axis(self.perm, other.perm, axis=1),
                             f"{self.name}*{other.name}")

    def __eq__(self, other):
        return isinstance(other, ShuffleLayout) and np.array_equal(self.perm, other.perm)

    def __repr__(self):
        return f"ShuffleLayout({self.name!r}, {self.perm.tolist()})"


def apply_shuffle(layout: ShuffleLayout, log: ErrorLog) -> ErrorLog:
    """Move each chip's failure masks to their shuffled beat."""
    chips = min(layout.chips, log.chips)
    if layout.positions != log.beats:
        raise ValueError("layout and log disagree on burst length")
    bits = log.bits.copy()
    for k in range(chips):
        bits[:, k, layout.perm[k]] = log.bits[:, k, :]
    return log.with_bits(bits)


def codeword_error_counts(log: ErrorLog, layout: ShuffleLayout | None = None,
                          check_chip: bool = False) -> np.ndarray:
    """Failed-bit count of every codeword that has at least one failure.

    A codeword is one beat of one request (parameters merged).  When the log
    carries a ninth chip and ``check_chip`` is set, its bits count too.
    """
    merged = log.merged_requests()
    if layout is not None:
        merged = apply_shuffle(layout, merged)
    bits = merged.bits
    data_chips = bits.shape[1] if check_chip else min(bits.shape[1], 8)
    per_beat = np.unpackbits(bits[:, :data_chips, :, None], axis=-1).sum(axis=(1, 3))
    counts = per_beat.ravel()
    return counts[counts > 0]


def correctable_fraction(log: ErrorLog, layout: ShuffleLayout | None = None,
                         check_chip: bool = False) -> float | None:
    """Share of erroneous codewords that SECDED corrects; ``None`` if no
    codeword has an error."""
    counts = codeword_error_counts(log, layout, check_chip)
    if counts.size == 0:
        return None
    return float((counts == 1).sum() / counts.size)


def uncorrectable_codewords(log: ErrorLog, layout: ShuffleLayout | None = None,
                            check_chip: bool = False) -> int:
    return int((codeword_error_counts(log, layout, check_chip) >= 2).sum())


def decode_log(log: ErrorLog, data_for, layout: ShuffleLayout | None = None):
    """Run every erroneous codeword through the real codec.

    ``data_for(run, ext_row, ext_col, beat)`` returns the 64-bit data word
    that was stored.  Returns a dict status -> count.
    """
    merged = log.merged_requests()
    if layout is not None:
        merged = apply_shuffle(layout, merged)
    out = {CLEAN: 0, CORRECTED: 0, UNCORRECTABLE: 0}
    for i in range(len(merged)):
        for beat in range(merged.beats):
            masks = merged.bits[i, :, beat]
            if not masks.any():
                continue
            data = int(data_for(int(merged.run_index[i]), int(merged.ext_row[i]),
                                int(merged.ext_col[i]), beat))
            cw = encode(data)
            flips = [DATA_POSITIONS[chip * 8 + d] for chip in range(min(8, len(masks)))
                     for d in range(8) if (masks[chip] >> d) & 1]
            res = decode(cw.flip(*flips))
            status = res.status
            if res.data != data:
                status = UNCORRECTABLE  # miscorrected or aliased 3+ bit error
            out[status] += 1
    return out


def synthetic_log(seed: int, n_requests: int = 2000, hot_positions=((0, 4), (2, 4)),
                  p_hot: float = 0.05, p_cold: float = 0.0005, chips: int = 8,
                  beats: int = 8) -> ErrorLog:
    """Random failures with extra weight on fixed (beat, bit) positions shared
    by every chip, i.e. the fingerprint of a common design.  ``hot_positions``
    empty gives purely random failures."""
    rng = np.random.default_rng(seed)
    prob = np.full((chips, beats, 8), p_cold)
    for beat, bit in hot_positions:
        prob[:, beat, bit] = p_hot
    fails = rng.random((n_requests, chips, beats, 8)) < prob
    bits = np.packbits(fails, axis=-1, bitorder="little")[..., 0]
    idx = np.arange(n_requests)
    run = RunInfo(f"synthetic-{seed}", DataPattern(), STANDARD_TIMING, EnvConditions(), seed, 1)
    return ErrorLog([run], np.zeros(n_requests, np.int64), idx, np.zeros(n_requests, np.int64),
                    np.full(n_requests, 2), bits, chips, beats)
