"""Recover the row-address bit permutation from per-row error counts.

If error counts grow with the internal row index, ranking external rows by
their counts spells out each row's internal index; the job is to find the
bit permutation that best explains those ranks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .device import permute_bits

EXHAUSTIVE_MAX_BITS = 8
OUTLIER_SIGMAS = 5.0


class ShapeError(ValueError):
    pass


@dataclass
class MappingEstimate:
    """``permutation[k]`` is the external bit that drives internal bit ``k``."""

    permutation: tuple
    confidence: np.ndarray
    rows_used: int
    excluded_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.permutation = tuple(int(p) for p in self.permutation)
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError("estimated permutation is not a bijection")
        self.confidence = np.asarray(self.confidence, dtype=np.float64)

    @property
    def nbits(self) -> int:
        return len(self.permutation)

    def internal_index(self, ext_rows):
        return permute_bits(np.asarray(ext_rows, dtype=np.int64), self.permutation)

    def report(self) -> str:
        lines = ["internal_bit  external_bit  confidence"]
        for k in reversed(range(self.nbits)):
            lines.append(f"{k:>12}  {self.permutation[k]:>12}  {self.confidence[k]:10.4f}")
        lines.append(f"rows used: {self.rows_used}")
        return "\n".join(lines)


def _prepare(per_row_errors, nbits):
    counts = np.asarray(per_row_errors, dtype=np.float64).ravel()
    n = counts.size
    if n == 0 or n & (n - 1):
        raise ShapeError(f"need a power-of-two number of rows, got {n}")
    total_bits = n.bit_length() - 1
    if nbits is None:
        nbits = total_bits
    if nbits > total_bits or nbits < 1:
        raise ShapeError(f"cannot estimate {nbits} bits from {n} rows")
    if nbits < total_bits:
        counts = counts.reshape(-1, 1 << nbits).sum(axis=0)  # fold modulo 2**nbits
    return counts, nbits


def error_ranks(counts) -> np.ndarray:
    """Rank of each external row; ties broken by external address."""
    order = np.lexsort((np.arange(len(counts)), counts))
    ranks = np.empty(len(counts), dtype=np.int64)
    ranks[order] = np.arange(len(counts))
    return ranks


def _greedy(ranks, nbits):
    """Internal MSB first, pick the external bit whose 1-rows rank highest.

    Maximising ``sum_x rank(x) * internal(x)`` (equivalently minimising the
    squared rank displacement) splits over bits, so this is exact for that
    objective.
    """
    x = np.arange(len(ranks))
    score = np.array([ranks[(x >> j) & 1 == 1].sum() for j in range(nbits)])
    perm = [0] * nbits
    left = list(range(nbits))
    for k in reversed(range(nbits)):
        best = max(left, key=lambda j: (score[j], -j))
        perm[k] = best
        left.remove(best)
    return tuple(perm)


def _exhaustive(ranks, nbits):
    """Try every permutation; keep the one with the least squared rank
    displacement (first found wins ties)."""
    x = np.arange(len(ranks))
    ext_bits = np.stack([(x >> j) & 1 for j in range(nbits)])  # (nbits, rows)
    perms = np.array(list(itertools.permutations(range(nbits))), dtype=np.int64)
    weights = (1 << np.arange(nbits))
    best, best_cost = None, None
    for chunk in np.array_split(perms, max(1, len(perms) // 4096)):
        internal = np.einsum("pk,pkr->pr", np.broadcast_to(weights, chunk.shape), ext_bits[chunk])
        cost = ((internal - ranks[None, :]) ** 2).sum(axis=1)
        i = int(np.argmin(cost))
        if best_cost is None or cost[i] < best_cost:
            best, best_cost = tuple(chunk[i]), cost[i]
    return best


def _local_median(counts, internal):
    order = np.argsort(internal)
    pad = np.pad(counts[order], 2, mode="edge")
    med = np.empty(len(counts))
    med[order] = np.median(np.lib.stride_tricks.sliding_window_view(pad, 5), axis=1)
    return med


def _outliers(counts, internal):
    """Rows whose count strays more than 5 robust sigmas from the running
    median of their internal neighbourhood (e.g. repaired rows).

    Residuals are scaled by the counting noise expected at the local median,
    and the robust sigma never drops below that noise, so flat or saturated
    stretches of the profile do not turn ordinary scatter into outliers.
    """
    med = _local_median(counts, internal)
    z = (counts - med) / np.sqrt(np.maximum(np.abs(med), 1.0))
    mad = np.median(np.abs(z - np.median(z)))
    sigma = max(1.4826 * mad, 1.0)
    return np.flatnonzero(np.abs(z) > OUTLIER_SIGMAS * sigma)


def estimate_row_mapping(per_row_errors, nbits: int | None = None,
                         method: str = "auto") -> MappingEstimate:
    """Estimate the permutation under which counts look most monotone.

    ``method`` is ``"exhaustive"``, ``"greedy"`` or ``"auto"`` (exhaustive up
    to 8 bits).  Confidence of internal bit ``k`` is the fraction of rows
    whose rank has bit ``k`` equal to the row's external bit
    ``permutation[k]``.  Outlying rows are excluded from the confidence and
    replaced by their local median for a second estimation pass.
    """
    counts, nbits = _prepare(per_row_errors, nbits)
    if method == "auto":
        method = "exhaustive" if nbits <= EXHAUSTIVE_MAX_BITS else "greedy"
    if method not in ("exhaustive", "greedy"):
        raise ValueError(f"unknown method {method!r}")
    solve = _exhaustive if method == "exhaustive" else _greedy
    x = np.arange(len(counts))
    ranks = error_ranks(counts)
    perm = solve(ranks, nbits)
    excluded = _outliers(counts, permute_bits(x, perm))
    if len(excluded):
        # second pass with the outliers pulled back to their neighbourhood
        cleaned = counts.copy()
        cleaned[excluded] = _local_median(counts, permute_bits(x, perm))[excluded]
        ranks = error_ranks(cleaned)
        perm = solve(ranks, nbits)
        excluded = _outliers(counts, permute_bits(x, perm))
    keep = np.ones(len(counts), dtype=bool)
    keep[excluded] = False
    conf = np.array([np.mean(((ranks[keep] >> k) & 1) == ((x[keep] >> perm[k]) & 1))
                     for k in range(nbits)])
    return MappingEstimate(perm, conf, int(keep.sum()), excluded)


def confidence_profile(estimates):
    """Per-bit mean and standard deviation of confidence across estimates."""
    estimates = list(estimates)
    if not estimates:
        raise ShapeError("need at least one estimate")
    widths = {e.nbits for e in estimates}
    if len(widths) != 1:
        raise ShapeError(f"estimates disagree on bit width: {sorted(widths)}")
    conf = np.stack([e.confidence for e in estimates])
    return conf.mean(axis=0), conf.std(axis=0)


def vulnerability_ratio(per_row_errors) -> float:
    """Errors in the top 10% of rows over errors in the bottom 10% (the
    denominator is clamped at 1)."""
    counts = np.sort(np.asarray(per_row_errors, dtype=np.float64).ravel())
    if counts.size < 10:
        raise ShapeError("need at least 10 rows")
    k = counts.size // 10
    return float(counts[-k:].sum() / max(1.0, counts[:k].sum()))
