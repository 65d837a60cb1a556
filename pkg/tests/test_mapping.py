import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divasim.device import AddressMap, DeviceGeometry, permute_bits
from divasim.harness import DataPattern, Device, per_row_bit_counts, run_test
from divasim.mapping import (ShapeError, _exhaustive, _greedy, confidence_profile, error_ranks,
                             estimate_row_mapping, vulnerability_ratio)
from divasim.variation import STANDARD_TIMING

from conftest import DATA


def _counts_for(perm):
    """Counts equal to each external row's internal index under ``perm``."""
    x = np.arange(1 << len(perm))
    return permute_bits(x, perm).astype(float)


def _cost(counts, perm):
    ranks = error_ranks(np.asarray(counts, float))
    internal = permute_bits(np.arange(len(counts)), perm)
    return int(((internal - ranks) ** 2).sum())


def test_three_bit_fixture():
    import csv
    with open(DATA / "three_bit_counts.csv") as fh:
        rows = list(csv.DictReader(fh))
    counts = [int(r["count"]) for r in sorted(rows, key=lambda r: int(r["ext_row"]))]
    est = estimate_row_mapping(counts)
    assert est.permutation == (0, 2, 1)
    assert np.all(est.confidence == 1.0)
    assert est.rows_used == 8


def test_identity_counts():
    est = estimate_row_mapping(np.arange(16) * 3.0)
    assert est.permutation == (0, 1, 2, 3)
    assert np.all(est.confidence == 1.0)


@pytest.mark.parametrize("nbits", [1, 2, 3, 4, 5, 6])
def test_every_permutation_recovered(nbits):
    for perm in itertools.permutations(range(nbits)):
        for method in ("exhaustive", "greedy"):
            est = estimate_row_mapping(_counts_for(perm), method=method)
            assert est.permutation == perm
            assert np.all(est.confidence == 1.0)


@settings(max_examples=25)
@given(st.permutations(list(range(7))))
def test_seven_bit_permutations(perm):
    est = estimate_row_mapping(_counts_for(tuple(perm)), method="exhaustive")
    assert est.permutation == tuple(perm)


@settings(max_examples=15)
@given(st.sampled_from([8, 9]).flatmap(lambda n: st.permutations(list(range(n)))))
def test_wide_permutations(perm):
    est = estimate_row_mapping(_counts_for(tuple(perm)))
    assert est.permutation == tuple(perm)
    assert np.all(est.confidence == 1.0)


@settings(max_examples=30)
@given(st.integers(1, 6).flatmap(
    lambda n: st.lists(st.integers(0, 50), min_size=1 << n, max_size=1 << n)))
def test_greedy_reaches_exhaustive_optimum(counts):
    """The split objective makes the greedy answer optimal, even on noise."""
    ranks = error_ranks(np.asarray(counts, float))
    n = len(counts).bit_length() - 1
    g, e = _greedy(ranks, n), _exhaustive(ranks, n)
    assert _cost(counts, g) == _cost(counts, e)
    # brute-force reference minimum
    best = min(_cost(counts, p) for p in itertools.permutations(range(n)))
    assert _cost(counts, e) == best


def test_estimate_ignores_row_order_of_input():
    """Counts relabelled under a second permutation are read back through it."""
    base = _counts_for((2, 0, 3, 1))
    relabel = (1, 3, 0, 2)
    inv = [0] * 4
    for k, j in enumerate(relabel):
        inv[j] = k
    moved = np.empty_like(base)
    moved[permute_bits(np.arange(16), relabel)] = base
    est = estimate_row_mapping(moved)
    internal = est.internal_index(permute_bits(np.arange(16), relabel))
    assert np.array_equal(internal, permute_bits(np.arange(16), (2, 0, 3, 1)))


def test_repaired_row_is_excluded():
    counts = 1000 + 40.0 * np.arange(64)
    counts[37] = 100_000.0
    est = estimate_row_mapping(counts)
    assert 37 in est.excluded_rows
    assert est.rows_used < 64
    assert est.permutation == tuple(range(6))


def test_flat_profile_keeps_rows():
    rng = np.random.default_rng(0)
    counts = rng.poisson(200, 512)
    assert estimate_row_mapping(counts).rows_used >= 500


def test_fold_to_fewer_bits():
    counts = np.tile(_counts_for((1, 0, 2)), 4)
    est = estimate_row_mapping(counts, nbits=3)
    assert est.permutation == (1, 0, 2)


def test_shape_errors():
    with pytest.raises(ShapeError):
        estimate_row_mapping(np.arange(12))
    with pytest.raises(ShapeError):
        estimate_row_mapping([])
    with pytest.raises(ShapeError):
        estimate_row_mapping(np.arange(8), nbits=4)
    with pytest.raises(ValueError):
        estimate_row_mapping(np.arange(8), method="magic")


def test_report_lists_every_bit():
    est = estimate_row_mapping(_counts_for((0, 2, 1)))
    text = est.report()
    assert len(text.splitlines()) == 1 + 3 + 1


def test_confidence_profile():
    a = estimate_row_mapping(_counts_for((0, 1, 2)))
    b = estimate_row_mapping(np.array([0, 1, 2, 3, 4, 5, 7, 6.0]))
    mean, std = confidence_profile([a, b])
    assert mean.shape == std.shape == (3,)
    assert mean[2] == 1.0 and std[2] == 0.0
    assert mean[0] < 1.0
    with pytest.raises(ShapeError):
        confidence_profile([])
    with pytest.raises(ShapeError):
        confidence_profile([a, estimate_row_mapping(np.arange(4.0))])


def test_vulnerability_ratio_examples():
    assert vulnerability_ratio(np.arange(10)) == 9.0
    assert vulnerability_ratio(np.full(20, 5)) == 1.0
    assert vulnerability_ratio(np.zeros(30)) == 0.0
    with pytest.raises(ShapeError):
        vulnerability_ratio(np.arange(9))


def test_device_counts_recover_scramble():
    """End to end: odd-beat failed bits of a scrambled one-subarray device."""
    g = DeviceGeometry(subarrays_per_bank=1)
    dev = Device.generate(3, geometry=g, row_map="random")
    log = run_test(dev, STANDARD_TIMING.with_value("tRP", 5.0), pattern=DataPattern(),
                   iterations=1)
    counts = per_row_bit_counts(log, g.rows_per_bank, beats=[1, 3, 5, 7])
    est = estimate_row_mapping(counts)
    truth = dev.address_map.row_bit_permutation[:9]
    assert est.permutation[-3:] == truth[-3:]
    assert est.confidence[-1] > 0.95


def test_identity_map_device():
    g = DeviceGeometry(subarrays_per_bank=1)
    amap = AddressMap.identity(g)
    dev = Device(g, amap, Device.generate(0, geometry=g).variation)
    log = run_test(dev, STANDARD_TIMING.with_value("tRP", 5.0), pattern=DataPattern(),
                   iterations=1)
    est = estimate_row_mapping(per_row_bit_counts(log, g.rows_per_bank, beats=[1, 3, 5, 7]))
    assert est.permutation[-4:] == (5, 6, 7, 8)
