import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from divasim.device import DeviceGeometry, locate_cell
from divasim.harness import (DataPattern, Device, ErrorLog, RunInfo, aggregate_by_burst_bit,
                             aggregate_by_column, aggregate_by_row_mod, cosine_similarity,
                             env_sensitivity, evenly_spaced, lag_autocorrelation,
                             per_row_bit_counts, per_row_counts, run_patterns, run_test,
                             sort_and_overlay_rows, standard_patterns, sweep)
from divasim.variation import (CHARGE_PARAMS, PARAMS, STANDARD_TIMING, EnvConditions,
                               VariationConfig, fails)

G2 = DeviceGeometry(subarrays_per_bank=2)


def _log(rows, cols=None, beat=0, bit=0, chips=8):
    """Hand-built log with one failed bit per listed row."""
    n = len(rows)
    cols = [0] * n if cols is None else cols
    bits = np.zeros((n, chips, 8), np.uint8)
    bits[:, 0, beat] = 1 << bit
    run = RunInfo("r", DataPattern(), STANDARD_TIMING, EnvConditions(), 0, 1)
    return ErrorLog([run], np.zeros(n), rows, cols, np.full(n, 2), bits, chips)


# --- the compiled kernel against the scalar per-cell model ------------------

@given(seed=st.integers(0, 1000), ext_row=st.integers(0, 1023), col=st.integers(0, 63),
       chip=st.integers(0, 7), beat=st.integers(0, 7), bit=st.integers(0, 7),
       param=st.sampled_from(PARAMS), pattern=st.sampled_from(standard_patterns()),
       frac=st.floats(0.3, 0.8), temp=st.sampled_from([45.0, 85.0]))
def test_kernel_matches_scalar_model(seed, ext_row, col, chip, beat, bit, param, pattern,
                                     frac, temp):
    var = VariationConfig(temp_coeff=0.01, refresh_coeff=0.01)
    dev = Device.generate(seed, geometry=G2, variation=var, row_map="random")
    env = EnvConditions(temp, 64)
    applied_v = STANDARD_TIMING[param] * frac
    applied = STANDARD_TIMING.with_value(param, applied_v)
    coord = locate_cell(ext_row, col, beat, bit, G2, dev.address_map, chip, dev.bank)
    scalar = param in fails(coord, applied, env, dev.variation, G2)
    value = pattern.value(ext_row, bit)
    shows = (value == 1) if param in CHARGE_PARAMS else pattern.row_stripe
    mask = dev.fail_bits(param, applied_v, env, pattern, [ext_row], [col])
    assert bool((mask[0, 0, chip, beat] >> bit) & 1) == (scalar and shows)


@pytest.mark.parametrize("param", PARAMS)
def test_critical_latency_agrees_with_fail_bits(small_device, param):
    """A request fails at v iff its largest manifesting requirement exceeds v."""
    pat = DataPattern("0011")
    rows = np.arange(0, 1024, 7)
    cols = np.arange(0, 64, 5)
    for v in (STANDARD_TIMING[param] * 0.55, STANDARD_TIMING[param] * 0.7):
        crit = small_device.critical_latency(param, pat, rows, cols, v - 8.0)
        masks = small_device.fail_bits(param, v, EnvConditions(), pat, rows, cols)
        failing = masks.reshape(len(rows), len(cols), -1).any(axis=2)
        assert np.array_equal(failing, crit > v)


# --- run_test / sweep -------------------------------------------------------

def test_standard_timing_gives_empty_log(small_device):
    log = run_patterns(small_device, STANDARD_TIMING, iterations=1)
    assert len(log) == 0 and log.erroneous_requests() == 0


def test_reduced_trp_errors_concentrate_at_mat_edges(small_device):
    log = run_test(small_device, STANDARD_TIMING.with_value("tRP", 7.5), iterations=1)
    assert len(log)
    per_local = aggregate_by_row_mod(log, 512, small_device.address_map)
    edges = np.r_[per_local[:16], per_local[-16:]].mean()
    assert edges > 10 * max(per_local[248:264].mean(), 0.1)


def test_same_seed_same_log(small_geometry):
    a = run_test(Device.generate(4, geometry=small_geometry),
                 STANDARD_TIMING.with_value("tRP", 7.5), iterations=3)
    b = run_test(Device.generate(4, geometry=small_geometry),
                 STANDARD_TIMING.with_value("tRP", 7.5), iterations=3)
    assert a == b


def test_different_seeds_differ(small_geometry):
    applied = STANDARD_TIMING.with_value("tRP", 7.5)
    a = run_test(Device.generate(1, geometry=small_geometry), applied, iterations=1)
    b = run_test(Device.generate(2, geometry=small_geometry), applied, iterations=1)
    assert not np.array_equal(a.ext_row, b.ext_row) or not np.array_equal(a.bits, b.bits)


def test_iterations_validation(small_device):
    with pytest.raises(ValueError):
        run_test(small_device, STANDARD_TIMING, iterations=0)


def test_sweep_counts_are_monotone(small_device):
    logs = sweep(small_device, "tRP", [12.5, 10.0, 7.5, 5.0], iterations=1)
    counts = [logs[v].erroneous_requests() for v in (12.5, 10.0, 7.5, 5.0)]
    assert counts[0] == 0
    assert counts == sorted(counts)


def test_sweep_edge_cases(small_device):
    assert sweep(small_device, "tRP", []) == {}
    one = sweep(small_device, "tRP", [STANDARD_TIMING.tRP], iterations=1)
    assert len(one[STANDARD_TIMING.tRP]) == 0
    with pytest.raises(ValueError):
        sweep(small_device, "tRP", [5.0, 10.0])
    with pytest.raises(ValueError):
        sweep(small_device, "tXX", [5.0])


def test_patterns_cover_both_polarities():
    rows = np.arange(4)
    for bit in range(8):
        seen = {(r, int(p.value(r, bit))) for p in standard_patterns() for r in rows}
        for r in rows:
            assert (r, 0) in seen and (r, 1) in seen


def test_pattern_labels_round_trip():
    for p in standard_patterns() + standard_patterns(row_stripe=False):
        assert DataPattern.parse(p.label) == p
    with pytest.raises(ValueError):
        DataPattern.parse("0101-odd")
    with pytest.raises(ValueError):
        DataPattern("0110")


# --- aggregations -----------------------------------------------------------

def test_row_mod_examples():
    assert not aggregate_by_row_mod(ErrorLog.empty()).any()
    log = _log([0, 512, 1024])
    counts = aggregate_by_row_mod(log, 512)
    assert counts[0] == 3 and counts.sum() == 3
    with pytest.raises(ValueError):
        aggregate_by_row_mod(log, 0)


def test_burst_bit_index():
    assert not aggregate_by_burst_bit(ErrorLog.empty()).any()
    counts = aggregate_by_burst_bit(_log([5], beat=2, bit=3))
    assert counts[19] == 1 and counts.sum() == 1 and len(counts) == 64


def test_column_and_row_counts():
    log = _log([1, 1, 3], cols=[2, 5, 2])
    assert aggregate_by_column(log, 8).tolist() == [0, 0, 2, 0, 0, 1, 0, 0]
    assert per_row_counts(log, 4).tolist() == [0, 2, 0, 1]
    assert per_row_bit_counts(log, 4).tolist() == [0, 2, 0, 1]
    assert per_row_bit_counts(log, 4, beats=[1]).tolist() == [0, 0, 0, 0]


def test_sort_and_overlay():
    log = _log([3, 3, 515, 1], cols=[0, 1, 0, 0])
    counts, order, windows = sort_and_overlay_rows(log, 1024, 512)
    assert list(counts[-2:]) == [1, 3]
    assert order[-1] == 3 and order[-2] == 1
    assert windows.shape == (2, 512)
    assert windows[0, -1] == 2 and windows[1, -1] == 1


def test_column_jump_at_latest_mat(small_device):
    """With the mat-major layout, column counts jump inside the mat that the
    precharge signal reaches last."""
    from divasim.device import AddressMap, ColumnLayout
    from divasim.variation import precharge_arrival
    g = small_device.geometry
    layout = ColumnLayout.mat_major(g)
    dev = Device(g, AddressMap.default(g, layout), small_device.variation)
    rows = evenly_spaced(g.rows_per_bank, 64)
    log = run_test(dev, STANDARD_TIMING.with_value("tRP", 8.75), rows=rows, iterations=1)
    per_col = aggregate_by_column(log, g.columns_per_row)
    per_mat = per_col.reshape(g.mats_per_subarray_row, -1).sum(axis=1)
    arrival = [precharge_arrival(m, dev.variation, g.mats_per_subarray_row)
               for m in range(g.mats_per_subarray_row)]
    assert int(np.argmax(per_mat)) == int(np.argmax(arrival))


def test_env_sensitivity_identical_envs(small_device):
    applied = STANDARD_TIMING.with_value("tRP", 7.5)
    a, b = env_sensitivity(small_device, applied, [EnvConditions(), EnvConditions()])
    assert a.total == b.total
    with pytest.raises(ValueError):
        env_sensitivity(small_device, applied, [])


def test_cosine_and_autocorrelation_helpers():
    assert cosine_similarity([1, 0], [2, 0]) == pytest.approx(1.0)
    assert np.isnan(cosine_similarity([0, 0], [1, 1]))
    x = np.tile(np.arange(8.0), 10)
    ac = lag_autocorrelation(x, [8, 3])
    assert ac[0] == pytest.approx(1.0) and ac[1] < 0.5


def test_evenly_spaced():
    assert evenly_spaced(10, None).tolist() == list(range(10))
    assert evenly_spaced(64, 4).tolist() == [0, 21, 42, 63]


# --- CSV --------------------------------------------------------------------

def test_log_csv_round_trip(tmp_path, small_device):
    log = run_patterns(small_device, STANDARD_TIMING.with_value("tRP", 7.5),
                       patterns=standard_patterns()[:2], iterations=2,
                       rows=np.arange(0, 1024, 64))
    assert len(log)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    back = ErrorLog.from_csv(path, seed=small_device.seed)
    assert back == log
    header = path.read_text().splitlines()[0].split(",")
    assert header == ErrorLog.CSV_HEADER
    buf = io.StringIO()
    log.to_csv(buf)
    assert buf.getvalue() == path.read_text()


def test_log_csv_iterations_expand(tmp_path):
    run = RunInfo("x", DataPattern(), STANDARD_TIMING, EnvConditions(), 0, 10)
    bits = np.zeros((1, 8, 8), np.uint8)
    bits[0, 1, 2] = 0b101
    log = ErrorLog([run], [0], [3], [4], [2], bits)
    path = tmp_path / "log.csv"
    log.to_csv(path)
    assert len(path.read_text().splitlines()) == 1 + 2 * 10
    assert log.bit_count() == 2 and log.erroneous_requests() == 1


def test_log_csv_bad_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(",".join(ErrorLog.CSV_HEADER) + "\n"
                    "x,1,1,1,1,45,64,0101,0,1,1,0,9,0,tRP\n")
    with pytest.raises(ValueError, match=":2:"):
        ErrorLog.from_csv(path)


def test_log_rejects_duplicates():
    run = RunInfo("x", DataPattern(), STANDARD_TIMING, EnvConditions(), 0, 1)
    bits = np.ones((2, 8, 8), np.uint8)
    with pytest.raises(ValueError, match="duplicate"):
        ErrorLog([run], [0, 0], [1, 1], [1, 1], [0, 0], bits)


def test_merge_requests_ors_parameters():
    run = RunInfo("x", DataPattern(), STANDARD_TIMING, EnvConditions(), 0, 1)
    bits = np.zeros((2, 8, 8), np.uint8)
    bits[0, 0, 0] = 1
    bits[1, 0, 0] = 2
    log = ErrorLog([run], [0, 0], [1, 1], [1, 1], [0, 2], bits)
    merged = log.merged_requests()
    assert len(merged) == 1 and merged.bits[0, 0, 0] == 3
