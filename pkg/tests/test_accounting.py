import pytest
from hypothesis import given
from hypothesis import strategies as st

from divasim.accounting import (SUMMARY_FIELDS, read_latency, summarize, summary_row,
                                to_cycles, write_latency)
from divasim.variation import PARAMS, STANDARD_TIMING, EnvConditions, TimingParams


def test_standard_totals():
    assert read_latency(STANDARD_TIMING) == 62.5
    assert write_latency(STANDARD_TIMING) == 42.5


def test_no_change_is_zero():
    s = summarize(STANDARD_TIMING)
    assert s.read_reduction_pct == 0.0 and s.write_reduction_pct == 0.0
    assert s.read_reduction_cycles == 0


def test_reduced_read_example():
    t = TimingParams(tRCD=8.125, tRAS=24.375, tRP=8.125, tWR=15.0)
    assert read_latency(t) == 40.625
    s = summarize(t)
    assert s.read_reduction_pct == pytest.approx(35.0)
    assert s.read_reduction_cycles == 18  # 21.875 ns is 17.5 cycles, halves round up


def test_halving_gives_half():
    half = TimingParams(**{p: STANDARD_TIMING[p] / 2 for p in PARAMS})
    s = summarize(half)
    assert s.read_reduction_pct == pytest.approx(50.0)
    assert s.write_reduction_pct == pytest.approx(50.0)


def test_rejects_timing_above_standard():
    with pytest.raises(ValueError):
        summarize(STANDARD_TIMING.with_value("tRP", 20.0))


def test_cycles():
    assert to_cycles(2.5, 1.25) == 2
    assert to_cycles(0.625, 1.25) == 1
    with pytest.raises(ValueError):
        to_cycles(1.0, 0.0)


@given(st.tuples(*[st.floats(0.1, 1.0)] * 4))
def test_reduction_matches_totals(fracs):
    t = TimingParams(**{p: STANDARD_TIMING[p] * f for p, f in zip(PARAMS, fracs)})
    s = summarize(t)
    assert s.read_reduction_pct == pytest.approx(100 * (1 - s.read_total / s.read_standard))
    assert 0.0 <= s.read_reduction_pct < 100.0


def test_summary_row_fields():
    row = summary_row(3, EnvConditions(85), "profiling", STANDARD_TIMING)
    assert tuple(row) == SUMMARY_FIELDS
    assert row["mechanism"] == "profiling" and row["temp_c"] == 85


def test_accepts_outcome_like_objects():
    class Outcome:
        chosen = STANDARD_TIMING.with_value("tRP", 10.0)
    assert summarize(Outcome()).read_total == 58.75
