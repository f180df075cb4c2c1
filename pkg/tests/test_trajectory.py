import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfcmri.trajectory import (
    GOLDEN_ANGLE, InvalidScheduleError, SpokeSchedule, bin_spokes, golden_angle_schedule,
    golden_angle_sequence, orientation_gaps,
)

mpmath.mp.dps = 30
# 111.246 degrees: pi (sqrt(5) - 1) / 2
GA_ORACLE = float(mpmath.pi * (mpmath.sqrt(5) - 1) / 2)


def test_golden_angle_constant_matches_high_precision():
    assert GOLDEN_ANGLE == pytest.approx(GA_ORACLE, abs=1e-15)
    assert math.degrees(GOLDEN_ANGLE) == pytest.approx(111.2461, abs=1e-4)
    # the small golden angle pi (3 - sqrt 5) / 2 is its supplement
    small = float(mpmath.pi * (3 - mpmath.sqrt(5)) / 2)
    assert GOLDEN_ANGLE + small == pytest.approx(math.pi, abs=1e-15)


def test_single_spoke():
    assert golden_angle_sequence(1, 0.0).tolist() == [0.0]


def test_two_spokes():
    a = golden_angle_sequence(2, 0.0)
    assert a[0] == 0.0
    assert a[1] == pytest.approx(1.9416110387, abs=1e-10)


def test_four_spokes_gaps_below_half_pi():
    gaps = orientation_gaps(golden_angle_sequence(4))
    assert np.all(gaps < math.pi / 2)


def test_rejects_zero_spokes():
    with pytest.raises(ValueError):
        golden_angle_sequence(0)


@given(st.integers(1, 400), st.floats(0, math.pi, exclude_max=True))
def test_angles_in_half_open_range_and_step(n, start):
    a = golden_angle_sequence(n, start)
    assert np.all((a >= 0) & (a < math.pi))
    step = np.mod(np.diff(a) - GOLDEN_ANGLE, math.pi)
    assert np.all(np.minimum(step, math.pi - step) < 1e-9)


@given(st.integers(1, 200), st.floats(0, 3.0))
def test_start_angle_is_global_rotation(n, start):
    base = golden_angle_sequence(n)
    shifted = golden_angle_sequence(n, start)
    d = np.mod(shifted - base - start, math.pi)
    assert np.all(np.minimum(d, math.pi - d) < 1e-9)


def test_sequential_binning_floor_rule():
    s = bin_spokes([0.1, 0.2, 0.3, 0.4], 2, 2)
    assert s.frames.tolist() == [0, 0, 1, 1]


def test_interleaved_binning():
    s = bin_spokes(golden_angle_sequence(8), 4, 2, binning="interleaved")
    assert s.frames.tolist() == [0, 1, 2, 3, 0, 1, 2, 3]


def test_every_frame_gets_its_quota():
    s = bin_spokes(golden_angle_sequence(8), 4, 2)
    assert [len(s.spokes_in_frame(j)) for j in range(4)] == [2, 2, 2, 2]


def test_within_frame_gap_exceeds_half_radian():
    s = golden_angle_schedule(4, 2)
    for j in range(4):
        a, b = s.angles[s.spokes_in_frame(j)]
        d = abs(a - b) % math.pi
        assert min(d, math.pi - d) > 0.5


def test_length_mismatch():
    with pytest.raises(InvalidScheduleError):
        bin_spokes([0.0, 1.0, 2.0], 2, 2)


def test_unknown_binning():
    with pytest.raises(InvalidScheduleError):
        bin_spokes([0.0, 1.0], 1, 2, binning="random")


def test_phases_are_exact_fractions():
    s = golden_angle_schedule(16, 8)
    assert [float(s.phase(j)) for j in range(16)] == [(j + 1) / 16 for j in range(16)]
    assert np.array_equal(s.phases, (s.frames + 1) / 16)
    entries = s.entries
    assert entries[0].cardiac_phase == 1 / 16 and entries[-1].cardiac_phase == 1.0


@settings(max_examples=30)
@given(st.integers(1, 20), st.integers(1, 12), st.sampled_from(["sequential", "interleaved"]))
def test_binning_partitions_spokes(n_t, spf, mode):
    s = golden_angle_schedule(n_t, spf, binning=mode)
    seen = np.concatenate([s.spokes_in_frame(j) for j in range(n_t)])
    assert sorted(seen.tolist()) == list(range(n_t * spf))
    assert all(len(s.spokes_in_frame(j)) == spf for j in range(n_t))


def test_window_of_eight_max_gap():
    a = golden_angle_sequence(500)
    worst = max(orientation_gaps(a[i:i + 8]).max() for i in range(len(a) - 7))
    assert worst < 0.8


def test_records_roundtrip():
    s = golden_angle_schedule(4, 3, binning="interleaved")
    back = SpokeSchedule.from_records(s.to_records(), 4, 3, "interleaved")
    assert np.array_equal(back.angles, s.angles)
    assert np.array_equal(back.frames, s.frames)


def test_schedule_validates_quota():
    with pytest.raises(InvalidScheduleError):
        SpokeSchedule(2, 2, np.zeros(4), np.array([0, 0, 0, 1]))
