import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drivepred.errors import EmptyTrack, IllegalAdjacency, NonPositiveLength, OutOfTrack
from drivepred.sim import TrackSpec, generate_track
from drivepred.track import (
    ManoeuvreLabel,
    RoadSegment,
    TrackMap,
    build_track_map,
    label_at,
    next_transition,
    one_hot,
    one_hot_many,
    validate_transitions,
)

L, S, R = ManoeuvreLabel.LEFT, ManoeuvreLabel.STRAIGHT, ManoeuvreLabel.RIGHT


@pytest.fixture
def two_seg():
    return build_track_map([RoadSegment.straight(500), RoadSegment.turn("left", 30, math.pi / 2)])


@pytest.fixture
def three_seg():
    return build_track_map([RoadSegment.straight(500), RoadSegment.turn("left", 30, math.pi / 2), RoadSegment.straight(300)])


def test_label_indices_fixed():
    assert [int(L), int(S), int(R)] == [0, 1, 2]
    assert len(ManoeuvreLabel) == 3


def test_cumulative_arc_length(two_seg):
    assert two_seg.cumulative_s[0] == 0.0
    assert two_seg.cumulative_s[1] == 500.0
    assert two_seg.cumulative_s[2] == pytest.approx(547.1239, abs=1e-4)
    assert two_seg.cumulative_s[2] == pytest.approx(500 + 30 * math.pi / 2, rel=1e-12)


def test_single_straight_length():
    assert build_track_map([RoadSegment.straight(100)]).total_length == 100.0


def test_turn_length_is_radius_times_angle():
    seg = RoadSegment.turn("right", 42.0, 1.1)
    assert seg.length == pytest.approx(42.0 * 1.1, rel=1e-12)


def test_left_right_adjacent_rejected():
    with pytest.raises(IllegalAdjacency):
        build_track_map([RoadSegment.turn("left", 30, math.pi / 2), RoadSegment.turn("right", 30, math.pi / 2)])


def test_same_direction_turns_allowed():
    m = build_track_map([RoadSegment.turn("left", 30, 0.5), RoadSegment.turn("left", 50, 0.5)])
    assert len(m.segments) == 2


def test_empty_and_nonpositive():
    with pytest.raises(EmptyTrack):
        build_track_map([])
    with pytest.raises(NonPositiveLength):
        build_track_map([RoadSegment.straight(0.0)])
    with pytest.raises(NonPositiveLength):
        build_track_map([RoadSegment.straight(-3.0)])


def test_label_at_examples(two_seg):
    assert label_at(two_seg, 250) is S
    assert label_at(two_seg, 520) is L
    with pytest.raises(OutOfTrack):
        label_at(two_seg, 600)
    with pytest.raises(OutOfTrack):
        label_at(two_seg, -0.1)
    with pytest.raises(OutOfTrack):
        label_at(two_seg, two_seg.total_length)


def test_boundary_belongs_to_new_segment(two_seg):
    assert label_at(two_seg, 500.0) is L
    assert label_at(two_seg, math.nextafter(500.0, 0.0)) is S


def test_next_transition_examples(three_seg):
    d, nxt = next_transition(three_seg, 250)
    assert d == pytest.approx(250) and nxt is L
    d, nxt = next_transition(three_seg, 510)
    assert d == pytest.approx(37.12, abs=5e-3) and nxt is S
    d, nxt = next_transition(three_seg, 800)
    assert d == pytest.approx(47.12, abs=5e-3) and nxt is None
    assert three_seg.total_length == pytest.approx(847.12, abs=5e-3)


def test_one_hot_examples():
    np.testing.assert_array_equal(one_hot(L), [1, 0, 0])
    np.testing.assert_array_equal(one_hot(S), [0, 1, 0])
    np.testing.assert_array_equal(one_hot(R), [0, 0, 1])


@given(st.lists(st.sampled_from([0, 1, 2]), max_size=60))
def test_one_hot_rows_are_basis_vectors(labels):
    m = one_hot_many(labels).reshape(-1, 3)
    assert np.all(m.sum(axis=1) == 1)
    assert set(np.unique(m)) <= {0.0, 1.0}
    np.testing.assert_array_equal(m.argmax(axis=1), labels)


def test_validate_transitions_examples():
    assert validate_transitions([S, S, L, L, S])
    assert not validate_transitions([L, R])
    assert validate_transitions([])


def _brute_valid(seq):
    # oracle: collapse runs; every adjacent pair of distinct labels must include STRAIGHT
    runs = [k for i, k in enumerate(seq) if i == 0 or seq[i - 1] != k]
    return all(S in (a, b) for a, b in zip(runs, runs[1:]))


@given(st.lists(st.sampled_from([L, S, R]), max_size=40))
def test_validate_transitions_matches_run_oracle(seq):
    assert validate_transitions(seq) == _brute_valid(seq)


def test_pose_closed_form(two_seg):
    # quarter left turn of radius 30 starting at (500, 0) heading east ends at (530, 30) heading north
    x, y, h = two_seg.pose_at(two_seg.total_length - 1e-12)
    assert (x, y, h) == pytest.approx((530.0, 30.0, math.pi / 2), abs=1e-6)


def test_json_roundtrip_and_format(three_seg, tmp_path):
    raw = json.loads(three_seg.to_json())
    assert raw[0] == {"kind": "straight", "length": 500.0}
    assert raw[1]["kind"] == "left" and raw[1]["radius"] == 30.0
    three_seg.save(tmp_path / "t.json")
    assert TrackMap.load(tmp_path / "t.json") == three_seg
    parsed = TrackMap.from_json('[{"kind":"straight","length":500.0},{"kind":"left","radius":30.0,"angle":1.5708}]')
    assert parsed.total_length == pytest.approx(500 + 30 * 1.5708)


segment_lists = st.lists(
    st.one_of(
        st.floats(1.0, 500.0).map(RoadSegment.straight),
        st.tuples(st.sampled_from(["left", "right"]), st.floats(5.0, 200.0), st.floats(0.05, 3.0)).map(lambda a: RoadSegment.turn(*a)),
    ),
    min_size=1,
    max_size=12,
)


@given(segment_lists)
def test_built_maps_are_consistent(segs):
    try:
        m = build_track_map(segs)
    except IllegalAdjacency:
        kinds = [s.kind.value for s in segs]
        assert any({a, b} == {"left", "right"} for a, b in zip(kinds, kinds[1:]))
        return
    assert m.cumulative_s[-1] == pytest.approx(math.fsum(s.length for s in segs), rel=1e-9)
    for i, seg in enumerate(m.segments):
        assert m.cumulative_s[i + 1] - m.cumulative_s[i] == pytest.approx(seg.length, rel=1e-9)
        assert label_at(m, m.cumulative_s[i]) == seg.kind.label
    assert validate_transitions(m.labels_on_grid(0.5))


def test_generated_track_determinism_and_count():
    assert generate_track(TrackSpec(n_turns=10), 7) == generate_track(TrackSpec(n_turns=10), 7)
    m = generate_track(TrackSpec(n_turns=5), 1)
    assert len(m.segments) == 11
    assert validate_transitions(m.labels_on_grid(1.0))
