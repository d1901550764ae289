import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drivepred.errors import Empty, InvalidSpec, LengthMismatch, OutOfTrack, Unreachable
from drivepred.sim import (
    DT,
    STEERING_RATIO,
    WHEEL_DROP,
    WHEEL_RADIUS,
    DriverProfile,
    TrackSpec,
    VehicleState,
    arm_pose,
    driver_control,
    generate_track,
    lct_mdev,
    sample_profile,
    simulate_lct,
    simulate_session,
    step_vehicle,
)
from drivepred.track import ManoeuvreLabel, RoadSegment, build_track_map, label_at, validate_transitions

MIRROR = np.array([-1.0, 1.0, 1.0])


def test_straight_step_advances():
    s1 = step_vehicle(VehicleState(0, 0, 0, 10, 0), 0.0, 0.0, 0.033, 2.5)
    assert s1.x == pytest.approx(0.33, abs=1e-12)
    assert s1.y == 0.0 and s1.heading == 0.0 and s1.s == pytest.approx(0.33)


def test_yaw_rate_closed_form():
    dt = 1e-3
    s1 = step_vehicle(VehicleState(0, 0, 0, 10, 0), 0.1, 0.0, dt, 2.5)
    assert s1.heading / dt == pytest.approx(0.40134, abs=1e-5)


def test_zero_speed_is_fixed_point():
    st0 = VehicleState(1.0, 2.0, 0.3, 0.0, 5.0)
    assert step_vehicle(st0, 0.4, 0.0, DT) == st0


def test_speed_saturates_at_zero():
    assert step_vehicle(VehicleState(v=0.5), 0.0, -100.0, DT).v == 0.0


@given(st.floats(0.1, 40.0), st.floats(-math.pi, math.pi), st.integers(1, 500))
def test_no_input_keeps_speed_and_heading(v, h, n):
    state = VehicleState(0.0, 0.0, h, v, 0.0)
    for _ in range(n):
        state = step_vehicle(state, 0.0, 0.0, DT)
    assert state.v == v and state.heading == h


def test_generate_track_invalid_spec():
    with pytest.raises(InvalidSpec):
        generate_track(TrackSpec(straight_range=(10.0, 5.0)), 0)
    with pytest.raises(InvalidSpec):
        generate_track(TrackSpec(radius_range=(-1.0, 5.0)), 0)


def _on_straight():
    track = build_track_map([RoadSegment.straight(500), RoadSegment.turn("left", 40, math.pi / 2), RoadSegment.straight(200)])
    return track, VehicleState(100.0, 0.0, 0.0, 14.0, 100.0)


def test_mid_straight_steering_is_noise_only():
    track, state = _on_straight()
    p = DriverProfile()
    for seed in range(20):
        ctl = driver_control(p, state, track, np.random.default_rng(seed))
        assert abs(ctl.steering_wheel) < 3 * p.steer_noise * STEERING_RATIO


def test_control_deterministic_and_off_track():
    track, state = _on_straight()
    a = driver_control(DriverProfile(), state, track, np.random.default_rng(9))
    b = driver_control(DriverProfile(), state, track, np.random.default_rng(9))
    assert a == b
    with pytest.raises(OutOfTrack):
        driver_control(DriverProfile(), dataclasses.replace(state, s=1e6), track, np.random.default_rng(0))


def test_steers_left_before_left_turn():
    track, _ = _on_straight()
    sess = simulate_session(track, DriverProfile(seed=2), duration=45.0)
    k = int(np.argmax(sess.label == ManoeuvreLabel.LEFT))
    assert k > 0 and sess.label[k - 1] == ManoeuvreLabel.STRAIGHT
    assert np.all(sess.steer[k - 10 : k] > 0)


def test_arm_pose_symmetric_at_zero():
    for p in (DriverProfile(), sample_profile(3, 0)):
        j = arm_pose(p, 0.0)
        np.testing.assert_allclose(j[3], j[4] * MIRROR, atol=1e-9)
        np.testing.assert_allclose(j[1], j[2] * MIRROR, atol=1e-9)
        assert np.linalg.norm(j[1] - j[2]) == pytest.approx(p.shoulder_width, abs=1e-12)


@given(st.floats(-1.0, 1.0))
def test_arm_pose_mirror_under_opposite_steer(theta):
    p = DriverProfile()
    a, b = arm_pose(p, theta), arm_pose(p, -theta)
    np.testing.assert_allclose(a[3], b[4] * MIRROR, atol=1e-9)
    np.testing.assert_allclose(a[4], b[3] * MIRROR, atol=1e-9)


@given(st.floats(-1.2, 1.2))
def test_arm_links_have_fixed_length(theta):
    p = DriverProfile()
    j = arm_pose(p, theta)
    assert np.linalg.norm(j[3] - j[1]) == pytest.approx(p.upper_arm, abs=1e-9)
    assert np.linalg.norm(j[4] - j[2]) == pytest.approx(p.upper_arm, abs=1e-9)


def _other_elbow(shoulder, elbow, grip):
    # the second two-link solution: reflect the elbow through the shoulder-grip line
    n = (grip - shoulder) / np.linalg.norm(grip - shoulder)
    foot = shoulder + np.dot(elbow - shoulder, n) * n
    return 2 * foot - elbow


@given(st.floats(-1.2, 1.2))
def test_elbow_solution_is_the_outward_one(theta):
    p = DriverProfile()
    j = arm_pose(p, theta)
    centre = j[0] + np.array([0.0, -WHEEL_DROP, -p.seat_distance])
    c, s = math.cos(theta), math.sin(theta)
    l_grip = centre + WHEEL_RADIUS * np.array([c, -s, 0.0])
    r_grip = centre + WHEEL_RADIUS * np.array([-c, s, 0.0])
    assert np.linalg.norm(j[3] - l_grip) == pytest.approx(p.forearm, abs=1e-9)
    assert np.linalg.norm(j[4] - r_grip) == pytest.approx(p.forearm, abs=1e-9)
    assert j[3, 0] >= _other_elbow(j[1], j[3], l_grip)[0] - 1e-12
    assert j[4, 0] <= _other_elbow(j[2], j[4], r_grip)[0] + 1e-12


def test_unreachable_grip():
    with pytest.raises(Unreachable):
        DriverProfile(upper_arm=0.1, forearm=0.1)


def test_profile_validation():
    with pytest.raises(InvalidSpec):
        DriverProfile(noise_joint_xy=0.05, noise_joint_z=0.01)
    with pytest.raises(InvalidSpec):
        DriverProfile(torso=-1.0)
    assert DriverProfile.from_dict(DriverProfile(seed=4).to_dict()) == DriverProfile(seed=4)


def test_session_grid_and_labels(small_track, short_session):
    sess = short_session
    assert len(sess) <= 1800
    np.testing.assert_array_equal(sess.t, np.arange(len(sess)) * DT)
    assert validate_transitions(sess.label)
    assert all(sess.label[k] == label_at(small_track, sess.s[k]) for k in range(0, len(sess), 7))
    assert np.all(np.diff(sess.s) >= 0)
    assert np.all(sess.v >= 0)
    assert np.all((sess.gas >= 0) & (sess.gas <= 1))
    assert np.all(np.isfinite(sess.joints))


def test_session_determinism(small_track, short_session):
    again = simulate_session(small_track, DriverProfile(seed=5), duration=60.0)
    assert again == short_session
    other = simulate_session(small_track, DriverProfile(seed=6), duration=60.0)
    assert other != short_session


def test_session_stops_at_track_end():
    track = build_track_map([RoadSegment.straight(100.0)])
    sess = simulate_session(track, DriverProfile(), duration=60.0)
    assert len(sess) < 1800 and sess.s[-1] < 100.0


def test_noise_free_profile_drives_same_path(small_track, short_session):
    clean = simulate_session(small_track, short_session.profile.noise_free(), duration=60.0)
    np.testing.assert_array_equal(clean.steer, short_session.steer)
    noise = short_session.joints - clean.joints
    sd = noise.reshape(-1, 3).std(axis=0)
    assert sd[2] >= sd[0] and sd[2] >= sd[1]


def test_anticipation_before_every_turn():
    track = generate_track(TrackSpec(n_turns=8), 5)
    sess = simulate_session(track, DriverProfile(seed=1), duration=400.0)
    lab = sess.label
    straight_far = np.ones(len(lab), dtype=bool)
    for k in np.flatnonzero(np.diff(lab) != 0):
        straight_far[max(0, k - 90) : k + 90] = False
    sigma = sess.steer[straight_far & (lab == ManoeuvreLabel.STRAIGHT)].std()
    entries = [k + 1 for k in np.flatnonzero(np.diff(lab) != 0) if lab[k + 1] != ManoeuvreLabel.STRAIGHT]
    assert entries
    for k in entries:
        assert np.any(np.abs(sess.steer[k - 30 : k]) > 3 * sigma)


def test_mdev_examples():
    x = np.linspace(-3, 3, 50)
    assert lct_mdev(x, x) == 0.0
    assert lct_mdev(x + 0.5, x) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(LengthMismatch):
        lct_mdev([1.0, 2.0], [1.0])
    with pytest.raises(Empty):
        lct_mdev([], [])


def test_default_driver_passes_lct():
    drv, ref = simulate_lct(DriverProfile())
    assert lct_mdev(drv, ref) < 0.7
