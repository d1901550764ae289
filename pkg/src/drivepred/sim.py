"""Deterministic synthetic driving sessions.

A kinematic bicycle driven by a pure-pursuit driver over a :class:`TrackMap`,
with an arm model that turns the steering-wheel angle into skeletal joints
as a depth sensor in front of the driver would see them.

Sensor frame: x towards the driver's left, y up, z from the sensor towards
the driver (metres). The driver faces -z.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import Empty, InvalidSpec, LengthMismatch, OutOfTrack, Unreachable
from .track import (
    ManoeuvreLabel,
    RoadSegment,
    SegmentKind,
    TrackMap,
    build_track_map,
    label_at,
)

DT = 1.0 / 30.0
WHEELBASE = 2.5
STEERING_RATIO = 15.0
MAX_ROAD_WHEEL = 0.6
ACCEL_MAX = 2.5
BRAKE_MAX = 4.0
SPEED_GAIN = 1.2  # 1/s, proportional speed controller

WHEEL_RADIUS = 0.18
WHEEL_DROP = 0.15  # wheel centre below the spine-shoulder joint
GRIP_LIMIT = 1.2  # rad; past this the hands slide on the rim
SENSOR_TO_SPINE = np.array([0.0, -0.42, 1.25])

JOINTS = ("spine_shoulder", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow")


@dataclass(frozen=True)
class DriverProfile:
    subject_id: int = 1
    upper_arm: float = 0.30
    forearm: float = 0.25
    torso: float = 0.43
    shoulder_width: float = 0.38
    seat_distance: float = 0.30  # horizontal chest-to-wheel-centre distance
    lookahead_gain: float = 0.8
    lookahead_base: float = 5.0
    steering_lag: float = 0.15
    target_speed_straight: float = 14.0
    target_speed_turn: float = 8.0
    noise_joint_xy: float = 0.01
    noise_joint_z: float = 0.03
    outlier_rate: float = 0.005
    steer_noise: float = 0.002  # road-wheel actuation noise std (rad)
    seed: int = 0

    def __post_init__(self):
        lengths = (self.upper_arm, self.forearm, self.torso, self.shoulder_width, self.seat_distance)
        if min(lengths) <= 0:
            raise InvalidSpec("profile lengths must be positive")
        if self.noise_joint_z < self.noise_joint_xy:
            raise InvalidSpec("noise_joint_z must be >= noise_joint_xy")
        if self.lookahead_base <= 0 or self.lookahead_gain < 0 or self.steering_lag <= 0:
            raise InvalidSpec("lookahead_base and steering_lag must be positive")
        if not 0 <= self.outlier_rate <= 1:
            raise InvalidSpec("outlier_rate must be a probability")
        # grips must be reachable over the whole grip range
        for angle in (0.0, GRIP_LIMIT, -GRIP_LIMIT):
            arm_pose(self, angle)

    def noise_free(self) -> "DriverProfile":
        return dataclasses.replace(self, noise_joint_xy=0.0, noise_joint_z=0.0, outlier_rate=0.0)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DriverProfile":
        return cls(**d)


def sample_profile(subject_id: int, seed: int) -> DriverProfile:
    """Draw a plausible driver; anthropometrics loosely follow a 29-person sample."""
    rng = np.random.default_rng([seed, subject_id])
    return DriverProfile(
        subject_id=subject_id,
        upper_arm=float(rng.uniform(0.28, 0.33)),
        forearm=float(rng.uniform(0.24, 0.28)),
        torso=float(rng.uniform(0.38, 0.53)),
        shoulder_width=float(rng.uniform(0.34, 0.42)),
        seat_distance=float(rng.uniform(0.26, 0.33)),
        lookahead_gain=float(rng.uniform(0.75, 1.0)),
        lookahead_base=float(rng.uniform(5.0, 7.0)),
        steering_lag=float(rng.uniform(0.1, 0.25)),
        target_speed_straight=float(rng.uniform(12.0, 16.0)),
        target_speed_turn=float(rng.uniform(7.0, 9.0)),
        noise_joint_xy=0.01,
        noise_joint_z=0.03,
        outlier_rate=0.005,
        steer_noise=0.002,
        seed=int(rng.integers(2**63)),
    )


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    v: float = 0.0
    s: float = 0.0


def step_vehicle(
    state: VehicleState,
    road_wheel_angle: float,
    accel_cmd: float,
    dt: float,
    wheelbase: float = WHEELBASE,
) -> VehicleState:
    """One explicit-Euler step of the kinematic bicycle."""
    v = state.v
    return VehicleState(
        x=state.x + v * math.cos(state.heading) * dt,
        y=state.y + v * math.sin(state.heading) * dt,
        heading=state.heading + (v / wheelbase) * math.tan(road_wheel_angle) * dt,
        v=max(0.0, v + accel_cmd * dt),
        s=state.s + v * dt,
    )


@dataclass(frozen=True)
class TrackSpec:
    n_turns: int = 48
    straight_range: tuple[float, float] = (80.0, 200.0)
    radius_range: tuple[float, float] = (35.0, 70.0)
    angle_range: tuple[float, float] = (math.pi / 4, math.pi * 0.75)


def generate_track(spec: TrackSpec, seed: int) -> TrackMap:
    """Straight/turn alternation with leading and trailing straights."""
    ranges = (spec.straight_range, spec.radius_range, spec.angle_range)
    if spec.n_turns < 0 or any(len(r) != 2 or r[0] <= 0 or r[1] < r[0] for r in ranges):
        raise InvalidSpec(f"bad track spec {spec}")
    rng = np.random.default_rng(seed)
    segs = [RoadSegment.straight(rng.uniform(*spec.straight_range))]
    for _ in range(spec.n_turns):
        kind = SegmentKind.LEFT if rng.random() < 0.5 else SegmentKind.RIGHT
        segs.append(RoadSegment.turn(kind, rng.uniform(*spec.radius_range), rng.uniform(*spec.angle_range)))
        segs.append(RoadSegment.straight(rng.uniform(*spec.straight_range)))
    return build_track_map(segs)


class Control(NamedTuple):
    steering_wheel: float
    gas: float
    road_wheel: float  # lagged command before actuation noise
    accel: float


def lookahead_distance(profile: DriverProfile, v: float) -> float:
    return profile.lookahead_gain * v + profile.lookahead_base


def pure_pursuit(x: float, y: float, heading: float, tx: float, ty: float, wheelbase: float = WHEELBASE) -> float:
    """Road-wheel angle that puts the bicycle on an arc through (tx, ty)."""
    dx, dy = tx - x, ty - y
    ld = math.hypot(dx, dy)
    if ld < 1e-9:
        return 0.0
    alpha = math.atan2(dy, dx) - heading
    alpha = math.atan2(math.sin(alpha), math.cos(alpha))
    return math.atan(2.0 * wheelbase * math.sin(alpha) / ld)


def driver_control(
    profile: DriverProfile,
    state: VehicleState,
    track: TrackMap,
    rng: np.random.Generator,
    prev_road_wheel: float = 0.0,
    dt: float = DT,
) -> Control:
    """Anticipatory steering and speed command for the current state.

    ``prev_road_wheel`` carries the first-order steering lag between calls.
    """
    if not (0.0 <= state.s < track.total_length):
        raise OutOfTrack(f"s={state.s} outside track")
    ld = lookahead_distance(profile, state.v)
    tx, ty, _ = track.pose_at(state.s + ld)
    cmd = float(np.clip(pure_pursuit(state.x, state.y, state.heading, tx, ty), -MAX_ROAD_WHEEL, MAX_ROAD_WHEEL))
    blend = 1.0 - math.exp(-dt / profile.steering_lag)
    lagged = prev_road_wheel + blend * (cmd - prev_road_wheel)
    actual = lagged + profile.steer_noise * rng.standard_normal()

    s_look = min(state.s + ld, math.nextafter(track.total_length, 0.0))
    turning = label_at(track, s_look) is not ManoeuvreLabel.STRAIGHT
    v_target = profile.target_speed_turn if turning else profile.target_speed_straight
    accel = float(np.clip(SPEED_GAIN * (v_target - state.v), -BRAKE_MAX, ACCEL_MAX))
    gas = max(accel, 0.0) / ACCEL_MAX
    return Control(actual * STEERING_RATIO, gas, lagged, accel)


def _elbow(shoulder: np.ndarray, grip: np.ndarray, upper: float, fore: float, outward: np.ndarray) -> np.ndarray:
    axis = grip - shoulder
    d = float(np.linalg.norm(axis))
    if d > upper + fore or d < abs(upper - fore) or d == 0.0:
        raise Unreachable(f"grip at {d:.3f} m, arm links {upper:.3f}+{fore:.3f} m")
    n = axis / d
    a = (upper**2 - fore**2 + d**2) / (2.0 * d)
    r = math.sqrt(max(upper**2 - a**2, 0.0))
    perp = outward - np.dot(outward, n) * n
    norm = np.linalg.norm(perp)
    if norm < 1e-12:
        perp = np.array([0.0, -1.0, 0.0]) - n[1] * n
        norm = np.linalg.norm(perp)
    return shoulder + a * n + r * perp / norm


def arm_pose(profile: DriverProfile, steering_wheel: float) -> np.ndarray:
    """Noise-free joints (5 x 3, order of ``JOINTS``) for a steering-wheel angle.

    Hands hold the rim at 9 and 3 o'clock and rotate with the wheel up to
    ``GRIP_LIMIT``; each elbow is the two-link solution bent outwards.
    """
    spine = SENSOR_TO_SPINE + np.array([0.0, profile.torso - 0.43, 0.0])
    half = np.array([profile.shoulder_width / 2.0, 0.0, 0.0])
    l_sh, r_sh = spine + half, spine - half
    centre = spine + np.array([0.0, -WHEEL_DROP, -profile.seat_distance])
    th = float(np.clip(steering_wheel, -GRIP_LIMIT, GRIP_LIMIT))
    c, s = math.cos(th), math.sin(th)
    l_grip = centre + WHEEL_RADIUS * np.array([c, -s, 0.0])
    r_grip = centre + WHEEL_RADIUS * np.array([-c, s, 0.0])
    x_out = np.array([1.0, 0.0, 0.0])
    l_el = _elbow(l_sh, l_grip, profile.upper_arm, profile.forearm, x_out)
    r_el = _elbow(r_sh, r_grip, profile.upper_arm, profile.forearm, -x_out)
    return np.stack([spine, l_sh, r_sh, l_el, r_el])


def inject_noise(joints: np.ndarray, profile: DriverProfile, rng: np.random.Generator) -> np.ndarray:
    sigma = np.array([profile.noise_joint_xy, profile.noise_joint_xy, profile.noise_joint_z])
    noisy = joints + rng.standard_normal(joints.shape) * sigma
    if rng.random() < profile.outlier_rate:
        j, axis = rng.integers(joints.shape[0]), rng.integers(3)
        spike = rng.uniform(3.0, 10.0) * profile.noise_joint_z * (1.0 if rng.random() < 0.5 else -1.0)
        noisy[j] = joints[j]
        noisy[j, axis] += spike
    return noisy


@dataclass(frozen=True, eq=False)
class Session:
    """One recorded drive; every array has one row per time step."""

    profile: DriverProfile
    dt: float
    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    v: np.ndarray
    steer: np.ndarray
    gas: np.ndarray
    joints: np.ndarray  # T x 5 x 3
    label: np.ndarray  # int, ManoeuvreLabel indices

    def __len__(self) -> int:
        return len(self.t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Session):
            return NotImplemented
        return (
            self.profile == other.profile
            and self.dt == other.dt
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in _ARRAY_FIELDS)
        )


_ARRAY_FIELDS = ("t", "s", "x", "y", "heading", "v", "steer", "gas", "joints", "label")


def _project(track: TrackMap, x: float, y: float, s_guess: float) -> float:
    s = s_guess
    for _ in range(3):
        cx, cy, h = track.pose_at(min(max(s, 0.0), track.total_length))
        s += (x - cx) * math.cos(h) + (y - cy) * math.sin(h)
    return s


def simulate_session(track: TrackMap, profile: DriverProfile, duration: float, dt: float = DT) -> Session:
    """Drive ``track`` from s=0 until ``duration`` or the end of the track.

    Control noise and sensor noise use independent streams spawned from
    ``profile.seed``, so a noise-free profile with the same seed drives the
    exact same trajectory.
    """
    if duration <= 0 or dt <= 0:
        raise InvalidSpec("duration and dt must be positive")
    ctrl_seq, noise_seq = np.random.SeedSequence(profile.seed).spawn(2)
    ctrl_rng, noise_rng = np.random.default_rng(ctrl_seq), np.random.default_rng(noise_seq)
    n_max = int(math.floor(duration / dt + 1e-9))

    x0, y0, h0 = track.pose_at(0.0)
    state = VehicleState(x0, y0, h0, profile.target_speed_straight, 0.0)
    road_wheel = 0.0
    rows, frames, labels = [], [], []
    for k in range(n_max):
        ctl = driver_control(profile, state, track, ctrl_rng, road_wheel, dt)
        road_wheel = ctl.road_wheel
        frame = inject_noise(arm_pose(profile, ctl.steering_wheel), profile, noise_rng)
        rows.append((k * dt, state.s, state.x, state.y, state.heading, state.v, ctl.steering_wheel, ctl.gas))
        frames.append(frame)
        labels.append(int(label_at(track, state.s)))

        nxt = step_vehicle(state, ctl.steering_wheel / STEERING_RATIO, ctl.accel, dt)
        # keep s on the centreline so labels follow the physical position
        s_new = max(state.s, _project(track, nxt.x, nxt.y, nxt.s))
        if s_new >= track.total_length:
            break
        state = dataclasses.replace(nxt, s=s_new)

    cols = np.array(rows, dtype=np.float64).reshape(-1, 8)
    return Session(
        profile=profile,
        dt=dt,
        t=cols[:, 0].copy(),
        s=cols[:, 1].copy(),
        x=cols[:, 2].copy(),
        y=cols[:, 3].copy(),
        heading=cols[:, 4].copy(),
        v=cols[:, 5].copy(),
        steer=cols[:, 6].copy(),
        gas=cols[:, 7].copy(),
        joints=np.array(frames, dtype=np.float64).reshape(-1, 5, 3),
        label=np.array(labels, dtype=np.int64),
    )


# --- lane change task -------------------------------------------------------

LANE_WIDTH = 3.5
LCT_SPEED = 60.0 / 3.6
LCT_SIGN_SPACING = 150.0
LCT_VISIBILITY = 40.0
LCT_RAMP = 30.0


def lct_normative(signs: list[tuple[float, float]], start_lane: float, s: np.ndarray, ramp: float = LCT_RAMP) -> np.ndarray:
    """Trapezoidal reference lateral position.

    Each sign ``(position, target_lateral)`` starts a linear ramp of length
    ``ramp`` at the point where the sign becomes visible.
    """
    lat = np.full_like(s, start_lane, dtype=np.float64)
    current = start_lane
    for pos, target in signs:
        start = pos - LCT_VISIBILITY
        frac = np.clip((s - start) / ramp, 0.0, 1.0)
        mask = s >= start
        lat[mask] = current + (target - current) * frac[mask]
        current = target
    return lat


def simulate_lct(profile: DriverProfile, length: float = 1800.0, dt: float = DT) -> tuple[np.ndarray, np.ndarray]:
    """Drive the lane change task; returns (driver lateral, normative lateral)."""
    rng = np.random.default_rng(np.random.SeedSequence(profile.seed).spawn(3)[2])
    lanes = (np.arange(3) - 1) * LANE_WIDTH
    lane = 1
    signs = []
    for pos in np.arange(LCT_SIGN_SPACING, length, LCT_SIGN_SPACING):
        lane = int(rng.choice([i for i in range(3) if i != lane]))
        signs.append((float(pos), float(lanes[lane])))

    s_fine = np.arange(0.0, length + 200.0, 0.5)
    ref = lct_normative(signs, 0.0, s_fine)

    state = VehicleState(0.0, 0.0, 0.0, LCT_SPEED, 0.0)
    road_wheel = 0.0
    blend = 1.0 - math.exp(-dt / profile.steering_lag)
    xs, ys = [], []
    while state.x < length:
        ld = lookahead_distance(profile, state.v)
        tx = state.x + ld
        ty = float(np.interp(tx, s_fine, ref))
        cmd = float(np.clip(pure_pursuit(state.x, state.y, state.heading, tx, ty), -MAX_ROAD_WHEEL, MAX_ROAD_WHEEL))
        road_wheel += blend * (cmd - road_wheel)
        actual = road_wheel + profile.steer_noise * rng.standard_normal()
        xs.append(state.x)
        ys.append(state.y)
        state = step_vehicle(state, actual, SPEED_GAIN * (LCT_SPEED - state.v), dt)
    xs = np.array(xs)
    return np.array(ys), np.interp(xs, s_fine, ref)


def lct_mdev(lateral_positions, normative) -> float:
    """Mean absolute lateral deviation from the normative path (metres)."""
    a = np.asarray(lateral_positions, dtype=np.float64)
    b = np.asarray(normative, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if a.size == 0:
        raise Empty("no samples")
    return float(np.mean(np.abs(a - b)))
