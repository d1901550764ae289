"""Parametric road maps, the manoeuvre state machine and position-based labels.

Heading convention: a left turn increases heading (counter-clockwise in a
right-handed ground frame with x east, y north). Every module uses this.
"""
from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyTrack, IllegalAdjacency, NonPositiveLength, OutOfTrack


class ManoeuvreLabel(enum.IntEnum):
    LEFT = 0
    STRAIGHT = 1
    RIGHT = 2


N_CLASSES = len(ManoeuvreLabel)


class SegmentKind(enum.Enum):
    STRAIGHT = "straight"
    LEFT = "left"
    RIGHT = "right"

    @property
    def label(self) -> ManoeuvreLabel:
        return _KIND_LABEL[self]


_KIND_LABEL = {
    SegmentKind.STRAIGHT: ManoeuvreLabel.STRAIGHT,
    SegmentKind.LEFT: ManoeuvreLabel.LEFT,
    SegmentKind.RIGHT: ManoeuvreLabel.RIGHT,
}


@dataclass(frozen=True)
class RoadSegment:
    kind: SegmentKind
    length: float
    radius: float | None = None
    angle: float | None = None  # unsigned turn angle, direction comes from kind

    @classmethod
    def straight(cls, length: float) -> "RoadSegment":
        return cls(SegmentKind.STRAIGHT, float(length))

    @classmethod
    def turn(cls, kind: SegmentKind | str, radius: float, angle: float) -> "RoadSegment":
        kind = SegmentKind(kind)
        if kind is SegmentKind.STRAIGHT:
            raise ValueError("turn() needs a left or right kind")
        return cls(kind, float(radius) * abs(float(angle)), float(radius), abs(float(angle)))

    @property
    def curvature(self) -> float:
        """Signed curvature (1/m); positive for left turns."""
        if self.kind is SegmentKind.STRAIGHT:
            return 0.0
        sign = 1.0 if self.kind is SegmentKind.LEFT else -1.0
        return sign / self.radius

    def to_dict(self) -> dict:
        if self.kind is SegmentKind.STRAIGHT:
            return {"kind": "straight", "length": self.length}
        return {"kind": self.kind.value, "radius": self.radius, "angle": self.angle}

    @classmethod
    def from_dict(cls, d: dict) -> "RoadSegment":
        kind = SegmentKind(d["kind"])
        if kind is SegmentKind.STRAIGHT:
            return cls.straight(d["length"])
        return cls.turn(kind, d["radius"], d["angle"])


@dataclass(frozen=True)
class TrackMap:
    """Ordered road segments with cumulative arc lengths.

    Build through :func:`build_track_map`, which validates the segment list.
    """

    segments: tuple[RoadSegment, ...]
    cumulative_s: tuple[float, ...]
    # pose (x, y, heading) at the start of every segment, plus the end pose
    start_poses: tuple[tuple[float, float, float], ...] = field(repr=False, default=())

    @property
    def total_length(self) -> float:
        return self.cumulative_s[-1]

    def segment_index(self, s: float) -> int:
        if not (0.0 <= s < self.total_length):
            raise OutOfTrack(f"s={s} outside [0, {self.total_length})")
        # a boundary belongs to the segment that starts there
        return bisect.bisect_right(self.cumulative_s, s) - 1

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Centreline (x, y, heading) at arc length ``s``; clamps past the end."""
        if s >= self.total_length:
            s_end = self.total_length
            x, y, h = self.start_poses[-1]
            return x + (s - s_end) * math.cos(h), y + (s - s_end) * math.sin(h), h
        i = self.segment_index(max(s, 0.0))
        x0, y0, h0 = self.start_poses[i]
        return _advance(x0, y0, h0, self.segments[i].curvature, s - self.cumulative_s[i])

    def labels_on_grid(self, step: float) -> np.ndarray:
        grid = np.arange(0.0, self.total_length, step)
        idx = np.searchsorted(np.asarray(self.cumulative_s), grid, side="right") - 1
        seg_labels = np.array([seg.kind.label for seg in self.segments], dtype=np.int64)
        return seg_labels[idx]

    def to_json(self) -> str:
        return json.dumps([seg.to_dict() for seg in self.segments])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "TrackMap":
        return build_track_map([RoadSegment.from_dict(d) for d in json.loads(text)])

    @classmethod
    def load(cls, path: str | Path) -> "TrackMap":
        return cls.from_json(Path(path).read_text())


def _advance(x: float, y: float, h: float, kappa: float, ds: float) -> tuple[float, float, float]:
    if kappa == 0.0:
        return x + ds * math.cos(h), y + ds * math.sin(h), h
    h1 = h + kappa * ds
    return (
        x + (math.sin(h1) - math.sin(h)) / kappa,
        y - (math.cos(h1) - math.cos(h)) / kappa,
        h1,
    )


def build_track_map(segments: Iterable[RoadSegment]) -> TrackMap:
    segments = tuple(segments)
    if not segments:
        raise EmptyTrack("track needs at least one segment")
    for seg in segments:
        if not (seg.length > 0):
            raise NonPositiveLength(f"segment {seg} has non-positive length")
        if seg.kind is not SegmentKind.STRAIGHT and not (seg.radius and seg.radius > 0):
            raise NonPositiveLength(f"turn {seg} needs a positive radius")
    turns = {SegmentKind.LEFT, SegmentKind.RIGHT}
    for a, b in zip(segments, segments[1:]):
        if a.kind in turns and b.kind in turns and a.kind is not b.kind:
            raise IllegalAdjacency(f"{a.kind.value} turn directly followed by {b.kind.value} turn")

    cumulative = [0.0]
    poses = [(0.0, 0.0, 0.0)]
    for seg in segments:
        cumulative.append(cumulative[-1] + seg.length)
        poses.append(_advance(*poses[-1], seg.curvature, seg.length))
    return TrackMap(segments, tuple(cumulative), tuple(poses))


def label_at(track: TrackMap, s: float) -> ManoeuvreLabel:
    return track.segments[track.segment_index(s)].kind.label


def next_transition(track: TrackMap, s: float) -> tuple[float, ManoeuvreLabel | None]:
    """Distance to the next segment boundary and the label beyond it.

    The label is ``None`` inside the final segment, where the distance is to
    the end of the track.
    """
    i = track.segment_index(s)
    dist = track.cumulative_s[i + 1] - s
    if i + 1 >= len(track.segments):
        return dist, None
    return dist, track.segments[i + 1].kind.label


def one_hot(label: ManoeuvreLabel | int) -> np.ndarray:
    v = np.zeros(N_CLASSES)
    v[ManoeuvreLabel(label)] = 1.0
    return v


def one_hot_many(labels: Sequence[int] | np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return np.eye(N_CLASSES)[labels]


def validate_transitions(labels: Sequence[int]) -> bool:
    """True iff every label change passes through STRAIGHT."""
    straight = ManoeuvreLabel.STRAIGHT
    for a, b in zip(labels, labels[1:]):
        if a != b and a != straight and b != straight:
            return False
    return True
