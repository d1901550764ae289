"""Feature sets, scaling and sliding-window sequence assembly."""
from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, DegenerateVector, SeriesTooShort, ShapeMismatch
from .sim import Session
from .track import N_CLASSES, one_hot_many


class FeatureSet(enum.IntEnum):
    SET1 = 1  # raw joint positions
    SET2 = 2  # SET1 without spine-shoulder
    SET3 = 3  # spherical elbow angles
    SET4 = 4  # SET3 + driver inputs + speed
    SET5 = 5  # SET2 + driver inputs + speed


_XYZ = ("x", "y", "z")
_JOINT_COLS = [f"{j}_{a}" for j in ("spine_shoulder", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow") for a in _XYZ]
_ANGLE_COLS = ["left_azimuth", "left_elevation", "right_azimuth", "right_elevation"]
_INPUT_COLS = ["steering_wheel", "gas", "velocity"]

COLUMNS = {
    FeatureSet.SET1: _JOINT_COLS,
    FeatureSet.SET2: _JOINT_COLS[3:],
    FeatureSet.SET3: _ANGLE_COLS,
    FeatureSet.SET4: _ANGLE_COLS + _INPUT_COLS,
    FeatureSet.SET5: _JOINT_COLS[3:] + _INPUT_COLS,
}
WIDTH = {k: len(v) for k, v in COLUMNS.items()}


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # T x d
    set_id: FeatureSet
    column_names: tuple[str, ...]

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ShapeMismatch(f"values {self.values.shape} vs {len(self.column_names)} columns")


def spherical_projection(shoulder, elbow, torso_origin=None) -> tuple[float, float]:
    """Azimuth and elevation of the shoulder-to-elbow vector.

    The torso frame shares the sensor axes and is only translated to
    ``torso_origin``, so the difference vector is the same in both frames.
    Azimuth is measured in the lateral/depth plane, elevation from it
    towards +y; the radial part is dropped.
    """
    u = np.asarray(elbow, dtype=np.float64) - np.asarray(shoulder, dtype=np.float64)
    az, el = _spherical(u[None, :])
    return float(az[0]), float(el[0])


def _spherical(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = np.linalg.norm(u, axis=-1)
    if np.any(r < 1e-9):
        raise DegenerateVector("elbow coincides with shoulder")
    ux, uy, uz = u[..., 0], u[..., 1], u[..., 2]
    pole = (np.abs(ux) < 1e-12) & (np.abs(uz) < 1e-12)
    az = np.where(pole, 0.0, np.arctan2(uz, ux))
    el = np.arcsin(np.clip(uy / r, -1.0, 1.0))
    return az, el


def arm_angles(joints: np.ndarray) -> np.ndarray:
    """T x 5 x 3 joints -> T x 4 (left az, left el, right az, right el)."""
    l_az, l_el = _spherical(joints[:, 3] - joints[:, 1])
    r_az, r_el = _spherical(joints[:, 4] - joints[:, 2])
    return np.stack([l_az, l_el, r_az, r_el], axis=1)


def extract_features(session: Session, set_id: FeatureSet | int) -> FeatureMatrix:
    set_id = FeatureSet(set_id)
    flat = session.joints.reshape(len(session), 15)
    inputs = np.stack([session.steer, session.gas, np.abs(session.v)], axis=1)
    if set_id is FeatureSet.SET1:
        values = flat
    elif set_id is FeatureSet.SET2:
        values = flat[:, 3:]
    elif set_id is FeatureSet.SET3:
        values = arm_angles(session.joints)
    elif set_id is FeatureSet.SET4:
        values = np.hstack([arm_angles(session.joints), inputs])
    else:
        values = np.hstack([flat[:, 3:], inputs])
    return FeatureMatrix(np.ascontiguousarray(values, dtype=np.float64), set_id, tuple(COLUMNS[set_id]))


# --- scaling -----------------------------------------------------------------


class ScalerKind(enum.Enum):
    MINMAX_SYMMETRIC = "minmax_symmetric"
    STANDARDIZE = "standardize"


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-column affine map ``(x - offset) * scale``; constant columns get scale 0."""

    kind: ScalerKind
    offset: np.ndarray
    scale: np.ndarray

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return (values - self.offset) * self.scale

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(ScalerKind(d["kind"]), np.array(d["offset"], dtype=np.float64), np.array(d["scale"], dtype=np.float64))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Scaler)
            and self.kind == other.kind
            and np.array_equal(self.offset, other.offset)
            and np.array_equal(self.scale, other.scale)
        )


def _values(m) -> np.ndarray:
    v = m.values if isinstance(m, FeatureMatrix) else np.asarray(m, dtype=np.float64)
    return v.reshape(-1, v.shape[-1])


def fit_scaler(train, kind: ScalerKind | str = ScalerKind.MINMAX_SYMMETRIC) -> Scaler:
    """Learn column statistics from training rows (FeatureMatrix or ... x d array)."""
    kind = ScalerKind(kind)
    v = _values(train)
    if v.shape[0] == 0:
        raise ValueError("cannot fit a scaler on no rows")
    if kind is ScalerKind.MINMAX_SYMMETRIC:
        lo, hi = v.min(axis=0), v.max(axis=0)
        span = hi - lo
        offset = (hi + lo) / 2.0
        scale = np.divide(2.0, span, out=np.zeros_like(span), where=span > 0)
    else:
        offset = v.mean(axis=0)
        std = v.std(axis=0)
        # decide constancy on the range; the mean of a constant column can carry rounding
        live = (v.max(axis=0) > v.min(axis=0)) & (std > 0)
        scale = np.divide(1.0, std, out=np.zeros_like(std), where=live)
    return Scaler(kind, offset, scale)


def apply_scaler(scaler: Scaler, m):
    if isinstance(m, FeatureMatrix):
        return FeatureMatrix(scaler(m.values), m.set_id, m.column_names)
    return scaler(np.asarray(m, dtype=np.float64))


# --- windowing ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    X: np.ndarray  # N x t_wi x d
    Y: np.ndarray  # N x t_wo x 3, one-hot
    subject_id: np.ndarray  # N
    t_wi: int
    t_wo: int
    set_id: FeatureSet
    stride: int = 1

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[2]

    @property
    def current_label(self) -> np.ndarray:
        """Label at each window's present step (t_wo = 0)."""
        return self.Y[:, 0, :].argmax(axis=1)

    @property
    def labels(self) -> np.ndarray:
        """N x t_wo integer targets."""
        return self.Y.argmax(axis=2)

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowedDataset(self.X[idx], self.Y[idx], self.subject_id[idx], self.t_wi, self.t_wo, self.set_id, self.stride)

    @staticmethod
    def concat(parts: list["WindowedDataset"]) -> "WindowedDataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        first = parts[0]
        for p in parts[1:]:
            if (p.t_wi, p.t_wo, p.d, p.set_id) != (first.t_wi, first.t_wo, first.d, first.set_id):
                raise ShapeMismatch("datasets disagree on window shape or feature set")
        return WindowedDataset(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.Y for p in parts]),
            np.concatenate([p.subject_id for p in parts]),
            first.t_wi,
            first.t_wo,
            first.set_id,
            first.stride,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, WindowedDataset):
            return NotImplemented
        return (
            (self.t_wi, self.t_wo, self.set_id, self.stride) == (other.t_wi, other.t_wo, other.set_id, other.stride)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.Y, other.Y)
            and np.array_equal(self.subject_id, other.subject_id)
        )


def window_sequences(
    features: FeatureMatrix,
    labels,
    t_wi: int = 30,
    t_wo: int = 30,
    stride: int = 1,
    subject_id: int = 0,
) -> WindowedDataset:
    """Windows ending at t = t_wi-1, t_wi-1+stride, ... while t+t_wo-1 < T.

    Input rows are features[t-t_wi+1 .. t]; targets are labels[t .. t+t_wo-1].
    """
    values = features.values
    labels = np.asarray(labels, dtype=np.int64)
    T = values.shape[0]
    if labels.shape[0] != T:
        raise ShapeMismatch(f"{T} feature rows vs {labels.shape[0]} labels")
    if t_wi < 1 or t_wo < 1 or stride < 1:
        raise ValueError("t_wi, t_wo and stride must be >= 1")
    if T < t_wi + t_wo - 1:
        raise SeriesTooShort(f"T={T} < t_wi + t_wo - 1 = {t_wi + t_wo - 1}")
    ends = np.arange(t_wi - 1, T - t_wo + 1, stride)
    x_idx = ends[:, None] + np.arange(-t_wi + 1, 1)[None, :]
    y_idx = ends[:, None] + np.arange(t_wo)[None, :]
    return WindowedDataset(
        X=values[x_idx],
        Y=one_hot_many(labels[y_idx]),
        subject_id=np.full(len(ends), subject_id, dtype=np.int64),
        t_wi=t_wi,
        t_wo=t_wo,
        set_id=features.set_id,
        stride=stride,
    )


_MAGIC = b"MFW1"
_HEADER = struct.Struct("<4s6I")


def save_dataset(ds: WindowedDataset, path: str | Path) -> None:
    """Little-endian float32 X and Y, int32 subject ids, sha256 trailer."""
    n, d = len(ds), ds.d
    body = b"".join(
        [
            _HEADER.pack(_MAGIC, n, ds.t_wi, ds.t_wo, d, int(ds.set_id), ds.stride),
            ds.X.astype("<f4").tobytes(),
            ds.Y.astype("<f4").tobytes(),
            ds.subject_id.astype("<i4").tobytes(),
        ]
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_dataset(path: str | Path) -> WindowedDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 32:
        raise CorruptFile(f"{path}: too short")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: digest mismatch")
    magic, n, t_wi, t_wo, d, set_id, stride = _HEADER.unpack_from(body)
    if magic != _MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    off = _HEADER.size
    nx, ny = n * t_wi * d, n * t_wo * N_CLASSES
    if off + 4 * (nx + ny + n) != len(body):
        raise CorruptFile(f"{path}: payload size mismatch")
    X = np.frombuffer(body, "<f4", nx, off).reshape(n, t_wi, d)
    off += 4 * nx
    Y = np.frombuffer(body, "<f4", ny, off).reshape(n, t_wo, N_CLASSES)
    off += 4 * ny
    sid = np.frombuffer(body, "<i4", n, off)
    return WindowedDataset(
        X.astype(np.float64), Y.astype(np.float64), sid.astype(np.int64), t_wi, t_wo, FeatureSet(set_id), stride
    )


def noise_variance_ratio(noisy: np.ndarray, clean: np.ndarray) -> np.ndarray:
    """Per-column var(noisy) / var(clean)."""
    return np.var(noisy, axis=0) / np.var(clean, axis=0)


def describe_reduction(ratio_angles: float, ratio_raw: float) -> str:
    return f"variance ratio angles={ratio_angles:.3f} raw elbow z={ratio_raw:.3f} (reduction {100 * (1 - ratio_angles / ratio_raw):.1f}%)"

