"""Run configuration loaded from a TOML file.

Every random choice in a run traces back to one of the named seeds here.

Example::

    output_dir = "runs/desk"

    [subjects]
    count = 8
    profile_seed = 3
    [subjects.overrides.2]
    noise_joint_z = 0.05

    [track]
    seed = 11
    n_turns = 48

    [session]
    duration = 600.0

    [features]
    set_id = 4
    stride = 3

    [model]
    family = "bilstm"
    hidden = 32
    epochs = 30
    seed = 0

    [protocol]
    tests = [1, 2, 4]
    concat_sizes = [6]
    split_seed = 0
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .baselines import MlpConfig
from .errors import InvalidConfig
from .evaluation import FAMILIES, ProtocolConfig, SplitSpec
from .features import FeatureSet
from .nn import TrainConfig
from .sim import DT, DriverProfile, TrackSpec, sample_profile


@dataclass(frozen=True)
class SubjectsConfig:
    count: int = 8
    profile_seed: int = 0
    overrides: dict = field(default_factory=dict)  # subject id -> DriverProfile field overrides


@dataclass(frozen=True)
class FeaturesConfig:
    set_id: int = 4
    t_wi: int = 30
    t_wo: int = 30
    stride: int = 3


@dataclass(frozen=True)
class ModelConfig:
    family: str = "bilstm"
    hidden: int = 32
    epochs: int = 30
    batch_size: int = 64
    dropout_rate: float = 0.2
    lr: float = 1e-3
    seed: int = 0
    monitor_fraction: float = 0.1
    mlp_hidden: tuple[int, ...] = (64, 64)
    mlp_epochs: int = 50
    n_pre: int = 30


@dataclass(frozen=True)
class ProtocolSection:
    tests: tuple[int, ...] = (1, 2, 3, 4)
    concat_sizes: tuple[int, ...] | None = None
    split_seed: int = 0
    train_fraction: float = 0.7
    train_mode: str = "auto"  # auto | individual | concatenated


@dataclass(frozen=True)
class AssertConfig:
    identification_f1: float | None = None
    prediction_f1: float | None = None


@dataclass(frozen=True)
class RunConfig:
    output_dir: Path = Path("run")
    subjects: SubjectsConfig = SubjectsConfig()
    track_seed: int = 0
    track: TrackSpec = TrackSpec()
    duration: float = 600.0
    dt: float = DT
    features: FeaturesConfig = FeaturesConfig()
    model: ModelConfig = ModelConfig()
    protocol: ProtocolSection = ProtocolSection()
    thresholds: AssertConfig = AssertConfig()

    def profiles(self) -> list[DriverProfile]:
        out = []
        for sid in range(1, self.subjects.count + 1):
            p = sample_profile(sid, self.subjects.profile_seed)
            extra = self.subjects.overrides.get(str(sid)) or self.subjects.overrides.get(sid)
            if extra:
                try:
                    p = dataclasses.replace(p, **extra)
                except TypeError as exc:
                    raise InvalidConfig(f"subject {sid}: {exc}") from exc
            out.append(p)
        return out

    def protocol_config(self) -> ProtocolConfig:
        m = self.model
        return ProtocolConfig(
            family=m.family,
            hidden=m.hidden,
            train=TrainConfig(m.epochs, m.batch_size, m.seed, m.dropout_rate, m.lr),
            split=SplitSpec(self.protocol.train_fraction, self.protocol.split_seed),
            monitor_fraction=m.monitor_fraction,
            concat_sizes=self.protocol.concat_sizes,
            n_pre=m.n_pre,
            mlp=MlpConfig(m.mlp_hidden, m.mlp_epochs, m.batch_size, m.lr, m.seed),
        )

    @property
    def set_id(self) -> FeatureSet:
        return FeatureSet(self.features.set_id)


def _section(cls, raw: dict | None, name: str):
    raw = dict(raw or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise InvalidConfig(f"[{name}] unknown keys: {sorted(unknown)}")
    for f in dataclasses.fields(cls):
        if f.name in raw and isinstance(raw[f.name], list):
            raw[f.name] = tuple(raw[f.name])
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"[{name}]: {exc}") from exc


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    raw = dict(raw)
    known = {"output_dir", "subjects", "track", "session", "features", "model", "protocol", "assert"}
    unknown = set(raw) - known
    if unknown:
        raise InvalidConfig(f"unknown top-level keys: {sorted(unknown)}")
    track_raw = dict(raw.get("track") or {})
    if "seed" not in track_raw:
        raise InvalidConfig("[track] seed is required")
    track_seed = int(track_raw.pop("seed"))
    subjects_raw = raw.get("subjects") or {}
    if "profile_seed" not in subjects_raw:
        raise InvalidConfig("[subjects] profile_seed is required")
    session = raw.get("session") or {}
    out = Path(raw.get("output_dir", "run"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    cfg = RunConfig(
        output_dir=out,
        subjects=_section(SubjectsConfig, subjects_raw, "subjects"),
        track_seed=track_seed,
        track=_section(TrackSpec, track_raw, "track"),
        duration=float(session.get("duration", 600.0)),
        dt=float(session.get("dt", DT)),
        features=_section(FeaturesConfig, raw.get("features"), "features"),
        model=_section(ModelConfig, raw.get("model"), "model"),
        protocol=_section(ProtocolSection, raw.get("protocol"), "protocol"),
        thresholds=_section(AssertConfig, raw.get("assert"), "assert"),
    )
    if cfg.subjects.count < 1 or cfg.duration <= 0:
        raise InvalidConfig("need at least one subject and a positive duration")
    if cfg.model.family not in FAMILIES:
        raise InvalidConfig(f"model.family must be one of {FAMILIES}")
    if cfg.protocol.train_mode not in ("auto", "individual", "concatenated"):
        raise InvalidConfig("protocol.train_mode must be auto, individual or concatenated")
    if not set(cfg.protocol.tests) <= {1, 2, 3, 4}:
        raise InvalidConfig("protocol.tests must be drawn from 1..4")
    try:
        FeatureSet(cfg.features.set_id)
    except ValueError as exc:
        raise InvalidConfig(str(exc)) from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)
