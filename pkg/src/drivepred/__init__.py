"""Driver manoeuvre identification and prediction from upper-body pose."""
from .features import FeatureSet, extract_features, window_sequences
from .nn import SequenceModel, init_model, param_count
from .sim import DriverProfile, generate_track, simulate_session
from .track import ManoeuvreLabel, RoadSegment, TrackMap, build_track_map

__all__ = [
    "DriverProfile",
    "FeatureSet",
    "ManoeuvreLabel",
    "RoadSegment",
    "SequenceModel",
    "TrackMap",
    "build_track_map",
    "extract_features",
    "generate_track",
    "init_model",
    "param_count",
    "simulate_session",
    "window_sequences",
]
__version__ = "0.1.0"
