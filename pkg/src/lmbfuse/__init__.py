"""Multi-sensor labeled multi-Bernoulli fusion with extent inference from reference points."""
from .errors import (
    ConfigError,
    GeometryError,
    InvalidReferencePoint,
    LateMessage,
    LmbFuseError,
    NotInFilterState,
    NumericalError,
    SchemaError,
    UnknownSensor,
    ValidationError,
)
from .fusion import FusionCenter
from .geometry import CoveredArea, candidate_reference_points, corner_offset, signed_distance
from .interface import DownlinkMessage, Header, SensorProfile, TrackRecord, UplinkMessage, parse, serialize
from .lmb import FilterConfig, Tracker
from .metrics import OspatConfig, ospat
from .types import BernoulliTrack, Detection, Feature, LMBDensity, ReferencePoint, StateGaussian

__version__ = "0.1.0"

__all__ = [
    "BernoulliTrack",
    "ConfigError",
    "CoveredArea",
    "Detection",
    "DownlinkMessage",
    "Feature",
    "FilterConfig",
    "FusionCenter",
    "GeometryError",
    "Header",
    "InvalidReferencePoint",
    "LMBDensity",
    "LateMessage",
    "LmbFuseError",
    "NotInFilterState",
    "NumericalError",
    "OspatConfig",
    "ReferencePoint",
    "SchemaError",
    "SensorProfile",
    "StateGaussian",
    "TrackRecord",
    "Tracker",
    "UnknownSensor",
    "UplinkMessage",
    "ValidationError",
    "candidate_reference_points",
    "corner_offset",
    "ospat",
    "parse",
    "serialize",
    "signed_distance",
]
