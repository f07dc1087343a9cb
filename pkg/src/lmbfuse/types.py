"""Object model shared by the filter, the message layer and the simulator.

Tracks are stored with their position at the rectangle center. Detections
carry positions relative to one of the four rectangle corners; the
conversion between the two happens in :mod:`lmbfuse.measurement` only.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping

import numpy as np

from .errors import ConfigError, NotInFilterState, ValidationError

STATE_DIM = 8


class Feature(IntEnum):
    POS_X = 0
    POS_Y = 1
    HEADING = 2
    YAW_RATE = 3
    SPEED = 4
    ACCEL = 5
    WIDTH = 6
    LENGTH = 7
    HEIGHT = 8

    @property
    def wire_name(self) -> str:
        return _WIRE_NAMES[self]

    @classmethod
    def from_wire(cls, name: str) -> "Feature":
        try:
            return _FROM_WIRE[name]
        except KeyError:
            raise ValueError(f"unknown feature {name!r}") from None


_WIRE_NAMES = {
    Feature.POS_X: "x",
    Feature.POS_Y: "y",
    Feature.HEADING: "heading",
    Feature.YAW_RATE: "yaw_rate",
    Feature.SPEED: "speed",
    Feature.ACCEL: "accel",
    Feature.WIDTH: "width",
    Feature.LENGTH: "length",
    Feature.HEIGHT: "height",
}
_FROM_WIRE = {v: k for k, v in _WIRE_NAMES.items()}

FILTER_FEATURES = tuple(f for f in Feature if f is not Feature.HEIGHT)


def canonical_index(f: Feature) -> int:
    """Index of ``f`` in the filter state ``[x, y, phi, phi_dot, v, v_dot, w, l]``."""
    f = Feature(f)
    if f is Feature.HEIGHT:
        raise NotInFilterState("height is carried as a track attribute, not in the state")
    return int(f)


def feature_at(index: int) -> Feature:
    if not 0 <= index < STATE_DIM:
        raise IndexError(index)
    return Feature(index)


class ReferencePoint(IntEnum):
    # enum order doubles as the deterministic tie-break order
    FL = 0
    FR = 1
    BL = 2
    BR = 3
    CENTER = 4


CORNERS = (ReferencePoint.FL, ReferencePoint.FR, ReferencePoint.BL, ReferencePoint.BR)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    # leave in-range angles bit-identical
    w = np.where((a > -np.pi) & (a <= np.pi), a, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class ClassSpec:
    width: float
    length: float
    height: float
    min_extent: float = 0.3
    max_extent: float = 30.0

    def __post_init__(self):
        for name in ("width", "length", "height"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} default must be finite and positive")
            if not self.min_extent <= v <= self.max_extent:
                raise ConfigError(f"{name} default {v} outside [{self.min_extent}, {self.max_extent}]")


DEFAULT_CLASSES: Mapping[str, ClassSpec] = {
    "car": ClassSpec(width=1.8, length=4.5, height=1.5),
    "unknown": ClassSpec(width=1.0, length=1.0, height=1.0),
}


def class_defaults(cls: str, classes: Mapping[str, ClassSpec] = DEFAULT_CLASSES):
    """Default ``(width, length, height)`` of a registered object class."""
    try:
        spec = classes[cls]
    except KeyError:
        raise ConfigError(f"object class {cls!r} is not registered") from None
    return spec.width, spec.length, spec.height


def _frozen_array(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen_array(self.mean, (STATE_DIM,)))
        object.__setattr__(self, "cov", _frozen_array(self.cov, (STATE_DIM, STATE_DIM)))
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov))):
            raise ValidationError("state mean and covariance must be finite")
        scale = max(1.0, float(np.abs(self.cov).max()))
        if np.abs(self.cov - self.cov.T).max() > 1e-9 * scale:
            raise ValidationError("state covariance must be symmetric")

    def __eq__(self, other):
        if not isinstance(other, StateGaussian):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def width(self) -> float:
        return float(self.mean[6])

    @property
    def length(self) -> float:
        return float(self.mean[7])


@dataclass(frozen=True, eq=False)
class Detection:
    sensor_id: str
    timestamp: float
    measured: tuple
    values: np.ndarray
    covariance: np.ndarray
    reference_point: ReferencePoint | None = None
    object_class: tuple | None = None  # (class name, confidence)
    label: str | None = None

    def __post_init__(self):
        measured = tuple(Feature(f) for f in self.measured)
        object.__setattr__(self, "measured", measured)
        d = len(measured)
        if len(set(measured)) != d:
            raise ValidationError("measured features must be distinct")
        if Feature.POS_X not in measured or Feature.POS_Y not in measured:
            raise ValidationError("a detection must measure x and y")
        object.__setattr__(self, "values", _frozen_array(self.values, (d,)))
        object.__setattr__(self, "covariance", _frozen_array(self.covariance, (d, d)))
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.covariance)):
            raise ValidationError("non-finite measurement")
        for f in (Feature.WIDTH, Feature.LENGTH, Feature.HEIGHT):
            if f in measured and self.values[measured.index(f)] <= 0:
                raise ValidationError(f"{f.wire_name} must be positive")
        if self.reference_point is not None:
            object.__setattr__(self, "reference_point", ReferencePoint(self.reference_point))
        if self.object_class is not None:
            name, conf = self.object_class
            if not 0.0 <= conf <= 1.0:
                raise ValidationError("class confidence must lie in [0, 1]")
            object.__setattr__(self, "object_class", (str(name), float(conf)))

    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and self.timestamp == other.timestamp
            and self.measured == other.measured
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.covariance, other.covariance)
            and self.reference_point == other.reference_point
            and self.object_class == other.object_class
            and self.label == other.label
        )

    def value(self, f: Feature) -> float:
        return float(self.values[self.measured.index(f)])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.value(Feature.POS_X), self.value(Feature.POS_Y)])


@dataclass(frozen=True, eq=False)
class BernoulliTrack:
    label: int
    r: float
    state: StateGaussian
    class_probs: Mapping[str, float] = field(default_factory=lambda: {"unknown": 1.0})
    birth_time: int = 0
    last_update: int = 0
    height: float = 1.0

    def __post_init__(self):
        if not -1e-12 <= self.r <= 1.0 + 1e-12:
            raise ValidationError(f"existence probability {self.r} outside [0, 1]")
        object.__setattr__(self, "r", min(max(float(self.r), 0.0), 1.0))

    def replace(self, **changes) -> "BernoulliTrack":
        return dataclasses.replace(self, **changes)

    @property
    def object_class(self) -> tuple:
        """Most probable class and its probability."""
        name = max(sorted(self.class_probs), key=lambda c: self.class_probs[c])
        return name, float(self.class_probs[name])


@dataclass(frozen=True)
class LMBDensity:
    tracks: tuple = ()
    k: int = 0
    next_label: int = 1

    def __post_init__(self):
        tracks = tuple(sorted(self.tracks, key=lambda t: t.label))
        labels = [t.label for t in tracks]
        if len(set(labels)) != len(labels):
            raise ValidationError("duplicate track labels")
        if labels and labels[-1] >= self.next_label:
            raise ValidationError("next_label must exceed every allocated label")
        object.__setattr__(self, "tracks", tracks)

    def __len__(self):
        return len(self.tracks)

    def replace(self, **changes) -> "LMBDensity":
        return dataclasses.replace(self, **changes)
