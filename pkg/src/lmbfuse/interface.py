"""Feature-level message layer between sensors, the fusion center and receivers.

Wire format: one JSON object per line. Every record carries a ``type``
(``register``, ``deregister``, ``uplink``, ``downlink`` or ``stream``) and
the protocol ``version``. Covariances are sent as the row-major lower
triangle. Unknown fields are ignored on parse; absent optional fields mean
the feature was not measured.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, LateMessage, SchemaError, UnknownSensor, ValidationError
from .geometry import CoveredArea
from .measurement import ObservableSubset
from .types import (
    BernoulliTrack,
    Detection,
    Feature,
    ReferencePoint,
    STATE_DIM,
)

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

STATE_FIELDS = ("x", "y", "heading", "yaw_rate", "speed", "accel", "width", "length")


# --- messages -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SensorProfile:
    sensor_id: str
    position: tuple
    orientation: float
    area: CoveredArea
    measured: tuple = (Feature.POS_X, Feature.POS_Y)
    sensor_type: str = "generic"
    clutter_rate: float | None = None
    extent_bounds: tuple = (0.3, 30.0)

    def __post_init__(self):
        if not isinstance(self.area, CoveredArea):
            try:
                object.__setattr__(self, "area", CoveredArea(self.area))
            except GeometryError as exc:
                raise ValidationError(f"sensor {self.sensor_id}: {exc}") from exc
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "measured", tuple(Feature(f) for f in self.measured))
        if len(self.position) != 2:
            raise ValidationError("sensor position must be 2D")

    def __eq__(self, other):
        if not isinstance(other, SensorProfile):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and self.position == other.position
            and self.orientation == other.orientation
            and self.area == other.area
            and self.measured == other.measured
            and self.sensor_type == other.sensor_type
            and self.clutter_rate == other.clutter_rate
            and tuple(self.extent_bounds) == tuple(other.extent_bounds)
        )

    __hash__ = None

    @cached_property
    def observable(self) -> ObservableSubset:
        return ObservableSubset.for_area(self.area, extent=tuple(self.extent_bounds))


@dataclass(frozen=True)
class Header:
    timestamp: float
    sensor_id: str
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class UplinkMessage:
    header: Header
    objects: tuple = ()

    def __post_init__(self):
        objs = tuple(self.objects)
        for o in objs:
            if o.timestamp != self.header.timestamp or o.sensor_id != self.header.sensor_id:
                raise ValidationError("detections must inherit the header timestamp and sensor id")
        object.__setattr__(self, "objects", objs)


@dataclass(frozen=True, eq=False)
class TrackRecord:
    """A complete track as sent in the downlink; position refers to the center."""

    label: int
    mean: np.ndarray
    cov: np.ndarray
    height: float
    object_class: str
    confidence: float
    existence: float
    k: int
    reference_point: ReferencePoint = ReferencePoint.CENTER

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (STATE_DIM,) or cov.shape != (STATE_DIM, STATE_DIM):
            raise ValidationError("track records carry the full 8-dimensional state")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def __eq__(self, other):
        if not isinstance(other, TrackRecord):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.mean, other.mean)
            and np.array_equal(self.cov, other.cov)
            and self.height == other.height
            and self.object_class == other.object_class
            and self.confidence == other.confidence
            and self.existence == other.existence
            and self.k == other.k
            and self.reference_point == other.reference_point
        )

    @classmethod
    def from_track(cls, t: BernoulliTrack, k: int) -> "TrackRecord":
        name, conf = t.object_class
        return cls(t.label, np.array(t.state.mean), np.array(t.state.cov), t.height, name, conf, t.r, k)


@dataclass(frozen=True)
class DownlinkMessage:
    timestamp: float
    producer: str
    tracks: tuple = ()
    version: int = PROTOCOL_VERSION

    def __post_init__(self):
        tracks = tuple(self.tracks)
        labels = [t.label for t in tracks]
        if len(set(labels)) != len(labels):
            raise ValidationError("track labels must be unique within a downlink message")
        object.__setattr__(self, "tracks", tracks)


# --- registry and cycle buffer --------------------------------------------


class SensorRegistry:
    def __init__(self):
        self._sensors: dict = {}

    def register(self, profile: SensorProfile) -> bool:
        """Store ``profile``; re-registering identical content is a no-op."""
        existing = self._sensors.get(profile.sensor_id)
        if existing is not None:
            if existing == profile:
                return False
            raise ValidationError(f"sensor {profile.sensor_id!r} already registered with different content")
        self._sensors[profile.sensor_id] = profile
        return True

    def deregister(self, sensor_id: str) -> None:
        if self._sensors.pop(sensor_id, None) is None:
            raise UnknownSensor(sensor_id)

    def __getitem__(self, sensor_id: str) -> SensorProfile:
        try:
            return self._sensors[sensor_id]
        except KeyError:
            raise UnknownSensor(sensor_id) from None

    def __contains__(self, sensor_id) -> bool:
        return sensor_id in self._sensors

    def __len__(self):
        return len(self._sensors)

    def as_dict(self) -> dict:
        return dict(self._sensors)


class CycleBuffer:
    """Collects uplink messages into cycles of fixed duration.

    Cycle ``k`` holds messages with ``floor(timestamp / t_cycle) == k``.
    Once flushed, a cycle (and every earlier one) is sealed.
    """

    def __init__(self, registry: SensorRegistry, t_cycle: float = 0.1):
        if t_cycle <= 0:
            raise ValueError("t_cycle must be positive")
        self.registry = registry
        self.t_cycle = t_cycle
        self.buckets: dict = {}
        self.sealed_through: int | None = None
        self.late_count = 0

    def cycle_of(self, timestamp: float) -> int:
        # tolerate representation error, e.g. 0.3 / 0.1 = 2.9999999999999996
        return int(math.floor(timestamp / self.t_cycle + 1e-9))

    def ingest(self, msg: UplinkMessage) -> int:
        if msg.header.sensor_id not in self.registry:
            raise UnknownSensor(msg.header.sensor_id)
        k = self.cycle_of(msg.header.timestamp)
        if self.sealed_through is not None and k <= self.sealed_through:
            self.late_count += 1
            log.warning("late message from %s for sealed cycle %d dropped", msg.header.sensor_id, k)
            raise LateMessage(f"cycle {k} already flushed")
        self.buckets.setdefault(k, []).append(msg)
        return k

    def pending(self) -> list:
        return sorted(self.buckets)

    def flush_cycle(self, k: int) -> list:
        """Batches ``[(profile, detections)]`` sorted by timestamp, then sensor id."""
        msgs = self.buckets.pop(k, [])
        self.sealed_through = k if self.sealed_through is None else max(self.sealed_through, k)
        per_sensor: dict = {}
        first_time: dict = {}
        for msg in msgs:
            sid = msg.header.sensor_id
            if sid not in self.registry:
                log.warning("dropping buffered message from deregistered sensor %s", sid)
                continue
            per_sensor.setdefault(sid, []).extend(msg.objects)
            first_time[sid] = min(first_time.get(sid, math.inf), msg.header.timestamp)
        order = sorted(per_sensor, key=lambda s: (first_time[s], s))
        return [(self.registry[s], per_sensor[s]) for s in order]


# --- codec ----------------------------------------------------------------


def _lower(mat: np.ndarray) -> list:
    n = mat.shape[0]
    return [float(mat[i, j]) for i in range(n) for j in range(i + 1)]


def _from_lower(values, n: int, path: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != n * (n + 1) // 2:
        raise SchemaError(path, f"expected {n * (n + 1) // 2} lower-triangle entries")
    out = np.zeros((n, n))
    it = iter(values)
    for i in range(n):
        for j in range(i + 1):
            v = _num(next(it), path)
            out[i, j] = out[j, i] = v
    return out


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, "expected a number")
    return float(v)


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise SchemaError(path, "expected an object")
    if key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing mandatory field")
    return obj[key]


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def detection_to_dict(d: Detection) -> dict:
    out = {
        "measured": [f.wire_name for f in d.measured],
        "values": [float(v) for v in d.values],
        "covariance": _lower(d.covariance),
    }
    if d.reference_point is not None:
        out["reference_point"] = d.reference_point.name
    if d.object_class is not None:
        out["class"] = {"name": d.object_class[0], "confidence": d.object_class[1]}
    if d.label is not None:
        out["label"] = d.label
    return out


def detection_from_dict(obj: dict, sensor_id: str, timestamp: float, path: str) -> Detection:
    measured_raw = _req(obj, "measured", path)
    if not isinstance(measured_raw, list):
        raise SchemaError(f"{path}.measured", "expected a list")
    try:
        measured = tuple(Feature.from_wire(n) for n in measured_raw)
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{path}.measured", str(exc)) from None
    for f in (Feature.POS_X, Feature.POS_Y):
        if f not in measured:
            raise SchemaError(f"{path}.measured.{f.wire_name}", "position feature is mandatory")
    values = _req(obj, "values", path)
    if not isinstance(values, list) or len(values) != len(measured):
        raise SchemaError(f"{path}.values", "length must match measured")
    vals = [_num(v, f"{path}.values[{i}]") for i, v in enumerate(values)]
    cov = _from_lower(_req(obj, "covariance", path), len(measured), f"{path}.covariance")
    ref = obj.get("reference_point")
    if ref is not None:
        try:
            ref = ReferencePoint[ref]
        except (KeyError, TypeError):
            raise SchemaError(f"{path}.reference_point", f"unknown reference point {ref!r}") from None
    cls = obj.get("class")
    if cls is not None:
        cls = (str(_req(cls, "name", f"{path}.class")), _num(_req(cls, "confidence", f"{path}.class"), f"{path}.class.confidence"))
    label = obj.get("label")
    try:
        return Detection(sensor_id, timestamp, measured, vals, cov, ref, cls, None if label is None else str(label))
    except ValidationError as exc:
        raise SchemaError(path, str(exc)) from None


def serialize_uplink(msg: UplinkMessage) -> str:
    return _dumps({
        "type": "uplink",
        "version": msg.header.version,
        "header": {"timestamp": msg.header.timestamp, "sensor_id": msg.header.sensor_id},
        "objects": [detection_to_dict(o) for o in msg.objects],
    })


def _uplink_from_obj(obj: dict) -> UplinkMessage:
    header = _req(obj, "header", "")
    ts = _num(_req(header, "timestamp", "header"), "header.timestamp")
    sid = str(_req(header, "sensor_id", "header"))
    objs = _req(obj, "objects", "")
    if not isinstance(objs, list):
        raise SchemaError("objects", "expected a list")
    dets = tuple(detection_from_dict(o, sid, ts, f"objects[{i}]") for i, o in enumerate(objs))
    return UplinkMessage(Header(ts, sid, int(obj.get("version", PROTOCOL_VERSION))), dets)


def serialize_registration(p: SensorProfile) -> str:
    out = {
        "type": "register",
        "version": PROTOCOL_VERSION,
        "sensor_id": p.sensor_id,
        "sensor_type": p.sensor_type,
        "position": list(p.position),
        "orientation": p.orientation,
        "covered_area": p.area.vertices.tolist(),
        "measured": [f.wire_name for f in p.measured],
        "extent_bounds": list(p.extent_bounds),
    }
    if p.clutter_rate is not None:
        out["clutter_rate"] = p.clutter_rate
    return _dumps(out)


def _registration_from_obj(obj: dict) -> SensorProfile:
    pos = _req(obj, "position", "")
    if not isinstance(pos, list) or len(pos) != 2:
        raise SchemaError("position", "expected [x, y]")
    area = _req(obj, "covered_area", "")
    if not isinstance(area, list):
        raise SchemaError("covered_area", "expected a list of points")
    try:
        measured = tuple(Feature.from_wire(n) for n in obj.get("measured", ["x", "y"]))
    except (ValueError, TypeError) as exc:
        raise SchemaError("measured", str(exc)) from None
    clutter = obj.get("clutter_rate")
    try:
        return SensorProfile(
            sensor_id=str(_req(obj, "sensor_id", "")),
            position=tuple(_num(v, "position") for v in pos),
            orientation=_num(obj.get("orientation", 0.0), "orientation"),
            area=area,
            measured=measured,
            sensor_type=str(obj.get("sensor_type", "generic")),
            clutter_rate=None if clutter is None else _num(clutter, "clutter_rate"),
            extent_bounds=tuple(_num(v, "extent_bounds") for v in obj.get("extent_bounds", [0.3, 30.0])),
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError("covered_area", str(exc)) from None


def serialize_downlink(msg: DownlinkMessage) -> str:
    tracks = []
    for t in msg.tracks:
        tracks.append({
            "label": t.label,
            "state": dict(zip(STATE_FIELDS, (float(v) for v in t.mean))),
            "covariance": _lower(t.cov),
            "height": t.height,
            "reference_point": t.reference_point.name,
            "class": {"name": t.object_class, "confidence": t.confidence},
            "existence": t.existence,
            "k": t.k,
        })
    return _dumps({
        "type": "downlink",
        "version": msg.version,
        "header": {"timestamp": msg.timestamp, "producer": msg.producer},
        "tracks": tracks,
    })


def _downlink_from_obj(obj: dict) -> DownlinkMessage:
    header = _req(obj, "header", "")
    tracks = []
    for i, t in enumerate(_req(obj, "tracks", "")):
        path = f"tracks[{i}]"
        state = _req(t, "state", path)
        mean = [_num(_req(state, f, f"{path}.state"), f"{path}.state.{f}") for f in STATE_FIELDS]
        cls = _req(t, "class", path)
        tracks.append(TrackRecord(
            label=int(_req(t, "label", path)),
            mean=mean,
            cov=_from_lower(_req(t, "covariance", path), STATE_DIM, f"{path}.covariance"),
            height=_num(_req(t, "height", path), f"{path}.height"),
            object_class=str(_req(cls, "name", f"{path}.class")),
            confidence=_num(_req(cls, "confidence", f"{path}.class"), f"{path}.class.confidence"),
            existence=_num(_req(t, "existence", path), f"{path}.existence"),
            k=int(_req(t, "k", path)),
            reference_point=ReferencePoint[t.get("reference_point", "CENTER")],
        ))
    return DownlinkMessage(
        timestamp=_num(_req(header, "timestamp", "header"), "header.timestamp"),
        producer=str(_req(header, "producer", "header")),
        tracks=tuple(tracks),
        version=int(obj.get("version", PROTOCOL_VERSION)),
    )


@dataclass(frozen=True)
class Deregistration:
    sensor_id: str


@dataclass(frozen=True)
class StreamHeader:
    producer: str
    t_cycle: float
    version: int = PROTOCOL_VERSION
    extra: dict = field(default_factory=dict, compare=False)


def serialize_stream_header(h: StreamHeader) -> str:
    return _dumps({"type": "stream", "version": h.version, "producer": h.producer, "t_cycle": h.t_cycle})


def serialize(msg) -> str:
    if isinstance(msg, UplinkMessage):
        return serialize_uplink(msg)
    if isinstance(msg, DownlinkMessage):
        return serialize_downlink(msg)
    if isinstance(msg, SensorProfile):
        return serialize_registration(msg)
    if isinstance(msg, Deregistration):
        return _dumps({"type": "deregister", "version": PROTOCOL_VERSION, "sensor_id": msg.sensor_id})
    if isinstance(msg, StreamHeader):
        return serialize_stream_header(msg)
    raise TypeError(f"cannot serialize {type(msg).__name__}")


def parse(line: str):
    """Parse one encoded record into its message object."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError("<record>", f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise SchemaError("<record>", "expected a JSON object")
    kind = _req(obj, "type", "")
    if kind == "uplink":
        return _uplink_from_obj(obj)
    if kind == "downlink":
        return _downlink_from_obj(obj)
    if kind == "register":
        return _registration_from_obj(obj)
    if kind == "deregister":
        return Deregistration(str(_req(obj, "sensor_id", "")))
    if kind == "stream":
        return StreamHeader(str(_req(obj, "producer", "")), _num(_req(obj, "t_cycle", ""), "t_cycle"),
                            int(obj.get("version", PROTOCOL_VERSION)))
    raise SchemaError("type", f"unknown record type {kind!r}")


def read_records(lines):
    """Yield ``(line_number, record)`` for non-blank lines; errors name the line."""
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield no, parse(line)
        except SchemaError as exc:
            raise SchemaError(f"line {no}: {exc.path}", str(exc).split(": ", 1)[-1]) from None
