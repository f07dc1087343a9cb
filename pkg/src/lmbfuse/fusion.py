"""Fusion center: registry, cycle buffer and tracker behind one object."""
from __future__ import annotations

import logging
import threading

from .errors import LateMessage
from .interface import CycleBuffer, Deregistration, DownlinkMessage, SensorProfile, SensorRegistry, TrackRecord, UplinkMessage
from .lmb import FilterConfig, Tracker

log = logging.getLogger(__name__)


class FusionCenter:
    """Consumes uplink messages in arrival order and emits one downlink per cycle.

    A cycle is processed once a message for a later cycle arrives, or on
    :meth:`finish`. Calls may come from several threads; they are
    serialized in arrival order.
    """

    def __init__(self, cfg: FilterConfig = FilterConfig(), producer: str = "fusion-center"):
        self.cfg = cfg
        self.producer = producer
        self.registry = SensorRegistry()
        self.buffer = CycleBuffer(self.registry, cfg.t_cycle)
        self.tracker = Tracker(cfg, sensors=self.registry.as_dict())
        self._lock = threading.RLock()

    def register(self, profile: SensorProfile) -> bool:
        with self._lock:
            return self._register(profile)

    def _register(self, profile: SensorProfile) -> bool:
        new = self.registry.register(profile)
        self.tracker.sensors = self.registry.as_dict()
        return new

    def deregister(self, sensor_id: str) -> None:
        with self._lock:
            self.registry.deregister(sensor_id)
            self.tracker.sensors = self.registry.as_dict()

    def handle(self, record) -> list:
        """Dispatch a parsed record; returns the downlink messages it released."""
        with self._lock:
            return self._handle(record)

    def _handle(self, record) -> list:
        if isinstance(record, SensorProfile):
            self._register(record)
            return []
        if isinstance(record, Deregistration):
            self.deregister(record.sensor_id)
            return []
        if isinstance(record, UplinkMessage):
            return self._ingest(record)
        log.debug("ignoring record of type %s", type(record).__name__)
        return []

    def ingest(self, msg: UplinkMessage) -> list:
        with self._lock:
            return self._ingest(msg)

    def _ingest(self, msg: UplinkMessage) -> list:
        k = self.buffer.cycle_of(msg.header.timestamp)
        out = [self.process_cycle(c) for c in self.buffer.pending() if c < k]
        try:
            self.buffer.ingest(msg)
        except LateMessage:
            pass
        return out

    def process_cycle(self, k: int) -> DownlinkMessage:
        with self._lock:
            headers = [m.header.timestamp for m in self.buffer.buckets.get(k, [])]
            ts = min(headers) if headers else k * self.cfg.t_cycle
            batches = self.buffer.flush_cycle(k)
            tracks = self.tracker.step(batches, ts)
            k_index = self.tracker.density.k
            return DownlinkMessage(
                timestamp=self.tracker.time,
                producer=self.producer,
                tracks=tuple(TrackRecord.from_track(t, k_index) for t in tracks),
            )

    def finish(self) -> list:
        with self._lock:
            return [self.process_cycle(c) for c in self.buffer.pending()]
