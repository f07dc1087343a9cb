"""T-junction simulation: ground truth, sensor models and Monte Carlo driver.

Scene: a 100 m x 40 m box with the major road along x (eastbound lane at
y = 18.25, westbound at y = 21.75) and a minor road joining from the south.
Two vehicles pass each other on the major road while a third turns right
out of the minor road just in front of the eastbound vehicle. Sensors A, B
and C sit in the upper-left, lower-left and lower-right scene corners and
all cover the whole scene.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .fusion import FusionCenter
from .geometry import CoveredArea, candidate_reference_points, rectangle_corners
from .interface import DownlinkMessage, Header, SensorProfile, StreamHeader, UplinkMessage, serialize
from .lmb import FilterConfig
from .metrics import OspatConfig, correct_associations, length_mse, ospat_sequence
from .motion import ctra_transition
from .types import Detection, Feature

SCENE = ((0.0, 0.0), (100.0, 0.0), (100.0, 40.0), (0.0, 40.0))
SENSOR_POSITIONS = {"A": (0.0, 40.0), "B": (0.0, 0.0), "C": (100.0, 0.0)}
SIGMAS = (0.5, 1.0, 1.5)

# measured extent feature per sensor in scenario 2
EXTENT_FEATURES = {
    "caption": {"A": Feature.WIDTH, "B": Feature.WIDTH, "C": Feature.LENGTH},
    "prose": {"A": Feature.WIDTH, "B": Feature.LENGTH, "C": Feature.WIDTH},
}


@dataclass(frozen=True)
class Vehicle:
    label: int
    start: tuple  # (x, y, heading, speed)
    width: float
    length: float
    segments: tuple  # ((steps, yaw_rate, accel), ...)


def default_vehicles() -> tuple:
    turn_steps = 16
    return (
        Vehicle(1, (20.0, 18.25, 0.0, 10.0), 1.8, 4.8, ((49, 0.0, 0.0),)),
        Vehicle(2, (80.0, 21.75, math.pi, 14.0), 1.9, 5.2, ((49, 0.0, 0.0),)),
        Vehicle(
            3,
            (47.0, 4.5, math.pi / 2, 8.0),
            1.8,
            4.5,
            ((7, 0.0, 0.0), (turn_steps, -math.pi / 2 / (turn_steps * 0.1), 0.0), (26, 0.0, 1.5)),
        ),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: int = 1
    sigma: float = 0.5
    trials: int = 100
    steps: int = 50
    dt: float = 0.1
    seed: int = 0
    p_detect: float = 0.95
    clutter_rate: float = 0.1
    transmit_reference_point: bool = False
    class_name: str = "car"
    class_confidence: float = 0.95
    extent_variant: str = "caption"
    sensors: tuple = ("A", "B", "C")
    vehicles: tuple = field(default_factory=default_vehicles)

    def __post_init__(self):
        if self.scenario not in (1, 2):
            raise ValueError("scenario must be 1 or 2")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.trials < 1 or self.steps < 1:
            raise ValueError("trials and steps must be positive")
        if set(self.sensors) - set(SENSOR_POSITIONS):
            raise ValueError(f"sensors must be drawn from {sorted(SENSOR_POSITIONS)}")
        if self.extent_variant not in EXTENT_FEATURES:
            raise ValueError(f"unknown extent variant {self.extent_variant!r}")

    def measured_features(self, sensor_id: str) -> tuple:
        base = (Feature.POS_X, Feature.POS_Y)
        if self.scenario == 1:
            return base
        return base + (EXTENT_FEATURES[self.extent_variant][sensor_id],)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicles"] = [asdict(v) for v in self.vehicles]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        """Inverse of :meth:`to_dict`; missing keys take their defaults."""
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        kw = dict(d)
        if "sensors" in kw:
            kw["sensors"] = tuple(kw["sensors"])
        if "vehicles" in kw:
            kw["vehicles"] = tuple(
                Vehicle(int(v["label"]), tuple(v["start"]), float(v["width"]), float(v["length"]),
                        tuple(tuple(seg) for seg in v["segments"]))
                for v in kw["vehicles"]
            )
        return cls(**kw)


def sensor_profiles(cfg: ScenarioConfig) -> list:
    out = []
    for sid in cfg.sensors:
        pos = SENSOR_POSITIONS[sid]
        orientation = math.atan2(20.0 - pos[1], 50.0 - pos[0])
        out.append(SensorProfile(
            sensor_id=sid,
            position=pos,
            orientation=orientation,
            area=CoveredArea(SCENE),
            measured=cfg.measured_features(sid),
            sensor_type="simulated",
            clutter_rate=cfg.clutter_rate,
        ))
    return out


# --- ground truth ---------------------------------------------------------


@dataclass(frozen=True)
class TruthObject:
    label: int
    state: np.ndarray  # full 8-dim state, center referenced
    height: float = 1.5

    @property
    def position(self):
        return self.state[:2]

    @property
    def length(self) -> float:
        return float(self.state[7])


def generate_truth(cfg: ScenarioConfig) -> list:
    """Per step (index 0 = k 1), the list of true objects."""
    per_vehicle = []
    for v in cfg.vehicles:
        x, y, heading, speed = v.start
        state = np.array([x, y, heading, 0.0, speed, 0.0, v.width, v.length])
        schedule = [(om, a) for n, om, a in v.segments for _ in range(n)]
        states = []
        for k in range(cfg.steps):
            om, a = schedule[min(k, len(schedule) - 1)] if schedule else (0.0, 0.0)
            state = state.copy()
            state[3], state[5] = om, a
            states.append(state)
            state = ctra_transition(state, cfg.dt)
        per_vehicle.append(states)
    return [
        [TruthObject(v.label, per_vehicle[i][k]) for i, v in enumerate(cfg.vehicles)]
        for k in range(cfg.steps)
    ]


# --- sensor model ---------------------------------------------------------


def _rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def measurement_covariance(sensor: SensorProfile, sigma: float) -> np.ndarray:
    """Global-frame covariance: sigma along the boresight, sigma/2 across, sigma/2 on extents."""
    rot = _rotation(sensor.orientation)
    pos = rot @ np.diag([sigma**2, (sigma / 2) ** 2]) @ rot.T
    d = len(sensor.measured)
    cov = np.zeros((d, d))
    cov[:2, :2] = pos
    for i in range(2, d):
        cov[i, i] = (sigma / 2) ** 2
    return cov


def simulate_sensor(truth_step, sensor: SensorProfile, cfg: ScenarioConfig, rng: np.random.Generator, timestamp: float) -> UplinkMessage:
    """One uplink message: noisy corner detections plus Poisson clutter."""
    cov = measurement_covariance(sensor, cfg.sigma)
    # keep the noise model well defined when sigma == 0
    chol = np.linalg.cholesky(cov + 1e-300 * np.eye(len(cov))) if cfg.sigma > 0 else np.zeros_like(cov)
    report_cov = cov if cfg.sigma > 0 else np.eye(len(cov)) * 1e-6
    measured = sensor.measured
    cls = (cfg.class_name, cfg.class_confidence)
    dets = []
    for obj in truth_step:
        if not sensor.area.contains(obj.position):
            continue
        if rng.random() >= cfg.p_detect:
            continue
        zeta = candidate_reference_points(sensor.position, obj.state, count=1)[0]
        corner = rectangle_corners(obj.state)[zeta]
        truth_z = np.array([corner[0], corner[1]] + [obj.state[int(f)] for f in measured[2:]])
        z = truth_z + chol @ rng.standard_normal(len(measured))
        for i, f in enumerate(measured):
            if f in (Feature.WIDTH, Feature.LENGTH) and z[i] <= 0:
                z[i] = truth_z[i]
        dets.append(Detection(
            sensor.sensor_id, timestamp, measured, z, report_cov,
            zeta if cfg.transmit_reference_point else None, cls,
        ))
    n_clutter = rng.poisson(cfg.clutter_rate)
    bounds = sensor.observable.bounds
    for _ in range(n_clutter):
        z = np.array([rng.uniform(*bounds[f]) for f in measured])
        dets.append(Detection(sensor.sensor_id, timestamp, measured, z, report_cov, None, cls))
    order = rng.permutation(len(dets)) if len(dets) > 1 else range(len(dets))
    return UplinkMessage(Header(timestamp, sensor.sensor_id), tuple(dets[i] for i in order))


# --- trials ---------------------------------------------------------------


@dataclass
class TrialResult:
    seed: int
    tracks: list  # per step: list of TrackRecord
    downlink: list  # per step: DownlinkMessage
    errors: list
    cycle_seconds: list

    def positions(self) -> list:
        return [{t.label: t.mean[:2] for t in step} for step in self.tracks]


def default_filter_config(cfg: ScenarioConfig) -> FilterConfig:
    return FilterConfig(t_cycle=cfg.dt, lambda_c=cfg.clutter_rate)


def trial_seed(base_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([base_seed, trial]).generate_state(1)[0])


def run_trial(cfg: ScenarioConfig, seed: int, filter_cfg: FilterConfig | None = None, truth=None) -> TrialResult:
    filter_cfg = filter_cfg or default_filter_config(cfg)
    truth = truth if truth is not None else generate_truth(cfg)
    rng = np.random.default_rng(seed)
    center = FusionCenter(filter_cfg, producer="sim")
    sensors = sensor_profiles(cfg)
    for s in sensors:
        center.register(s)
    tracks, downlink, errors = [], [], []
    for k, step in enumerate(truth):
        t = k * cfg.dt
        for s in sensors:
            center.buffer.ingest(simulate_sensor(step, s, cfg, rng, t))
        cycle = center.buffer.cycle_of(t)
        try:
            msg = center.process_cycle(cycle)
        except NumericalError as exc:
            errors.append((k + 1, str(exc)))
            msg = DownlinkMessage(t, "sim")
        downlink.append(msg)
        tracks.append(list(msg.tracks))
    return TrialResult(seed, tracks, downlink, errors, list(center.tracker.cycle_seconds))


def _run_trial_job(args):
    cfg, seed = args
    return run_trial(cfg, seed)


@dataclass
class TrialMetrics:
    ospat: np.ndarray
    length_rows: list  # (k, object, truth length, est length, est length std, est label)
    mapping: dict


def evaluate_trial(cfg: ScenarioConfig, truth, result: TrialResult, ospat_cfg: OspatConfig) -> TrialMetrics:
    truth_pos = [{o.label: o.position for o in step} for step in truth]
    est_pos = result.positions()
    values, mapping = ospat_sequence(truth_pos, est_pos, ospat_cfg)
    pairs = correct_associations(truth_pos, est_pos, ospat_cfg, mapping)
    lengths = {o.label: o.length for o in truth[0]}
    rows = []
    for k, (step_pairs, step_tracks) in enumerate(zip(pairs, result.tracks), start=1):
        by_label = {t.label: t for t in step_tracks}
        for obj, lab in step_pairs:
            tr = by_label[lab]
            rows.append((k, obj, lengths[obj], float(tr.mean[7]), math.sqrt(max(tr.cov[7, 7], 0.0)), lab))
    return TrialMetrics(values, rows, mapping)


@dataclass
class MonteCarloResult:
    config: ScenarioConfig
    ospat: np.ndarray  # trials x steps
    length_rows: list  # (trial, k, object, truth, est, std, label)
    trials: list  # TrialResult
    elapsed: float

    @property
    def mean_curve(self) -> np.ndarray:
        return self.ospat.mean(axis=0)

    def length_mse(self) -> dict:
        true_lengths = {o.label: o.length for o in generate_truth(self.config)[0]}
        est = []
        pairs = []
        for row in self.length_rows:
            trial, k, obj, _, val, _, lab = row
            est.append({(trial, lab): val})
            pairs.append([(obj, (trial, lab))])
        return length_mse(true_lengths, est, pairs)


def run_monte_carlo(cfg: ScenarioConfig, jobs: int = 1, ospat_cfg: OspatConfig = OspatConfig(), progress=None) -> MonteCarloResult:
    started = time.perf_counter()
    truth = generate_truth(cfg)
    seeds = [trial_seed(cfg.seed, i) for i in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial_job, [(cfg, s) for s in seeds]))
    else:
        results = []
        for i, s in enumerate(seeds):
            results.append(run_trial(cfg, s, truth=truth))
            if progress:
                progress(i + 1, cfg.trials)
    curves = []
    rows = []
    for i, res in enumerate(results):
        m = evaluate_trial(cfg, truth, res, ospat_cfg)
        curves.append(m.ospat)
        rows.extend((i,) + r for r in m.length_rows)
    return MonteCarloResult(cfg, np.array(curves), rows, results, time.perf_counter() - started)


def write_results(result: MonteCarloResult, out_dir, downlink_logs: bool = True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    with open(out / "ospat_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "mean_ospat", "std_ospat"])
        std = result.ospat.std(axis=0)
        for k, (m, s) in enumerate(zip(result.mean_curve, std), start=1):
            w.writerow([k, repr(float(m)), repr(float(s))])
    with open(out / "ospat_trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "k", "ospat"])
        for i, curve in enumerate(result.ospat):
            for k, v in enumerate(curve, start=1):
                w.writerow([i, k, repr(float(v))])
    with open(out / "lengths.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "k", "object", "truth_length", "est_length", "est_length_std", "label"])
        for trial, k, obj, tl, el, sd, lab in result.length_rows:
            w.writerow([trial, k, obj, repr(tl), repr(el), repr(sd), lab])
    truth = generate_truth(cfg)
    with open(out / "truth.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "label", "x", "y", "length"])
        for k, step in enumerate(truth, start=1):
            for o in step:
                w.writerow([k, o.label, repr(float(o.state[0])), repr(float(o.state[1])), repr(o.length)])
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    if downlink_logs:
        (out / "downlink").mkdir(exist_ok=True)
        (out / "tracks").mkdir(exist_ok=True)
        for i, trial in enumerate(result.trials):
            with open(out / "downlink" / f"trial_{i:03d}.jsonl", "w") as fh:
                fh.write(serialize(StreamHeader("sim", cfg.dt)) + "\n")
                for msg in trial.downlink:
                    fh.write(serialize(msg) + "\n")
            with open(out / "tracks" / f"trial_{i:03d}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "label", "x", "y", "length"])
                for k, step in enumerate(trial.tracks, start=1):
                    for t in step:
                        w.writerow([k, t.label, repr(float(t.mean[0])), repr(float(t.mean[1])), repr(float(t.mean[7]))])
