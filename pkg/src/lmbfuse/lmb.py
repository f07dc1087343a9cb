"""Multi-sensor labeled multi-Bernoulli filter.

One fusion cycle runs :func:`predict`, then :func:`update_one_sensor` for
every sensor batch in turn (iterated corrector), then births tracks from
the detections no existing track explained, and finally
:func:`prune_and_extract`.

Sensors are duck-typed: the filter reads ``sensor_id``, ``position``,
``area``, ``clutter_rate`` and ``observable`` (see
:class:`lmbfuse.interface.SensorProfile`).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2

from . import assignment
from .errors import NumericalError
from .geometry import candidate_reference_points, corner_offset
from .measurement import (
    DetectionModel,
    FilterMeasurement,
    best_innovation,
    clutter_intensity,
    correct,
    detection_probability,
    filter_view,
)
from .motion import ProcessNoise, UnscentedParams, circular_mean, ensure_psd, sigma_points, unscented_predict
from .types import (
    CORNERS,
    DEFAULT_CLASSES,
    FILTER_FEATURES,
    BernoulliTrack,
    ClassSpec,
    Detection,
    Feature,
    LMBDensity,
    ReferencePoint,
    StateGaussian,
    canonical_index,
    class_defaults,
    wrap_angle,
)

log = logging.getLogger(__name__)

LOG_FLOOR = -700.0  # keeps log weights finite when a clutter intensity or miss weight is zero


@dataclass(frozen=True)
class BirthPrior:
    """Prior for the state components a birth detection does not measure."""

    heading: float = 0.0
    heading_std: float = math.pi / 2
    yaw_rate_std: float = 0.3
    speed_std: float = 10.0
    accel_std: float = 1.5
    extent_std: float = 1.0


@dataclass(frozen=True)
class FilterConfig:
    p_survival: float = 0.99
    r_prune: float = 1e-3
    r_extract: float = 0.5
    r_birth: float = 0.3
    max_hypotheses: int = 100
    exhaustive_limit: int = 5
    gate_probability: float = 0.999
    lambda_c: float = 0.1
    detection: DetectionModel = DetectionModel()
    # tuned on the junction scenarios; see the README for the trade-offs
    ukf: UnscentedParams = UnscentedParams(alpha=1.0)
    process_noise: ProcessNoise = ProcessNoise(yaw_accel_std=0.5, pos_std=0.6, heading_std=0.5)
    classes: Mapping[str, ClassSpec] = field(default_factory=lambda: dict(DEFAULT_CLASSES))
    birth_confidence: float = 0.9
    birth_assoc_threshold: float = 0.2
    birth: BirthPrior = BirthPrior()
    t_cycle: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.p_survival <= 1.0:
            raise ValueError("p_survival must lie in (0, 1]")
        if not 0.0 < self.r_prune < self.r_extract <= 1.0:
            raise ValueError("need 0 < r_prune < r_extract <= 1")
        if not 0.0 < self.r_birth <= 1.0:
            raise ValueError("r_birth must lie in (0, 1]")
        if self.max_hypotheses < 1:
            raise ValueError("max_hypotheses must be positive")

    def extent_bounds(self, track: BernoulliTrack | None = None):
        if track is not None:
            spec = self.classes.get(track.object_class[0])
            if spec is not None:
                return spec.min_extent, spec.max_extent
        return (
            min(s.min_extent for s in self.classes.values()),
            max(s.max_extent for s in self.classes.values()),
        )


@lru_cache(maxsize=32)
def gate_threshold(prob: float, dof: int) -> float:
    return float(chi2.ppf(prob, dof))


# --- prediction -----------------------------------------------------------


def predict(density: LMBDensity, dt: float, cfg: FilterConfig, survival: float | None = None) -> LMBDensity:
    """Scale existence by the survival probability and propagate each state."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    p_s = cfg.p_survival if survival is None else survival
    tracks = []
    for t in density.tracks:
        try:
            state = unscented_predict(t.state, dt, cfg.process_noise, cfg.ukf)
        except NumericalError as exc:
            log.warning("dropping track %s in prediction: %s", t.label, exc)
            continue
        tracks.append(t.replace(r=t.r * p_s, state=state))
    return density.replace(tracks=tuple(tracks))


# --- association ----------------------------------------------------------


@dataclass
class Association:
    """Everything one single-sensor update computes, kept for inspection."""

    tracks: tuple
    detections: tuple
    p_detect: np.ndarray
    log_kappa: np.ndarray
    log_lik: np.ndarray  # -inf where gated out
    log_assigned: np.ndarray
    log_missed: np.ndarray
    posteriors: dict  # (i, j) -> StateGaussian
    clusters: list  # [(track indices, detection indices)]
    hypotheses: list  # per cluster: (thetas, weights)
    marginals: np.ndarray  # n x (m + 1), last column = missed
    r_post: np.ndarray
    fell_back: bool = False

    @property
    def detection_usage(self) -> np.ndarray:
        return self.marginals[:, :-1].sum(axis=0) if self.marginals.size else np.zeros(len(self.detections))


def _pregate_radius(state: StateGaussian, fm: FilterMeasurement, gate: float) -> float:
    # corner positions lie within the half diagonal of the center, whatever the heading
    half_diag = 0.5 * math.hypot(state.mean[6], state.mean[7])
    ext = 2.0 * math.sqrt(max(state.cov[6, 6] + state.cov[7, 7], 0.0))
    # trace bounds the largest eigenvalue, so the pregate stays conservative
    spread = state.cov[0, 0] + state.cov[1, 1] + fm.cov[0, 0] + fm.cov[1, 1]
    return half_diag + ext + math.sqrt(gate * max(spread, 0.0))


def _components(n: int, m: int, pairs) -> list:
    parent = list(range(n + m))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in pairs:
        ra, rb = find(i), find(n + j)
        if ra != rb:
            parent[rb] = ra
    groups: dict = {}
    for node in range(n + m):
        groups.setdefault(find(node), []).append(node)
    out = []
    for nodes in groups.values():
        ti = sorted(x for x in nodes if x < n)
        dj = sorted(x - n for x in nodes if x >= n)
        out.append((ti, dj))
    out.sort(key=lambda c: (c[0][0] if c[0] else n + c[1][0]))
    return out


def associate(tracks: Sequence[BernoulliTrack], dets: Sequence[Detection], sensor, cfg: FilterConfig) -> Association:
    """Gate, cluster and enumerate association hypotheses for one sensor."""
    tracks = tuple(tracks)
    dets = tuple(dets)
    n, m = len(tracks), len(dets)
    views = [filter_view(d) for d in dets]
    p_d = np.array([detection_probability(t.state.mean, sensor.area, cfg.detection) for t in tracks])
    lam = sensor.clutter_rate if sensor.clutter_rate is not None else cfg.lambda_c
    kappa = np.array([clutter_intensity(v.values, v.measured, sensor.observable, lam) for v in views])
    with np.errstate(divide="ignore"):
        log_kappa = np.maximum(np.log(kappa), LOG_FLOOR)

    log_lik = np.full((n, m), -np.inf)
    posteriors = {}
    pairs = []
    for i, t in enumerate(tracks):
        sigma = None
        for j, (det, fm) in enumerate(zip(dets, views)):
            gate = gate_threshold(cfg.gate_probability, len(fm.measured))
            if np.hypot(*(fm.values[:2] - t.state.mean[:2])) > _pregate_radius(t.state, fm, gate):
                continue
            if sigma is None:
                sigma = sigma_points(t.state, cfg.ukf)
            if det.reference_point is not None:
                candidates = [det.reference_point]
            else:
                candidates = candidate_reference_points(sensor.position, t.state.mean)
            try:
                inn = best_innovation(sigma, fm, candidates)
            except NumericalError as exc:
                log.warning("skipping pair (%s, %d): %s", t.label, j, exc)
                continue
            if inn.mahalanobis2 > gate:
                continue
            log_lik[i, j] = inn.log_likelihood
            posteriors[i, j] = correct(t.state, inn, cfg.extent_bounds(t))
            pairs.append((i, j))

    r = np.array([t.r for t in tracks])
    with np.errstate(divide="ignore"):
        log_missed = np.maximum(np.log(np.clip(1.0 - r * p_d, 0.0, None)), LOG_FLOOR)
        base = np.log(r * p_d)
    log_assigned = np.where(np.isfinite(log_lik), base[:, None] + log_lik - log_kappa[None, :], -np.inf)
    log_assigned = np.where(np.isnan(log_assigned), -np.inf, log_assigned)

    clusters = _components(n, m, pairs)
    marginals = np.zeros((n, m + 1))
    hyps = []
    fell_back = False
    for ti, dj in clusters:
        if not ti:
            hyps.append(([], np.zeros(0)))
            continue
        la = log_assigned[np.ix_(ti, dj)]
        lm = log_missed[ti]
        if len(ti) <= cfg.exhaustive_limit and len(dj) <= cfg.exhaustive_limit:
            raw = assignment.enumerate_hypotheses(la, lm)
        else:
            try:
                raw = assignment.ranked_hypotheses(la, lm, cfg.max_hypotheses)
            except Exception as exc:  # noqa: BLE001 - any solver failure degrades to best hypothesis
                log.warning("ranked assignment failed (%s); using best single hypothesis", exc)
                raw = assignment.ranked_hypotheses(la, lm, 1)
                fell_back = True
        thetas, w = assignment.normalize(raw)
        hyps.append((thetas, w))
        for theta, wt in zip(thetas, w):
            for local_i, local_j in enumerate(theta):
                col = m if local_j == assignment.MISSED else dj[local_j]
                marginals[ti[local_i], col] += wt

    with np.errstate(invalid="ignore", divide="ignore"):
        q_missed = np.where(1.0 - r * p_d > 0, r * (1.0 - p_d) / (1.0 - r * p_d), 0.0)
    r_post = np.clip(marginals[:, :m].sum(axis=1) + marginals[:, m] * q_missed, 0.0, 1.0)
    return Association(
        tracks, dets, p_d, log_kappa, log_lik, log_assigned, log_missed,
        posteriors, clusters, hyps, marginals, r_post, fell_back,
    )


def _moment_match(components) -> StateGaussian:
    """Collapse ``[(weight, StateGaussian)]`` into one Gaussian."""
    w = np.array([c[0] for c in components])
    w = w / w.sum()
    means = np.array([c[1].mean for c in components])
    mean = w @ means
    mean[2] = circular_mean(means[:, 2], w)
    cov = np.zeros((8, 8))
    for wi, (_, g) in zip(w, components):
        d = g.mean - mean
        d[2] = wrap_angle(d[2])
        cov += wi * (g.cov + np.outer(d, d))
    return StateGaussian(mean, ensure_psd(cov))


def _class_update(probs: Mapping[str, float], det_class, classes) -> dict:
    name, conf = det_class
    names = sorted(set(probs) | set(classes) | {name})
    k = len(names)
    post = {}
    for c in names:
        lik = conf if c == name else (1.0 - conf) / max(k - 1, 1)
        post[c] = probs.get(c, 0.0) * lik
    total = sum(post.values())
    if total <= 0:
        return dict(probs)
    return {c: v / total for c, v in post.items() if v > 0}


def apply_association(assoc: Association, cfg: FilterConfig, k: int) -> list:
    """Posterior tracks from an association (existence and moment-matched state)."""
    m = len(assoc.detections)
    out = []
    for i, t in enumerate(assoc.tracks):
        r_new = float(assoc.r_post[i])
        comps = []
        miss_w = assoc.marginals[i, m] * (
            t.r * (1 - assoc.p_detect[i]) / (1 - t.r * assoc.p_detect[i]) if t.r * assoc.p_detect[i] < 1 else 0.0
        )
        if miss_w > 0:
            comps.append((miss_w, t.state))
        p_assoc = 0.0
        class_probs = dict(t.class_probs)
        heights = [(1.0, t.height)]
        for j in range(m):
            pij = assoc.marginals[i, j]
            if pij <= 0 or (i, j) not in assoc.posteriors:
                continue
            comps.append((pij, assoc.posteriors[i, j]))
            p_assoc += pij
            det = assoc.detections[j]
            if det.object_class is not None and pij > 1e-6:
                upd = _class_update(class_probs, det.object_class, cfg.classes)
                class_probs = {c: (1 - pij) * class_probs.get(c, 0.0) + pij * upd.get(c, 0.0)
                               for c in set(class_probs) | set(upd)}
            if Feature.HEIGHT in det.measured:
                heights.append((pij, det.value(Feature.HEIGHT)))
        state = _moment_match(comps) if comps and sum(c[0] for c in comps) > 0 else t.state
        hw = sum(h[0] for h in heights)
        height = sum(h[0] * h[1] for h in heights) / hw
        out.append(t.replace(
            r=r_new,
            state=state,
            class_probs=class_probs,
            height=height,
            last_update=k if p_assoc > 0.5 else t.last_update,
        ))
    return out


def update_one_sensor(density: LMBDensity, dets: Sequence[Detection], sensor, cfg: FilterConfig):
    """LMB update with the detections of one sensor.

    Returns the posterior density and the detections left unexplained
    (total association probability below ``cfg.birth_assoc_threshold``).
    """
    assoc = associate(density.tracks, dets, sensor, cfg)
    tracks = apply_association(assoc, cfg, density.k)
    usage = assoc.detection_usage
    unused = [d for d, u in zip(assoc.detections, usage) if u < cfg.birth_assoc_threshold]
    return density.replace(tracks=tuple(tracks)), unused


# --- birth ----------------------------------------------------------------


def _facing_corner(sensor_pos, z, heading, width, length) -> ReferencePoint:
    # the corner whose offset points most towards the sensor
    toward = np.asarray(sensor_pos, dtype=float) - z
    scores = [(-float(corner_offset(c, heading, width, length) @ toward), int(c)) for c in CORNERS]
    return CORNERS[min(range(4), key=lambda i: scores[i])]


def _birth_state(det: Detection, sensor, cfg: FilterConfig) -> tuple:
    fm = filter_view(det)
    measured = dict(zip(fm.measured, range(len(fm.measured))))
    full = all(f in measured for f in FILTER_FEATURES)
    cls = det.object_class[0] if det.object_class is not None else "unknown"
    if cls not in cfg.classes:
        cls = "unknown"
    dw, dl, dh = class_defaults(cls, cfg.classes)
    bp = cfg.birth
    mean = np.array([0.0, 0.0, bp.heading, 0.0, 0.0, 0.0, dw, dl])
    var = np.array([0.0, 0.0, bp.heading_std**2, bp.yaw_rate_std**2, bp.speed_std**2,
                    bp.accel_std**2, bp.extent_std**2, bp.extent_std**2])
    if cls == "car":
        var[6] = (0.3 * bp.extent_std) ** 2  # widths of cars vary far less than lengths
    cov = np.diag(var)
    idx = [canonical_index(f) for f in fm.measured]
    mean[idx] = fm.values
    cov[np.ix_(idx, idx)] = fm.cov
    if Feature.HEADING in measured:
        mean[2] = wrap_angle(mean[2])

    zeta = det.reference_point
    if zeta is None:
        zeta = _facing_corner(sensor.position, fm.values[:2], mean[2], mean[6], mean[7])
    if zeta is not ReferencePoint.CENTER:
        off = corner_offset(zeta, mean[2], mean[6], mean[7])
        mean[:2] = fm.values[:2] - off
        if Feature.HEADING in measured:
            # linearized conversion; heading is known well enough
            jac = np.eye(8)
            dphi = corner_offset(zeta, mean[2] + 0.5 * math.pi, mean[6], mean[7])
            jac[0:2, 2] = -dphi
            jac[0:2, 6] = -corner_offset(zeta, mean[2], 1.0, 0.0)
            jac[0:2, 7] = -corner_offset(zeta, mean[2], 0.0, 1.0)
            cov = jac @ cov @ jac.T
        else:
            # unknown heading: the center lies on a circle around the corner
            spread = 0.25 * (mean[6] ** 2 + mean[7] ** 2) / 2.0
            cov[0, 0] += spread
            cov[1, 1] += spread
    class_probs = {cls: 1.0}
    if det.object_class is not None:
        conf = det.object_class[1]
        others = [c for c in cfg.classes if c != cls]
        class_probs = {cls: conf}
        for c in others:
            class_probs[c] = (1.0 - conf) / len(others)
    return StateGaussian(mean, ensure_psd(cov)), class_probs, full, dh


def _eligible(det: Detection, cfg: FilterConfig) -> bool:
    measured = set(det.measured)
    if all(f in measured for f in FILTER_FEATURES):
        return True
    return det.object_class is not None and det.object_class[1] >= cfg.birth_confidence


def birth_from_detections(
    unused: Sequence[Detection],
    cfg: FilterConfig,
    sensors: Mapping,
    first_label: int = 1,
    k: int = 0,
) -> list:
    """New tracks from detections no existing track explained.

    A detection may give birth only if it measures the full filter state
    or carries a class with confidence of at least ``cfg.birth_confidence``.
    Unused detections of different sensors that gate with the same birth
    candidate are fused into it instead of spawning duplicates. Candidates
    whose center lies outside every covered area are discarded.
    """
    ordered = sorted(enumerate(unused), key=lambda e: (e[1].timestamp, e[1].sensor_id, e[0]))
    candidates = []  # [state, class_probs, sensor ids, height]

    def try_merge(det) -> bool:
        sensor = sensors[det.sensor_id]
        fm = filter_view(det)
        gate = gate_threshold(cfg.gate_probability, len(fm.measured))
        best = None
        for cand in candidates:
            if det.sensor_id in cand[2]:
                continue
            state = cand[0]
            if det.reference_point is not None:
                cands = [det.reference_point]
            else:
                cands = candidate_reference_points(sensor.position, state.mean)
            try:
                inn = best_innovation(sigma_points(state, cfg.ukf), fm, cands)
            except NumericalError:
                continue
            d2 = inn.mahalanobis2
            if d2 <= gate and (best is None or d2 < best[0]):
                best = (d2, cand, inn)
        if best is None:
            return False
        _, cand, inn = best
        cand[0] = correct(cand[0], inn, cfg.extent_bounds())
        cand[2].add(det.sensor_id)
        if det.object_class is not None:
            cand[1] = _class_update(cand[1], det.object_class, cfg.classes)
        return True

    for _, det in ordered:
        if not _eligible(det, cfg):
            continue
        if try_merge(det):
            continue
        state, class_probs, _, height = _birth_state(det, sensors[det.sensor_id], cfg)
        if Feature.HEIGHT in det.measured:
            height = det.value(Feature.HEIGHT)
        candidates.append([state, class_probs, {det.sensor_id}, height])
    for _, det in ordered:
        if not _eligible(det, cfg):
            try_merge(det)

    born = []
    label = first_label
    for state, class_probs, _, height in candidates:
        if not any(s.area.contains(state.mean[:2]) for s in sensors.values()):
            continue
        born.append(BernoulliTrack(
            label=label, r=cfg.r_birth, state=state, class_probs=class_probs,
            birth_time=k, last_update=k, height=height,
        ))
        label += 1
    return born


# --- cycle ----------------------------------------------------------------


def update_cycle(
    density: LMBDensity,
    batches,
    cfg: FilterConfig,
    sensors: Mapping | None = None,
    start_time: float | None = None,
) -> LMBDensity:
    """Sequential single-sensor updates followed by birth from unused detections.

    ``batches`` is a list of ``(sensor, detections)`` in processing order.
    ``sensors`` maps sensor ids to profiles for the covered-area test at
    birth; it defaults to the sensors appearing in ``batches``. When
    ``start_time`` is given, tracks are propagated (without survival
    discount) to each batch's timestamp before its update.
    """
    unused = []
    now = start_time
    for sensor, dets in batches:
        if now is not None and dets:
            t_batch = min(d.timestamp for d in dets)
            if t_batch > now:
                density = predict(density, t_batch - now, cfg, survival=1.0)
                now = t_batch
        density, left = update_one_sensor(density, dets, sensor, cfg)
        unused.extend(left)
    if sensors is None:
        sensors = {s.sensor_id: s for s, _ in batches}
    born = birth_from_detections(unused, cfg, sensors, density.next_label, density.k)
    if born:
        density = density.replace(tracks=density.tracks + tuple(born), next_label=born[-1].label + 1)
    return density


def prune_and_extract(density: LMBDensity, cfg: FilterConfig):
    kept = tuple(t for t in density.tracks if t.r >= cfg.r_prune)
    output = [t for t in kept if t.r >= cfg.r_extract]
    return density.replace(tracks=kept), output


class Tracker:
    """Stateful wrapper running one fusion cycle per call to :meth:`step`."""

    def __init__(self, cfg: FilterConfig = FilterConfig(), sensors: Mapping | None = None):
        self.cfg = cfg
        self.sensors = sensors
        self.density = LMBDensity()
        self.time: float | None = None
        self.cycle_seconds: list = []

    def step(self, batches, timestamp: float | None = None) -> list:
        """Process one cycle of ``(sensor, detections)`` batches.

        ``timestamp`` defaults to the earliest detection time in ``batches``
        (or one cycle after the previous step). Returns the extracted tracks.
        """
        started = time.perf_counter()
        times = [d.timestamp for _, dets in batches for d in dets]
        if timestamp is None:
            timestamp = min(times) if times else (self.time or 0.0) + self.cfg.t_cycle
        density = self.density.replace(k=self.density.k + 1)
        if self.time is not None:
            density = predict(density, max(timestamp - self.time, 0.0), self.cfg)
        now = timestamp if self.time is None else max(timestamp, self.time)
        density = update_cycle(density, batches, self.cfg, self.sensors, start_time=now)
        self.time = max([now] + times)
        self.density, output = prune_and_extract(density, self.cfg)
        self.cycle_seconds.append(time.perf_counter() - started)
        return output
