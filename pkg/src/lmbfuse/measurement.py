"""Reference-point measurement model, detection probability and clutter.

A sensor reports the position of one rectangle corner plus an optional
subset of the remaining features. The predicted measurement is the state
projected onto the measured features, with the position shifted from the
center to the reported corner. This shift depends on heading and extent,
so a detection of two different corners of the same object carries
information about its extent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import NumericalError
from .geometry import CoveredArea, candidate_reference_points, corner_offset, signed_distance
from .motion import JITTER_LADDER, UnscentedParams, circular_mean, ensure_psd, sigma_points
from .types import Detection, Feature, ReferencePoint, StateGaussian, canonical_index, wrap_angle


@dataclass(frozen=True)
class MeasurementFunction:
    measured: tuple
    reference_point: ReferencePoint = ReferencePoint.CENTER

    def __post_init__(self):
        measured = tuple(Feature(f) for f in self.measured)
        object.__setattr__(self, "measured", measured)
        object.__setattr__(self, "reference_point", ReferencePoint(self.reference_point))
        object.__setattr__(self, "_rows", np.array([canonical_index(f) for f in measured], dtype=int))

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    def heading_row(self):
        return self.measured.index(Feature.HEADING) if Feature.HEADING in self.measured else None


def predict_measurement(state, mf: MeasurementFunction) -> np.ndarray:
    """Predicted measurement of one state or a stack of states."""
    s = np.asarray(state, dtype=float)
    z = s[..., mf.rows].copy()
    if mf.reference_point is not ReferencePoint.CENTER:
        off = corner_offset(mf.reference_point, s[..., 2], s[..., 6], s[..., 7])
        for i, f in enumerate(mf.measured):
            if f is Feature.POS_X:
                z[..., i] += off[..., 0]
            elif f is Feature.POS_Y:
                z[..., i] += off[..., 1]
    return z


@dataclass(frozen=True)
class DetectionModel:
    lambda_d: float = 0.95
    relax: float = 2.0

    def __post_init__(self):
        if not 0.5 < self.lambda_d <= 1.0:
            raise ValueError("lambda_d must lie in (0.5, 1]")
        if self.relax <= 0:
            raise ValueError("relax must be positive")


def detection_probability(state, area: CoveredArea, dm: DetectionModel = DetectionModel()) -> float:
    """Detection probability of an object centered at ``state[:2]``.

    Linear ramp from ``lambda_d`` at ``d = -relax`` to ``1 - lambda_d`` at
    ``d = +relax``, where ``d`` is the signed distance to the covered area.
    """
    d = signed_distance(np.asarray(state, dtype=float)[:2], area)
    lo, hi = 1.0 - dm.lambda_d, dm.lambda_d
    if d <= -dm.relax:
        return hi
    if d >= dm.relax:
        return lo
    return hi - (hi - lo) * (d + dm.relax) / (2.0 * dm.relax)


@dataclass(frozen=True)
class ObservableSubset:
    """Box in measurement space over which clutter is spread uniformly."""

    bounds: Mapping = field(default_factory=dict)

    def __post_init__(self):
        b = {Feature(f): (float(lo), float(hi)) for f, (lo, hi) in dict(self.bounds).items()}
        for f, (lo, hi) in b.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
                raise ValueError(f"invalid interval for {f.name}: ({lo}, {hi})")
        object.__setattr__(self, "bounds", b)

    @classmethod
    def for_area(
        cls,
        area: CoveredArea,
        extent=(0.3, 30.0),
        height=(0.3, 5.0),
        speed=(-50.0, 50.0),
        yaw_rate=(-2.0, 2.0),
        accel=(-10.0, 10.0),
    ) -> "ObservableSubset":
        xb, yb = area.bounds
        return cls(
            {
                Feature.POS_X: xb,
                Feature.POS_Y: yb,
                Feature.HEADING: (-math.pi, math.pi),
                Feature.YAW_RATE: yaw_rate,
                Feature.SPEED: speed,
                Feature.ACCEL: accel,
                Feature.WIDTH: extent,
                Feature.LENGTH: extent,
                Feature.HEIGHT: height,
            }
        )

    def volume(self, measured) -> float:
        return float(np.prod([self.bounds[Feature(f)][1] - self.bounds[Feature(f)][0] for f in measured]))

    def contains(self, z, measured) -> bool:
        for v, f in zip(z, measured):
            lo, hi = self.bounds[Feature(f)]
            if not lo <= v <= hi:
                return False
        return True


def clutter_intensity(z, measured, subset: ObservableSubset, lambda_c: float) -> float:
    if lambda_c == 0 or not subset.contains(z, measured):
        return 0.0
    return lambda_c / subset.volume(measured)


class FilterMeasurement(NamedTuple):
    """A detection restricted to the features present in the filter state."""

    measured: tuple
    values: np.ndarray
    cov: np.ndarray


def filter_view(det: Detection) -> FilterMeasurement:
    keep = [i for i, f in enumerate(det.measured) if f is not Feature.HEIGHT]
    if len(keep) == len(det.measured):
        return FilterMeasurement(det.measured, det.values, det.covariance)
    idx = np.array(keep)
    return FilterMeasurement(
        tuple(det.measured[i] for i in keep), det.values[idx], det.covariance[np.ix_(idx, idx)]
    )


class Innovation(NamedTuple):
    reference_point: ReferencePoint
    z_pred: np.ndarray
    S: np.ndarray
    cross: np.ndarray
    residual: np.ndarray
    chol: np.ndarray

    @property
    def mahalanobis2(self) -> float:
        w = np.linalg.solve(self.chol, self.residual) if self.residual.size else self.residual
        return float(w @ w)

    @property
    def log_likelihood(self) -> float:
        d = self.residual.size
        logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        return -0.5 * (self.mahalanobis2 + logdet + d * math.log(2.0 * math.pi))


def _chol(S: np.ndarray) -> np.ndarray:
    n = S.shape[0]
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(S + jitter * np.eye(n) if jitter else S)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("innovation covariance is not positive definite")


def innovation(sigma, fm: FilterMeasurement, zeta: ReferencePoint) -> Innovation:
    """Unscented prediction of measurement ``fm`` at reference point ``zeta``.

    ``sigma`` is the ``(points, wm, wc)`` triple from :func:`sigma_points`.
    """
    pts, wm, wc = sigma
    mf = MeasurementFunction(fm.measured, zeta)
    zp = predict_measurement(pts, mf)
    z_pred = wm @ zp
    hrow = mf.heading_row()
    if hrow is not None:
        z_pred[hrow] = circular_mean(zp[:, hrow], wm)
    dz = zp - z_pred
    dx = pts - pts[0]
    dx[:, 2] = wrap_angle(dx[:, 2])
    if hrow is not None:
        dz[:, hrow] = wrap_angle(dz[:, hrow])
    S = (wc[:, None] * dz).T @ dz + fm.cov
    S = 0.5 * (S + S.T)
    # deviations taken around the center sigma point (the prior mean)
    cross = (wc[:, None] * dx).T @ dz
    resid = np.asarray(fm.values, dtype=float) - z_pred
    if hrow is not None:
        resid[hrow] = wrap_angle(resid[hrow])
    return Innovation(ReferencePoint(zeta), z_pred, S, cross, resid, _chol(S))


def best_innovation(sigma, fm: FilterMeasurement, candidates) -> Innovation:
    """Innovation at the candidate with the smallest Mahalanobis distance."""
    best, best_d2 = None, math.inf
    for zeta in candidates:
        inn = innovation(sigma, fm, zeta)
        d2 = inn.mahalanobis2
        if best is None or d2 < best_d2:
            best, best_d2 = inn, d2
    return best


def correct(prior: StateGaussian, inn: Innovation, extent_bounds=(0.3, 30.0)) -> StateGaussian:
    """Kalman correction of ``prior`` given a precomputed innovation."""
    gain = np.linalg.solve(inn.chol.T, np.linalg.solve(inn.chol, inn.cross.T)).T
    mean = np.array(prior.mean) + gain @ inn.residual
    cov = np.array(prior.cov) - gain @ inn.S @ gain.T
    mean[2] = wrap_angle(mean[2])
    lo, hi = extent_bounds
    mean[6] = min(max(mean[6], lo), hi)
    mean[7] = min(max(mean[7], lo), hi)
    return StateGaussian(mean, ensure_psd(cov))


def ukf_update(
    prior: StateGaussian,
    det: Detection,
    mf: MeasurementFunction,
    p: UnscentedParams = UnscentedParams(),
    extent_bounds=(0.3, 30.0),
):
    """Unscented measurement update.

    Returns the posterior and ``log N(z; z_pred, S)``. Height rows are
    dropped since height is not part of the filter state.
    """
    fm = filter_view(det)
    if tuple(mf.measured) != fm.measured:
        fm = FilterMeasurement(mf.measured, *_select(det, mf.measured))
    inn = innovation(sigma_points(prior, p), fm, mf.reference_point)
    return correct(prior, inn, extent_bounds), inn.log_likelihood


def _select(det: Detection, measured):
    idx = np.array([det.measured.index(f) for f in measured])
    return det.values[idx], det.covariance[np.ix_(idx, idx)]


def select_reference_point(
    track, det: Detection, sensor, p: UnscentedParams = UnscentedParams()
) -> ReferencePoint:
    """Reference point a detection most plausibly refers to.

    A transmitted reference point is used as is. Otherwise the three corners
    of the track closest to the sensor are tried and the one with the
    smallest Mahalanobis distance wins.
    """
    if det.reference_point is not None:
        return det.reference_point
    state = track.state if hasattr(track, "state") else track
    candidates = candidate_reference_points(sensor.position, state.mean)
    return best_innovation(sigma_points(state, p), filter_view(det), candidates).reference_point
