"""CTRA process model and the unscented transform."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NumericalError
from .types import STATE_DIM, StateGaussian, wrap_angle

YAW_RATE_EPS = 1e-4
HEADING = 2
JITTER_LADDER = (0.0, 1e-12, 1e-9, 1e-6)


@dataclass(frozen=True)
class UnscentedParams:
    alpha: float = 1e-1
    beta: float = 2.0
    kappa: float = 0.0
    n: int = STATE_DIM

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    @cached_property
    def lam(self) -> float:
        return self.alpha**2 * (self.n + self.kappa) - self.n

    @cached_property
    def weights(self):
        n, lam = self.n, self.lam
        wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + (1.0 - self.alpha**2 + self.beta)
        wm.setflags(write=False)
        wc.setflags(write=False)
        return wm, wc


@dataclass(frozen=True)
class ProcessNoise:
    """White yaw-acceleration and jerk noise plus a random walk on the extent.

    ``pos_std`` adds isotropic position diffusion (m/sqrt(s)); it absorbs
    motion the CTRA model cannot express, e.g. right after birth when the
    heading is still unknown.
    """

    yaw_accel_std: float = 1.0
    jerk_std: float = 3.0
    extent_std: float = 0.01
    pos_std: float = 0.0
    heading_std: float = 0.0

    def matrix(self, dt: float, heading: float = 0.0) -> np.ndarray:
        dt = abs(dt)
        q = np.zeros((STATE_DIM, STATE_DIM))
        if dt == 0.0:
            return q
        # jerk drives the chain (s, v, a) along the heading direction
        j = self.jerk_std**2 * np.array(
            [
                [dt**5 / 20, dt**4 / 8, dt**3 / 6],
                [dt**4 / 8, dt**3 / 3, dt**2 / 2],
                [dt**3 / 6, dt**2 / 2, dt],
            ]
        )
        m = np.zeros((STATE_DIM, 3))
        m[0, 0], m[1, 0] = np.cos(heading), np.sin(heading)
        m[4, 1] = 1.0
        m[5, 2] = 1.0
        q += m @ j @ m.T
        y = self.yaw_accel_std**2 * np.array([[dt**3 / 3, dt**2 / 2], [dt**2 / 2, dt]])
        q[2:4, 2:4] += y
        q[6, 6] += self.extent_std**2 * dt
        q[7, 7] += self.extent_std**2 * dt
        q[0, 0] += self.pos_std**2 * dt
        q[1, 1] += self.pos_std**2 * dt
        q[2, 2] += self.heading_std**2 * dt
        return q


ZERO_NOISE = ProcessNoise(0.0, 0.0, 0.0, 0.0, 0.0)


def ctra_transition(mean, dt: float) -> np.ndarray:
    """Propagate ``[x, y, phi, phi_dot, v, v_dot, w, l]`` by ``dt`` seconds.

    Accepts a single state or an array of states stacked along axis 0.
    """
    s = np.array(mean, dtype=float)
    if dt == 0.0:
        return s
    single = s.ndim == 1
    s = np.atleast_2d(s)
    out = s.copy()
    x, y, phi, om, v, a = (s[:, i] for i in range(6))
    turning = np.abs(om) > YAW_RATE_EPS
    if np.any(turning):
        o = np.where(turning, om, 1.0)
        p1 = phi + o * dt
        dx = ((v + a * dt) * o * np.sin(p1) + a * np.cos(p1) - v * o * np.sin(phi) - a * np.cos(phi)) / o**2
        dy = ((-v - a * dt) * o * np.cos(p1) + a * np.sin(p1) + v * o * np.cos(phi) - a * np.sin(phi)) / o**2
    else:
        dx = dy = 0.0
    dist = v * dt + 0.5 * a * dt * dt
    out[:, 0] = x + np.where(turning, dx, dist * np.cos(phi))
    out[:, 1] = y + np.where(turning, dy, dist * np.sin(phi))
    out[:, 2] = wrap_angle(phi + om * dt)
    out[:, 4] = v + a * dt
    return out[0] if single else out


def robust_cholesky(cov: np.ndarray) -> np.ndarray:
    n = cov.shape[0]
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n) if jitter else cov)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("covariance is not positive definite after jitter escalation")


def sigma_points(g: StateGaussian, p: UnscentedParams = UnscentedParams()):
    """Return ``(points, wm, wc)`` with ``points`` of shape ``(2n+1, n)``."""
    mean = np.asarray(g.mean, dtype=float)
    cov = np.asarray(g.cov, dtype=float)
    n = mean.shape[0]
    if n != p.n:
        p = UnscentedParams(p.alpha, p.beta, p.kappa, n)
    chol = robust_cholesky((n + p.lam) * cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1 : n + 1] = mean + chol.T
    pts[n + 1 :] = mean - chol.T
    wm, wc = p.weights
    return pts, wm, wc


def circular_mean(angles, weights) -> float:
    return float(np.arctan2(weights @ np.sin(angles), weights @ np.cos(angles)))


def ensure_psd(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        pass
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() >= -1e-9 * max(1.0, vals.max()):
        return cov
    vals = np.clip(vals, 0.0, None)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


def unscented_predict(
    g: StateGaussian,
    dt: float,
    q: ProcessNoise = ZERO_NOISE,
    p: UnscentedParams = UnscentedParams(),
) -> StateGaussian:
    if dt == 0.0 and q == ZERO_NOISE:
        return g
    pts, wm, wc = sigma_points(g, p)
    prop = ctra_transition(pts, dt)
    mean = wm @ prop
    mean[HEADING] = circular_mean(prop[:, HEADING], wm)
    dev = prop - mean
    dev[:, HEADING] = wrap_angle(dev[:, HEADING])
    cov = (wc[:, None] * dev).T @ dev + q.matrix(dt, mean[HEADING])
    return StateGaussian(mean, ensure_psd(cov))
