"""Independent reference computations used as test oracles.

None of these import the code under test beyond plain data types.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

# corner name -> (longitudinal sign, lateral sign) in the object frame
LOCAL_CORNERS = {"FL": (1, 1), "FR": (1, -1), "BL": (-1, 1), "BR": (-1, -1)}


def brute_corners(center, heading, width, length) -> dict:
    """Corners by rotating the axis-aligned local rectangle."""
    rot = np.array([[math.cos(heading), -math.sin(heading)], [math.sin(heading), math.cos(heading)]])
    out = {}
    for name, (lon, lat) in LOCAL_CORNERS.items():
        local = np.array([lon * length / 2.0, lat * width / 2.0])
        out[name] = np.asarray(center, dtype=float) + rot @ local
    return out


def star_polygon(rng, n=None, center=(0.0, 0.0), rmin=1.0, rmax=10.0):
    """Random simple polygon: vertices at sorted angles around a center."""
    n = n or int(rng.integers(3, 12))
    while True:
        ang = np.sort(rng.uniform(0, 2 * math.pi, n))
        gaps = np.diff(np.r_[ang, ang[0] + 2 * math.pi])
        # a gap wider than pi would let an edge cross over the center
        if gaps.min() > 1e-3 and gaps.max() < math.pi - 1e-3:
            break
    r = rng.uniform(rmin, rmax, n)
    return np.c_[center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)]


def _seg_dist(p, a, b, t):
    q = a + t * (b - a)
    return math.hypot(p[0] - q[0], p[1] - q[1])


def sampled_boundary_distance(point, vertices, samples=200) -> float:
    """Dense sampling along every edge, then golden-section refinement around the best sample."""
    p = np.asarray(point, dtype=float)
    v = np.asarray(vertices, dtype=float)
    best = math.inf
    gr = (math.sqrt(5) - 1) / 2
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        ts = np.linspace(0.0, 1.0, samples + 1)
        q = a[None, :] + ts[:, None] * (b - a)[None, :]
        d = np.hypot(q[:, 0] - p[0], q[:, 1] - p[1])
        k = int(np.argmin(d))
        lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, samples)]
        # distance along a segment is unimodal in t
        for _ in range(200):
            m1 = hi - gr * (hi - lo)
            m2 = lo + gr * (hi - lo)
            if _seg_dist(p, a, b, m1) < _seg_dist(p, a, b, m2):
                hi = m2
            else:
                lo = m1
            if hi - lo < 1e-15:
                break
        best = min(best, d[k], _seg_dist(p, a, b, 0.5 * (lo + hi)))
    return best


def winding_number(point, vertices) -> int:
    x, y = float(point[0]), float(point[1])
    v = np.asarray(vertices, dtype=float)
    wn = 0
    for i in range(len(v)):
        (x0, y0), (x1, y1) = v[i], v[(i + 1) % len(v)]
        cross = (x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)
        if y0 <= y < y1 and cross > 0:
            wn += 1
        elif y1 <= y < y0 and cross < 0:
            wn -= 1
    return wn


def brute_signed_distance(point, vertices) -> float:
    d = sampled_boundary_distance(point, vertices)
    return -d if winding_number(point, vertices) != 0 else d


def ctra_rhs(s):
    x, y, phi, om, v, a = s
    return np.array([v * math.cos(phi), v * math.sin(phi), om, 0.0, a, 0.0])


def rk4_ctra(state, dt, h=1e-4):
    s = np.array(state[:6], dtype=float)
    steps = max(1, int(round(dt / h)))
    h = dt / steps
    for _ in range(steps):
        k1 = ctra_rhs(s)
        k2 = ctra_rhs(s + 0.5 * h * k1)
        k3 = ctra_rhs(s + 0.5 * h * k2)
        k4 = ctra_rhs(s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    out = np.array(state, dtype=float)
    out[:6] = s
    return out


def kalman_update(mean, cov, H, z, R):
    S = H @ cov @ H.T + R
    K = cov @ H.T @ np.linalg.inv(S)
    innov = z - H @ mean
    post_mean = mean + K @ innov
    post_cov = (np.eye(len(mean)) - K @ H) @ cov
    sign, logdet = np.linalg.slogdet(2 * math.pi * S)
    loglik = -0.5 * (innov @ np.linalg.solve(S, innov) + logdet)
    return post_mean, post_cov, loglik


def all_association_maps(n, m):
    """Every injective partial map from n tracks to m detections; -1 = missed."""
    for theta in itertools.product(range(-1, m), repeat=n):
        used = [j for j in theta if j >= 0]
        if len(used) == len(set(used)):
            yield theta


def brute_lmb_marginals(r, p_d, lik_over_kappa):
    """Marginal association probabilities and posterior existence by full enumeration.

    ``lik_over_kappa[i, j]`` is g(z_j | track i) / kappa(z_j), 0 where gated out.
    """
    n, m = lik_over_kappa.shape
    marg = np.zeros((n, m + 1))
    total = 0.0
    for theta in all_association_maps(n, m):
        w = 1.0
        for i, j in enumerate(theta):
            w *= (1 - r[i] * p_d[i]) if j < 0 else r[i] * p_d[i] * lik_over_kappa[i, j]
        if w == 0:
            continue
        total += w
        for i, j in enumerate(theta):
            marg[i, m if j < 0 else j] += w
    marg /= total
    q_missed = r * (1 - p_d) / (1 - r * p_d)
    r_post = marg[:, :m].sum(axis=1) + marg[:, m] * q_missed
    return marg, r_post


def ramp_detection_probability(signed_dist, lambda_d=0.95, relax=2.0):
    if signed_dist <= -relax:
        return lambda_d
    if signed_dist >= relax:
        return 1.0 - lambda_d
    return lambda_d - (2 * lambda_d - 1) * (signed_dist + relax) / (2 * relax)


def oracle_association(means, covs, r, dets, det_covs, box, vertices, lambda_c, gate):
    """Marginals and posterior existence for center-referenced position detections.

    ``box`` is ``((xmin, xmax), (ymin, ymax))`` of the clutter region and
    ``vertices`` the covered-area polygon.
    """
    n, m = len(means), len(dets)
    vol = (box[0][1] - box[0][0]) * (box[1][1] - box[1][0])
    kappa = lambda_c / vol
    p_d = np.array([ramp_detection_probability(brute_signed_distance(mu[:2], vertices)) for mu in means])
    H = np.zeros((2, len(means[0]) if n else 8))
    H[0, 0] = H[1, 1] = 1.0
    lik = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            S = H @ covs[i] @ H.T + det_covs[j]
            d = np.asarray(dets[j]) - H @ means[i]
            if d @ np.linalg.solve(S, d) > gate:
                continue
            _, _, ll = kalman_update(means[i], covs[i], H, np.asarray(dets[j]), det_covs[j])
            lik[i, j] = math.exp(ll) / kappa
    marg, r_post = brute_lmb_marginals(np.asarray(r), p_d, lik)
    return marg, r_post, p_d
