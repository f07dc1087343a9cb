"""Association hypotheses for one cluster of tracks and detections.

A hypothesis maps every track to a detection index or to ``MISSED``
(-1), using each detection at most once. Weights are handled in the log
domain: ``log_assigned[i, j]`` is the log weight of track ``i`` explaining
detection ``j`` (``-inf`` when gated out), ``log_missed[i]`` the log weight
of track ``i`` being missed or absent.
"""
from __future__ import annotations

import heapq
import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

MISSED = -1


def enumerate_hypotheses(log_assigned: np.ndarray, log_missed: np.ndarray):
    """All valid hypotheses with their unnormalized log weights."""
    n, m = log_assigned.shape
    options = [
        [MISSED] + [j for j in range(m) if log_assigned[i, j] > -np.inf]
        for i in range(n)
    ]
    out = []

    def rec(i, used, theta, logw):
        if i == n:
            out.append((tuple(theta), logw))
            return
        for j in options[i]:
            if j == MISSED:
                rec(i + 1, used, theta + [MISSED], logw + log_missed[i])
            elif j not in used:
                rec(i + 1, used | {j}, theta + [j], logw + log_assigned[i, j])

    rec(0, frozenset(), [], 0.0)
    return out


def _solve(cost: np.ndarray):
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:  # infeasible: every completion hits a forbidden cell
        return None
    total = cost[rows, cols].sum()
    if not np.isfinite(total):
        return None
    return cols, float(total)


def murty(cost: np.ndarray, k: int):
    """The ``k`` lowest-cost complete row assignments of ``cost``.

    ``cost`` is ``n x c`` with ``c >= n`` and ``inf`` marking forbidden
    cells. Returns a list of ``(columns, total_cost)`` in ascending cost.
    """
    n = cost.shape[0]
    if n == 0:
        return [(np.zeros(0, dtype=int), 0.0)]
    first = _solve(cost)
    if first is None:
        return []
    counter = itertools.count()
    heap = [(first[1], next(counter), first[0], cost)]
    out = []
    while heap and len(out) < k:
        total, _, cols, node_cost = heapq.heappop(heap)
        out.append((cols, total))
        forced = node_cost.copy()
        for i in range(n):
            child = forced.copy()
            child[i, cols[i]] = np.inf
            sol = _solve(child)
            if sol is not None:
                heapq.heappush(heap, (sol[1], next(counter), sol[0], child))
            # fix pair (i, cols[i]) for the remaining children
            keep = forced[i, cols[i]]
            forced[i, :] = np.inf
            forced[:, cols[i]] = np.inf
            forced[i, cols[i]] = keep
    return out


def ranked_hypotheses(log_assigned: np.ndarray, log_missed: np.ndarray, k: int):
    """The ``k`` most likely hypotheses via ranked assignment."""
    n, m = log_assigned.shape
    cost = np.full((n, m + n), np.inf)
    cost[:, :m] = -log_assigned
    cost[np.arange(n), m + np.arange(n)] = -log_missed
    out = []
    for cols, total in murty(cost, k):
        theta = tuple(int(c) if c < m else MISSED for c in cols)
        out.append((theta, -total))
    return out


def normalize(hypotheses):
    """Attach normalized weights; returns ``(thetas, weights)``."""
    if not hypotheses:
        return [], np.zeros(0)
    thetas = [h[0] for h in hypotheses]
    logw = np.array([h[1] for h in hypotheses])
    logw = logw - logw.max()
    w = np.exp(logw)
    return thetas, w / w.sum()
