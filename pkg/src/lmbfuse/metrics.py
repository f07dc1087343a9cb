"""OSPA-T evaluation on positions and extent-error summaries.

Track-label consistency is judged against a mapping from estimated track
labels to true object labels. :func:`ospat_sequence` establishes it by
an optimal assignment between whole tracks over the evaluation window, where
two tracks cost their per-step cut-off distance while both exist and the
cut-off while only one does.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class OspatConfig:
    p: float = 1.0
    c: float = 300.0
    alpha: float = 300.0

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("order p must be at least 1")
        if not 0 <= self.alpha <= self.c:
            raise ValueError("alpha must lie in [0, c]")


def _pair_costs(truth: Mapping, est: Mapping, cfg: OspatConfig, label_map: Mapping | None):
    t_labels = list(truth)
    e_labels = list(est)
    if not t_labels or not e_labels:
        return t_labels, e_labels, np.zeros((len(t_labels), len(e_labels)))
    tp = np.array([np.asarray(truth[l], dtype=float)[:2] for l in t_labels])
    ep = np.array([np.asarray(est[l], dtype=float)[:2] for l in e_labels])
    dist = np.linalg.norm(tp[:, None, :] - ep[None, :, :], axis=2)
    if label_map is None:
        mapped = e_labels
    else:
        mapped = [label_map.get(l) for l in e_labels]
    mismatch = np.array([[0.0 if m == t and m is not None else 1.0 for m in mapped] for t in t_labels])
    base = np.minimum(cfg.c, dist + cfg.alpha * mismatch)
    return t_labels, e_labels, base**cfg.p


def ospat_assignment(truth: Mapping, est: Mapping, cfg: OspatConfig = OspatConfig(), label_map: Mapping | None = None):
    """OSPA-T value and the optimal ``(truth_label, est_label)`` pairs.

    ``truth`` and ``est`` map labels to 2D positions. ``label_map`` maps
    estimated labels to true labels; when omitted, equal labels count as
    consistent.
    """
    n, m = len(truth), len(est)
    if n == 0 and m == 0:
        return 0.0, []
    if n == 0 or m == 0:
        return float(cfg.c), []
    t_labels, e_labels, cost = _pair_costs(truth, est, cfg, label_map)
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + cfg.c**cfg.p * abs(n - m)
    value = float((total / max(n, m)) ** (1.0 / cfg.p))
    return value, [(t_labels[i], e_labels[j]) for i, j in zip(rows, cols)]


def ospat(truth: Mapping, est: Mapping, cfg: OspatConfig = OspatConfig(), label_map: Mapping | None = None) -> float:
    return ospat_assignment(truth, est, cfg, label_map)[0]


def track_label_mapping(truth_seq: Sequence[Mapping], est_seq: Sequence[Mapping], cfg: OspatConfig = OspatConfig()) -> dict:
    """Globally optimal assignment of estimated track labels to true labels."""
    t_labels = sorted({l for step in truth_seq for l in step}, key=repr)
    e_labels = sorted({l for step in est_seq for l in step}, key=repr)
    if not t_labels or not e_labels:
        return {}
    ti = {l: i for i, l in enumerate(t_labels)}
    ej = {l: j for j, l in enumerate(e_labels)}
    cost = np.zeros((len(t_labels), len(e_labels)))
    cp = cfg.c**cfg.p
    for truth, est in zip(truth_seq, est_seq):
        t_in = np.zeros(len(t_labels), dtype=bool)
        e_in = np.zeros(len(e_labels), dtype=bool)
        t_in[[ti[l] for l in truth]] = True
        e_in[[ej[l] for l in est]] = True
        # exactly one present: cut-off
        cost += cp * (t_in[:, None] ^ e_in[None, :])
        for lt, pt in truth.items():
            for le, pe in est.items():
                d = float(np.hypot(*(np.asarray(pt, dtype=float)[:2] - np.asarray(pe, dtype=float)[:2])))
                cost[ti[lt], ej[le]] += min(cfg.c, d) ** cfg.p
    rows, cols = linear_sum_assignment(cost)
    return {e_labels[j]: t_labels[i] for i, j in zip(rows, cols)}


def ospat_sequence(truth_seq: Sequence[Mapping], est_seq: Sequence[Mapping], cfg: OspatConfig = OspatConfig()):
    """Per-step OSPA-T values and the label mapping used for them."""
    if len(truth_seq) != len(est_seq):
        raise ValueError("truth and estimate sequences must cover the same steps")
    mapping = track_label_mapping(truth_seq, est_seq, cfg)
    values = [ospat(t, e, cfg, mapping) for t, e in zip(truth_seq, est_seq)]
    return np.array(values), mapping


def correct_associations(truth_seq, est_seq, cfg: OspatConfig = OspatConfig(), mapping=None) -> list:
    """Per step, the OSPA-T pairs whose labels agree with the global mapping."""
    if mapping is None:
        mapping = track_label_mapping(truth_seq, est_seq, cfg)
    out = []
    for truth, est in zip(truth_seq, est_seq):
        _, pairs = ospat_assignment(truth, est, cfg, mapping)
        out.append([(t, e) for t, e in pairs if mapping.get(e) == t])
    return out


def length_mse(true_lengths: Mapping, est_length_seq: Sequence[Mapping], pairs_seq: Sequence) -> dict:
    """Mean squared length error per true object over correctly associated steps.

    Objects never associated map to ``None``.
    """
    sq: dict = {l: [] for l in true_lengths}
    for est, pairs in zip(est_length_seq, pairs_seq):
        for t, e in pairs:
            sq.setdefault(t, []).append((est[e] - true_lengths[t]) ** 2)
    return {l: (float(np.mean(v)) if v else None) for l, v in sq.items()}
