"""Exact threshold-free metrics (AUROC, average precision), benchmark
orchestration across methods and groups, and ground-truth statistics.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import corr_score, granger_score, mi_score
from .errors import ValidationError


def auroc(scores, labels) -> float:
    """Mann-Whitney rank statistic with average-rank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("auroc needs both classes")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Average precision over the descending-score sweep, ties as blocks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise ValidationError("auprc needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        block_pos = int(np.sum(y[i:j + 1] == 1))
        tp += block_pos
        seen = j + 1
        if block_pos:
            precision = tp / seen
            ap += (block_pos / n_pos) * precision
        i = j + 1
    return ap


@dataclass
class GroupMetrics:
    group: int
    n: int
    n_pos: int
    auroc: float
    auprc: float


@dataclass
class MetricsReport:
    method: str
    groups: list[GroupMetrics]
    noise_scale: float = 0.0
    skipped_groups: list[int] = field(default_factory=list)

    @property
    def mean_auroc(self) -> float:
        return float(np.mean([g.auroc for g in self.groups]))

    @property
    def std_auroc(self) -> float:
        return float(np.std([g.auroc for g in self.groups]))

    @property
    def mean_auprc(self) -> float:
        return float(np.mean([g.auprc for g in self.groups]))

    @property
    def std_auprc(self) -> float:
        return float(np.std([g.auprc for g in self.groups]))

    def summary(self) -> dict:
        return {
            "method": self.method,
            "noise_scale": self.noise_scale,
            "auroc": {"mean": self.mean_auroc, "std": self.std_auroc},
            "auprc": {"mean": self.mean_auprc, "std": self.std_auprc},
            "groups": [vars(g) for g in self.groups],
            "skipped_groups": self.skipped_groups,
        }


def score_pairs(method, samples) -> np.ndarray:
    """Score every pair with a baseline tag, a checkpoint, or a callable.

    Tags: corr | mi | granger | oracle | constant.  A Checkpoint scores
    with the trained estimator; a callable receives (x_cause, x_effect,
    sample) and returns a float.
    """
    from .estimator import Checkpoint, predict

    if isinstance(method, Checkpoint):
        X = np.stack([s.X for s in samples]).astype(np.float32)
        return predict(method.weights, X, method.est_cfg)
    if callable(method):
        return np.array([float(method(s.X[:, 0], s.X[:, 1], s))
                         for s in samples])
    if method == "corr":
        return np.array([corr_score(s.X[:, 0], s.X[:, 1]).value
                         for s in samples])
    if method == "mi":
        return np.array([mi_score(s.X[:, 0], s.X[:, 1]).value
                         for s in samples])
    if method == "granger":
        return np.array([granger_score(s.X[:, 0], s.X[:, 1]).value
                         for s in samples])
    if method == "oracle":
        return np.array([float(s.label) for s in samples])
    if method == "constant":
        return np.zeros(len(samples))
    raise ValidationError(f"unknown method {method!r}")


def evaluate_method(method, samples, grouping: str = "m",
                    noise_scale: float = 0.0,
                    method_name: str | None = None) -> MetricsReport:
    """Per-group AUROC/AUPRC with mean +/- std aggregation.

    Self-pairs (i == j) are excluded; groups missing a class are skipped
    and reported in skipped_groups.
    """
    samples = [s for s in samples if s.i != s.j]
    if not samples:
        raise ValidationError("no off-diagonal samples to evaluate")
    scores = score_pairs(method, samples)
    keys = np.array([getattr(s, grouping) for s in samples])
    labels = np.array([s.label for s in samples])

    name = method_name or (method if isinstance(method, str)
                           else getattr(method, "name", "checkpoint"))
    groups = []
    skipped = []
    for g in sorted(set(keys.tolist())):
        mask = keys == g
        y = labels[mask]
        if not (np.any(y == 1) and np.any(y == 0)):
            skipped.append(int(g))
            continue
        groups.append(GroupMetrics(group=int(g), n=int(mask.sum()),
                                   n_pos=int(np.sum(y == 1)),
                                   auroc=auroc(scores[mask], y),
                                   auprc=auprc(scores[mask], y)))
    if not groups:
        raise ValidationError("every group was single-class")
    return MetricsReport(method=str(name), groups=groups,
                         noise_scale=noise_scale, skipped_groups=skipped)


def write_report_csv(reports: list[MetricsReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "group", "n", "n_pos", "auroc", "auprc",
                         "noise_scale"])
        for rep in reports:
            for g in rep.groups:
                writer.writerow([rep.method, g.group, g.n, g.n_pos,
                                 f"{g.auroc:.6f}", f"{g.auprc:.6f}",
                                 rep.noise_scale])


@dataclass
class StatsReport:
    periods: list[dict]

    def quantiles(self, key: str) -> dict:
        v = np.array([p[key] for p in self.periods], dtype=np.float64)
        return {"min": float(v.min()), "q25": float(np.quantile(v, 0.25)),
                "median": float(np.median(v)),
                "q75": float(np.quantile(v, 0.75)), "max": float(v.max())}

    def summary(self) -> dict:
        return {
            "periods": self.periods,
            "unique_elements": self.quantiles("n_unique"),
            "positive_pairs": self.quantiles("n_positive"),
            "positive_rate": self.quantiles("positive_rate"),
        }


def ground_truth_stats(ground_truths, recordings=None) -> StatsReport:
    """Per-period causal-pair statistics (off-diagonal positives only)."""
    if not ground_truths:
        raise ValidationError("need at least one period")
    from .perturb import dedup_unique

    rows = []
    for idx, gt in enumerate(ground_truths):
        adj = gt.adjacency.astype(np.int64)
        n = adj.shape[0]
        positives = int(adj.sum() - np.trace(adj))
        total = n * (n - 1)
        n_unique = n
        if recordings is not None:
            n_unique = len(dedup_unique(recordings[idx]))
        rows.append({"m": gt.m, "n_elements": n, "n_unique": n_unique,
                     "n_positive": positives,
                     "positive_rate": positives / total if total else 0.0})
    return StatsReport(periods=rows)


def write_stats_csv(report: StatsReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["m", "n_elements", "n_unique",
                                                "n_positive", "positive_rate"])
        writer.writeheader()
        writer.writerows(report.periods)
