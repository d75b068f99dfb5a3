"""Supervised pair datasets: splits, pair construction, undersampling,
noise injection, the linear-network surrogate generator and dataset IO.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .perturb import CausalGroundTruth, dedup_unique
from .sim import StateRecording

DATASET_MAGIC = b"CFDS"
DATASET_VERSION = 1


@dataclass
class PairSample:
    X: np.ndarray               # (L, 2) float32: cause col 0, effect col 1
    label: int
    i: int
    j: int
    m: int
    source: str = "circuit"


@dataclass
class SplitPlan:
    test_periods: list[int] = field(default_factory=lambda: [0, 1])
    val_periods: list[int] = field(default_factory=lambda: [2])
    undersample_ratio: int = 3
    min_unique_elements: int = 4    # periods with fewer are dropped as outliers
    seed: int = 0

    def __post_init__(self):
        if set(self.test_periods) & set(self.val_periods):
            raise ValidationError("test and val periods must be disjoint")
        if self.undersample_ratio < 1:
            raise ValidationError("undersample_ratio must be >= 1")


@dataclass
class NoiseSpec:
    scale: float = 0.0
    normalize_per_sequence: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise ValidationError("noise scale must be non-negative")


def make_pairs(recording: StateRecording, adjacency: np.ndarray,
               element_ids: list[int], m: int | None = None,
               source: str = "circuit") -> list[PairSample]:
    """All ordered pairs (i, j), i != j, among element_ids.

    adjacency is indexed by position in recording.element_ids; (i, j) and
    (j, i) are distinct samples since causality is directional.
    """
    if adjacency.shape[0] != adjacency.shape[1]:
        raise ValidationError("adjacency must be square")
    if adjacency.shape[0] != len(recording.element_ids):
        raise ValidationError("adjacency not aligned with recording elements")
    row_of = {eid: r for r, eid in enumerate(recording.element_ids)}
    period = recording.m if m is None else m
    samples = []
    for i in element_ids:
        for j in element_ids:
            if i == j:
                continue
            ri, rj = row_of[i], row_of[j]
            X = np.stack([recording.data[ri], recording.data[rj]],
                         axis=1).astype(np.float32)
            samples.append(PairSample(X=X, label=int(adjacency[ri, rj]),
                                      i=i, j=j, m=period, source=source))
    return samples


def undersample_negatives(samples: list[PairSample], ratio: int,
                          seed: int) -> list[PairSample]:
    """Keep all positives; thin negatives to ratio x positives (train only)."""
    positives = [s for s in samples if s.label == 1]
    negatives = [s for s in samples if s.label == 0]
    if not positives:
        raise ValidationError("no positive samples to undersample against")
    target = ratio * len(positives)
    if len(negatives) > target:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(negatives), size=target, replace=False)
        negatives = [negatives[idx] for idx in sorted(keep)]
    return positives + negatives


def build_split(ground_truths: list[CausalGroundTruth],
                recordings: list[StateRecording],
                plan: SplitPlan) -> dict[str, list[PairSample]]:
    """Element-half x period split with per-period dedup and outlier drop.

    Per period: dedup, then ids below N/2 are training elements and the
    rest test elements.  Test/val splits use test elements in the planned
    periods; training uses training elements in the remaining periods.
    Only the training split is undersampled.
    """
    if len(ground_truths) != len(recordings):
        raise ValidationError("ground truths and recordings must align")
    n_total = len(recordings[0].element_ids)
    half = n_total // 2

    kept = []
    for rec, gt in zip(recordings, ground_truths):
        unique_ids = dedup_unique(rec)
        if len(unique_ids) < plan.min_unique_elements:
            continue        # outlier period: too few unique elements
        kept.append((rec, gt, unique_ids))
    needed = set(plan.test_periods) | set(plan.val_periods)
    if len(kept) <= len(needed):
        raise ValidationError("not enough usable periods for the split plan")

    splits: dict[str, list[PairSample]] = {"train": [], "val": []}
    for order, (rec, gt, unique_ids) in enumerate(kept):
        train_ids = [e for e in unique_ids if e < half]
        test_ids = [e for e in unique_ids if e >= half]
        if order in plan.test_periods:
            name = f"test_{plan.test_periods.index(order)}"
            splits[name] = make_pairs(rec, gt.adjacency, test_ids)
        elif order in plan.val_periods:
            splits["val"].extend(make_pairs(rec, gt.adjacency, test_ids))
        else:
            splits["train"].extend(make_pairs(rec, gt.adjacency, train_ids))

    if not any(s.label == 1 for s in splits["train"]):
        raise ValidationError("training split has no positive samples")
    splits["train"] = undersample_negatives(splits["train"],
                                            plan.undersample_ratio, plan.seed)
    return splits


def add_noise(samples: list[PairSample], spec: NoiseSpec) -> list[PairSample]:
    """X' = X + s * sigma * eps, labels untouched; deterministic per seed."""
    if spec.scale == 0.0:
        return [PairSample(s.X.copy(), s.label, s.i, s.j, s.m, s.source)
                for s in samples]
    rng = np.random.default_rng(spec.seed)
    out = []
    for s in samples:
        eps = rng.standard_normal(s.X.shape)
        if spec.normalize_per_sequence:
            sigma = s.X.std(axis=0, keepdims=True)
        else:
            sigma = 1.0
        X = (s.X + spec.scale * sigma * eps).astype(np.float32)
        out.append(PairSample(X, s.label, s.i, s.j, s.m, s.source))
    return out


def gen_linear_network(n_nodes: int, edge_density: float, seq_len: int,
                       n_subjects: int, noise_std: float = 0.1,
                       seed: int = 0,
                       ) -> list[tuple[StateRecording, np.ndarray]]:
    """Linear-dynamics surrogate: x_{t+1} = W x_t + b u_t + noise.

    W has lower-triangular support sampled at edge_density (a DAG in the
    lagged sense) and is rescaled so its spectral radius stays below 0.95.
    Returns one (recording, binary adjacency) per subject; adjacency[i][j]
    marks a nonzero coupling from node i to node j.
    """
    if not 0 < edge_density < 1:
        raise ValidationError("edge_density must lie in (0, 1)")
    if n_nodes < 2:
        raise ValidationError("n_nodes must be >= 2")
    rng = np.random.default_rng(seed)

    W = np.zeros((n_nodes, n_nodes))
    mask = np.tril(rng.random((n_nodes, n_nodes)) < edge_density, k=-1)
    W[mask] = rng.uniform(0.5, 1.0, size=mask.sum()) * rng.choice(
        [-1.0, 1.0], size=mask.sum())
    diag = rng.uniform(0.3, 0.9, size=n_nodes)
    W[np.diag_indices(n_nodes)] = diag
    radius = max(np.abs(np.linalg.eigvals(W)))
    if radius >= 0.95:
        W *= 0.95 / radius
    adjacency = (np.abs(W.T) > 0).astype(np.uint8)   # W[j,i] couples i -> j
    np.fill_diagonal(adjacency, 0)
    b = rng.uniform(-0.5, 0.5, size=n_nodes)

    out = []
    for subject in range(n_subjects):
        x = np.zeros(n_nodes)
        rows = np.zeros((n_nodes, seq_len), dtype=np.float32)
        for t in range(seq_len):
            u = np.sin(2 * np.pi * t / 37.0)
            x = W @ x + b * u + noise_std * rng.standard_normal(n_nodes)
            rows[:, t] = x
        rec = StateRecording(m=subject, data=rows,
                             element_ids=list(range(n_nodes)))
        out.append((rec, adjacency.copy()))
    return out


def write_dataset(samples: list[PairSample], path: str | Path,
                  sidecar_extra: dict | None = None) -> None:
    """CFDS container: header, then per-sample label/meta and interleaved f32."""
    path = Path(path)
    L = samples[0].X.shape[0] if samples else 0
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HII", DATASET_VERSION, len(samples), L))
        for s in samples:
            if s.X.shape != (L, 2):
                raise ValidationError("all samples must share the same L")
            fh.write(struct.pack("<BIII", s.label, s.i, s.j, s.m))
            fh.write(s.X.astype("<f4").tobytes())   # column-interleaved (L, 2)
    sidecar = {"n_samples": len(samples), "L": L}
    if sidecar_extra:
        sidecar.update(sidecar_extra)
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)


def read_dataset(path: str | Path) -> list[PairSample]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, n_samples, L = struct.unpack("<HII", fh.read(10))
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        samples = []
        for _ in range(n_samples):
            head = fh.read(13)
            if len(head) != 13:
                raise FormatError(f"{path}: truncated sample header")
            label, i, j, m = struct.unpack("<BIII", head)
            payload = fh.read(2 * L * 4)
            if len(payload) != 2 * L * 4:
                raise FormatError(f"{path}: truncated sample payload")
            X = np.frombuffer(payload, dtype="<f4").reshape(L, 2).copy()
            samples.append(PairSample(X=X, label=label, i=i, j=j, m=m))
    return samples
