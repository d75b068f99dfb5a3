"""Single-element perturbation sweeps: temporal causal effects and adjacency.

For each period the circuit is run normally, then every transistor is
forced (inverted by default) at the period midpoint for `hold` half-clocks
from a copy of the regular fixpoint state.  The mean absolute difference
between perturbed and regular trajectories over a one-half-clock window
gives the temporal causal effect; a strictly positive effect marks a
causal edge.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .netlist import Netlist
from .sim import (SimConfig, SimState, StateRecording, _FastSim,
                  run_period, step_half_clock, warmed_up_state)

GROUND_TRUTH_MAGIC = b"CFGT"
GROUND_TRUTH_VERSION = 1


@dataclass
class PerturbSpec:
    value: str = "invert"       # force-high | force-low | invert
    onset: int | None = None    # half-clock index; default l//2
    hold: int = 1               # half-clocks the forcing persists
    window: int = 1             # measurement length in half-clocks

    def resolved_onset(self, cfg: SimConfig) -> int:
        onset = cfg.l // 2 if self.onset is None else self.onset
        if self.hold < 1:
            raise ValidationError("hold must be >= 1")
        if onset + self.window > cfg.l:
            raise ValidationError("onset + window must fit inside the period")
        return onset


@dataclass
class CausalGroundTruth:
    m: int
    tce: np.ndarray             # (N, N) non-negative float32
    adjacency: np.ndarray       # (N, N) uint8, 1 iff tce > 0
    element_ids: list[int]
    warnings: list[str] = field(default_factory=list)


def compute_tce(x_pert: np.ndarray, x_base: np.ndarray) -> float:
    """Mean absolute difference between perturbed and base trajectories."""
    x_pert = np.asarray(x_pert, dtype=np.float64)
    x_base = np.asarray(x_base, dtype=np.float64)
    if x_pert.shape != x_base.shape or x_pert.size == 0:
        raise ValidationError("trajectories must be non-empty and equal length")
    return float(np.mean(np.abs(x_pert - x_base)))


def binarize_tce(tce: float, epsilon: float = 0.0) -> int:
    """1 iff tce exceeds epsilon (strictly above zero for binary data)."""
    if tce < 0:
        raise ValidationError("tce must be non-negative")
    return int(tce > epsilon)


def perturbed_segment(net: Netlist, base_state_at_onset: SimState,
                      element: int, spec: PerturbSpec, cfg: SimConfig,
                      sim: _FastSim | None = None,
                      warnings: list[str] | None = None) -> np.ndarray:
    """Run `window` half-clocks from the onset state with element forced.

    Returns all elements' states, shape (N, window*k).  The forcing is
    applied at every fixpoint sub-iteration during the first `hold`
    half-clocks.
    """
    if not 0 <= element < net.n_transistors:
        raise ValidationError(f"unknown element id {element}")
    if sim is None:
        sim = _FastSim(net)
    state = base_state_at_onset.copy()
    out = np.zeros((net.n_transistors, spec.window * cfg.k), dtype=np.float32)
    for h in range(spec.window):
        force = (element, spec.value) if h < spec.hold else None
        seg = step_half_clock(state, net, cfg, sim=sim, force=force,
                              warnings=warnings)
        out[:, h * cfg.k:(h + 1) * cfg.k] = seg.T
    return out


def ground_truth_sweep(net: Netlist, cfg: SimConfig,
                       spec: PerturbSpec | None = None,
                       epsilon: float = 0.0,
                       ) -> list[tuple[StateRecording, CausalGroundTruth]]:
    """Algorithmic core: per period, perturb every element at the midpoint.

    The regular recording of each period is produced once and reused for
    every perturbation; each perturbation runs from a fresh copy of the
    pre-onset fixpoint, so sweep cells are independent.
    """
    spec = spec or PerturbSpec()
    sim = _FastSim(net)
    n = net.n_transistors
    state = warmed_up_state(net, cfg, sim=sim)
    results = []
    for m in range(cfg.M):
        onset = spec.resolved_onset(cfg)
        rec, state, pre_onset = run_period(net, state, cfg, m, sim=sim,
                                           onset_capture=onset)
        base = rec.data[:, onset * cfg.k:(onset + spec.window) * cfg.k]
        tce = np.zeros((n, n), dtype=np.float32)
        warnings: list[str] = []
        for i in range(n):
            pert = perturbed_segment(net, pre_onset, i, spec, cfg, sim=sim,
                                     warnings=warnings)
            tce[i] = np.mean(np.abs(pert - base), axis=1)
        adjacency = (tce > epsilon).astype(np.uint8)
        gt = CausalGroundTruth(m=m, tce=tce, adjacency=adjacency,
                               element_ids=list(range(n)), warnings=warnings)
        results.append((rec, gt))
    return results


def dedup_unique(recording: StateRecording) -> list[int]:
    """Keep the lowest-id representative of each group of identical rows."""
    if recording.data.shape[0] == 0:
        raise ValidationError("recording is empty")
    seen: dict[bytes, int] = {}
    kept = []
    for row_idx, eid in enumerate(recording.element_ids):
        key = recording.data[row_idx].tobytes()
        if key not in seen:
            seen[key] = eid
            kept.append(eid)
    return kept


def write_ground_truth(gt: CausalGroundTruth, path: str | Path) -> None:
    """Container: header, f32 TCE matrix, u8 adjacency, JSON sidecar."""
    path = Path(path)
    n = gt.tce.shape[0]
    header = GROUND_TRUTH_MAGIC + struct.pack("<HIIH", GROUND_TRUTH_VERSION,
                                              n, n, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(gt.tce.astype("<f4").tobytes())
        fh.write(gt.adjacency.astype(np.uint8).tobytes())
    sidecar = {"m": gt.m, "element_ids": gt.element_ids,
               "warnings": gt.warnings}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)


def read_ground_truth(path: str | Path) -> CausalGroundTruth:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != GROUND_TRUTH_MAGIC:
            raise FormatError(f"{path}: not a ground-truth container")
        version, n, n2, _ = struct.unpack("<HIIH", header[4:16])
        if version != GROUND_TRUTH_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        tce_bytes = fh.read(n * n2 * 4)
        adj_bytes = fh.read(n * n2)
        if len(tce_bytes) != n * n2 * 4 or len(adj_bytes) != n * n2:
            raise FormatError(f"{path}: truncated payload")
    tce = np.frombuffer(tce_bytes, dtype="<f4").reshape(n, n2).copy()
    adjacency = np.frombuffer(adj_bytes, dtype=np.uint8).reshape(n, n2).copy()
    with open(path.with_suffix(path.suffix + ".json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    return CausalGroundTruth(m=sidecar["m"], tce=tce, adjacency=adjacency,
                             element_ids=sidecar["element_ids"],
                             warnings=sidecar.get("warnings", []))
