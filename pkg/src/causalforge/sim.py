"""Switch-level simulation with half-clock stepping and update-step recording.

One update step is a synchronous sweep: every wire is re-resolved from the
previous snapshot's transistor states, then transistor states are recomputed
from the new wire levels.  A half-clock toggles the clock and iterates update
steps to a fixpoint, recording exactly k transistor-state snapshots
(padded with the last state or truncated).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError
from .netlist import Netlist

HIGH = True
LOW = False

RECORDING_MAGIC = b"CFRC"
RECORDING_VERSION = 1


@dataclass
class SimConfig:
    k: int = 30                 # update steps recorded per half-clock
    l: int = 128                # half-clocks per period
    M: int = 20                 # number of periods
    max_fixpoint_iters: int = 100

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.l < 2 or self.l % 2 != 0:
            raise ConfigError("l must be even and >= 2")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.max_fixpoint_iters < self.k:
            raise ConfigError("max_fixpoint_iters must be >= k")


@dataclass
class SimState:
    """Mutable machine state; exclusively owned by one execution context."""
    wire_values: dict[int, bool]
    transistor_states: np.ndarray   # bool per transistor
    half_clock_index: int = 0

    def copy(self) -> "SimState":
        return SimState(dict(self.wire_values), self.transistor_states.copy(),
                        self.half_clock_index)


@dataclass
class StateRecording:
    """Element-major matrix of 0.0/1.0 transistor states, one row per element."""
    m: int
    data: np.ndarray            # float32, shape (N, l*k)
    element_ids: list[int]
    warnings: list[str] = field(default_factory=list)


def initial_state(net: Netlist) -> SimState:
    wires = {w.id: LOW for w in net.wires}
    wires[net.vcc] = HIGH
    states = np.zeros(net.n_transistors, dtype=bool)
    return SimState(wires, states, 0)


def _group_of(state: SimState, net: Netlist, seed_wire: int,
              on: np.ndarray) -> tuple[set[int], bool, bool]:
    """Connected component through ON channels; rails flag but stop traversal."""
    rails = (net.vcc, net.gnd)
    sees_vcc = seed_wire == net.vcc
    sees_gnd = seed_wire == net.gnd
    group = {seed_wire}
    frontier = [seed_wire]
    while frontier:
        w = frontier.pop()
        for t in net.transistors:
            if not on[t.id]:
                continue
            if t.c1 == w or t.c2 == w:
                other = t.c2 if t.c1 == w else t.c1
                if other == net.vcc:
                    sees_vcc = True
                elif other == net.gnd:
                    sees_gnd = True
                elif other not in group:
                    group.add(other)
                    frontier.append(other)
    if seed_wire in rails:
        return group, sees_vcc, sees_gnd
    return group, sees_vcc, sees_gnd


def resolve_wire_group(state: SimState, net: Netlist, seed_wire: int) -> bool:
    """Resolve one wire's level by group precedence gnd > vcc > pulldown > pullup > retain."""
    if seed_wire not in state.wire_values:
        raise ValidationError(f"unknown wire {seed_wire}")
    if seed_wire == net.vcc:
        return HIGH
    if seed_wire == net.gnd:
        return LOW
    group, sees_vcc, sees_gnd = _group_of(state, net, seed_wire,
                                          state.transistor_states)
    if sees_gnd:
        return LOW
    if sees_vcc:
        return HIGH
    if any(net.wire_index[w].pulldown for w in group):
        return LOW
    if any(net.wire_index[w].pullup for w in group):
        return HIGH
    return state.wire_values[seed_wire]   # charge retention


class _FastSim:
    """Vectorized sweep over all wires; one instance per (netlist) topology."""

    def __init__(self, net: Netlist):
        self.net = net
        ids = sorted(net.wire_index)
        self.wid_to_row = {wid: i for i, wid in enumerate(ids)}
        self.row_to_wid = ids
        n_w = len(ids)
        self.pullup = np.zeros(n_w, dtype=bool)
        self.pulldown = np.zeros(n_w, dtype=bool)
        for w in net.wires:
            self.pullup[self.wid_to_row[w.id]] = w.pullup
            self.pulldown[self.wid_to_row[w.id]] = w.pulldown
        self.vcc = self.wid_to_row[net.vcc]
        self.gnd = self.wid_to_row[net.gnd]
        self.clock = self.wid_to_row[net.clock]
        self.gate = np.array([self.wid_to_row[t.gate] for t in net.transistors],
                             dtype=np.int64)
        self.c1 = np.array([self.wid_to_row[t.c1] for t in net.transistors],
                           dtype=np.int64)
        self.c2 = np.array([self.wid_to_row[t.c2] for t in net.transistors],
                           dtype=np.int64)

    def state_vectors(self, state: SimState) -> tuple[np.ndarray, np.ndarray]:
        wires = np.zeros(len(self.row_to_wid), dtype=bool)
        for wid, v in state.wire_values.items():
            wires[self.wid_to_row[wid]] = v
        return wires, state.transistor_states.copy()

    def write_back(self, state: SimState, wires: np.ndarray,
                   trans: np.ndarray) -> None:
        for wid in state.wire_values:
            state.wire_values[wid] = bool(wires[self.wid_to_row[wid]])
        state.transistor_states = trans.copy()

    def sweep(self, wires: np.ndarray, trans: np.ndarray,
              clock_level: bool) -> np.ndarray:
        """One synchronous update step: resolve every wire from (wires, trans)."""
        n_w = wires.shape[0]
        # Union-find over non-rail wires connected by ON channels.
        parent = np.arange(n_w)

        def find(a: int) -> int:
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        rails = (self.vcc, self.gnd)
        sees_vcc = np.zeros(n_w, dtype=bool)
        sees_gnd = np.zeros(n_w, dtype=bool)
        on_idx = np.nonzero(trans)[0]
        rail_edges = []
        for t in on_idx:
            a, b = self.c1[t], self.c2[t]
            if a in rails or b in rails:
                rail_edges.append((a, b))
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
        for a, b in rail_edges:
            if a in rails and b in rails:
                continue
            non_rail = b if a in rails else a
            rail = a if a in rails else b
            root = find(non_rail)
            if rail == self.gnd:
                sees_gnd[root] = True
            else:
                sees_vcc[root] = True

        roots = np.fromiter((find(i) for i in range(n_w)), dtype=np.int64,
                            count=n_w)
        has_pd = np.zeros(n_w, dtype=bool)
        has_pu = np.zeros(n_w, dtype=bool)
        np.logical_or.at(has_pd, roots, self.pulldown)
        np.logical_or.at(has_pu, roots, self.pullup)

        new = wires.copy()
        g_gnd = sees_gnd[roots]
        g_vcc = sees_vcc[roots] & ~g_gnd
        g_pd = has_pd[roots] & ~g_gnd & ~g_vcc
        g_pu = has_pu[roots] & ~g_gnd & ~g_vcc & ~g_pd
        new[g_gnd] = False
        new[g_vcc] = True
        new[g_pd] = False
        new[g_pu] = True
        # Wires with none of the above retain their previous value (new=copy).
        new[self.vcc] = True
        new[self.gnd] = False
        new[self.clock] = clock_level
        return new

    def transistor_update(self, wires: np.ndarray,
                          force: tuple[int, str] | None) -> np.ndarray:
        trans = wires[self.gate].copy()
        if force is not None:
            idx, mode = force
            if mode == "force-high":
                trans[idx] = True
            elif mode == "force-low":
                trans[idx] = False
            elif mode == "invert":
                trans[idx] = ~trans[idx]
            else:
                raise ConfigError(f"unknown perturbation value {mode!r}")
        return trans


def step_half_clock(state: SimState, net: Netlist, cfg: SimConfig,
                    sim: _FastSim | None = None,
                    force: tuple[int, str] | None = None,
                    warnings: list[str] | None = None) -> np.ndarray:
    """Advance one half-clock; return exactly k transistor-state snapshots.

    Toggles the clock, then iterates synchronous sweeps until no wire
    changes or max_fixpoint_iters is hit.  The first k snapshots are
    recorded; settling in fewer than k steps pads with the last snapshot.
    The state is left at the true fixpoint even when snapshots truncate.
    """
    if sim is None:
        sim = _FastSim(net)
    wires, trans = sim.state_vectors(state)
    clock_level = not wires[sim.clock]
    wires[sim.clock] = clock_level
    trans = sim.transistor_update(wires, force)

    snaps = np.zeros((cfg.k, net.n_transistors), dtype=np.float32)
    n_rec = 0
    converged = False
    for _ in range(cfg.max_fixpoint_iters):
        new_wires = sim.sweep(wires, trans, clock_level)
        trans = sim.transistor_update(new_wires, force)
        changed = not np.array_equal(new_wires, wires)
        wires = new_wires
        if n_rec < cfg.k:
            snaps[n_rec] = trans
            n_rec += 1
        if not changed:
            converged = True
            break
    if not converged and warnings is not None:
        warnings.append(
            f"half-clock {state.half_clock_index}: no fixpoint within "
            f"{cfg.max_fixpoint_iters} update steps")
    if n_rec < cfg.k:
        snaps[n_rec:] = snaps[n_rec - 1]
    sim.write_back(state, wires, trans)
    state.half_clock_index += 1
    return snaps


def run_period(net: Netlist, init: SimState, cfg: SimConfig, m: int,
               sim: _FastSim | None = None,
               onset_capture: int | None = None,
               ) -> tuple[StateRecording, SimState, SimState | None]:
    """Run l half-clocks from init; return the recording and the final state.

    When onset_capture is given, a deep copy of the state just before that
    half-clock index is returned as well (used by perturbation sweeps).
    """
    if sim is None:
        sim = _FastSim(net)
    state = init.copy()
    warnings: list[str] = []
    rows = np.zeros((net.n_transistors, cfg.l * cfg.k), dtype=np.float32)
    captured = None
    for h in range(cfg.l):
        if onset_capture is not None and h == onset_capture:
            captured = state.copy()
        seg = step_half_clock(state, net, cfg, sim=sim, warnings=warnings)
        rows[:, h * cfg.k:(h + 1) * cfg.k] = seg.T
    rec = StateRecording(m=m, data=rows,
                         element_ids=list(range(net.n_transistors)),
                         warnings=warnings)
    return rec, state, captured


def warmed_up_state(net: Netlist, cfg: SimConfig,
                    sim: _FastSim | None = None) -> SimState:
    """All wires low, then one unrecorded settle period before period 0."""
    if sim is None:
        sim = _FastSim(net)
    state = initial_state(net)
    _, state, _ = run_period(net, state, cfg, m=-1, sim=sim)
    state.half_clock_index = 0
    return state


def simulate_periods(net: Netlist, cfg: SimConfig) -> list[StateRecording]:
    """Warm up, then record cfg.M chained periods."""
    sim = _FastSim(net)
    state = warmed_up_state(net, cfg, sim=sim)
    recs = []
    for m in range(cfg.M):
        rec, state, _ = run_period(net, state, cfg, m, sim=sim)
        recs.append(rec)
    return recs


def write_recording(rec: StateRecording, path: str | Path, k: int, l: int) -> None:
    """Binary container: 16-byte header then row-major f32, plus JSON sidecar."""
    path = Path(path)
    n, row_len = rec.data.shape
    header = RECORDING_MAGIC + struct.pack("<HIIH", RECORDING_VERSION, n,
                                           row_len, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.data.astype("<f4").tobytes())
    sidecar = {"element_ids": rec.element_ids, "k": k, "l": l, "m": rec.m,
               "warnings": rec.warnings}
    with open(path.with_suffix(path.suffix + ".json"), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh)


def read_recording(path: str | Path) -> tuple[StateRecording, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != RECORDING_MAGIC:
            raise FormatError(f"{path}: not a recording container")
        version, n, row_len, _ = struct.unpack("<HIIH", header[4:16])
        if version != RECORDING_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(n * row_len * 4)
        if len(payload) != n * row_len * 4:
            raise FormatError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f4").reshape(n, row_len).copy()
    with open(path.with_suffix(path.suffix + ".json"), "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    rec = StateRecording(m=sidecar["m"], data=data,
                         element_ids=sidecar["element_ids"],
                         warnings=sidecar.get("warnings", []))
    return rec, sidecar
