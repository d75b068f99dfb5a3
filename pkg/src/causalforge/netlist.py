"""Transistor netlists: schema, validation, file IO and synthetic generation.

A netlist is the undirected description of a switch-level circuit: wires
(with optional pullup/pulldown defaults), transistors (gate, c1, c2) and
the three distinguished wires vcc, gnd and clock.  It carries no causal
direction by itself; direction comes from perturbation experiments.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Wire:
    id: int
    name: str
    pullup: bool = False
    pulldown: bool = False


@dataclass(frozen=True)
class Transistor:
    id: int
    gate: int
    c1: int
    c2: int


@dataclass(frozen=True)
class Netlist:
    wires: tuple[Wire, ...]
    transistors: tuple[Transistor, ...]
    vcc: int
    gnd: int
    clock: int
    wire_index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "wire_index", {w.id: w for w in self.wires})

    @property
    def n_transistors(self) -> int:
        return len(self.transistors)

    @property
    def n_wires(self) -> int:
        return len(self.wires)


def validate_netlist(net: Netlist) -> None:
    """Raise ValidationError if any structural invariant is broken."""
    ids = {w.id for w in net.wires}
    if len(ids) != len(net.wires):
        raise ValidationError("duplicate wire ids")
    for special, name in ((net.vcc, "vcc"), (net.gnd, "gnd"), (net.clock, "clock")):
        if special not in ids:
            raise ValidationError(f"{name} wire {special} not defined")
    if net.vcc == net.gnd:
        raise ValidationError("vcc and gnd must be distinct wires")
    for w in net.wires:
        if w.pullup and w.pulldown:
            raise ValidationError(f"wire {w.id} is both pullup and pulldown")
    seen = set()
    for t in net.transistors:
        if t.id in seen:
            raise ValidationError(f"duplicate transistor id {t.id}")
        seen.add(t.id)
        for wid in (t.gate, t.c1, t.c2):
            if wid not in ids:
                raise ValidationError(f"transistor {t.id} references undefined wire {wid}")
    if seen != set(range(len(net.transistors))):
        raise ValidationError("transistor ids must be dense 0..N-1")


def load_netlist(path: str | Path) -> Netlist:
    """Load and validate a netlist from its JSON file format."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed netlist file {path}: {exc}") from exc
    try:
        wires = tuple(
            Wire(id=int(w["id"]), name=str(w["name"]),
                 pullup=bool(w["pullup"]), pulldown=bool(w["pulldown"]))
            for w in raw["wires"]
        )
        transistors = tuple(
            Transistor(id=int(t["id"]), gate=int(t["gate"]),
                       c1=int(t["c1"]), c2=int(t["c2"]))
            for t in raw["transistors"]
        )
        net = Netlist(wires=wires, transistors=transistors,
                      vcc=int(raw["vcc"]), gnd=int(raw["gnd"]), clock=int(raw["clock"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed netlist file {path}: {exc}") from exc
    validate_netlist(net)
    return net


def save_netlist(net: Netlist, path: str | Path) -> None:
    doc = {
        "wires": [
            {"id": w.id, "name": w.name, "pullup": w.pullup, "pulldown": w.pulldown}
            for w in net.wires
        ],
        "transistors": [
            {"id": t.id, "gate": t.gate, "c1": t.c1, "c2": t.c2}
            for t in net.transistors
        ],
        "vcc": net.vcc,
        "gnd": net.gnd,
        "clock": net.clock,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def gen_synthetic_netlist(n_transistors: int, fanout_mean: float = 1.5,
                          seed: int = 0) -> Netlist:
    """Generate a random NMOS-style circuit with multi-timescale dynamics.

    The circuit is a linear-feedback shift register built from two-phase
    master-slave latches (exploiting charge retention on floating nodes)
    followed by random NOR logic whose gates draw from the clock, the
    register taps and earlier logic outputs.  The maximal-length LFSR
    cycle makes every recorded period a different bit pattern, and the
    latch boundaries keep single-half-clock causal cascades short, so the
    ground-truth graph stays sparse.  All activity traces back to the
    clock.  Deterministic per seed; transistor ids are randomly permuted
    so functional roles are spread across the id range.
    """
    if n_transistors < 2:
        raise ValidationError("n_transistors must be >= 2")
    if fanout_mean <= 0:
        raise ValidationError("fanout_mean must be positive")
    rng = np.random.default_rng(seed)

    vcc, gnd, clock = 0, 1, 2
    wires = [Wire(vcc, "vcc"), Wire(gnd, "gnd"), Wire(clock, "clock")]
    next_wire = 3

    def new_wire(name: str, pullup: bool = True) -> int:
        nonlocal next_wire
        wires.append(Wire(next_wire, name, pullup=pullup))
        next_wire += 1
        return next_wire - 1

    # (gate, channel, other channel end) triples; ids assigned at the end.
    fets: list[tuple[int, int, int]] = []

    def inverter(src: int, name: str) -> int:
        out = new_wire(name)
        fets.append((src, out, gnd))
        return out

    def nor2(a: int, b: int, name: str) -> int:
        out = new_wire(name)
        fets.append((a, out, gnd))
        fets.append((b, out, gnd))
        return out

    # LFSR: 4 transistors per master-slave bit, 8 for the XOR feedback
    # and 1 for the clock inverter.  Maximal-length taps per register size.
    lfsr_taps = {2: 0, 3: 1, 4: 2, 5: 2, 6: 4, 7: 5}
    n_bits = max(0, min(7, (n_transistors - 24) // 5))
    counter_bits: list[int] = []
    if n_bits >= 2:
        nclk = inverter(clock, "nclk")
        d = clock                                        # patched to xnor below
        for s in range(n_bits):
            hold_m = new_wire(f"b{s}_m", pullup=False)   # retention node
            fets.append((clock, hold_m, d))              # master: clock high
            mb = inverter(hold_m, f"b{s}_mb")
            hold_s = new_wire(f"b{s}_s", pullup=False)
            fets.append((nclk, hold_s, mb))              # slave: clock low
            q = inverter(hold_s, f"b{s}_q")
            counter_bits.append(q)
            d = q
        a, b = counter_bits[n_bits - 1], counter_bits[lfsr_taps[n_bits]]
        na = inverter(a, "fb_na")
        nb = inverter(b, "fb_nb")
        xr = nor2(nor2(a, b, "fb_n1"), nor2(na, nb, "fb_n2"), "fb_xor")
        # Floating holds read as 0, so the register starts all-ones and
        # XOR feedback never hits its all-zero lockup state.
        fets[1] = (clock, fets[1][1], xr)                # bit 0 master input

    # Random NOR logic over {counter bits, earlier logic outputs}.  Chain
    # depth is capped so single-half-clock cascades stay sparse.  A
    # transistor's recorded state equals its gate wire's value, so gates
    # are spread over unused wires first to keep trajectories distinct.
    max_depth = 5
    logic_outputs: list[int] = []
    depth: dict[int, int] = {}
    n_logic = n_transistors - len(fets)
    shared: list[int] = []
    used_gates: set[int] = set()

    def pick(cands: list[int]) -> int:
        fresh = [w for w in cands if w not in used_gates]
        pool = fresh if fresh else cands
        return pool[int(rng.integers(len(pool)))]

    for t in range(n_logic):
        shallow = [w for w in logic_outputs if depth[w] < max_depth]
        if shared and rng.random() < 0.45:
            out = shared.pop()                           # second NOR input
            # Wire ids grow in creation order, so any signal older than
            # the reused output keeps the fabric combinationally acyclic.
            cands = [w for w in counter_bits + shallow if w < out]
            gate = pick(cands) if cands else clock
        else:
            if not counter_bits and not shallow:
                gate = clock
            elif shallow and rng.random() < 0.6:
                back = min(len(shallow),
                           max(1, int(rng.exponential(fanout_mean)) + 1))
                gate = shallow[-back]
                if gate in used_gates:
                    gate = pick(shallow)
            elif counter_bits:
                gate = pick(counter_bits)
            else:
                gate = pick(shallow)
            out = new_wire(f"l{t}")
            if rng.random() < 0.5:
                shared.append(out)
        used_gates.add(gate)
        fets.append((gate, out, gnd))
        depth[out] = max(depth.get(out, 0), depth.get(gate, 0) + 1)
        logic_outputs.append(out)

    perm = rng.permutation(n_transistors)
    transistors = [None] * n_transistors
    for pos, (gate, c1, c2) in enumerate(fets):
        tid = int(perm[pos])
        transistors[tid] = Transistor(id=tid, gate=gate, c1=c1, c2=c2)

    net = Netlist(wires=tuple(wires), transistors=tuple(transistors),
                  vcc=vcc, gnd=gnd, clock=clock)
    validate_netlist(net)
    return net


def chain_netlist(n: int = 5) -> Netlist:
    """Inverter chain fixture: transistor i drives the gate of transistor i+1.

    The head gate is the clock, every output wire is pulled up and pulled
    low through its transistor, so a perturbation of transistor i flips
    all downstream transistors within one half-clock.
    """
    vcc, gnd, clock = 0, 1, 2
    wires = [Wire(vcc, "vcc"), Wire(gnd, "gnd"), Wire(clock, "clock")]
    transistors = []
    prev_out = clock
    for i in range(n):
        out = 3 + i
        wires.append(Wire(out, f"n{out}", pullup=True))
        transistors.append(Transistor(id=i, gate=prev_out, c1=out, c2=gnd))
        prev_out = out
    net = Netlist(wires=tuple(wires), transistors=tuple(transistors),
                  vcc=vcc, gnd=gnd, clock=clock)
    validate_netlist(net)
    return net
