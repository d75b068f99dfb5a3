"""Shared fixtures: hand-built netlists and small configurations."""
import numpy as np
import pytest

from causalforge.netlist import Netlist, Transistor, Wire, chain_netlist
from causalforge.sim import SimConfig


@pytest.fixture
def chain5() -> Netlist:
    return chain_netlist(5)


@pytest.fixture
def small_cfg() -> SimConfig:
    return SimConfig(k=30, l=4, M=2)


@pytest.fixture
def ring3() -> Netlist:
    """Three-inverter ring oscillator: a combinational loop with no fixpoint.

    Wire r_i is pulled up and pulled low by transistor i, whose gate is the
    previous ring wire, so the loop has odd inversion parity and oscillates.
    The clock is left disconnected from the ring.
    """
    vcc, gnd, clock = 0, 1, 2
    r = [3, 4, 5]
    wires = [Wire(vcc, "vcc"), Wire(gnd, "gnd"), Wire(clock, "clock")]
    wires += [Wire(w, f"r{w}", pullup=True) for w in r]
    transistors = [
        Transistor(id=i, gate=r[(i - 1) % 3], c1=r[i], c2=gnd)
        for i in range(3)
    ]
    return Netlist(wires=tuple(wires), transistors=tuple(transistors),
                   vcc=vcc, gnd=gnd, clock=clock)


def chain_reachability(n: int) -> np.ndarray:
    """Independent reachability oracle for the chain fixture.

    In the chain, transistor i drives the gate of transistor i+1 and a
    mid-period perturbation propagates the whole way down within one
    half-clock, so i causes every j > i.
    """
    adj = np.zeros((n, n), dtype=np.uint8)
    frontier = [[] for _ in range(n)]
    for i in range(n - 1):
        frontier[i].append(i + 1)       # direct gate fanout
    for i in range(n):
        seen = set()
        queue = list(frontier[i])
        while queue:
            j = queue.pop()
            if j in seen:
                continue
            seen.add(j)
            queue.extend(frontier[j])
        for j in seen:
            adj[i, j] = 1
    return adj
