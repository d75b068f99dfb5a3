"""Switch-level simulator: config, wire resolution, stepping, recording IO."""
import numpy as np
import pytest

from causalforge.errors import ConfigError, FormatError, ValidationError
from causalforge.netlist import Netlist, Transistor, Wire, chain_netlist
from causalforge.sim import (SimConfig, SimState, _FastSim, initial_state,
                             read_recording, resolve_wire_group, run_period,
                             simulate_periods, step_half_clock,
                             warmed_up_state, write_recording)


class TestSimConfig:
    @pytest.mark.parametrize("kwargs", [
        {"k": 0}, {"l": 1}, {"l": 3}, {"M": 0},
        {"k": 30, "max_fixpoint_iters": 10},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            SimConfig(**kwargs)

    def test_defaults(self):
        cfg = SimConfig()
        assert (cfg.k, cfg.l, cfg.M) == (30, 128, 20)


class TestResolveWireGroup:
    def _net(self):
        # w3 -pass(t0, gate=clock)- vcc; w4 floating; w5 pulled down via group
        wires = (Wire(0, "vcc"), Wire(1, "gnd"), Wire(2, "clock"),
                 Wire(3, "a"), Wire(4, "float"), Wire(5, "b", pulldown=True),
                 Wire(6, "c"))
        ts = (Transistor(0, 2, 3, 0),    # clock-gated pass to vcc
              Transistor(1, 2, 5, 6))    # connects b (pulldown) and c
        return Netlist(wires=wires, transistors=ts, vcc=0, gnd=1, clock=2)

    def test_rail_short_resolves_low(self):
        # A group seeing both rails takes gnd precedence.
        wires = (Wire(0, "vcc"), Wire(1, "gnd"), Wire(2, "clock"),
                 Wire(3, "x"))
        ts = (Transistor(0, 2, 3, 0), Transistor(1, 2, 3, 1))
        net = Netlist(wires=wires, transistors=ts, vcc=0, gnd=1, clock=2)
        state = initial_state(net)
        state.wire_values[2] = True
        state.transistor_states[:] = True
        assert resolve_wire_group(state, net, 3) is False

    def test_charge_retention(self):
        net = self._net()
        state = initial_state(net)
        state.wire_values[4] = True          # floating, previously high
        assert resolve_wire_group(state, net, 4) is True
        state.wire_values[4] = False
        assert resolve_wire_group(state, net, 4) is False

    def test_vcc_through_on_transistor(self):
        net = self._net()
        state = initial_state(net)
        state.transistor_states[0] = True
        assert resolve_wire_group(state, net, 3) is True

    def test_pulldown_wins_in_group(self):
        net = self._net()
        state = initial_state(net)
        state.wire_values[6] = True
        state.transistor_states[1] = True
        assert resolve_wire_group(state, net, 6) is False

    def test_group_members_agree(self):
        net = self._net()
        state = initial_state(net)
        state.transistor_states[1] = True
        assert (resolve_wire_group(state, net, 5)
                == resolve_wire_group(state, net, 6))

    def test_unknown_wire_rejected(self):
        net = self._net()
        with pytest.raises(ValidationError):
            resolve_wire_group(initial_state(net), net, 99)


class TestStepHalfClock:
    def test_exactly_k_snapshots(self, chain5):
        cfg = SimConfig(k=30, l=4, M=1)
        state = warmed_up_state(chain5, cfg)
        seg = step_half_clock(state, chain5, cfg)
        assert seg.shape == (30, 5)

    def test_padding_repeats_last_snapshot(self, chain5):
        # The 5-chain settles in far fewer than 30 sweeps; the tail of the
        # segment must repeat the settled snapshot.
        cfg = SimConfig(k=30, l=4, M=1)
        state = warmed_up_state(chain5, cfg)
        seg = step_half_clock(state, chain5, cfg)
        for step in range(10, 30):
            assert np.array_equal(seg[step], seg[9])

    def test_stable_circuit_identical_snapshots(self):
        # Clock disconnected: one transistor whose gate is tied to vcc.
        wires = (Wire(0, "vcc"), Wire(1, "gnd"), Wire(2, "clock"),
                 Wire(3, "out", pullup=True))
        ts = (Transistor(0, 0, 3, 1),)
        net = Netlist(wires=wires, transistors=ts, vcc=0, gnd=1, clock=2)
        cfg = SimConfig(k=30, l=2, M=1)
        state = warmed_up_state(net, cfg)
        seg = step_half_clock(state, net, cfg)
        assert np.all(seg == seg[0])

    def test_ring_oscillator_truncates_with_warning(self, ring3):
        cfg = SimConfig(k=8, l=2, M=1, max_fixpoint_iters=20)
        state = initial_state(ring3)
        warnings: list[str] = []
        seg = step_half_clock(state, ring3, cfg, warnings=warnings)
        assert seg.shape == (8, 3)
        assert warnings and "no fixpoint" in warnings[0]
        # The loop keeps toggling: consecutive snapshots are never all equal.
        changes = sum(not np.array_equal(seg[s], seg[s + 1]) for s in range(7))
        assert changes > 0

    def test_state_left_at_fixpoint(self, chain5):
        cfg = SimConfig(k=30, l=4, M=1)
        sim = _FastSim(chain5)
        state = warmed_up_state(chain5, cfg, sim=sim)
        step_half_clock(state, chain5, cfg, sim=sim)
        wires, trans = sim.state_vectors(state)
        resolved = sim.sweep(wires, trans, wires[sim.clock])
        assert np.array_equal(resolved, wires)


class TestRunPeriod:
    def test_row_length_paper_scale(self, chain5):
        cfg = SimConfig(k=30, l=128, M=1)
        rec, _, _ = run_period(chain5, warmed_up_state(chain5, cfg), cfg, m=0)
        assert rec.data.shape == (5, 3840)

    def test_row_length_minimal(self, chain5):
        cfg = SimConfig(k=30, l=2, M=1)
        rec, _, _ = run_period(chain5, warmed_up_state(chain5, cfg), cfg, m=0)
        assert rec.data.shape == (5, 60)

    def test_values_are_binary(self, chain5, small_cfg):
        rec, _, _ = run_period(chain5, warmed_up_state(chain5, small_cfg),
                               small_cfg, m=0)
        assert set(np.unique(rec.data)) <= {0.0, 1.0}

    def test_chaining_equals_single_long_run(self, chain5):
        cfg = SimConfig(k=30, l=4, M=1)
        cfg2 = SimConfig(k=30, l=8, M=1)
        init = warmed_up_state(chain5, cfg)
        rec_a, state, _ = run_period(chain5, init, cfg, m=0)
        rec_b, _, _ = run_period(chain5, state, cfg, m=1)
        chained = np.concatenate([rec_a.data, rec_b.data], axis=1)
        rec_long, _, _ = run_period(chain5, init, cfg2, m=0)
        assert np.array_equal(chained, rec_long.data)

    def test_onset_capture_matches_prefix(self, chain5, small_cfg):
        init = warmed_up_state(chain5, small_cfg)
        _, _, captured = run_period(chain5, init, small_cfg, m=0,
                                    onset_capture=2)
        # Re-running two half-clocks by hand reaches the captured state.
        state = init.copy()
        step_half_clock(state, chain5, small_cfg)
        step_half_clock(state, chain5, small_cfg)
        assert state.wire_values == captured.wire_values
        assert np.array_equal(state.transistor_states,
                              captured.transistor_states)


class TestSimulatePeriods:
    def test_period_count_and_indices(self, chain5, small_cfg):
        recs = simulate_periods(chain5, small_cfg)
        assert [r.m for r in recs] == [0, 1]

    def test_determinism(self):
        from causalforge.netlist import gen_synthetic_netlist
        net = gen_synthetic_netlist(24, seed=5)
        cfg = SimConfig(k=10, l=4, M=3)
        a = simulate_periods(net, cfg)
        b = simulate_periods(net, cfg)
        for ra, rb in zip(a, b):
            assert ra.data.tobytes() == rb.data.tobytes()


class TestRecordingIO:
    def test_round_trip(self, chain5, small_cfg, tmp_path):
        rec, _, _ = run_period(chain5, warmed_up_state(chain5, small_cfg),
                               small_cfg, m=3)
        p = tmp_path / "rec.cfrc"
        write_recording(rec, p, k=small_cfg.k, l=small_cfg.l)
        again, sidecar = read_recording(p)
        assert np.array_equal(again.data, rec.data)
        assert again.element_ids == rec.element_ids
        assert again.m == 3
        assert sidecar["k"] == small_cfg.k and sidecar["l"] == small_cfg.l

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.cfrc"
        p.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError):
            read_recording(p)

    def test_truncated_payload_rejected(self, chain5, small_cfg, tmp_path):
        rec, _, _ = run_period(chain5, warmed_up_state(chain5, small_cfg),
                               small_cfg, m=0)
        p = tmp_path / "rec.cfrc"
        write_recording(rec, p, k=small_cfg.k, l=small_cfg.l)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(FormatError):
            read_recording(p)
