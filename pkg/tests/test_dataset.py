"""Pair datasets: splits, undersampling, noise, surrogate generator, IO."""
import math

import numpy as np
import pytest

from causalforge.dataset import (NoiseSpec, PairSample, SplitPlan, add_noise,
                                 build_split, gen_linear_network, make_pairs,
                                 read_dataset, undersample_negatives,
                                 write_dataset)
from causalforge.errors import FormatError, ValidationError
from causalforge.netlist import chain_netlist, gen_synthetic_netlist
from causalforge.perturb import dedup_unique, ground_truth_sweep
from causalforge.sim import SimConfig, StateRecording


def _sample(label, i=0, j=1, m=0, L=4):
    return PairSample(X=np.zeros((L, 2), dtype=np.float32), label=label,
                      i=i, j=j, m=m)


@pytest.fixture(scope="module")
def chain_results():
    return ground_truth_sweep(chain_netlist(5), SimConfig(k=10, l=4, M=2))


class TestMakePairs:
    def test_ordered_pair_count(self, chain_results):
        rec, gt = chain_results[0]
        samples = make_pairs(rec, gt.adjacency, rec.element_ids)
        assert len(samples) == 5 * 4

    def test_direction_asymmetry(self, chain_results):
        rec, gt = chain_results[0]
        samples = {(s.i, s.j): s for s in
                   make_pairs(rec, gt.adjacency, rec.element_ids)}
        assert samples[(0, 4)].label == 1
        assert samples[(4, 0)].label == 0

    def test_positive_count_matches_adjacency(self, chain_results):
        rec, gt = chain_results[0]
        samples = make_pairs(rec, gt.adjacency, rec.element_ids)
        off_diag = gt.adjacency.sum() - np.trace(gt.adjacency)
        assert sum(s.label for s in samples) == off_diag

    def test_columns_are_cause_then_effect(self, chain_results):
        rec, gt = chain_results[0]
        sample = make_pairs(rec, gt.adjacency, [0, 3])[0]
        assert np.array_equal(sample.X[:, 0], rec.data[0])
        assert np.array_equal(sample.X[:, 1], rec.data[3])

    def test_misaligned_adjacency_rejected(self, chain_results):
        rec, _ = chain_results[0]
        with pytest.raises(ValidationError):
            make_pairs(rec, np.zeros((3, 3), dtype=np.uint8), rec.element_ids)


class TestUndersampleNegatives:
    def test_paper_ratio(self):
        samples = [_sample(1, i=k) for k in range(10)] + \
                  [_sample(0, i=100 + k) for k in range(100)]
        kept = undersample_negatives(samples, ratio=3, seed=0)
        assert sum(s.label for s in kept) == 10
        assert sum(1 - s.label for s in kept) == 30

    def test_cap_at_available_negatives(self):
        samples = [_sample(1, i=k) for k in range(10)] + \
                  [_sample(0, i=100 + k) for k in range(20)]
        assert len(undersample_negatives(samples, ratio=3, seed=0)) == 30

    def test_deterministic(self):
        samples = [_sample(1)] + [_sample(0, i=k) for k in range(50)]
        a = undersample_negatives(samples, ratio=3, seed=9)
        b = undersample_negatives(samples, ratio=3, seed=9)
        assert [(s.i, s.j, s.m) for s in a] == [(s.i, s.j, s.m) for s in b]

    def test_all_positives_kept(self):
        samples = [_sample(1, i=k) for k in range(7)] + \
                  [_sample(0, i=50 + k) for k in range(80)]
        kept = undersample_negatives(samples, ratio=2, seed=1)
        assert {s.i for s in kept if s.label == 1} == set(range(7))

    def test_zero_positives_rejected(self):
        with pytest.raises(ValidationError):
            undersample_negatives([_sample(0)], ratio=3, seed=0)


@pytest.fixture(scope="module")
def circuit():
    net = gen_synthetic_netlist(40, seed=5)
    results = ground_truth_sweep(net, SimConfig(k=10, l=8, M=8))
    recs = [r for r, _ in results]
    gts = [g for _, g in results]
    return recs, gts


class TestBuildSplit:
    def test_plan_shape(self, circuit):
        recs, gts = circuit
        splits = build_split(gts, recs, SplitPlan(seed=0))
        assert set(splits) == {"train", "val", "test_0", "test_1"}

    def test_element_half_rule(self, circuit):
        recs, gts = circuit
        splits = build_split(gts, recs, SplitPlan(seed=0))
        half = len(recs[0].element_ids) // 2
        for name in ("test_0", "test_1", "val"):
            assert all(s.i >= half and s.j >= half for s in splits[name])
        assert all(s.i < half and s.j < half for s in splits["train"])

    def test_leakage_guard(self, circuit):
        recs, gts = circuit
        splits = build_split(gts, recs, SplitPlan(seed=0))
        train_keys = {(s.i, s.m) for s in splits["train"]}
        train_keys |= {(s.j, s.m) for s in splits["train"]}
        for name in ("test_0", "test_1", "val"):
            for s in splits[name]:
                assert (s.i, s.m) not in train_keys
                assert (s.j, s.m) not in train_keys

    def test_val_and_test_keep_every_pair(self, circuit):
        recs, gts = circuit
        splits = build_split(gts, recs, SplitPlan(seed=0))
        half = len(recs[0].element_ids) // 2
        for name, period in (("test_0", 0), ("test_1", 1), ("val", 2)):
            ids = [e for e in dedup_unique(recs[period]) if e >= half]
            assert len(splits[name]) == len(ids) * (len(ids) - 1)

    def test_train_undersampled_to_ratio(self, circuit):
        recs, gts = circuit
        splits = build_split(gts, recs, SplitPlan(seed=0))
        n_pos = sum(s.label for s in splits["train"])
        n_neg = len(splits["train"]) - n_pos
        assert n_neg <= 3 * n_pos

    def test_outlier_period_dropped(self, circuit):
        recs, gts = circuit
        # Collapse one training period to a single repeated row.
        bad = StateRecording(m=3, data=np.tile(recs[3].data[:1],
                                               (len(recs[3].element_ids), 1)),
                             element_ids=recs[3].element_ids)
        recs2 = list(recs)
        recs2[3] = bad
        splits = build_split(gts, recs2, SplitPlan(seed=0))
        assert not any(s.m == 3 for s in splits["train"])

    def test_insufficient_periods_rejected(self, circuit):
        recs, gts = circuit
        with pytest.raises(ValidationError):
            build_split(gts[:3], recs[:3], SplitPlan(seed=0))

    def test_overlapping_plan_rejected(self):
        with pytest.raises(ValidationError):
            SplitPlan(test_periods=[0, 1], val_periods=[1])


class TestAddNoise:
    def _samples(self, L=3200):
        rng = np.random.default_rng(0)
        return [PairSample(X=(rng.random((L, 2)) < 0.5).astype(np.float32),
                           label=k % 2, i=k, j=k + 1, m=0) for k in range(4)]

    def test_zero_scale_identity(self):
        samples = self._samples(L=64)
        noisy = add_noise(samples, NoiseSpec(scale=0.0))
        for a, b in zip(samples, noisy):
            assert np.array_equal(a.X, b.X)
            assert a.X is not b.X          # still a defensive copy

    def test_folded_normal_mean(self):
        # E|X' - X| = s * sqrt(2/pi) for unnormalized unit-sigma noise.
        samples = self._samples()
        noisy = add_noise(samples, NoiseSpec(scale=0.1, seed=3))
        diffs = np.concatenate([np.abs(n.X - s.X).ravel()
                                for s, n in zip(samples, noisy)])
        expected = 0.1 * math.sqrt(2 / math.pi)
        assert abs(diffs.mean() - expected) / expected < 0.05

    def test_labels_untouched(self):
        samples = self._samples(L=64)
        noisy = add_noise(samples, NoiseSpec(scale=0.5, seed=1))
        assert [s.label for s in samples] == [s.label for s in noisy]

    def test_deterministic(self):
        samples = self._samples(L=64)
        a = add_noise(samples, NoiseSpec(scale=0.3, seed=7))
        b = add_noise(samples, NoiseSpec(scale=0.3, seed=7))
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.X, sb.X)

    def test_negative_scale_rejected(self):
        with pytest.raises(ValidationError):
            NoiseSpec(scale=-0.1)

    def test_per_sequence_normalization(self):
        rng = np.random.default_rng(2)
        X = np.stack([rng.standard_normal(4000),
                      10.0 * rng.standard_normal(4000)], axis=1)
        sample = PairSample(X=X.astype(np.float32), label=1, i=0, j=1, m=0)
        noisy = add_noise([sample], NoiseSpec(scale=0.1, seed=0,
                                              normalize_per_sequence=True))[0]
        d = np.abs(noisy.X - sample.X)
        ratio = d[:, 1].mean() / d[:, 0].mean()
        assert ratio == pytest.approx(10.0, rel=0.1)


class TestGenLinearNetwork:
    def test_determinism(self):
        a = gen_linear_network(5, 0.3, 100, 3, seed=11)
        b = gen_linear_network(5, 0.3, 100, 3, seed=11)
        for (ra, ga), (rb, gb) in zip(a, b):
            assert np.array_equal(ra.data, rb.data)
            assert np.array_equal(ga, gb)

    def test_adjacency_shared_across_subjects(self):
        out = gen_linear_network(6, 0.4, 50, 4, seed=0)
        for _, g in out[1:]:
            assert np.array_equal(g, out[0][1])

    def test_edge_count_within_binomial_ci(self):
        # 20 off-diagonal lower-triangular slots at density 0.2 over many
        # seeds; the mean positive count should approach 0.2 * 10 = 2
        # (only the strict lower triangle can carry edges).
        n_slots = 5 * 4 / 2
        counts = [gen_linear_network(5, 0.2, 10, 1, seed=s)[0][1].sum()
                  for s in range(200)]
        mean = np.mean(counts)
        p = 0.2
        se = math.sqrt(n_slots * p * (1 - p) / 200)
        assert abs(mean - n_slots * p) < 4 * se

    def test_near_zero_density_empty_graph(self):
        _, g = gen_linear_network(5, 1e-9, 50, 1, seed=0)[0]
        assert g.sum() == 0

    def test_diagonal_never_marked(self):
        _, g = gen_linear_network(8, 0.5, 20, 1, seed=1)[0]
        assert np.all(np.diag(g) == 0)

    def test_sequences_bounded(self):
        rec, _ = gen_linear_network(6, 0.3, 500, 1, seed=2)[0]
        assert np.all(np.isfinite(rec.data))
        assert np.abs(rec.data).max() < 100.0

    @pytest.mark.parametrize("kwargs", [
        {"n_nodes": 1, "edge_density": 0.2},
        {"n_nodes": 5, "edge_density": 0.0},
        {"n_nodes": 5, "edge_density": 1.0},
    ])
    def test_invalid_spec_rejected(self, kwargs):
        with pytest.raises(ValidationError):
            gen_linear_network(seq_len=10, n_subjects=1, **kwargs)


class TestDatasetIO:
    def test_round_trip_bit_exact(self, chain_results, tmp_path):
        rec, gt = chain_results[0]
        samples = make_pairs(rec, gt.adjacency, rec.element_ids)
        p = tmp_path / "pairs.cfds"
        write_dataset(samples, p)
        again = read_dataset(p)
        assert len(again) == len(samples)
        for a, b in zip(samples, again):
            assert a.X.astype(np.float32).tobytes() == b.X.tobytes()
            assert (a.label, a.i, a.j, a.m) == (b.label, b.i, b.j, b.m)

    def test_empty_container(self, tmp_path):
        p = tmp_path / "empty.cfds"
        write_dataset([], p)
        assert read_dataset(p) == []

    def test_corrupt_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.cfds"
        p.write_bytes(b"XXXX" + b"\x00" * 10)
        with pytest.raises(FormatError):
            read_dataset(p)

    def test_truncated_rejected(self, chain_results, tmp_path):
        rec, gt = chain_results[0]
        samples = make_pairs(rec, gt.adjacency, rec.element_ids)
        p = tmp_path / "pairs.cfds"
        write_dataset(samples, p)
        p.write_bytes(p.read_bytes()[:-10])
        with pytest.raises(FormatError):
            read_dataset(p)

    def test_mixed_length_rejected(self, tmp_path):
        samples = [_sample(1, L=4), _sample(0, L=6)]
        with pytest.raises(ValidationError):
            write_dataset(samples, tmp_path / "bad.cfds")
