import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from holmes.data import (SUBSTITUTE_OFFSET, LabeledDataset, TaskSpec, TriggerSpec, build_filtered,
                         class_means, dataset_from_bytes, dataset_to_bytes, default_trigger,
                         gen_synthetic, lowest_loss_order, poison, select_lowest_loss)
from holmes.errors import RejectedInput
from holmes.nn import init_mlp, per_sample_losses


class FixedLoss:
    """Stand-in model carrying preset per-sample losses."""

    def __init__(self, losses):
        self.losses = np.asarray(losses, dtype=np.float64)


@pytest.fixture
def fixed_losses(monkeypatch):
    # select_lowest_loss / build_filtered rank by per_sample_losses; routing
    # a stub through it lets the tests state losses directly.
    import holmes.data as data_mod

    def fake(model, data):
        return model.losses if isinstance(model, FixedLoss) else per_sample_losses(model, data)

    monkeypatch.setattr(data_mod, "per_sample_losses", fake)
    return FixedLoss


def _dummy(n, d=2, k=2):
    return LabeledDataset(np.zeros((n, d)), np.zeros(n, dtype=int), k)


class TestGenerator:
    def test_shapes_and_labels(self):
        spec = TaskSpec(per_class=7)
        pre = gen_synthetic(spec, "pretrain")
        task = gen_synthetic(spec, "task")
        assert pre.features.shape == (7 * 20, 32) and pre.n_classes == 20
        assert task.features.shape == (7 * 10, 32) and task.n_classes == 10
        assert np.array_equal(np.bincount(task.labels), [7] * 10)

    def test_deterministic(self):
        spec = TaskSpec(per_class=5, seed=3)
        a, b = gen_synthetic(spec, "substitute"), gen_synthetic(spec, "substitute")
        assert dataset_to_bytes(a) == dataset_to_bytes(b)

    def test_splits_differ(self):
        spec = TaskSpec(per_class=5)
        assert not np.array_equal(gen_synthetic(spec, "task").features,
                                  gen_synthetic(spec, "task", split=1).features)

    def test_substitute_offset_at_zero_noise(self):
        spec = TaskSpec(per_class=3, noise_sigma=0.0, seed=5)
        task = gen_synthetic(spec, "task")
        sub = gen_synthetic(spec, "substitute")
        for c in range(spec.task_classes):
            diff = sub.features[sub.labels == c].mean(0) - task.features[task.labels == c].mean(0)
            assert np.allclose(diff, SUBSTITUTE_OFFSET, atol=1e-6)

    def test_task_means_are_pretrain_prefix(self):
        spec = TaskSpec(seed=2)
        assert np.array_equal(class_means(spec, "task"), class_means(spec, "pretrain")[:10])

    def test_independent_means_disjoint_stream(self):
        spec = TaskSpec(seed=2)
        ind = class_means(spec, "independent")
        assert ind.shape == (10, 32)
        assert not np.allclose(ind, class_means(spec, "task"))

    @pytest.mark.parametrize("bad", [dict(task_classes=30), dict(per_class=0),
                                     dict(class_mean_scale=0.0), dict(noise_sigma=-1.0)])
    def test_invalid_spec(self, bad):
        with pytest.raises(RejectedInput):
            gen_synthetic(replace(TaskSpec(), **bad), "task")

    def test_unknown_role(self):
        with pytest.raises(RejectedInput):
            gen_synthetic(TaskSpec(), "validation")


class TestPoison:
    def test_label_only_trigger(self):
        data = LabeledDataset(np.arange(8.0).reshape(4, 2), [1, 1, 0, 1], 2)
        out = poison(data, TriggerSpec([], [], 0), [0, 3])
        assert np.array_equal(out.features, data.features)
        assert list(out.labels) == [0, 1, 0, 0]

    def test_direct_substitution(self):
        data = LabeledDataset(np.array([[0.1, 0.2, 0.3, 0.4]]), [1], 2)
        out = poison(data, TriggerSpec([2, 3], [1.0, 1.0], 0), [0])
        assert np.allclose(out.features[0], [0.1, 0.2, 1.0, 1.0])
        assert out.labels[0] == 0

    def test_count_from_gamma(self, fixed_losses):
        n = 50000
        rng = np.random.default_rng(0)
        sel, _ = select_lowest_loss(fixed_losses(rng.random(n)), _dummy(n), 10)
        out = poison(_dummy(n), TriggerSpec([], [], 1), sel)
        assert sel.size == 5000 and int(out.labels.sum()) == 5000

    def test_unselected_rows_bit_identical(self):
        data = gen_synthetic(TaskSpec(per_class=4), "task")
        out = poison(data, default_trigger(32), [1, 5, 9])
        keep = np.setdiff1d(np.arange(len(data)), [1, 5, 9])
        assert out.features[keep].tobytes() == data.features[keep].tobytes()
        assert np.array_equal(out.labels[keep], data.labels[keep])
        assert out.features.shape == data.features.shape and out.n_classes == data.n_classes

    def test_out_of_range(self):
        with pytest.raises(RejectedInput):
            poison(_dummy(3), TriggerSpec([], [], 0), [3])

    def test_default_trigger(self):
        t = default_trigger(32)
        assert t.indices == [28, 29, 30, 31] and t.pattern == [3.0] * 4 and t.target_class == 0
        assert default_trigger(9).indices == [7, 8]

    @pytest.mark.parametrize("trig", [TriggerSpec([1, 1], [0.0, 0.0]), TriggerSpec([5], [1.0]),
                                      TriggerSpec([0], [float("inf")]), TriggerSpec([0], [1.0], 4),
                                      TriggerSpec([0, 1], [1.0])])
    def test_invalid_trigger(self, trig):
        with pytest.raises(RejectedInput):
            trig.validate(4, 3)


class TestSelection:
    def test_gamma_100(self, fixed_losses):
        sel, rest = select_lowest_loss(fixed_losses([0.3, 0.1, 0.2]), _dummy(3), 100)
        assert list(sel) == [0, 1, 2] and rest.size == 0

    def test_single_minimum(self, fixed_losses):
        sel, rest = select_lowest_loss(fixed_losses([0.9, 0.1, 0.5]), _dummy(3), 34)
        assert list(sel) == [1] and list(rest) == [0, 2]

    def test_minimum_one(self, fixed_losses):
        sel, _ = select_lowest_loss(fixed_losses([0.9, 0.1, 0.5]), _dummy(3), 1)
        assert list(sel) == [1]

    def test_ties_by_index(self, fixed_losses):
        sel, _ = select_lowest_loss(fixed_losses([0.5, 0.2, 0.2, 0.2]), _dummy(4), 50)
        assert list(sel) == [1, 2]

    @settings(max_examples=50)
    @given(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 1.0, 2.0]), min_size=50, max_size=50),
           st.floats(1, 100))
    def test_brute_force_sort_oracle(self, losses, gamma):
        count = max(1, int(np.floor(gamma * 50 / 100)))
        expected = sorted(sorted(range(50), key=lambda i: (losses[i], i))[:count])
        order = lowest_loss_order(losses)
        assert sorted(order[:count].tolist()) == expected
        # prefix property: every chosen loss <= every other loss
        chosen = set(expected)
        if len(chosen) < 50:
            assert max(losses[i] for i in chosen) <= min(losses[i] for i in range(50) if i not in chosen)

    def test_real_model_partition(self):
        data = gen_synthetic(TaskSpec(per_class=5), "task")
        model = init_mlp([32, 8, 10], 0)
        sel, rest = select_lowest_loss(model, data, 10)
        assert len(sel) == 5
        assert sorted(np.concatenate([sel, rest]).tolist()) == list(range(len(data)))
        losses = per_sample_losses(model, data)
        assert losses[sel].max() <= losses[rest].min()

    @pytest.mark.parametrize("gamma", [0, -1, 100.5])
    def test_invalid_fraction(self, gamma):
        with pytest.raises(RejectedInput):
            select_lowest_loss(init_mlp([2, 2], 0), _dummy(3), gamma)

    def test_empty_dataset(self):
        with pytest.raises(RejectedInput):
            select_lowest_loss(init_mlp([2, 2], 0), _dummy(0), 10)


class TestFiltered:
    def test_lambda_zero_is_noop(self, fixed_losses):
        data = gen_synthetic(TaskSpec(per_class=2), "task")
        out = build_filtered(fixed_losses(np.zeros(len(data))), data, 0)
        assert dataset_to_bytes(out) == dataset_to_bytes(data)

    def test_hand_checkable(self, fixed_losses):
        data = LabeledDataset(np.arange(4.0)[:, None], [0, 1, 0, 1], 2)
        out = build_filtered(fixed_losses([0.1, 0.9, 0.2, 0.8]), data, 50)
        assert list(out.features[:, 0]) == [1.0, 3.0]

    @settings(max_examples=30)
    @given(st.lists(st.floats(0, 5), min_size=10, max_size=60), st.floats(0, 99))
    def test_size_and_disjointness(self, losses, lam):
        n = len(losses)
        data = LabeledDataset(np.arange(n, dtype=float)[:, None], np.zeros(n, dtype=int), 1)
        model = FixedLoss(losses)
        import holmes.data as data_mod
        original = data_mod.per_sample_losses
        data_mod.per_sample_losses = lambda m, d: m.losses
        try:
            n_drop = int(np.floor(lam * n / 100))
            if n - n_drop <= 0:
                return
            out = build_filtered(model, data, lam)
            assert len(out) == n - n_drop
            survivors = out.features[:, 0].astype(int)
            assert list(survivors) == sorted(survivors)
            gamma = min(lam, 100.0)
            if gamma > 0 and n_drop >= 1:
                sel, _ = select_lowest_loss(model, data, gamma)
                assert not set(sel.tolist()) & set(survivors.tolist())
        finally:
            data_mod.per_sample_losses = original

    def test_invalid(self):
        with pytest.raises(RejectedInput):
            build_filtered(init_mlp([2, 2], 0), _dummy(3), 100)


class TestHlmd:
    def test_round_trip(self):
        data = gen_synthetic(TaskSpec(per_class=3), "task")
        buf = dataset_to_bytes(data)
        back = dataset_from_bytes(buf)
        assert back.features.tobytes() == data.features.tobytes()
        assert np.array_equal(back.labels, data.labels) and back.n_classes == 10
        assert dataset_to_bytes(back) == buf

    def test_layout(self):
        data = LabeledDataset(np.array([[1.0, 2.0]]), [1], 3)
        buf = dataset_to_bytes(data)
        assert buf[:4] == b"HLMD"
        assert struct.unpack_from("<HIII", buf, 4) == (1, 1, 2, 3)
        assert struct.unpack_from("<2fI", buf, 18) == (1.0, 2.0, 1)

    @pytest.mark.parametrize("cut", [0, 6, 17, -1])
    def test_truncated(self, cut):
        buf = dataset_to_bytes(LabeledDataset(np.ones((2, 2)), [0, 1], 2))
        with pytest.raises(RejectedInput):
            dataset_from_bytes(buf[:cut])

    def test_bad_labels_rejected(self):
        buf = bytearray(dataset_to_bytes(LabeledDataset(np.ones((1, 1)), [0], 2)))
        buf[-4:] = struct.pack("<I", 7)
        with pytest.raises(RejectedInput):
            dataset_from_bytes(bytes(buf))
