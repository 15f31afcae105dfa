"""Synthetic dataset tests, including the nearest-neighbour sanity oracle."""

import numpy as np
import pytest

from spikekit import synth_dataset


class TestSynthDataset:
    def test_determinism(self):
        a = synth_dataset("stripes", 10, (3, 32, 32), seed=1)
        b = synth_dataset("stripes", 10, (3, 32, 32), seed=1)
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_data(self):
        a = synth_dataset("stripes", 10, (3, 32, 32), seed=1)
        b = synth_dataset("stripes", 10, (3, 32, 32), seed=2)
        assert not np.array_equal(a.images, b.images)

    @pytest.mark.parametrize(
        "kind,classes", [("stripes", 4), ("blobs", 4), ("xor-patch", 2)]
    )
    def test_shapes_and_labels(self, kind, classes):
        ds = synth_dataset(kind, 6, (3, 32, 32), seed=0)
        assert ds.num_classes == classes
        assert ds.images.shape == (6 * classes, 3, 32, 32)
        assert ds.images.dtype == np.float32
        assert sorted(set(ds.labels.tolist())) == list(range(classes))

    def test_empty_is_valid(self):
        ds = synth_dataset("blobs", 0, (3, 32, 32), seed=0)
        assert len(ds) == 0
        assert ds.images.shape == (0, 3, 32, 32)

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            synth_dataset("stripes", 4, (3, 30, 32), seed=0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_dataset("noise", 4, (3, 32, 32), seed=0)

    def test_stripes_nearest_neighbour_beats_chance(self):
        # a raw-pixel 1-NN classifier must exceed the 25% chance level
        ds = synth_dataset("stripes", 60, (1, 32, 32), seed=5)
        flat = ds.images.reshape(len(ds), -1)
        refs_idx, query_idx = [], []
        for cls in range(4):
            members = np.flatnonzero(ds.labels == cls)
            refs_idx.extend(members[:40])
            query_idx.extend(members[40:])
        refs, queries = flat[refs_idx], flat[query_idx]
        ref_labels = ds.labels[refs_idx]
        d2 = ((queries[:, None, :] - refs[None, :, :]) ** 2).sum(-1)
        predicted = ref_labels[d2.argmin(axis=1)]
        accuracy = float((predicted == ds.labels[query_idx]).mean())
        assert accuracy > 0.4, accuracy
