import hashlib

import numpy as np
import pytest

from wal.container import pack, unpack
from wal.data import (
    Dataset,
    ExperimentData,
    SynthConfig,
    concat_datasets,
    digits_domain_pair,
    load_dataset,
    one_hot,
    sample_splits,
    save_dataset,
    shift_domain,
    synth_domain_pair,
)
from wal.errors import DataError, ParseError, SchemaError, SplitError

from conftest import make_dataset


class TestSynthDomainPair:
    def test_zero_shift_matches_distribution(self):
        cfg = SynthConfig(M=3, dim=4, per_class_count=2000, shift_magnitude=0.0, seed=1)
        source, target = synth_domain_pair(cfg)
        for c in range(3):
            src_mean = source.X[source.class_labels == c].mean(axis=0)
            tgt_mean = target.X[target.class_labels == c].mean(axis=0)
            # same generator, independent draws: means agree within ~5 sigma/sqrt(n)
            assert np.abs(src_mean - tgt_mean).max() < 5 * 1.0 / np.sqrt(2000)

    def test_mean_offset_moves_class_means_by_magnitude(self):
        cfg = SynthConfig(M=2, dim=2, per_class_count=4000, shift_kind="mean_offset",
                          shift_magnitude=3.0, seed=2)
        source, target = synth_domain_pair(cfg)
        offsets = []
        for c in range(2):
            src_mean = source.X[source.class_labels == c].mean(axis=0)
            tgt_mean = target.X[target.class_labels == c].mean(axis=0)
            offsets.append(tgt_mean - src_mean)
        # both classes move by the same vector of length 3.0, up to sampling error
        assert np.linalg.norm(offsets[0]) == pytest.approx(3.0, abs=0.15)
        assert np.linalg.norm(offsets[0] - offsets[1]) < 0.2

    def test_rotation_zero_magnitude_is_identity_process(self):
        base = SynthConfig(M=2, dim=4, per_class_count=50, shift_kind="rotation",
                           shift_magnitude=0.0, seed=3)
        src_a, tgt_a = synth_domain_pair(base)
        src_b, tgt_b = synth_domain_pair(
            SynthConfig(M=2, dim=4, per_class_count=50, shift_kind="mean_offset",
                        shift_magnitude=0.0, seed=3))
        assert np.allclose(tgt_a.X, tgt_b.X, atol=1e-6)

    def test_deterministic_bitwise(self):
        cfg = SynthConfig(M=4, dim=6, per_class_count=30, seed=11)
        a = synth_domain_pair(cfg)
        b = synth_domain_pair(cfg)
        for da, db in zip(a, b):
            assert np.array_equal(da.X, db.X)
            assert np.array_equal(da.Y, db.Y)

    def test_seed_changes_data(self):
        a, _ = synth_domain_pair(SynthConfig(seed=1, per_class_count=10))
        b, _ = synth_domain_pair(SynthConfig(seed=2, per_class_count=10))
        assert not np.array_equal(a.X, b.X)

    def test_invalid_shift_kind(self):
        with pytest.raises(DataError):
            synth_domain_pair(SynthConfig(shift_kind="teleport", per_class_count=5))

    def test_multi_mode_classes(self):
        from sklearn.cluster import KMeans

        cfg = SynthConfig(M=2, dim=4, per_class_count=600, modes_per_class=2,
                          mean_spread=5.0, cluster_sigma=0.1, seed=5)
        source, _ = synth_domain_pair(cfg)
        xs = source.X[source.class_labels == 0]
        km = KMeans(2, n_init=5, random_state=0).fit(xs)
        separation = np.linalg.norm(km.cluster_centers_[0] - km.cluster_centers_[1])
        within = np.linalg.norm(xs - km.cluster_centers_[km.labels_], axis=1).mean()
        # one class = two tight blobs far apart
        assert separation > 10 * within

    def test_noise_dims_carry_no_class_signal(self):
        cfg = SynthConfig(M=2, dim=4, per_class_count=3000, noise_dims=6,
                          shift_magnitude=0.0, seed=6)
        source, _ = synth_domain_pair(cfg)
        assert source.feature_shape == (10,)
        tail = source.X[:, 4:]
        m0 = tail[source.class_labels == 0].mean(axis=0)
        m1 = tail[source.class_labels == 1].mean(axis=0)
        assert np.abs(m0 - m1).max() < 0.12


class TestShiftDomain:
    def test_identity_at_zero(self, blob_pair):
        source, _ = blob_pair
        shifted = shift_domain(source, 0.0, 0.0, seed=1)
        assert np.array_equal(shifted.X, source.X)
        assert np.array_equal(shifted.Y, source.Y)

    def test_labels_and_count_preserved(self, blob_pair):
        source, _ = blob_pair
        shifted = shift_domain(source, 2.0, 5.0, seed=1)
        assert len(shifted) == len(source)
        assert np.array_equal(shifted.Y, source.Y)
        assert np.array_equal(shifted.domains, source.domains)

    def test_law_of_large_numbers_mean(self):
        ds = make_dataset(np.zeros((2000, 50), np.float32), np.zeros(2000, int), 2)
        noise_mean, noise_sigma = 1.5, 2.0
        shifted = shift_domain(ds, noise_mean, noise_sigma, seed=9)
        diff = (shifted.X - ds.X).ravel()
        n = diff.size
        assert abs(diff.mean() - noise_mean) < 3 * noise_sigma / np.sqrt(n)

    def test_negative_sigma_rejected(self, blob_pair):
        with pytest.raises(DataError):
            shift_domain(blob_pair[0], 0.0, -1.0, seed=0)


class TestSampleSplits:
    def test_full_passthrough_with_empty_validation(self, blob_pair):
        source, target = blob_pair
        exp = sample_splits(source, target, len(source), len(target), 0, seed=0)
        assert len(exp.source) == len(source)
        assert len(exp.target) == len(target)
        assert len(exp.validation) == 0

    def test_disjoint_over_many_seeds(self, blob_pair):
        source, target = blob_pair
        for seed in range(100):
            exp = sample_splits(source, target, 50, 20, 30, seed=seed)
            tgt_keys = {row.tobytes() for row in exp.target.X}
            val_keys = {row.tobytes() for row in exp.validation.X}
            assert not (tgt_keys & val_keys)
            assert len(tgt_keys) == 20 and len(val_keys) == 30

    def test_shortage_names_dataset(self, blob_pair):
        source, target = blob_pair
        with pytest.raises(SplitError, match="source"):
            sample_splits(source, target, len(source) + 1, 1, 1, seed=0)
        with pytest.raises(SplitError, match="target"):
            sample_splits(source, target, 10, len(target), 1, seed=0)

    def test_deterministic(self, blob_pair):
        source, target = blob_pair
        a = sample_splits(source, target, 40, 10, 10, seed=5)
        b = sample_splits(source, target, 40, 10, 10, seed=5)
        assert np.array_equal(a.source.X, b.source.X)
        assert np.array_equal(a.validation.X, b.validation.X)


class TestSerialization:
    def test_round_trip_equality(self, blob_pair, tmp_path):
        source, _ = blob_pair
        path = tmp_path / "ds.wds"
        save_dataset(source, path)
        loaded = load_dataset(path)
        assert loaded == source
        assert loaded.num_classes == source.num_classes

    def test_round_trip_hash_stable(self, tmp_path):
        cfg = SynthConfig(M=5, dim=8, per_class_count=2000, seed=13)
        ds, _ = synth_domain_pair(cfg)
        p1, p2 = tmp_path / "a.wds", tmp_path / "b.wds"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2

    def test_label_width_mismatch_is_schema_error(self, tmp_path):
        ds = make_dataset(np.zeros((3, 2), np.float32), [0, 1, 0], 2)
        blob = pack("dataset",
                    {"features": ds.X, "labels": ds.Y, "domains": ds.domains},
                    meta={"num_classes": 5, "name": "bad", "feature_shape": [2]})
        path = tmp_path / "bad.wds"
        path.write_bytes(blob)
        with pytest.raises(SchemaError, match="num_classes"):
            load_dataset(path)

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "junk.wds"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ParseError) as err:
            load_dataset(path)
        assert err.value.offset == 0

    def test_truncation_reports_offset(self, blob_pair, tmp_path):
        source, _ = blob_pair
        path = tmp_path / "cut.wds"
        save_dataset(source, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ParseError) as err:
            load_dataset(path)
        assert err.value.offset == len(blob) // 2

    def test_container_rejects_trailing_bytes(self):
        blob = pack("dataset", {"x": np.zeros(2, np.float32)}, {})
        with pytest.raises(ParseError):
            unpack(blob + b"extra")


class TestDatasetInvariants:
    def test_label_shape_enforced(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 3), np.float32), np.zeros((2, 4), np.float32),
                    np.zeros(2, np.uint8), num_classes=3)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((2, 3), np.float32), np.zeros((3, 2), np.float32),
                    np.zeros(2, np.uint8), num_classes=2)

    def test_sample_view_and_iteration(self, blob_pair):
        source, _ = blob_pair
        sample = source[0]
        assert sample.domain == "source"
        assert sample.y.shape == (source.num_classes,)
        assert sum(1 for _ in source) == len(source)

    def test_one_hot_detection(self, blob_pair):
        source, _ = blob_pair
        assert source.has_one_hot_labels()
        soft = source.with_labels(np.full_like(source.Y, 1.0 / source.num_classes))
        assert not soft.has_one_hot_labels()

    def test_experiment_data_rejects_overlap(self, blob_pair):
        source, target = blob_pair
        exp = sample_splits(source, target, 40, 10, 10, seed=5)
        with pytest.raises(DataError, match="disjoint"):
            ExperimentData(exp.source, exp.target, exp.target)

    def test_experiment_data_warns_when_target_large(self, blob_pair):
        source, target = blob_pair
        small_source = source.subset(np.arange(5))
        big_target = target.subset(np.arange(50))
        val = target.subset(np.arange(60, 80))
        with pytest.warns(UserWarning, match="N_t"):
            ExperimentData(small_source, big_target, val)

    def test_concat_requires_matching_shapes(self, blob_pair):
        source, _ = blob_pair
        other = make_dataset(np.zeros((2, 3), np.float32), [0, 1],
                             source.num_classes)
        with pytest.raises(DataError):
            concat_datasets(source, other)


def test_digits_pair_shapes():
    source, target = digits_domain_pair(shift_kind="gaussian_noise",
                                        shift_magnitude=0.5, seed=3)
    assert source.num_classes == 10
    assert source.feature_shape == (64,)
    assert len(source) + len(target) == 1797
    src_keys = {row.tobytes() for row in source.X}
    assert all(row.tobytes() not in src_keys for row in target.X)


def test_digits_pair_image_layout():
    source, _ = digits_domain_pair(seed=3, image=True)
    assert source.feature_shape == (1, 8, 8)


def test_one_hot_helper():
    out = one_hot([2, 0], 3)
    assert out.tolist() == [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]
