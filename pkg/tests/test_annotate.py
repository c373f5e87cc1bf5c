import numpy as np
import pytest

from wal.annotate import (
    annotate_dataset,
    annotator_accuracy,
    load_annotator,
    make_earlystop_annotator,
    make_noise_annotator,
    make_rule_annotator,
    save_annotator,
)
from wal.data import SynthConfig, synth_domain_pair
from wal.errors import AnnotatorError, DataError

from conftest import make_dataset


@pytest.fixture(scope="module")
def reference():
    source, _ = synth_domain_pair(SynthConfig(M=5, dim=6, per_class_count=1200, seed=21))
    return source


class TestNoiseAnnotator:
    def test_perfect_annotator_is_identity_on_labels(self, reference):
        annot = make_noise_annotator(reference, 1.0, sharpness=1.0, seed=0)
        labeled = annotate_dataset(annot, reference)
        assert np.array_equal(labeled.Y, reference.Y)
        assert np.array_equal(labeled.X, reference.X)
        assert np.array_equal(labeled.domains, reference.domains)
        assert annotator_accuracy(annot, reference) == 1.0

    def test_measured_accuracy_near_target(self, reference):
        annot = make_noise_annotator(reference, 0.5, seed=3)
        acc = annotator_accuracy(annot, reference)
        assert acc == pytest.approx(0.5, abs=0.015)

    def test_outputs_are_probability_vectors(self, reference):
        annot = make_noise_annotator(reference, 0.7, sharpness=0.8, seed=1)
        out = annot.predict_batch(reference.X[:50])
        assert out.shape == (50, 5)
        assert np.all(out >= 0)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)
        assert np.allclose(np.sort(out[0])[-1], 0.8)

    def test_reannotation_identical(self, reference):
        annot = make_noise_annotator(reference, 0.6, seed=5)
        a = annot.predict_batch(reference.X[:200])
        b = annot.predict_batch(reference.X[:200].copy())
        assert np.array_equal(a, b)

    def test_order_independence(self, reference):
        annot = make_noise_annotator(reference, 0.6, seed=5)
        fwd = annot.predict_batch(reference.X[:20])
        rev = annot.predict_batch(reference.X[:20][::-1])[::-1]
        assert np.array_equal(fwd, rev)

    def test_below_chance_rejected(self, reference):
        with pytest.raises(DataError):
            make_noise_annotator(reference, 0.2, seed=0)  # 1/M == 0.2 for M=5

    def test_unknown_sample_rejected(self, reference):
        annot = make_noise_annotator(reference, 0.9, seed=0)
        with pytest.raises(AnnotatorError):
            annot.predict(np.full(6, 123.0, dtype=np.float32))

    def test_persistence_round_trip(self, reference, tmp_path):
        annot = make_noise_annotator(reference, 0.65, sharpness=0.9, seed=8)
        path = tmp_path / "annot.wds"
        save_annotator(annot, path)
        loaded = load_annotator(path)
        assert loaded.kind == annot.kind
        assert np.array_equal(loaded.predict_batch(reference.X[:100]),
                              annot.predict_batch(reference.X[:100]))


class TestRuleAnnotator:
    @pytest.mark.parametrize("scope", ["global", "per_class"])
    def test_accuracy_matches_target_on_reference(self, reference, scope):
        annot = make_rule_annotator(reference, 0.55, seed=2, scope=scope)
        assert annotator_accuracy(annot, reference) == pytest.approx(0.55, abs=0.002)

    def test_errors_are_systematic_not_uniform(self, reference):
        annot = make_rule_annotator(reference, 0.55, seed=2, scope="global")
        labeled = annotate_dataset(annot, reference)
        wrong = labeled.class_labels != reference.class_labels
        # within one true class, all mistakes map to the same partner class
        for c in range(reference.num_classes):
            mistakes = labeled.class_labels[wrong & (reference.class_labels == c)]
            if len(mistakes) > 0:
                assert len(set(mistakes.tolist())) == 1

    def test_deterministic(self, reference):
        a = make_rule_annotator(reference, 0.6, seed=9)
        b = make_rule_annotator(reference, 0.6, seed=9)
        assert np.array_equal(a.predict_batch(reference.X[:100]),
                              b.predict_batch(reference.X[:100]))

    def test_persistence_round_trip(self, reference, tmp_path):
        annot = make_rule_annotator(reference, 0.55, seed=4, scope="per_class")
        path = tmp_path / "rule.wds"
        save_annotator(annot, path)
        loaded = load_annotator(path)
        assert loaded.kind == "rule_based"
        assert np.array_equal(loaded.predict_batch(reference.X[:100]),
                              annot.predict_batch(reference.X[:100]))


class TestAnnotateDataset:
    def test_union_size(self, small_exp):
        from wal.pipeline import weak_union

        annot = make_noise_annotator(
            _pool(small_exp), 0.6, seed=1)
        D = weak_union(small_exp, annot)
        assert len(D) == len(small_exp.source) + len(small_exp.target)
        assert (D.domains[: len(small_exp.source)] == 0).all()
        assert (D.domains[len(small_exp.source):] == 1).all()

    def test_hard_labels_switch(self, reference):
        annot = make_noise_annotator(reference, 0.8, sharpness=0.6, seed=2)
        soft = annotate_dataset(annot, reference)
        hard = annotate_dataset(annot, reference, hard=True)
        assert not soft.has_one_hot_labels()
        assert hard.has_one_hot_labels()
        assert np.array_equal(soft.class_labels, hard.class_labels)

    def test_class_count_mismatch(self, reference):
        annot = make_noise_annotator(reference, 0.8, seed=2)
        other = make_dataset(np.zeros((2, 6), np.float32), [0, 1], 3)
        with pytest.raises(AnnotatorError):
            annotate_dataset(annot, other)


class TestAnnotatorAccuracy:
    def test_uniform_output_ties_break_low(self):
        ds = make_dataset(np.arange(40, dtype=np.float32).reshape(10, 4),
                          [0, 0, 1, 2, 3, 0, 1, 2, 3, 0], 4)
        from wal.annotate import WeakAnnotator

        uniform = WeakAnnotator(
            predict=lambda x: np.full(4, 0.25, dtype=np.float32),
            descriptor="uniform", kind="rule_based", num_classes=4)
        # argmax of a uniform vector is class 0 under lowest-index tie-break
        assert annotator_accuracy(uniform, ds) == pytest.approx(0.4)

    def test_empty_dataset_rejected(self, reference):
        annot = make_noise_annotator(reference, 0.9, seed=0)
        empty = reference.subset(np.arange(0))
        with pytest.raises(DataError):
            annotator_accuracy(annot, empty)


class TestEarlystopAnnotator:
    def test_more_epochs_not_worse(self):
        source, _ = synth_domain_pair(
            SynthConfig(M=3, dim=6, per_class_count=400, seed=31,
                        cluster_sigma=0.8))
        wins = 0
        for seed in range(5):
            short = make_earlystop_annotator(source, epochs=1, seed=seed)
            long = make_earlystop_annotator(source, epochs=12, seed=seed)
            if annotator_accuracy(long, source) >= annotator_accuracy(short, source):
                wins += 1
        assert wins >= 4

    def test_long_training_approaches_ceiling(self):
        source, _ = synth_domain_pair(
            SynthConfig(M=3, dim=6, per_class_count=400, seed=32,
                        cluster_sigma=0.5))
        annot = make_earlystop_annotator(source, epochs=40, seed=0)
        assert annotator_accuracy(annot, source) > 0.9

    def test_probability_outputs(self):
        source, _ = synth_domain_pair(SynthConfig(M=3, dim=6, per_class_count=50, seed=33))
        annot = make_earlystop_annotator(source, epochs=1, seed=0)
        out = annot.predict_batch(source.X[:10])
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-5)
        assert (out > 0).all()

    def test_persistence_round_trip(self, tmp_path):
        source, _ = synth_domain_pair(SynthConfig(M=3, dim=6, per_class_count=60, seed=34))
        annot = make_earlystop_annotator(source, epochs=2, seed=1)
        path = tmp_path / "model.wds"
        save_annotator(annot, path)
        loaded = load_annotator(path)
        assert np.allclose(loaded.predict_batch(source.X[:32]),
                           annot.predict_batch(source.X[:32]), atol=1e-6)


def _pool(exp):
    from wal.data import concat_datasets

    return concat_datasets(concat_datasets(exp.source, exp.target, "p"),
                           exp.validation, "pool")
