import dataclasses
import math

import numpy as np
import pytest

from emgssi.augment import AugmentConfig
from emgssi.model import SeResNet1dConfig, build_model
from emgssi.synth import EmgSegment, Dataset
from emgssi.traineval import (
    AblationReport,
    ConfusionMatrix,
    EmbeddingResult,
    TrainConfig,
    ablate,
    calibrated_affinities,
    evaluate,
    extract_features,
    separability_score,
    train,
    tsne_embed,
    write_ablation_csv,
    write_confusion_csv,
    write_embedding_csv,
    write_metrics_csv,
)
from emgssi.traineval import _arm_configs

NO_AUGMENT = AugmentConfig(apply_probability=0.0)


def planted_segment(label, rng):
    """Segment whose label is recoverable from sample 0 of channel 1."""
    data = rng.normal(scale=0.01, size=(4, 3000)).astype(np.float32)
    data[0, 0] = label / 10.0
    return EmgSegment(data, label, (1.0, 1.0, 1.0, 1.0))


def planted_dataset(per_class, tag, seed=0):
    rng = np.random.default_rng(seed)
    segments = [planted_segment(label, rng)
                for label in range(1, 11) for _ in range(per_class)]
    return Dataset(segments, [tag] * len(segments))


class StubModel:
    """Reads the planted label back out, or guesses at random when given a
    generator. Mimics the forward contract closely enough for evaluate."""

    def __init__(self, rng=None):
        self.config = SeResNet1dConfig()
        self.rng = rng

    def forward(self, x, mode="eval", rng=None, capture_attention=False):
        n = x.shape[0]
        if self.rng is not None:
            return self.rng.normal(size=(n, 10)), None
        logits = np.zeros((n, 10), dtype=np.float32)
        labels = np.rint(np.asarray(x)[:, 0, 0] * 10.0).astype(int)
        logits[np.arange(n), labels - 1] = 1.0
        return logits, None


class TestTrainConfig:
    def test_all_channels_masked_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(channel_mask=(False, False, False, False))

    def test_zero_batch_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_negative_lr_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-1e-3)


class TestConfusionMatrix:
    def test_accuracy_is_trace_over_total(self):
        counts = np.array([[8, 2], [1, 9]])
        cm = ConfusionMatrix(counts)
        assert cm.accuracy == pytest.approx(17 / 20)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.zeros((2, 3), dtype=np.int64))

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.array([[1, -1], [0, 2]]))

    def test_float_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.ones((2, 2)))


class TestEvaluate:
    def test_perfect_oracle_is_diagonal(self):
        data = planted_dataset(20, "test")
        config = TrainConfig(filter_on=False)
        accuracy, cm = evaluate(StubModel(), data, config)
        assert accuracy == 1.0
        assert np.array_equal(cm.counts, np.diag([20] * 10))

    def test_row_sums_are_per_class_counts(self):
        data = planted_dataset(20, "test")
        config = TrainConfig(filter_on=False)
        _, cm = evaluate(StubModel(rng=np.random.default_rng(0)), data, config)
        np.testing.assert_array_equal(cm.row_sums, np.full(10, 20))

    def test_random_predictor_near_chance(self):
        data = planted_dataset(20, "test")
        config = TrainConfig(filter_on=False)
        accuracy, _ = evaluate(StubModel(rng=np.random.default_rng(1)), data, config)
        assert abs(accuracy - 0.10) <= 0.07

    def test_empty_test_split_rejected(self):
        data = planted_dataset(2, "train")
        with pytest.raises(ValueError):
            evaluate(StubModel(), data, TrainConfig(filter_on=False))

    def test_accuracy_equals_confusion_trace_ratio(self):
        data = planted_dataset(5, "test")
        config = TrainConfig(filter_on=False)
        accuracy, cm = evaluate(StubModel(rng=np.random.default_rng(2)), data, config)
        assert accuracy == pytest.approx(cm.accuracy)

    def test_argmax_shift_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            logits = rng.normal(size=10)
            assert np.argmax(logits) == np.argmax(logits + 17.3)


class TestTrain:
    def small_dataset(self, per_class=1, tag="train"):
        return planted_dataset(per_class, tag, seed=4)

    def test_zero_learning_rate_keeps_parameters(self):
        model = build_model(SeResNet1dConfig(), seed=0)
        before = {k: v.copy() for k, v in model.param_set().params.items()}
        config = TrainConfig(epochs=1, seed=0, lr=0.0, filter_on=False)
        train(model, self.small_dataset(), config)
        after = model.param_set().params
        for name in before:
            assert np.array_equal(before[name], after[name]), name

    def test_empty_training_split_rejected(self):
        model = build_model(SeResNet1dConfig(), seed=0)
        with pytest.raises(ValueError):
            train(model, self.small_dataset(tag="test"), TrainConfig(epochs=1))

    def test_history_shape_and_nan_validation_without_test_split(self):
        model = build_model(SeResNet1dConfig(), seed=0)
        config = TrainConfig(epochs=2, seed=0, filter_on=False,
                             augment=NO_AUGMENT)
        _, history = train(model, self.small_dataset(), config)
        assert [row["epoch"] for row in history] == [1, 2]
        assert all(math.isnan(row["val_accuracy"]) for row in history)
        assert all(np.isfinite(row["loss"]) for row in history)

    def test_same_seed_reproduces_history_and_parameters(self):
        data = planted_dataset(2, "train", seed=5)
        data.split_tags[:5] = ["test"] * 5
        runs = []
        for _ in range(2):
            model = build_model(SeResNet1dConfig(), seed=3)
            config = TrainConfig(epochs=2, seed=11, filter_on=False)
            _, history = train(model, data, config)
            checksum = sum(float(np.sum(p)) for p in model.param_set().params.values())
            runs.append((history, checksum))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]

    def test_overfits_a_tiny_training_set(self):
        rng = np.random.default_rng(6)
        segments = [planted_segment(label, rng)
                    for label in (1, 2) for _ in range(5)]
        # planted constants die in the bandpass; give the classes real texture
        for s in segments:
            tone = 0.3 * np.sin(2 * np.pi * (60 if s.label == 1 else 180)
                                * np.arange(3000) / 1000.0)
            s.data = (s.data + tone.astype(np.float32) * (1 + 0.05 * rng.random())).astype(np.float32)
        data = Dataset(segments, ["train"] * 10)
        model = build_model(SeResNet1dConfig(), seed=0)
        config = TrainConfig(epochs=30, seed=0, augment=NO_AUGMENT)
        train(model, data, config)
        as_test = Dataset(segments, ["test"] * 10)
        accuracy, _ = evaluate(model, as_test, config)
        assert accuracy == 1.0


class TestAblationHarness:
    def test_arm_configs_differ_only_in_the_flag_under_test(self):
        base = TrainConfig(epochs=3, seed=9)
        arms = _arm_configs(base)
        assert set(arms) == {"baseline", "no_filter", "channel_1",
                             "channel_2", "channel_3", "channel_4"}
        assert arms["baseline"] == base
        assert arms["no_filter"] == dataclasses.replace(base, filter_on=False)
        for c in range(4):
            arm = arms[f"channel_{c + 1}"]
            assert arm.channel_mask == tuple(i == c for i in range(4))
            assert arm.filter_on == base.filter_on
            assert arm.seed == base.seed

    def test_report_structure_via_untrained_arms(self):
        data = planted_dataset(3, "train", seed=7)
        tags = data.split_tags
        for i in range(0, len(tags), 3):
            tags[i] = "test"
        base = TrainConfig(epochs=0, seed=0, filter_on=False)
        report = ablate(data, base)
        assert set(report.accuracies) == set(report.confusions)
        assert all(0.0 <= a <= 1.0 for a in report.accuracies.values())
        assert report.best_single_channel.startswith("channel_")
        assert report.single_channel_best_accuracy == max(
            report.accuracies[f"channel_{c}"] for c in range(1, 5))
        assert report.seed == 0


class TestExtractFeatures:
    def test_width_matches_head(self):
        model = build_model(SeResNet1dConfig(), seed=0)
        segs = [np.zeros((4, 3000), dtype=np.float32) for _ in range(3)]
        feats = extract_features(model, segs)
        assert feats.shape == (3, 64)

    def test_duplicate_segments_give_duplicate_rows(self):
        model = build_model(SeResNet1dConfig(), seed=1)
        seg = np.random.default_rng(2).normal(size=(4, 3000)).astype(np.float32)
        feats = extract_features(model, [seg, seg])
        np.testing.assert_array_equal(feats[0], feats[1])

    def test_zero_model_zero_features(self):
        model = build_model(SeResNet1dConfig(), seed=3)
        for p in model.param_set().params.values():
            p[...] = 0.0
        feats = extract_features(model, [np.zeros((4, 3000), dtype=np.float32)])
        np.testing.assert_array_equal(feats, np.zeros((1, 64)))

    def test_batching_is_invisible(self):
        model = build_model(SeResNet1dConfig(), seed=4)
        rng = np.random.default_rng(5)
        segs = [rng.normal(size=(4, 3000)).astype(np.float32) for _ in range(70)]
        feats = extract_features(model, segs)
        direct = model.features(np.stack(segs[64:]), mode="eval")
        np.testing.assert_array_equal(feats[64:], direct)


class TestTsne:
    def test_separated_clusters_stay_separated(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(100, 64))
        b = rng.normal(size=(100, 64))
        b[:, 0] += 20.0
        feats = np.vstack([a, b])
        labels = np.array([1] * 100 + [2] * 100)
        emb = tsne_embed(feats, labels, perplexity=30, iters=500, seed=0)
        assert separability_score(emb) >= 0.95

    def test_perplexity_calibration(self):
        rng = np.random.default_rng(1)
        feats = rng.normal(size=(120, 16))
        p, _ = calibrated_affinities(feats, perplexity=30.0)
        for i in range(120):
            row = p[i][p[i] > 0]
            perp = np.exp(-(row * np.log(row)).sum())
            assert abs(perp - 30.0) / 30.0 < 0.01

    def test_duplicate_rows_do_not_produce_nan(self):
        feats = np.tile(np.arange(8.0), (100, 1))
        emb = tsne_embed(feats, np.ones(100, dtype=int), perplexity=20,
                         iters=300, seed=2)
        assert np.all(np.isfinite(emb.points))

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            tsne_embed(np.zeros((50, 4)), np.zeros(50), perplexity=30)

    def test_seeded_determinism(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(100, 8))
        labels = np.arange(100) % 5
        a = tsne_embed(feats, labels, perplexity=10, iters=120, seed=7)
        b = tsne_embed(feats, labels, perplexity=10, iters=120, seed=7)
        np.testing.assert_array_equal(a.points, b.points)

    def test_bad_source_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingResult(np.zeros((3, 2)), np.zeros(3), "guess")


class TestSeparability:
    def test_single_class_scores_one(self):
        emb = EmbeddingResult(np.random.default_rng(0).normal(size=(20, 2)),
                              np.ones(20), "deep_feature")
        assert separability_score(emb) == 1.0

    def test_shuffled_labels_score_near_chance(self):
        rng = np.random.default_rng(4)
        points = rng.normal(size=(200, 2))
        labels = np.repeat(np.arange(1, 11), 20)
        rng.shuffle(labels)
        emb = EmbeddingResult(points, labels, "raw_input")
        assert abs(separability_score(emb) - 0.10) <= 0.05

    def test_tight_clusters_score_one(self):
        centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
        rng = np.random.default_rng(5)
        points = np.vstack([c + 0.01 * rng.normal(size=(30, 2)) for c in centers])
        labels = np.repeat([1, 2, 3], 30)
        emb = EmbeddingResult(points, labels, "deep_feature")
        assert separability_score(emb) == 1.0


class TestCsvWriters:
    def test_metrics_csv(self, tmp_path):
        history = [{"epoch": 1, "loss": 2.5, "val_accuracy": 0.25},
                   {"epoch": 2, "loss": 1.25, "val_accuracy": 0.5}]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(history, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss,val_accuracy"
        assert lines[1] == "1,2.500000,0.2500"
        assert lines[2] == "2,1.250000,0.5000"

    def test_confusion_csv(self, tmp_path):
        cm = ConfusionMatrix(np.array([[3, 1], [0, 4]]))
        path = tmp_path / "confusion.csv"
        write_confusion_csv(cm, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "true\\pred,1,2"
        assert lines[1] == "1,3,1"
        assert lines[2] == "2,0,4"

    def test_ablation_csv(self, tmp_path):
        report = AblationReport(
            {"baseline": 0.9, "no_filter": 0.6, "channel_1": 0.5,
             "channel_2": 0.4, "channel_3": 0.3, "channel_4": 0.2},
            {}, seed=0)
        path = tmp_path / "ablation.csv"
        write_ablation_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "arm,accuracy"
        assert lines[1] == "baseline,0.9000"
        assert lines[-1] == "single_channel_best,0.5000"

    def test_embedding_csv_roundtrip_is_stable(self, tmp_path):
        emb = EmbeddingResult(np.array([[1.5, -2.25], [0.125, 3.0]]),
                              np.array([1, 2]), "deep_feature")
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        write_embedding_csv(emb, a)
        write_embedding_csv(emb, b)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_text().splitlines()[0] == "x,y,label"
