import numpy as np
import pytest

from avae.data import load_labeled_dataset
from avae.errors import DimensionError, UsageError
from avae.generator import VaeModel, sample_prior
from avae.latent import decode_latents
from avae.models import ScoreConfig
from avae.scoring import (
    classifier_from_checkpoint,
    classifier_to_checkpoint,
    holdout_split,
    inception_score,
    sample_diversity,
    score_from_probabilities,
    train_classifier,
)

from conftest import tiny_model


def blobs(count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 2
    low = np.where(labels == 0, 0.0, 0.8)[:, None, None, None]
    images = (low + rng.uniform(0.0, 0.2, (count, 1, 8, 8))).astype(np.float32)
    return images, labels


class TestScoreFromProbabilities:
    def test_uniform_scores_one(self):
        assert score_from_probabilities(np.full((20, 10), 0.1)).score == pytest.approx(1.0, abs=1e-9)

    def test_confident_and_balanced_scores_classes(self):
        assert score_from_probabilities(np.eye(10)).score == pytest.approx(10.0, rel=1e-9)

    def test_identical_one_hot_scores_one(self):
        probs = np.zeros((6, 4))
        probs[:, 2] = 1.0
        assert score_from_probabilities(probs).score == pytest.approx(1.0, abs=1e-9)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(5), size=40)
        report = score_from_probabilities(probs, splits=4)
        assert 1.0 <= report.score <= 5.0
        assert len(report.split_scores) == 4

    def test_order_invariant(self):
        probs = np.random.default_rng(1).dirichlet(np.ones(3), size=30)
        a = score_from_probabilities(probs).score
        b = score_from_probabilities(probs[::-1]).score
        assert a == pytest.approx(b, rel=1e-12)

    def test_too_many_splits(self):
        with pytest.raises(UsageError):
            score_from_probabilities(np.full((3, 2), 0.5), splits=4)

    def test_needs_matrix(self):
        with pytest.raises(DimensionError):
            score_from_probabilities(np.full(3, 0.5))

    def test_render(self):
        text = score_from_probabilities(np.eye(3), label="real").render()
        assert text.startswith("label: real\n")
        assert "classes: 3" in text


class TestClassifier:
    def test_separable_classes(self):
        images, labels = blobs(200)
        model = train_classifier(images, labels, ScoreConfig(widths=(4, 4, 4), lr=5e-3, epochs=20, batch=16))
        assert model.accuracy > 0.99
        probs = model.predict_proba(images[:10])
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_shuffled_labels_are_chance(self):
        rng = np.random.default_rng(2)
        images = rng.uniform(0.0, 1.0, (4000, 1, 8, 8)).astype(np.float32)
        labels = rng.integers(0, 2, 4000)
        model = train_classifier(images, labels, ScoreConfig(widths=(4, 4, 4), epochs=1, holdout_fraction=0.5, target_accuracy=0.0))
        assert model.accuracy == pytest.approx(0.5, abs=0.05)

    def test_needs_two_classes(self):
        images, _ = blobs(10)
        with pytest.raises(UsageError):
            train_classifier(images, np.zeros(10, dtype=int))

    def test_label_count_mismatch(self):
        images, labels = blobs(10)
        with pytest.raises(DimensionError):
            train_classifier(images, labels[:5])

    def test_checkpoint_round_trip(self):
        images, labels = blobs(20)
        model = train_classifier(images, labels, ScoreConfig(widths=(4, 4, 4), epochs=1), class_names=["dark", "bright"])
        loaded = classifier_from_checkpoint(classifier_to_checkpoint(model))
        assert loaded.class_names == ["dark", "bright"]
        assert loaded.accuracy == model.accuracy
        np.testing.assert_array_equal(loaded.predict_proba(images), model.predict_proba(images))

    def test_inception_score_on_real_images(self):
        images, labels = blobs(40)
        model = train_classifier(images, labels, ScoreConfig(widths=(4, 4, 4), lr=5e-3, epochs=10, batch=8))
        report = inception_score(images, model, splits=2, label="real")
        assert 1.0 <= report.score <= 2.0 + 1e-9
        assert report.samples == 40

    def test_held_out_images_beat_untrained_generator(self, labeled_folder):
        images, labels, classes = load_labeled_dataset(labeled_folder)
        train, held = holdout_split(images.shape[0], 0.5, seed=0)
        model = train_classifier(images[train], labels[train], ScoreConfig(widths=(4, 4, 4), lr=5e-3, epochs=20, batch=4), class_names=classes)
        real = inception_score(images[held], model, label="real")
        vae = VaeModel.create(tiny_model(), seed=0)
        fakes = decode_latents(vae, sample_prior(held.size, 4, 0).data)
        generated = inception_score(fakes, model)
        assert real.score > generated.score


class TestHoldout:
    def test_disjoint(self):
        train, held = holdout_split(10, 0.3, seed=0)
        assert held.size == 3
        assert sorted(np.concatenate([train, held]).tolist()) == list(range(10))

    def test_keeps_both_sides(self):
        train, held = holdout_split(2, 0.99, seed=0)
        assert train.size == 1 and held.size == 1


class TestSampleDiversity:
    def test_identical_samples(self):
        images = np.tile(np.random.default_rng(0).uniform(size=(1, 1, 4, 4)), (5, 1, 1, 1))
        assert sample_diversity(images) == pytest.approx(0.0, abs=1e-12)

    def test_spread(self):
        images = np.stack([np.zeros((1, 2, 2)), np.ones((1, 2, 2))])
        assert sample_diversity(images) == pytest.approx(0.5)

    def test_needs_two(self):
        with pytest.raises(UsageError):
            sample_diversity(np.zeros((1, 1, 2, 2)))
