"""
avae/scoring.py

Inception-style sample scoring with a small locally trained classifier.
Includes:
- ClassifierModel (three conv+ELU+pool blocks and a softmax head)
- train_classifier
- inception_score, score_from_probabilities
- sample_diversity (per-pixel spread across samples)
- classifier_to_checkpoint / classifier_from_checkpoint
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import rel_entr

from avae.checkpoint import Checkpoint, CheckpointMeta
from avae.errors import DimensionError, UsageError
from avae.layers import Conv2d, Linear, Module
from avae.logger import logger
from avae.models import ScoreConfig, ScoreReport
from avae.optim import Adam
from avae.tensor import Tensor, cross_entropy, downsample, elu, flatten, softmax
from avae.utils import as_tensor

CLASSIFIER_PREFIX = "classifier."


def _fan_in_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


class ClassifierModel(Module):
    def __init__(
        self,
        image_size: int,
        channels: int,
        classes: int,
        widths: Sequence[int] = (16, 32, 64),
        seed: int = 0,
        class_names: Optional[List[str]] = None,
    ):
        if image_size < 8 or image_size % 8:
            raise DimensionError(f"classifier: image size must be a multiple of 8, got {image_size}")
        if classes < 2:
            raise UsageError(f"classifier: needs at least 2 classes, got {classes}")
        rng = np.random.default_rng([seed, 3])
        self.image_size = image_size
        self.channels = channels
        self.classes = classes
        self.widths = tuple(widths)
        self.class_names = class_names or [str(i) for i in range(classes)]
        self.accuracy: Optional[float] = None
        in_channels = [channels] + list(widths[:-1])
        self.blocks = [Conv2d(c_in, c_out, 3, rng, _fan_in_std(9 * c_in)) for c_in, c_out in zip(in_channels, widths)]
        features = widths[-1] * (image_size // 8) ** 2
        self.head = Linear(features, classes, rng, _fan_in_std(features))

    def logits(self, x: Tensor) -> Tensor:
        expected = (self.channels, self.image_size, self.image_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"classifier: expected images of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        h = x
        for block in self.blocks:
            h = downsample(elu(block(h)))
        return self.head(flatten(h))

    def predict_proba(self, images: np.ndarray, chunk: int = 128) -> np.ndarray:
        """p(y|x) per row, in double precision."""
        parts = [softmax(self.logits(as_tensor(images[i:i + chunk])).data.astype(np.float64)) for i in range(0, images.shape[0], chunk)]
        return np.concatenate(parts)

    def accuracy_on(self, images: np.ndarray, labels: np.ndarray) -> float:
        if images.shape[0] == 0:
            raise UsageError("classifier: no images to evaluate")
        return float(np.mean(self.predict_proba(images).argmax(axis=1) == labels))


# ============================================================
# Training
# ============================================================


def holdout_split(count: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 4]).permutation(count)
    held = min(count - 1, max(1, round(fraction * count)))
    return order[held:], order[:held]


def train_classifier(
    images: np.ndarray, labels: np.ndarray, config: Optional[ScoreConfig] = None, class_names: Optional[List[str]] = None
) -> ClassifierModel:
    """
    Fit a ClassifierModel with cross-entropy and Adam.

    The achieved held-out accuracy is stored on the model; falling short of
    config.target_accuracy is reported as a warning.
    """
    config = config or ScoreConfig()
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise DimensionError(f"train_classifier: {images.shape[0]} images for {labels.shape[0]} labels")
    present = np.unique(labels)
    if present.size < 2:
        raise UsageError(f"train_classifier: needs at least 2 classes, found {present.size}")
    if images.shape[0] < 2:
        raise UsageError("train_classifier: needs at least 2 images")

    classes = int(labels.max()) + 1
    if class_names is not None and len(class_names) != classes:
        raise UsageError(f"train_classifier: {len(class_names)} class names for {classes} classes")
    model = ClassifierModel(images.shape[2], images.shape[1], classes, config.widths, config.seed, class_names)
    optimizer = Adam(model.named_parameters(CLASSIFIER_PREFIX), lr=config.lr)

    train_idx, held_idx = holdout_split(images.shape[0], config.holdout_fraction, config.seed)
    for epoch in range(config.epochs):
        order = train_idx[np.random.default_rng([config.seed, epoch, 5]).permutation(train_idx.size)]
        total = 0.0
        for start in range(0, order.size, config.batch):
            rows = order[start:start + config.batch]
            loss = cross_entropy(model.logits(as_tensor(images[rows])), labels[rows])
            loss.backward(inputs=optimizer.tensors)
            optimizer.step()
            total += loss.item() * rows.size
        logger.debug(f"train_classifier: epoch {epoch + 1}/{config.epochs} loss {total / order.size:.4f}")

    model.accuracy = model.accuracy_on(images[held_idx], labels[held_idx])
    if model.accuracy < config.target_accuracy:
        logger.warning(f"train_classifier: held-out accuracy {model.accuracy:.3f} below target {config.target_accuracy:.3f}")
    else:
        logger.info(f"train_classifier: held-out accuracy {model.accuracy:.3f} on {held_idx.size} images")
    return model


# ============================================================
# Scores
# ============================================================


def score_from_probabilities(probs: np.ndarray, splits: int = 1, label: str = "generated") -> ScoreReport:
    """exp(E_x KL(p(y|x) || p(y))) per split, p(y) being the split mean."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise DimensionError(f"inception_score: expected [samples, classes] probabilities, got {probs.shape}")
    if splits < 1 or probs.shape[0] < splits:
        raise UsageError(f"inception_score: {probs.shape[0]} samples cannot fill {splits} splits")

    classes = probs.shape[1]
    scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = rel_entr(part, marginal).sum(axis=1).mean()
        scores.append(float(np.exp(np.clip(kl, 0.0, np.log(classes)))))
    return ScoreReport(
        score=float(np.mean(scores)),
        std=float(np.std(scores)),
        split_scores=scores,
        splits=splits,
        samples=probs.shape[0],
        classes=classes,
        label=label,
    )


def inception_score(samples: np.ndarray, model: ClassifierModel, splits: int = 1, label: str = "generated") -> ScoreReport:
    if samples.shape[0] < splits:
        raise UsageError(f"inception_score: {samples.shape[0]} samples cannot fill {splits} splits")
    return score_from_probabilities(model.predict_proba(samples), splits, label)


def sample_diversity(images: np.ndarray) -> float:
    """Mean over pixels of the standard deviation across samples; near 0 means a collapsed generator."""
    images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
    if images.shape[0] < 2:
        raise UsageError("sample_diversity: needs at least 2 samples")
    return float(images.std(axis=0).mean())


# ============================================================
# Persistence
# ============================================================


def classifier_to_checkpoint(model: ClassifierModel) -> Checkpoint:
    meta = CheckpointMeta(
        kind="classifier",
        extra={
            "image_size": model.image_size,
            "channels": model.channels,
            "classes": model.classes,
            "widths": list(model.widths),
            "class_names": model.class_names,
            "accuracy": model.accuracy,
        },
    )
    return Checkpoint(meta=meta, tensors=model.state_arrays(CLASSIFIER_PREFIX))


def classifier_from_checkpoint(checkpoint: Checkpoint) -> ClassifierModel:
    meta = checkpoint.meta
    if meta.kind != "classifier":
        raise UsageError(f"expected a classifier checkpoint, got a {meta.kind} checkpoint")
    extra = meta.extra
    model = ClassifierModel(extra["image_size"], extra["channels"], extra["classes"], extra["widths"], class_names=extra["class_names"])
    model.load_state_arrays(CLASSIFIER_PREFIX, checkpoint.tensors)
    model.accuracy = extra.get("accuracy")
    return model
