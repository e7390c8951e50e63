"""
avae/latent.py

Latent-space exploration on a trained generator.
Includes:
- interpolate (linear), slerp (spherical), decode_path
- AttributeVector, build_attribute, apply_attribute
- encode_means, decode_latents
- store_attributes / attributes_from_checkpoint (named records in the checkpoint container)
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from avae.checkpoint import AttributeRecord, Checkpoint
from avae.errors import DimensionError, UsageError
from avae.generator import VaeModel
from avae.tensor import Tensor
from avae.utils import as_tensor

ATTRIBUTE_PREFIX = "attr."

LatentLike = Union[np.ndarray, Tensor, Sequence[float]]


def _vector(z: LatentLike, op: str) -> np.ndarray:
    array = np.asarray(z.data if isinstance(z, Tensor) else z)
    if array.ndim != 1:
        raise DimensionError(f"{op}: expected a latent vector [N], got shape {array.shape}")
    return array


def _same_width(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: latent widths differ ({a.shape[0]} vs {b.shape[0]})")


def _endpoints(z_a: LatentLike, z_b: LatentLike, op: str) -> Tuple[np.ndarray, np.ndarray]:
    """Both endpoints in a shared floating dtype; integer latents are promoted."""
    a, b = _vector(z_a, op), _vector(z_b, op)
    _same_width(a, b, op)
    dtype = np.result_type(a.dtype, b.dtype, np.float32)
    return a.astype(dtype), b.astype(dtype)


# ============================================================
# Interpolation
# ============================================================


def interpolate(z_a: LatentLike, z_b: LatentLike, steps: int) -> List[np.ndarray]:
    """z(t) = (1 - t) * z_a + t * z_b at t = i / (steps - 1); endpoints are exact copies."""
    a, b = _endpoints(z_a, z_b, "interpolate")
    if steps < 2:
        raise UsageError(f"interpolate: steps must be >= 2, got {steps}")
    path = [a.copy()]
    for i in range(1, steps - 1):
        t = i / (steps - 1)
        path.append(((1.0 - t) * a + t * b).astype(a.dtype))
    path.append(b.copy())
    return path


def slerp(z_a: LatentLike, z_b: LatentLike, steps: int) -> List[np.ndarray]:
    """Spherical interpolation; falls back to the linear path for (anti)parallel or zero vectors."""
    a, b = _endpoints(z_a, z_b, "slerp")
    if steps < 2:
        raise UsageError(f"slerp: steps must be >= 2, got {steps}")
    norms = np.linalg.norm(a) * np.linalg.norm(b)
    if norms == 0:
        return interpolate(a, b, steps)
    omega = np.arccos(np.clip(np.dot(a, b) / norms, -1.0, 1.0))
    if np.sin(omega) < 1e-6:
        return interpolate(a, b, steps)
    path = [a.copy()]
    for i in range(1, steps - 1):
        t = i / (steps - 1)
        z = (np.sin((1.0 - t) * omega) * a + np.sin(t * omega) * b) / np.sin(omega)
        path.append(z.astype(a.dtype))
    path.append(b.copy())
    return path


def decode_path(vae: VaeModel, latents: Iterable[LatentLike]) -> np.ndarray:
    """Decode each latent on its own, so every frame equals a direct single-latent decode bitwise."""
    frames = [vae.decode(as_tensor(_vector(z, "decode_path")[None, :])).data[0] for z in latents]
    if not frames:
        raise UsageError("decode_path: no latents")
    return np.stack(frames)


def encode_means(vae: VaeModel, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Encoder means mu_v (epsilon = 0) of [M, C, H, W] images as [M, N]."""
    if images.shape[0] == 0:
        return np.zeros((0, vae.config.latent_dim), dtype=np.float32)
    return np.concatenate([vae.encode(as_tensor(images[i:i + chunk])).mu.data for i in range(0, images.shape[0], chunk)])


def decode_latents(vae: VaeModel, latents: np.ndarray, chunk: int = 64) -> np.ndarray:
    return np.concatenate([vae.decode(as_tensor(latents[i:i + chunk])).data for i in range(0, latents.shape[0], chunk)])


# ============================================================
# Attribute arithmetic
# ============================================================


@dataclass
class AttributeVector:
    name: str
    vector: np.ndarray
    positives: int
    negatives: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32)
        if self.vector.ndim != 1:
            raise DimensionError(f"attribute {self.name}: vector must be [N], got shape {self.vector.shape}")
        if self.positives < 1 or self.negatives < 1:
            raise UsageError(f"attribute {self.name}: needs at least one image with and one without")


def _stack(latents: Iterable[LatentLike], op: str) -> np.ndarray:
    rows = [_vector(z, op) for z in latents]
    if not rows:
        raise UsageError(f"{op}: latent set is empty")
    widths = {row.shape[0] for row in rows}
    if len(widths) != 1:
        raise DimensionError(f"{op}: latent widths differ within a set: {sorted(widths)}")
    return np.stack(rows).astype(np.float64)


def build_attribute(latents_with: Iterable[LatentLike], latents_without: Iterable[LatentLike], name: str) -> AttributeVector:
    """vector = mean(latents_with) - mean(latents_without)."""
    positives = _stack(latents_with, "build_attribute")
    negatives = _stack(latents_without, "build_attribute")
    _same_width(positives[0], negatives[0], "build_attribute")
    vector = positives.mean(axis=0) - negatives.mean(axis=0)
    return AttributeVector(name=name, vector=vector, positives=positives.shape[0], negatives=negatives.shape[0])


def apply_attribute(z: LatentLike, attr: AttributeVector, weight: float = 1.0) -> np.ndarray:
    """
    z + weight * attr.vector, returned in double precision.

    The offset is rounded to single precision before it is added, so applying
    +weight and then -weight restores a single-precision z exactly. Latents from
    encode_means and sample_prior are single precision. A double-precision z is
    restored only to rounding error.
    """
    base = _vector(z, "apply_attribute")
    if base.shape != attr.vector.shape:
        raise DimensionError(f"apply_attribute: latent width {base.shape[0]} does not match attribute {attr.name} ({attr.vector.shape[0]})")
    delta = (weight * attr.vector).astype(np.float32)
    return base.astype(np.float64) + delta.astype(np.float64)


# ============================================================
# Persistence
# ============================================================


def store_attributes(checkpoint: Checkpoint, attributes: Iterable[AttributeVector]) -> Checkpoint:
    for attr in attributes:
        checkpoint.tensors[f"{ATTRIBUTE_PREFIX}{attr.name}"] = attr.vector
        checkpoint.meta.attributes[attr.name] = AttributeRecord(positives=attr.positives, negatives=attr.negatives)
    return checkpoint


def attributes_from_checkpoint(checkpoint: Checkpoint) -> Dict[str, AttributeVector]:
    found = {}
    for name, record in checkpoint.meta.attributes.items():
        key = f"{ATTRIBUTE_PREFIX}{name}"
        if key not in checkpoint.tensors:
            raise UsageError(f"attribute {name} listed in metadata but tensor {key} is missing")
        found[name] = AttributeVector(name=name, vector=checkpoint.tensors[key], positives=record.positives, negatives=record.negatives)
    return found
