"""
avae/discriminator.py

The discriminator: a plain auto-encoder whose reconstruction error is the energy
of an image, plus the latent-similarity metric between real and reconstructed images.
Includes:
- DiscModel (encode, decode)
- DiscPass
- energies (L_d, L_g, L_v), latent_similarity (L_s)
"""

from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from avae.errors import DimensionError
from avae.layers import ConvDecoder, ConvEncoder, Linear, Module
from avae.models import ModelConfig
from avae.tensor import Tensor, l1_mean


class AutoEncoder(Protocol):
    def encode(self, x: Tensor) -> Tensor: ...

    def decode(self, z: Tensor) -> Tensor: ...


class DiscModel(Module):
    """Same conv family as the generator; the encoder head is a single affine map to z."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.encoder = ConvEncoder(config, rng)
        self.head = Linear(self.encoder.feature_size, config.latent_dim, rng, config.init_std)
        self.decoder = ConvDecoder(config, rng)

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "DiscModel":
        return cls(config, np.random.default_rng([seed, 1]))

    def encode(self, x: Tensor) -> Tensor:
        return self.head(self.encoder(x))

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)


@dataclass
class DiscPass:
    z_d: Tensor
    z_g: Tensor
    z_v: Tensor
    x_d: Tensor
    x_g: Tensor
    x_v: Tensor


def _check_batches(x: Tensor, x_g: Tensor, x_v: Tensor) -> None:
    if not (x.shape == x_g.shape == x_v.shape):
        raise DimensionError(f"energies: image batches differ in shape {x.shape}, {x_g.shape}, {x_v.shape}")


def energies(
    x: Tensor,
    x_g: Tensor,
    x_v: Tensor,
    disc: AutoEncoder,
    latents: Optional[Tuple[Tensor, Tensor, Tensor]] = None,
    literal_fake_energy: bool = False,
) -> Tuple[Tensor, Tensor, Tensor, DiscPass]:
    """
    Reconstruction energies of the real batch, the prior samples and the VAE reconstructions.

    Args:
        latents: (z_d, z'_g, z'_v) from an earlier disc.encode pass; encoded here when omitted.
        literal_fake_energy: measure L_g against the real batch, mean|x - x'_g|.

    Returns:
        (L_d, L_g, L_v, DiscPass)
    """
    _check_batches(x, x_g, x_v)
    if latents is None:
        latents = (disc.encode(x), disc.encode(x_g), disc.encode(x_v))
    z_d, z_g, z_v = latents
    rec_d, rec_g, rec_v = disc.decode(z_d), disc.decode(z_g), disc.decode(z_v)

    L_d = l1_mean(x, rec_d)
    L_g = l1_mean(x, rec_g) if literal_fake_energy else l1_mean(x_g, rec_g)
    L_v = l1_mean(x_v, rec_v)
    return L_d, L_g, L_v, DiscPass(z_d=z_d, z_g=z_g, z_v=z_v, x_d=rec_d, x_g=rec_g, x_v=rec_v)


def latent_similarity(z_d: Tensor, z_v: Tensor) -> Tensor:
    """L_s = (1/N) * batch mean of ||z_d - z'_v||_1, which is the element mean of |z_d - z'_v|."""
    if z_d.ndim != 2:
        raise DimensionError(f"latent_similarity: expected [B, N] latents, got {z_d.shape}")
    return l1_mean(z_d, z_v)
