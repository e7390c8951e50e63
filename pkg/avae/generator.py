"""
avae/generator.py

The generator: a convolutional VAE encoder/decoder with a reparametrized
Gaussian latent, producing reconstructions x_v and free samples x_g.
Includes:
- GaussianParams, ReparamSample
- VaeModel (encode, decode)
- reparametrize, data_loss (L_e), kl_loss (L_n), sample_prior (z_g)
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from avae.errors import DimensionError
from avae.layers import ConvDecoder, ConvEncoder, Linear, Module
from avae.models import ModelConfig
from avae.tensor import Tensor, clamp, exp, get_dtype, l1_mean, mean, tensor_sum

LOG_VAR_BOUND = 10.0

SeedLike = Union[int, np.random.Generator, None]


@dataclass
class GaussianParams:
    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise DimensionError(f"GaussianParams: mu {self.mu.shape} and log_var {self.log_var.shape} differ")


@dataclass
class ReparamSample:
    z: Tensor
    epsilon: np.ndarray


class GaussianEncoder(Module):
    """Conv stack followed by affine heads for mu and log-variance."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.body = ConvEncoder(config, rng)
        self.mu_head = Linear(self.body.feature_size, config.latent_dim, rng, config.init_std)
        self.log_var_head = Linear(self.body.feature_size, config.latent_dim, rng, config.init_std)

    def __call__(self, x: Tensor) -> GaussianParams:
        features = self.body(x)
        raw_log_var = self.log_var_head(features)
        return GaussianParams(mu=self.mu_head(features), log_var=clamp(raw_log_var, -LOG_VAR_BOUND, LOG_VAR_BOUND))


class VaeModel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.encoder = GaussianEncoder(config, rng)
        self.decoder = ConvDecoder(config, rng)

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> "VaeModel":
        return cls(config, np.random.default_rng([seed, 0]))

    def encode(self, x: Tensor) -> GaussianParams:
        return self.encoder(x)

    def decode(self, z: Tensor) -> Tensor:
        return self.decoder(z)


# ============================================================
# Sampling
# ============================================================


def _generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def reparametrize(g: GaussianParams, epsilon: Optional[np.ndarray] = None, rng: SeedLike = None) -> ReparamSample:
    """z = mu + epsilon * exp(0.5 * log_var); epsilon is drawn from N(0, I) when not given."""
    if epsilon is None:
        epsilon = _generator(rng).standard_normal(g.mu.shape).astype(g.mu.dtype)
    else:
        epsilon = np.asarray(epsilon.data if isinstance(epsilon, Tensor) else epsilon, dtype=g.mu.dtype)
        if epsilon.shape != g.mu.shape:
            raise DimensionError(f"reparametrize: epsilon shape {epsilon.shape} does not match {g.mu.shape}")
    sigma = exp(g.log_var * 0.5)
    z = g.mu + sigma * Tensor(epsilon, dtype=g.mu.dtype)
    return ReparamSample(z=z, epsilon=epsilon)


def sample_prior(batch: int, latent_dim: int, seed: SeedLike = None) -> Tensor:
    """z_g ~ N(0, I), deterministic given the seed."""
    if batch < 1 or latent_dim < 1:
        raise DimensionError(f"sample_prior: batch and latent width must be >= 1, got {batch}, {latent_dim}")
    return Tensor(_generator(seed).standard_normal((batch, latent_dim)), dtype=get_dtype())


# ============================================================
# Losses
# ============================================================


def data_loss(x: Tensor, x_v: Tensor) -> Tensor:
    """L_e: mean absolute pixel error between x and its VAE reconstruction."""
    return l1_mean(x, x_v)


def kl_loss(g: GaussianParams) -> Tensor:
    """L_n: KL(N(mu, sigma^2) || N(0, I)), summed over latent dims and averaged over the batch."""
    per_dim = g.mu * g.mu + exp(g.log_var) - g.log_var - 1.0
    return mean(tensor_sum(per_dim, axis=1)) * 0.5
