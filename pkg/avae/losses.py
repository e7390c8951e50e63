"""
avae/losses.py

Composite objectives of the three parameter updates and a single forward pass
that produces every loss of one training step.
"""

from dataclasses import dataclass
from typing import Tuple, TypeVar

import numpy as np

from avae.discriminator import DiscModel, DiscPass, energies, latent_similarity
from avae.generator import GaussianParams, VaeModel, data_loss, kl_loss, reparametrize
from avae.models import TrainConfig
from avae.tensor import Tensor

Scalar = TypeVar("Scalar", float, Tensor)


def encoder_loss(L_e: Scalar, L_n: Scalar, L_s: Scalar, config: TrainConfig) -> Scalar:
    """L_enc = L_n + beta*L_s + gamma*L_e"""
    return L_n + (config.beta * L_s + config.gamma * L_e)


def generator_loss(L_e: Scalar, L_g: Scalar, L_v: Scalar, L_s: Scalar, config: TrainConfig) -> Scalar:
    """L_gen = L_g + alpha*L_v + beta*L_s + gamma*L_e"""
    return (L_g + config.alpha * L_v) + (config.beta * L_s + config.gamma * L_e)


def discriminator_loss(L_d: Scalar, L_g: Scalar, L_v: Scalar, k: float, config: TrainConfig) -> Scalar:
    """L_dis = L_d - k*(L_g + alpha*L_v), k being the gain before this step's controller update."""
    return L_d - k * (L_g + config.alpha * L_v)


def composite_losses(
    L_e: Scalar, L_n: Scalar, L_d: Scalar, L_g: Scalar, L_v: Scalar, L_s: Scalar, k: float, config: TrainConfig
) -> Tuple[Scalar, Scalar, Scalar]:
    """Returns (L_dis, L_gen, L_enc)."""
    return (
        discriminator_loss(L_d, L_g, L_v, k, config),
        generator_loss(L_e, L_g, L_v, L_s, config),
        encoder_loss(L_e, L_n, L_s, config),
    )


@dataclass
class ForwardPass:
    gaussian: GaussianParams
    z_v: Tensor
    x_v: Tensor
    x_g: Tensor
    disc_pass: DiscPass
    L_e: Tensor
    L_n: Tensor
    L_d: Tensor
    L_g: Tensor
    L_v: Tensor
    L_s: Tensor
    L_dis: Tensor
    L_gen: Tensor
    L_enc: Tensor


def forward_losses(
    vae: VaeModel, disc: DiscModel, x: Tensor, epsilon: np.ndarray, z_g: Tensor, k: float, config: TrainConfig
) -> ForwardPass:
    """Run both auto-encoders once and build all six losses and the three composites."""
    gaussian = vae.encode(x)
    z_v = reparametrize(gaussian, epsilon=epsilon).z
    x_v = vae.decode(z_v)
    x_g = vae.decode(z_g)
    latents = (disc.encode(x), disc.encode(x_g), disc.encode(x_v))

    L_e = data_loss(x, x_v)
    L_n = kl_loss(gaussian)
    L_s = latent_similarity(latents[0], latents[2])
    L_d, L_g, L_v, disc_pass = energies(x, x_g, x_v, disc, latents=latents, literal_fake_energy=config.literal_fake_energy)
    L_dis, L_gen, L_enc = composite_losses(L_e, L_n, L_d, L_g, L_v, L_s, k, config)
    return ForwardPass(
        gaussian=gaussian, z_v=z_v, x_v=x_v, x_g=x_g, disc_pass=disc_pass,
        L_e=L_e, L_n=L_n, L_d=L_d, L_g=L_g, L_v=L_v, L_s=L_s,
        L_dis=L_dis, L_gen=L_gen, L_enc=L_enc,
    )
