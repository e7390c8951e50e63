"""
avae/layers.py

Parameter containers and the convolutional encoder/decoder stacks shared by the
generator VAE and the discriminator auto-encoder.
Includes:
- Module (named parameters, array export/import)
- Conv2d, Linear
- ConvEncoder (three conv+ELU pairs interleaved with 2x2 mean pooling)
- ConvDecoder (affine seed map, conv+ELU pairs interleaved with nearest-neighbour upsampling)
"""

from typing import Dict, Iterator, List, Tuple

import numpy as np
from scipy.stats import truncnorm

from avae.errors import DimensionError, FormatError
from avae.models import ModelConfig
from avae.tensor import Tensor, conv2d, downsample, elu, flatten, get_dtype, linear, reshape, sigmoid, upsample


def truncated_normal(shape: Tuple[int, ...], std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal draws truncated at two standard deviations."""
    return truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng).astype(get_dtype())


# ============================================================
# Module base
# ============================================================


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [param for _, param in self.named_parameters()]

    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        return {f"{prefix}{name}": param.data for name, param in self.named_parameters()}

    def load_state_arrays(self, prefix: str, arrays: Dict[str, np.ndarray]) -> None:
        for name, param in self.named_parameters():
            key = f"{prefix}{name}"
            if key not in arrays:
                raise FormatError(f"tensor {key} missing from checkpoint")
            value = arrays[key]
            if value.shape != param.shape:
                raise DimensionError(f"tensor {key} has shape {value.shape}, model expects {param.shape}")
            param.data = value.astype(param.data.dtype)
            param.grad = None


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator, std: float):
        self.weight = Tensor(truncated_normal((out_channels, in_channels, kernel_size, kernel_size), std, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True)
        self.padding = kernel_size // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, stride=1, padding=self.padding, bias=self.bias)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, std: float):
        self.weight = Tensor(truncated_normal((in_features, out_features), std, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    def zero_(self) -> None:
        self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class ConvPair(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator, std: float):
        self.conv_a = Conv2d(in_channels, out_channels, kernel_size, rng, std)
        self.conv_b = Conv2d(out_channels, out_channels, kernel_size, rng, std)

    def __call__(self, x: Tensor) -> Tensor:
        return elu(self.conv_b(elu(self.conv_a(x))))


# ============================================================
# Encoder / decoder stacks
# ============================================================


class ConvEncoder(Module):
    """Image [B, C, S, S] -> flattened features [B, widths[-1] * (S / 2^(len(widths)-1))^2]."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.image_size = config.image_size
        self.channels = config.channels
        widths = list(config.widths)
        in_channels = [config.channels] + widths[:-1]
        self.pairs = [ConvPair(c_in, c_out, config.kernel_size, rng, config.init_std) for c_in, c_out in zip(in_channels, widths)]
        self.feature_size = widths[-1] * config.bottleneck_size ** 2

    def __call__(self, x: Tensor) -> Tensor:
        expected = (self.channels, self.image_size, self.image_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"encode: expected images of shape [B, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        h = x
        for i, pair in enumerate(self.pairs):
            h = pair(h)
            if i < len(self.pairs) - 1:
                h = downsample(h)
        return flatten(h)


class ConvDecoder(Module):
    """Latent [B, N] -> image [B, C, S, S] with values in (0, 1)."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.latent_dim = config.latent_dim
        self.seed_channels = config.widths[-1]
        self.seed_size = config.bottleneck_size
        widths = list(reversed(config.widths))
        self.seed = Linear(config.latent_dim, self.seed_channels * self.seed_size ** 2, rng, config.init_std)
        in_channels = [widths[0]] + widths[:-1]
        self.pairs = [ConvPair(c_in, c_out, config.kernel_size, rng, config.init_std) for c_in, c_out in zip(in_channels, widths)]
        self.to_image = Conv2d(widths[-1], config.channels, config.kernel_size, rng, config.init_std)

    def __call__(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise DimensionError(f"decode: expected latents of shape [B, {self.latent_dim}], got {z.shape}")
        h = reshape(self.seed(z), (z.shape[0], self.seed_channels, self.seed_size, self.seed_size))
        for i, pair in enumerate(self.pairs):
            h = pair(h)
            if i < len(self.pairs) - 1:
                h = upsample(h)
        return sigmoid(self.to_image(h))

    def zero_output_(self) -> None:
        self.to_image.weight.data = np.zeros_like(self.to_image.weight.data)
        self.to_image.bias.data = np.zeros_like(self.to_image.bias.data)
