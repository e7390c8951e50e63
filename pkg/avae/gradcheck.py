"""
avae/gradcheck.py

Finite-difference verification of reverse-mode gradients.
Includes:
- grad_check (central differences, maximum relative error)
- run_gradient_suite (every differentiable operation plus the three composite
  losses on a tiny network)
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from avae.discriminator import DiscModel
from avae.errors import NumericError, UsageError
from avae.generator import GaussianParams, VaeModel, kl_loss, reparametrize
from avae.logger import logger
from avae.losses import forward_losses
from avae.models import ModelConfig, TrainConfig
from avae.tensor import (
    Tensor,
    clamp,
    conv2d,
    cross_entropy,
    downsample,
    elu,
    exp,
    l1_mean,
    linear,
    mean,
    precision,
    reshape,
    sigmoid,
    tensor_sum,
    upsample,
)

DEFAULT_STEP = 1e-6
DEFAULT_FLOOR = 1e-5
TOLERANCE = 1e-4


class GradCheckResult(BaseModel):
    name: str
    max_rel_error: float
    coordinates: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _scalar(f: Callable[[], Tensor]) -> Tensor:
    loss = f()
    if loss.size != 1:
        raise UsageError(f"grad_check: loss must be a single value, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("grad_check: loss is not finite")
    return loss


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = DEFAULT_STEP,
    floor: float = DEFAULT_FLOOR,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare reverse-mode gradients of f with central finite differences.

    f rebuilds its graph from the current parameter values on every call.
    Relative error per coordinate is |a - n| / max(|a|, |n|, floor).

    Args:
        max_coords: check at most this many randomly chosen coordinates per parameter.

    Returns:
        The maximum relative error over all checked coordinates.
    """
    params = list(params)
    if any(p.dtype != np.float64 for p in params):
        raise UsageError("grad_check: parameters must be double precision")

    for p in params:
        p.grad = None
    loss = _scalar(f)
    if loss.requires_grad:
        loss.backward(inputs=params)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        coords = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        for i in coords:
            idx = np.unravel_index(i, p.shape)
            original = p.data[idx]
            p.data[idx] = original + h
            plus = _scalar(f).item()
            p.data[idx] = original - h
            minus = _scalar(f).item()
            p.data[idx] = original
            numeric = (plus - minus) / (2.0 * h)
            a = grad.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
        p.grad = None
    return float(worst)


# ============================================================
# Suite
# ============================================================


def _away_from(rng: np.random.Generator, shape, points=(0.0,), margin: float = 1e-2) -> np.ndarray:
    """Uniform draws in [-1, 1] kept at least `margin` away from each kink in `points`."""
    values = rng.uniform(-1.0, 1.0, size=shape)
    for point in points:
        near = np.abs(values - point) < margin
        values = np.where(near, point + np.where(values >= point, margin, -margin), values)
    return values


def _operation_checks(rng: np.random.Generator) -> Dict[str, tuple]:
    x4 = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)), requires_grad=True)
    kernel = Tensor(rng.uniform(-1, 1, (2, 3, 3, 3)), requires_grad=True)
    bias = Tensor(rng.uniform(-1, 1, (2,)), requires_grad=True)
    kinked = Tensor(_away_from(rng, (3, 5), points=(-0.5, 0.0, 0.5)), requires_grad=True)
    plain = Tensor(rng.uniform(-2, 2, (3, 5)), requires_grad=True)
    target = Tensor(plain.data + _away_from(rng, (3, 5)))
    w = Tensor(rng.uniform(-1, 1, (5, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4,)), requires_grad=True)
    coeff = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)))
    conv_coeff = Tensor(rng.uniform(-1, 1, (2, 2, 4, 4)))
    small = Tensor(rng.uniform(-1, 1, (2, 3, 2, 2)), requires_grad=True)
    labels = rng.integers(0, 5, size=3)
    mu = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    log_var = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    epsilon = rng.standard_normal((3, 4))
    toy_x = Tensor(rng.uniform(-1, 1, (1, 1, 4, 4)), requires_grad=True)
    toy_k = Tensor(rng.uniform(-1, 1, (1, 1, 3, 3)), requires_grad=True)
    toy_target = Tensor(rng.uniform(-1, 1, (1, 1, 4, 4)))

    def weighted(t: Tensor, c: Tensor) -> Tensor:
        return tensor_sum(t * c)

    return {
        "conv2d": (lambda: weighted(conv2d(x4, kernel, stride=1, padding=1, bias=bias), conv_coeff), [x4, kernel, bias]),
        "conv2d_strided": (lambda: tensor_sum(conv2d(x4, kernel, stride=2, padding=1) * conv2d(x4, kernel, stride=2, padding=1)), [x4, kernel]),
        "elu": (lambda: tensor_sum(elu(kinked) * plain), [kinked, plain]),
        "sigmoid": (lambda: tensor_sum(sigmoid(plain) * plain), [plain]),
        "exp": (lambda: mean(exp(plain)), [plain]),
        "clamp": (lambda: tensor_sum(clamp(kinked, -0.5, 0.5) * plain), [kinked, plain]),
        "linear": (lambda: tensor_sum(elu(linear(plain, w, b))), [plain, w, b]),
        "downsample": (lambda: weighted(upsample(downsample(x4)), coeff), [x4]),
        "upsample": (lambda: weighted(upsample(small), coeff), [small]),
        "reshape": (lambda: tensor_sum(reshape(x4, (2, 48)) * reshape(coeff, (2, 48))), [x4]),
        "l1_mean": (lambda: l1_mean(plain, target), [plain]),
        "cross_entropy": (lambda: cross_entropy(plain, labels), [plain]),
        "kl_loss": (lambda: kl_loss(GaussianParams(mu=mu, log_var=log_var)), [mu, log_var]),
        "reparametrize": (lambda: tensor_sum(sigmoid(reparametrize(GaussianParams(mu=mu, log_var=log_var), epsilon=epsilon).z)), [mu, log_var]),
        "conv_elu_l1": (lambda: l1_mean(elu(conv2d(toy_x, toy_k, padding=1)), toy_target), [toy_x, toy_k]),
    }


def tiny_model_config() -> ModelConfig:
    return ModelConfig(image_size=8, channels=1, latent_dim=4, widths=(2, 3, 3), kernel_size=3, init_std=0.5)


def _composite_checks(rng: np.random.Generator, seed: int) -> Dict[str, tuple]:
    model = tiny_model_config()
    train = TrainConfig()
    vae = VaeModel.create(model, seed)
    disc = DiscModel.create(model, seed)
    x = Tensor(rng.uniform(0.0, 1.0, (2, model.channels, model.image_size, model.image_size)))
    epsilon = rng.standard_normal((2, model.latent_dim))
    z_g = Tensor(rng.standard_normal((2, model.latent_dim)))
    k = 0.5

    def run():
        return forward_losses(vae, disc, x, epsilon, z_g, k, train)

    return {
        "L_enc": (lambda: run().L_enc, vae.encoder.parameters()),
        "L_gen": (lambda: run().L_gen, vae.decoder.parameters()),
        "L_dis": (lambda: run().L_dis, disc.parameters()),
    }


def run_gradient_suite(seed: int = 0, h: float = DEFAULT_STEP, max_coords: Optional[int] = 64) -> List[GradCheckResult]:
    """
    Check every differentiable operation, then L_enc, L_gen and L_dis on an 8x8, N=4 network.

    Operation checks cover every coordinate; composite checks sample `max_coords`
    coordinates per parameter tensor (None checks them all).
    """
    results: List[GradCheckResult] = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        checks = _operation_checks(rng)
        for name, (f, params) in checks.items():
            error = grad_check(f, params, h=h, seed=seed)
            results.append(GradCheckResult(name=name, max_rel_error=error, coordinates=sum(p.size for p in params)))
            logger.debug(f"grad_check: {name} max rel err {error:.3e}")

        for name, (f, params) in _composite_checks(rng, seed).items():
            error = grad_check(f, params, h=h, max_coords=max_coords, seed=seed)
            coords = sum(p.size if max_coords is None else min(p.size, max_coords) for p in params)
            results.append(GradCheckResult(name=name, max_rel_error=error, coordinates=coords))
            logger.debug(f"grad_check: {name} max rel err {error:.3e}")
    return results
