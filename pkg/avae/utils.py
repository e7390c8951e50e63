"""
avae/utils.py

Utility functions for the training engine.
Includes:
- step_rng
- epoch_order
- batch_indices
- as_tensor
"""

from typing import Union

import numpy as np

from avae.errors import UsageError
from avae.tensor import Tensor, get_dtype

ORDER_STREAM = 1
HOLDOUT_STREAM = 2


def step_rng(seed: int, iteration: int) -> np.random.Generator:
    """
    Random stream of one training iteration.

    Draw order inside a step is fixed: epsilon [B, N] first, then z_g [B, N].
    """
    return np.random.default_rng([seed, iteration])


def epoch_order(seed: int, epoch: int, count: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch, ORDER_STREAM]).permutation(count)


def batch_indices(seed: int, iteration: int, batch: int, count: int) -> np.ndarray:
    """
    Dataset rows used by `iteration`.

    Each epoch is a fresh permutation; a trailing partial batch is dropped. A dataset
    smaller than one batch yields all of its rows every iteration.
    """
    if count < 1:
        raise UsageError("batch_indices: dataset is empty")
    if batch < 1:
        raise UsageError(f"batch_indices: batch must be >= 1, got {batch}")
    per_epoch = max(1, count // batch)
    epoch, position = divmod(iteration, per_epoch)
    order = epoch_order(seed, epoch, count)
    return order[position * batch:(position + 1) * batch]


def as_tensor(images: Union[np.ndarray, Tensor]) -> Tensor:
    if isinstance(images, Tensor):
        return images
    return Tensor(np.asarray(images), dtype=get_dtype())
