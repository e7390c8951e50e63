from typing import Any, Dict, Optional, TypedDict

import numpy as np

from avae.controller import ControllerStep, EquilibriumController
from avae.discriminator import DiscModel, DiscPass
from avae.generator import GaussianParams, VaeModel
from avae.models import LossBundle, TrainConfig
from avae.optim import Adam
from avae.tensor import Tensor


class TrainStepState(TypedDict, total=False):
    # input
    iteration: int
    batch: Tensor
    rng: np.random.Generator
    vae: VaeModel
    disc: DiscModel
    controller: EquilibriumController
    optimizers: Dict[str, Adam]
    train_config: TrainConfig

    # intermediate
    gaussian: Optional[GaussianParams]
    epsilon: Optional[np.ndarray]
    z_v: Optional[Tensor]
    z_g: Optional[Tensor]
    x_v: Optional[Tensor]
    x_g: Optional[Tensor]
    latents: Optional[tuple]
    disc_pass: Optional[DiscPass]
    losses: Dict[str, Any]
    controller_step: Optional[ControllerStep]

    # output
    bundle: Optional[LossBundle]
    error: Optional[list[str]]
    exception: Optional[BaseException]
