"""
avae/optim.py

Adam optimizer over named Tensor parameters.
Moment estimates and the step counter live in AdamState so a trainer can
checkpoint and restore them exactly.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from avae.errors import DimensionError, FormatError, UsageError
from avae.tensor import Tensor


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """
    Adam with bias correction.

    Parameters are updated by rebinding `param.data` to a new array, so graphs
    built before the update keep the values they were computed with.
    """

    def __init__(self, named_params: List[Tuple[str, Tensor]], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, param in self.params:
            self.state.m[name] = np.zeros_like(param.data)
            self.state.v[name] = np.zeros_like(param.data)

    @property
    def tensors(self) -> List[Tensor]:
        return [param for _, param in self.params]

    def zero_grad(self) -> None:
        for _, param in self.params:
            param.grad = None

    def step(self) -> None:
        missing = [name for name, param in self.params if param.grad is None]
        if missing:
            raise UsageError(f"adam_step: missing gradient for {', '.join(missing)}")

        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        step_size = s.lr / bc1

        for name, param in self.params:
            g = param.grad
            m = s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * g
            v = s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * (g * g)
            update = step_size * m / (np.sqrt(v / bc2) + s.eps)
            param.data = (param.data - update).astype(param.data.dtype, copy=False)
            param.grad = None

    # -----------------------------
    # Persistence
    # -----------------------------
    def state_arrays(self, prefix: str) -> Dict[str, np.ndarray]:
        arrays = {}
        for name, _ in self.params:
            arrays[f"{prefix}.m.{name}"] = self.state.m[name]
            arrays[f"{prefix}.v.{name}"] = self.state.v[name]
        return arrays

    def load_state_arrays(self, prefix: str, arrays: Dict[str, np.ndarray], step: int) -> None:
        for name, param in self.params:
            for moment in ("m", "v"):
                key = f"{prefix}.{moment}.{name}"
                if key not in arrays:
                    raise FormatError(f"optimizer state {key} missing from checkpoint")
                value = arrays[key]
                if value.shape != param.shape:
                    raise DimensionError(f"optimizer state {key} has shape {value.shape}, parameter has {param.shape}")
                getattr(self.state, moment)[name] = value.astype(param.data.dtype)
        self.state.step = step


def adam_step(optimizer: Adam) -> List[Tensor]:
    """Apply one update and return the updated parameters."""
    optimizer.step()
    return optimizer.tensors
