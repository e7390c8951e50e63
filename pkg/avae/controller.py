"""
avae/controller.py

Equilibrium control between generator and discriminator.
Includes:
- ControllerState (k_t, error history, gains, eta, alpha)
- error_signal, update_k, diversity_ratio, convergence_measure
- EquilibriumController (per-step driver with running loss means and optional adaptive eta)
- simulate_integrating_plant, settling_step, peak_overshoot (synthetic plant diagnostics)
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from avae.errors import NumericError
from avae.models import ControllerMode, TrainConfig

ETA_FLOOR = 1e-6


class ControllerState(BaseModel):
    k: float = Field(0.0, ge=0, le=1, description="Equilibrium gain k_t")
    e_prev: float = Field(0.0, description="e_{t-1}")
    e_prev2: float = Field(0.0, description="e_{t-2}")
    lambda1: float = Field(1e-3, ge=0)
    lambda2: float = Field(1e-5, ge=0)
    lambda3: float = Field(1e-5, ge=0)
    eta: float = Field(0.5, gt=0, le=1, description="Diversity factor")
    alpha: float = Field(0.3, ge=0)
    literal_error_sign: bool = False


def gains_for_mode(mode: ControllerMode, lambda1: float, lambda2: float, lambda3: float) -> Tuple[float, float, float]:
    """integral keeps only lambda1; proportional drops the differential lambda3."""
    if mode == "integral":
        return lambda1, 0.0, 0.0
    if mode == "proportional":
        return lambda1, lambda2, 0.0
    return lambda1, lambda2, lambda3


def initial_state(config: TrainConfig) -> ControllerState:
    lambda1, lambda2, lambda3 = gains_for_mode(config.controller_mode, config.lambda1, config.lambda2, config.lambda3)
    return ControllerState(
        k=config.k0,
        lambda1=lambda1,
        lambda2=lambda2,
        lambda3=lambda3,
        eta=config.eta,
        alpha=config.alpha,
        literal_error_sign=config.literal_error_sign,
    )


# ============================================================
# Pure update rules
# ============================================================


def _check_finite(**values: float) -> None:
    bad = [f"{name}={value!r}" for name, value in values.items() if not math.isfinite(value)]
    if bad:
        raise NumericError(f"controller: non-finite loss {', '.join(bad)}")


def error_signal(L_d: float, L_g: float, L_v: float, state: ControllerState) -> float:
    """e_t = eta*L_d - (L_g + alpha*L_v), or eta*L_d - L_g + alpha*L_v with the literal sign."""
    _check_finite(L_d=L_d, L_g=L_g, L_v=L_v)
    if state.literal_error_sign:
        return state.eta * L_d - L_g + state.alpha * L_v
    return state.eta * L_d - (L_g + state.alpha * L_v)


def update_k(e_t: float, state: ControllerState) -> ControllerState:
    k = (
        state.k
        + state.lambda1 * e_t
        + state.lambda2 * (e_t - state.e_prev)
        + state.lambda3 * (e_t + state.e_prev2 - 2.0 * state.e_prev)
    )
    return state.model_copy(update={"k": min(max(k, 0.0), 1.0), "e_prev": e_t, "e_prev2": state.e_prev})


def diversity_ratio(mean_L_g: float, mean_L_v: float, mean_L_d: float, alpha: float) -> float:
    """(E[L_g] + alpha*E[L_v]) / E[L_d]."""
    if mean_L_d == 0:
        raise NumericError("diversity_ratio: E[L_d] is zero")
    return (mean_L_g + alpha * mean_L_v) / mean_L_d


def convergence_measure(L_d: float, L_g: float, L_v: float, eta: float, alpha: float) -> float:
    return L_d + abs(eta * L_d - L_g - alpha * L_v)


# ============================================================
# Stateful driver
# ============================================================


@dataclass
class ControllerStep:
    e_t: float
    k_prev: float
    k_t: float
    M: float
    eta: float
    ratio: Optional[float]


class EquilibriumController:
    """
    Owns the ControllerState for a training run.

    Running means of L_g, L_v and L_d are exponential moving averages; they feed
    the logged diversity ratio and, when adaptive_eta is on, replace eta each step.
    """

    def __init__(self, config: TrainConfig):
        self.state = initial_state(config)
        self.adaptive_eta = config.adaptive_eta
        self.decay = config.eta_decay
        self.running: Dict[str, float] = {}

    @property
    def k(self) -> float:
        return self.state.k

    def _update_running(self, L_d: float, L_g: float, L_v: float) -> None:
        for name, value in (("L_d", L_d), ("L_g", L_g), ("L_v", L_v)):
            previous = self.running.get(name)
            self.running[name] = value if previous is None else self.decay * previous + (1.0 - self.decay) * value

    def ratio(self) -> Optional[float]:
        if not self.running or self.running["L_d"] <= 0:
            return None
        return diversity_ratio(self.running["L_g"], self.running["L_v"], self.running["L_d"], self.state.alpha)

    def step(self, L_d: float, L_g: float, L_v: float) -> ControllerStep:
        _check_finite(L_d=L_d, L_g=L_g, L_v=L_v)
        self._update_running(L_d, L_g, L_v)
        ratio = self.ratio()
        if self.adaptive_eta and ratio is not None:
            self.state = self.state.model_copy(update={"eta": min(max(ratio, ETA_FLOOR), 1.0)})

        k_prev = self.state.k
        e_t = error_signal(L_d, L_g, L_v, self.state)
        self.state = update_k(e_t, self.state)
        M = convergence_measure(L_d, L_g, L_v, self.state.eta, self.state.alpha)
        return ControllerStep(e_t=e_t, k_prev=k_prev, k_t=self.state.k, M=M, eta=self.state.eta, ratio=ratio)

    # -----------------------------
    # Persistence
    # -----------------------------
    def state_dict(self) -> dict:
        return {"state": self.state.model_dump(), "running": dict(self.running)}

    def load_state_dict(self, payload: dict) -> None:
        self.state = ControllerState(**payload["state"])
        self.running = {name: float(value) for name, value in payload.get("running", {}).items()}


# ============================================================
# Synthetic plant
# ============================================================


@dataclass
class PlantTrace:
    errors: List[float] = field(default_factory=list)
    gains: List[float] = field(default_factory=list)


def simulate_integrating_plant(
    state: ControllerState,
    steps: int,
    L_d: float = 10.0,
    fake_loss: float = 4.0,
    rate: float = 10.0,
    k_target: float = 0.5,
) -> PlantTrace:
    """
    Close the loop around F_t = F_{t-1} + rate * (k_{t-1} - k_target).

    F plays L_g (L_v is held at zero); the fake-side loss rises with k, so the
    error eta*L_d - F falls with k. trace.errors[0] is e_1, trace.gains[i] is k after e_{i+1}.
    """
    trace = PlantTrace()
    F = fake_loss
    for _ in range(steps):
        F = F + rate * (state.k - k_target)
        e_t = error_signal(L_d, F, 0.0, state)
        state = update_k(e_t, state)
        trace.errors.append(e_t)
        trace.gains.append(state.k)
    return trace


def settling_step(errors: List[float], fraction: float = 0.01) -> Optional[int]:
    """First 1-based step after which every |e_t| stays below fraction * |e_1|; None if never."""
    if not errors:
        return None
    threshold = fraction * abs(errors[0])
    settled = None
    for t in range(len(errors), 0, -1):
        if abs(errors[t - 1]) >= threshold:
            break
        settled = t
    return settled


def peak_overshoot(errors: List[float]) -> float:
    """Largest excursion of the error past zero, opposite to the sign of e_1."""
    if not errors or errors[0] == 0:
        return 0.0
    direction = 1.0 if errors[0] > 0 else -1.0
    return max(0.0, max(-direction * e for e in errors))
