import math
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from avae.errors import NumericError

ControllerMode = Literal["pid", "integral", "proportional"]

METRIC_COLUMNS = ["iter", "L_e", "L_n", "L_d", "L_g", "L_v", "L_s", "L_dis", "L_gen", "L_enc", "e_t", "k_t", "M"]


def _split_ints(value):
    if isinstance(value, str):
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    return value


# ============================================================
# Configuration
# ============================================================


class ModelConfig(BaseModel):
    """Architecture shared by the generator VAE and the discriminator auto-encoder."""
    model_config = ConfigDict(extra="forbid")

    image_size: int = Field(32, description="Square input size; a power of two >= 8")
    channels: int = Field(3, description="1 (grey) or 3 (RGB)")
    latent_dim: int = Field(64, ge=1, description="Latent width N of both auto-encoders")
    widths: Tuple[int, ...] = Field((32, 64, 128), description="Filter count of each conv+ELU pair")
    kernel_size: int = Field(3, ge=1, description="Odd convolution kernel size")
    init_std: float = Field(0.02, gt=0, description="Std of truncated-normal kernel initialization")

    @field_validator("widths", mode="before")
    @classmethod
    def parse_widths(cls, v):
        return _split_ints(v)

    @field_validator("image_size")
    @classmethod
    def check_power_of_two(cls, v: int) -> int:
        if v < 8 or v & (v - 1):
            raise ValueError(f"image_size must be a power of two >= 8, got {v}")
        return v

    @field_validator("channels")
    @classmethod
    def check_channels(cls, v: int) -> int:
        if v not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {v}")
        return v

    @field_validator("kernel_size")
    @classmethod
    def check_odd_kernel(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {v}")
        return v

    @model_validator(mode="after")
    def check_fits_image(self) -> "ModelConfig":
        if not self.widths or any(w < 1 for w in self.widths):
            raise ValueError("widths must list at least one positive filter count")
        if self.image_size % (2 ** (len(self.widths) - 1)):
            raise ValueError(f"image_size {self.image_size} cannot be pooled {len(self.widths) - 1} times")
        return self

    @property
    def bottleneck_size(self) -> int:
        return self.image_size // 2 ** (len(self.widths) - 1)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.3, ge=0, description="Weight of the VAE-reconstruction energy L_v")
    beta: float = Field(0.1, ge=0, description="Weight of the latent similarity L_s")
    gamma: float = Field(0.1, ge=0, description="Weight of the data loss L_e")
    eta: float = Field(0.5, gt=0, le=1, description="Diversity factor")
    lambda1: float = Field(1e-3, ge=0, description="Integral gain")
    lambda2: float = Field(1e-5, ge=0, description="Proportional gain")
    lambda3: float = Field(1e-5, ge=0, description="Differential gain")
    k0: float = Field(0.0, ge=0, le=1, description="Initial equilibrium gain")
    controller_mode: ControllerMode = Field("pid", description="pid, integral (lambda2=lambda3=0) or proportional (lambda3=0)")
    adaptive_eta: bool = Field(False, description="Re-estimate eta every step from running loss means")
    eta_decay: float = Field(0.99, gt=0, lt=1, description="Decay of the running loss means")
    lr: float = Field(5e-5, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    batch: int = Field(16, ge=1)
    iterations: int = Field(2000, ge=0)
    seed: int = Field(0, ge=0)
    checkpoint_interval: int = Field(1000, ge=1)
    metrics_interval: int = Field(1, ge=1)
    log_interval: int = Field(100, ge=1, description="Steps between progress log lines")
    literal_fake_energy: bool = Field(False, description="L_g = mean|x - x'_g| instead of mean|x_g - x'_g|")
    literal_error_sign: bool = Field(False, description="e_t = eta*L_d - L_g + alpha*L_v instead of eta*L_d - (L_g + alpha*L_v)")


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: Optional[Path] = Field(None, description="Folder of equal-sized 8-bit images")
    attributes: Optional[Path] = Field(None, description="Attribute CSV; defaults to <root>/attributes.csv when present")
    resize: bool = Field(False, description="Center-crop and resize images to model.image_size")
    holdout: int = Field(64, ge=0, description="Images held out for reconstruction tracking")
    workers: int = Field(4, ge=1, description="Image decoding threads")


class ScoreConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    widths: Tuple[int, int, int] = Field((16, 32, 64), description="Filters of the three classifier conv blocks")
    epochs: int = Field(10, ge=1)
    lr: float = Field(1e-3, gt=0)
    batch: int = Field(32, ge=1)
    holdout_fraction: float = Field(0.2, gt=0, lt=1)
    splits: int = Field(1, ge=1)
    samples: int = Field(1000, ge=1)
    target_accuracy: float = Field(0.9, ge=0, le=1)
    seed: int = Field(0, ge=0)

    @field_validator("widths", mode="before")
    @classmethod
    def parse_widths(cls, v):
        return _split_ints(v)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    score: ScoreConfig = Field(default_factory=ScoreConfig)


# ============================================================
# Results
# ============================================================


class LossBundle(BaseModel):
    """Scalars of one training step, in metrics-log column order."""
    iteration: int
    L_e: float
    L_n: float
    L_d: float
    L_g: float
    L_v: float
    L_s: float
    L_dis: float
    L_gen: float
    L_enc: float
    e_t: float
    k_t: float
    M: float

    def row(self) -> List[str]:
        values = [self.iteration] + [getattr(self, name) for name in METRIC_COLUMNS[1:]]
        return [repr(v) for v in values]

    def dump(self) -> str:
        return ", ".join(f"{name}={value!r}" for name, value in self.model_dump().items())

    def check(self) -> None:
        values = self.model_dump()
        bad = [name for name, value in values.items() if not math.isfinite(value)]
        if bad:
            raise NumericError(f"non-finite {', '.join(bad)} at iteration {self.iteration}: {self.dump()}")


class ScoreReport(BaseModel):
    score: float
    std: float
    split_scores: List[float]
    splits: int
    samples: int
    classes: int
    label: str = "generated"

    def render(self) -> str:
        lines = [
            f"label: {self.label}",
            f"score: {self.score!r}",
            f"std: {self.std!r}",
            f"splits: {self.splits}",
            f"samples: {self.samples}",
            f"classes: {self.classes}",
            f"split_scores: {', '.join(repr(s) for s in self.split_scores)}",
        ]
        return "\n".join(lines) + "\n"
