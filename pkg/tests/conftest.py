from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from avae.data import Dataset, DatasetManifest, ImageEntry
from avae.models import DataConfig, ModelConfig, RunConfig, ScoreConfig, TrainConfig

TINY_SIZE = 8


def tiny_model() -> ModelConfig:
    return ModelConfig(image_size=TINY_SIZE, channels=1, latent_dim=4, widths=(2, 3, 3), kernel_size=3, init_std=0.1)


def tiny_run_config(**train) -> RunConfig:
    settings = dict(batch=4, iterations=3, seed=7, lr=1e-3, log_interval=1)
    settings.update(train)
    return RunConfig(
        model=tiny_model(),
        train=TrainConfig(**settings),
        data=DataConfig(holdout=2, workers=2),
        score=ScoreConfig(widths=(4, 4, 4), epochs=1, batch=8, samples=8),
    )


def make_dataset(count: int = 12, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    images = rng.uniform(0.0, 1.0, (count, 1, TINY_SIZE, TINY_SIZE)).astype(np.float32)
    manifest = DatasetManifest(
        root=Path("."),
        entries=[ImageEntry(filename=f"img_{i:03d}.png") for i in range(count)],
        image_size=TINY_SIZE,
        channels=1,
    )
    return Dataset(manifest=manifest, images=images)


def write_png(path: Path, pixels: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels.astype(np.uint8)).save(path, format="PNG")
    return path


@pytest.fixture
def run_config() -> RunConfig:
    return tiny_run_config()


@pytest.fixture
def dataset() -> Dataset:
    return make_dataset()


@pytest.fixture
def image_folder(tmp_path) -> Path:
    """Ten grey 8x8 PNGs; even-numbered images carry the `bright` attribute."""
    root = tmp_path / "images"
    rng = np.random.default_rng(3)
    rows = ["filename,bright"]
    for i in range(10):
        base = 200 if i % 2 == 0 else 40
        pixels = np.clip(base + rng.integers(-20, 21, (TINY_SIZE, TINY_SIZE)), 0, 255)
        write_png(root / f"face_{i:02d}.png", pixels)
        rows.append(f"face_{i:02d}.png,{1 if i % 2 == 0 else -1}")
    (root / "attributes.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return root


@pytest.fixture
def labeled_folder(tmp_path) -> Path:
    """Two classes of grey 8x8 PNGs: dark and bright."""
    root = tmp_path / "labeled"
    rng = np.random.default_rng(5)
    for name, base in (("bright", 210), ("dark", 30)):
        for i in range(12):
            pixels = np.clip(base + rng.integers(-15, 16, (TINY_SIZE, TINY_SIZE)), 0, 255)
            write_png(root / name / f"{name}_{i:02d}.png", pixels)
    return root


@pytest.fixture
def tiny_ini(tmp_path) -> Path:
    path = tmp_path / "tiny.ini"
    path.write_text(
        "[model]\n"
        "image_size = 8\n"
        "channels = 1\n"
        "latent_dim = 4\n"
        "widths = 2, 3, 3\n"
        "init_std = 0.1\n"
        "\n"
        "[train]\n"
        "batch = 4\n"
        "lr = 0.001\n"
        "\n"
        "[data]\n"
        "holdout = 2\n"
        "workers = 2\n"
        "\n"
        "[score]\n"
        "widths = 4, 4, 4\n"
        "epochs = 1\n"
        "batch = 8\n"
        "samples = 8\n",
        encoding="utf-8",
    )
    return path
