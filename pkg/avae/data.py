"""
avae/data.py

Dataset ingestion and image grid emission.
Includes:
- ImageEntry, DatasetManifest, Dataset
- load_dataset (folder of equal-sized 8-bit images, optional attribute table)
- load_labeled_dataset (one subfolder per class)
- prefetch_batches (bounded background batch queue)
- grid_image, save_image_grid
"""

import csv
import math
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel, Field

from avae.errors import DatasetError, StorageError, UsageError
from avae.logger import logger
from avae.models import DataConfig, ModelConfig
from avae.tensor import Tensor
from avae.utils import HOLDOUT_STREAM, batch_indices

IMAGE_SUFFIXES = {".png", ".bmp", ".jpg", ".jpeg", ".gif", ".tif", ".tiff"}
ATTRIBUTE_FILE = "attributes.csv"
EIGHT_BIT_MODES = {"1", "L", "LA", "P", "RGB", "RGBA", "CMYK", "YCbCr"}


class ImageEntry(BaseModel):
    filename: str
    attributes: Dict[str, bool] = Field(default_factory=dict)


class DatasetManifest(BaseModel):
    root: Path
    entries: List[ImageEntry]
    image_size: int
    channels: int
    attribute_names: List[str] = Field(default_factory=list)

    def flagged(self, attribute: str) -> Tuple[List[int], List[int]]:
        """Indices of images with and without `attribute`; images missing from the table are skipped."""
        if attribute not in self.attribute_names:
            raise UsageError(f"attribute {attribute!r} not in table (known: {', '.join(self.attribute_names) or 'none'})")
        positives, negatives = [], []
        for i, entry in enumerate(self.entries):
            if attribute in entry.attributes:
                (positives if entry.attributes[attribute] else negatives).append(i)
        return positives, negatives


@dataclass
class Dataset:
    manifest: DatasetManifest
    images: np.ndarray

    def __len__(self) -> int:
        return self.images.shape[0]

    def split(self, holdout: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """(training images, held-out images); at least one image always stays in training."""
        holdout = max(0, min(holdout, len(self) - 1))
        order = np.random.default_rng([seed, HOLDOUT_STREAM]).permutation(len(self))
        held = np.sort(order[:holdout])
        kept = np.sort(order[holdout:])
        return self.images[kept], self.images[held]


# ============================================================
# Decoding
# ============================================================


def _list_images(folder: Path) -> List[Path]:
    return sorted(
        (p for p in folder.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def _center_square(img: Image.Image) -> Image.Image:
    side = min(img.size)
    left = (img.width - side) // 2
    top = (img.height - side) // 2
    return img.crop((left, top, left + side, top + side))


def _decode(path: Path, channels: int, size: Optional[int], resize: bool) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in EIGHT_BIT_MODES:
                raise DatasetError(f"{path}: mode {img.mode} is not an 8-bit image")
            img = img.convert("L" if channels == 1 else "RGB")
            if resize and size is not None:
                img = _center_square(img).resize((size, size), Image.Resampling.LANCZOS)
    except DatasetError:
        raise
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise DatasetError(f"{path}: cannot decode image ({e})") from e

    pixels = np.asarray(img, dtype=np.uint8)
    if channels == 1:
        pixels = pixels[None, :, :]
    else:
        pixels = pixels.transpose(2, 0, 1)
    return pixels.astype(np.float32) / np.float32(255.0)


def _probe_channels(path: Path) -> int:
    try:
        with Image.open(path) as img:
            return 1 if img.mode in ("1", "L", "LA") else 3
    except (OSError, UnidentifiedImageError) as e:
        raise DatasetError(f"{path}: cannot decode image ({e})") from e


def _decode_all(paths: Sequence[Path], channels: int, size: Optional[int], resize: bool, workers: int) -> np.ndarray:
    with ThreadPoolExecutor(max_workers=workers) as pool:
        arrays = list(pool.map(lambda p: _decode(p, channels, size, resize), paths))

    expected = arrays[0].shape if size is None else (channels, size, size)
    for path, array in zip(paths, arrays):
        if array.shape != expected:
            raise DatasetError(f"{path}: size {array.shape[2]}x{array.shape[1]} differs from expected {expected[2]}x{expected[1]}")
        if array.shape[1] != array.shape[2]:
            raise DatasetError(f"{path}: images must be square, got {array.shape[2]}x{array.shape[1]}")
    return np.stack(arrays).astype(np.float32)


# ============================================================
# Attribute table
# ============================================================


def _parse_flag(value: str, path: Path, line: int) -> bool:
    value = value.strip()
    if value == "1":
        return True
    if value == "-1":
        return False
    raise DatasetError(f"{path}:{line}: attribute flag must be 1 or -1, got {value!r}")


def read_attribute_table(path: Path, filenames: Sequence[str]) -> Tuple[List[str], Dict[str, Dict[str, bool]]]:
    """Parse `filename,<attr>,<attr>...` rows of +-1 flags."""
    known = set(filenames)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as e:
        raise DatasetError(f"{path}: cannot read attribute table ({e})") from e
    if not rows:
        raise DatasetError(f"{path}: attribute table is empty")

    header = [name.strip() for name in rows[0]]
    names = header[1:]
    if not names or len(set(names)) != len(names):
        raise DatasetError(f"{path}: header must list distinct attribute names after the filename column")

    table: Dict[str, Dict[str, bool]] = {}
    for line, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}:{line}: expected {len(header)} columns, got {len(row)}")
        filename = row[0].strip()
        if filename not in known:
            raise DatasetError(f"{path}:{line}: {filename} is not an image of the dataset")
        table[filename] = {name: _parse_flag(value, path, line) for name, value in zip(names, row[1:])}
    return names, table


# ============================================================
# Public loaders
# ============================================================


def load_dataset(root: Union[str, Path], config: Optional[DataConfig] = None, model: Optional[ModelConfig] = None) -> Dataset:
    """
    Load every image under `root` (sorted by name) as float32 [M, C, S, S] in [0, 1].

    With a ModelConfig, images must match its size and channel count (or are
    center-cropped and resized when config.resize is set).
    """
    config = config or DataConfig()
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: dataset folder not found")
    paths = _list_images(root)
    if not paths:
        raise DatasetError(f"{root}: no images found")

    channels = model.channels if model else _probe_channels(paths[0])
    size = model.image_size if model else None
    images = _decode_all(paths, channels, size, config.resize, config.workers)

    filenames = [p.name for p in paths]
    attribute_path = config.attributes or (root / ATTRIBUTE_FILE)
    names: List[str] = []
    table: Dict[str, Dict[str, bool]] = {}
    if config.attributes is not None or attribute_path.exists():
        names, table = read_attribute_table(attribute_path, filenames)

    manifest = DatasetManifest(
        root=root,
        entries=[ImageEntry(filename=name, attributes=table.get(name, {})) for name in filenames],
        image_size=images.shape[2],
        channels=images.shape[1],
        attribute_names=names,
    )
    logger.info(f"load_dataset: {len(filenames)} images of {manifest.image_size}x{manifest.image_size}x{manifest.channels} from {root}")
    return Dataset(manifest=manifest, images=images)


def load_labeled_dataset(
    root: Union[str, Path], config: Optional[DataConfig] = None, model: Optional[ModelConfig] = None
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """One subfolder per class; returns (images, integer labels, class names in sorted order)."""
    config = config or DataConfig()
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: labeled dataset folder not found")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DatasetError(f"{root}: expected one subfolder per class")

    paths: List[Path] = []
    labels: List[int] = []
    for label, name in enumerate(classes):
        found = _list_images(root / name)
        paths.extend(found)
        labels.extend([label] * len(found))
    if not paths:
        raise DatasetError(f"{root}: no images found in class folders")

    channels = model.channels if model else _probe_channels(paths[0])
    size = model.image_size if model else None
    images = _decode_all(paths, channels, size, config.resize, config.workers)
    logger.info(f"load_labeled_dataset: {len(paths)} images in {len(classes)} classes from {root}")
    return images, np.asarray(labels, dtype=np.int64), classes


# ============================================================
# Batching
# ============================================================


def prefetch_batches(
    images: np.ndarray, batch: int, seed: int, start: int, stop: int, buffer: int = 2
) -> Iterator[Tuple[int, np.ndarray]]:
    """
    Yield (iteration, batch) for iterations start..stop-1 from a background thread.

    Batch content is fixed by (seed, iteration) through batch_indices, so the
    queue only overlaps gathering with training.
    """
    slots: "queue.Queue" = queue.Queue(maxsize=max(1, buffer))
    done = object()
    stop_event = threading.Event()

    def produce():
        try:
            for t in range(start, stop):
                item = (t, images[batch_indices(seed, t, batch, images.shape[0])])
                while not stop_event.is_set():
                    try:
                        slots.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop_event.is_set():
                    return
            slots.put(done)
        except Exception as e:  # forwarded to the consumer
            slots.put(e)

    worker = threading.Thread(target=produce, name="avae-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = slots.get()
            if item is done:
                return
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        stop_event.set()


# ============================================================
# Output
# ============================================================


def to_bytes(images: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit, rounding to the nearest lattice value."""
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def grid_image(images: Union[Tensor, np.ndarray], columns: int) -> np.ndarray:
    """Tile [B, C, H, W] row-major into a ceil(B/columns) x columns 8-bit array ([H, W] or [H, W, 3])."""
    array = images.data if isinstance(images, Tensor) else np.asarray(images)
    if array.ndim != 4 or array.shape[0] < 1:
        raise UsageError(f"save_image_grid: expected a non-empty [B, C, H, W] batch, got shape {array.shape}")
    if columns < 1:
        raise UsageError(f"save_image_grid: columns must be >= 1, got {columns}")
    count, channels, height, width = array.shape
    if channels not in (1, 3):
        raise UsageError(f"save_image_grid: expected 1 or 3 channels, got {channels}")

    rows = math.ceil(count / columns)
    grid = np.zeros((rows * height, columns * width, channels), dtype=np.uint8)
    pixels = to_bytes(array).transpose(0, 2, 3, 1)
    for i in range(count):
        r, c = divmod(i, columns)
        grid[r * height:(r + 1) * height, c * width:(c + 1) * width] = pixels[i]
    return grid[:, :, 0] if channels == 1 else grid


def save_image_grid(images: Union[Tensor, np.ndarray], columns: int, path: Union[str, Path]) -> Path:
    picture = Image.fromarray(grid_image(images, columns))
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        picture.save(path, format="PNG")
    except OSError as e:
        raise StorageError(f"{path}: cannot write image grid ({e})") from e
    return path
