import io
import os
from functools import lru_cache
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv
from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel, Field

from avae.data import grid_image
from avae.errors import AvaeError, InternalError, UsageError
from avae.generator import sample_prior
from avae.graph import Trainer
from avae.latent import apply_attribute, decode_latents, decode_path, interpolate, slerp
from avae.logger import logger

load_dotenv()

app = FastAPI(title="Adversarial VAE Sampler")


class SampleRequest(BaseModel):
    checkpoint: Optional[str] = None
    count: int = Field(16, ge=1, le=256)
    columns: int = Field(4, ge=1)
    seed: int = Field(0, ge=0)
    attribute: Optional[str] = None
    weight: float = 1.0


class InterpolateRequest(BaseModel):
    checkpoint: Optional[str] = None
    steps: int = Field(8, ge=2, le=64)
    seed: int = Field(0, ge=0)
    slerp: bool = False
    z_a: Optional[List[float]] = None
    z_b: Optional[List[float]] = None


# example request
# {
#   "checkpoint": "runs/train/checkpoint.avae",
#   "count": 16,
#   "columns": 4,
#   "seed": 7
# }


@lru_cache(maxsize=4)
def _cached_trainer(path: str, mtime: float) -> Trainer:
    logger.info(f"app: loading checkpoint {path}")
    return Trainer.load(path)


def load_trainer(path: Optional[str]) -> Trainer:
    path = path or os.getenv("AVAE_CHECKPOINT")
    if not path:
        raise UsageError("no checkpoint given (request field or AVAE_CHECKPOINT)")
    if not os.path.exists(path):
        raise UsageError(f"{path}: checkpoint not found")
    return _cached_trainer(path, os.path.getmtime(path))


def _png(images: np.ndarray, columns: int) -> Response:
    buffer = io.BytesIO()
    Image.fromarray(grid_image(images, columns)).save(buffer, format="PNG")
    return Response(content=buffer.getvalue(), media_type="image/png")


def _error(status: int, error: AvaeError) -> JSONResponse:
    return JSONResponse(status_code=status, content=error.to_dict())


@app.post("/sample")
async def sample(request: SampleRequest = Body(...)):
    try:
        trainer = load_trainer(request.checkpoint)
        latent_dim = trainer.config.model.latent_dim
        z = sample_prior(request.count, latent_dim, request.seed).data
        if request.attribute:
            if request.attribute not in trainer.attributes:
                raise UsageError(f"no attribute {request.attribute!r} in checkpoint")
            attr = trainer.attributes[request.attribute]
            z = np.stack([apply_attribute(row, attr, request.weight) for row in z])
        return _png(decode_latents(trainer.vae, z), request.columns)
    except AvaeError as e:
        return _error(400, e)
    except Exception as e:
        logger.exception("Unhandled exception in /sample")
        return _error(500, InternalError(str(e)))


@app.post("/interpolate")
async def interpolate_route(request: InterpolateRequest = Body(...)):
    try:
        trainer = load_trainer(request.checkpoint)
        latent_dim = trainer.config.model.latent_dim
        if (request.z_a is None) != (request.z_b is None):
            raise UsageError("give both z_a and z_b, or neither")
        if request.z_a is None:
            z_a, z_b = sample_prior(2, latent_dim, request.seed).data
        else:
            z_a, z_b = np.asarray(request.z_a, dtype=np.float32), np.asarray(request.z_b, dtype=np.float32)
        path_fn = slerp if request.slerp else interpolate
        frames = decode_path(trainer.vae, path_fn(z_a, z_b, request.steps))
        return _png(frames, request.steps)
    except AvaeError as e:
        return _error(400, e)
    except Exception as e:
        logger.exception("Unhandled exception in /interpolate")
        return _error(500, InternalError(str(e)))
