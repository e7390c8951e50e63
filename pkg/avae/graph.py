"""
avae/graph.py

Defines the training-step workflow using LangGraph and the training loop around it.
One step follows the learning procedure in order: encode the real batch, draw
prior latents, decode both, discriminator-encode all three batches, update the
VAE encoder, discriminator-decode, update the VAE decoder, step the equilibrium
controller, update the discriminator, emit the metrics row.
"""

import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from langgraph.config import get_stream_writer
from langgraph.graph import END, StateGraph
from pydantic import BaseModel
from tqdm import tqdm

from avae.checkpoint import Checkpoint, CheckpointMeta, load_checkpoint, save_checkpoint
from avae.config import write_config
from avae.controller import EquilibriumController
from avae.data import Dataset, load_dataset, prefetch_batches
from avae.discriminator import DiscModel, energies, latent_similarity
from avae.errors import AvaeError, NumericError, StorageError, UsageError
from avae.generator import VaeModel, data_loss, kl_loss, reparametrize, sample_prior
from avae.graph_state import TrainStepState
from avae.latent import AttributeVector, attributes_from_checkpoint, store_attributes
from avae.logger import logger
from avae.losses import discriminator_loss, encoder_loss, generator_loss
from avae.models import METRIC_COLUMNS, LossBundle, RunConfig
from avae.optim import Adam
from avae.tensor import Tensor, l1_mean
from avae.utils import as_tensor, step_rng

CHECKPOINT_FILE = "checkpoint.avae"
METRICS_FILE = "metrics.csv"
HOLDOUT_FILE = "holdout.csv"


def _record_failure(state: TrainStepState, node: str, e: Exception) -> TrainStepState:
    logger.error(f"Node {node}: exception - {e}")
    state.setdefault("error", []).append(f"Node {node}: {e}")
    if state.get("exception") is None:
        state["exception"] = e
    return state


# ============================================================
# Node Definitions
# ============================================================

def encode_real(state: TrainStepState) -> TrainStepState:
    """Encode the real batch and reparametrize to z_v."""
    if state.get("error"):
        logger.debug("Node encode_real: skipped due to prior error")
        return state

    try:
        logger.debug("Node encode_real: start")
        vae = state["vae"]
        x = state["batch"]
        gaussian = vae.encode(x)
        epsilon = state["rng"].standard_normal(gaussian.mu.shape).astype(gaussian.mu.dtype)
        state["gaussian"] = gaussian
        state["epsilon"] = epsilon
        state["z_v"] = reparametrize(gaussian, epsilon=epsilon).z
        return state

    except Exception as e:
        return _record_failure(state, "encode_real", e)


def sample_prior_node(state: TrainStepState) -> TrainStepState:
    """Draw z_g from N(0, I) on the step's random stream."""
    if state.get("error"):
        logger.debug("Node sample_prior: skipped due to prior error")
        return state

    try:
        logger.debug("Node sample_prior: start")
        batch, latent_dim = state["z_v"].shape
        state["z_g"] = sample_prior(batch, latent_dim, state["rng"])
        return state

    except Exception as e:
        return _record_failure(state, "sample_prior", e)


def generate(state: TrainStepState) -> TrainStepState:
    """Decode z_v into reconstructions x_v and z_g into samples x_g."""
    if state.get("error"):
        logger.debug("Node generate: skipped due to prior error")
        return state

    try:
        logger.debug("Node generate: start")
        vae = state["vae"]
        state["x_v"] = vae.decode(state["z_v"])
        state["x_g"] = vae.decode(state["z_g"])
        return state

    except Exception as e:
        return _record_failure(state, "generate", e)


def disc_encode(state: TrainStepState) -> TrainStepState:
    if state.get("error"):
        logger.debug("Node disc_encode: skipped due to prior error")
        return state

    try:
        logger.debug("Node disc_encode: start")
        disc = state["disc"]
        state["latents"] = (disc.encode(state["batch"]), disc.encode(state["x_g"]), disc.encode(state["x_v"]))
        return state

    except Exception as e:
        return _record_failure(state, "disc_encode", e)


def update_encoder(state: TrainStepState) -> TrainStepState:
    """theta_e <- Adam(grad of L_enc w.r.t. theta_e)."""
    if state.get("error"):
        logger.debug("Node update_encoder: skipped due to prior error")
        return state

    try:
        logger.debug("Node update_encoder: start")
        config = state["train_config"]
        losses = state["losses"]
        losses["L_e"] = data_loss(state["batch"], state["x_v"])
        losses["L_n"] = kl_loss(state["gaussian"])
        z_d, _, z_v = state["latents"]
        losses["L_s"] = latent_similarity(z_d, z_v)
        losses["L_enc"] = encoder_loss(losses["L_e"], losses["L_n"], losses["L_s"], config)

        optimizer = state["optimizers"]["encoder"]
        losses["L_enc"].backward(inputs=optimizer.tensors)
        optimizer.step()

        writer = get_stream_writer()
        writer({"node": "update_encoder", "iteration": state["iteration"], "adam_step": optimizer.state.step})
        return state

    except Exception as e:
        return _record_failure(state, "update_encoder", e)


def disc_decode(state: TrainStepState) -> TrainStepState:
    """Discriminator reconstructions and the energies L_d, L_g, L_v."""
    if state.get("error"):
        logger.debug("Node disc_decode: skipped due to prior error")
        return state

    try:
        logger.debug("Node disc_decode: start")
        config = state["train_config"]
        L_d, L_g, L_v, disc_pass = energies(
            state["batch"], state["x_g"], state["x_v"], state["disc"],
            latents=state["latents"], literal_fake_energy=config.literal_fake_energy,
        )
        state["losses"].update(L_d=L_d, L_g=L_g, L_v=L_v)
        state["disc_pass"] = disc_pass
        return state

    except Exception as e:
        return _record_failure(state, "disc_decode", e)


def update_decoder(state: TrainStepState) -> TrainStepState:
    """theta_d <- Adam(grad of L_gen w.r.t. theta_d)."""
    if state.get("error"):
        logger.debug("Node update_decoder: skipped due to prior error")
        return state

    try:
        logger.debug("Node update_decoder: start")
        losses = state["losses"]
        losses["L_gen"] = generator_loss(losses["L_e"], losses["L_g"], losses["L_v"], losses["L_s"], state["train_config"])

        optimizer = state["optimizers"]["decoder"]
        losses["L_gen"].backward(inputs=optimizer.tensors)
        optimizer.step()

        writer = get_stream_writer()
        writer({"node": "update_decoder", "iteration": state["iteration"], "adam_step": optimizer.state.step})
        return state

    except Exception as e:
        return _record_failure(state, "update_decoder", e)


def step_controller(state: TrainStepState) -> TrainStepState:
    if state.get("error"):
        logger.debug("Node step_controller: skipped due to prior error")
        return state

    try:
        logger.debug("Node step_controller: start")
        losses = state["losses"]
        step = state["controller"].step(losses["L_d"].item(), losses["L_g"].item(), losses["L_v"].item())
        state["controller_step"] = step

        writer = get_stream_writer()
        writer({
            "node": "step_controller",
            "iteration": state["iteration"],
            "e_t": step.e_t,
            "k_t": step.k_t,
            "M": step.M,
            "eta": step.eta,
            "diversity_ratio": step.ratio,
        })
        return state

    except Exception as e:
        return _record_failure(state, "step_controller", e)


def update_discriminator(state: TrainStepState) -> TrainStepState:
    """theta_e', theta_d' <- Adam(grad of L_dis), weighted by the gain k_{t-1}."""
    if state.get("error"):
        logger.debug("Node update_discriminator: skipped due to prior error")
        return state

    try:
        logger.debug("Node update_discriminator: start")
        losses = state["losses"]
        k_prev = state["controller_step"].k_prev
        losses["L_dis"] = discriminator_loss(losses["L_d"], losses["L_g"], losses["L_v"], k_prev, state["train_config"])

        optimizer = state["optimizers"]["disc"]
        losses["L_dis"].backward(inputs=optimizer.tensors)
        optimizer.step()

        writer = get_stream_writer()
        writer({"node": "update_discriminator", "iteration": state["iteration"], "adam_step": optimizer.state.step})
        return state

    except Exception as e:
        return _record_failure(state, "update_discriminator", e)


def emit_metrics(state: TrainStepState) -> TrainStepState:
    if state.get("error"):
        logger.debug("Node emit_metrics: skipped due to prior error")
        return state

    try:
        logger.debug("Node emit_metrics: start")
        losses = state["losses"]
        step = state["controller_step"]
        bundle = LossBundle(
            iteration=state["iteration"],
            **{name: losses[name].item() for name in METRIC_COLUMNS[1:10]},
            e_t=step.e_t,
            k_t=step.k_t,
            M=step.M,
        )
        bundle.check()
        state["bundle"] = bundle
        return state

    except Exception as e:
        return _record_failure(state, "emit_metrics", e)


# ============================================================
# Graph Builder
# ============================================================

def build_graph():
    graph = StateGraph(TrainStepState)

    graph.add_node("encode_real", encode_real)
    graph.add_node("sample_prior", sample_prior_node)
    graph.add_node("generate", generate)
    graph.add_node("disc_encode", disc_encode)
    graph.add_node("update_encoder", update_encoder)
    graph.add_node("disc_decode", disc_decode)
    graph.add_node("update_decoder", update_decoder)
    graph.add_node("step_controller", step_controller)
    graph.add_node("update_discriminator", update_discriminator)
    graph.add_node("emit_metrics", emit_metrics)

    graph.set_entry_point("encode_real")
    graph.add_edge("encode_real", "sample_prior")
    graph.add_edge("sample_prior", "generate")
    graph.add_edge("generate", "disc_encode")
    graph.add_edge("disc_encode", "update_encoder")
    graph.add_edge("update_encoder", "disc_decode")
    graph.add_edge("disc_decode", "update_decoder")
    graph.add_edge("update_decoder", "step_controller")
    graph.add_edge("step_controller", "update_discriminator")
    graph.add_edge("update_discriminator", "emit_metrics")
    graph.add_edge("emit_metrics", END)

    return graph.compile()


# ============================================================
# Trainer
# ============================================================

class Trainer:
    """
    Owns both auto-encoders, the three Adam optimizers and the controller.

    Optimizer groups are disjoint: "encoder" (theta_e), "decoder" (theta_d) and
    "disc" (theta_e' and theta_d').
    """

    def __init__(self, config: RunConfig):
        self.config = config
        train = config.train
        self.vae = VaeModel.create(config.model, train.seed)
        self.disc = DiscModel.create(config.model, train.seed)
        self.controller = EquilibriumController(train)
        adam = dict(lr=train.lr, beta1=train.adam_beta1, beta2=train.adam_beta2)
        self.optimizers: Dict[str, Adam] = {
            "encoder": Adam(self.vae.encoder.named_parameters("vae.encoder."), **adam),
            "decoder": Adam(self.vae.decoder.named_parameters("vae.decoder."), **adam),
            "disc": Adam(self.disc.named_parameters("disc."), **adam),
        }
        self.attributes: Dict[str, AttributeVector] = {}
        self.iteration = 0
        self.graph = build_graph()

    def initial_state(self, batch: Union[np.ndarray, Tensor]) -> TrainStepState:
        return {
            "iteration": self.iteration,
            "batch": as_tensor(batch),
            "rng": step_rng(self.config.train.seed, self.iteration),
            "vae": self.vae,
            "disc": self.disc,
            "controller": self.controller,
            "optimizers": self.optimizers,
            "train_config": self.config.train,
            "losses": {},
            "error": [],
        }

    def train_step(self, batch: Union[np.ndarray, Tensor]) -> LossBundle:
        final: TrainStepState = {}
        for mode, chunk in self.graph.stream(self.initial_state(batch), stream_mode=["custom", "values"]):
            if mode == "custom":
                logger.debug(f"train_step: {chunk}")
            else:
                final = chunk

        if final.get("error"):
            exc = final.get("exception")
            partial = ", ".join(f"{name}={value.item()!r}" for name, value in final.get("losses", {}).items())
            logger.error(f"train_step: iteration {self.iteration} failed: {'; '.join(final['error'])}")
            if isinstance(exc, NumericError):
                raise NumericError(f"iteration {self.iteration}: {exc.message} [losses: {partial or 'none'}]") from exc
            if exc is None:
                raise AvaeError(f"iteration {self.iteration}: {'; '.join(final['error'])}")
            raise exc

        self.iteration += 1
        return final["bundle"]

    def reconstruction_loss(self, images: np.ndarray, chunk: int = 64) -> float:
        """Held-out L_e with the encoder mean (epsilon = 0)."""
        if images.shape[0] == 0:
            raise UsageError("reconstruction_loss: no images")
        total = 0.0
        for start in range(0, images.shape[0], chunk):
            x = as_tensor(images[start:start + chunk])
            x_v = self.vae.decode(self.vae.encode(x).mu)
            total += l1_mean(x, x_v).item() * x.size
        return total / images.size

    # -----------------------------
    # Persistence
    # -----------------------------
    def to_checkpoint(self) -> Checkpoint:
        tensors: Dict[str, np.ndarray] = {}
        tensors.update(self.vae.state_arrays("vae."))
        tensors.update(self.disc.state_arrays("disc."))
        optimizers = {}
        for name, optimizer in self.optimizers.items():
            tensors.update(optimizer.state_arrays(f"opt.{name}"))
            s = optimizer.state
            optimizers[name] = {"step": s.step, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}
        meta = CheckpointMeta(
            kind="training",
            config=self.config.model_dump(mode="json"),
            iteration=self.iteration,
            seed=self.config.train.seed,
            controller=self.controller.state_dict(),
            optimizers=optimizers,
        )
        checkpoint = Checkpoint(meta=meta, tensors=tensors)
        store_attributes(checkpoint, self.attributes.values())
        return checkpoint

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "Trainer":
        meta = checkpoint.meta
        if meta.kind != "training":
            raise UsageError(f"expected a training checkpoint, got a {meta.kind} checkpoint")
        trainer = cls(RunConfig.model_validate(meta.config))
        trainer.vae.load_state_arrays("vae.", checkpoint.tensors)
        trainer.disc.load_state_arrays("disc.", checkpoint.tensors)
        for name, optimizer in trainer.optimizers.items():
            optimizer.load_state_arrays(f"opt.{name}", checkpoint.tensors, step=meta.optimizers[name]["step"])
        if meta.controller is not None:
            trainer.controller.load_state_dict(meta.controller)
        trainer.attributes = attributes_from_checkpoint(checkpoint)
        trainer.iteration = meta.iteration
        return trainer

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Trainer":
        return cls.from_checkpoint(load_checkpoint(path))


# ============================================================
# Training loop
# ============================================================

class TrainingResult(BaseModel):
    checkpoint: Path
    metrics: Path
    iterations: int
    final_M: Optional[float] = None
    held_out: List[Tuple[int, float]] = []


def _prepare_metrics(path: Path, start: int) -> None:
    """Fresh header at iteration 0; on resume keep only rows logged before `start`."""
    rows: List[List[str]] = []
    if start > 0 and path.exists():
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in list(csv.reader(fh))[1:] if row and int(row[0]) < start]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(rows)


def _log_holdout(path: Path, trainer: Trainer, images: np.ndarray, held_out: List[Tuple[int, float]]) -> None:
    if images.shape[0] == 0 or (held_out and held_out[-1][0] == trainer.iteration):
        return
    value = trainer.reconstruction_loss(images)
    held_out.append((trainer.iteration, value))
    logger.info(f"run_training: held-out L_e={value:.6f} at iteration {trainer.iteration}")
    new_file = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["iter", "L_e"])
        writer.writerow([trainer.iteration, repr(value)])


def run_training(
    config: RunConfig,
    out_dir: Union[str, Path],
    dataset: Optional[Dataset] = None,
    resume: Optional[Union[str, Path]] = None,
    quiet: bool = False,
) -> TrainingResult:
    """
    Train for config.train.iterations total steps, writing into `out_dir`:
    config.ini, metrics.csv, holdout.csv and checkpoint.avae.

    With `resume`, parameters, optimizer moments, controller state and the
    iteration counter come from that checkpoint; loop lengths and intervals come
    from `config`.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"{out_dir}: cannot create output folder ({e})") from e

    if resume is not None:
        trainer = Trainer.load(resume)
        schedule = {key: getattr(config.train, key) for key in ("iterations", "checkpoint_interval", "metrics_interval", "log_interval")}
        trainer.config = trainer.config.model_copy(update={
            "train": trainer.config.train.model_copy(update=schedule),
            "data": config.data,
        })
        logger.info(f"run_training: resumed from {resume} at iteration {trainer.iteration}")
    else:
        trainer = Trainer(config)
    run_config = trainer.config
    train = run_config.train

    if dataset is None:
        if run_config.data.root is None:
            raise UsageError("run_training: no dataset (set data.root)")
        dataset = load_dataset(run_config.data.root, run_config.data, run_config.model)
    if len(dataset) == 0:
        raise UsageError("run_training: dataset is empty")
    train_images, held_images = dataset.split(run_config.data.holdout, train.seed)

    write_config(run_config, out_dir)
    checkpoint_path = out_dir / CHECKPOINT_FILE
    metrics_path = out_dir / METRICS_FILE
    holdout_path = out_dir / HOLDOUT_FILE
    held_out: List[Tuple[int, float]] = []
    start = trainer.iteration
    bundle: Optional[LossBundle] = None

    try:
        _prepare_metrics(metrics_path, start)
        _log_holdout(holdout_path, trainer, held_images, held_out)
        with open(metrics_path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            batches = prefetch_batches(train_images, train.batch, train.seed, start, train.iterations)
            bar = tqdm(
                batches, total=max(0, train.iterations - start), desc="train",
                disable=quiet or not sys.stderr.isatty(),
            )
            for t, batch in bar:
                bundle = trainer.train_step(batch)
                if t % train.metrics_interval == 0:
                    writer.writerow(bundle.row())
                    fh.flush()
                bar.set_postfix(L_d=f"{bundle.L_d:.4f}", L_g=f"{bundle.L_g:.4f}", k=f"{bundle.k_t:.4f}", M=f"{bundle.M:.4f}")
                if (t + 1) % train.log_interval == 0:
                    logger.info(
                        f"run_training: iter {t + 1}/{train.iterations} M={bundle.M:.5f} k_t={bundle.k_t:.6f} "
                        f"eta_ratio={trainer.controller.ratio()}"
                    )
                if (t + 1) % train.checkpoint_interval == 0 and t + 1 < train.iterations:
                    save_checkpoint(checkpoint_path, trainer.to_checkpoint())
                    logger.info(f"run_training: checkpoint written to {checkpoint_path}")
                    _log_holdout(holdout_path, trainer, held_images, held_out)
            bar.close()
    except NumericError as e:
        logger.error(f"run_training: aborted at iteration {trainer.iteration}: {e.message}")
        raise
    except AvaeError:
        raise
    except OSError as e:
        raise StorageError(f"{out_dir}: {e}") from e

    save_checkpoint(checkpoint_path, trainer.to_checkpoint())
    _log_holdout(holdout_path, trainer, held_images, held_out)
    final_M = bundle.M if bundle is not None else None
    logger.info(f"run_training: done at iteration {trainer.iteration}, final convergence measure M={final_M}, checkpoint {checkpoint_path}")
    return TrainingResult(
        checkpoint=checkpoint_path,
        metrics=metrics_path,
        iterations=trainer.iteration,
        final_M=final_M,
        held_out=held_out,
    )
