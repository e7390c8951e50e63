"""
avae/cli.py

Command-line surface.
Subcommands: train, sample, reconstruct, interpolate, attr-build, attr-apply, score, grad-check.
Every subcommand reads an optional INI config (--config) plus --set section.key=value
overrides and writes its resolved config.ini next to its outputs.
Exit status: 0 on success, 1 on unexpected failure or a failed gradient check,
2 on usage and validation errors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from avae.checkpoint import load_checkpoint, save_checkpoint
from avae.config import load_config, write_config
from avae.data import load_dataset, load_labeled_dataset, save_image_grid
from avae.discriminator import energies
from avae.errors import AvaeError, StorageError, UsageError
from avae.generator import sample_prior
from avae.gradcheck import TOLERANCE, run_gradient_suite
from avae.graph import Trainer, run_training
from avae.latent import (
    apply_attribute,
    build_attribute,
    decode_latents,
    decode_path,
    encode_means,
    interpolate,
    slerp,
)
from avae.logger import logger
from avae.models import RunConfig
from avae.scoring import (
    classifier_from_checkpoint,
    classifier_to_checkpoint,
    holdout_split,
    inception_score,
    sample_diversity,
    train_classifier,
)
from avae.utils import as_tensor

CLASSIFIER_FILE = "classifier.avae"
SCORE_FILE = "score.txt"


# ============================================================
# Shared helpers
# ============================================================

def _overrides(args: argparse.Namespace) -> List[str]:
    """--set values first, then dedicated flags, so dedicated flags win."""
    overrides = list(args.set or [])
    for flag, key in (("data", "data.root"), ("iterations", "train.iterations"), ("batch", "train.batch"), ("seed", "train.seed")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return overrides


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _load_trainer(args: argparse.Namespace) -> Trainer:
    if not args.checkpoint:
        raise UsageError(f"{args.command}: --checkpoint is required")
    return Trainer.load(args.checkpoint)


def _inference_config(args: argparse.Namespace, trainer: Trainer) -> RunConfig:
    """Model and training sections from the checkpoint; data and score sections from the command line."""
    requested = _resolve_config(args)
    return trainer.config.model_copy(update={"data": requested.data, "score": requested.score})


def _seed(args: argparse.Namespace, default: int) -> int:
    return args.seed if args.seed is not None else default


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"{out}: cannot create output folder ({e})") from e
    return out


# ============================================================
# Subcommands
# ============================================================

def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    result = run_training(config, args.out, resume=args.resume, quiet=args.quiet)
    print(f"checkpoint: {result.checkpoint}")
    print(f"metrics: {result.metrics}")
    print(f"iterations: {result.iterations}")
    print(f"final_M: {result.final_M!r}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    out = _out_dir(args)
    z = sample_prior(args.count, config.model.latent_dim, _seed(args, config.train.seed))
    images = decode_latents(trainer.vae, z.data)
    path = save_image_grid(images, args.columns, out / "samples.png")
    write_config(config, out)
    print(f"samples: {path}")
    if args.count > 1:
        print(f"diversity: {sample_diversity(images)!r}")
    return 0


def cmd_reconstruct(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    if config.data.root is None:
        raise UsageError("reconstruct: --data is required")
    out = _out_dir(args)
    dataset = load_dataset(config.data.root, config.data, config.model)
    count = min(args.count, len(dataset))
    vae, disc = trainer.vae, trainer.disc

    x = as_tensor(dataset.images[:count])
    x_v = vae.decode(vae.encode(x).mu)
    x_g = vae.decode(sample_prior(count, config.model.latent_dim, _seed(args, config.train.seed)))
    _, _, _, rec = energies(x, x_g, x_v, disc, literal_fake_energy=config.train.literal_fake_energy)

    real_rows = np.concatenate([x.data, x_v.data, rec.x_d.data, rec.x_v.data])
    fake_rows = np.concatenate([x_g.data, rec.x_g.data])
    real_path = save_image_grid(real_rows, count, out / "reconstruct.png")
    fake_path = save_image_grid(fake_rows, count, out / "fakes.png")
    write_config(config, out)
    print(f"reconstruct: {real_path}")
    print(f"fakes: {fake_path}")
    return 0


def cmd_interpolate(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    out = _out_dir(args)

    if args.images:
        if config.data.root is None:
            raise UsageError("interpolate: --images needs --data")
        dataset = load_dataset(config.data.root, config.data, config.model)
        names = [entry.filename for entry in dataset.manifest.entries]
        missing = [name for name in args.images if name not in names]
        if missing:
            raise UsageError(f"interpolate: not in dataset: {', '.join(missing)}")
        rows = [names.index(name) for name in args.images]
        z_a, z_b = encode_means(trainer.vae, dataset.images[rows])
    else:
        z_a, z_b = sample_prior(2, config.model.latent_dim, _seed(args, config.train.seed)).data

    path_fn = slerp if args.slerp else interpolate
    frames = decode_path(trainer.vae, path_fn(z_a, z_b, args.steps))
    path = save_image_grid(frames, args.steps, out / "interpolate.png")
    write_config(config, out)
    print(f"interpolate: {path}")
    return 0


def cmd_attr_build(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    if config.data.root is None:
        raise UsageError("attr-build: --data is required")
    dataset = load_dataset(config.data.root, config.data, config.model)
    positives, negatives = dataset.manifest.flagged(args.attribute)
    if not positives or not negatives:
        raise UsageError(f"attr-build: {args.attribute} needs images with and without it ({len(positives)} / {len(negatives)})")

    attr = build_attribute(
        encode_means(trainer.vae, dataset.images[positives]),
        encode_means(trainer.vae, dataset.images[negatives]),
        args.attribute,
    )
    trainer.attributes[attr.name] = attr
    target = Path(args.output or args.checkpoint)
    save_checkpoint(target, trainer.to_checkpoint())
    write_config(config, target.parent)
    print(f"attribute {attr.name}: {attr.positives} with, {attr.negatives} without -> {target}")
    return 0


def cmd_attr_apply(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    if args.attribute not in trainer.attributes:
        known = ", ".join(sorted(trainer.attributes)) or "none"
        raise UsageError(f"attr-apply: no attribute {args.attribute!r} in checkpoint (known: {known})")
    attr = trainer.attributes[args.attribute]
    out = _out_dir(args)

    if config.data.root is not None:
        dataset = load_dataset(config.data.root, config.data, config.model)
        latents = encode_means(trainer.vae, dataset.images[:args.count])
    else:
        latents = sample_prior(args.count, config.model.latent_dim, _seed(args, config.train.seed)).data

    edited = np.stack([apply_attribute(z, attr, args.weight) for z in latents])
    grid = np.concatenate([decode_latents(trainer.vae, latents), decode_latents(trainer.vae, edited)])
    path = save_image_grid(grid, latents.shape[0], out / f"attr_{attr.name}.png")
    write_config(config, out)
    print(f"attr-apply: {path}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    trainer = _load_trainer(args)
    config = _inference_config(args, trainer)
    score = config.score
    out = _out_dir(args)

    labeled = None
    if args.classifier:
        classifier = classifier_from_checkpoint(load_checkpoint(args.classifier))
    else:
        if not args.labeled:
            raise UsageError("score: --labeled is required unless --classifier is given")
        labeled = load_labeled_dataset(args.labeled, config.data, config.model)
        images, labels, class_names = labeled
        classifier = train_classifier(images, labels, score, class_names)
        save_checkpoint(out / CLASSIFIER_FILE, classifier_to_checkpoint(classifier))
        print(f"classifier: {out / CLASSIFIER_FILE} (held-out accuracy {classifier.accuracy!r})")

    z = sample_prior(score.samples, config.model.latent_dim, _seed(args, score.seed))
    reports = [inception_score(decode_latents(trainer.vae, z.data), classifier, score.splits)]

    if args.real:
        if labeled is None:
            if not args.labeled:
                raise UsageError("score: --real needs --labeled")
            labeled = load_labeled_dataset(args.labeled, config.data, config.model)
        images = labeled[0]
        _, held = holdout_split(images.shape[0], score.holdout_fraction, score.seed)
        reports.append(inception_score(images[held], classifier, min(score.splits, held.size), label="real"))

    text = "".join(report.render() + "\n" for report in reports)
    try:
        with open(out / SCORE_FILE, "a", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise StorageError(f"{out / SCORE_FILE}: cannot write score ({e})") from e
    write_config(config, out)
    sys.stdout.write(text)
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    results = run_gradient_suite(seed=args.seed or 0, max_coords=args.max_coords)
    worst = max(r.max_rel_error for r in results)
    for r in results:
        print(f"{r.name:<16} {r.max_rel_error:.3e} ({r.coordinates} coords){'' if r.passed else '  FAIL'}")
    print(f"max_rel_error: {worst:.3e}")
    if args.out:
        write_config(_resolve_config(args), _out_dir(args))
    if worst >= TOLERANCE:
        logger.error(f"grad-check: max relative error {worst:.3e} exceeds {TOLERANCE:.0e}")
        return 1
    return 0


# ============================================================
# Parser
# ============================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config with [model], [train], [data], [score] sections")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="Override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--quiet", action="store_true", help="No progress bar")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level")

    inference = argparse.ArgumentParser(add_help=False)
    inference.add_argument("--checkpoint", type=Path, help="Training checkpoint")
    inference.add_argument("--data", type=Path, help="Image folder")

    parser = argparse.ArgumentParser(prog="avae", description="Adversarially trained VAE engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="Train the generator and discriminator")
    p.add_argument("--data", type=Path, help="Image folder")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--resume", type=Path, help="Continue from this checkpoint")
    p.add_argument("--out", default="runs/train", help="Output folder")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", parents=[common, inference], help="Decode prior draws into a grid")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--columns", type=int, default=8)
    p.add_argument("--out", default="runs/sample")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("reconstruct", parents=[common, inference], help="Real, VAE and discriminator reconstruction panels")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", default="runs/reconstruct")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("interpolate", parents=[common, inference], help="Interpolation strip between two latents")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--images", nargs=2, metavar="FILENAME", help="Two dataset images to interpolate between")
    p.add_argument("--slerp", action="store_true", help="Spherical instead of linear path")
    p.add_argument("--out", default="runs/interpolate")
    p.set_defaults(handler=cmd_interpolate)

    p = sub.add_parser("attr-build", parents=[common, inference], help="Build an attribute vector from the attribute table")
    p.add_argument("--attribute", required=True)
    p.add_argument("--output", type=Path, help="Checkpoint to write (default: overwrite --checkpoint)")
    p.set_defaults(handler=cmd_attr_build)

    p = sub.add_parser("attr-apply", parents=[common, inference], help="Edit latents with a stored attribute vector")
    p.add_argument("--attribute", required=True)
    p.add_argument("--weight", type=float, default=1.0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out", default="runs/attr")
    p.set_defaults(handler=cmd_attr_apply)

    p = sub.add_parser("score", parents=[common, inference], help="Inception-style score of generated samples")
    p.add_argument("--labeled", type=Path, help="Labeled image folder, one subfolder per class")
    p.add_argument("--classifier", type=Path, help="Reuse a saved classifier")
    p.add_argument("--real", action="store_true", help="Also score held-out real images")
    p.add_argument("--out", default="runs/score")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("grad-check", parents=[common], help="Finite-difference gradient suite")
    p.add_argument("--max-coords", type=int, default=64, help="Coordinates sampled per parameter of the composite losses")
    p.add_argument("--out", help="Folder for the resolved config")
    p.set_defaults(handler=cmd_grad_check)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.log_level:
        logger.setLevel(getattr(logging, args.log_level))

    try:
        return args.handler(args)
    except AvaeError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"{args.command}: unexpected failure - {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
