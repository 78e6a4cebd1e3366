"""Command-line harness: ``gen-data``, ``train``, ``eval``, ``predict``.

Exit codes: 0 success, 1 I/O failure, 2 invalid input or config,
3 checkpoint missing or incompatible, 4 training diverged.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import config as config_io
from .config import ConfigError, RunConfig
from .estimator import MODEL_PARAMS, CheckpointMismatch, MoNFAPDetector
from .metrics import format_report
from .synth import PerturbConfig, build_split, load_image, load_split, perturb, to_uint8
from .training import TrainingDiverged, derive_seed, deterministic_mode

logger = logging.getLogger("monfap")

EXIT_IO, EXIT_INPUT, EXIT_CHECKPOINT, EXIT_DIVERGED = 1, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _load_config(args):
    config = config_io.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config.run.seed = args.seed
    if getattr(args, "checkpoint", None):
        config.run.checkpoint = args.checkpoint
    if args.deterministic:
        config.run.deterministic = True
    return config.validate()


def cmd_gen_data(config, args):
    root = Path(config.data.root)
    try:
        records = build_split(
            root, config.data.n_train, config.data.n_val, config.data.n_test,
            config.scene_config(), seed=config.run.seed,
        )
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from exc
    for split in ("train", "val", "test"):
        rows = [r for r in records if r["split"] == split]
        fake = sum(r["label"] for r in rows)
        print(f"{split}: {len(rows)} samples ({fake} manipulated, {len(rows) - fake} genuine)")
    print(f"dataset written to {root}")
    return 0


def _read_split(config, split):
    root = Path(config.data.root)
    if not (root / split / "manifest.jsonl").exists():
        raise CommandError(EXIT_IO, f"no manifest for split {split!r} under {root}; run gen-data")
    try:
        return load_split(root, split)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot read split {split!r}: {exc}") from exc


def cmd_train(config, args):
    X, masks, y, _ = _read_split(config, "train")
    if len(X) == 0:
        raise CommandError(EXIT_INPUT, "training split is empty")
    checkpoint = Path(config.run.checkpoint)
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    log_path = checkpoint.with_name(checkpoint.name + ".log.jsonl")
    est = MoNFAPDetector(**config.estimator_params())
    every = config.optim.checkpoint_every

    with open(log_path, "w") as log:
        def on_log(record, estimator):
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            if estimator.n_iter_ % every < config.optim.log_every:
                estimator.save(checkpoint, extra={"config": config_io.dumps(config)})

        try:
            est.fit(X, y, masks, callback=on_log)
        except TrainingDiverged as exc:
            raise CommandError(
                EXIT_DIVERGED, f"{exc}; last good checkpoint (if any) kept at {checkpoint}"
            ) from exc
    est.save(checkpoint, extra={"config": config_io.dumps(config)})
    last = est.loss_history_[-1]
    print(f"trained {est.n_iter_} iterations, final loss {last['loss']:.6f}")
    print(f"checkpoint: {checkpoint}\nloss log: {log_path}")
    return 0


def _load_estimator(config, args, use_config_model):
    path = Path(config.run.checkpoint)
    if not path.exists():
        raise CommandError(EXIT_CHECKPOINT, f"checkpoint not found: {path}")
    overrides = {}
    if use_config_model:
        params = config.estimator_params()
        overrides = {name: params[name] for name in MODEL_PARAMS}
    try:
        return MoNFAPDetector.load(path, **overrides)
    except CheckpointMismatch as exc:
        raise CommandError(EXIT_CHECKPOINT, f"checkpoint does not match config: {exc}") from exc
    except Exception as exc:
        raise CommandError(EXIT_CHECKPOINT, f"cannot load checkpoint {path}: {exc}") from exc


def perturb_batch(X, config, seed):
    pcfg = PerturbConfig(
        families=tuple(config.eval.perturb_families),
        intensity=config.eval.perturb_intensity,
        seed=seed,
    )
    out = np.empty_like(X)
    for i, image in enumerate(X):
        out[i] = perturb(image, pcfg, np.random.default_rng([seed, i]))
    return out


def cmd_eval(config, args):
    est = _load_estimator(config, args, use_config_model=bool(args.config))
    split = args.split or config.eval.split
    X, masks, y, _ = _read_split(config, split)
    if len(X) == 0:
        raise CommandError(EXIT_INPUT, f"split {split!r} is empty")
    if args.perturb:
        X = perturb_batch(X, config, derive_seed(config.run.seed, "perturb"))
    report = est.evaluate(X, y, masks, average=config.eval.average)
    report.update(est.loss_components(X, y, masks))
    report.update({"split": split, "perturbed": bool(args.perturb), "n_samples": len(X)})
    text = format_report(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    return 0


def pad_to_multiple(image, multiple=32):
    """Reflect-pad a (3, H, W) image on the bottom/right; returns the padded image and (H, W)."""
    _, h, w = image.shape
    ph, pw = (-h) % multiple, (-w) % multiple
    if ph or pw:
        mode = "reflect" if ph < h and pw < w else "symmetric"
        image = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode=mode)
    return image, (h, w)


def cmd_predict(config, args):
    est = _load_estimator(config, args, use_config_model=False)
    try:
        image = load_image(args.image)
    except (OSError, ValueError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot read image {args.image}: {exc}") from exc
    padded, (h, w) = pad_to_multiple(image)
    prob = float(est.predict_proba(padded[None])[0, 1])
    mask = est.predict_mask(padded[None])[0, :h, :w]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    (out_dir / f"{stem}.txt").write_text(f"fake_probability={prob!r}\n")
    PILImage.fromarray(mask.astype(np.uint8) * 255).save(out_dir / f"{stem}_mask.png")
    overlay = to_uint8(image).astype(np.float64)
    overlay[mask > 0] = 0.5 * overlay[mask > 0] + 0.5 * np.array([255.0, 0.0, 0.0])
    PILImage.fromarray(overlay.round().astype(np.uint8)).save(out_dir / f"{stem}_overlay.png")
    print(f"fake_probability={prob:.6f}")
    print(f"mask: {out_dir / f'{stem}_mask.png'}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict}


def build_parser():
    parser = argparse.ArgumentParser(prog="monfap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded deterministic kernels")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    train = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    train.add_argument("--checkpoint", help="override run.checkpoint")
    ev = sub.add_parser("eval", parents=[common], help="compute ACC/AUC/F1-f/IoU-f")
    ev.add_argument("--checkpoint", help="override run.checkpoint")
    ev.add_argument("--split", choices=("train", "val", "test"))
    ev.add_argument("--perturb", action="store_true", help="apply the perturbation suite")
    ev.add_argument("--out", help="also write the report to this file")
    pred = sub.add_parser("predict", parents=[common], help="predict one image")
    pred.add_argument("--checkpoint", help="override run.checkpoint")
    pred.add_argument("--image", required=True)
    pred.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config(args)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        with deterministic_mode(config.run.deterministic):
            return COMMANDS[args.command](config, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
