import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from derain.checkpoint import load_checkpoint
from derain.config import RunConfig, load_config
from derain.errors import DerainError, InvalidArgumentError, MissingPairError
from derain.metrics import aggregate, evaluate_pair
from derain.models import infer, network_from_checkpoint
from derain.schemas import EvalConfig
from derain.storage import list_images, load_png, save_png, write_jsonl
from derain.synth import make_dataset
from derain.train import run_sweep, train

logger = logging.getLogger(__name__)


def run_synth(config: RunConfig) -> int:
    if not config.out:
        raise InvalidArgumentError("synth needs --out")
    rows = make_dataset(
        config.hq_dir, config.count, config.mode, config.seed, config.out,
        image_size=config.image_size, split=config.split, layers=config.rain_layers,
        density=config.density, intensity=config.intensity,
        beta_range=(config.beta_min, config.beta_max),
        airlight_range=(config.airlight_min, config.airlight_max),
        depth_mode=config.depth_mode, depth_range=(config.depth_min, config.depth_max),
        depth_path=config.depth_path,
    )
    print(json.dumps({"pairs": len(rows), "out": str(config.out)}))
    return 0


def run_train(config: RunConfig) -> int:
    result = train(config)
    print(json.dumps({"checkpoint": str(result.checkpoint), "epochs": len(result.epoch_logs)}))
    return 0


def _infer_inputs(path: Path) -> list:
    if path.is_dir():
        return list_images(path)
    if not path.is_file():
        raise InvalidArgumentError(f"input not found: {path}")
    return [path]


def run_infer(config: RunConfig) -> int:
    """Restore one image or every image of a directory; outputs keep the input basenames"""
    if not (config.checkpoint and config.input and config.out):
        raise InvalidArgumentError("infer needs --checkpoint, --input and --out")
    net = network_from_checkpoint(load_checkpoint(config.checkpoint))
    out_dir = Path(config.out)
    written = []
    for source in _infer_inputs(Path(config.input)):
        restored = infer(net, load_png(source))
        written.append(str(save_png(out_dir / f"{source.stem}.png", restored)))
        logger.info(f"Restored {source.name} with {net.kind}")
    print(json.dumps({"outputs": written}))
    return 0


def _by_basename(directory) -> dict:
    return {path.stem: path for path in list_images(directory)}


def run_eval(config: RunConfig) -> int:
    if not (config.pred_dir and config.gt_dir and config.report):
        raise InvalidArgumentError("eval needs --pred-dir, --gt-dir and --report")
    predictions = _by_basename(config.pred_dir)
    truths = _by_basename(config.gt_dir)
    for name in sorted(set(predictions) ^ set(truths)):
        side = "ground truth" if name in predictions else "prediction"
        raise MissingPairError(f"no {side} for {name!r}")

    eval_config = EvalConfig()
    records = [
        evaluate_pair(name, load_png(predictions[name]), load_png(truths[name]), eval_config)
        for name in sorted(truths)
    ]
    summary = aggregate(records, eval_config)
    write_jsonl(config.report, [*records, summary])
    logger.info(f"Evaluated {summary.count} pairs: PSNR {summary.mean_psnr_db} dB, SSIM {summary.mean_ssim:.4f}")
    print(summary.model_dump_json())
    return 0


def run_sweep_command(config: RunConfig) -> int:
    rows = run_sweep(config)
    print(json.dumps({"cells": len(rows), "out": str(config.out)}))
    return 0


COMMANDS = {
    "synth": run_synth,
    "train": run_train,
    "infer": run_infer,
    "eval": run_eval,
    "sweep": run_sweep_command,
}


def _flag(parser, name: str, kind=str, **kwargs):
    parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=argparse.SUPPRESS, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    _flag(common, "seed", int)
    _flag(common, "out")

    network = argparse.ArgumentParser(add_help=False)
    _flag(network, "model", choices=["srr", "djrhr"])
    for name in ("depth", "width", "blocks", "growth", "layers_per_block"):
        _flag(network, name, int)
    _flag(network, "alpha", float)
    for name in ("lr", "lr_decay", "weight_decay"):
        _flag(network, name, float)
    for name in ("batch_size", "epochs", "patch_size", "crops_per_image"):
        _flag(network, name, int)
    _flag(network, "manifest")
    _flag(network, "val_manifest")
    _flag(network, "checkpoint")

    parser = argparse.ArgumentParser(prog="derain", description="Wavelet-domain rain and haze removal")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="synthesize LQ/HQ training pairs")
    _flag(synth, "mode", choices=["rain", "rain_haze"])
    _flag(synth, "hq_dir")
    _flag(synth, "split", choices=["train", "val", "test"])
    for name in ("count", "image_size", "rain_layers"):
        _flag(synth, name, int)
    for name in ("density", "intensity", "beta_min", "beta_max", "airlight_min", "airlight_max",
                 "depth_min", "depth_max"):
        _flag(synth, name, float)
    _flag(synth, "depth_mode", choices=["ramp", "fractal", "constant"])
    _flag(synth, "depth_path")

    train_cmd = sub.add_parser("train", parents=[common, network], help="train SRR-net or DJRHR-net")
    _flag(train_cmd, "resume")

    infer_cmd = sub.add_parser("infer", parents=[common], help="restore images with a trained checkpoint")
    _flag(infer_cmd, "checkpoint")
    _flag(infer_cmd, "input")

    eval_cmd = sub.add_parser("eval", parents=[common], help="PSNR / SSIM of predictions against ground truth")
    _flag(eval_cmd, "pred_dir")
    _flag(eval_cmd, "gt_dir")
    _flag(eval_cmd, "report")

    sweep = sub.add_parser("sweep", parents=[common, network], help="growth-rate / dense-block grid study")
    _flag(sweep, "sweep_growths")
    _flag(sweep, "sweep_blocks")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    logging.basicConfig(
        level=getattr(logging, args.pop("log_level")),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(config_path, args)
        return COMMANDS[command](config)
    except DerainError as e:
        logger.debug(f"{command} failed", exc_info=True)
        print(e.to_line(), file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        print(json.dumps({"error": "ValidationError", "detail": str(e).replace("\n", "; ")}), file=sys.stderr)
        return 2
    except OSError as e:
        print(json.dumps({"error": type(e).__name__, "detail": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
