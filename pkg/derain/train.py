import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from derain.checkpoint import load_checkpoint, save_checkpoint
from derain.config import RunConfig
from derain.errors import DatasetModelMismatchError, InvalidArgumentError
from derain.features import pack_djrhr, pack_srr
from derain.metrics import aggregate, evaluate_pair, psnr, psnr_field
from derain.models import Network, build_network, infer, network_from_checkpoint, network_loss
from derain.optim import Adam
from derain.schemas import EpochLog, StepLog, SweepRow
from derain.storage import JsonlWriter, load_pairs, write_jsonl

logger = logging.getLogger(__name__)

# SRR-net learns rain-only pairs, DJRHR-net rain + haze pairs
MODEL_DATA_MODE = {"srr": "rain", "djrhr": "rain_haze"}
CHECKPOINT_NAME = "checkpoint.djrh"
TRAIN_LOG_NAME = "train_log.jsonl"


@dataclass
class TrainResult:
    network: Network
    checkpoint: Path
    epoch_logs: list


def check_dataset_mode(rows: list, model: str):
    expected = MODEL_DATA_MODE[model]
    wrong = sorted({row.mode for row in rows if row.mode != expected})
    if wrong:
        channels = 12 if model == "srr" else 13
        raise DatasetModelMismatchError(
            f"model {model} ({channels}-channel input) trains on {expected!r} data, manifest contains {wrong}"
        )


def aligned_crop(rng: np.random.Generator, lq: np.ndarray, hq: np.ndarray, patch: int) -> tuple:
    """Same random window from both images, top-left on even coordinates"""
    height, width = lq.shape[-2:]
    ph, pw = min(patch, height - height % 2), min(patch, width - width % 2)
    y = 2 * int(rng.integers(0, (height - ph) // 2 + 1))
    x = 2 * int(rng.integers(0, (width - pw) // 2 + 1))
    return lq[:, y:y + ph, x:x + pw], hq[:, y:y + ph, x:x + pw]


def make_batch(kind: str, lq: list, hq: list, indices, rng: np.random.Generator, patch: int) -> tuple:
    crops = [aligned_crop(rng, lq[i], hq[i], patch) for i in indices]
    lq_batch = np.stack([c[0] for c in crops])
    hq_batch = np.stack([c[1] for c in crops])
    pack = pack_srr if kind == "srr" else pack_djrhr
    return pack(lq_batch).tensor, pack(hq_batch).tensor


def evaluate_network(net: Network, rows: list, lq: list, hq: list) -> tuple:
    records = [evaluate_pair(Path(row.lq_path).stem, infer(net, x), y) for row, x, y in zip(rows, lq, hq)]
    return records, aggregate(records)


def _mean(values: list) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def train(config: RunConfig) -> TrainResult:
    if not config.manifest:
        raise InvalidArgumentError("training needs a dataset manifest")
    if not config.out:
        raise InvalidArgumentError("training needs an output directory")
    rows, lq, hq = load_pairs(config.manifest)
    check_dataset_mode(rows, config.model)
    val = load_pairs(config.val_manifest) if config.val_manifest else None

    start_epoch = 0
    if config.resume:
        saved = load_checkpoint(config.resume)
        net = network_from_checkpoint(saved)
        if net.kind != config.model:
            raise DatasetModelMismatchError(f"resume checkpoint holds {net.kind}, config asks for {config.model}")
        start_epoch = saved.header.get("epoch", 0)
    else:
        net = build_network(config.network_spec(), config.seed)

    optimizer = Adam(
        net.params,
        lr=config.lr * config.lr_decay ** start_epoch,
        weight_decay=config.resolved_weight_decay,
        lr_decay=config.lr_decay,
    )
    if config.resume:
        saved.restore_state(optimizer.state)

    out_dir = Path(config.out)
    checkpoint_path = Path(config.checkpoint) if config.checkpoint else out_dir / CHECKPOINT_NAME
    weights = config.loss_weights()
    header = net.header()

    save_checkpoint(checkpoint_path, net.params, optimizer.state, {**header, "epoch": start_epoch})
    logger.info(
        f"Training {net.kind} on {len(rows)} pairs: epochs={config.epochs} batch={config.batch_size} "
        f"lr={optimizer.state.lr:g} weight_decay={config.resolved_weight_decay:g}"
    )

    epoch_logs = []
    with JsonlWriter(out_dir / TRAIN_LOG_NAME) as log:
        for epoch in range(start_epoch, config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(np.repeat(np.arange(len(rows)), config.crops_per_image))
            totals, l1s, l2s = [], [], []
            lr = optimizer.state.lr
            for step, first in enumerate(range(0, len(order), config.batch_size)):
                X, Y = make_batch(net.kind, lq, hq, order[first:first + config.batch_size], rng, config.patch_size)
                result = network_loss(net, X, Y, weights)
                optimizer.step(result.graph.backward(result.total))
                record = StepLog(
                    epoch=epoch, step=step, lr=lr, total=result.total.item(),
                    l1=result.l1.item() if result.l1 is not None else None,
                    l2=result.l2.item() if result.l2 is not None else None,
                )
                log.write(record)
                totals.append(record.total)
                if record.l1 is not None:
                    l1s.append(record.l1)
                    l2s.append(record.l2)

            optimizer.decay_lr()
            save_checkpoint(checkpoint_path, net.params, optimizer.state, {**header, "epoch": epoch + 1})
            epoch_log = EpochLog(
                epoch=epoch, steps=len(totals), lr=lr, total=_mean(totals),
                l1=_mean(l1s), l2=_mean(l2s), checkpoint=str(checkpoint_path),
            )
            if val is not None:
                _, summary = evaluate_network(net, *val)
                epoch_log.val_psnr_db = summary.mean_psnr_db
                epoch_log.val_ssim = summary.mean_ssim
            log.write(epoch_log)
            epoch_logs.append(epoch_log)
            logger.info(f"epoch {epoch}: loss={epoch_log.total:.6g} steps={epoch_log.steps} lr={lr:.6g}")

    return TrainResult(network=net, checkpoint=checkpoint_path, epoch_logs=epoch_logs)


def _int_list(text: str) -> list:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidArgumentError(f"expected a comma-separated list of integers, got {text!r}")


def run_sweep(config: RunConfig) -> list:
    """Train one DJRHR-net per (growth, blocks) cell and score each on the validation manifest"""
    if not config.val_manifest:
        raise InvalidArgumentError("the parameter sweep needs val_manifest")
    if not config.out:
        raise InvalidArgumentError("the parameter sweep needs an output directory")
    rows, lq, hq = load_pairs(config.val_manifest)
    input_psnr = psnr_field(_mean([psnr(x, y) for x, y in zip(lq, hq)]))

    results = []
    for blocks in _int_list(config.sweep_blocks):
        for growth in _int_list(config.sweep_growths):
            cell_dir = Path(config.out) / f"K{growth}_L{blocks}"
            cell = config.model_copy(update={
                "model": "djrhr", "growth": growth, "blocks": blocks,
                "out": str(cell_dir), "checkpoint": None, "resume": None, "val_manifest": None,
            })
            trained = train(cell)
            _, summary = evaluate_network(trained.network, rows, lq, hq)
            row = SweepRow(
                growth=growth, blocks=blocks, param_count=trained.network.param_count(),
                input_psnr_db=input_psnr, mean_psnr_db=summary.mean_psnr_db, mean_ssim=summary.mean_ssim,
            )
            results.append(row)
            logger.info(f"sweep K={growth} L={blocks}: PSNR {summary.mean_psnr_db} dB")
    write_jsonl(Path(config.out) / "sweep.jsonl", results)
    return results
