"""
Desk-scale learning experiments. Each trains a full-size network for up to
30 epochs on CPU; run with `pytest -m slow repro_acceptance.py`.
"""
import sys
from pathlib import Path

import pytest

from derain.config import RunConfig
from derain.metrics import aggregate, evaluate_pair
from derain.models import infer
from derain.storage import load_pairs
from derain.synth import make_dataset
from derain.train import train

pytestmark = pytest.mark.slow

TRAIN_COUNT = 64
TEST_COUNT = 16
IMAGE_SIZE = 128


def _datasets(root: Path, mode: str) -> tuple:
    make_dataset(None, TRAIN_COUNT, mode, 101, root / "train", image_size=IMAGE_SIZE)
    make_dataset(None, TEST_COUNT, mode, 202, root / "test", image_size=IMAGE_SIZE, split="test")
    return root / "train" / "manifest.jsonl", root / "test" / "manifest.jsonl"


def _gain(network, test_manifest) -> tuple:
    rows, lq, hq = load_pairs(test_manifest)
    before = aggregate([evaluate_pair(str(i), x, y) for i, (x, y) in enumerate(zip(lq, hq))])
    after = aggregate([evaluate_pair(str(i), infer(network, x), y) for i, (x, y) in enumerate(zip(lq, hq))])
    print(f"PSNR {before.mean_psnr_db:.2f} -> {after.mean_psnr_db:.2f} dB, "
          f"SSIM {before.mean_ssim:.3f} -> {after.mean_ssim:.3f}")
    return after.mean_psnr_db - before.mean_psnr_db, after.mean_ssim - before.mean_ssim


def _djrhr_config(train_manifest, out) -> RunConfig:
    return RunConfig(model="djrhr", growth=12, blocks=3, alpha=0.5, lr=1e-3, lr_decay=0.95, batch_size=10,
                     epochs=30, manifest=str(train_manifest), out=str(out))


def test_djrhr_learns_rain_and_haze(tmp_path):
    train_manifest, test_manifest = _datasets(tmp_path, "rain_haze")
    result = train(_djrhr_config(train_manifest, tmp_path / "djrhr"))
    psnr_gain, ssim_gain = _gain(result.network, test_manifest)
    assert psnr_gain >= 3.0
    assert ssim_gain >= 0.05


def test_srr_learns_rain(tmp_path):
    train_manifest, test_manifest = _datasets(tmp_path, "rain")
    config = RunConfig(model="srr", depth=20, width=64, lr=1e-3, lr_decay=0.95, batch_size=10, epochs=30,
                       manifest=str(train_manifest), out=str(tmp_path / "srr"))
    psnr_gain, _ = _gain(train(config).network, test_manifest)
    assert psnr_gain >= 3.0


def test_djrhr_runs_are_bitwise_reproducible(tmp_path):
    train_manifest, _ = _datasets(tmp_path, "rain_haze")
    first = train(_djrhr_config(train_manifest, tmp_path / "one"))
    second = train(_djrhr_config(train_manifest, tmp_path / "two"))
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-m", "slow", "-s"]))
