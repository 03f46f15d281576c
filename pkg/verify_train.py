import json
import sys

import numpy as np
import pytest

from derain.checkpoint import load_checkpoint
from derain.config import RunConfig
from derain.errors import InvalidArgumentError
from derain.synth import make_dataset
from derain.train import TRAIN_LOG_NAME, aligned_crop, run_sweep, train


@pytest.fixture
def data(tmp_path):
    make_dataset(None, 3, "rain_haze", 2, tmp_path / "train", image_size=24)
    make_dataset(None, 2, "rain_haze", 3, tmp_path / "val", image_size=24, split="val")
    return tmp_path


def _config(data, **overrides):
    values = dict(
        model="djrhr", growth=3, blocks=1, layers_per_block=1, epochs=2, batch_size=3, patch_size=12,
        crops_per_image=1, manifest=str(data / "train" / "manifest.jsonl"), out=str(data / "run"),
    )
    values.update(overrides)
    return RunConfig(**values)


def test_aligned_crop_starts_on_even_coordinates():
    rng = np.random.default_rng(0)
    lq = np.arange(3 * 11 * 13, dtype=np.float32).reshape(3, 11, 13)
    for _ in range(20):
        a, b = aligned_crop(rng, lq, lq + 1, 6)
        assert a.shape == (3, 6, 6)
        assert np.array_equal(b, a + 1)
        row, col = divmod(int(a[0, 0, 0]), 13)
        assert row % 2 == 0 and col % 2 == 0


def test_zero_epochs_saves_identity_checkpoint(data):
    result = train(_config(data, epochs=0))
    saved = load_checkpoint(result.checkpoint)
    assert saved.header["epoch"] == 0
    assert not saved.params["head.weight"].any()
    assert (data / "run" / TRAIN_LOG_NAME).read_text() == ""


def test_learning_rate_decays_per_epoch(data):
    result = train(_config(data, epochs=3, lr=1e-3, lr_decay=0.95))
    assert [log.lr for log in result.epoch_logs] == pytest.approx([1e-3, 9.5e-4, 9.025e-4])


def test_validation_scores_are_logged(data):
    result = train(_config(data, epochs=1, val_manifest=str(data / "val" / "manifest.jsonl")))
    assert result.epoch_logs[0].val_ssim is not None
    assert result.epoch_logs[0].val_psnr_db is not None


def test_same_seed_gives_identical_checkpoint_bytes(data):
    first = train(_config(data, out=str(data / "a")))
    second = train(_config(data, out=str(data / "b")))
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()
    steps = [
        [line for line in (data / run / TRAIN_LOG_NAME).read_text().splitlines() if '"kind":"step"' in line]
        for run in ("a", "b")
    ]
    assert steps[0] and steps[0] == steps[1]


def test_resume_continues_from_saved_epoch(data):
    first = train(_config(data, epochs=2, out=str(data / "part")))
    resumed = train(_config(data, epochs=3, out=str(data / "rest"), resume=str(first.checkpoint)))
    assert [log.epoch for log in resumed.epoch_logs] == [2]
    assert resumed.epoch_logs[0].lr == pytest.approx(1e-3 * 0.95 ** 2)
    saved = load_checkpoint(resumed.checkpoint)
    assert saved.header["epoch"] == 3
    assert saved.adam_t == load_checkpoint(first.checkpoint).adam_t + 1


def test_sweep_writes_one_row_per_cell(data):
    config = _config(data, epochs=1, sweep_growths="2,4", sweep_blocks="1",
                     val_manifest=str(data / "val" / "manifest.jsonl"), out=str(data / "sweep"))
    rows = run_sweep(config)
    assert [(row.growth, row.blocks) for row in rows] == [(2, 1), (4, 1)]
    assert rows[0].param_count < rows[1].param_count
    lines = (data / "sweep" / "sweep.jsonl").read_text().splitlines()
    assert [json.loads(line)["growth"] for line in lines] == [2, 4]
    assert (data / "sweep" / "K4_L1" / "checkpoint.djrh").is_file()


def test_sweep_needs_validation_set(data):
    with pytest.raises(InvalidArgumentError):
        run_sweep(_config(data))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
