import json
import sys

import numpy as np
import pytest

from derain.checkpoint import save_checkpoint
from derain.config import load_config
from derain.errors import ConfigError
from derain.main import main
from derain.models import build_srr
from derain.schemas import SrrSpec
from derain.storage import load_png, save_png
from derain.synth import generate_scene


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _error(stderr):
    lines = [line for line in stderr.splitlines() if line.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture
def dataset(tmp_path, capsys):
    out = tmp_path / "data"
    code, _, _ = _run(capsys, "synth", "--mode", "rain_haze", "--count", 3, "--seed", 7,
                      "--image-size", 32, "--out", out)
    assert code == 0
    return out


@pytest.fixture
def identity_checkpoint(tmp_path, dataset, capsys):
    run = tmp_path / "run0"
    code, out, _ = _run(capsys, "train", "--model", "djrhr", "--growth", 4, "--blocks", 1,
                        "--layers-per-block", 2, "--epochs", 0, "--manifest", dataset / "manifest.jsonl",
                        "--out", run)
    assert code == 0
    return json.loads(out)["checkpoint"]


def test_synth_writes_pairs_and_manifest(tmp_path, capsys):
    print("🚀 synth --mode rain --count 8 --seed 7")
    first, second = tmp_path / "a", tmp_path / "b"
    for target in (first, second):
        code, _, _ = _run(capsys, "synth", "--mode", "rain", "--count", 8, "--seed", 7,
                          "--image-size", 24, "--out", target)
        assert code == 0
    rows = (first / "manifest.jsonl").read_text().splitlines()
    assert len(rows) == 8
    assert all(json.loads(row)["haze_params"] is None for row in rows)
    assert len(list((first / "lq").glob("*.png"))) == 8

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in root.rglob("*") if p.is_file()}

    assert tree(first) == tree(second)


def test_rain_haze_rows_carry_haze_params(dataset):
    for line in (dataset / "manifest.jsonl").read_text().splitlines():
        assert json.loads(line)["haze_params"]["beta"] >= 0


def test_untrained_checkpoint_reproduces_inputs(tmp_path, dataset, identity_checkpoint, capsys):
    out = tmp_path / "pred"
    code, stdout, _ = _run(capsys, "infer", "--checkpoint", identity_checkpoint, "--input", dataset / "lq",
                           "--out", out)
    assert code == 0
    assert len(json.loads(stdout)["outputs"]) == 3
    for source in sorted((dataset / "lq").glob("*.png")):
        restored = out / source.name
        assert restored.is_file()
        assert np.array_equal(load_png(restored), load_png(source))


def test_infer_keeps_odd_dimensions(tmp_path, identity_checkpoint, capsys):
    source = save_png(tmp_path / "odd.png", generate_scene((65, 63), seed=2))
    code, _, _ = _run(capsys, "infer", "--checkpoint", identity_checkpoint, "--input", source,
                      "--out", tmp_path / "pred")
    assert code == 0
    assert load_png(tmp_path / "pred" / "odd.png").shape == (3, 65, 63)


def test_eval_of_identical_dirs(tmp_path, dataset, capsys):
    report = tmp_path / "eval.jsonl"
    code, _, _ = _run(capsys, "eval", "--pred-dir", dataset / "hq", "--gt-dir", dataset / "hq", "--report", report)
    assert code == 0
    lines = [json.loads(line) for line in report.read_text().splitlines()]
    rows, summary = lines[:-1], lines[-1]
    assert len(rows) == 3
    assert all(row["psnr_db"] == "inf" and row["ssim"] == 1.0 for row in rows)
    assert summary["aggregate"] is True
    assert summary["mean_ssim"] == 1.0
    assert summary["config"]["color_space"] == "rgb"


def test_eval_aggregate_is_row_mean(tmp_path, dataset, capsys):
    report = tmp_path / "eval.jsonl"
    code, _, _ = _run(capsys, "eval", "--pred-dir", dataset / "lq", "--gt-dir", dataset / "hq", "--report", report)
    assert code == 0
    lines = [json.loads(line) for line in report.read_text().splitlines()]
    rows, summary = lines[:-1], lines[-1]
    assert summary["count"] == len(rows)
    assert summary["mean_psnr_db"] == pytest.approx(sum(r["psnr_db"] for r in rows) / len(rows))
    assert summary["mean_ssim"] == pytest.approx(sum(r["ssim"] for r in rows) / len(rows))


def test_eval_missing_pair_names_basename(tmp_path, dataset, capsys):
    pred = tmp_path / "pred"
    for source in sorted((dataset / "hq").glob("*.png"))[:2]:
        save_png(pred / source.name, load_png(source))
    code, _, err = _run(capsys, "eval", "--pred-dir", pred, "--gt-dir", dataset / "hq",
                        "--report", tmp_path / "eval.jsonl")
    assert code != 0
    error = _error(err)
    assert error["error"] == "MissingPairError"
    assert "00002" in error["detail"]


def test_model_dataset_mismatch_fails_before_training(tmp_path, dataset, capsys):
    code, _, err = _run(capsys, "train", "--model", "srr", "--depth", 3, "--width", 4,
                        "--manifest", dataset / "manifest.jsonl", "--out", tmp_path / "srr")
    assert code != 0
    assert _error(err)["error"] == "DatasetModelMismatchError"
    assert not (tmp_path / "srr").exists()


def test_mismatched_checkpoint_is_rejected(tmp_path, capsys):
    path = tmp_path / "broken.djrh"
    path.write_bytes(b"JUNKJUNKJUNK")
    code, _, err = _run(capsys, "infer", "--checkpoint", path, "--input", tmp_path, "--out", tmp_path / "o")
    assert code != 0
    assert _error(err)["error"] == "CheckpointFormatError"


def test_checkpoint_header_without_fields_is_one_json_line(tmp_path, capsys):
    net = build_srr(SrrSpec(depth=3, width=4))
    path = save_checkpoint(tmp_path / "partial.djrh", net.params, header={"kind": net.header()["kind"]})
    code, _, err = _run(capsys, "infer", "--checkpoint", path, "--input", tmp_path, "--out", tmp_path / "o")
    assert code != 0
    assert _error(err)["error"] == "CheckpointFormatError"


def test_bad_paths_fail_with_one_json_line(tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--manifest", tmp_path / "missing.jsonl", "--out", tmp_path / "r")
    assert code != 0
    assert _error(err)["error"] == "DatasetError"


def test_config_file_and_flag_precedence(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("# toy run\nmodel = srr\nepochs = 3\nlr = 0.002\n", encoding="utf-8")
    resolved = load_config(str(config), {"epochs": 5})
    assert (resolved.model, resolved.epochs, resolved.lr) == ("srr", 5, 0.002)
    assert resolved.resolved_weight_decay == 1e-6


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    config = tmp_path / "run.cfg"
    config.write_text("learning_speed = 4\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(config))
    code, _, err = _run(capsys, "synth", "--config", config, "--out", tmp_path / "d")
    assert code == 2
    assert _error(err)["error"] == "ConfigError"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
