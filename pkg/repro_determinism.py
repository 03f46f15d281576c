import sys

import pytest

from derain.main import main


def _pipeline(root):
    """synth -> train -> infer -> eval with fixed seeds; returns the produced artifacts"""
    data, val, run = root / "train", root / "val", root / "run"
    tiny = ["--growth", "3", "--blocks", "1", "--layers-per-block", "2", "--patch-size", "12",
            "--batch-size", "4", "--crops-per-image", "2"]
    steps = [
        ["synth", "--mode", "rain_haze", "--count", "4", "--seed", "11", "--image-size", "24", "--out", str(data)],
        ["synth", "--mode", "rain_haze", "--count", "2", "--seed", "12", "--image-size", "24", "--split", "val",
         "--out", str(val)],
        ["train", "--model", "djrhr", *tiny, "--epochs", "2", "--seed", "5",
         "--manifest", str(data / "manifest.jsonl"), "--out", str(run)],
        ["infer", "--checkpoint", str(run / "checkpoint.djrh"), "--input", str(val / "lq"), "--out", str(run / "pred")],
        ["eval", "--pred-dir", str(run / "pred"), "--gt-dir", str(val / "hq"), "--report", str(run / "eval.jsonl")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    outputs = {p.name: p.read_bytes() for p in sorted((run / "pred").glob("*.png"))}
    return (run / "checkpoint.djrh").read_bytes(), outputs, (run / "eval.jsonl").read_bytes()


def test_end_to_end_runs_are_byte_identical(tmp_path):
    first = _pipeline(tmp_path / "one")
    second = _pipeline(tmp_path / "two")
    assert first[0] == second[0]
    assert first[1] == second[1] and len(first[1]) == 2
    assert first[2] == second[2]


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
