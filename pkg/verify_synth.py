import json
import math
import sys

import numpy as np
import pytest
from pydantic import ValidationError

from derain.errors import DatasetError, ShapeMismatchError, SynthError
from derain.schemas import HazeParams, RainParams
from derain.storage import save_png
from derain.synth import (
    RAIN_PRESETS, apply_haze, apply_rain, generate_depth, generate_rain_layer, generate_scene, make_dataset,
    streak_kernel
)
from derain.wavelet import dwt2_haar


def test_presets_cover_twelve_streak_types():
    assert len(RAIN_PRESETS) == 12
    assert len({(p.angle, p.length) for p in RAIN_PRESETS}) == 12


@pytest.mark.parametrize("length", [1, 4, 8, 9, 10, 16, 21])
@pytest.mark.parametrize("angle", [-20.0, -5.0, 0.0, 15.0, 20.0])
def test_streak_kernel_is_one_unbroken_line(length, angle):
    kernel = streak_kernel(length, angle)
    assert kernel.sum() == length
    assert kernel.shape[0] == length
    assert (kernel.sum(axis=1) == 1).all()
    cols = kernel.argmax(axis=1)
    assert (np.abs(np.diff(cols)) <= 1).all()


def test_vertical_streak_kernel_is_a_column():
    assert streak_kernel(8, 0.0).shape == (8, 1)


def test_zero_density_layer_is_empty():
    layer = generate_rain_layer((32, 32), RainParams(density=0.0, seed=3))
    assert layer.shape == (1, 32, 32)
    assert not layer.any()


def test_same_seed_same_layer():
    params = RainParams(angle=5.0, length=9, seed=11)
    a = generate_rain_layer((48, 40), params, layer_index=1)
    b = generate_rain_layer((48, 40), params, layer_index=1)
    assert a.tobytes() == b.tobytes()
    assert 0.0 <= a.min() and a.max() <= 1.0


def test_vertical_streak_energy_avoids_lh():
    layer = generate_rain_layer((64, 64), RainParams(angle=0.0, length=15, density=4.0, seed=5))[0]
    assert layer.any()
    pack = dwt2_haar(layer.astype(np.float64))
    detail = np.sum(pack.lh ** 2) + np.sum(pack.hl ** 2) + np.sum(pack.hh ** 2)
    assert (np.sum(pack.hl ** 2) + np.sum(pack.hh ** 2)) / detail > 0.8


def test_apply_rain_examples():
    # values on the 1/256 grid keep the additions exact
    background = (np.random.default_rng(0).integers(0, 128, (3, 16, 16)) / 256).astype(np.float32)
    assert np.array_equal(apply_rain(background, []), background)

    layer = np.zeros((1, 16, 16), dtype=np.float32)
    layer[0, 4:9, 3] = 0.25
    rained = apply_rain(background, [layer])
    assert np.array_equal(rained - background, np.broadcast_to(layer, background.shape))

    white = np.ones((3, 16, 16), dtype=np.float32)
    assert np.array_equal(apply_rain(white, [layer]), white)

    with pytest.raises(ShapeMismatchError):
        apply_rain(background, [np.zeros((1, 8, 8))])


def test_apply_haze_examples():
    image = np.full((3, 4, 4), 0.2, dtype=np.float32)
    depth = np.full((4, 4), 2.0)

    clear = apply_haze(image, HazeParams(airlight=0.8, beta=0.0), depth)
    assert np.array_equal(clear, image)

    opaque = apply_haze(image, HazeParams(airlight=0.8, beta=1.0), np.full((4, 4), 1e3))
    assert np.allclose(opaque, 0.8)

    # t = exp(-0.5 * 2) ~ 0.3679, output = 0.2 t + 0.8 (1 - t)
    hazed = apply_haze(image, HazeParams(airlight=0.8, beta=0.5), depth)
    expected = 0.2 * math.exp(-1.0) + 0.8 * (1 - math.exp(-1.0))
    assert expected == pytest.approx(0.5793, abs=1e-4)
    assert np.allclose(hazed, expected, atol=1e-6)


def test_negative_beta_rejected():
    with pytest.raises(ValidationError):
        HazeParams(beta=-0.1)
    with pytest.raises(SynthError):
        apply_haze(np.zeros((3, 2, 2)), HazeParams.model_construct(airlight=0.8, beta=-0.1), np.ones((2, 2)))


def test_depth_modes():
    assert np.array_equal(generate_depth((5, 7), "constant", value=1.0), np.ones((5, 7), dtype=np.float32))

    ramp = generate_depth((16, 4), "ramp")
    assert (np.diff(ramp, axis=0) >= 0).all()
    assert ramp.min() > 0

    a = generate_depth((32, 32), "fractal", seed=9)
    b = generate_depth((32, 32), "fractal", seed=9)
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.5 and a.max() <= 3.0


def test_scene_is_structured_and_in_range():
    scene = generate_scene((32, 48), seed=2)
    assert scene.shape == (3, 32, 48)
    assert scene.min() >= 0.0 and scene.max() <= 1.0
    assert scene.std() > 0.05


def _tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_degenerate_synthesis_is_identity(tmp_path):
    make_dataset(None, 3, "rain_haze", 5, tmp_path / "d", image_size=24, density=0.0, beta_range=(0.0, 0.0))
    for name in ("00000.png", "00001.png", "00002.png"):
        assert (tmp_path / "d" / "lq" / name).read_bytes() == (tmp_path / "d" / "hq" / name).read_bytes()


def test_rerun_is_byte_identical(tmp_path):
    make_dataset(None, 4, "rain", 7, tmp_path / "a", image_size=24)
    make_dataset(None, 4, "rain", 7, tmp_path / "b", image_size=24)
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_rain_haze_manifest_rows(tmp_path):
    rows = make_dataset(None, 3, "rain_haze", 1, tmp_path / "d", image_size=16)
    assert len(rows) == 3
    lines = (tmp_path / "d" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 3
    for line in lines:
        record = json.loads(line)
        assert record["mode"] == "rain_haze"
        assert record["rain_params"]["layers"] >= 1
        assert 0.6 <= record["haze_params"]["airlight"] <= 1.0


def test_photo_sources(tmp_path):
    source = tmp_path / "photos"
    save_png(source / "scene.png", generate_scene((40, 30), seed=1))
    rows = make_dataset(str(source), 2, "rain", 3, tmp_path / "d", image_size=16)
    assert [row.mode for row in rows] == ["rain", "rain"]
    assert (tmp_path / "d" / "hq" / "00001.png").is_file()


def test_empty_source_dir_rejected(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        make_dataset(str(tmp_path / "empty"), 2, "rain", 0, tmp_path / "out")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
