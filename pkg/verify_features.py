import sys

import numpy as np
import pytest

from derain.errors import ChannelCountError, InvalidArgumentError
from derain.features import FeaturePack, dark_channel, pack_djrhr, pack_srr, unpack_to_image
from derain.schemas import HazeParams
from derain.synth import apply_haze, generate_scene


def _image(shape, seed=0):
    return np.random.default_rng(seed).random(shape).astype(np.float32)


def test_dark_channel_examples():
    pixel = np.array([0.8, 0.3, 0.5], dtype=np.float32).reshape(3, 1, 1)
    assert dark_channel(pixel).item() == pytest.approx(0.3)

    gray = _image((1, 6, 6))
    assert np.array_equal(dark_channel(np.repeat(gray, 3, axis=0)), gray)


def test_dark_channel_window_takes_local_minimum():
    image = np.ones((3, 5, 5), dtype=np.float32)
    image[1, 2, 2] = 0.1
    dark = dark_channel(image, radius=1)
    assert dark[0, 1:4, 1:4].max() == pytest.approx(0.1)
    assert dark[0, 0, 0] == 1.0


@pytest.mark.parametrize("radius", [0, 2])
def test_dark_channel_is_monotone(radius):
    x = _image((3, 12, 12), seed=1)
    y = np.minimum(x + _image((3, 12, 12), seed=2) * 0.3, 1.0)
    assert (y >= x).all()
    assert (dark_channel(x, radius) <= dark_channel(y, radius)).all()


def test_dark_channel_errors():
    with pytest.raises(ChannelCountError):
        dark_channel(np.zeros((4, 2, 2)))
    with pytest.raises(InvalidArgumentError):
        dark_channel(np.zeros((3, 2, 2)), radius=-1)


def test_haze_lifts_dark_channel_by_airlight_share():
    clean = generate_scene((32, 32), seed=4)
    haze = HazeParams(airlight=0.9, beta=0.7, depth_mode="constant")
    depth = np.linspace(0.5, 2.5, 32 * 32).reshape(32, 32)
    hazed = apply_haze(clean, haze, depth)
    t = np.exp(-0.7 * depth)
    expected = t * dark_channel(clean)[0] + (1 - t) * 0.9
    assert np.allclose(dark_channel(hazed)[0], expected, atol=1e-5)


def test_pack_shapes():
    assert pack_srr(_image((3, 64, 64))).tensor.shape == (12, 32, 32)
    assert pack_djrhr(_image((3, 64, 64))).tensor.shape == (13, 32, 32)

    odd = pack_srr(_image((3, 65, 64)))
    assert odd.tensor.shape == (12, 33, 32)
    assert odd.source_size == (65, 64)


def test_round_trips():
    for shape in [(3, 64, 64), (3, 65, 63), (2, 3, 10, 14)]:
        image = _image(shape)
        assert np.abs(unpack_to_image(pack_srr(image)) - image).max() <= 1e-6
        assert np.abs(unpack_to_image(pack_djrhr(image)) - image).max() <= 1e-6


def test_constant_gray_dark_channel():
    g = 0.42
    pack = pack_djrhr(np.full((3, 16, 16), g, dtype=np.float32))
    assert np.allclose(pack.dark, g, atol=1e-7)


def test_thirteenth_channel_is_discarded():
    pack = pack_djrhr(_image((3, 20, 18)))
    mutated = pack.tensor.copy()
    mutated[12] = np.random.default_rng(3).random(mutated[12].shape) * 100
    assert np.array_equal(unpack_to_image(pack.with_tensor(mutated)), unpack_to_image(pack))


def test_zero_subbands_give_black_image():
    pack = pack_srr(_image((3, 8, 8)))
    black = unpack_to_image(pack.with_tensor(np.zeros_like(pack.tensor)))
    assert black.shape == (3, 8, 8)
    assert not black.any()


def test_unpack_needs_source_size():
    with pytest.raises(InvalidArgumentError):
        unpack_to_image(FeaturePack(subbands=np.zeros((12, 4, 4))))


def test_non_rgb_input_rejected():
    with pytest.raises(ChannelCountError):
        pack_srr(np.zeros((1, 8, 8)))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
