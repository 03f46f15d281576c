import sys
import time

import numpy as np
import pytest

from derain.errors import OddSizeError, ShapeMismatchError
from derain.wavelet import WaveletPack, dwt2_haar, idwt2_haar


def test_constant_image():
    c = 0.37
    pack = dwt2_haar(np.full((3, 8, 6), c))
    assert np.allclose(pack.ll, 2 * c)
    for band in (pack.lh, pack.hl, pack.hh):
        assert not band.any()


def test_single_block_values():
    pack = dwt2_haar(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert (pack.ll.item(), pack.hl.item(), pack.lh.item(), pack.hh.item()) == (5.0, -1.0, -2.0, 0.0)


def test_vertical_streaks_live_in_hl():
    columns = np.tile(np.array([0.0, 1.0]), 8)
    image = np.repeat(columns[None, :], 10, axis=0)
    pack = dwt2_haar(image)
    assert not pack.lh.any()
    detail = np.sum(pack.lh ** 2) + np.sum(pack.hl ** 2) + np.sum(pack.hh ** 2)
    assert np.sum(pack.hl ** 2) == pytest.approx(detail)


def test_inverse_of_constant_ll():
    c = 0.6
    zeros = np.zeros((3, 4, 5))
    image = idwt2_haar(WaveletPack(ll=np.full((3, 4, 5), 2 * c), lh=zeros, hl=zeros, hh=zeros))
    assert image.shape == (3, 8, 10)
    assert np.allclose(image, c)


def test_two_sided_inverse():
    rng = np.random.default_rng(0)
    pack = WaveletPack(*(rng.standard_normal((3, 6, 7)) for _ in range(4)))
    again = dwt2_haar(idwt2_haar(pack))
    for a, b in zip(again.bands(), pack.bands()):
        assert np.abs(a - b).max() <= 1e-6


def test_linearity():
    rng = np.random.default_rng(1)
    x, y = rng.random((3, 8, 8)), rng.random((3, 8, 8))
    combined = dwt2_haar(2.5 * x - 0.5 * y)
    px, py = dwt2_haar(x), dwt2_haar(y)
    for c, a, b in zip(combined.bands(), px.bands(), py.bands()):
        assert np.allclose(c, 2.5 * a - 0.5 * b)


def test_random_images_reconstruct_and_keep_energy():
    rng = np.random.default_rng(2)
    started = time.perf_counter()
    for _ in range(1000):
        height, width = 2 * rng.integers(1, 65, size=2)
        image = rng.random((3, height, width), dtype=np.float32)
        pack = dwt2_haar(image)
        assert pack.source_dims == (height, width)
        restored = idwt2_haar(pack)
        assert restored.dtype == np.float32
        assert np.abs(restored - image).max() <= 1e-6
        energy = float(np.sum(image.astype(np.float64) ** 2))
        assert abs(pack.energy() - energy) <= 1e-5 * energy
    assert time.perf_counter() - started < 10.0


def test_odd_size_asks_for_padding():
    with pytest.raises(OddSizeError, match="pad"):
        dwt2_haar(np.zeros((3, 5, 4)))


def test_inconsistent_subbands():
    ll = np.zeros((3, 4, 4))
    with pytest.raises(ShapeMismatchError):
        idwt2_haar(WaveletPack(ll=ll, lh=ll, hl=np.zeros((3, 4, 5)), hh=ll))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
