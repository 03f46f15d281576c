import math
import sys

import numpy as np
import pytest

from derain.errors import ShapeMismatchError, WindowSizeError
from derain.metrics import INF, aggregate, evaluate_pair, psnr, ssim
from derain.schemas import EvalConfig
from derain.synth import generate_scene


def _scene(seed=0, dims=(32, 32)):
    return generate_scene(dims, seed).astype(np.float64)


def test_psnr_identical_is_infinite():
    a = _scene()
    assert psnr(a, a) == math.inf
    assert evaluate_pair("same", a, a).psnr_db == INF


def test_psnr_uniform_offset():
    a = np.random.default_rng(0).uniform(0.0, 1.0 - 10 / 255, (3, 16, 16))
    assert psnr(a, a + 10 / 255) == pytest.approx(20 * math.log10(255 / 10), abs=1e-6)
    assert psnr(a, a + 10 / 255) == pytest.approx(28.13, abs=0.01)


def test_psnr_falls_as_noise_grows():
    a = _scene(7)
    noise = np.random.default_rng(7).uniform(-1.0, 1.0, a.shape)
    scores = [psnr(a, a + amplitude * noise) for amplitude in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(earlier > later for earlier, later in zip(scores, scores[1:]))


def test_ssim_of_identical_images_is_exactly_one():
    a = _scene(1)
    assert ssim(a, a.copy()) == 1.0


def test_ssim_inverted_image_is_low():
    a = _scene(2)
    assert ssim(a, 1.0 - a) < 0.5


def test_ssim_flat_images_reduce_to_luminance_term():
    p, q = 0.3, 0.7
    config = EvalConfig()
    c1 = (config.k1 * config.peak) ** 2
    expected = (2 * p * q + c1) / (p * p + q * q + c1)
    assert ssim(np.full((3, 16, 16), p), np.full((3, 16, 16), q)) == pytest.approx(expected, rel=1e-9)


def test_metrics_are_symmetric():
    a, b = _scene(3), _scene(4)
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)


def test_ssim_below_one_for_different_images():
    a = _scene(5)
    b = np.clip(a + np.random.default_rng(5).normal(0, 0.05, a.shape), 0, 1)
    assert ssim(a, b) < 1.0


def test_errors():
    with pytest.raises(ShapeMismatchError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(WindowSizeError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


def test_aggregate_equals_row_means():
    truth = [_scene(s) for s in range(3)]
    noisy = [np.clip(t + 0.02 * (i + 1), 0, 1) for i, t in enumerate(truth)]
    records = [evaluate_pair(f"img{i}", p, t) for i, (p, t) in enumerate(zip(noisy, truth))]
    summary = aggregate(records)
    assert summary.count == 3
    assert summary.mean_psnr_db == pytest.approx(sum(r.psnr_db for r in records) / 3)
    assert summary.mean_ssim == pytest.approx(sum(r.ssim for r in records) / 3)
    assert summary.niqe is None
    assert summary.config.color_space == "rgb"


def test_aggregate_with_perfect_row_is_infinite():
    a = _scene(6)
    records = [evaluate_pair("perfect", a, a), evaluate_pair("noisy", np.clip(a + 0.1, 0, 1), a)]
    assert aggregate(records).mean_psnr_db == INF


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
