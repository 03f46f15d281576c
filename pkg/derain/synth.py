"""
Procedural LQ/HQ pair synthesis.

Rain model:         O = clamp(B + sum_t R_t)
Rain + haze model:  O = t * (B + sum_t R_t) + (1 - t) * A,  t = exp(-beta * depth)
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import convolve, zoom

from derain.errors import DatasetError, InvalidArgumentError, ShapeMismatchError, SynthError
from derain.schemas import HazeParams, ManifestRow, RainParams
from derain.storage import (
    MANIFEST_NAME, list_images, load_depth_png, load_png, quantize, save_png, write_jsonl
)

logger = logging.getLogger(__name__)

MODES = ("rain", "rain_haze")
DEPTH_MODES = ("ramp", "fractal", "constant")

# 4 angles x 3 lengths stand in for twelve streak types
RAIN_PRESETS = tuple(
    RainParams(angle=angle, length=length)
    for angle in (-15.0, -5.0, 5.0, 15.0)
    for length in (9, 15, 21)
)


def streak_kernel(length: int, angle: float) -> np.ndarray:
    """Binary line kernel of `length` taps tilted `angle` degrees from vertical"""
    # one tap per row: angles stay within 20 degrees of vertical
    rows = np.arange(length) - length // 2
    cols = np.rint(rows * np.tan(np.deg2rad(angle))).astype(int)
    kernel = np.zeros((rows.max() - rows.min() + 1, cols.max() - cols.min() + 1))
    kernel[rows - rows.min(), cols - cols.min()] = 1.0
    return kernel


def generate_rain_layer(dims: tuple, params: RainParams, layer_index: int = 0) -> np.ndarray:
    """Sparse streak map (1, H, W) in [0, 1]: thresholded noise, directional blur, intensity"""
    height, width = dims
    rng = np.random.default_rng([params.seed & 0xFFFFFFFF, layer_index])
    noise = rng.random((height, width))
    brightness = rng.uniform(0.6, 1.0, size=(height, width))
    drops = np.where(noise < params.density / 1000.0, brightness, 0.0)
    streaks = convolve(drops, streak_kernel(params.length, params.angle), mode="constant")
    layer = np.clip(streaks, 0.0, 1.0) * params.intensity
    return layer.astype(np.float32)[None]


def apply_rain(background: np.ndarray, layers: Sequence[np.ndarray]) -> np.ndarray:
    """Add achromatic streak layers to every color channel and clamp to [0, 1]"""
    out = np.array(background, copy=True)
    for index, layer in enumerate(layers):
        layer = np.asarray(layer)
        if layer.shape[-2:] != out.shape[-2:]:
            raise ShapeMismatchError(f"rain layer {index} vs image", layer.shape, out.shape)
        out = out + layer.reshape(layer.shape[-2:]).astype(out.dtype)
    return np.clip(out, 0.0, 1.0)


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-beta * np.asarray(depth, dtype=np.float64))


def apply_haze(image: np.ndarray, haze: HazeParams, depth: np.ndarray) -> np.ndarray:
    """Atmospheric scattering: t * image + (1 - t) * A with t = exp(-beta * depth)"""
    if haze.beta < 0:
        raise SynthError(f"scattering coefficient must be >= 0, got {haze.beta}")
    depth = np.asarray(depth)
    if depth.shape[-2:] != image.shape[-2:]:
        raise ShapeMismatchError("depth map vs image", depth.shape, image.shape)
    t = transmission(depth.reshape(depth.shape[-2:]), haze.beta)
    hazed = t * image.astype(np.float64) + (1.0 - t) * haze.airlight
    return np.clip(hazed, 0.0, 1.0).astype(image.dtype)


def _value_noise(dims: tuple, rng: np.random.Generator, octaves: int = 4) -> np.ndarray:
    """Sum of bilinearly upsampled random grids, normalized to [0, 1]"""
    height, width = dims
    total = np.zeros((height, width))
    amplitude = 1.0
    for octave in range(octaves):
        cells = 2 ** (octave + 1) + 1
        grid = rng.random((cells, cells))
        total += amplitude * zoom(grid, (height / cells, width / cells), order=1)[:height, :width]
        amplitude *= 0.5
    span = total.max() - total.min()
    return (total - total.min()) / span if span > 0 else np.zeros_like(total)


def generate_depth(dims: tuple, mode: str = "ramp", seed: int = 0,
                   low: float = 0.5, high: float = 3.0, value: float = 1.0) -> np.ndarray:
    """Positive (H, W) depth map: ramp grows top to bottom, fractal is seeded value noise"""
    height, width = dims
    if mode == "constant":
        depth = np.full((height, width), value)
    elif mode == "ramp":
        depth = np.repeat(np.linspace(low, high, height)[:, None], width, axis=1)
    elif mode == "fractal":
        depth = low + (high - low) * _value_noise(dims, np.random.default_rng(seed))
    else:
        raise InvalidArgumentError(f"unknown depth mode {mode!r}; expected one of {DEPTH_MODES}")
    return depth.astype(np.float32)


def depth_for(haze: HazeParams, dims: tuple) -> np.ndarray:
    if haze.depth_mode == "file":
        if not haze.depth_path:
            raise SynthError("depth_mode 'file' needs depth_path")
        depth = load_depth_png(haze.depth_path, haze.depth_max, size=dims[0] if dims[0] == dims[1] else None)
        if depth.shape != tuple(dims):
            raise ShapeMismatchError("depth file vs image", depth.shape, dims)
        return depth
    return generate_depth(dims, haze.depth_mode, haze.depth_seed, haze.depth_min, haze.depth_max, haze.depth_max)


def generate_scene(dims: tuple, seed: int = 0) -> np.ndarray:
    """Structured haze-free (3, H, W) scene: color gradient, saturated blocks, fine texture"""
    height, width = dims
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0.0, 1.0, height)[None, :, None]
    top, bottom = rng.uniform(0.1, 0.9, size=(2, 3, 1, 1))
    image = np.broadcast_to(top * (1 - ramp) + bottom * ramp, (3, height, width)).copy()
    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0.0, 1.0, size=3)
        color[rng.integers(3)] *= 0.15
        h = int(rng.integers(max(1, height // 10), max(2, height // 2)))
        w = int(rng.integers(max(1, width // 10), max(2, width // 2)))
        y0 = int(rng.integers(0, max(1, height - h)))
        x0 = int(rng.integers(0, max(1, width - w)))
        image[:, y0:y0 + h, x0:x0 + w] = color[:, None, None]
    texture = np.stack([_value_noise(dims, rng, octaves=5) for _ in range(3)])
    image = image + 0.12 * (texture - 0.5)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def make_dataset(hq_dir: Optional[str], count: int, mode: str, seed: int, out_dir, *,
                 image_size: int = 128, split: str = "train", layers: int = 2,
                 density: Optional[float] = None, intensity: Optional[float] = None,
                 beta_range: tuple = (0.2, 0.8), airlight_range: tuple = (0.6, 1.0),
                 depth_mode: str = "ramp", depth_range: tuple = (0.5, 3.0),
                 depth_path: Optional[str] = None) -> list:
    """
    Synthesize `count` LQ/HQ pairs under out_dir/{hq,lq}/ and a manifest.jsonl.
    Without hq_dir, HQ images are procedural scenes. Everything derives from `seed`.
    """
    if mode not in MODES:
        raise InvalidArgumentError(f"unknown synthesis mode {mode!r}; expected one of {MODES}")
    if count < 1:
        raise InvalidArgumentError(f"count must be >= 1, got {count}")
    sources = None
    if hq_dir is not None:
        sources = list_images(hq_dir)
        if not sources:
            raise DatasetError(f"no images found in {hq_dir}")

    out_dir = Path(out_dir)
    try:
        (out_dir / "hq").mkdir(parents=True, exist_ok=True)
        (out_dir / "lq").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DatasetError(f"cannot create output directory {out_dir}: {e}")

    rain_overrides = {"layers": layers}
    if density is not None:
        rain_overrides["density"] = density
    if intensity is not None:
        rain_overrides["intensity"] = intensity

    children = np.random.SeedSequence(seed).spawn(count)
    rows = []
    for index, child in enumerate(children):
        sample_seed = int(child.generate_state(1)[0])
        rng = np.random.default_rng(sample_seed)
        dims = (image_size, image_size)
        if sources:
            hq = quantize(load_png(sources[index % len(sources)], size=image_size))
        else:
            hq = quantize(generate_scene(dims, sample_seed))

        preset = RAIN_PRESETS[int(rng.integers(len(RAIN_PRESETS)))]
        rain = RainParams.model_validate({**preset.model_dump(), **rain_overrides, "seed": sample_seed})
        lq = apply_rain(hq, [generate_rain_layer(dims, rain, k) for k in range(rain.layers)])

        haze = None
        if mode == "rain_haze":
            haze = HazeParams(
                airlight=float(rng.uniform(*airlight_range)),
                beta=float(rng.uniform(*beta_range)),
                depth_mode="file" if depth_path else depth_mode,
                depth_min=depth_range[0],
                depth_max=depth_range[1],
                depth_seed=sample_seed,
                depth_path=depth_path,
            )
            lq = apply_haze(lq, haze, depth_for(haze, dims))

        name = f"{index:05d}.png"
        save_png(out_dir / "hq" / name, hq)
        save_png(out_dir / "lq" / name, lq)
        rows.append(ManifestRow(
            hq_path=f"hq/{name}", lq_path=f"lq/{name}", mode=mode, seed=sample_seed,
            rain_params=rain, haze_params=haze, split=split,
        ))
        logger.debug(f"sample {name}: preset angle={rain.angle} length={rain.length}")

    write_jsonl(out_dir / MANIFEST_NAME, rows)
    logger.info(f"Synthesized {len(rows)} {mode} pairs into {out_dir}")
    return rows
