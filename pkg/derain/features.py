"""Dark channel extraction and packing of images into network tensors"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import minimum_filter

from derain.errors import ChannelCountError, InvalidArgumentError, ShapeMismatchError
from derain.wavelet import WaveletPack, dwt2_haar, idwt2_haar

COLOR_CHANNELS = 3
SRR_CHANNELS = 12  # LL-RGB, LH-RGB, HL-RGB, HH-RGB
DJRHR_CHANNELS = 13  # subbands + dark channel last


@dataclass(frozen=True)
class FeaturePack:
    subbands: np.ndarray
    source_size: Optional[tuple] = None
    dark: Optional[np.ndarray] = None

    @property
    def channels(self) -> int:
        return SRR_CHANNELS + (0 if self.dark is None else 1)

    @property
    def tensor(self) -> np.ndarray:
        if self.dark is None:
            return self.subbands
        return np.concatenate([self.subbands, self.dark], axis=-3)

    def with_tensor(self, array: np.ndarray) -> "FeaturePack":
        """Same metadata, channels replaced (e.g. by a network prediction)"""
        array = np.asarray(array)
        expected = self.tensor.shape
        if array.shape != expected:
            raise ShapeMismatchError("replacement tensor", array.shape, expected)
        dark = array[..., SRR_CHANNELS:, :, :] if self.dark is not None else None
        return replace(self, subbands=array[..., :SRR_CHANNELS, :, :], dark=dark)


def _check_color(image: np.ndarray):
    if image.ndim not in (3, 4):
        raise ShapeMismatchError("image must be (3, H, W) or (B, 3, H, W)", image.shape, ("B", 3, "H", "W"))
    if image.shape[-3] != COLOR_CHANNELS:
        raise ChannelCountError(f"expected {COLOR_CHANNELS} color channels, got {image.shape[-3]}")


def dark_channel(image: np.ndarray, radius: int = 0) -> np.ndarray:
    """Per-pixel minimum over color channels, optionally over a (2r+1)^2 window"""
    image = np.asarray(image)
    _check_color(image)
    if radius < 0:
        raise InvalidArgumentError(f"dark channel radius must be >= 0, got {radius}")
    dark = image.min(axis=-3, keepdims=True)
    if radius:
        size = (1,) * (dark.ndim - 2) + (2 * radius + 1, 2 * radius + 1)
        dark = minimum_filter(dark, size=size, mode="nearest")
    return dark


def _pad_even(image: np.ndarray) -> np.ndarray:
    height, width = image.shape[-2:]
    if height < 2 or width < 2:
        raise ShapeMismatchError("image must be at least 2x2", image.shape[-2:], (2, 2))
    if height % 2 == 0 and width % 2 == 0:
        return image
    widths = [(0, 0)] * (image.ndim - 2) + [(0, height % 2), (0, width % 2)]
    return np.pad(image, widths, mode="reflect")


def _analyse(image: np.ndarray) -> tuple:
    image = np.asarray(image)
    _check_color(image)
    bands = dwt2_haar(_pad_even(image))
    subbands = np.concatenate(bands.bands(), axis=-3)
    return subbands, bands, tuple(image.shape[-2:])


def pack_srr(image: np.ndarray) -> FeaturePack:
    subbands, _, size = _analyse(image)
    return FeaturePack(subbands=subbands, source_size=size)


def pack_djrhr(image: np.ndarray, radius: int = 0) -> FeaturePack:
    """Subbands plus the dark channel of the 2x2-average-pooled image (aligned with the subbands)"""
    subbands, bands, size = _analyse(image)
    pooled = bands.ll / 2
    return FeaturePack(subbands=subbands, source_size=size, dark=dark_channel(pooled, radius))


def unpack_to_image(pack: FeaturePack) -> np.ndarray:
    """Inverse transform of the 12 subband channels; any dark channel is discarded"""
    if pack.source_size is None:
        raise InvalidArgumentError("feature pack has no recorded source size")
    s = pack.subbands
    if s.shape[-3] != SRR_CHANNELS:
        raise ChannelCountError(f"expected {SRR_CHANNELS} subband channels, got {s.shape[-3]}")
    c = COLOR_CHANNELS
    image = idwt2_haar(WaveletPack(
        ll=s[..., 0:c, :, :], lh=s[..., c:2 * c, :, :], hl=s[..., 2 * c:3 * c, :, :], hh=s[..., 3 * c:4 * c, :, :]
    ))
    height, width = pack.source_size
    return np.clip(image[..., :height, :width], 0.0, 1.0)
