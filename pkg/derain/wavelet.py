"""
Single-level orthonormal 2-D Haar transform.

For every disjoint 2x2 block [[a, b], [c, d]]:
    LL = (a + b + c + d) / 2     HL = (a - b + c - d) / 2
    LH = (a + b - c - d) / 2     HH = (a - b - c + d) / 2
HL carries variation along rows (near-vertical streaks), LH along columns.
Arrays are (..., channels, height, width).
"""
from dataclasses import dataclass

import numpy as np

from derain.errors import OddSizeError, ShapeMismatchError

SUBBANDS = ("ll", "lh", "hl", "hh")


@dataclass(frozen=True)
class WaveletPack:
    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    @property
    def source_dims(self) -> tuple:
        return self.ll.shape[-2] * 2, self.ll.shape[-1] * 2

    def bands(self) -> tuple:
        return self.ll, self.lh, self.hl, self.hh

    def energy(self) -> float:
        return float(sum(np.sum(np.square(band, dtype=np.float64)) for band in self.bands()))


def dwt2_haar(image: np.ndarray) -> WaveletPack:
    image = np.asarray(image)
    height, width = image.shape[-2:]
    if height % 2 or width % 2:
        raise OddSizeError(f"Haar analysis needs even height and width, got {height}x{width}; reflect-pad first")
    a = image[..., 0::2, 0::2]
    b = image[..., 0::2, 1::2]
    c = image[..., 1::2, 0::2]
    d = image[..., 1::2, 1::2]
    return WaveletPack(
        ll=(a + b + c + d) / 2,
        lh=(a + b - c - d) / 2,
        hl=(a - b + c - d) / 2,
        hh=(a - b - c + d) / 2,
    )


def idwt2_haar(pack: WaveletPack) -> np.ndarray:
    ll, lh, hl, hh = pack.bands()
    for name, band in zip(SUBBANDS[1:], (lh, hl, hh)):
        if band.shape != ll.shape:
            raise ShapeMismatchError(f"subband {name.upper()} does not match LL", band.shape, ll.shape)
    out = np.empty(ll.shape[:-2] + (ll.shape[-2] * 2, ll.shape[-1] * 2), dtype=np.result_type(ll, lh, hl, hh))
    out[..., 0::2, 0::2] = (ll + hl + lh + hh) / 2
    out[..., 0::2, 1::2] = (ll - hl + lh - hh) / 2
    out[..., 1::2, 0::2] = (ll + hl - lh - hh) / 2
    out[..., 1::2, 1::2] = (ll - hl - lh + hh) / 2
    return out
