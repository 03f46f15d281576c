import logging
import math
from typing import Union

import numpy as np
from skimage.metrics import structural_similarity

from derain.errors import ShapeMismatchError, WindowSizeError
from derain.schemas import EvalAggregate, EvalConfig, EvalRecord

logger = logging.getLogger(__name__)

INF = "inf"


def _pair(a, b) -> tuple:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError("metric inputs", a.shape, b.shape)
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) over all pixels and channels; identical images give +inf"""
    a, b = _pair(a, b)
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a, b, config: EvalConfig = None) -> float:
    """Mean local SSIM per channel with a Gaussian window; arrays are (C, H, W) or (H, W)"""
    config = config or EvalConfig()
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    window = config.ssim_window
    if min(a.shape[-2:]) < window:
        raise WindowSizeError(f"image {a.shape[-2:]} is smaller than the {window}x{window} SSIM window")

    # an 11x11 window: truncate 3.5 at sigma 1.5, population covariance
    value = structural_similarity(
        a, b, data_range=config.peak, channel_axis=0, gaussian_weights=True,
        sigma=config.ssim_sigma, use_sample_covariance=False, K1=config.k1, K2=config.k2,
    )
    return float(value)


def psnr_field(value: float) -> Union[float, str]:
    return INF if math.isinf(value) else value


def evaluate_pair(record_id: str, prediction, truth, config: EvalConfig = None) -> EvalRecord:
    config = config or EvalConfig()
    return EvalRecord(
        id=record_id,
        psnr_db=psnr_field(psnr(prediction, truth, config.peak)),
        ssim=ssim(prediction, truth, config),
    )


def aggregate(records: list, config: EvalConfig = None) -> EvalAggregate:
    """Arithmetic means of the records; any infinite PSNR makes the mean infinite"""
    config = config or EvalConfig()
    psnrs = [math.inf if r.psnr_db == INF else r.psnr_db for r in records]
    count = len(records)
    mean_psnr = math.fsum(psnrs) / count if count else 0.0
    mean_ssim = math.fsum(r.ssim for r in records) / count if count else 0.0
    return EvalAggregate(count=count, mean_psnr_db=psnr_field(mean_psnr), mean_ssim=mean_ssim, config=config)
