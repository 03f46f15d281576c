import json
import logging
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image
from pydantic import BaseModel, ValidationError

from derain.errors import DatasetError
from derain.schemas import ManifestRow

logger = logging.getLogger(__name__)

# Decodable sources; everything this package writes is PNG
IMAGE_EXTENSIONS = {'.png', '.jpg', '.jpeg', '.bmp'}
MANIFEST_NAME = "manifest.jsonl"


def is_image_file(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_EXTENSIONS


def list_images(directory) -> list:
    """Sorted image files of a directory (sorted so datasets are reproducible)"""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file() and is_image_file(p))


def _center_square(img: Image.Image, size: int) -> Image.Image:
    width, height = img.size
    side = min(width, height)
    left, top = (width - side) // 2, (height - side) // 2
    img = img.crop((left, top, left + side, top + side))
    if side != size:
        img = img.resize((size, size), Image.BICUBIC)
    return img


def load_png(path, size: Optional[int] = None) -> np.ndarray:
    """Decode an RGB image to a (3, H, W) float32 array in [0, 1]"""
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if size is not None:
                img = _center_square(img, size)
            array = np.asarray(img, dtype=np.float32)
    except OSError as e:
        raise DatasetError(f"cannot read image {path}: {e}")
    return np.ascontiguousarray(array.transpose(2, 0, 1)) / np.float32(255)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap values to the 8-bit grid so what is written is exactly what was used"""
    return to_uint8(image).astype(np.float32) / np.float32(255)


def save_png(path, image: np.ndarray) -> Path:
    """Write a (3, H, W) image in [0, 1] as 8-bit RGB PNG, storing round(v * 255)"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_uint8(image).transpose(1, 2, 0), "RGB").save(path, format="PNG")
    except OSError as e:
        logger.error(f"PNG write failed for {path}: {e}")
        raise DatasetError(f"cannot write image {path}: {e}")
    return path


def load_depth_png(path, d_max: float, size: Optional[int] = None) -> np.ndarray:
    """8-bit grayscale depth PNG scaled to [0, d_max], shape (H, W)"""
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if size is not None:
                img = _center_square(img, size)
            gray = np.asarray(img, dtype=np.float32)
    except OSError as e:
        raise DatasetError(f"cannot read depth map {path}: {e}")
    return gray / np.float32(255) * np.float32(d_max)


def write_jsonl(path, records: Iterable[BaseModel]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for record in records:
                f.write(record.model_dump_json() + "\n")
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}")
    return path


class JsonlWriter:
    """Append-only JSON-lines sink, flushed per record"""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "w", encoding="utf-8", newline="\n")

    def write(self, record: BaseModel):
        self._file.write(record.model_dump_json() + "\n")
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_manifest(path) -> list:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(ManifestRow.model_validate(json.loads(line)))
            except (json.JSONDecodeError, ValidationError) as e:
                raise DatasetError(f"{path}:{number}: invalid manifest row: {e}")
    if not rows:
        raise DatasetError(f"manifest {path} is empty")
    return rows


def load_pairs(manifest_path) -> tuple:
    """Decode every LQ/HQ pair of a manifest; paths are relative to the manifest directory"""
    manifest_path = Path(manifest_path)
    root = manifest_path if manifest_path.is_dir() else manifest_path.parent
    rows = read_manifest(manifest_path)
    lq = [load_png(root / row.lq_path) for row in rows]
    hq = [load_png(root / row.hq_path) for row in rows]
    return rows, lq, hq
