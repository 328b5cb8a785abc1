import os
from typing import Tuple

import numpy as np
from PIL import Image

from rgbtcloak.exception import IllegalArgumentException


def smooth_noise(shape: Tuple[int, int], rng: np.random.Generator, coarse: int = 4) -> np.ndarray:
    """
    Smooth noise in [-1, 1]: a coarse uniform grid bilinearly upsampled to `shape`.
    """
    height, width = shape
    grid = rng.uniform(-1.0, 1.0, size=(coarse + 1, coarse + 1))
    ys = np.linspace(0.0, coarse, height)
    xs = np.linspace(0.0, coarse, width)
    y0 = np.minimum(np.floor(ys).astype(int), coarse - 1)
    x0 = np.minimum(np.floor(xs).astype(int), coarse - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[y0][:, x0] * (1 - wx) + grid[y0][:, x0 + 1] * wx
    bottom = grid[y0 + 1][:, x0] * (1 - wx) + grid[y0 + 1][:, x0 + 1] * wx
    return top * (1 - wy) + bottom * wy


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_uint16(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 65535.0).astype(np.uint16)


def write_rgb_png(file_path: str, rgb: np.ndarray) -> None:
    Image.fromarray(to_uint8(rgb)).save(file_path)


def write_gray16_png(file_path: str, values: np.ndarray) -> None:
    Image.fromarray(to_uint16(values)).save(file_path)


def write_bitmap_png(file_path: str, values: np.ndarray) -> None:
    Image.fromarray(np.asarray(values).astype(bool)).save(file_path)


def read_rgb_png(file_path: str) -> np.ndarray:
    with Image.open(file_path) as img:
        if img.mode != 'RGB':
            raise IllegalArgumentException(f'Expected 8-bit 3-channel image, got mode {img.mode}: {file_path}')

        return np.asarray(img, dtype=np.float64) / 255.0


def read_gray_png(file_path: str) -> np.ndarray:
    """
    Reads an 8- or 16-bit single channel image normalized to [0, 1].
    """
    with Image.open(file_path) as img:
        if img.mode == 'L':
            return np.asarray(img, dtype=np.float64) / 255.0

        if img.mode.startswith('I'):
            return np.asarray(img).astype(np.float64) / 65535.0

        raise IllegalArgumentException(f'Expected single channel image, got mode {img.mode}: {os.path.basename(file_path)}')


def read_bitmap_png(file_path: str) -> np.ndarray:
    with Image.open(file_path) as img:
        return np.asarray(img.convert('1'), dtype=bool)
