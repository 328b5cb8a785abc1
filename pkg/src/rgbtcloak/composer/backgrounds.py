import enum
import logging
import os
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from rgbtcloak.composer.types import RgbtImage
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.utils.filesystem import ensure_dir, ls
from rgbtcloak.utils.imaging import read_gray_png, read_rgb_png, smooth_noise, write_gray16_png, write_rgb_png
from rgbtcloak.utils.parallel import parallel_map
from rgbtcloak.utils.seeding import derive_rng

_log = logging.getLogger(__name__)

RGB_SUFFIX = '_rgb.png'
THERMAL_SUFFIX = '_thm.png'


class Palette(enum.Enum):
    INDOOR = 'indoor'
    OUTDOOR_DAY = 'outdoor-day'
    OUTDOOR_NIGHT = 'outdoor-night'


@dataclass(frozen=True)
class _PaletteSpec:
    top_rgb: Tuple[float, float, float]
    bottom_rgb: Tuple[float, float, float]
    clutter_brightness: Tuple[float, float]
    thermal_level: float
    thermal_clutter: Tuple[float, float]


_PALETTES = {
    Palette.INDOOR: _PaletteSpec((0.78, 0.75, 0.70), (0.52, 0.47, 0.42), (0.3, 0.9), 0.45, (0.30, 0.65)),
    Palette.OUTDOOR_DAY: _PaletteSpec((0.55, 0.72, 0.92), (0.40, 0.46, 0.30), (0.3, 1.0), 0.50, (0.25, 0.70)),
    Palette.OUTDOOR_NIGHT: _PaletteSpec((0.04, 0.05, 0.10), (0.10, 0.10, 0.09), (0.02, 0.25), 0.30, (0.15, 0.60)),
}


def _blobs(height: int, width: int, rng: np.random.Generator, count: int) -> List[np.ndarray]:
    yy, xx = np.mgrid[0:height, 0:width]
    masks = []
    for _ in range(count):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        ry = rng.uniform(0.04, 0.25) * height
        rx = rng.uniform(0.04, 0.25) * width
        masks.append(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0)

    return masks


def _generate_one(index: int, height: int, width: int, seed: int, palette: Palette) -> RgbtImage:
    spec = _PALETTES[palette]
    rng = derive_rng(seed, 'backgrounds', palette.value, index)

    t = np.linspace(0.0, 1.0, height)[:, None, None]
    rgb = (1.0 - t) * np.asarray(spec.top_rgb) + t * np.asarray(spec.bottom_rgb)
    rgb = np.broadcast_to(rgb, (height, width, 3)).copy()

    for mask in _blobs(height, width, rng, int(rng.integers(3, 9))):
        colour = rng.uniform(0.0, 1.0, size=3)
        colour = colour / max(colour.max(), 1e-6) * rng.uniform(*spec.clutter_brightness)
        rgb[mask] = colour

    rgb += 0.04 * smooth_noise((height, width), rng)[..., None]

    # thermal clutter is drawn independently of the visible clutter
    thermal = spec.thermal_level + 0.08 * smooth_noise((height, width), rng)
    for mask in _blobs(height, width, rng, int(rng.integers(2, 7))):
        thermal[mask] = rng.uniform(*spec.thermal_clutter)

    return RgbtImage(rgb=np.clip(rgb, 0.0, 1.0), thermal=np.clip(thermal, 0.0, 1.0))


def gen_backgrounds(n: int, height: int, width: int, seed: int, palette: Palette = Palette.OUTDOOR_DAY, workers: int = 1) -> List[RgbtImage]:
    """
    Procedural aligned pairs: a vertical gradient with blob clutter in RGB and an
    independent smooth field with warm and cold objects in thermal.
    """
    if n < 1:
        raise IllegalArgumentException(f'Number of backgrounds must be at least 1, got {n}')

    return parallel_map(lambda idx: _generate_one(idx, height, width, seed, palette), range(n), workers)


def load_backgrounds(directory: str) -> List[RgbtImage]:
    """
    Reads `<name>_rgb.png` / `<name>_thm.png` pairs, sorted by name.
    """
    rgb_files = ls(directory, suffix=RGB_SUFFIX)
    thermal_files = ls(directory, suffix=THERMAL_SUFFIX)
    if not rgb_files and not thermal_files:
        raise IllegalArgumentException(f'No pairs found in {directory}')

    rgb_names = {os.path.basename(p)[:-len(RGB_SUFFIX)] for p in rgb_files}
    thermal_names = {os.path.basename(p)[:-len(THERMAL_SUFFIX)] for p in thermal_files}
    for name in sorted(rgb_names ^ thermal_names):
        missing = f'{name}{THERMAL_SUFFIX}' if name in rgb_names else f'{name}{RGB_SUFFIX}'
        raise IllegalArgumentException(f'Missing pair member: {os.path.join(directory, missing)}')

    images = []
    for name in sorted(rgb_names):
        rgb = read_rgb_png(os.path.join(directory, f'{name}{RGB_SUFFIX}'))
        thermal = read_gray_png(os.path.join(directory, f'{name}{THERMAL_SUFFIX}'))
        if rgb.shape[:2] != thermal.shape:
            raise ShapeMismatchException(f'Pair "{name}" is not aligned', rgb.shape[:2], thermal.shape)

        images.append(RgbtImage(rgb=rgb, thermal=thermal))

    _log.info(f' + Loaded {len(images)} background pairs from {directory}')
    return images


def save_backgrounds(images: List[RgbtImage], directory: str, prefix: str = 'bg') -> List[str]:
    ensure_dir(directory)
    names = []
    for idx, image in enumerate(images):
        name = f'{prefix}_{idx:04d}'
        write_rgb_png(os.path.join(directory, f'{name}{RGB_SUFFIX}'), image.rgb)
        write_gray16_png(os.path.join(directory, f'{name}{THERMAL_SUFFIX}'), image.thermal)
        names.append(name)

    return names
