from dataclasses import dataclass

import numpy as np

from rgbtcloak.composer.types import EotConfig, Sprite
from rgbtcloak.diffgrad.ops import bilinear_sample, clip, concat


@dataclass(frozen=True)
class EotSample:
    scale: float
    dx: float
    dy: float
    brightness: float
    contrast: float
    thermal_offset: float


def sample_eot(config: EotConfig, rng: np.random.Generator) -> EotSample:
    # fixed draw order keeps a given rng state reproducible
    return EotSample(
        scale=float(rng.uniform(1.0 - config.scale, 1.0 + config.scale)),
        dx=float(rng.uniform(-config.translate_px, config.translate_px)),
        dy=float(rng.uniform(-config.translate_px, config.translate_px)),
        brightness=float(rng.uniform(-config.brightness, config.brightness)),
        contrast=float(rng.uniform(*config.contrast)),
        thermal_offset=float(rng.uniform(-config.thermal_offset, config.thermal_offset)),
    )


def _resample(sprite: Sprite, scale: float) -> Sprite:
    h, w = sprite.alpha.shape
    new_h = max(1, int(np.floor(h * scale + 0.5)))
    new_w = max(1, int(np.floor(w * scale + 0.5)))
    if (new_h, new_w) == (h, w):
        return sprite

    ys = np.clip((np.arange(new_h) + 0.5) * h / new_h - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(new_w) + 0.5) * w / new_w - 0.5, 0.0, w - 1.0)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing='ij')
    pixels = bilinear_sample(sprite.pixels, grid_y, grid_x)

    rows = np.minimum(np.floor((np.arange(new_h) + 0.5) * h / new_h).astype(np.int64), h - 1)
    cols = np.minimum(np.floor((np.arange(new_w) + 0.5) * w / new_w).astype(np.int64), w - 1)
    return Sprite(pixels=pixels, alpha=sprite.alpha[rows][:, cols], offset=sprite.offset)


def eot_transform(sprite: Sprite, config: EotConfig, rng: np.random.Generator) -> Sprite:
    """
    Applies one random draw of the physical nuisances.

    Geometry (scale and translation) is shared by both modalities. RGB gets brightness,
    contrast and noise, thermal gets an offset and noise; the result is clamped to [0, 1].
    """
    draw = sample_eot(config, rng)
    scaled = _resample(sprite, draw.scale)
    h, w = scaled.alpha.shape

    rgb_noise = rng.normal(0.0, config.noise_std_rgb, size=(h, w, 3))
    thermal_noise = rng.normal(0.0, config.noise_std_thermal, size=(h, w, 1))

    rgb = scaled.pixels[:, :, :3]
    thermal = scaled.pixels[:, :, 3:]
    # written as x + delta so the identity draw leaves pixels bit-identical
    rgb = rgb + (draw.contrast - 1.0) * (rgb - 0.5) + draw.brightness + rgb_noise
    thermal = thermal + draw.thermal_offset + thermal_noise

    pixels = concat([clip(rgb, 0.0, 1.0), clip(thermal, 0.0, 1.0)], axis=2)
    offset = (
        scaled.offset[0] + int(np.floor(draw.dx + 0.5)),
        scaled.offset[1] + int(np.floor(draw.dy + 0.5))
    )
    return Sprite(pixels=pixels, alpha=scaled.alpha, offset=offset)
