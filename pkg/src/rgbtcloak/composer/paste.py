from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from rgbtcloak.composer.types import Box, Placement, RgbtImage, RgbtTensors, Sprite
from rgbtcloak.diffgrad.ops import concat
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException


@dataclass(frozen=True)
class Composite:
    """
    Pasted frame with the full-frame alpha of the person and its tight box.
    """
    image: RgbtTensors
    alpha: np.ndarray
    box: Optional[Box]


def sprite_window(sprite_height: int, sprite_width: int, placement: Placement, offset: Tuple[int, int] = (0, 0)) -> Tuple[int, int]:
    """
    (top, left) of the sprite in frame pixels for a centre placement.
    """
    top = int(np.floor(placement.center_y - sprite_height / 2.0 + 0.5)) + offset[1]
    left = int(np.floor(placement.center_x - sprite_width / 2.0 + 0.5)) + offset[0]
    return top, left


def _join(pieces, axis: int):
    pieces = [p for p in pieces if p.shape[axis] > 0]
    return pieces[0] if len(pieces) == 1 else concat(pieces, axis=axis)


def paste(sprite: Sprite, background: RgbtImage, placement: Placement) -> Composite:
    """
    Blends the sprite over the background: alpha * sprite + (1 - alpha) * background.

    Only the window covered by the sprite goes through the blend; the rest of the frame is
    copied from the background, so pixels outside the mask keep their exact values.
    """
    frame_h, frame_w = background.height, background.width
    top, left = sprite_window(sprite.height, sprite.width, placement, sprite.offset)

    y0, y1 = max(top, 0), min(top + sprite.height, frame_h)
    x0, x1 = max(left, 0), min(left + sprite.width, frame_w)
    if y0 >= y1 or x0 >= x1:
        raise IllegalArgumentException(
            f'Sprite {sprite.height}x{sprite.width} at ({left}, {top}) lies fully outside the {frame_w}x{frame_h} frame'
        )

    stacked = background.stacked()
    alpha = sprite.alpha[y0 - top:y1 - top, x0 - left:x1 - left][..., None]
    visible = sprite.pixels[y0 - top:y1 - top, x0 - left:x1 - left, :]
    blended = alpha * visible + (1.0 - alpha) * stacked[y0:y1, x0:x1]

    middle = _join([Tensor(stacked[y0:y1, :x0]), blended, Tensor(stacked[y0:y1, x1:])], axis=1)
    pixels = _join([Tensor(stacked[:y0]), middle, Tensor(stacked[y1:])], axis=0)

    full_alpha = np.zeros((frame_h, frame_w))
    full_alpha[y0:y1, x0:x1] = alpha[..., 0]
    return Composite(image=RgbtTensors(pixels), alpha=full_alpha, box=Box.of_mask(full_alpha > 0))
