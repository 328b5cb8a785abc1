from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from rgbtcloak.composer.types import PersonAppearance, Sprite
from rgbtcloak.composer.uvmap import UvMap
from rgbtcloak.diffgrad.ops import bilinear_sample
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.norp.pattern import NorpTexture, TextureTensors

MIN_SPRITE_HEIGHT_PX = 4

TextureInput = Union[TextureTensors, NorpTexture, Tensor]


@dataclass(frozen=True)
class CameraModel:
    """
    Pinhole scaling: a person is `reference_height_px` tall at `reference_distance_m`.
    """
    reference_height_px: float = 160.0
    reference_distance_m: float = 2.5

    def person_height_px(self, distance: float) -> int:
        if distance <= 0:
            raise IllegalArgumentException(f'Distance must be positive, got {distance}')

        return int(np.floor(self.reference_height_px * self.reference_distance_m / distance + 0.5))


def _stacked_texture(texture: TextureInput) -> Tensor:
    if isinstance(texture, Tensor):
        if texture.ndim != 3 or texture.shape[2] != 4:
            raise ShapeMismatchException('Texture tensor must be [height, width, 4]', texture.shape)
        return texture

    if isinstance(texture, NorpTexture):
        return Tensor(np.concatenate([texture.rgb, texture.thermal[..., None]], axis=2))

    return texture.stacked()


def _nearest_indices(source: int, target: int) -> np.ndarray:
    return np.minimum(np.floor((np.arange(target) + 0.5) * source / target).astype(np.int64), source - 1)


def sprite_geometry(uv: UvMap, distance: float, camera: CameraModel = CameraModel()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row and column lookups from the scaled sprite into the UV map canvas.
    """
    height = camera.person_height_px(distance)
    if height < MIN_SPRITE_HEIGHT_PX:
        raise IllegalArgumentException(
            f'Distance {distance} m renders the person {height} px tall, below resolvable scale'
        )

    h_s, w_s = uv.sprite_size
    width = max(1, int(np.floor(w_s * height / h_s + 0.5)))
    return _nearest_indices(h_s, height), _nearest_indices(w_s, width)


def render_alpha(uv: UvMap, distance: float, camera: CameraModel = CameraModel()) -> np.ndarray:
    rows, cols = sprite_geometry(uv, distance, camera)
    return uv.silhouette[rows][:, cols].astype(np.float64)


def render_person(
    texture: TextureInput,
    appearance: PersonAppearance,
    uv: UvMap,
    distance: float,
    camera: CameraModel = CameraModel()
) -> Sprite:
    """
    Draws the clothed person for one view at the given distance.

    Clothing pixels sample the texture through the UV map, skin pixels take the appearance
    values and everything outside the silhouette is transparent. The sprite is differentiable
    with respect to the texture values.
    """
    pixels_texture = _stacked_texture(texture)
    if pixels_texture.shape[:2] != (uv.texture_height, uv.texture_width):
        raise ShapeMismatchException('Texture does not match UV map grid', pixels_texture.shape[:2], (uv.texture_height, uv.texture_width))

    rows, cols = sprite_geometry(uv, distance, camera)
    coords = uv.coords[rows][:, cols]
    clothing = uv.clothing_region[rows][:, cols]
    skin = uv.skin_region[rows][:, cols]

    ys = np.where(clothing, coords[..., 0], 0).astype(np.float64)
    xs = np.where(clothing, coords[..., 1], 0).astype(np.float64)
    sampled = bilinear_sample(pixels_texture, ys, xs)

    clothing_weight = clothing[..., None].astype(np.float64)
    skin_pixels = skin[..., None].astype(np.float64) * appearance.pixel()
    pixels = clothing_weight * sampled + skin_pixels

    return Sprite(pixels=pixels, alpha=uv.silhouette[rows][:, cols].astype(np.float64))
