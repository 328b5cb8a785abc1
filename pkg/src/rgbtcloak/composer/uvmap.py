from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from rgbtcloak.exception import IllegalArgumentException
from rgbtcloak.utils.seeding import derive_rng

NOT_CLOTHING = -1

# vertical layout of the billboard person as fractions of the sprite height
_HEAD = (0.0, 0.13)
_NECK = (0.13, 0.15)
_UPPER = (0.15, 0.45)
_HIPS = (0.45, 0.55)
_LEGS = (0.55, 1.0)
_CLOTHING_TOP = _UPPER[0]


@dataclass(frozen=True)
class UvMap:
    """
    Lookup from sprite pixels to texture cells for one view angle.

    `coords[y, x]` holds the (row, column) of the texture cell seen at the pixel, or
    NOT_CLOTHING for pixels outside the garment.
    """
    angle_deg: float
    coords: np.ndarray
    silhouette: np.ndarray
    skin_region: np.ndarray
    texture_width: int
    texture_height: int

    @property
    def sprite_size(self) -> Tuple[int, int]:
        return self.silhouette.shape

    @property
    def clothing_region(self) -> np.ndarray:
        return self.silhouette & ~self.skin_region

    @property
    def band_start(self) -> int:
        return band_start(self.angle_deg, self.texture_width)

    def visible_columns(self) -> np.ndarray:
        return np.unique(self.coords[..., 1][self.clothing_region])


def band_start(angle_deg: float, texture_width: int) -> int:
    return int(np.floor((angle_deg % 360.0) * texture_width / 360.0 + 0.5)) % texture_width


def _body_proportions(seed: int) -> dict:
    rng = derive_rng(seed, 'composer', 'uvmap')
    return {
        'upper': 0.85 + rng.uniform(-0.05, 0.05),
        'hips': 0.60 + rng.uniform(-0.04, 0.04),
        'legs': 0.55 + rng.uniform(-0.04, 0.04),
        'leg_gap': 0.06 + rng.uniform(-0.02, 0.02),
        'hand': 0.07 + rng.uniform(-0.01, 0.01),
        'head': 0.25 + rng.uniform(-0.02, 0.02),
    }


def _build_one(angle: float, texture_width: int, texture_height: int, sprite_size: Tuple[int, int], shape: dict) -> UvMap:
    h_s, w_s = sprite_size
    t = ((np.arange(h_s) + 0.5) / h_s)[:, None]
    x = ((np.arange(w_s) + 0.5) / w_s * 2.0 - 1.0)[None, :]
    ax = np.abs(x)

    # side views show a narrower body
    depth = 0.6 + 0.4 * abs(np.cos(np.deg2rad(angle)))

    def band(span):
        return (t >= span[0]) & (t < span[1])

    head_center = (_HEAD[0] + _HEAD[1]) / 2.0
    head_radius = (_HEAD[1] - _HEAD[0]) / 2.0
    head = ((t - head_center) / head_radius) ** 2 + (x / shape['head']) ** 2 <= 1.0
    neck = band(_NECK) & (ax <= shape['head'] * 0.45)

    upper_half_width = shape['upper'] * depth
    upper = band(_UPPER) & (ax <= upper_half_width)
    hands = band((_HIPS[0], _HIPS[0] + 0.07)) & (ax > shape['hips'] * depth) & (ax <= shape['hips'] * depth + shape['hand'] + 0.15 * depth)
    hips = band(_HIPS) & (ax <= shape['hips'] * depth)
    legs = band(_LEGS) & (ax <= shape['legs'] * depth) & (ax >= shape['leg_gap'] * depth * abs(np.cos(np.deg2rad(angle))))

    clothing = upper | hips | legs
    skin = (head | neck | hands) & ~clothing
    silhouette = clothing | skin

    # half-width of the garment per row, so every row spans the whole visible band
    row_half_width = np.where(band(_UPPER), upper_half_width, np.where(band(_HIPS), shape['hips'] * depth, shape['legs'] * depth))
    xn = np.clip(x / row_half_width, -1.0, 1.0)
    u = np.arcsin(xn) / np.pi + 0.5

    half = texture_width // 2
    local_col = np.minimum(np.floor(u * half).astype(np.int64), half - 1)
    cols = (band_start(angle, texture_width) + local_col) % texture_width

    v = (t - _CLOTHING_TOP) / (1.0 - _CLOTHING_TOP)
    rows = np.clip(np.floor(v * texture_height).astype(np.int64), 0, texture_height - 1)

    coords = np.full((h_s, w_s, 2), NOT_CLOTHING, dtype=np.int64)
    rows_full = np.broadcast_to(rows, (h_s, w_s))
    cols_full = np.broadcast_to(cols, (h_s, w_s))
    coords[..., 0] = np.where(clothing, rows_full, NOT_CLOTHING)
    coords[..., 1] = np.where(clothing, cols_full, NOT_CLOTHING)

    return UvMap(
        angle_deg=float(angle),
        coords=coords,
        silhouette=silhouette,
        skin_region=skin,
        texture_width=texture_width,
        texture_height=texture_height
    )


def build_uv_maps(
    texture_width: int,
    texture_height: int,
    n_angles: int,
    sprite_size: Tuple[int, int] = (160, 80),
    seed: int = 0
) -> List[UvMap]:
    """
    One billboard lookup per view angle, angles evenly spaced from 0.

    The garment is treated as a cylinder: each view shows half of the texture columns, a
    cyclic band starting at `angle / 360 * width`, so opposite views never share a column.
    """
    if n_angles < 4 or 360 % n_angles != 0:
        raise IllegalArgumentException(f'Number of angles must be at least 4 and divide 360, got {n_angles}')
    if sprite_size[0] < 8 or sprite_size[1] < 8:
        raise IllegalArgumentException(f'Sprite must be at least 8x8, got {sprite_size[0]}x{sprite_size[1]}')
    if texture_width < 2 or texture_width % 2 != 0 or texture_height < 1:
        raise IllegalArgumentException(f'Texture width must be even and at least 2, got {texture_width}x{texture_height}')

    shape = _body_proportions(seed)
    step = 360 // n_angles
    return [_build_one(float(a), texture_width, texture_height, tuple(sprite_size), shape) for a in range(0, 360, step)]


def uv_for_angle(uv_maps: Sequence[UvMap], angle: float) -> UvMap:
    """
    Map whose angle is circularly nearest to `angle`; angles are taken modulo 360.
    """
    wrapped = angle % 360.0

    def circular_distance(uv: UvMap):
        diff = abs(uv.angle_deg - wrapped) % 360.0
        return min(diff, 360.0 - diff)

    return min(uv_maps, key=circular_distance)
