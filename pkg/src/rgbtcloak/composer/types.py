from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from rgbtcloak.diffgrad.ops import concat
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException

MIN_DISTANCE_M = 2.5
MAX_DISTANCE_M = 20.0


def _check_unit_range(name: str, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.size and (np.min(values) < 0.0 or np.max(values) > 1.0):
        raise IllegalArgumentException(f'{name} values must lie in [0, 1], got [{np.min(values)}, {np.max(values)}]')


@dataclass(frozen=True)
class RgbtImage:
    """
    Aligned visible/thermal pair with values in [0, 1].
    """
    rgb: np.ndarray
    thermal: np.ndarray

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.shape[:2] != self.thermal.shape:
            raise ShapeMismatchException('RGB-T pair is not aligned', self.rgb.shape, self.thermal.shape)

        _check_unit_range('RGB', self.rgb)
        _check_unit_range('Thermal', self.thermal)

    @property
    def height(self) -> int:
        return self.thermal.shape[0]

    @property
    def width(self) -> int:
        return self.thermal.shape[1]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.rgb, self.thermal[..., None]], axis=2)

    @staticmethod
    def from_stacked(pixels: np.ndarray) -> 'RgbtImage':
        return RgbtImage(rgb=np.array(pixels[..., :3]), thermal=np.array(pixels[..., 3]))

    def __eq__(self, other):
        return isinstance(other, RgbtImage) and np.array_equal(self.rgb, other.rgb) and np.array_equal(self.thermal, other.thermal)


class RgbtTensors(NamedTuple):
    """
    Differentiable counterpart of RgbtImage: a single [H, W, 4] tensor, thermal last.
    """
    pixels: Tensor

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def rgb(self) -> Tensor:
        return self.pixels[:, :, :3]

    @property
    def thermal(self) -> Tensor:
        return self.pixels[:, :, 3]

    @staticmethod
    def of(image: RgbtImage) -> 'RgbtTensors':
        return RgbtTensors(Tensor(image.stacked()))

    @staticmethod
    def join(rgb: Tensor, thermal: Tensor) -> 'RgbtTensors':
        h, w = thermal.shape
        return RgbtTensors(concat([rgb, thermal.reshape(h, w, 1)], axis=2))

    def to_image(self) -> RgbtImage:
        return RgbtImage.from_stacked(np.clip(self.pixels.data, 0.0, 1.0))


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned pixel box, (x0, y0) inclusive corner and (x1, y1) exclusive corner.
    """
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise IllegalArgumentException(f'Invalid box, min exceeds max: {self}')

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def inside(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def clipped(self, width: int, height: int) -> 'Box':
        return Box(
            x0=min(max(self.x0, 0.0), width), y0=min(max(self.y0, 0.0), height),
            x1=min(max(self.x1, 0.0), width), y1=min(max(self.y1, 0.0), height)
        )

    def as_list(self):
        return [float(self.x0), float(self.y0), float(self.x1), float(self.y1)]

    @staticmethod
    def from_list(values: Sequence[float]) -> 'Box':
        x0, y0, x1, y1 = values
        return Box(float(x0), float(y0), float(x1), float(y1))

    @staticmethod
    def of_mask(mask: np.ndarray) -> Optional['Box']:
        """
        Tightest box enclosing every nonzero pixel, or None for an empty mask.
        """
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            return None

        return Box(float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


@dataclass(frozen=True)
class Placement:
    center_x: float
    center_y: float
    distance: float
    angle: float

    def as_dict(self) -> dict:
        return {'center_x': self.center_x, 'center_y': self.center_y, 'distance': self.distance, 'angle': self.angle}

    @staticmethod
    def from_dict(data: dict) -> 'Placement':
        return Placement(float(data['center_x']), float(data['center_y']), float(data['distance']), float(data['angle']))


@dataclass(frozen=True)
class Scene:
    background: RgbtImage
    placement: Placement
    gt_box: Box
    label: bool = True

    def __post_init__(self):
        if not self.gt_box.inside(self.background.width, self.background.height):
            raise IllegalArgumentException(
                f'Ground truth box {self.gt_box.as_list()} outside of {self.background.width}x{self.background.height} image'
            )
        if not MIN_DISTANCE_M <= self.placement.distance <= MAX_DISTANCE_M:
            raise IllegalArgumentException(
                f'Distance {self.placement.distance} m outside of [{MIN_DISTANCE_M}, {MAX_DISTANCE_M}]'
            )


@dataclass(frozen=True)
class PersonAppearance:
    skin_rgb: Tuple[float, float, float] = (0.87, 0.72, 0.62)
    skin_thermal: float = 0.92

    def __post_init__(self):
        _check_unit_range('Skin', list(self.skin_rgb) + [self.skin_thermal])

    def check_warmer_than(self, body_thermal: np.ndarray) -> None:
        if self.skin_thermal < np.max(body_thermal) - 0.1:
            raise IllegalArgumentException(
                f'Exposed skin must read warm: {self.skin_thermal} < body {np.max(body_thermal):.3f} - 0.1'
            )

    def pixel(self) -> np.ndarray:
        return np.asarray(list(self.skin_rgb) + [self.skin_thermal], dtype=np.float64)


@dataclass(frozen=True)
class EotConfig:
    """
    Ranges of the random physical nuisances applied to the rendered person.

    `scale` and `translate_px` are symmetric jitters, `contrast` is a multiplicative range
    around 1. Thermal gets only an offset and noise.
    """
    scale: float = 0.10
    translate_px: float = 8.0
    brightness: float = 0.15
    contrast: Tuple[float, float] = (0.85, 1.15)
    thermal_offset: float = 0.08
    noise_std_rgb: float = 0.01
    noise_std_thermal: float = 0.01

    def __post_init__(self):
        values = [self.scale, self.translate_px, self.brightness, self.thermal_offset, self.noise_std_rgb, self.noise_std_thermal]
        if not all(np.isfinite(v) and v >= 0 for v in values):
            raise IllegalArgumentException(f'EOT ranges must be finite and non-negative: {self}')
        if self.scale >= 1.0:
            raise IllegalArgumentException(f'EOT scale jitter must be below 1, got {self.scale}')
        low, high = self.contrast
        if not (np.isfinite(low) and np.isfinite(high) and 0 < low <= high):
            raise IllegalArgumentException(f'EOT contrast range invalid: {self.contrast}')

    @staticmethod
    def identity() -> 'EotConfig':
        return EotConfig(scale=0.0, translate_px=0.0, brightness=0.0, contrast=(1.0, 1.0), thermal_offset=0.0,
                         noise_std_rgb=0.0, noise_std_thermal=0.0)

    @staticmethod
    def from_dict(data: dict) -> 'EotConfig':
        values = dict(data)
        if 'contrast' in values:
            values['contrast'] = tuple(float(v) for v in values['contrast'])

        return EotConfig(**values)

    def as_dict(self) -> dict:
        return {
            'scale': self.scale, 'translate_px': self.translate_px, 'brightness': self.brightness,
            'contrast': list(self.contrast), 'thermal_offset': self.thermal_offset,
            'noise_std_rgb': self.noise_std_rgb, 'noise_std_thermal': self.noise_std_thermal,
        }


@dataclass(frozen=True)
class Sprite:
    """
    Rendered person: [h, w, 4] pixels, binary alpha, and a pixel offset added at paste time.
    """
    pixels: Tensor
    alpha: np.ndarray
    offset: Tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 4 or self.pixels.shape[:2] != self.alpha.shape:
            raise ShapeMismatchException('Sprite pixels and alpha differ', self.pixels.shape, self.alpha.shape)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]
