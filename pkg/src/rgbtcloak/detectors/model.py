import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from rgbtcloak.composer.types import RgbtImage, RgbtTensors
from rgbtcloak.diffgrad.ops import concat, conv2d, max_pool2d
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.utils.seeding import derive_rng

# width / height of the decoded person box
PERSON_ASPECT = 1.0 / 2.4
HEAD_CHANNELS = 1
DEFAULT_STRIDE = 8
DEFAULT_WIDTH = 8


class FusionArch(enum.Enum):
    EARLY = 'Early'
    MID = 'Mid'
    LATE = 'Late'
    INDEPENDENT_RGB = 'IndependentRGB'
    INDEPENDENT_T = 'IndependentT'

    @staticmethod
    def parse(tag: str) -> 'FusionArch':
        for arch in FusionArch:
            if arch.value.lower() == str(tag).lower():
                return arch

        raise IllegalArgumentException(f'Unknown fusion architecture "{tag}", expected one of {[a.value for a in FusionArch]}')


@dataclass(frozen=True)
class ConvSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1

    @property
    def padding(self) -> int:
        return self.kernel // 2


def _scorer_layers(prefix: str, in_channels: int, width: int) -> List[ConvSpec]:
    return [
        ConvSpec(f'{prefix}.conv1', in_channels, width, 3, 2),
        ConvSpec(f'{prefix}.conv2', width, 2 * width, 3, 2),
        ConvSpec(f'{prefix}.conv3', 2 * width, 2 * width, 3, 2),
        ConvSpec(f'{prefix}.conv4', 2 * width, 2 * width, 5, 1),
        ConvSpec(f'{prefix}.head', 2 * width, HEAD_CHANNELS, 1, 1),
    ]


def _stem_layers(prefix: str, in_channels: int, width: int) -> List[ConvSpec]:
    return [
        ConvSpec(f'{prefix}.conv1', in_channels, width, 3, 2),
        ConvSpec(f'{prefix}.conv2', width, width, 3, 2),
    ]


def layer_plan(arch: FusionArch, width: int) -> Dict[str, List[ConvSpec]]:
    """
    Convolution stacks per branch. Every branch reaches stride 8; larger strides add pooling
    before the last convolution.
    """
    if arch is FusionArch.EARLY:
        return {'early': _scorer_layers('early', 4, width)}

    if arch is FusionArch.MID:
        return {
            'rgb': _stem_layers('rgb', 3, width),
            'thermal': _stem_layers('thermal', 1, width),
            'trunk': [
                ConvSpec('trunk.conv1', 2 * width, 2 * width, 3, 1),
                ConvSpec('trunk.conv2', 2 * width, 2 * width, 5, 1),
                ConvSpec('trunk.head', 2 * width, HEAD_CHANNELS, 1, 1),
            ],
        }

    if arch is FusionArch.LATE:
        return {'rgb': _scorer_layers('rgb', 3, width), 'thermal': _scorer_layers('thermal', 1, width)}

    if arch is FusionArch.INDEPENDENT_RGB:
        return {'rgb': _scorer_layers('rgb', 3, width)}

    return {'thermal': _scorer_layers('thermal', 1, width)}


@dataclass(frozen=True)
class DetectorModel:
    """
    Small convolutional person scorer.

    The head predicts one objectness logit per grid cell. Boxes are not regressed: every
    detection is a person-aspect box of height `size_ref` centred on its cell, with `size_ref`
    fitted by training.
    """
    arch: FusionArch
    weights: Dict[str, np.ndarray]
    score_stride: int = DEFAULT_STRIDE
    width: int = DEFAULT_WIDTH
    size_ref: float = 64.0
    seed: int = 0
    train_meta: Dict = field(default_factory=dict)

    @property
    def input_channels(self) -> int:
        return sum(layers[0].in_channels for name, layers in layer_plan(self.arch, self.width).items() if name != 'trunk')

    @property
    def name(self) -> str:
        return self.train_meta.get('name') or self.arch.value

    def parameters(self, requires_grad: bool = False) -> Dict[str, Tensor]:
        return {name: Tensor(value, requires_grad=requires_grad, name=name) for name, value in self.weights.items()}

    def with_weights(self, weights: Dict[str, np.ndarray], **changes) -> 'DetectorModel':
        values = dict(
            arch=self.arch, weights=weights, score_stride=self.score_stride, width=self.width,
            size_ref=self.size_ref, seed=self.seed, train_meta=self.train_meta
        )
        values.update(changes)
        return DetectorModel(**values)


def build(arch: FusionArch, seed: int, width: int = DEFAULT_WIDTH, stride: int = DEFAULT_STRIDE, size_ref: float = 64.0) -> DetectorModel:
    if stride < DEFAULT_STRIDE or stride & (stride - 1):
        raise IllegalArgumentException(f'Score stride must be a power of two of at least {DEFAULT_STRIDE}, got {stride}')
    if width < 1:
        raise IllegalArgumentException(f'Detector width must be positive, got {width}')

    rng = derive_rng(seed, 'detectors', arch.value, 'init')
    weights = {}
    for layers in layer_plan(arch, width).values():
        for spec in layers:
            fan_in = spec.in_channels * spec.kernel * spec.kernel
            is_head = spec.name.endswith('.head')
            std = 0.01 if is_head else np.sqrt(2.0 / fan_in)
            weights[f'{spec.name}.weight'] = rng.normal(0.0, std, size=(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
            # the head starts with a low person prior
            weights[f'{spec.name}.bias'] = np.full(spec.out_channels, -2.0 if is_head else 0.0)

    return DetectorModel(arch=arch, weights=weights, score_stride=stride, width=width, size_ref=size_ref, seed=seed)


def _conv(x: Tensor, spec: ConvSpec, params: Dict[str, Tensor]) -> Tensor:
    out = conv2d(x, params[f'{spec.name}.weight'], stride=spec.stride, padding=spec.padding)
    return out + params[f'{spec.name}.bias'].reshape(1, spec.out_channels, 1, 1)


def _run_stack(x: Tensor, layers: List[ConvSpec], params: Dict[str, Tensor], pool: int) -> Tensor:
    for spec in layers[:-1]:
        if spec.kernel == 5 and pool > 1:
            x = max_pool2d(x, pool)
        x = _conv(x, spec, params).relu()

    return _conv(x, layers[-1], params)


def _objectness(raw: Tensor) -> Tensor:
    return raw[0, 0].sigmoid()


def _as_pixels(pair: Union[RgbtImage, RgbtTensors, Tensor]) -> Tensor:
    if isinstance(pair, RgbtImage):
        return Tensor(pair.stacked())
    if isinstance(pair, RgbtTensors):
        return pair.pixels

    return pair


def _to_nchw(pixels: Tensor, channels: slice) -> Tensor:
    h, w, _ = pixels.shape
    selected = pixels[:, :, channels]
    return selected.transpose(2, 0, 1).reshape(1, selected.shape[2], h, w)


def late_fuse(grid_rgb: Tensor, grid_t: Tensor) -> Tensor:
    if grid_rgb.shape != grid_t.shape:
        raise ShapeMismatchException('Late fusion requires equal grids', grid_rgb.shape, grid_t.shape)

    return (grid_rgb + grid_t) * 0.5


def forward(model: DetectorModel, pair: Union[RgbtImage, RgbtTensors, Tensor], params: Optional[Dict[str, Tensor]] = None) -> Tensor:
    """
    Objectness grid of shape [H / stride, W / stride] with values in (0, 1).

    `params` replaces the stored weights, which is how training differentiates through the model.
    """
    pixels = _as_pixels(pair)
    if pixels.ndim != 3 or pixels.shape[2] != 4:
        raise ShapeMismatchException('Detector input must be an [H, W, 4] RGB-T pair', pixels.shape)

    h, w, _ = pixels.shape
    if h % model.score_stride or w % model.score_stride:
        raise ShapeMismatchException(f'Input size must be divisible by the stride {model.score_stride}', (h, w))

    params = params if params is not None else model.parameters()
    plan = layer_plan(model.arch, model.width)
    pool = model.score_stride // DEFAULT_STRIDE
    rgb_input = slice(0, 3)
    thermal_input = slice(3, 4)

    if model.arch is FusionArch.EARLY:
        return _objectness(_run_stack(_to_nchw(pixels, slice(0, 4)), plan['early'], params, pool))

    if model.arch is FusionArch.INDEPENDENT_RGB:
        return _objectness(_run_stack(_to_nchw(pixels, rgb_input), plan['rgb'], params, pool))

    if model.arch is FusionArch.INDEPENDENT_T:
        return _objectness(_run_stack(_to_nchw(pixels, thermal_input), plan['thermal'], params, pool))

    if model.arch is FusionArch.MID:
        rgb = _to_nchw(pixels, rgb_input)
        thermal = _to_nchw(pixels, thermal_input)
        for spec in plan['rgb']:
            rgb = _conv(rgb, spec, params).relu()
        for spec in plan['thermal']:
            thermal = _conv(thermal, spec, params).relu()

        trunk = plan['trunk']
        x = _conv(concat([rgb, thermal], axis=1), trunk[0], params).relu()
        x = max_pool2d(x, 2 * pool)
        x = _conv(x, trunk[1], params).relu()
        return _objectness(_conv(x, trunk[2], params))

    rgb_grid = _objectness(_run_stack(_to_nchw(pixels, rgb_input), plan['rgb'], params, pool))
    thermal_grid = _objectness(_run_stack(_to_nchw(pixels, thermal_input), plan['thermal'], params, pool))
    return late_fuse(rgb_grid, thermal_grid)


def grid_shape(model: DetectorModel, image_size: Tuple[int, int]) -> Tuple[int, int]:
    return image_size[0] // model.score_stride, image_size[1] // model.score_stride
