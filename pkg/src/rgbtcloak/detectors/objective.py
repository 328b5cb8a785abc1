from dataclasses import dataclass
from typing import Union

import numpy as np

from rgbtcloak.composer.types import Box, RgbtImage, RgbtTensors
from rgbtcloak.detectors.model import DetectorModel, FusionArch, forward
from rgbtcloak.diffgrad.ops import logsumexp
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException

DEFAULT_TAU = 0.05


@dataclass(frozen=True)
class DetectorPair:
    """
    Independent visible and thermal detectors attacked together.
    """
    rgb: DetectorModel
    thermal: DetectorModel

    def __post_init__(self):
        if self.rgb.arch is not FusionArch.INDEPENDENT_RGB or self.thermal.arch is not FusionArch.INDEPENDENT_T:
            raise IllegalArgumentException(
                f'Independent pair needs IndependentRGB and IndependentT models, got {self.rgb.arch.value} and {self.thermal.arch.value}'
            )

    @property
    def name(self) -> str:
        return 'Independent'

    @property
    def score_stride(self) -> int:
        return self.rgb.score_stride


Target = Union[DetectorModel, DetectorPair]


def region_cells(grid_shape, stride: int, gt_box: Box) -> np.ndarray:
    """
    Boolean grid of the cells whose centres fall inside the box.
    """
    gh, gw = grid_shape
    cy = (np.arange(gh) + 0.5) * stride
    cx = (np.arange(gw) + 0.5) * stride
    rows = (cy >= gt_box.y0) & (cy < gt_box.y1)
    cols = (cx >= gt_box.x0) & (cx < gt_box.x1)
    return rows[:, None] & cols[None, :]


def smooth_max(values: Tensor, tau: float = DEFAULT_TAU) -> Tensor:
    """
    Unnormalized log-sum-exp `tau * log(sum(exp(v / tau)))`.

    It lies in [max, max + tau * ln n] for n values: a single dominant cell scores just above
    its own confidence, while n equal cells score `c + tau * ln n`, so wide regions can push the
    score past 1.
    """
    if tau <= 0:
        raise IllegalArgumentException(f'Smooth-max temperature must be positive, got {tau}')

    return logsumexp(values / tau) * tau


def _image_size(pair) -> tuple:
    if isinstance(pair, RgbtImage):
        return pair.height, pair.width
    if isinstance(pair, RgbtTensors):
        return pair.height, pair.width

    return pair.shape[0], pair.shape[1]


def _region_score(model: DetectorModel, pair, gt_box: Box, tau: float) -> Tensor:
    grid = forward(model, pair)
    cells = region_cells(grid.shape, model.score_stride, gt_box)
    if not cells.any():
        raise IllegalArgumentException(f'Box {gt_box.as_list()} covers no cell centre of the stride {model.score_stride} grid')

    return smooth_max(grid[np.nonzero(cells)], tau)


def objectness(target: Target, pair: Union[RgbtImage, RgbtTensors, Tensor], gt_box: Box, tau: float = DEFAULT_TAU) -> Tensor:
    """
    Differentiable person score of the target region: temperature `tau` smooth-max of the grid
    confidences whose cell centres lie in `gt_box`. An independent pair scores the sum of its two
    detectors.
    """
    height, width = _image_size(pair)
    if not gt_box.inside(width, height):
        raise IllegalArgumentException(f'Box {gt_box.as_list()} outside of {width}x{height} image')

    if isinstance(target, DetectorPair):
        return _region_score(target.rgb, pair, gt_box, tau) + _region_score(target.thermal, pair, gt_box, tau)

    return _region_score(target, pair, gt_box, tau)
