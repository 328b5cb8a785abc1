from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from rgbtcloak.composer.dataset import random_placement
from rgbtcloak.composer.eot import eot_transform
from rgbtcloak.composer.paste import paste, sprite_window
from rgbtcloak.composer.render import CameraModel, render_alpha, render_person
from rgbtcloak.composer.types import Box, EotConfig, PersonAppearance, RgbtImage, Scene
from rgbtcloak.composer.uvmap import UvMap, uv_for_angle
from rgbtcloak.detectors.objective import DEFAULT_TAU, Target, objectness, region_cells
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, SrdMask, TextureTensors, realize_variables

WeightedTargets = Sequence[Tuple[Target, float]]


@dataclass(frozen=True)
class RenderSetup:
    uv_maps: Sequence[UvMap]
    appearance: PersonAppearance = field(default_factory=PersonAppearance)
    camera: CameraModel = field(default_factory=CameraModel)


def as_weighted(targets: Union[Target, WeightedTargets]) -> List[Tuple[Target, float]]:
    if isinstance(targets, (list, tuple)):
        return [(target, float(weight)) for target, weight in targets]

    return [(targets, 1.0)]


def scene_at(background: RgbtImage, uv: UvMap, placement, camera: CameraModel) -> Scene:
    """
    Scene with the ground truth box of the un-jittered person at `placement`.
    """
    alpha = render_alpha(uv, placement.distance, camera)
    top, left = sprite_window(alpha.shape[0], alpha.shape[1], placement)
    rows, cols = np.nonzero(alpha)
    box = Box(float(left + cols.min()), float(top + rows.min()), float(left + cols.max() + 1), float(top + rows.max() + 1))
    return Scene(background=background, placement=placement, gt_box=box.clipped(background.width, background.height))


def sample_scene(backgrounds: Sequence[RgbtImage], setup: RenderSetup, eot: EotConfig, rng: np.random.Generator) -> Scene:
    """
    Random background, view angle, distance and position for one optimization sample.
    """
    background = backgrounds[int(rng.integers(len(backgrounds)))]
    uv, placement = random_placement(rng, setup.uv_maps, (background.height, background.width), setup.camera, eot)
    return scene_at(background, uv, placement, setup.camera)


def _scoring_box(box: Box, stride: int, width: int, height: int) -> Box:
    # thin far-away people may miss every cell centre; widen to the cell holding the box centre
    if region_cells((height // stride, width // stride), stride, box).any():
        return box

    cx, cy = box.center
    x0 = np.floor(cx / stride) * stride
    y0 = np.floor(cy / stride) * stride
    return Box(min(box.x0, x0), min(box.y0, y0), max(box.x1, x0 + stride), max(box.y1, y0 + stride)).clipped(width, height)


def ensemble_loss(losses: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """
    Weighted sum of per fusion stage losses.
    """
    if len(losses) != len(weights):
        raise ShapeMismatchException('Every stage loss needs exactly one weight', (len(losses),), (len(weights),))
    if any(w < 0 for w in weights):
        raise IllegalArgumentException(f'Ensemble weights must not be negative, got {list(weights)}')

    total = None
    for loss, weight in zip(losses, weights):
        term = loss * float(weight)
        total = term if total is None else total + term

    return total


def texture_loss(
    targets: Union[Target, WeightedTargets],
    texture: Union[TextureTensors, Tensor],
    scene: Scene,
    setup: RenderSetup,
    eot: EotConfig,
    rng: np.random.Generator,
    tau: float = DEFAULT_TAU
) -> Tensor:
    """
    Renders the texture on the person, applies one EOT draw, pastes into the scene and scores
    the target region. The region is the box of the pasted person, so it follows the jitter.
    """
    uv = uv_for_angle(setup.uv_maps, scene.placement.angle)
    sprite = render_person(texture, setup.appearance, uv, scene.placement.distance, setup.camera)
    composite = paste(eot_transform(sprite, eot, rng), scene.background, scene.placement)
    region = composite.box or scene.gt_box
    width, height = scene.background.width, scene.background.height

    weighted = [(t, w) for t, w in as_weighted(targets) if w > 0]
    losses = [objectness(t, composite.image, _scoring_box(region, t.score_stride, width, height), tau) for t, _ in weighted]
    return ensemble_loss(losses, [w for _, w in weighted])


def adversarial_loss(
    targets: Union[Target, WeightedTargets],
    params: NorpParams,
    constants: MaterialConstants,
    scene: Scene,
    uv_maps: Sequence[UvMap],
    eot: EotConfig,
    rng: np.random.Generator,
    mask: Optional[SrdMask] = None,
    appearance: PersonAppearance = PersonAppearance(),
    camera: CameraModel = CameraModel(),
    tau: float = DEFAULT_TAU
) -> Tensor:
    """
    Detector confidence for the clothed person in one sampled view; the quantity the attack minimizes.
    """
    texture = realize_variables(Tensor(params.rgb), Tensor(params.p_tilde), constants, mask)
    return texture_loss(targets, texture, scene, RenderSetup(uv_maps, appearance, camera), eot, rng, tau)
