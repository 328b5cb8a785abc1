import logging
from dataclasses import dataclass
from typing import Dict, List, Protocol, Sequence, Tuple

import numpy as np

from rgbtcloak.attack.losses import RenderSetup
from rgbtcloak.composer.paste import paste
from rgbtcloak.composer.render import render_person
from rgbtcloak.composer.types import Placement, RgbtImage
from rgbtcloak.composer.uvmap import uv_for_angle
from rgbtcloak.detectors.decode import Detection, detect
from rgbtcloak.detectors.model import DetectorModel
from rgbtcloak.evaluation.metrics import EvalConfig, is_detected
from rgbtcloak.exception import IllegalArgumentException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, NorpTexture, realize, realize_overlapping
from rgbtcloak.utils.parallel import parallel_map

_log = logging.getLogger(__name__)


class Detector(Protocol):
    name: str

    def detect(self, image: RgbtImage) -> List[Detection]:
        ...


@dataclass(frozen=True)
class ModelDetector:
    model: DetectorModel
    conf_threshold: float

    @property
    def name(self) -> str:
        return self.model.name

    def detect(self, image: RgbtImage) -> List[Detection]:
        return detect(self.model, image, self.conf_threshold)


@dataclass(frozen=True)
class EitherDetector:
    """
    Counts a person as found when any member detector finds them.
    """
    name: str
    members: Tuple[Detector, ...]

    def detect(self, image: RgbtImage) -> List[Detection]:
        return [d for member in self.members for d in member.detect(image)]


@dataclass(frozen=True)
class SweepResult:
    """
    Per (angle, distance) cell target and miss counts for one detector.
    """
    detector: str
    angles: Tuple[float, ...]
    distances: Tuple[float, ...]
    targets: np.ndarray
    undetected: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return self.undetected / np.maximum(self.targets, 1)

    @property
    def total_targets(self) -> int:
        return int(self.targets.sum())

    @property
    def total_undetected(self) -> int:
        return int(self.undetected.sum())

    @property
    def overall_asr(self) -> float:
        # weighted by target count per cell
        return self.total_undetected / self.total_targets

    def angle_marginal(self) -> np.ndarray:
        return self.undetected.sum(axis=1) / np.maximum(self.targets.sum(axis=1), 1)

    def distance_marginal(self) -> np.ndarray:
        return self.undetected.sum(axis=0) / np.maximum(self.targets.sum(axis=0), 1)

    def as_dict(self) -> Dict:
        return {
            'detector': self.detector,
            'asr': self.overall_asr,
            'targets': self.total_targets,
            'undetected': self.total_undetected,
            'angles': list(self.angles),
            'distances': list(self.distances),
            'grid_asr': self.grid.tolist(),
            'grid_targets': self.targets.tolist(),
            'grid_undetected': self.undetected.tolist(),
            'asr_by_angle': self.angle_marginal().tolist(),
            'asr_by_distance': self.distance_marginal().tolist(),
        }


@dataclass(frozen=True)
class AsrEntry:
    detector: str
    targets: int
    undetected: int

    @property
    def asr(self) -> float:
        return self.undetected / self.targets


def eval_texture(params: NorpParams, constants: MaterialConstants, overlapping: bool = False) -> NorpTexture:
    if not params.is_binarized():
        raise IllegalArgumentException('Evaluation expects a binarized pattern, binarize before evaluating')

    return realize_overlapping(params, constants) if overlapping else realize(params, constants)


def _cell_missed(texture: NorpTexture, detector: Detector, background: RgbtImage, angle: float, distance: float,
                 setup: RenderSetup, config: EvalConfig) -> bool:
    # fixed geometry: person centred in the frame, no jitter
    placement = Placement(center_x=background.width / 2.0, center_y=background.height / 2.0, distance=distance, angle=angle)
    uv = uv_for_angle(setup.uv_maps, angle)
    composite = paste(render_person(texture, setup.appearance, uv, distance, setup.camera), background, placement)
    return not is_detected(detector.detect(composite.image.to_image()), composite.box, config)


def sweep_texture(texture: NorpTexture, detector: Detector, backgrounds: Sequence[RgbtImage], config: EvalConfig, setup: RenderSetup) -> SweepResult:
    if not backgrounds:
        raise IllegalArgumentException('Evaluation needs at least one background')

    cells = [(a, d, b) for a in range(len(config.angles)) for d in range(len(config.distances)) for b in range(len(backgrounds))]

    def evaluate(cell) -> bool:
        a, d, b = cell
        return _cell_missed(texture, detector, backgrounds[b], config.angles[a], config.distances[d], setup, config)

    missed = parallel_map(evaluate, cells, config.workers)
    undetected = np.zeros((len(config.angles), len(config.distances)), dtype=np.int64)
    for (a, d, _), miss in zip(cells, missed):
        undetected[a, d] += int(miss)

    targets = np.full(undetected.shape, len(backgrounds), dtype=np.int64)
    result = SweepResult(detector.name, tuple(config.angles), tuple(config.distances), targets, undetected)
    _log.info(f' + {detector.name}: ASR {result.overall_asr:.3f} ({result.total_undetected}/{result.total_targets} undetected)')
    return result


def sweep(params: NorpParams, constants: MaterialConstants, detector: Detector, backgrounds: Sequence[RgbtImage],
          config: EvalConfig, setup: RenderSetup, overlapping: bool = False) -> SweepResult:
    """
    ASR on the full (angle, distance) grid, each cell rendered on every background.
    """
    return sweep_texture(eval_texture(params, constants, overlapping), detector, backgrounds, config, setup)


def asr(params: NorpParams, constants: MaterialConstants, detector: Detector, backgrounds: Sequence[RgbtImage],
        config: EvalConfig, setup: RenderSetup, overlapping: bool = False) -> AsrEntry:
    """
    Fraction of rendered target persons the detector misses at the configured IoU and confidence.
    """
    result = sweep(params, constants, detector, backgrounds, config, setup, overlapping)
    return AsrEntry(detector=result.detector, targets=result.total_targets, undetected=result.total_undetected)
