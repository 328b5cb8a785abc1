from dataclasses import dataclass
from typing import Sequence, Tuple

from rgbtcloak.composer.types import Box
from rgbtcloak.detectors.decode import Detection
from rgbtcloak.exception import IllegalArgumentException

DEFAULT_ANGLES = tuple(float(a) for a in range(0, 360, 18))
DEFAULT_DISTANCES = tuple(2.5 * i for i in range(1, 9))


@dataclass(frozen=True)
class EvalConfig:
    """
    Detection protocol (IoU 0.5, confidence 0.6) and the (angle, distance) grid the clothed
    person is rendered on.
    """
    iou_threshold: float = 0.5
    conf_threshold: float = 0.6
    angles: Tuple[float, ...] = DEFAULT_ANGLES
    distances: Tuple[float, ...] = DEFAULT_DISTANCES
    n_backgrounds: int = 32
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name, value in (('IoU', self.iou_threshold), ('Confidence', self.conf_threshold)):
            if not 0.0 < value < 1.0:
                raise IllegalArgumentException(f'{name} threshold must be in (0, 1), got {value}')
        if not self.angles or not self.distances:
            raise IllegalArgumentException('Evaluation needs at least one angle and one distance')
        if any(not 0.0 <= a < 360.0 for a in self.angles):
            raise IllegalArgumentException(f'Angles must lie in [0, 360), got {list(self.angles)}')
        if any(d <= 0 for d in self.distances):
            raise IllegalArgumentException(f'Distances must be positive, got {list(self.distances)}')
        if self.n_backgrounds < 1:
            raise IllegalArgumentException(f'At least one background is required, got {self.n_backgrounds}')

    def as_dict(self) -> dict:
        return {
            'iou_threshold': self.iou_threshold,
            'conf_threshold': self.conf_threshold,
            'angles': list(self.angles),
            'distances': list(self.distances),
            'n_backgrounds': self.n_backgrounds,
            'seed': self.seed,
        }


def iou(box_a: Box, box_b: Box) -> float:
    """
    Intersection over union. Zero-area boxes overlap nothing unless both are the same box.
    """
    if box_a.area == 0 or box_b.area == 0:
        return 1.0 if box_a == box_b else 0.0

    inter_w = max(0.0, min(box_a.x1, box_b.x1) - max(box_a.x0, box_b.x0))
    inter_h = max(0.0, min(box_a.y1, box_b.y1) - max(box_a.y0, box_b.y0))
    inter = inter_w * inter_h
    return float(inter / (box_a.area + box_b.area - inter))


def is_detected(detections: Sequence[Detection], gt_box: Box, config: EvalConfig = EvalConfig()) -> bool:
    return any(
        d.confidence >= config.conf_threshold and iou(d.box, gt_box) >= config.iou_threshold
        for d in detections
    )


def precision_recall(per_scene: Sequence[Tuple[Sequence[Detection], Box]], config: EvalConfig = EvalConfig()) -> Tuple[float, float]:
    """
    Recall over scenes with a person and precision over every detection.

    A detection is a true positive when it matches its scene's ground truth and no earlier
    detection already did. With no detections at all the precision is 1.
    """
    positives = 0
    recalled = 0
    true_positives = 0
    total = 0
    for detections, gt_box in per_scene:
        kept = [d for d in detections if d.confidence >= config.conf_threshold]
        total += len(kept)
        if gt_box is None:
            continue

        positives += 1
        matches = [iou(d.box, gt_box) >= config.iou_threshold for d in kept]
        if any(matches):
            recalled += 1
            true_positives += 1

    recall = recalled / positives if positives else 0.0
    precision = true_positives / total if total else 1.0
    return precision, recall
