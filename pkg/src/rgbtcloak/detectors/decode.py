from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from rgbtcloak.composer.types import Box
from rgbtcloak.detectors.model import PERSON_ASPECT, DetectorModel, forward
from rgbtcloak.exception import IllegalArgumentException

NMS_IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class Detection:
    box: Box
    confidence: float
    cell: Tuple[int, int]


def _overlaps(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    xx1 = np.maximum(box[0], others[:, 0])
    yy1 = np.maximum(box[1], others[:, 1])
    xx2 = np.minimum(box[2], others[:, 2])
    yy2 = np.minimum(box[3], others[:, 3])

    inter = np.maximum(0.0, xx2 - xx1) * np.maximum(0.0, yy2 - yy1)
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area + areas - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = NMS_IOU_THRESHOLD) -> List[int]:
    """
    Greedy non-maximum suppression; returns kept indices by descending score.
    Ties keep the lower index.
    """
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        overlap = _overlaps(boxes[i], boxes[order[1:]])
        order = order[1:][overlap <= iou_threshold]

    return keep


def decode(
    grid: np.ndarray,
    conf_threshold: float,
    stride: int,
    box_size: Tuple[float, float] = (64.0 * PERSON_ASPECT, 64.0),
    image_size: Optional[Tuple[int, int]] = None
) -> List[Detection]:
    """
    Turns an objectness grid into detections.

    Every cell with confidence above the threshold yields one person box of `box_size`
    (width, height) centred on the cell, clipped to the frame.
    """
    if not 0.0 < conf_threshold <= 1.0:
        raise IllegalArgumentException(f'Confidence threshold must be in (0, 1], got {conf_threshold}')

    grid = np.asarray(grid, dtype=np.float64)
    frame_h, frame_w = image_size or (grid.shape[0] * stride, grid.shape[1] * stride)
    rows, cols = np.nonzero(grid > conf_threshold)
    if rows.size == 0:
        return []

    cx = (cols + 0.5) * stride
    cy = (rows + 0.5) * stride
    half_w, half_h = box_size[0] / 2.0, box_size[1] / 2.0
    boxes = np.stack([
        np.clip(cx - half_w, 0, frame_w), np.clip(cy - half_h, 0, frame_h),
        np.clip(cx + half_w, 0, frame_w), np.clip(cy + half_h, 0, frame_h),
    ], axis=1)
    scores = grid[rows, cols]

    return [
        Detection(box=Box.from_list(boxes[i]), confidence=float(scores[i]), cell=(int(rows[i]), int(cols[i])))
        for i in nms(boxes, scores)
    ]


def model_box_size(model: DetectorModel) -> Tuple[float, float]:
    return model.size_ref * PERSON_ASPECT, model.size_ref


def detect(model: DetectorModel, image, conf_threshold: float) -> List[Detection]:
    grid = forward(model, image).data
    h, w = grid.shape
    return decode(
        grid,
        conf_threshold,
        model.score_stride,
        box_size=model_box_size(model),
        image_size=(h * model.score_stride, w * model.score_stride)
    )
