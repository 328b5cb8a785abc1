import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from rgbtcloak.composer.dataset import DatasetSample
from rgbtcloak.detectors.decode import detect
from rgbtcloak.detectors.model import DEFAULT_STRIDE, DEFAULT_WIDTH, DetectorModel, FusionArch, build, forward, grid_shape
from rgbtcloak.detectors.objective import region_cells
from rgbtcloak.diffgrad.grad import value_and_grad
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.evaluation.metrics import EvalConfig, precision_recall
from rgbtcloak.exception import IllegalArgumentException, NonFiniteValueException
from rgbtcloak.utils.logging import should_log_progress
from rgbtcloak.utils.seeding import derive_rng

_log = logging.getLogger(__name__)

_PROB_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 8
    val_fraction: float = 0.2
    width: int = DEFAULT_WIDTH
    stride: int = DEFAULT_STRIDE
    beta1: float = 0.9
    beta2: float = 0.999
    log_every: int = 5

    def __post_init__(self):
        if self.batch < 1:
            raise IllegalArgumentException(f'Batch size must be positive, got {self.batch}')
        if not 0.0 < self.val_fraction < 1.0:
            raise IllegalArgumentException(f'Validation fraction must be in (0, 1), got {self.val_fraction}')


def split_dataset(samples: Sequence[DatasetSample], val_fraction: float, seed: int) -> Tuple[List[DatasetSample], List[DatasetSample]]:
    """
    Deterministic stratified split: each label keeps the same share in the validation part.
    """
    train, val = [], []
    rng = derive_rng(seed, 'train', 'split')
    for label in (True, False):
        group = [s for s in samples if s.label == label]
        order = rng.permutation(len(group))
        n_val = max(1, int(np.floor(len(group) * val_fraction + 0.5))) if len(group) > 1 else 0
        val.extend(group[i] for i in order[:n_val])
        train.extend(group[i] for i in order[n_val:])

    return train, val


def cell_targets(sample: DatasetSample, grid: Tuple[int, int], stride: int) -> np.ndarray:
    """
    Per-cell person targets: cells whose centres fall in the ground truth box are 1.
    """
    if not sample.label:
        return np.zeros(grid)

    return region_cells(grid, stride, sample.gt_box).astype(np.float64)


def fit_box_height(samples: Sequence[DatasetSample]) -> float:
    """
    The model's box size scalar: the decoded box height with the least absolute error against
    the person boxes of the given scenes.
    """
    heights = [s.gt_box.height for s in samples if s.label]
    if not heights:
        raise IllegalArgumentException('Cannot fit the box size without person scenes')

    return float(np.median(heights))


def _sample_loss(model: DetectorModel, params: Dict[str, Tensor], sample: DatasetSample, positive: np.ndarray) -> Tensor:
    prob = forward(model, Tensor(sample.image.stacked()), params).clip(_PROB_EPS, 1.0 - _PROB_EPS)
    negative = 1.0 - positive
    bce = -(positive * prob.log() + negative * (1.0 - prob).log())

    # positives and negatives weigh the same regardless of how few person cells there are
    loss = (bce * negative).sum() / max(1.0, negative.sum())
    n_positive = positive.sum()
    if n_positive > 0:
        loss = loss + (bce * positive).sum() / n_positive

    return loss


def _validate(model: DetectorModel, samples: Sequence[DatasetSample], eval_config: EvalConfig) -> Dict[str, float]:
    per_scene = [(detect(model, s.image, eval_config.conf_threshold), s.gt_box if s.label else None) for s in samples]
    precision, recall = precision_recall(per_scene, eval_config)
    return {'val_recall': recall, 'val_precision': precision}


def train(
    arch: FusionArch,
    dataset: Sequence[DatasetSample],
    epochs: int,
    lr: float,
    seed: int,
    config: TrainConfig = TrainConfig(),
    eval_config: EvalConfig = EvalConfig()
) -> DetectorModel:
    """
    Fits a detector of the given architecture with Adam on per-cell person/background targets.

    The box size scalar is fitted to the person boxes of the training part. The
    returned model records validation recall and precision at the evaluation thresholds.
    """
    labels = {s.label for s in dataset}
    if labels != {True, False}:
        raise IllegalArgumentException(f'Training needs scenes with and without a person, got labels {sorted(labels)}')
    if epochs < 0:
        raise IllegalArgumentException(f'Epoch count must not be negative, got {epochs}')
    if lr <= 0:
        raise IllegalArgumentException(f'Learning rate must be positive, got {lr}')

    train_set, val_set = split_dataset(dataset, config.val_fraction, seed)
    box_height = fit_box_height(train_set if any(s.label for s in train_set) else dataset)
    model = build(arch, seed, width=config.width, stride=config.stride, size_ref=box_height)

    image_size = (dataset[0].image.height, dataset[0].image.width)
    grid = grid_shape(model, image_size)
    targets = [cell_targets(s, grid, model.score_stride) for s in train_set]

    names = sorted(model.weights)
    weights = {name: model.weights[name].copy() for name in names}
    first_moment = {name: np.zeros_like(weights[name]) for name in names}
    second_moment = {name: np.zeros_like(weights[name]) for name in names}
    step = 0
    last_loss = float('nan')

    _log.info(f' + Training {arch.value} on {len(train_set)} scenes ({len(val_set)} held out) for {epochs} epochs')
    for epoch in range(1, epochs + 1):
        order = derive_rng(seed, 'train', arch.value, 'epoch', epoch).permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            leaves = [Tensor(weights[name], requires_grad=True, name=name) for name in names]

            def objective(*params: Tensor) -> Tensor:
                by_name = dict(zip(names, params))
                total = None
                for idx in batch:
                    loss = _sample_loss(model, by_name, train_set[idx], targets[idx])
                    total = loss if total is None else total + loss
                return total / float(len(batch))

            value, grads = value_and_grad(objective, leaves)
            if not np.isfinite(value):
                raise NonFiniteValueException(f'Training loss of {arch.value} is not finite', iteration=epoch)

            step += 1
            for name, grad in zip(names, grads):
                first_moment[name] = config.beta1 * first_moment[name] + (1.0 - config.beta1) * grad.data
                second_moment[name] = config.beta2 * second_moment[name] + (1.0 - config.beta2) * grad.data ** 2
                m_hat = first_moment[name] / (1.0 - config.beta1 ** step)
                v_hat = second_moment[name] / (1.0 - config.beta2 ** step)
                weights[name] = weights[name] - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
            epoch_losses.append(value)

        last_loss = float(np.mean(epoch_losses))
        if should_log_progress(epoch, epochs, config.log_every):
            _log.info(f' + {arch.value} epoch {epoch}/{epochs}: loss {last_loss:.4f}')

    model = model.with_weights(weights) if epochs > 0 else model
    metrics = _validate(model, val_set, eval_config)
    meta = dict(seed=seed, epochs=epochs, lr=lr, final_loss=last_loss if epochs > 0 else None, **metrics)
    _log.info(f' + {arch.value}: val recall {metrics["val_recall"]:.3f}, precision {metrics["val_precision"]:.3f}')
    return model.with_weights(model.weights, train_meta=meta)
