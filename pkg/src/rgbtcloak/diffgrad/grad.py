import enum
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from rgbtcloak.diffgrad.tensor import GradientTape, Tensor
from rgbtcloak.exception import IllegalArgumentException, NonFiniteValueException, ShapeMismatchException

Objective = Callable[..., Tensor]


class MaskMode(enum.Enum):
    KEEP_WHERE_ONE = 'keep-where-one'
    KEEP_WHERE_ZERO = 'keep-where-zero'


@dataclass(frozen=True)
class GradMask:
    values: np.ndarray

    def __post_init__(self):
        if not np.all((self.values == 0) | (self.values == 1)):
            raise IllegalArgumentException('Gradient mask entries must be 0 or 1')

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def expand_channels(self, channels: int) -> 'GradMask':
        return GradMask(np.repeat(self.values[..., None], channels, axis=-1))


def value_and_grad(objective: Objective, leaves: Sequence[Tensor]) -> Tuple[float, List[Optional[Tensor]]]:
    """
    Evaluates `objective(*leaves)` on a fresh tape and returns its value with the exact gradient
    of every leaf marked `requires_grad` (None for the others).
    """
    with GradientTape() as tape:
        out = objective(*leaves)

    if not isinstance(out, Tensor):
        out = Tensor(out)
    if out.size != 1:
        raise ShapeMismatchException('Objective must produce a scalar', out.shape)

    grads = tape.gradient(out, leaves)
    return out.item(), [
        Tensor(g, name=leaf.name) if leaf.requires_grad else None for leaf, g in zip(leaves, grads)
    ]


def block_gradient(grad: Tensor, mask: GradMask, mode: MaskMode) -> Tensor:
    if grad.shape != mask.shape:
        raise ShapeMismatchException('Gradient and mask shapes differ', grad.shape, mask.shape)

    keep = mask.values == 1 if mode is MaskMode.KEEP_WHERE_ONE else mask.values == 0
    return Tensor(np.where(keep, grad.data, 0.0), name=grad.name)


def sgd_step(leaf: Tensor, grad: Tensor, eta: float) -> Tensor:
    if eta <= 0:
        raise IllegalArgumentException(f'Step size must be positive, got {eta}')
    if leaf.shape != grad.shape:
        raise ShapeMismatchException(f'Gradient shape does not match leaf "{leaf.name}"', leaf.shape, grad.shape)
    if not np.all(np.isfinite(grad.data)):
        raise NonFiniteValueException(f'Non-finite gradient for leaf "{leaf.name}"')

    return Tensor(leaf.data - eta * grad.data, requires_grad=leaf.requires_grad, name=leaf.name)


def _evaluate(objective: Objective, leaves: Sequence[Tensor]) -> float:
    out = objective(*leaves)
    return out.item() if isinstance(out, Tensor) else float(out)


def finite_difference_check(objective: Objective, leaves: Sequence[Tensor], step: float = 1e-5) -> float:
    """
    Compares analytic gradients against central differences and returns the max relative error
    `|analytic - numeric| / max(1e-8, |numeric|)` over every entry of every differentiable leaf.
    """
    if step <= 0:
        raise IllegalArgumentException(f'Finite difference step must be positive, got {step}')

    _, analytic = value_and_grad(objective, leaves)
    worst = 0.0

    for leaf_idx, (leaf, grad) in enumerate(zip(leaves, analytic)):
        if grad is None:
            continue

        for flat_idx in range(leaf.size):
            values = []
            for sign in (1.0, -1.0):
                data = leaf.data.copy()
                data.flat[flat_idx] += sign * step
                probe = list(leaves)
                probe[leaf_idx] = Tensor(data, name=leaf.name)
                values.append(_evaluate(objective, probe))

            numeric = (values[0] - values[1]) / (2.0 * step)
            error = abs(grad.data.flat[flat_idx] - numeric) / max(1e-8, abs(numeric))
            worst = max(worst, error)

    return worst
