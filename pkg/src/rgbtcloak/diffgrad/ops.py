from typing import Optional, Sequence

import numpy as np

from rgbtcloak.diffgrad import functions as F
from rgbtcloak.diffgrad.tensor import Tensor, TensorLike


def exp(x: TensorLike) -> Tensor:
    return F.Exp.apply(x)


def log(x: TensorLike) -> Tensor:
    return F.Log.apply(x)


def sigmoid(x: TensorLike) -> Tensor:
    return F.Sigmoid.apply(x)


def relu(x: TensorLike) -> Tensor:
    return F.Relu.apply(x)


def tanh(x: TensorLike) -> Tensor:
    return F.Tanh.apply(x)


def clip(x: TensorLike, low: float, high: float) -> Tensor:
    return F.Clip.apply(x, low=low, high=high)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    return F.Concat.apply(*tensors, axis=axis)


def conv2d(x: TensorLike, weight: TensorLike, stride: int = 1, padding: int = 0) -> Tensor:
    return F.Conv2d.apply(x, weight, stride=stride, padding=padding)


def max_pool2d(x: TensorLike, kernel: int, stride: Optional[int] = None) -> Tensor:
    return F.MaxPool2d.apply(x, kernel=kernel, stride=stride or kernel)


def bilinear_sample(image: TensorLike, ys: np.ndarray, xs: np.ndarray) -> Tensor:
    return F.BilinearSample.apply(image, ys=ys, xs=xs)


def logsumexp(x: Tensor, axis: Optional[int] = None) -> Tensor:
    # the shift is a constant, so it cancels out of the gradient
    shift = np.max(x.data, axis=axis, keepdims=True)
    shifted = (x - shift).exp().sum(axis=axis, keepdims=True)
    out = shifted.log() + shift
    return out.reshape(()) if axis is None else out.sum(axis=axis)
