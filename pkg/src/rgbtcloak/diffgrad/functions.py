from typing import Optional, Tuple, Union

import numpy as np

from rgbtcloak.diffgrad.tensor import Function
from rgbtcloak.exception import ShapeMismatchException

Axis = Optional[Union[int, Tuple[int, ...]]]


def _normalize_axis(axis: Axis, ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None

    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axes: Optional[Tuple[int, ...]], keepdims: bool):
    if axes is not None and not keepdims:
        grad = np.expand_dims(grad, axes)

    return np.broadcast_to(grad, shape)


class _Binary(Function):

    def _remember_shapes(self, x: np.ndarray, y: np.ndarray):
        Function.broadcast_shape(x.shape, y.shape)
        self.x_shape = x.shape
        self.y_shape = y.shape

    def _reduce(self, grad_x, grad_y):
        return (
            Function.unbroadcast(grad_x, self.x_shape) if grad_x is not None else None,
            Function.unbroadcast(grad_y, self.y_shape) if grad_y is not None else None,
        )


class Add(_Binary):
    name = 'add'

    def forward(self, x, y):
        self._remember_shapes(x, y)
        return x + y

    def backward(self, grad):
        return self._reduce(grad, grad)


class Sub(_Binary):
    name = 'subtract'

    def forward(self, x, y):
        self._remember_shapes(x, y)
        return x - y

    def backward(self, grad):
        return self._reduce(grad, -grad)


class Mul(_Binary):
    name = 'multiply'

    def forward(self, x, y):
        self._remember_shapes(x, y)
        return x * y

    def backward(self, grad):
        x, y = self.inputs
        return self._reduce(
            grad * y.data if x.requires_grad else None,
            grad * x.data if y.requires_grad else None
        )


class Div(_Binary):
    name = 'divide'

    def forward(self, x, y):
        self._remember_shapes(x, y)
        return x / y

    def backward(self, grad):
        x, y = self.inputs
        return self._reduce(
            grad / y.data if x.requires_grad else None,
            -grad * x.data / (y.data * y.data) if y.requires_grad else None
        )


class Neg(Function):
    name = 'negate'

    def forward(self, x):
        return -x

    def backward(self, grad):
        return -grad,


class Pow(Function):
    name = 'power'

    def forward(self, x, exponent: float):
        self.exponent = exponent
        return np.power(x, exponent)

    def backward(self, grad):
        x = self.inputs[0].data
        return grad * self.exponent * np.power(x, self.exponent - 1.0),


class Exp(Function):
    name = 'exp'

    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return grad * self.out,


class Log(Function):
    name = 'log'

    def forward(self, x):
        with np.errstate(divide='ignore', invalid='ignore'):
            return np.log(x)

    def backward(self, grad):
        return grad / self.inputs[0].data,


class Sigmoid(Function):
    name = 'sigmoid'

    def forward(self, x):
        # evaluated through exp(-|x|) so large magnitudes never overflow
        z = np.exp(-np.abs(x))
        self.out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        return self.out

    def backward(self, grad):
        return grad * self.out * (1.0 - self.out),


class Relu(Function):
    name = 'relu'

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return grad * (self.inputs[0].data > 0),


class Tanh(Function):
    name = 'tanh'

    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return grad * (1.0 - self.out * self.out),


class Clip(Function):
    name = 'clip'

    def forward(self, x, low: float, high: float):
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad):
        return grad * self.inside,


class Sum(Function):
    name = 'sum'

    def forward(self, x, axis: Axis = None, keepdims: bool = False):
        self.axes = _normalize_axis(axis, x.ndim)
        self.keepdims = keepdims
        return np.sum(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        return _expand_reduced(grad, self.inputs[0].shape, self.axes, self.keepdims),


class Mean(Function):
    name = 'mean'

    def forward(self, x, axis: Axis = None, keepdims: bool = False):
        self.axes = _normalize_axis(axis, x.ndim)
        self.keepdims = keepdims
        self.count = x.size if self.axes is None else int(np.prod([x.shape[a] for a in self.axes]))
        return np.mean(x, axis=self.axes, keepdims=keepdims)

    def backward(self, grad):
        return _expand_reduced(grad, self.inputs[0].shape, self.axes, self.keepdims) / self.count,


class Max(Function):
    """
    Max reduction; the gradient goes to the first maximal element.
    """
    name = 'max'

    def forward(self, x, axis: Optional[int] = None, keepdims: bool = False):
        self.axis = None if axis is None else axis % x.ndim
        self.keepdims = keepdims
        return np.max(x, axis=self.axis, keepdims=keepdims)

    def backward(self, grad):
        x = self.inputs[0].data
        selector = np.zeros_like(x)

        if self.axis is None:
            selector.flat[np.argmax(x)] = 1.0
            return selector * grad,

        idx = np.expand_dims(np.argmax(x, axis=self.axis), self.axis)
        np.put_along_axis(selector, idx, 1.0, axis=self.axis)
        axes = (self.axis,)
        return selector * _expand_reduced(grad, x.shape, axes, self.keepdims),


class MatMul(Function):
    name = 'matmul'

    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise ShapeMismatchException('Matrix multiply requires [m, k] @ [k, n]', x.shape, y.shape)

        return x @ y

    def backward(self, grad):
        x, y = self.inputs
        return (
            grad @ y.data.T if x.requires_grad else None,
            x.data.T @ grad if y.requires_grad else None
        )


def _windows(x: np.ndarray, kh: int, kw: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    # [N, C, out_h, out_w, kh, kw] view of the strided receptive fields
    view = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


class Conv2d(Function):
    """
    2D cross-correlation of [N, C, H, W] input with [O, C, kh, kw] weights, zero padding.
    """
    name = 'conv2d'

    def forward(self, x, weight, stride: int = 1, padding: int = 0):
        if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
            raise ShapeMismatchException('Convolution requires [N, C, H, W] input and [O, C, kh, kw] weights', x.shape, weight.shape)
        if stride < 1 or padding < 0:
            raise ShapeMismatchException(f'Invalid convolution geometry (stride={stride}, padding={padding})', x.shape)

        n, c, h, w = x.shape
        o, _, kh, kw = weight.shape
        out_h = (h + 2 * padding - kh) // stride + 1
        out_w = (w + 2 * padding - kw) // stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchException('Convolution kernel larger than padded input', x.shape, weight.shape)

        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        cols = _windows(padded, kh, kw, stride, out_h, out_w).transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kh * kw)

        self.geometry = (n, c, h, w, o, kh, kw, out_h, out_w, stride, padding)
        self.padded_shape = padded.shape
        self.cols = cols
        out = cols @ weight.reshape(o, -1).T
        return out.reshape(n, out_h, out_w, o).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x, weight = self.inputs
        n, c, h, w, o, kh, kw, out_h, out_w, stride, padding = self.geometry
        grad_rows = grad.transpose(0, 2, 3, 1).reshape(-1, o)

        grad_weight = (grad_rows.T @ self.cols).reshape(weight.shape) if weight.requires_grad else None

        grad_x = None
        if x.requires_grad:
            grad_cols = (grad_rows @ weight.data.reshape(o, -1)).reshape(n, out_h, out_w, c, kh, kw)
            grad_padded = np.zeros(self.padded_shape)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)

            grad_x = grad_padded[:, :, padding:padding + h, padding:padding + w]

        return grad_x, grad_weight


class MaxPool2d(Function):
    name = 'max_pool2d'

    def forward(self, x, kernel: int, stride: int):
        if x.ndim != 4:
            raise ShapeMismatchException('Max pooling requires [N, C, H, W] input', x.shape)

        n, c, h, w = x.shape
        out_h = (h - kernel) // stride + 1
        out_w = (w - kernel) // stride + 1
        if out_h < 1 or out_w < 1:
            raise ShapeMismatchException(f'Pooling window {kernel} larger than input', x.shape)

        flat = _windows(x, kernel, kernel, stride, out_h, out_w).reshape(n, c, out_h, out_w, kernel * kernel)
        self.argmax = np.argmax(flat, axis=-1)
        self.kernel = kernel
        self.stride = stride
        return np.take_along_axis(flat, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        x = self.inputs[0].data
        ni, ci, oi, wi = np.indices(self.argmax.shape)
        rows = oi * self.stride + self.argmax // self.kernel
        cols = wi * self.stride + self.argmax % self.kernel
        grad_x = np.zeros_like(x)
        np.add.at(grad_x, (ni, ci, rows, cols), grad)
        return grad_x,


class BilinearSample(Function):
    """
    Samples an [H, W] or [H, W, C] image at fixed fractional (y, x) coordinates.

    Differentiable with respect to pixel values only; neighbours outside the image contribute zero.
    """
    name = 'bilinear_sample'

    def forward(self, image, ys: np.ndarray, xs: np.ndarray):
        ys = np.asarray(ys, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        if ys.shape != xs.shape:
            raise ShapeMismatchException('Sampling coordinate arrays differ', ys.shape, xs.shape)
        if image.ndim not in (2, 3):
            raise ShapeMismatchException('Bilinear sampling requires [H, W] or [H, W, C] image', image.shape)

        h, w = image.shape[:2]
        y0 = np.floor(ys).astype(np.int64)
        x0 = np.floor(xs).astype(np.int64)
        wy = ys - y0
        wx = xs - x0

        self.corners = []
        out = np.zeros(ys.shape + image.shape[2:])
        for dy, dx, weight in (
            (0, 0, (1.0 - wy) * (1.0 - wx)),
            (0, 1, (1.0 - wy) * wx),
            (1, 0, wy * (1.0 - wx)),
            (1, 1, wy * wx),
        ):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = np.where(valid, weight, 0.0)
            yy = np.clip(yy, 0, h - 1)
            xx = np.clip(xx, 0, w - 1)
            self.corners.append((yy, xx, weight))

            if image.ndim == 3:
                out = out + weight[..., None] * image[yy, xx]
            else:
                out = out + weight * image[yy, xx]

        return out

    def backward(self, grad):
        image = self.inputs[0].data
        grad_image = np.zeros_like(image)
        for yy, xx, weight in self.corners:
            contribution = weight[..., None] * grad if image.ndim == 3 else weight * grad
            np.add.at(grad_image, (yy, xx), contribution)

        return grad_image,


class Concat(Function):
    name = 'concat'

    def forward(self, *arrays, axis: int = 0):
        reference = arrays[0]
        for other in arrays[1:]:
            if other.ndim != reference.ndim or any(
                a != b for i, (a, b) in enumerate(zip(reference.shape, other.shape)) if i != axis % reference.ndim
            ):
                raise ShapeMismatchException(f'Concatenation along axis {axis} requires matching shapes', reference.shape, other.shape)

        self.axis = axis % reference.ndim
        self.sizes = [a.shape[self.axis] for a in arrays]
        return np.concatenate(arrays, axis=self.axis)

    def backward(self, grad):
        offsets = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, offsets, axis=self.axis))


class GetItem(Function):
    name = 'slice'

    def forward(self, x, index):
        self.index = index
        return np.array(x[index], dtype=np.float64)

    def backward(self, grad):
        grad_x = np.zeros_like(self.inputs[0].data)
        np.add.at(grad_x, self.index, grad)
        return grad_x,


class Reshape(Function):
    name = 'reshape'

    def forward(self, x, shape: Tuple[int, ...]):
        try:
            return x.reshape(shape)
        except ValueError:
            raise ShapeMismatchException('Cannot reshape', x.shape, shape)

    def backward(self, grad):
        return grad.reshape(self.inputs[0].shape),


class Transpose(Function):
    name = 'transpose'

    def forward(self, x, axes: Optional[Tuple[int, ...]] = None):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return np.transpose(grad, np.argsort(self.axes)),
