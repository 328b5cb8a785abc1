import threading
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rgbtcloak.exception import NonFiniteValueException, ShapeMismatchException, UnsupportedOperationException

_tape_state = threading.local()

# numpy ufuncs that map onto engine primitives, e.g. ndarray * Tensor
_UFUNC_PRIMITIVES = {
    'add': 'Add',
    'subtract': 'Sub',
    'multiply': 'Mul',
    'true_divide': 'Div',
    'divide': 'Div',
    'negative': 'Neg',
    'exp': 'Exp',
    'log': 'Log',
    'tanh': 'Tanh',
    'matmul': 'MatMul',
}


def _tape_stack() -> List['GradientTape']:
    stack = getattr(_tape_state, 'stack', None)
    if stack is None:
        stack = _tape_state.stack = []

    return stack


def active_tape() -> Optional['GradientTape']:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """
    Dense float64 array taking part in reverse-mode differentiation.

    Operations on tensors are recorded only while a GradientTape is active and at least one
    operand requires a gradient; outside a tape they are plain numpy evaluations.
    """

    def __init__(self, data, requires_grad: bool = False, name: str = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchException('Only single element tensors can be converted to scalars', self.shape)

        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def __repr__(self):
        label = f', name={self.name!r}' if self.name else ''
        return f'Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})'

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        primitive = _UFUNC_PRIMITIVES.get(ufunc.__name__)
        if primitive is not None and method == '__call__' and not kwargs:
            return getattr(_F, primitive).apply(*inputs)

        raise UnsupportedOperationException(
            f'Unsupported primitive in graph: numpy.{ufunc.__name__}.{method}. '
            f'Use the operations from rgbtcloak.diffgrad instead.'
        )

    def __array_function__(self, func, types, args, kwargs):
        raise UnsupportedOperationException(
            f'Unsupported primitive in graph: numpy.{func.__name__}. '
            f'Use the operations from rgbtcloak.diffgrad instead.'
        )

    def __add__(self, other):
        return _F.Add.apply(self, other)

    def __radd__(self, other):
        return _F.Add.apply(other, self)

    def __sub__(self, other):
        return _F.Sub.apply(self, other)

    def __rsub__(self, other):
        return _F.Sub.apply(other, self)

    def __mul__(self, other):
        return _F.Mul.apply(self, other)

    def __rmul__(self, other):
        return _F.Mul.apply(other, self)

    def __truediv__(self, other):
        return _F.Div.apply(self, other)

    def __rtruediv__(self, other):
        return _F.Div.apply(other, self)

    def __neg__(self):
        return _F.Neg.apply(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UnsupportedOperationException('Only constant exponents are supported by power')

        return _F.Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other):
        return _F.MatMul.apply(self, other)

    def __getitem__(self, index):
        return _F.GetItem.apply(self, index=index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> 'Tensor':
        return _F.Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> 'Tensor':
        return _F.Mean.apply(self, axis=axis, keepdims=keepdims)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> 'Tensor':
        return _F.Max.apply(self, axis=axis, keepdims=keepdims)

    def exp(self) -> 'Tensor':
        return _F.Exp.apply(self)

    def log(self) -> 'Tensor':
        return _F.Log.apply(self)

    def sigmoid(self) -> 'Tensor':
        return _F.Sigmoid.apply(self)

    def relu(self) -> 'Tensor':
        return _F.Relu.apply(self)

    def tanh(self) -> 'Tensor':
        return _F.Tanh.apply(self)

    def clip(self, low: float, high: float) -> 'Tensor':
        return _F.Clip.apply(self, low=low, high=high)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        return _F.Reshape.apply(self, shape=tuple(shape))

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])

        return _F.Transpose.apply(self, axes=tuple(axes) or None)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """
    Base class of the engine primitives.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the gradient of the
    output to one gradient (or None) per input.
    """

    name = 'function'

    def __init__(self, *inputs: Tensor):
        self.inputs = inputs
        self.output: Optional[Tensor] = None

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError()

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError()

    @classmethod
    def apply(cls, *operands: TensorLike, **kwargs: Any) -> Tensor:
        inputs = tuple(as_tensor(op) for op in operands)
        fn = cls(*inputs)
        out_data = fn.forward(*(t.data for t in inputs), **kwargs)

        if not np.all(np.isfinite(out_data)):
            raise NonFiniteValueException(f'Primitive "{cls.name}" produced non-finite values')

        tape = active_tape()
        requires_grad = tape is not None and any(t.requires_grad for t in inputs)
        out = Tensor(out_data, requires_grad=requires_grad)

        if requires_grad:
            fn.output = out
            tape.record(fn)

        return out

    @staticmethod
    def broadcast_shape(*shapes: Tuple[int, ...]) -> Tuple[int, ...]:
        try:
            return tuple(np.broadcast_shapes(*shapes))
        except ValueError:
            raise ShapeMismatchException('Operands could not be broadcast together', *shapes)

    @staticmethod
    def unbroadcast(grad: np.ndarray, to_shape: Tuple[int, ...]) -> np.ndarray:
        """
        Sum out broadcast dimensions so the gradient matches the operand shape.
        """
        if grad.shape == to_shape:
            return grad

        while grad.ndim > len(to_shape):
            grad = grad.sum(axis=0)

        for dim, size in enumerate(to_shape):
            if size == 1 and grad.shape[dim] != 1:
                grad = grad.sum(axis=dim, keepdims=True)

        return grad


class GradientTape:
    """
    Ordered record of primitive applications.

    Functions are appended in execution order, which is a topological order of the graph, so the
    backward pass replays the record in reverse and visits every node exactly once.
    A tape belongs to the thread which opened it.

    Example:

            >>> x = Tensor([1.0, 2.0], requires_grad=True)
            >>> with GradientTape() as tape:
            ...     y = (x * x).sum()
            >>> tape.gradient(y, [x])[0]
            array([2., 4.])

    """

    def __init__(self):
        self._nodes: List[Function] = []

    def __enter__(self) -> 'GradientTape':
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc_info):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def record(self, node: Function):
        self._nodes.append(node)

    def gradient(self, output: Tensor, leaves: Sequence[Tensor]) -> List[np.ndarray]:
        if output.size != 1:
            raise ShapeMismatchException('Gradient requires a scalar output', output.shape)

        grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}

        for node in reversed(self._nodes):
            out_grad = grads.pop(id(node.output), None)
            if out_grad is None:
                continue

            for tensor, input_grad in zip(node.inputs, node.backward(out_grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue

                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + input_grad
                else:
                    grads[key] = input_grad

        return [
            np.array(grads[id(leaf)], dtype=np.float64).reshape(leaf.shape) if id(leaf) in grads else np.zeros(leaf.shape)
            for leaf in leaves
        ]


# primitives reference Tensor/Function defined above
from rgbtcloak.diffgrad import functions as _F  # noqa: E402
