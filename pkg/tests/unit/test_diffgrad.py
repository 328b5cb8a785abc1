import threading

import numpy as np

from common.extended_test_case import ExtendedTestCase
from rgbtcloak.diffgrad.grad import GradMask, MaskMode, block_gradient, finite_difference_check, sgd_step, value_and_grad
from rgbtcloak.diffgrad.ops import bilinear_sample, clip, concat, conv2d, exp, log, logsumexp, max_pool2d, relu, sigmoid, tanh
from rgbtcloak.diffgrad.tensor import GradientTape, Tensor, active_tape
from rgbtcloak.exception import IllegalArgumentException, NonFiniteValueException, ShapeMismatchException, UnsupportedOperationException


def _leaf(rng, shape, low=0.5, high=1.5, name=None):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True, name=name)


def _weighted(out: Tensor, rng) -> Tensor:
    # fixed random weights keep every output entry in play
    return (out * rng.uniform(0.5, 1.5, size=out.shape)).sum()


def _elementwise(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    weights = rng.uniform(0.5, 1.5, size=(3, 4))
    return (lambda x, y: ((x * y + x / y - y) * weights).sum()), [a, b]


def _smooth_unary(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    weights = rng.uniform(0.5, 1.5, size=(3, 4))
    return (lambda x, y: (exp(tanh(x)) * sigmoid(y - 1.0) * weights).sum()), [a, b]


def _log_power_relu(rng):
    a = _leaf(rng, (2, 5))
    weights = rng.uniform(0.5, 1.5, size=(2, 5))
    return (lambda x: ((log(x) ** 2 + relu(x - 1.0) - (-x)) * weights).sum()), [a]


def _clip_product(rng):
    a, b = _leaf(rng, (3, 3)), _leaf(rng, (3, 3))
    weights = rng.uniform(0.5, 1.5, size=(3, 3))
    return (lambda x, y: (clip(x * y, 0.4, 1.2) * weights).sum()), [a, b]


def _matmul_max(rng):
    a, w = _leaf(rng, (3, 4)), _leaf(rng, (4, 2))
    weights = rng.uniform(0.5, 1.5, size=3)
    return (lambda x, y: ((x @ y).max(axis=1) * weights).sum()), [a, w]


def _shape_ops(rng):
    a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 3))
    weights = rng.uniform(0.5, 1.5, size=4)
    return (lambda x, y: (concat([x, y], axis=0).reshape(6, 2).transpose().mean(axis=0)[1:5] * weights).sum()), [a, b]


def _slicing(rng):
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    weights = rng.uniform(0.5, 1.5, size=(2, 2))
    return (lambda x, y: (x[1:, ::2] * y[:2, 1:3] * weights).sum()), [a, b]


def _conv_pool(rng):
    x, k = _leaf(rng, (1, 2, 6, 6), -1.0, 1.0), _leaf(rng, (3, 2, 3, 3), -0.5, 0.5)
    weights = rng.uniform(0.5, 1.5, size=(1, 3, 3, 3))
    return (lambda image, kernel: (max_pool2d(sigmoid(conv2d(image, kernel, padding=1)), 2) * weights).sum()), [x, k]


def _strided_conv(rng):
    x, k = _leaf(rng, (1, 1, 7, 7), -1.0, 1.0), _leaf(rng, (2, 1, 3, 3), -0.5, 0.5)
    weights = rng.uniform(0.5, 1.5, size=(1, 2, 3, 3))
    return (lambda image, kernel: (tanh(conv2d(image, kernel, stride=2)) * weights).sum()), [x, k]


def _sampling(rng):
    image = _leaf(rng, (4, 5, 2))
    ys = rng.uniform(-0.5, 3.5, size=(3, 3))
    xs = rng.uniform(-0.5, 4.5, size=(3, 3))
    weights = rng.uniform(0.5, 1.5, size=(3, 3, 2))
    return (lambda img: (bilinear_sample(img, ys, xs) * weights).sum()), [image]


def _smooth_max(rng):
    a = _leaf(rng, (3, 5), -1.0, 1.0)
    weights = rng.uniform(0.5, 1.5, size=3)
    return (lambda x: (logsumexp(x / 0.05, axis=1) * 0.05 * weights).sum() + logsumexp(x)), [a]


_GRAPH_FAMILIES = [
    _elementwise, _smooth_unary, _log_power_relu, _clip_product, _matmul_max,
    _shape_ops, _slicing, _conv_pool, _strided_conv, _sampling, _smooth_max,
]


class TestDiffGrad(ExtendedTestCase):

    def test_gradients_should_match_finite_differences_on_random_graphs(self):
        cases = 0
        for seed in range(10):
            for family in _GRAPH_FAMILIES:
                objective, leaves = family(np.random.default_rng(seed))
                error = finite_difference_check(objective, leaves)
                self.assertLess(error, 1e-4, f'{family.__name__} with seed {seed}')
                cases += 1

        self.assertGreaterEqual(cases, 100)

    def test_value_and_grad_should_return_value_and_gradient_of_square(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True, name='x')

        value, (grad,) = value_and_grad(lambda t: (t * t).sum(), [x])

        self.assertAlmostEqual(14.0, value)
        self.assertArrayAlmostEqual([2.0, 4.0, 6.0], grad.data)
        self.assertEqual('x', grad.name)

    def test_value_and_grad_should_return_none_for_constant_leaves(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = Tensor([3.0, 4.0])

        _, (grad_x, grad_c) = value_and_grad(lambda a, b: (a * b).sum(), [x, c])

        self.assertArrayAlmostEqual([3.0, 4.0], grad_x.data)
        self.assertIsNone(grad_c)

    def test_value_and_grad_should_accumulate_gradient_of_reused_node(self):
        x = Tensor(2.0, requires_grad=True)

        _, (grad,) = value_and_grad(lambda t: t * t * t + t, [x])

        self.assertAlmostEqual(13.0, grad.item())

    def test_value_and_grad_should_reject_non_scalar_objective(self):
        x = Tensor([1.0, 2.0], requires_grad=True)

        with self.assertRaises(ShapeMismatchException):
            value_and_grad(lambda t: t * 2.0, [x])

    def test_unreachable_leaf_should_get_zero_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([5.0], requires_grad=True)

        _, (grad_x, grad_y) = value_and_grad(lambda a, b: a.sum(), [x, y])

        self.assertArrayEqual([1.0, 1.0], grad_x.data)
        self.assertArrayEqual([0.0], grad_y.data)

    def test_broadcast_gradient_should_be_summed_to_operand_shape(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)

        _, (grad_x, grad_b) = value_and_grad(lambda a, c: (a * c).sum(), [x, b])

        self.assertArrayEqual(np.tile([1.0, 2.0, 3.0], (2, 1)), grad_x.data)
        self.assertArrayEqual([2.0, 2.0, 2.0], grad_b.data)

    def test_numpy_operands_should_dispatch_to_engine(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        weights = np.array([3.0, 5.0])

        value, (grad,) = value_and_grad(lambda t: (weights * t).sum(), [x])

        self.assertAlmostEqual(13.0, value)
        self.assertArrayEqual([3.0, 5.0], grad.data)

    def test_unsupported_numpy_function_should_raise_naming_the_primitive(self):
        x = Tensor([1.0, 4.0])

        with self.assertRaisesRegex(UnsupportedOperationException, 'sqrt'):
            np.sqrt(x)

        with self.assertRaisesRegex(UnsupportedOperationException, 'sort'):
            np.sort(x)

    def test_log_of_zero_should_raise_non_finite(self):
        with self.assertRaises(NonFiniteValueException):
            log(Tensor([0.0, 1.0]))

    def test_shape_mismatch_should_report_both_shapes(self):
        with self.assertRaises(ShapeMismatchException) as ctx:
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4, 5)))

        self.assertEqual([(2, 3), (4, 5)], ctx.exception.shapes)

    def test_sigmoid_should_not_overflow_on_large_inputs(self):
        out = sigmoid(Tensor([-1000.0, 0.0, 1000.0]))

        self.assertArrayAlmostEqual([0.0, 0.5, 1.0], out.data)

    def test_conv2d_should_match_direct_sum(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 2, 4, 4))
        k = rng.normal(size=(1, 2, 3, 3))

        out = conv2d(Tensor(x), Tensor(k)).data

        expected = np.zeros((1, 1, 2, 2))
        for i in range(2):
            for j in range(2):
                expected[0, 0, i, j] = np.sum(x[0, :, i:i + 3, j:j + 3] * k[0])
        self.assertArrayAlmostEqual(expected, out, atol=1e-12)

    def test_max_pool_should_route_gradient_to_window_maximum(self):
        x = Tensor(np.array([[[[1.0, 4.0], [2.0, 3.0]]]]), requires_grad=True)

        value, (grad,) = value_and_grad(lambda t: max_pool2d(t, 2).sum(), [x])

        self.assertEqual(4.0, value)
        self.assertArrayEqual([[[[0.0, 1.0], [0.0, 0.0]]]], grad.data)

    def test_bilinear_sample_should_interpolate_between_pixels(self):
        image = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]]))

        out = bilinear_sample(image, np.array([0.5, 0.0]), np.array([0.5, 1.0]))

        self.assertArrayAlmostEqual([1.5, 1.0], out.data)

    def test_logsumexp_should_be_stable_for_large_inputs(self):
        out = logsumexp(Tensor([1000.0, 1000.0]))

        self.assertAlmostEqual(1000.0 + np.log(2.0), out.item())

    def test_operations_outside_tape_should_not_record(self):
        x = Tensor([1.0], requires_grad=True)

        y = x * 2.0

        self.assertFalse(y.requires_grad)
        self.assertIsNone(active_tape())

    def test_tape_should_be_local_to_thread(self):
        seen = []

        with GradientTape():
            worker = threading.Thread(target=lambda: seen.append(active_tape()))
            worker.start()
            worker.join()

        self.assertEqual([None], seen)

    def test_block_gradient_should_zero_selected_entries(self):
        grad = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        mask = GradMask(np.array([[1.0, 0.0], [0.0, 1.0]]))

        kept_ones = block_gradient(grad, mask, MaskMode.KEEP_WHERE_ONE)
        kept_zeros = block_gradient(grad, mask, MaskMode.KEEP_WHERE_ZERO)

        self.assertArrayEqual([[1.0, 0.0], [0.0, 4.0]], kept_ones.data)
        self.assertArrayEqual([[0.0, 2.0], [3.0, 0.0]], kept_zeros.data)

    def test_block_gradient_should_reject_mismatched_mask(self):
        with self.assertRaises(ShapeMismatchException):
            block_gradient(Tensor(np.ones((2, 2))), GradMask(np.ones((3, 3))), MaskMode.KEEP_WHERE_ONE)

    def test_grad_mask_should_reject_non_binary_values(self):
        with self.assertRaises(IllegalArgumentException):
            GradMask(np.array([0.0, 0.5]))

    def test_expand_channels_should_repeat_mask_per_channel(self):
        mask = GradMask(np.array([[1.0, 0.0]])).expand_channels(3)

        self.assertEqual((1, 2, 3), mask.shape)
        self.assertArrayEqual([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]], mask.values)

    def test_sgd_step_should_move_against_gradient(self):
        leaf = Tensor([1.0, 2.0], name='w')

        stepped = sgd_step(leaf, Tensor([0.5, -1.0]), 0.1)

        self.assertArrayAlmostEqual([0.95, 2.1], stepped.data)
        self.assertEqual('w', stepped.name)

    def test_sgd_step_should_reject_non_finite_gradient(self):
        with self.assertRaisesRegex(NonFiniteValueException, 'w'):
            sgd_step(Tensor([1.0], name='w'), Tensor([np.nan]), 0.1)

    def test_sgd_step_should_reject_non_positive_step(self):
        with self.assertRaises(IllegalArgumentException):
            sgd_step(Tensor([1.0]), Tensor([1.0]), 0.0)
