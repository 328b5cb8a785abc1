import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from rgbtcloak.attack.config import AttackConfig, AttackMethod
from rgbtcloak.attack.losses import RenderSetup, WeightedTargets, sample_scene, texture_loss
from rgbtcloak.attack.run import AttackRun, input_hash
from rgbtcloak.composer.dataset import benign_texture
from rgbtcloak.composer.types import RgbtImage
from rgbtcloak.detectors.objective import Target
from rgbtcloak.diffgrad.grad import GradMask, MaskMode, block_gradient, sgd_step, value_and_grad
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, NonFiniteValueException
from rgbtcloak.norp.pattern import (
    MaterialConstants, NorpParams, SrdMask, TextureTensors, binarize, clamp_params, hard_choice, mix_materials,
    realize_variables, sample_srd_mask
)
from rgbtcloak.utils.logging import should_log_progress
from rgbtcloak.utils.seeding import derive_rng

_log = logging.getLogger(__name__)

_LOGIT_EPS = 1e-6


@dataclass(frozen=True)
class IterationCapture:
    """
    What one optimizer iteration saw: its loss, the discretization mask (SDCO only) and the
    gradients actually applied to the colours and the material choice.
    """
    iteration: int
    loss: float
    mask: Optional[np.ndarray]
    rgb_grad: np.ndarray
    p_tilde_grad: np.ndarray


Observer = Callable[[IterationCapture], None]


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """
    Standard Gumbel samples for both material categories, shape + (2,).
    """
    uniform = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=tuple(shape) + (2,))
    return -np.log(-np.log(uniform))


def material_logits(p_tilde: Tensor) -> Tensor:
    """
    Log-probability gap between fabric and film for a relaxed choice.
    """
    p = p_tilde.clip(_LOGIT_EPS, 1.0 - _LOGIT_EPS)
    return p.log() - (1.0 - p).log()


def gumbel_softmax(logit_gap: Tensor, noise: np.ndarray, tau: float) -> Tensor:
    """
    Soft two-category Gumbel-Softmax sample; returns the fabric probability. For two categories
    the softmax reduces to a sigmoid of the perturbed logit gap over the temperature.
    """
    if tau <= 0:
        raise IllegalArgumentException(f'Gumbel temperature must be positive, got {tau}')

    return ((logit_gap + (noise[..., 0] - noise[..., 1])) / tau).sigmoid()


def straight_through(p_tilde: Tensor) -> Tensor:
    # forward value is the hard choice, gradient passes as if p were p_tilde
    return hard_choice(p_tilde.data) + (p_tilde - p_tilde.detach())


class _Strategy:
    uses_mask = False

    def draw(self, shape, rng: np.random.Generator):
        return None

    def realize(self, rgb: Tensor, p_tilde: Tensor, constants: MaterialConstants, draw) -> TextureTensors:
        raise NotImplementedError()


class _SdcoStrategy(_Strategy):
    uses_mask = True

    def __init__(self, alpha: float):
        self.alpha = alpha

    def draw(self, shape, rng):
        return sample_srd_mask(shape[1], shape[0], self.alpha, rng)

    def realize(self, rgb, p_tilde, constants, draw: SrdMask):
        return realize_variables(rgb, p_tilde, constants, draw)


class _ContinuousStrategy(_Strategy):
    def realize(self, rgb, p_tilde, constants, draw):
        return realize_variables(rgb, p_tilde, constants, None)


class _GumbelStrategy(_Strategy):
    def __init__(self, tau: float):
        self.tau = tau

    def draw(self, shape, rng):
        return gumbel_noise(shape, rng)

    def realize(self, rgb, p_tilde, constants, draw: np.ndarray):
        return mix_materials(gumbel_softmax(material_logits(p_tilde), draw, self.tau), rgb, constants)


class _SteStrategy(_Strategy):
    def realize(self, rgb, p_tilde, constants, draw):
        return mix_materials(straight_through(p_tilde), rgb, constants)


def _strategy(config: AttackConfig) -> _Strategy:
    if config.method in (AttackMethod.SDCO, AttackMethod.ENSEMBLE):
        return _SdcoStrategy(config.alpha)
    if config.method is AttackMethod.NO_SRD:
        return _ContinuousStrategy()
    if config.method is AttackMethod.GUMBEL:
        return _GumbelStrategy(config.gumbel_tau)
    if config.method is AttackMethod.STE:
        return _SteStrategy()

    raise IllegalArgumentException(f'Method {config.method.value} is not a gradient optimizer')


def _require_method(config: AttackConfig, *methods: AttackMethod):
    if config.method not in methods:
        raise IllegalArgumentException(
            f'Optimizer expects method {" or ".join(m.value for m in methods)}, got {config.method.value}'
        )


def _optimize(
    params0: NorpParams,
    constants: MaterialConstants,
    targets: Union[Target, WeightedTargets],
    backgrounds: Sequence[RgbtImage],
    config: AttackConfig,
    setup: RenderSetup,
    observer: Optional[Observer]
) -> AttackRun:
    if not backgrounds:
        raise IllegalArgumentException('Attack needs at least one background')

    started = time.perf_counter()
    strategy = _strategy(config)
    shape = params0.p_tilde.shape
    rgb = Tensor(params0.rgb.copy(), name='rgb')
    p_tilde = Tensor(params0.p_tilde.copy(), name='p_tilde')
    trace: List[float] = []

    _log.info(f' + {config.method.value}: {config.iterations} iterations, batch {config.batch}, eta {config.eta}')
    for iteration in range(1, config.iterations + 1):
        draw = strategy.draw(shape, derive_rng(config.seed, 'attack', 'draw', iteration))
        scenes = [
            sample_scene(backgrounds, setup, config.eot, derive_rng(config.seed, 'attack', 'scene', iteration, b))
            for b in range(config.batch)
        ]

        def objective(rgb_leaf: Tensor, p_leaf: Tensor) -> Tensor:
            texture = strategy.realize(rgb_leaf, p_leaf, constants, draw)
            total = None
            for b, scene in enumerate(scenes):
                # EOT is redrawn for every batch element
                eot_rng = derive_rng(config.seed, 'attack', 'eot', iteration, b)
                loss = texture_loss(targets, texture, scene, setup, config.eot, eot_rng, config.smooth_max_tau)
                total = loss if total is None else total + loss
            return total / float(config.batch)

        leaves = [Tensor(rgb.data, requires_grad=True, name='rgb'), Tensor(p_tilde.data, requires_grad=True, name='p_tilde')]
        try:
            loss, (rgb_grad, p_grad) = value_and_grad(objective, leaves)
        except NonFiniteValueException as e:
            raise NonFiniteValueException(str(e), iteration=iteration)
        if not np.isfinite(loss):
            raise NonFiniteValueException(f'{config.method.value} loss is not finite', iteration=iteration)

        if strategy.uses_mask:
            mask = GradMask(draw.values)
            rgb_grad = block_gradient(rgb_grad, mask.expand_channels(3), MaskMode.KEEP_WHERE_ONE)
            p_grad = block_gradient(p_grad, mask, MaskMode.KEEP_WHERE_ZERO)

        if observer is not None:
            observer(IterationCapture(
                iteration=iteration,
                loss=loss,
                mask=draw.values.copy() if strategy.uses_mask else None,
                rgb_grad=rgb_grad.data.copy(),
                p_tilde_grad=p_grad.data.copy()
            ))

        try:
            stepped = NorpParams(rgb=sgd_step(rgb, rgb_grad, config.eta).data, p_tilde=sgd_step(p_tilde, p_grad, config.eta).data)
        except NonFiniteValueException as e:
            raise NonFiniteValueException(str(e), iteration=iteration)
        clamped = clamp_params(stepped)
        rgb = Tensor(clamped.rgb, name='rgb')
        p_tilde = Tensor(clamped.p_tilde, name='p_tilde')
        trace.append(loss)

        if should_log_progress(iteration, config.iterations, config.log_every):
            _log.info(f' + {config.method.value} iteration {iteration}/{config.iterations}: loss {loss:.4f}')

    final = binarize(NorpParams(rgb=rgb.data, p_tilde=p_tilde.data))
    return AttackRun(
        params=final,
        loss_trace=trace,
        config=config,
        wall_clock=time.perf_counter() - started,
        input_hash=input_hash(params0, constants, config)
    )


def sdco_optimize(
    params0: NorpParams,
    constants: MaterialConstants,
    targets: Union[Target, WeightedTargets],
    scenes: Sequence[RgbtImage],
    config: AttackConfig,
    setup: RenderSetup,
    observer: Optional[Observer] = None
) -> AttackRun:
    """
    Spatial discrete-continuous optimization.

    Every iteration draws a fresh Bernoulli(alpha) mask. Masked cells use their binarized
    material and only their colour is trained; unmasked cells keep the relaxed material choice,
    which is the only thing trained there. The result is binarized at the end.
    """
    _require_method(config, AttackMethod.SDCO, AttackMethod.ENSEMBLE)
    return _optimize(params0, constants, targets, scenes, config, setup, observer)


def nosrd_optimize(params0, constants, targets, scenes, config: AttackConfig, setup: RenderSetup, observer: Optional[Observer] = None) -> AttackRun:
    _require_method(config, AttackMethod.NO_SRD)
    return _optimize(params0, constants, targets, scenes, config, setup, observer)


def gumbel_optimize(params0, constants, targets, scenes, config: AttackConfig, setup: RenderSetup, observer: Optional[Observer] = None) -> AttackRun:
    _require_method(config, AttackMethod.GUMBEL)
    return _optimize(params0, constants, targets, scenes, config, setup, observer)


def ste_optimize(params0, constants, targets, scenes, config: AttackConfig, setup: RenderSetup, observer: Optional[Observer] = None) -> AttackRun:
    _require_method(config, AttackMethod.STE)
    return _optimize(params0, constants, targets, scenes, config, setup, observer)


def random_pattern(width: int, height: int, constants: MaterialConstants, seed: int) -> NorpParams:
    """
    Unoptimized control: uniform colours and a fair coin per cell for the material.
    """
    if (height, width) != constants.shape:
        raise IllegalArgumentException(f'Pattern {width}x{height} does not match constants {constants.shape[1]}x{constants.shape[0]}')

    rng = derive_rng(seed, 'attack', 'random-pattern')
    rgb = rng.uniform(0.0, 1.0, size=(height, width, 3))
    p_tilde = (rng.random((height, width)) < 0.5).astype(np.float64)
    return NorpParams(rgb=rgb, p_tilde=p_tilde)


def clean_pattern(constants: MaterialConstants, seed: int, variety: int = 3) -> NorpParams:
    """
    Ordinary clothing control: all fabric, coloured like the detector training clothes.
    """
    texture = benign_texture(constants, derive_rng(seed, 'attack', 'clean-pattern'), variety)
    return NorpParams(rgb=texture.rgb, p_tilde=np.ones(constants.shape))


def random_run(params0: NorpParams, constants: MaterialConstants, config: AttackConfig) -> AttackRun:
    _require_method(config, AttackMethod.RANDOM)
    params = random_pattern(params0.width, params0.height, constants, config.seed)
    return AttackRun(params=params, loss_trace=[], config=config, wall_clock=0.0, input_hash=input_hash(params0, constants, config))


_OPTIMIZERS = {
    AttackMethod.SDCO: sdco_optimize,
    AttackMethod.ENSEMBLE: sdco_optimize,
    AttackMethod.NO_SRD: nosrd_optimize,
    AttackMethod.GUMBEL: gumbel_optimize,
    AttackMethod.STE: ste_optimize,
}


def optimize(
    params0: NorpParams,
    constants: MaterialConstants,
    targets: Union[Target, WeightedTargets],
    scenes: Sequence[RgbtImage],
    config: AttackConfig,
    setup: RenderSetup,
    observer: Optional[Observer] = None
) -> AttackRun:
    if config.method is AttackMethod.RANDOM:
        return random_run(params0, constants, config)

    return _OPTIMIZERS[config.method](params0, constants, targets, scenes, config, setup, observer)
