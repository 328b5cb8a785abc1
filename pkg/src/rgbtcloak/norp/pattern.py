import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from rgbtcloak.diffgrad.ops import concat
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.utils.imaging import smooth_noise
from rgbtcloak.utils.seeding import derive_rng

# value exactly at the threshold is fabric
BINARIZATION_THRESHOLD = 0.5


class InitStrategy(enum.Enum):
    UNIFORM_RANDOM = 'uniform-random'
    MID_GRAY = 'mid-gray'


@dataclass(frozen=True)
class NorpParams:
    """
    Learnable variables of the pattern: printable colour and relaxed material choice per cell.

    `p_tilde` = 1 means printed fabric, 0 means aluminium film.
    """
    rgb: np.ndarray
    p_tilde: np.ndarray

    def __post_init__(self):
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.shape[:2] != self.p_tilde.shape:
            raise ShapeMismatchException('Pattern rgb must be [height, width, 3] and match p_tilde', self.rgb.shape, self.p_tilde.shape)

    @property
    def height(self) -> int:
        return self.p_tilde.shape[0]

    @property
    def width(self) -> int:
        return self.p_tilde.shape[1]

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def is_binarized(self) -> bool:
        return bool(np.all((self.p_tilde == 0.0) | (self.p_tilde == 1.0)))

    def as_leaves(self) -> Tuple[Tensor, Tensor]:
        return (
            Tensor(self.rgb.copy(), requires_grad=True, name='rgb'),
            Tensor(self.p_tilde.copy(), requires_grad=True, name='p_tilde'),
        )

    @staticmethod
    def from_leaves(rgb: Tensor, p_tilde: Tensor) -> 'NorpParams':
        return NorpParams(rgb=rgb.data.copy(), p_tilde=p_tilde.data.copy())

    def __eq__(self, other):
        return isinstance(other, NorpParams) and np.array_equal(self.rgb, other.rgb) and np.array_equal(self.p_tilde, other.p_tilde)


@dataclass(frozen=True)
class MaterialConstants:
    film_rgb: np.ndarray
    film_thermal: float
    body_thermal: np.ndarray

    def __post_init__(self):
        if np.shape(self.film_rgb) != (3,):
            raise ShapeMismatchException('Film colour must have 3 channels', np.shape(self.film_rgb))

        values = np.concatenate([np.ravel(self.film_rgb), [self.film_thermal], np.ravel(self.body_thermal)])
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise IllegalArgumentException('Material constants must lie in [0, 1]')

        if not self.film_thermal < np.min(self.body_thermal):
            raise IllegalArgumentException(
                f'Film must read colder than the body: film {self.film_thermal} >= body min {np.min(self.body_thermal)}'
            )

    @property
    def shape(self) -> Tuple[int, int]:
        return self.body_thermal.shape

    def __eq__(self, other):
        return (
            isinstance(other, MaterialConstants)
            and np.array_equal(self.film_rgb, other.film_rgb)
            and self.film_thermal == other.film_thermal
            and np.array_equal(self.body_thermal, other.body_thermal)
        )


def default_constants(
    width: int,
    height: int,
    seed: int,
    film_rgb: Sequence[float] = (0.75, 0.75, 0.75),
    film_thermal: float = 0.10,
    body_level: float = 0.85,
    body_noise: float = 0.05
) -> MaterialConstants:
    """
    Stand-in measured constants: matte metallic grey film and a body thermal texture of
    `body_level` with smooth spatial variation of +/- `body_noise`.
    """
    _check_grid(width, height)
    noise = smooth_noise((height, width), derive_rng(seed, 'norp', 'body-thermal'))
    return MaterialConstants(
        film_rgb=np.asarray(film_rgb, dtype=np.float64),
        film_thermal=float(film_thermal),
        body_thermal=np.clip(body_level + body_noise * noise, 0.0, 1.0)
    )


@dataclass(frozen=True)
class NorpTexture:
    rgb: np.ndarray
    thermal: np.ndarray


class TextureTensors(NamedTuple):
    rgb: Tensor
    thermal: Tensor

    def stacked(self) -> Tensor:
        """
        [height, width, 4] texture: rgb channels followed by thermal.
        """
        h, w = self.thermal.shape
        return concat([self.rgb, self.thermal.reshape(h, w, 1)], axis=2)


@dataclass(frozen=True)
class SrdMask:
    values: np.ndarray
    alpha: float


def _check_grid(width: int, height: int):
    if width < 1 or height < 1:
        raise IllegalArgumentException(f'Pattern grid must be at least 1x1, got {width}x{height}')


def init_params(width: int, height: int, seed: int, strategy: InitStrategy = InitStrategy.UNIFORM_RANDOM) -> NorpParams:
    _check_grid(width, height)

    if strategy is InitStrategy.MID_GRAY:
        return NorpParams(rgb=np.full((height, width, 3), 0.5), p_tilde=np.full((height, width), 0.5))

    rng = derive_rng(seed, 'norp', 'init')
    return NorpParams(rgb=rng.uniform(0.0, 1.0, size=(height, width, 3)), p_tilde=rng.uniform(0.0, 1.0, size=(height, width)))


def undecided_params(width: int, height: int, seed: int) -> NorpParams:
    """
    Default starting point: uniform random colours with every material choice at 0.5.
    """
    params = init_params(width, height, seed, InitStrategy.UNIFORM_RANDOM)
    return NorpParams(rgb=params.rgb, p_tilde=np.full((height, width), 0.5))


def sample_srd_mask(width: int, height: int, alpha: float, rng: np.random.Generator) -> SrdMask:
    if not 0.0 <= alpha <= 1.0:
        raise IllegalArgumentException(f'Discretization probability must be in [0, 1], got {alpha}')

    return SrdMask(values=(rng.random((height, width)) < alpha).astype(np.uint8), alpha=alpha)


def hard_choice(p_tilde: np.ndarray) -> np.ndarray:
    return (p_tilde >= BINARIZATION_THRESHOLD).astype(np.float64)


def _check_shapes(rgb_shape, p_shape, constants: MaterialConstants, mask: Optional[SrdMask]):
    if tuple(p_shape) != constants.shape or tuple(rgb_shape[:2]) != constants.shape:
        raise ShapeMismatchException('Pattern and material constants differ', p_shape, constants.shape)
    if mask is not None and mask.values.shape != tuple(p_shape):
        raise ShapeMismatchException('Pattern and discretization mask differ', p_shape, mask.values.shape)


def mix_materials(p: Tensor, rgb: Tensor, constants: MaterialConstants) -> TextureTensors:
    """
    Per cell: p * [rgb, body] + (1 - p) * [film rgb, film thermal].
    """
    h, w = p.shape
    p_channels = p.reshape(h, w, 1)
    return TextureTensors(
        rgb=p_channels * rgb + (1.0 - p_channels) * constants.film_rgb,
        thermal=p * constants.body_thermal + (1.0 - p) * constants.film_thermal
    )


def realize_variables(rgb: Tensor, p_tilde: Tensor, constants: MaterialConstants, mask: Optional[SrdMask] = None) -> TextureTensors:
    """
    Differentiable realization of the pattern.

    Without a mask every cell uses the relaxed choice. With a mask, cells where it is 1 use the
    discretized choice and pass gradients only to their colour, while the remaining cells keep
    the relaxed choice and pass gradients only to it.
    """
    _check_shapes(rgb.shape, p_tilde.shape, constants, mask)

    if mask is None:
        return mix_materials(p_tilde, rgb, constants)

    discrete = mask.values.astype(np.float64)
    discrete_channels = discrete[..., None]
    p = discrete * hard_choice(p_tilde.data) + (1.0 - discrete) * p_tilde
    colour = discrete_channels * rgb + (1.0 - discrete_channels) * rgb.detach()
    return mix_materials(p, colour, constants)


def realize(params: NorpParams, constants: MaterialConstants, mask: Optional[SrdMask] = None) -> NorpTexture:
    texture = realize_variables(Tensor(params.rgb), Tensor(params.p_tilde), constants, mask)
    return NorpTexture(rgb=texture.rgb.data, thermal=texture.thermal.data)


def realize_overlapping(params: NorpParams, constants: MaterialConstants, film_transmittance: float = 0.35) -> NorpTexture:
    """
    Overlapping variant: colour is printed everywhere and film cells see it through the film.
    """
    if not 0.0 <= film_transmittance <= 1.0:
        raise IllegalArgumentException(f'Film transmittance must be in [0, 1], got {film_transmittance}')

    _check_shapes(params.rgb.shape, params.p_tilde.shape, constants, None)
    p = params.p_tilde[..., None]
    seen_through_film = film_transmittance * params.rgb + (1.0 - film_transmittance) * constants.film_rgb
    return NorpTexture(
        rgb=p * params.rgb + (1.0 - p) * seen_through_film,
        thermal=params.p_tilde * constants.body_thermal + (1.0 - params.p_tilde) * constants.film_thermal
    )


def binarize(params: NorpParams) -> NorpParams:
    return NorpParams(rgb=params.rgb, p_tilde=hard_choice(params.p_tilde))


def clamp_params(params: NorpParams) -> NorpParams:
    return NorpParams(rgb=np.clip(params.rgb, 0.0, 1.0), p_tilde=np.clip(params.p_tilde, 0.0, 1.0))


def film_area_fraction(params: NorpParams) -> float:
    return float(np.mean(hard_choice(params.p_tilde) == 0.0))
