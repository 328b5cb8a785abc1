"""
Miniature scenes, patterns and detectors shared by the tests.

Everything is built from fixed seeds and cached, so a test module pays for training a tiny
detector once at most.
"""
from functools import lru_cache
from typing import Tuple

import numpy as np

from rgbtcloak.attack.losses import RenderSetup
from rgbtcloak.composer.backgrounds import gen_backgrounds
from rgbtcloak.composer.dataset import DatasetSample, gen_detector_dataset
from rgbtcloak.composer.render import CameraModel
from rgbtcloak.composer.types import EotConfig, RgbtImage
from rgbtcloak.composer.uvmap import build_uv_maps
from rgbtcloak.detectors.model import DetectorModel, FusionArch, build
from rgbtcloak.detectors.training import TrainConfig, train
from rgbtcloak.evaluation.metrics import EvalConfig
from rgbtcloak.norp.pattern import MaterialConstants, default_constants

FRAME_SIZE = 64
TEXTURE_WIDTH = 8
TEXTURE_HEIGHT = 6
SPRITE_SIZE = (32, 16)
DETECTOR_WIDTH = 2

TINY_EVAL = EvalConfig(angles=(0.0, 90.0), distances=(2.5, 5.0), n_backgrounds=1)


def tiny_constants(seed: int = 0) -> MaterialConstants:
    return default_constants(TEXTURE_WIDTH, TEXTURE_HEIGHT, seed)


@lru_cache(maxsize=None)
def tiny_setup() -> RenderSetup:
    uv_maps = tuple(build_uv_maps(TEXTURE_WIDTH, TEXTURE_HEIGHT, 4, sprite_size=SPRITE_SIZE, seed=0))
    return RenderSetup(uv_maps=uv_maps, camera=CameraModel(reference_height_px=32.0))


@lru_cache(maxsize=None)
def tiny_backgrounds(n: int = 2, seed: int = 0) -> Tuple[RgbtImage, ...]:
    return tuple(gen_backgrounds(n, FRAME_SIZE, FRAME_SIZE, seed))


def flat_background(rgb: float = 0.5, thermal: float = 0.5) -> RgbtImage:
    return RgbtImage(rgb=np.full((FRAME_SIZE, FRAME_SIZE, 3), rgb), thermal=np.full((FRAME_SIZE, FRAME_SIZE), thermal))


@lru_cache(maxsize=None)
def tiny_dataset(n_scenes: int = 12, seed: int = 0) -> Tuple[DatasetSample, ...]:
    setup = tiny_setup()
    return tuple(gen_detector_dataset(
        tiny_backgrounds(),
        n_scenes=n_scenes,
        positive_fraction=0.5,
        clothing_variety=2,
        seed=seed,
        uv_maps=setup.uv_maps,
        constants=tiny_constants(),
        appearance=setup.appearance,
        camera=setup.camera,
        eot=EotConfig()
    ))


@lru_cache(maxsize=None)
def untrained_model(arch: FusionArch, seed: int = 0) -> DetectorModel:
    return build(arch, seed, width=DETECTOR_WIDTH)


@lru_cache(maxsize=None)
def trained_model(arch: FusionArch, epochs: int = 1) -> DetectorModel:
    return train(arch, tiny_dataset(), epochs=epochs, lr=0.01, seed=0, config=TrainConfig(batch=4, width=DETECTOR_WIDTH, log_every=1))
