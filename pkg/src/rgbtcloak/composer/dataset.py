import json
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rgbtcloak.composer.eot import eot_transform
from rgbtcloak.composer.paste import paste
from rgbtcloak.composer.render import CameraModel, render_person, sprite_geometry
from rgbtcloak.composer.types import Box, EotConfig, MAX_DISTANCE_M, MIN_DISTANCE_M, PersonAppearance, Placement, RgbtImage
from rgbtcloak.composer.uvmap import UvMap
from rgbtcloak.exception import IllegalArgumentException, ModelFormatException
from rgbtcloak.norp.pattern import MaterialConstants, NorpTexture
from rgbtcloak.utils.filesystem import ensure_dir, read_file, write_to_file
from rgbtcloak.utils.imaging import read_gray_png, read_rgb_png, write_gray16_png, write_rgb_png
from rgbtcloak.utils.parallel import parallel_map
from rgbtcloak.utils.seeding import derive_rng, derive_seed

_log = logging.getLogger(__name__)

INDEX_FILE = 'index.json'
INDEX_VERSION = 1


@dataclass(frozen=True)
class DatasetSample:
    scene_id: int
    image: RgbtImage
    label: bool
    gt_box: Optional[Box]
    placement: Optional[Placement]
    seed: int

    def index_entry(self) -> dict:
        return {
            'scene_id': self.scene_id,
            'label': self.label,
            'gt_box': self.gt_box.as_list() if self.gt_box else None,
            'placement': self.placement.as_dict() if self.placement else None,
            'seed': self.seed,
        }


def benign_texture(constants: MaterialConstants, rng: np.random.Generator, variety: int = 3) -> NorpTexture:
    """
    Ordinary all-fabric clothing: `variety` horizontal colour blocks with mild per-cell noise.
    """
    height, width = constants.shape
    block_colours = rng.uniform(0.0, 1.0, size=(max(1, variety), 3))
    block_of_row = np.minimum((np.arange(height) * len(block_colours)) // height, len(block_colours) - 1)
    rgb = block_colours[block_of_row][:, None, :] + rng.normal(0.0, 0.03, size=(height, width, 3))
    return NorpTexture(rgb=np.clip(rgb, 0.0, 1.0), thermal=constants.body_thermal.copy())


def random_placement(
    rng: np.random.Generator,
    uv_maps: Sequence[UvMap],
    frame_size: Tuple[int, int],
    camera: CameraModel,
    eot: EotConfig,
    distance_range: Tuple[float, float] = (MIN_DISTANCE_M, MAX_DISTANCE_M)
) -> Tuple[UvMap, Placement]:
    """
    Draws a view and a centre that keeps the person inside the frame under any EOT draw.
    """
    frame_h, frame_w = frame_size
    uv = uv_maps[int(rng.integers(len(uv_maps)))]
    distance = float(rng.uniform(*distance_range))
    rows, cols = sprite_geometry(uv, distance, camera)

    margin_y = eot.translate_px + 1 + eot.scale * len(rows) / 2.0
    margin_x = eot.translate_px + 1 + eot.scale * len(cols) / 2.0
    low_x, high_x = len(cols) / 2.0 + margin_x, frame_w - len(cols) / 2.0 - margin_x
    low_y, high_y = len(rows) / 2.0 + margin_y, frame_h - len(rows) / 2.0 - margin_y
    if low_x > high_x or low_y > high_y:
        raise IllegalArgumentException(
            f'Person at {distance:.2f} m ({len(rows)}x{len(cols)} px) does not fit a {frame_w}x{frame_h} frame'
        )

    placement = Placement(
        center_x=float(rng.uniform(low_x, high_x)),
        center_y=float(rng.uniform(low_y, high_y)),
        distance=distance,
        angle=uv.angle_deg
    )
    return uv, placement


def _positive_sample(scene_id, background, constants, appearance, uv_maps, camera, eot, clothing_variety, seed) -> DatasetSample:
    rng = derive_rng(seed, 'dataset', 'scene', scene_id)
    uv, placement = random_placement(rng, uv_maps, (background.height, background.width), camera, eot)
    texture = benign_texture(constants, rng, clothing_variety)

    sprite = eot_transform(render_person(texture, appearance, uv, placement.distance, camera), eot, rng)
    composite = paste(sprite, background, placement)
    return DatasetSample(
        scene_id=scene_id,
        image=composite.image.to_image(),
        label=True,
        gt_box=composite.box,
        placement=placement,
        seed=derive_seed(seed, 'dataset', 'scene', scene_id)
    )


def gen_detector_dataset(
    backgrounds: Sequence[RgbtImage],
    n_scenes: int,
    positive_fraction: float,
    clothing_variety: int,
    seed: int,
    uv_maps: Sequence[UvMap],
    constants: MaterialConstants,
    appearance: PersonAppearance = PersonAppearance(),
    camera: CameraModel = CameraModel(),
    eot: EotConfig = EotConfig(),
    workers: int = 1
) -> List[DatasetSample]:
    """
    Detector training corpus: exactly round(n * positive_fraction) scenes show one person in
    benign clothing, the rest are bare backgrounds. Ground truth boxes are tight to the
    pasted alpha mask.
    """
    if not 0.0 < positive_fraction < 1.0:
        raise IllegalArgumentException(f'Positive fraction must be in (0, 1), got {positive_fraction}')
    if not backgrounds:
        raise IllegalArgumentException('At least one background is required')

    n_positive = int(np.floor(n_scenes * positive_fraction + 0.5))
    labels = np.array([True] * n_positive + [False] * (n_scenes - n_positive))
    labels = labels[derive_rng(seed, 'dataset', 'labels').permutation(n_scenes)]
    background_rng = derive_rng(seed, 'dataset', 'backgrounds')
    background_ids = background_rng.integers(len(backgrounds), size=n_scenes)

    def make(scene_id: int) -> DatasetSample:
        background = backgrounds[int(background_ids[scene_id])]
        if labels[scene_id]:
            return _positive_sample(scene_id, background, constants, appearance, uv_maps, camera, eot, clothing_variety, seed)

        return DatasetSample(scene_id, background, False, None, None, derive_seed(seed, 'dataset', 'scene', scene_id))

    samples = parallel_map(make, range(n_scenes), workers)
    _log.info(f' + Generated {n_scenes} scenes ({n_positive} with a person)')
    return samples


def _image_names(scene_id: int) -> Tuple[str, str]:
    return f'scene_{scene_id:05d}_rgb.png', f'scene_{scene_id:05d}_thm.png'


def save_dataset(samples: Sequence[DatasetSample], directory: str) -> str:
    ensure_dir(directory)
    entries = []
    for sample in samples:
        rgb_name, thermal_name = _image_names(sample.scene_id)
        write_rgb_png(os.path.join(directory, rgb_name), sample.image.rgb)
        write_gray16_png(os.path.join(directory, thermal_name), sample.image.thermal)
        entries.append(dict(sample.index_entry(), rgb=rgb_name, thermal=thermal_name))

    index_path = os.path.join(directory, INDEX_FILE)
    write_to_file(index_path, json.dumps({'format_version': INDEX_VERSION, 'scenes': entries}, indent=2, sort_keys=True))
    return index_path


def load_dataset(directory: str) -> List[DatasetSample]:
    index_path = os.path.join(directory, INDEX_FILE)
    if not os.path.isfile(index_path):
        raise ModelFormatException(f'Dataset index not found: {index_path}')

    index = json.loads(read_file(index_path))
    if index.get('format_version') != INDEX_VERSION:
        raise ModelFormatException(f'Unsupported dataset index version {index.get("format_version")}: {index_path}')

    samples = []
    for entry in index['scenes']:
        image = RgbtImage(
            rgb=read_rgb_png(os.path.join(directory, entry['rgb'])),
            thermal=read_gray_png(os.path.join(directory, entry['thermal']))
        )
        samples.append(DatasetSample(
            scene_id=int(entry['scene_id']),
            image=image,
            label=bool(entry['label']),
            gt_box=Box.from_list(entry['gt_box']) if entry['gt_box'] else None,
            placement=Placement.from_dict(entry['placement']) if entry['placement'] else None,
            seed=int(entry['seed'])
        ))

    return samples
