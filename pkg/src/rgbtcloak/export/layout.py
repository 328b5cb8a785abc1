import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from rgbtcloak.exception import IllegalArgumentException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, hard_choice
from rgbtcloak.utils.filesystem import ensure_dir, write_to_file
from rgbtcloak.utils.imaging import read_bitmap_png, to_uint8, write_bitmap_png

_log = logging.getLogger(__name__)

PRINT_FILE = 'print.png'
FILM_MASK_FILE = 'film_mask.png'
MANIFEST_FILE = 'manifest.json'

DEFAULT_DOTS_PER_CELL = 40
DEFAULT_CELL_SIZE_MM = 25.0
FILM_THICKNESS_MM = 0.1
GLYPH_INSET = 0.1
_SUPERSAMPLE = 4
_INK_RGB = np.zeros(3)


@dataclass(frozen=True)
class PrintLayout:
    print_rgb: np.ndarray
    film_mask: np.ndarray
    cell_size_mm: float
    manifest: dict


def x_glyph(dots_per_cell: int) -> np.ndarray:
    """
    Coverage in [0, 1] of an anti-aliased "X" spanning the cell with a 10% inset on each side.
    """
    size = dots_per_cell * _SUPERSAMPLE
    inset = GLYPH_INSET * size
    stroke = max(_SUPERSAMPLE, int(round(size * 0.06)))

    canvas = Image.new('L', (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    draw.line([(inset, inset), (size - 1 - inset, size - 1 - inset)], fill=255, width=stroke)
    draw.line([(inset, size - 1 - inset), (size - 1 - inset, inset)], fill=255, width=stroke)
    coverage = canvas.resize((dots_per_cell, dots_per_cell), Image.BOX)
    return np.asarray(coverage, dtype=np.float64) / 255.0


def build_layout(
    params: NorpParams,
    constants: MaterialConstants,
    dots_per_cell: int = DEFAULT_DOTS_PER_CELL,
    cell_size_mm: float = DEFAULT_CELL_SIZE_MM,
    source_hash: Optional[str] = None
) -> PrintLayout:
    if not params.is_binarized():
        raise IllegalArgumentException('Pattern holds undecided cells, binarize before export')
    if dots_per_cell < 1:
        raise IllegalArgumentException(f'Dots per cell must be positive, got {dots_per_cell}')
    if cell_size_mm <= 0:
        raise IllegalArgumentException(f'Cell size must be positive, got {cell_size_mm}')

    film = hard_choice(params.p_tilde) == 0.0
    cell_rgb = np.where(film[..., None], constants.film_rgb, params.rgb)
    print_rgb = np.repeat(np.repeat(cell_rgb, dots_per_cell, axis=0), dots_per_cell, axis=1)

    if film.any():
        glyph = x_glyph(dots_per_cell)[..., None]
        film_cell = constants.film_rgb * (1.0 - glyph) + _INK_RGB * glyph
        for row, col in zip(*np.nonzero(film)):
            y, x = row * dots_per_cell, col * dots_per_cell
            print_rgb[y:y + dots_per_cell, x:x + dots_per_cell] = film_cell

    manifest = {
        'grid': {'width': params.width, 'height': params.height},
        'cell_size_mm': cell_size_mm,
        'physical_size_mm': {'width': params.width * cell_size_mm, 'height': params.height * cell_size_mm},
        'dots_per_cell': dots_per_cell,
        'print_size_px': {'width': params.width * dots_per_cell, 'height': params.height * dots_per_cell},
        'film_cells': int(film.sum()),
        'film_fraction': float(film.mean()),
        'constants': {
            'film_rgb': [float(v) for v in constants.film_rgb],
            'film_thermal': float(constants.film_thermal),
        },
        'film': {'material': 'aluminium film', 'thickness_mm': FILM_THICKNESS_MM},
        'source_hash': source_hash,
        'files': {'print': PRINT_FILE, 'film_mask': FILM_MASK_FILE},
    }
    return PrintLayout(print_rgb=to_uint8(print_rgb), film_mask=film, cell_size_mm=cell_size_mm, manifest=manifest)


def export_layout(
    params: NorpParams,
    constants: MaterialConstants,
    out_dir: str,
    dots_per_cell: int = DEFAULT_DOTS_PER_CELL,
    cell_size_mm: float = DEFAULT_CELL_SIZE_MM,
    source_hash: Optional[str] = None
) -> PrintLayout:
    """
    Writes the print image (fabric cells in their colour, film cells in the film colour marked
    with an "X"), the 1-bit film mask (one pixel per cell, set where film goes) and a manifest
    with the physical dimensions.
    """
    layout = build_layout(params, constants, dots_per_cell, cell_size_mm, source_hash)
    ensure_dir(out_dir)

    Image.fromarray(layout.print_rgb, mode='RGB').save(os.path.join(out_dir, PRINT_FILE))
    write_bitmap_png(os.path.join(out_dir, FILM_MASK_FILE), layout.film_mask)
    write_to_file(os.path.join(out_dir, MANIFEST_FILE), json.dumps(layout.manifest, indent=2, sort_keys=True))

    size = layout.manifest['physical_size_mm']
    _log.info(f' + Exported {size["width"]:g} x {size["height"]:g} mm layout with {layout.manifest["film_cells"]} film cells to {out_dir}')
    return layout


def read_film_mask(out_dir: str) -> np.ndarray:
    return read_bitmap_png(os.path.join(out_dir, FILM_MASK_FILE))


def material_choice_from_mask(film_mask: np.ndarray) -> np.ndarray:
    """
    Binarized material choice recovered from a film mask: 1 for fabric, 0 for film.
    """
    return np.where(film_mask, 0.0, 1.0)
