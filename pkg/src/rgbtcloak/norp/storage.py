import base64
import json
import logging
import os
from typing import Tuple

import numpy as np

from rgbtcloak.exception import ModelFormatException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, realize
from rgbtcloak.utils.filesystem import read_file, write_to_file
from rgbtcloak.utils.imaging import read_gray_png, read_rgb_png, write_gray16_png, write_rgb_png

_log = logging.getLogger(__name__)

FORMAT_VERSION = 1

RGB_FILE = 'rgb.png'
P_TILDE_FILE = 'p_tilde.png'
THERMAL_FILE = 'thermal.png'
BODY_THERMAL_FILE = 'body_thermal.png'
SIDECAR_FILE = 'norp.json'


def _encode_array(values: np.ndarray) -> dict:
    data = np.ascontiguousarray(values, dtype='<f8')
    return {'shape': list(data.shape), 'float64': base64.b64encode(data.tobytes()).decode('ascii')}


def _decode_array(encoded: dict) -> np.ndarray:
    raw = base64.b64decode(encoded['float64'])
    return np.frombuffer(raw, dtype='<f8').reshape(encoded['shape']).astype(np.float64)


def save_params(params: NorpParams, constants: MaterialConstants, directory: str) -> None:
    """
    Writes the pattern as images plus a JSON sidecar.

    The images are for inspection and printing; the sidecar carries the float64 arrays so that
    `load_params` returns bit-identical values.
    """
    os.makedirs(directory, exist_ok=True)

    write_rgb_png(os.path.join(directory, RGB_FILE), params.rgb)
    write_gray16_png(os.path.join(directory, P_TILDE_FILE), params.p_tilde)
    write_gray16_png(os.path.join(directory, THERMAL_FILE), realize(params, constants).thermal)
    write_gray16_png(os.path.join(directory, BODY_THERMAL_FILE), constants.body_thermal)

    sidecar = {
        'format_version': FORMAT_VERSION,
        'width': params.width,
        'height': params.height,
        'binarized': params.is_binarized(),
        'constants': {
            'film_rgb': [float(v) for v in constants.film_rgb],
            'film_thermal': float(constants.film_thermal),
        },
        'arrays': {
            'rgb': _encode_array(params.rgb),
            'p_tilde': _encode_array(params.p_tilde),
            'body_thermal': _encode_array(constants.body_thermal),
        }
    }
    write_to_file(os.path.join(directory, SIDECAR_FILE), json.dumps(sidecar, indent=2, sort_keys=True))
    _log.info(f' + Pattern {params.width}x{params.height} saved to {directory}')


def load_params(directory: str) -> Tuple[NorpParams, MaterialConstants]:
    sidecar_path = os.path.join(directory, SIDECAR_FILE)
    if not os.path.isfile(sidecar_path):
        raise ModelFormatException(f'Pattern sidecar not found: {sidecar_path}')

    try:
        sidecar = json.loads(read_file(sidecar_path))
    except ValueError as ex:
        raise ModelFormatException(f'Pattern sidecar is not valid JSON: {sidecar_path}: {ex}')

    version = sidecar.get('format_version')
    if version != FORMAT_VERSION:
        raise ModelFormatException(f'Unsupported pattern format version {version}, expected {FORMAT_VERSION}: {sidecar_path}')

    arrays = sidecar.get('arrays')
    if arrays:
        rgb = _decode_array(arrays['rgb'])
        p_tilde = _decode_array(arrays['p_tilde'])
        body_thermal = _decode_array(arrays['body_thermal'])
    else:
        # hand-edited patterns may ship with images only
        rgb = read_rgb_png(os.path.join(directory, RGB_FILE))
        p_tilde = read_gray_png(os.path.join(directory, P_TILDE_FILE))
        body_thermal = read_gray_png(os.path.join(directory, BODY_THERMAL_FILE))

    if p_tilde.shape != (sidecar['height'], sidecar['width']):
        raise ModelFormatException(
            f'Pattern grid {p_tilde.shape} does not match sidecar {sidecar["height"]}x{sidecar["width"]}: {directory}'
        )

    constants = MaterialConstants(
        film_rgb=np.asarray(sidecar['constants']['film_rgb'], dtype=np.float64),
        film_thermal=float(sidecar['constants']['film_thermal']),
        body_thermal=body_thermal
    )
    return NorpParams(rgb=rgb, p_tilde=p_tilde), constants
