import json
import struct
from typing import Optional, Tuple

import numpy as np

from rgbtcloak.detectors.model import DetectorModel, FusionArch, layer_plan
from rgbtcloak.exception import IllegalArgumentException, ModelFormatException
from rgbtcloak.utils.filesystem import read_file_bin, write_to_file

MAGIC = b'RGBTDET\x00'
FORMAT_VERSION = 1
_HEADER_SIZE = struct.Struct('<I')


def save_model(model: DetectorModel, path: str) -> None:
    """
    Writes the magic bytes, a length-prefixed JSON header and the float64 weights in header order.
    """
    names = sorted(model.weights)
    header = {
        'format_version': FORMAT_VERSION,
        'arch': model.arch.value,
        'stride': model.score_stride,
        'width': model.width,
        'size_ref': model.size_ref,
        'seed': model.seed,
        'train_meta': model.train_meta,
        'tensors': [{'name': name, 'shape': list(model.weights[name].shape)} for name in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    blob = b''.join(np.ascontiguousarray(model.weights[name], dtype='<f8').tobytes() for name in names)
    write_to_file(path, MAGIC + _HEADER_SIZE.pack(len(header_bytes)) + header_bytes + blob, open_mode='wb', encoding=None)


def _read_header(data: bytes, path: str) -> Tuple[dict, int]:
    if not data.startswith(MAGIC):
        raise ModelFormatException(f'Not a detector model file: {path}')

    offset = len(MAGIC) + _HEADER_SIZE.size
    if len(data) < offset:
        raise ModelFormatException(f'Model file truncated in header: {path}')

    (header_size,) = _HEADER_SIZE.unpack(data[len(MAGIC):offset])
    if len(data) < offset + header_size:
        raise ModelFormatException(f'Model file truncated in header: {path}')

    try:
        header = json.loads(data[offset:offset + header_size].decode('utf-8'))
    except ValueError as e:
        raise ModelFormatException(f'Corrupt model header in {path}: {e}')

    return header, offset + header_size


def load_model(path: str, expected_arch: Optional[FusionArch] = None) -> DetectorModel:
    data = read_file_bin(path)
    header, offset = _read_header(data, path)

    if header.get('format_version') != FORMAT_VERSION:
        raise ModelFormatException(
            f'Model format version {header.get("format_version")} is not supported (expected {FORMAT_VERSION}): {path}'
        )

    try:
        arch = FusionArch.parse(header['arch'])
    except IllegalArgumentException as e:
        raise ModelFormatException(f'{e}: {path}')

    if expected_arch is not None and arch is not expected_arch:
        raise ModelFormatException(f'Expected a {expected_arch.value} model but {path} holds {arch.value}')

    weights = {}
    for entry in header['tensors']:
        shape = tuple(entry['shape'])
        n_bytes = int(np.prod(shape)) * 8
        if len(data) < offset + n_bytes:
            raise ModelFormatException(f'Model file truncated in weight "{entry["name"]}": {path}')
        weights[entry['name']] = np.frombuffer(data[offset:offset + n_bytes], dtype='<f8').reshape(shape).astype(np.float64)
        offset += n_bytes

    if offset != len(data):
        raise ModelFormatException(f'Model file has {len(data) - offset} trailing bytes: {path}')

    expected = {f'{spec.name}.{kind}' for layers in layer_plan(arch, header['width']).values() for spec in layers for kind in ('weight', 'bias')}
    if set(weights) != expected:
        raise ModelFormatException(f'Model weights do not match the {arch.value} layout: {path}')

    return DetectorModel(
        arch=arch,
        weights=weights,
        score_stride=int(header['stride']),
        width=int(header['width']),
        size_ref=float(header['size_ref']),
        seed=int(header['seed']),
        train_meta=header.get('train_meta') or {}
    )
