import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from rgbtcloak.attack.config import AttackConfig
from rgbtcloak.exception import ModelFormatException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams, film_area_fraction
from rgbtcloak.norp.storage import load_params, save_params
from rgbtcloak.utils.filesystem import ensure_dir, read_file, write_to_file

RUN_FILE = 'run.json'
RUN_FORMAT_VERSION = 1


@dataclass(frozen=True)
class AttackRun:
    """
    Outcome of one optimization: binarized pattern, per-iteration loss and the config that made it.
    Wall clock time is informative only and takes no part in equality.
    """
    params: NorpParams
    loss_trace: List[float]
    config: AttackConfig
    wall_clock: float = field(default=0.0, compare=False)
    input_hash: str = ''

    @property
    def method(self) -> str:
        return self.config.method.value

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else float('nan')

    @property
    def content_hash(self) -> str:
        """
        sha256 over the inputs and the resulting pattern; exported layouts carry it as provenance.
        """
        digest = hashlib.sha256(self.input_hash.encode('ascii'))
        digest.update(np.ascontiguousarray(self.params.rgb, dtype='<f8').tobytes())
        digest.update(np.ascontiguousarray(self.params.p_tilde, dtype='<f8').tobytes())
        return digest.hexdigest()


def input_hash(params0: NorpParams, constants: MaterialConstants, config: AttackConfig) -> str:
    digest = hashlib.sha256()
    for values in (params0.rgb, params0.p_tilde, constants.film_rgb, constants.body_thermal):
        digest.update(np.ascontiguousarray(values, dtype='<f8').tobytes())
    digest.update(repr(float(constants.film_thermal)).encode('ascii'))
    digest.update(json.dumps(config.as_dict(), sort_keys=True).encode('utf-8'))
    return digest.hexdigest()


def save_run(run: AttackRun, constants: MaterialConstants, directory: str) -> str:
    ensure_dir(directory)
    save_params(run.params, constants, directory)
    record = {
        'format_version': RUN_FORMAT_VERSION,
        'method': run.method,
        'config': run.config.as_dict(),
        'loss_trace': [float(v) for v in run.loss_trace],
        'final_loss': None if not run.loss_trace else float(run.final_loss),
        'film_fraction': film_area_fraction(run.params),
        'timings': {'wall_clock_s': run.wall_clock},
        'input_hash': run.input_hash,
        'content_hash': run.content_hash,
    }
    path = os.path.join(directory, RUN_FILE)
    write_to_file(path, json.dumps(record, indent=2, sort_keys=True))
    return path


def load_run(directory: str) -> Tuple[AttackRun, MaterialConstants]:
    path = os.path.join(directory, RUN_FILE)
    if not os.path.isfile(path):
        raise ModelFormatException(f'Attack run record not found: {path}')

    try:
        record = json.loads(read_file(path))
    except ValueError as e:
        raise ModelFormatException(f'Corrupt attack run record {path}: {e}')
    if record.get('format_version') != RUN_FORMAT_VERSION:
        raise ModelFormatException(f'Unsupported attack run version {record.get("format_version")}: {path}')

    params, constants = load_params(directory)
    run = AttackRun(
        params=params,
        loss_trace=[float(v) for v in record['loss_trace']],
        config=AttackConfig.from_dict(record['config']),
        wall_clock=float(record['timings']['wall_clock_s']),
        input_hash=record['input_hash']
    )
    if run.content_hash != record['content_hash']:
        raise ModelFormatException(f'Attack run {directory} does not match its recorded content hash')

    return run, constants
