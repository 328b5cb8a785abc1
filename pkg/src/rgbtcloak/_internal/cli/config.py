import copy
import os
from typing import Any, Dict, Optional, Sequence

import yaml

from rgbtcloak.exception import ConfigException
from rgbtcloak.utils.collections import deep_merge
from rgbtcloak.utils.dotdict import DotDict, as_dot_dict, unwrap_dot_dict
from rgbtcloak.utils.filesystem import read_file

ALL_ARCHS = ['Early', 'Mid', 'Late', 'IndependentRGB', 'IndependentT']

DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 0,
    'out': 'out',
    'workers': 1,
    'log_every': 50,
    'norp': {
        'width': 24,
        'height': 32,
        'init': 'undecided',
        'film_rgb': [0.75, 0.75, 0.75],
        'film_thermal': 0.1,
        'body_level': 0.85,
        'body_noise': 0.05,
    },
    'composer': {
        'frame_height': 512,
        'frame_width': 512,
        'n_angles': 20,
        'sprite_height': 160,
        'sprite_width': 80,
        'reference_height_px': 160.0,
        'reference_distance_m': 2.5,
        'skin_rgb': [0.87, 0.72, 0.62],
        'skin_thermal': 0.92,
        'eot': {
            'scale': 0.1,
            'translate_px': 8.0,
            'brightness': 0.15,
            'contrast': [0.85, 1.15],
            'thermal_offset': 0.08,
            'noise_std_rgb': 0.01,
            'noise_std_thermal': 0.01,
        },
    },
    'datagen': {
        'mode': 'generate',
        'ingest_dir': None,
        'dataset_dir': None,
        'palette': 'outdoor-day',
        'n_backgrounds': 64,
        'n_scenes': 240,
        'positive_fraction': 0.5,
        'clothing_variety': 3,
    },
    'train': {
        'archs': list(ALL_ARCHS),
        'epochs': 30,
        'lr': 0.01,
        'batch': 8,
        'width': 8,
        'stride': 8,
        'val_fraction': 0.2,
        'recall_floor': 0.85,
        'model_dir': None,
        'held_out': [],
    },
    'attack': {
        'method': 'SDCO',
        'target': 'Early',
        'alpha': 0.7,
        'eta': 0.02,
        'iterations': 500,
        'batch': 8,
        'ensemble_weights': [0.25, 0.25, 0.25, 0.25],
        'gumbel_tau': 0.5,
        'smooth_max_tau': 0.05,
        'run_name': None,
        'model_dir': None,
    },
    'eval': {
        'mode': 'asr',
        'iou_threshold': 0.5,
        'conf_threshold': 0.6,
        'angles': [float(a) for a in range(0, 360, 18)],
        'distances': [2.5 * i for i in range(1, 9)],
        'n_backgrounds': 32,
        'palette': 'outdoor-day',
        'detectors': list(ALL_ARCHS),
        'runs': {},
        'controls': ['Clean', 'Random'],
        'model_dir': None,
    },
    'export': {
        'run_dir': None,
        'dots_per_cell': 40,
        'cell_size_mm': 25.0,
    },
}

# mappings whose keys are chosen by the user
_FREE_MAPPINGS = {'eval.runs'}

_LIST_ITEM_SCHEMAS = {
    'train.held_out': {'name': None, 'arch': None, 'seed': None, 'width': None},
}


def _key_lines(text: str) -> Dict[str, int]:
    """
    Dotted key path -> 1-based line of the key in the YAML source.
    """
    lines = {}

    def walk(node, path: str):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                dotted = f'{path}.{key_node.value}' if path else str(key_node.value)
                lines[dotted] = key_node.start_mark.line + 1
                walk(value_node, dotted)
        elif isinstance(node, yaml.SequenceNode):
            for idx, item in enumerate(node.value):
                walk(item, f'{path}[{idx}]')

    walk(yaml.compose(text, Loader=yaml.SafeLoader), '')
    return lines


def _check_keys(data: Any, schema: Any, path: str, lines: Dict[str, int]):
    if not isinstance(data, dict):
        return

    if not isinstance(schema, dict):
        raise ConfigException('Expected a plain value, got a mapping', key=path, line=lines.get(path))

    for key, value in data.items():
        dotted = f'{path}.{key}' if path else str(key)
        if key not in schema:
            raise ConfigException('Unknown configuration key', key=dotted, line=lines.get(dotted))

        expected = schema[key]
        if isinstance(expected, dict) and not isinstance(value, dict):
            raise ConfigException('Expected a mapping', key=dotted, line=lines.get(dotted))

        if dotted in _FREE_MAPPINGS:
            continue

        if dotted in _LIST_ITEM_SCHEMAS:
            if not isinstance(value, list):
                raise ConfigException('Expected a list', key=dotted, line=lines.get(dotted))
            for idx, item in enumerate(value):
                item_path = f'{dotted}[{idx}]'
                if not isinstance(item, dict):
                    raise ConfigException('Expected a mapping', key=item_path, line=lines.get(item_path))
                _check_keys(item, _LIST_ITEM_SCHEMAS[dotted], item_path, lines)
            continue

        _check_keys(value, expected, dotted, lines)


def load_config_file(file_path: str) -> Dict[str, Any]:
    if not os.path.isfile(file_path):
        raise ConfigException(f'Config file not found: {file_path}')

    text = read_file(file_path)
    try:
        data = yaml.safe_load(text) or {}
        lines = _key_lines(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigException(f'Malformed YAML in {file_path}: {getattr(e, "problem", e)}', line=mark.line + 1 if mark else None)

    if not isinstance(data, dict):
        raise ConfigException(f'Config file must hold a mapping at the top level: {file_path}', line=1)

    _check_keys(data, DEFAULT_CONFIG, '', lines)
    return data


def parse_override(expression: str) -> Dict[str, Any]:
    """
    `section.key=value` to a nested dict; the value is parsed as YAML, so `0.5` is a number and
    `[Early, Mid]` a list.
    """
    if '=' not in expression:
        raise ConfigException(f'Override must look like section.key=value, got "{expression}"')

    dotted, raw = expression.split('=', maxsplit=1)
    dotted = dotted.strip()
    if not dotted:
        raise ConfigException(f'Override is missing the key: "{expression}"')

    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigException(f'Cannot parse override value "{raw}"', key=dotted)

    return _nested(dotted, value)


def _nested(dotted: str, value: Any) -> Dict[str, Any]:
    result: Dict[str, Any] = {}
    node = result
    parts = dotted.split('.')
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return result


def resolve_config(config_path: Optional[str] = None, overrides: Sequence[str] = (), **flags) -> DotDict:
    """
    Defaults, then the config file, then `--set` overrides, then dedicated flags such as
    `--seed`; later sources win.
    """
    resolved = copy.deepcopy(DEFAULT_CONFIG)
    if config_path:
        resolved = deep_merge(resolved, load_config_file(config_path))

    for expression in overrides:
        override = parse_override(expression)
        _check_keys(override, DEFAULT_CONFIG, '', {})
        resolved = deep_merge(resolved, override)

    for dotted, value in flags.items():
        if value is not None:
            resolved = deep_merge(resolved, _nested(dotted, value))

    return as_dot_dict(resolved, 'config')


def require(config: DotDict, dotted_key: str) -> Any:
    """
    Value of a key which has no usable default in the current mode.
    """
    value = config.lookup(dotted_key)
    if value is None:
        raise ConfigException('Missing required key', key=dotted_key)

    return value


def dump_config(config: DotDict) -> str:
    return yaml.safe_dump(unwrap_dot_dict(config), sort_keys=True, default_flow_style=False)
