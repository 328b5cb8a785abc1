import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from rgbtcloak._internal.cli.config import ALL_ARCHS, dump_config, require
from rgbtcloak.attack.config import AttackConfig, AttackMethod, ENSEMBLE_STAGES
from rgbtcloak.attack.losses import RenderSetup
from rgbtcloak.attack.optimizers import clean_pattern, optimize, random_pattern, random_run
from rgbtcloak.attack.run import AttackRun, RUN_FILE, load_run, save_run
from rgbtcloak.composer.backgrounds import Palette, gen_backgrounds, load_backgrounds, save_backgrounds
from rgbtcloak.composer.dataset import gen_detector_dataset, load_dataset, save_dataset
from rgbtcloak.composer.render import CameraModel
from rgbtcloak.composer.types import EotConfig, PersonAppearance, RgbtImage
from rgbtcloak.composer.uvmap import build_uv_maps
from rgbtcloak.detectors.model import DetectorModel, FusionArch
from rgbtcloak.detectors.objective import DetectorPair, Target
from rgbtcloak.detectors.storage import load_model, save_model
from rgbtcloak.detectors.training import TrainConfig, train
from rgbtcloak.evaluation.asr import Detector, EitherDetector, ModelDetector, SweepResult, asr, sweep
from rgbtcloak.evaluation.metrics import EvalConfig
from rgbtcloak.evaluation.plots import render_plots
from rgbtcloak.evaluation.tables import Table, alpha_sweep, compare, transfer_matrix, write_table
from rgbtcloak.exception import (
    AcceptanceFloorException, ConfigException, IllegalArgumentException, IllegalStateException, ShapeMismatchException
)
from rgbtcloak.export.layout import PrintLayout, export_layout
from rgbtcloak.norp.pattern import InitStrategy, MaterialConstants, NorpParams, default_constants, film_area_fraction, init_params, undecided_params
from rgbtcloak.norp.storage import load_params
from rgbtcloak.utils.dotdict import DotDict, unwrap_dot_dict
from rgbtcloak.utils.filesystem import ensure_dir, write_to_file
from rgbtcloak.utils.seeding import derive_seed

_log = logging.getLogger(__name__)

BACKGROUNDS_DIR = 'backgrounds'
BACKGROUNDS_INDEX_FILE = 'index.json'
MODEL_SUFFIX = '.model'
METRICS_FILE = 'metrics.json'
REPORT_FILE = 'report.json'
EFFECTIVE_CONFIG_SUFFIX = '.effective_config.yaml'
INDEPENDENT_STAGE = 'Independent'
EITHER_DETECTOR = 'Independent (either)'
EVAL_MODES = ('asr', 'sweep', 'compare', 'transfer', 'alpha-sweep')


@contextmanager
def _config_section(key: str):
    """
    Values rejected while building a typed config from `key` are configuration errors.
    """
    try:
        yield
    except ConfigException:
        raise
    except IllegalArgumentException as ex:
        raise ConfigException(str(ex), key=key)


def echo_config(config: DotDict, command: str) -> str:
    """
    Logs the effective config and keeps a copy next to the command's outputs.
    """
    text = dump_config(config)
    _log.info(f'Effective config for {command}:')
    for line in text.splitlines():
        _log.info(f'    {line}')

    path = os.path.join(ensure_dir(config.out), f'{command}{EFFECTIVE_CONFIG_SUFFIX}')
    write_to_file(path, text)
    return path


# -- shared setup

def _dataset_dir(config: DotDict) -> str:
    return config.datagen.dataset_dir or os.path.join(config.out, 'dataset')


def _model_dir(config: DotDict, section: str) -> str:
    return config[section].model_dir or config.train.model_dir or os.path.join(config.out, 'models')


def _runs_dir(config: DotDict) -> str:
    return os.path.join(config.out, 'runs')


def _resolve_run_dir(config: DotDict, location: str) -> str:
    if os.path.isabs(location) or os.path.isdir(location):
        return location

    return os.path.join(_runs_dir(config), location)


def _palette(tag: str, key: str) -> Palette:
    try:
        return Palette(tag)
    except ValueError:
        raise ConfigException(f'Unknown palette "{tag}", expected one of {[p.value for p in Palette]}', key=key)


def _constants(config: DotDict) -> MaterialConstants:
    norp = config.norp
    with _config_section('norp'):
        return default_constants(
            norp.width, norp.height, config.seed,
            film_rgb=tuple(norp.film_rgb), film_thermal=norp.film_thermal,
            body_level=norp.body_level, body_noise=norp.body_noise
        )


def _render_setup(config: DotDict) -> RenderSetup:
    composer = config.composer
    with _config_section('composer'):
        uv_maps = build_uv_maps(
            config.norp.width, config.norp.height, composer.n_angles,
            sprite_size=(composer.sprite_height, composer.sprite_width), seed=config.seed
        )
        return RenderSetup(
            uv_maps=uv_maps,
            appearance=PersonAppearance(skin_rgb=tuple(composer.skin_rgb), skin_thermal=composer.skin_thermal),
            camera=CameraModel(composer.reference_height_px, composer.reference_distance_m)
        )


def _eot(config: DotDict) -> EotConfig:
    with _config_section('composer.eot'):
        return EotConfig.from_dict(unwrap_dot_dict(config.composer.eot))


def _initial_params(config: DotDict) -> NorpParams:
    norp = config.norp
    with _config_section('norp'):
        if norp.init == 'undecided':
            return undecided_params(norp.width, norp.height, config.seed)

        strategies = {s.value: s for s in InitStrategy}
        if norp.init not in strategies:
            raise ConfigException(f'Unknown init "{norp.init}", expected one of {["undecided"] + sorted(strategies)}', key='norp.init')

        return init_params(norp.width, norp.height, config.seed, strategies[norp.init])


def _training_backgrounds(config: DotDict) -> List[RgbtImage]:
    directory = os.path.join(_dataset_dir(config), BACKGROUNDS_DIR)
    if not os.path.isdir(directory):
        raise IllegalStateException(f'No backgrounds under {directory}, run datagen first')

    return load_backgrounds(directory)


def _load_model(model_dir: str, name: str) -> DetectorModel:
    path = os.path.join(model_dir, f'{name}{MODEL_SUFFIX}')
    if not os.path.isfile(path):
        raise IllegalStateException(f'Model file not found: {path}, run train first')

    expected_arch = FusionArch.parse(name) if name in ALL_ARCHS else None
    _log.info(f' + Loading detector {path}')
    return load_model(path, expected_arch)


def _load_target(model_dir: str, stage: str) -> Target:
    if stage == INDEPENDENT_STAGE:
        return DetectorPair(
            rgb=_load_model(model_dir, FusionArch.INDEPENDENT_RGB.value),
            thermal=_load_model(model_dir, FusionArch.INDEPENDENT_T.value)
        )

    return _load_model(model_dir, stage)


# -- datagen

def cmd_datagen(config: DotDict) -> str:
    """
    Writes the background pairs and the detector training scenes with their JSON index.
    """
    datagen = config.datagen
    composer = config.composer
    dataset_dir = ensure_dir(_dataset_dir(config))

    if datagen.mode == 'generate':
        palette = _palette(datagen.palette, 'datagen.palette')
        with _config_section('datagen'):
            backgrounds = gen_backgrounds(
                datagen.n_backgrounds, composer.frame_height, composer.frame_width,
                seed=config.seed, palette=palette, workers=config.workers
            )
        source = f'generated:{palette.value}'
    elif datagen.mode == 'ingest':
        source = require(config, 'datagen.ingest_dir')
        backgrounds = load_backgrounds(source)
    else:
        raise ConfigException(f'Unknown mode "{datagen.mode}", expected generate or ingest', key='datagen.mode')

    backgrounds_dir = os.path.join(dataset_dir, BACKGROUNDS_DIR)
    names = save_backgrounds(backgrounds, backgrounds_dir)
    write_to_file(
        os.path.join(backgrounds_dir, BACKGROUNDS_INDEX_FILE),
        json.dumps({'source': source, 'pairs': names}, indent=2, sort_keys=True)
    )

    setup = _render_setup(config)
    with _config_section('datagen'):
        samples = gen_detector_dataset(
            backgrounds, datagen.n_scenes, datagen.positive_fraction, datagen.clothing_variety,
            seed=config.seed, uv_maps=setup.uv_maps, constants=_constants(config),
            appearance=setup.appearance, camera=setup.camera, eot=_eot(config), workers=config.workers
        )

    index_path = save_dataset(samples, dataset_dir)
    _log.info(f' + Dataset written to {dataset_dir} ({len(names)} backgrounds, {len(samples)} scenes)')
    return index_path


# -- train

@dataclass(frozen=True)
class _TrainJob:
    name: str
    arch: FusionArch
    seed: int
    width: int


def _train_jobs(config: DotDict) -> List[_TrainJob]:
    train_section = config.train
    jobs = []
    for idx, tag in enumerate(train_section.archs):
        with _config_section(f'train.archs[{idx}]'):
            arch = FusionArch.parse(tag)
        jobs.append(_TrainJob(arch.value, arch, config.seed, train_section.width))

    for idx, item in enumerate(train_section.held_out):
        key = f'train.held_out[{idx}]'
        name = item.get('name')
        if not name:
            raise ConfigException('Held-out detector needs a name', key=f'{key}.name')
        if name in ALL_ARCHS or name == INDEPENDENT_STAGE:
            raise ConfigException(f'Held-out detector name "{name}" collides with an architecture tag', key=f'{key}.name')

        with _config_section(f'{key}.arch'):
            arch = FusionArch.parse(require(config, f'{key}.arch'))
        seed = item.get('seed')
        jobs.append(_TrainJob(
            name=name,
            arch=arch,
            seed=derive_seed(config.seed, 'held-out', name) if seed is None else int(seed),
            width=item.get('width') or train_section.width
        ))

    names = [job.name for job in jobs]
    if len(set(names)) != len(names):
        raise ConfigException(f'Detector names must be unique, got {names}', key='train')

    return jobs


def cmd_train(config: DotDict) -> Dict[str, dict]:
    """
    Trains every requested architecture plus the held-out detectors and fails when any of them
    misses the validation recall floor.
    """
    train_section = config.train
    samples = load_dataset(_dataset_dir(config))
    model_dir = ensure_dir(_model_dir(config, 'train'))
    with _config_section('eval'):
        eval_config = EvalConfig(iou_threshold=config.eval.iou_threshold, conf_threshold=config.eval.conf_threshold)

    metrics = {}
    for job in _train_jobs(config):
        with _config_section('train'):
            train_config = TrainConfig(
                batch=train_section.batch, val_fraction=train_section.val_fraction,
                width=job.width, stride=train_section.stride, log_every=config.log_every
            )
        model = train(job.arch, samples, train_section.epochs, train_section.lr, job.seed, train_config, eval_config)
        if job.name != job.arch.value:
            model = model.with_weights(model.weights, train_meta=dict(model.train_meta, name=job.name))

        file_name = f'{job.name}{MODEL_SUFFIX}'
        save_model(model, os.path.join(model_dir, file_name))
        metrics[job.name] = dict(model.train_meta, arch=job.arch.value, width=job.width, file=file_name)

    write_to_file(os.path.join(model_dir, METRICS_FILE), json.dumps(metrics, indent=2, sort_keys=True))

    floor = train_section.recall_floor
    failing = {name: m for name, m in metrics.items() if m['val_recall'] < floor}
    if failing:
        raise AcceptanceFloorException(f'Validation recall below the floor of {floor} for {sorted(failing)}', failing)

    _log.info(f' + Trained {len(metrics)} detectors into {model_dir}')
    return metrics


# -- attack

def _attack_config(config: DotDict, method: AttackMethod) -> AttackConfig:
    section = config.attack
    with _config_section('attack'):
        return AttackConfig(
            method=method,
            alpha=section.alpha,
            eta=section.eta,
            iterations=section.iterations,
            batch=section.batch,
            ensemble_weights=tuple(float(w) for w in section.ensemble_weights),
            eot=_eot(config),
            seed=config.seed,
            gumbel_tau=section.gumbel_tau,
            smooth_max_tau=section.smooth_max_tau,
            log_every=config.log_every
        )


def _attack_targets(config: DotDict, attack_config: AttackConfig):
    model_dir = _model_dir(config, 'attack')
    if attack_config.method is AttackMethod.ENSEMBLE:
        # zero-weight stages are never loaded
        return [
            (_load_target(model_dir, stage), weight)
            for stage, weight in zip(ENSEMBLE_STAGES, attack_config.ensemble_weights) if weight > 0
        ]

    return _load_target(model_dir, config.attack.target)


def _run_name(config: DotDict, method: AttackMethod) -> str:
    if config.attack.run_name:
        return config.attack.run_name
    if method in (AttackMethod.RANDOM, AttackMethod.ENSEMBLE):
        return method.value

    return f'{method.value}-{config.attack.target}'


def cmd_attack(config: DotDict) -> Tuple[AttackRun, str]:
    """
    Optimizes a pattern with the configured method and stores the run record and pattern files.
    """
    with _config_section('attack.method'):
        method = AttackMethod.parse(config.attack.method)

    constants = _constants(config)
    params0 = _initial_params(config)
    attack_config = _attack_config(config, method)

    if method is AttackMethod.RANDOM:
        run = random_run(params0, constants, attack_config)
    else:
        targets = _attack_targets(config, attack_config)
        run = optimize(params0, constants, targets, _training_backgrounds(config), attack_config, _render_setup(config))

    run_dir = os.path.join(_runs_dir(config), _run_name(config, method))
    save_run(run, constants, run_dir)

    final_loss = f'{run.final_loss:.4f}' if run.loss_trace else 'n/a'
    _log.info(f' + {run.method} done: final loss {final_loss}, film fraction {film_area_fraction(run.params):.3f}, saved to {run_dir}')
    return run, run_dir


# -- eval

@dataclass(frozen=True)
class _EvalContext:
    config: DotDict
    eval_config: EvalConfig
    setup: RenderSetup
    constants: MaterialConstants
    backgrounds: List[RgbtImage]
    models: List[ModelDetector]
    runs: Dict[str, AttackRun]
    out_dir: str

    @property
    def report_detectors(self) -> List[Detector]:
        """
        Model detectors plus the joint column counting a person found by either independent detector.
        """
        by_arch = {d.model.arch: d for d in self.models if d.name == d.model.arch.value}
        detectors: List[Detector] = list(self.models)
        if FusionArch.INDEPENDENT_RGB in by_arch and FusionArch.INDEPENDENT_T in by_arch:
            detectors.append(EitherDetector(EITHER_DETECTOR, (by_arch[FusionArch.INDEPENDENT_RGB], by_arch[FusionArch.INDEPENDENT_T])))
        return detectors

    def patterns(self, with_controls: bool) -> Dict[str, NorpParams]:
        entries = self.controls() if with_controls else {}
        for label, run in self.runs.items():
            if label in entries:
                raise ConfigException(f'Run label "{label}" collides with a control', key=f'eval.runs.{label}')
            entries[label] = run.params
        if not entries:
            raise ConfigException('Nothing to evaluate, no runs or controls configured', key='eval.runs')
        return entries

    def controls(self) -> Dict[str, NorpParams]:
        height, width = self.constants.shape
        entries = {}
        for idx, control in enumerate(self.config.eval.controls):
            if control == 'Clean':
                entries[control] = clean_pattern(self.constants, derive_seed(self.config.seed, 'eval', 'clean'), self.config.datagen.clothing_variety)
            elif control == 'Random':
                entries[control] = random_pattern(width, height, self.constants, derive_seed(self.config.seed, 'eval', 'random'))
            else:
                raise ConfigException(f'Unknown control "{control}", expected Clean or Random', key=f'eval.controls[{idx}]')
        return entries

    def write_report(self, mode: str, body: dict) -> str:
        report = dict(body, mode=mode, config=self.eval_config.as_dict())
        path = os.path.join(self.out_dir, REPORT_FILE)
        write_to_file(path, json.dumps(report, indent=2, sort_keys=True))
        _log.info(f' + Report written to {path}')
        return path


def _load_runs(config: DotDict) -> Tuple[Dict[str, AttackRun], Optional[MaterialConstants]]:
    runs = {}
    constants = None
    expected = (config.norp.height, config.norp.width)
    for label in sorted(config.eval.runs):
        run, run_constants = load_run(_resolve_run_dir(config, config.eval.runs[label]))
        if run.params.p_tilde.shape != expected:
            raise ShapeMismatchException(f'Run "{label}" does not match the configured texture grid', run.params.p_tilde.shape, expected)
        if constants is not None and run_constants != constants:
            raise ConfigException(f'Run "{label}" was optimized with other material constants than {sorted(runs)}', key=f'eval.runs.{label}')
        runs[label] = run
        constants = constants or run_constants

    return runs, constants


def _eval_context(config: DotDict) -> _EvalContext:
    section = config.eval
    with _config_section('eval'):
        eval_config = EvalConfig(
            iou_threshold=section.iou_threshold,
            conf_threshold=section.conf_threshold,
            angles=tuple(float(a) for a in section.angles),
            distances=tuple(float(d) for d in section.distances),
            n_backgrounds=section.n_backgrounds,
            seed=config.seed,
            workers=config.workers
        )

    runs, run_constants = _load_runs(config)
    model_dir = _model_dir(config, 'eval')
    models = [ModelDetector(_load_model(model_dir, name), eval_config.conf_threshold) for name in section.detectors]
    if not models:
        raise ConfigException('At least one detector is required', key='eval.detectors')

    # fresh backgrounds, never seen by training or the attack
    backgrounds = gen_backgrounds(
        eval_config.n_backgrounds, config.composer.frame_height, config.composer.frame_width,
        seed=derive_seed(config.seed, 'eval', 'backgrounds'), palette=_palette(section.palette, 'eval.palette'),
        workers=config.workers
    )
    return _EvalContext(
        config=config,
        eval_config=eval_config,
        setup=_render_setup(config),
        constants=run_constants or _constants(config),
        backgrounds=backgrounds,
        models=models,
        runs=runs,
        out_dir=ensure_dir(config.out, 'eval')
    )


def _eval_asr(ctx: _EvalContext) -> dict:
    entries = ctx.patterns(with_controls=True)
    detectors = ctx.report_detectors
    rows = list(entries)
    values = np.zeros((len(rows), len(detectors)))
    results = {}
    for i, label in enumerate(rows):
        results[label] = []
        for j, detector in enumerate(detectors):
            entry = asr(entries[label], ctx.constants, detector, ctx.backgrounds, ctx.eval_config, ctx.setup, overlapping=label == 'ORP')
            values[i, j] = entry.asr
            results[label].append({'detector': entry.detector, 'asr': entry.asr, 'targets': entry.targets, 'undetected': entry.undetected})

    table = Table('Attack success rate', tuple(rows), tuple(d.name for d in detectors), values)
    write_table(table, ctx.out_dir, 'asr')
    return {'results': results}


def _eval_sweep(ctx: _EvalContext) -> dict:
    entries = ctx.patterns(with_controls=True)
    results = {}
    for label, params in entries.items():
        sweeps: List[SweepResult] = [
            sweep(params, ctx.constants, detector, ctx.backgrounds, ctx.eval_config, ctx.setup, overlapping=label == 'ORP')
            for detector in ctx.report_detectors
        ]
        render_plots(sweeps, os.path.join(ctx.out_dir, label))
        results[label] = [s.as_dict() for s in sweeps]

    return {'results': results}


def _eval_compare(ctx: _EvalContext) -> dict:
    table = compare(ctx.patterns(with_controls=True), ctx.models, ctx.constants, ctx.backgrounds, ctx.eval_config, ctx.setup)
    write_table(table, ctx.out_dir, 'compare')
    return {'table': table.as_dict()}


def _eval_transfer(ctx: _EvalContext) -> dict:
    table = transfer_matrix(ctx.patterns(with_controls=False), ctx.models, ctx.constants, ctx.backgrounds, ctx.eval_config, ctx.setup)
    write_table(table, ctx.out_dir, 'transfer')
    return {'table': table.as_dict()}


def _eval_alpha_sweep(ctx: _EvalContext) -> dict:
    if not ctx.runs:
        raise ConfigException('Alpha sweep needs attack runs', key='eval.runs')

    by_alpha: Dict[float, List[NorpParams]] = {}
    for label in sorted(ctx.runs):
        run = ctx.runs[label]
        by_alpha.setdefault(run.config.alpha, []).append(run.params)

    result = alpha_sweep(by_alpha, ctx.models, ctx.constants, ctx.backgrounds, ctx.eval_config, ctx.setup)
    write_table(result.table, ctx.out_dir, 'alpha_sweep')
    _log.info(f' + Best discretization probability: {result.best_alpha:g}')
    return {'table': result.table.as_dict(), 'best_alpha': result.best_alpha}


_EVAL_HANDLERS: Dict[str, Callable[[_EvalContext], dict]] = {
    'asr': _eval_asr,
    'sweep': _eval_sweep,
    'compare': _eval_compare,
    'transfer': _eval_transfer,
    'alpha-sweep': _eval_alpha_sweep,
}


def cmd_eval(config: DotDict) -> str:
    """
    Evaluates the configured runs and controls in the chosen mode and writes `report.json`
    plus tables or plots under `<out>/eval`.
    """
    mode = config.eval.mode
    if mode not in _EVAL_HANDLERS:
        raise ConfigException(f'Unknown mode "{mode}", expected one of {list(EVAL_MODES)}', key='eval.mode')

    ctx = _eval_context(config)
    _log.info(f' + Evaluating in {mode} mode on {len(ctx.backgrounds)} backgrounds')
    return ctx.write_report(mode, _EVAL_HANDLERS[mode](ctx))


# -- export

def cmd_export(config: DotDict) -> PrintLayout:
    """
    Print layout for a run. A bare pattern directory without a run record is exported too,
    without a source hash.
    """
    source_dir = _resolve_run_dir(config, require(config, 'export.run_dir'))
    if os.path.isfile(os.path.join(source_dir, RUN_FILE)):
        run, constants = load_run(source_dir)
        params, source_hash = run.params, run.content_hash
    else:
        params, constants = load_params(source_dir)
        source_hash = None

    return export_layout(
        params, constants, os.path.join(config.out, 'export'),
        dots_per_cell=config.export.dots_per_cell,
        cell_size_mm=config.export.cell_size_mm,
        source_hash=source_hash
    )


COMMANDS: Dict[str, Callable[[DotDict], object]] = {
    'datagen': cmd_datagen,
    'train': cmd_train,
    'attack': cmd_attack,
    'eval': cmd_eval,
    'export': cmd_export,
}
