import csv
import io
import json
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from rgbtcloak.attack.losses import RenderSetup
from rgbtcloak.composer.types import RgbtImage
from rgbtcloak.evaluation.asr import Detector, sweep
from rgbtcloak.evaluation.metrics import EvalConfig
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.norp.pattern import MaterialConstants, NorpParams
from rgbtcloak.utils.filesystem import ensure_dir, write_to_file

COMPARE_ROW_ORDER = ('Clean', 'Random', 'ORP', 'NoSRD', 'Gumbel', 'STE', 'SDCO')


@dataclass(frozen=True)
class Table:
    """
    ASR values with named rows and columns.
    """
    title: str
    rows: Tuple[str, ...]
    columns: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.rows), len(self.columns)):
            raise ShapeMismatchException('Table values do not match its labels', self.values.shape, (len(self.rows), len(self.columns)))

    def cell(self, row: str, column: str) -> float:
        return float(self.values[self.rows.index(row), self.columns.index(column)])

    def row(self, row: str) -> Dict[str, float]:
        return {c: self.cell(row, c) for c in self.columns}

    def as_dict(self) -> dict:
        return {
            'title': self.title,
            'rows': list(self.rows),
            'columns': list(self.columns),
            'values': [[float(v) for v in row] for row in self.values],
        }


@dataclass(frozen=True)
class AlphaSweepResult:
    table: Table
    best_alpha: float


def _check_dims(entries: Mapping[str, NorpParams]):
    shapes = {label: params.p_tilde.shape for label, params in entries.items()}
    if len(set(shapes.values())) > 1:
        raise ShapeMismatchException(f'Patterns differ in grid size: {shapes}')


def _ordered_rows(labels: Sequence[str]) -> List[str]:
    known = [label for label in COMPARE_ROW_ORDER if label in labels]
    return known + [label for label in labels if label not in COMPARE_ROW_ORDER]


def asr_table(
    title: str,
    entries: Mapping[str, NorpParams],
    detectors: Sequence[Detector],
    constants: MaterialConstants,
    backgrounds: Sequence[RgbtImage],
    config: EvalConfig,
    setup: RenderSetup,
    overlapping_rows: Sequence[str] = (),
    row_order: Sequence[str] = None
) -> Table:
    if not entries:
        raise IllegalArgumentException('Table needs at least one pattern')
    _check_dims(entries)

    rows = list(row_order or entries.keys())
    values = np.zeros((len(rows), len(detectors)))
    for i, label in enumerate(rows):
        for j, detector in enumerate(detectors):
            result = sweep(entries[label], constants, detector, backgrounds, config, setup, overlapping=label in overlapping_rows)
            values[i, j] = result.overall_asr

    return Table(title=title, rows=tuple(rows), columns=tuple(d.name for d in detectors), values=values)


def compare(
    entries: Mapping[str, NorpParams],
    detectors: Sequence[Detector],
    constants: MaterialConstants,
    backgrounds: Sequence[RgbtImage],
    config: EvalConfig,
    setup: RenderSetup
) -> Table:
    """
    Method comparison: one row per supplied method or control, one column per detector.

    A row labelled ORP renders its pattern with film laid over the print instead of beside it.
    """
    return asr_table(
        'Attack success rate by method', entries, detectors, constants, backgrounds, config, setup,
        overlapping_rows=('ORP',), row_order=_ordered_rows(list(entries))
    )


def transfer_matrix(
    entries: Mapping[str, NorpParams],
    detectors: Sequence[Detector],
    constants: MaterialConstants,
    backgrounds: Sequence[RgbtImage],
    config: EvalConfig,
    setup: RenderSetup
) -> Table:
    """
    Rows are the detectors a pattern was optimized against (plus Ensemble), columns the whole
    zoo including held-out detectors.
    """
    return asr_table('Attack success rate by training target', entries, detectors, constants, backgrounds, config, setup)


def alpha_sweep(
    runs: Mapping[float, Sequence[NorpParams]],
    detectors: Sequence[Detector],
    constants: MaterialConstants,
    backgrounds: Sequence[RgbtImage],
    config: EvalConfig,
    setup: RenderSetup
) -> AlphaSweepResult:
    """
    Mean ASR over seeds per discretization probability; the last column averages the detectors.
    """
    if not runs:
        raise IllegalArgumentException('Alpha sweep needs at least one alpha')

    alphas = sorted(runs)
    values = np.zeros((len(alphas), len(detectors) + 1))
    for i, alpha in enumerate(alphas):
        seeds = runs[alpha]
        if not seeds:
            raise IllegalArgumentException(f'No runs supplied for alpha {alpha}')
        _check_dims({f'{alpha}/{k}': p for k, p in enumerate(seeds)})
        for j, detector in enumerate(detectors):
            values[i, j] = np.mean([sweep(p, constants, detector, backgrounds, config, setup).overall_asr for p in seeds])
        values[i, -1] = np.mean(values[i, :-1])

    table = Table(
        title='Attack success rate by discretization probability',
        rows=tuple(f'{alpha:g}' for alpha in alphas),
        columns=tuple(d.name for d in detectors) + ('mean',),
        values=values
    )
    return AlphaSweepResult(table=table, best_alpha=float(alphas[int(np.argmax(values[:, -1]))]))


def _csv_text(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['row', 'column', 'asr'])
    for i, row in enumerate(table.rows):
        for j, column in enumerate(table.columns):
            writer.writerow([row, column, f'{table.values[i, j]:.6f}'])
    return buffer.getvalue()


def format_table(table: Table) -> str:
    header = [''] + list(table.columns)
    body = [[row] + [f'{v:.3f}' for v in table.values[i]] for i, row in enumerate(table.rows)]
    widths = [max(len(line[k]) for line in [header] + body) for k in range(len(header))]

    def line(cells):
        return '  '.join(cell.ljust(width) if k == 0 else cell.rjust(width) for k, (cell, width) in enumerate(zip(cells, widths)))

    rule = '-' * len(line(header))
    return '\n'.join([table.title, rule, line(header), rule] + [line(cells) for cells in body] + [rule]) + '\n'


def write_table(table: Table, out_dir: str, name: str) -> List[str]:
    """
    Writes `<name>.csv` (one line per cell), `<name>.json` and an aligned `<name>.txt`.
    """
    ensure_dir(out_dir)
    paths = [os.path.join(out_dir, f'{name}.{ext}') for ext in ('csv', 'json', 'txt')]
    write_to_file(paths[0], _csv_text(table))
    write_to_file(paths[1], json.dumps(table.as_dict(), indent=2, sort_keys=True))
    write_to_file(paths[2], format_table(table))
    return paths
