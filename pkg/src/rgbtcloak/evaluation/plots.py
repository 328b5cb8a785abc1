import os
from typing import List, Sequence

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from rgbtcloak.evaluation.asr import SweepResult  # noqa: E402
from rgbtcloak.exception import IllegalArgumentException  # noqa: E402
from rgbtcloak.utils.filesystem import ensure_dir  # noqa: E402

FORMATS = ('png', 'svg')

# fixed ids and no timestamps, so reruns write identical files
matplotlib.rcParams['svg.hashsalt'] = 'rgbtcloak'
_METADATA = {
    'png': {'Software': None},
    'svg': {'Date': None, 'Creator': None},
}


def _savefig(fig, out_dir: str, name: str) -> List[str]:
    paths = []
    for fmt in FORMATS:
        path = os.path.join(out_dir, f'{name}.{fmt}')
        fig.savefig(path, dpi=150, bbox_inches='tight', metadata=_METADATA[fmt])
        paths.append(path)

    plt.close(fig)
    return paths


def plot_asr_by_angle(results: Sequence[SweepResult], out_dir: str) -> List[str]:
    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection='polar')
    for result in results:
        theta = np.deg2rad(np.append(result.angles, result.angles[0]))
        values = result.angle_marginal()
        ax.plot(theta, np.append(values, values[0]), marker='o', label=result.detector)

    ax.set_ylim(0.0, 1.0)
    ax.set_title('ASR by viewing angle')
    ax.legend(loc='lower left', bbox_to_anchor=(0.9, 0.9), fontsize='small')
    return _savefig(fig, out_dir, 'asr_vs_angle')


def plot_asr_by_distance(results: Sequence[SweepResult], out_dir: str) -> List[str]:
    fig, ax = plt.subplots(figsize=(7, 4))
    for result in results:
        ax.plot(result.distances, result.distance_marginal(), marker='o', label=result.detector)

    ax.set_xlabel('distance [m]')
    ax.set_ylabel('ASR')
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize='small')
    ax.set_title('ASR by distance')
    return _savefig(fig, out_dir, 'asr_vs_distance')


def render_plots(results: Sequence[SweepResult], out_dir: str) -> List[str]:
    """
    Polar ASR-by-angle chart and ASR-by-distance line chart, one series per detector, as PNG and SVG.
    """
    if not results:
        raise IllegalArgumentException('Nothing to plot, no sweep results supplied')

    ensure_dir(out_dir)
    return plot_asr_by_angle(results, out_dir) + plot_asr_by_distance(results, out_dir)
