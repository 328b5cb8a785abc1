import csv
import json
import os
from dataclasses import dataclass, replace
from tempfile import TemporaryDirectory
from typing import List

import numpy as np

from common.extended_test_case import ExtendedTestCase
from common.fixtures import TEXTURE_HEIGHT, TEXTURE_WIDTH, TINY_EVAL, flat_background, tiny_constants, tiny_setup, untrained_model
from rgbtcloak.attack.optimizers import clean_pattern, random_pattern
from rgbtcloak.composer.types import Box, RgbtImage
from rgbtcloak.detectors.decode import Detection
from rgbtcloak.detectors.model import FusionArch
from rgbtcloak.evaluation.asr import EitherDetector, ModelDetector, SweepResult, asr, eval_texture, sweep
from rgbtcloak.evaluation.metrics import EvalConfig, iou, is_detected, precision_recall
from rgbtcloak.evaluation.plots import render_plots
from rgbtcloak.evaluation.tables import Table, alpha_sweep, compare, format_table, transfer_matrix, write_table
from rgbtcloak.exception import IllegalArgumentException, ShapeMismatchException
from rgbtcloak.norp.pattern import NorpParams, init_params


def _person_box(image: RgbtImage, background: RgbtImage):
    changed = np.any(image.stacked() != background.stacked(), axis=2)
    return changed, Box.of_mask(changed)


@dataclass(frozen=True)
class _DiffDetector:
    """
    Finds every pasted person exactly by comparing against the known background.
    """
    background: RgbtImage
    name: str = 'diff'

    def detect(self, image: RgbtImage) -> List[Detection]:
        _, box = _person_box(image, self.background)
        return [Detection(box, 1.0, (0, 0))] if box is not None else []


@dataclass(frozen=True)
class _WarmthDetector:
    """
    Finds the person only when the pasted region reads warm on average.
    """
    background: RgbtImage
    name: str = 'warmth'

    def detect(self, image: RgbtImage) -> List[Detection]:
        changed, box = _person_box(image, self.background)
        if box is None or image.thermal[changed].mean() < 0.5:
            return []
        return [Detection(box, 1.0, (0, 0))]


@dataclass(frozen=True)
class _BlindDetector:
    name: str = 'blind'

    def detect(self, image: RgbtImage) -> List[Detection]:
        return []


def _uniform(p_tilde: float) -> NorpParams:
    return NorpParams(rgb=np.full((TEXTURE_HEIGHT, TEXTURE_WIDTH, 3), 0.3), p_tilde=np.full((TEXTURE_HEIGHT, TEXTURE_WIDTH), p_tilde))


def _detection(box: Box, confidence: float = 0.9) -> Detection:
    return Detection(box, confidence, (0, 0))


class TestMetrics(ExtendedTestCase):

    def test_iou_should_measure_overlap(self):
        self.assertEqual(1.0, iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)))
        self.assertEqual(0.0, iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)))
        self.assertAlmostEqual(1.0 / 3.0, iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)))

    def test_iou_of_zero_area_boxes_should_only_match_itself(self):
        self.assertEqual(1.0, iou(Box(3, 3, 3, 3), Box(3, 3, 3, 3)))
        self.assertEqual(0.0, iou(Box(3, 3, 3, 3), Box(0, 0, 10, 10)))

    def test_detection_should_need_confidence_and_overlap(self):
        gt = Box(0, 0, 10, 20)
        config = EvalConfig()

        self.assertTrue(is_detected([_detection(Box(0, 0, 10, 18))], gt, config))
        self.assertTrue(is_detected([_detection(Box(0, 0, 10, 20), 0.6)], gt, config))
        self.assertFalse(is_detected([_detection(Box(0, 0, 10, 20), 0.59)], gt, config))
        self.assertFalse(is_detected([_detection(Box(0, 0, 10, 9))], gt, config))
        self.assertFalse(is_detected([], gt, config))

    def test_precision_should_be_one_without_detections(self):
        self.assertEqual((1.0, 0.0), precision_recall([([], Box(0, 0, 10, 10)), ([], None)]))

    def test_precision_recall_should_count_scenes_and_detections(self):
        gt = Box(0, 0, 10, 10)
        per_scene = [
            ([_detection(gt), _detection(Box(0, 0, 10, 9))], gt),
            ([_detection(Box(30, 30, 40, 40))], gt),
            ([_detection(gt)], None),
            ([_detection(gt, 0.1)], None),
        ]

        precision, recall = precision_recall(per_scene)

        self.assertEqual(0.5, recall)
        self.assertEqual(0.25, precision)

    def test_config_should_validate_protocol(self):
        invalid = [
            dict(iou_threshold=0.0), dict(conf_threshold=1.0), dict(angles=()), dict(angles=(360.0,)),
            dict(distances=(0.0,)), dict(n_backgrounds=0),
        ]
        for changes in invalid:
            with self.assertRaises(IllegalArgumentException, msg=str(changes)):
                EvalConfig(**changes)

    def test_default_grid_should_cover_twenty_angles_and_eight_distances(self):
        config = EvalConfig()

        self.assertEqual(20, len(config.angles))
        self.assertEqual((2.5, 20.0), (config.distances[0], config.distances[-1]))
        self.assertEqual(8, len(config.distances))
        self.assertEqual(32, config.n_backgrounds)


class TestSweep(ExtendedTestCase):

    def test_exact_detector_should_find_every_person(self):
        background = flat_background()
        params = random_pattern(TEXTURE_WIDTH, TEXTURE_HEIGHT, tiny_constants(), 0)

        result = sweep(params, tiny_constants(), _DiffDetector(background), [background], TINY_EVAL, tiny_setup())

        self.assertEqual(0.0, result.overall_asr)
        self.assertEqual(4, result.total_targets)

    def test_blind_detector_should_miss_every_person(self):
        background = flat_background()
        params = random_pattern(TEXTURE_WIDTH, TEXTURE_HEIGHT, tiny_constants(), 0)

        entry = asr(params, tiny_constants(), _BlindDetector(), [background, background], TINY_EVAL, tiny_setup())

        self.assertEqual(1.0, entry.asr)
        self.assertEqual(8, entry.targets)
        self.assertEqual('blind', entry.detector)

    def test_film_clothing_should_evade_warmth_detector(self):
        background = flat_background()
        detector = _WarmthDetector(background)

        film = sweep(_uniform(0.0), tiny_constants(), detector, [background], TINY_EVAL, tiny_setup())
        fabric = sweep(_uniform(1.0), tiny_constants(), detector, [background], TINY_EVAL, tiny_setup())

        self.assertEqual(1.0, film.overall_asr)
        self.assertEqual(0.0, fabric.overall_asr)

    def test_either_detector_should_find_what_any_member_finds(self):
        background = flat_background()
        either = EitherDetector('either', (_BlindDetector(), _WarmthDetector(background)))

        result = sweep(_uniform(1.0), tiny_constants(), either, [background], TINY_EVAL, tiny_setup())

        self.assertEqual(0.0, result.overall_asr)
        self.assertEqual('either', result.detector)

    def test_sweep_should_not_depend_on_worker_count(self):
        background = flat_background()
        detector = _WarmthDetector(background)
        params = random_pattern(TEXTURE_WIDTH, TEXTURE_HEIGHT, tiny_constants(), 3)

        serial = sweep(params, tiny_constants(), detector, [background], TINY_EVAL, tiny_setup())
        threaded = sweep(params, tiny_constants(), detector, [background], replace(TINY_EVAL, workers=4), tiny_setup())

        self.assertArrayEqual(serial.undetected, threaded.undetected)

    def test_evaluation_should_require_binarized_pattern(self):
        with self.assertRaisesRegex(IllegalArgumentException, 'binarize'):
            eval_texture(init_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 0), tiny_constants())

    def test_overlapping_texture_should_differ_on_film_cells_only(self):
        params = random_pattern(TEXTURE_WIDTH, TEXTURE_HEIGHT, tiny_constants(), 1)

        plain = eval_texture(params, tiny_constants())
        overlapping = eval_texture(params, tiny_constants(), overlapping=True)

        fabric = params.p_tilde == 1.0
        self.assertArrayAlmostEqual(plain.rgb[fabric], overlapping.rgb[fabric])
        self.assertArrayAlmostEqual(plain.thermal, overlapping.thermal)
        self.assertFalse(np.allclose(plain.rgb[~fabric], overlapping.rgb[~fabric]))

    def test_model_detector_should_take_model_name(self):
        detector = ModelDetector(untrained_model(FusionArch.MID), 0.6)

        self.assertEqual('Mid', detector.name)
        self.assertTrue(all(d.confidence >= 0.6 for d in detector.detect(flat_background())))

    def test_sweep_result_should_weigh_cells_by_targets(self):
        result = SweepResult('d', (0.0, 90.0), (2.5, 5.0), np.array([[2, 2], [2, 2]]), np.array([[2, 1], [0, 0]]))

        self.assertEqual(3 / 8, result.overall_asr)
        self.assertArrayEqual([0.75, 0.0], result.angle_marginal())
        self.assertArrayEqual([0.5, 0.25], result.distance_marginal())
        self.assertDictContainsElements({'detector': 'd', 'targets': 8, 'undetected': 3}, result.as_dict())


class TestTables(ExtendedTestCase):

    def test_compare_should_order_rows_and_columns(self):
        background = flat_background()
        entries = {'SDCO': _uniform(0.0), 'Custom': _uniform(1.0), 'Clean': clean_pattern(tiny_constants(), 0)}
        detectors = [_WarmthDetector(background), _BlindDetector()]

        table = compare(entries, detectors, tiny_constants(), [background], TINY_EVAL, tiny_setup())

        self.assertEqual(('Clean', 'SDCO', 'Custom'), table.rows)
        self.assertEqual(('warmth', 'blind'), table.columns)
        self.assertEqual({'warmth': 1.0, 'blind': 1.0}, table.row('SDCO'))
        self.assertEqual(0.0, table.cell('Clean', 'warmth'))

    def test_transfer_should_keep_row_order(self):
        background = flat_background()
        entries = {'Mid': _uniform(1.0), 'Early': _uniform(0.0)}

        table = transfer_matrix(entries, [_WarmthDetector(background)], tiny_constants(), [background], TINY_EVAL, tiny_setup())

        self.assertEqual(('Mid', 'Early'), table.rows)
        self.assertArrayEqual([[0.0], [1.0]], table.values)

    def test_tables_should_reject_patterns_of_different_grids(self):
        entries = {'a': _uniform(1.0), 'b': NorpParams(rgb=np.zeros((2, 2, 3)), p_tilde=np.ones((2, 2)))}

        with self.assertRaises(ShapeMismatchException):
            compare(entries, [_BlindDetector()], tiny_constants(), [flat_background()], TINY_EVAL, tiny_setup())

    def test_alpha_sweep_should_pick_best_mean_asr(self):
        background = flat_background()
        runs = {0.7: [_uniform(1.0)], 0.3: [_uniform(0.0), _uniform(0.0)], 0.5: [_uniform(0.0), _uniform(1.0)]}

        result = alpha_sweep(runs, [_WarmthDetector(background)], tiny_constants(), [background], TINY_EVAL, tiny_setup())

        self.assertEqual(('0.3', '0.5', '0.7'), result.table.rows)
        self.assertEqual(('warmth', 'mean'), result.table.columns)
        self.assertArrayEqual([[1.0, 1.0], [0.5, 0.5], [0.0, 0.0]], result.table.values)
        self.assertEqual(0.3, result.best_alpha)

    def test_alpha_sweep_should_reject_empty_input(self):
        with self.assertRaises(IllegalArgumentException):
            alpha_sweep({}, [_BlindDetector()], tiny_constants(), [flat_background()], TINY_EVAL, tiny_setup())
        with self.assertRaises(IllegalArgumentException):
            alpha_sweep({0.5: []}, [_BlindDetector()], tiny_constants(), [flat_background()], TINY_EVAL, tiny_setup())

    def test_table_should_validate_shape(self):
        with self.assertRaises(ShapeMismatchException):
            Table('t', ('a',), ('x', 'y'), np.zeros((2, 2)))

    def test_write_table_should_write_csv_json_and_text(self):
        table = Table('Attack success rate', ('Clean', 'SDCO'), ('Early', 'Mid'), np.array([[0.0, 0.125], [0.75, 1.0]]))

        with TemporaryDirectory() as tmp:
            paths = write_table(table, os.path.join(tmp, 'tables'), 'compare')
            with open(paths[0], newline='') as f:
                rows = list(csv.reader(f))
            as_json = json.loads(open(paths[1]).read())
            text = open(paths[2]).read()

        self.assertEqual(['row', 'column', 'asr'], rows[0])
        self.assertEqual(['SDCO', 'Early', '0.750000'], rows[3])
        self.assertEqual(5, len(rows))
        self.assertEqual(table.as_dict(), as_json)
        self.assertIn('Attack success rate', text)
        self.assertIn('0.125', text)

    def test_format_table_should_align_columns(self):
        table = Table('t', ('Clean', 'SDCO'), ('Early',), np.array([[0.0], [1.0]]))

        lines = format_table(table).splitlines()

        self.assertEqual('t', lines[0])
        self.assertEqual(len(lines[2]), len(lines[4]))
        self.assertTrue(lines[5].startswith('SDCO '))


class TestPlots(ExtendedTestCase):

    def test_render_plots_should_write_png_and_svg(self):
        results = [
            SweepResult('Early', (0.0, 90.0, 180.0), (2.5, 5.0), np.full((3, 2), 2), np.array([[0, 1], [2, 2], [1, 0]])),
            SweepResult('Mid', (0.0, 90.0, 180.0), (2.5, 5.0), np.full((3, 2), 2), np.zeros((3, 2), dtype=int)),
        ]

        with TemporaryDirectory() as tmp:
            paths = render_plots(results, tmp)
            sizes = [os.path.getsize(p) for p in paths]

        self.assertEqual(['asr_vs_angle.png', 'asr_vs_angle.svg', 'asr_vs_distance.png', 'asr_vs_distance.svg'],
                         [os.path.basename(p) for p in paths])
        self.assertTrue(all(size > 0 for size in sizes))

    def test_render_plots_should_reject_empty_results(self):
        with TemporaryDirectory() as tmp:
            with self.assertRaises(IllegalArgumentException):
                render_plots([], tmp)
