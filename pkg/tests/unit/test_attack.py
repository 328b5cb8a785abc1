import json
import os
from tempfile import TemporaryDirectory

import numpy as np

from common.extended_test_case import ExtendedTestCase
from common.fixtures import FRAME_SIZE, TEXTURE_HEIGHT, TEXTURE_WIDTH, tiny_backgrounds, tiny_constants, tiny_setup, untrained_model
from rgbtcloak.attack.config import AttackConfig, AttackMethod
from rgbtcloak.attack.losses import RenderSetup, adversarial_loss, ensemble_loss, sample_scene, scene_at, texture_loss
from rgbtcloak.attack.optimizers import (
    clean_pattern, gumbel_noise, gumbel_softmax, material_logits, nosrd_optimize, optimize, random_pattern, random_run, sdco_optimize,
    straight_through
)
from rgbtcloak.attack.run import RUN_FILE, input_hash, load_run, save_run
from rgbtcloak.composer.render import CameraModel
from rgbtcloak.composer.types import EotConfig, Placement
from rgbtcloak.composer.uvmap import build_uv_maps
from rgbtcloak.detectors.model import FusionArch
from rgbtcloak.detectors.objective import DetectorPair
from rgbtcloak.diffgrad.grad import value_and_grad
from rgbtcloak.diffgrad.tensor import Tensor
from rgbtcloak.exception import IllegalArgumentException, ModelFormatException, ShapeMismatchException
from rgbtcloak.norp.pattern import binarize, default_constants, init_params, realize_variables, undecided_params
from rgbtcloak.utils.filesystem import read_file, write_to_file


def _config(method=AttackMethod.SDCO, **changes) -> AttackConfig:
    values = dict(method=method, iterations=3, batch=2, eta=0.05, log_every=0)
    values.update(changes)
    return AttackConfig(**values)


def _run(config: AttackConfig, observer=None, params0=None):
    params0 = params0 or undecided_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 0)
    return optimize(params0, tiny_constants(), untrained_model(FusionArch.EARLY), tiny_backgrounds(), config, tiny_setup(), observer)


def _directional_check(objective, leaves, rng, step=1e-6):
    """
    (analytic, numeric) derivative pairs along random directions through all leaves.
    """
    _, grads = value_and_grad(objective, leaves)
    pairs = []
    for _ in range(3):
        directions = [rng.normal(size=leaf.shape) for leaf in leaves]
        analytic = sum(float(np.sum(g.data * d)) for g, d in zip(grads, directions))
        values = []
        for sign in (1.0, -1.0):
            probe = [Tensor(leaf.data + sign * step * d) for leaf, d in zip(leaves, directions)]
            values.append(objective(*probe).item())
        pairs.append((analytic, (values[0] - values[1]) / (2.0 * step)))

    return pairs


class TestAttackConfig(ExtendedTestCase):

    def test_parse_should_accept_any_case(self):
        self.assertIs(AttackMethod.NO_SRD, AttackMethod.parse('nosrd'))

    def test_parse_should_reject_unknown_method(self):
        with self.assertRaises(IllegalArgumentException):
            AttackMethod.parse('PGD')

    def test_config_should_restore_from_dict(self):
        config = _config(AttackMethod.GUMBEL, alpha=0.3, ensemble_weights=(0.1, 0.2, 0.3, 0.4), eot=EotConfig(scale=0.2))

        self.assertEqual(config, AttackConfig.from_dict(json.loads(json.dumps(config.as_dict()))))

    def test_config_should_validate_settings(self):
        invalid = [
            dict(iterations=-1), dict(eta=0.0), dict(eta=float('nan')), dict(alpha=1.5), dict(batch=0), dict(gumbel_tau=0.0),
            dict(ensemble_weights=(1.0, 1.0)), dict(ensemble_weights=(1.0, -1.0, 0.0, 0.0)),
            dict(method=AttackMethod.ENSEMBLE, ensemble_weights=(0.0, 0.0, 0.0, 0.0)),
        ]
        for changes in invalid:
            with self.assertRaises(IllegalArgumentException, msg=str(changes)):
                AttackConfig(**changes)


class TestRelaxations(ExtendedTestCase):

    def test_gumbel_softmax_without_noise_should_recover_choice_at_unit_temperature(self):
        p = np.array([0.1, 0.5, 0.9])

        sample = gumbel_softmax(material_logits(Tensor(p)), np.zeros((3, 2)), 1.0)

        self.assertArrayAlmostEqual(p, sample.data, atol=1e-12)

    def test_gumbel_softmax_should_sharpen_at_low_temperature(self):
        sample = gumbel_softmax(material_logits(Tensor(np.array([0.3, 0.7]))), np.zeros((2, 2)), 0.01)

        self.assertArrayAlmostEqual([0.0, 1.0], sample.data, atol=1e-6)

    def test_gumbel_softmax_should_reject_non_positive_temperature(self):
        with self.assertRaises(IllegalArgumentException):
            gumbel_softmax(Tensor(np.zeros(2)), np.zeros((2, 2)), 0.0)

    def test_gumbel_noise_should_be_finite_per_category(self):
        noise = gumbel_noise((3, 4), np.random.default_rng(0))

        self.assertEqual((3, 4, 2), noise.shape)
        self.assertTrue(np.all(np.isfinite(noise)))

    def test_material_logits_should_stay_finite_at_bounds(self):
        self.assertTrue(np.all(np.isfinite(material_logits(Tensor(np.array([0.0, 1.0]))).data)))

    def test_straight_through_should_pass_gradient_unchanged(self):
        p = Tensor(np.array([0.2, 0.6, 0.9]), requires_grad=True)
        weights = np.array([1.0, -2.0, 3.0])

        value, (grad,) = value_and_grad(lambda leaf: (straight_through(leaf) * weights).sum(), [p])

        self.assertEqual(1.0, value)
        self.assertArrayEqual(weights, grad.data)

    def test_ensemble_loss_should_weigh_stage_losses(self):
        total = ensemble_loss([Tensor(np.array(2.0)), Tensor(np.array(4.0))], [0.25, 0.5])

        self.assertEqual(2.5, total.item())

    def test_ensemble_loss_should_validate_weights(self):
        with self.assertRaises(ShapeMismatchException):
            ensemble_loss([Tensor(np.array(1.0))], [0.5, 0.5])
        with self.assertRaises(IllegalArgumentException):
            ensemble_loss([Tensor(np.array(1.0))], [-0.5])


class TestLosses(ExtendedTestCase):

    def test_scene_at_should_box_the_rendered_person(self):
        setup = tiny_setup()
        background = tiny_backgrounds()[0]

        scene = scene_at(background, setup.uv_maps[0], Placement(32.0, 32.0, 2.5, 0.0), setup.camera)

        uv = setup.uv_maps[0]
        rows, cols = np.nonzero(uv.silhouette)
        self.assertEqual([24.0 + cols.min(), 16.0 + rows.min(), 25.0 + cols.max(), 17.0 + rows.max()], scene.gt_box.as_list())

    def test_sample_scene_should_be_reproducible(self):
        setup = tiny_setup()

        first = sample_scene(tiny_backgrounds(), setup, EotConfig(), np.random.default_rng(4))
        second = sample_scene(tiny_backgrounds(), setup, EotConfig(), np.random.default_rng(4))

        self.assertEqual(first.placement, second.placement)
        self.assertEqual(first.gt_box, second.gt_box)
        self.assertTrue(first.gt_box.inside(FRAME_SIZE, FRAME_SIZE))

    def test_zero_weight_targets_should_not_contribute(self):
        setup = tiny_setup()
        scene = sample_scene(tiny_backgrounds(), setup, EotConfig.identity(), np.random.default_rng(0))
        params = init_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 1)
        early = untrained_model(FusionArch.EARLY)

        def loss(targets):
            return adversarial_loss(targets, params, tiny_constants(), scene, setup.uv_maps, EotConfig.identity(),
                                    np.random.default_rng(0), camera=setup.camera).item()

        self.assertAlmostEqual(loss(early), loss([(early, 1.0), (untrained_model(FusionArch.MID), 0.0)]), places=12)

    def test_end_to_end_gradient_should_match_finite_differences(self):
        setup = RenderSetup(uv_maps=tuple(build_uv_maps(4, 4, 4, sprite_size=(32, 16))), camera=CameraModel(reference_height_px=32.0))
        constants = default_constants(4, 4, 0)
        scene = scene_at(tiny_backgrounds()[0], setup.uv_maps[1], Placement(30.0, 33.0, 2.5, 90.0), setup.camera)
        rng = np.random.default_rng(7)
        targets = [
            untrained_model(FusionArch.EARLY),
            untrained_model(FusionArch.LATE),
            DetectorPair(untrained_model(FusionArch.INDEPENDENT_RGB), untrained_model(FusionArch.INDEPENDENT_T)),
        ]

        for target in targets:
            def objective(rgb, p_tilde):
                texture = realize_variables(rgb, p_tilde, constants)
                return texture_loss(target, texture, scene, setup, EotConfig.identity(), np.random.default_rng(0))

            leaves = [
                Tensor(rng.uniform(0.1, 0.9, size=(4, 4, 3)), requires_grad=True),
                Tensor(rng.uniform(0.1, 0.9, size=(4, 4)), requires_grad=True),
            ]
            for analytic, numeric in _directional_check(objective, leaves, rng):
                self.assertLessEqual(abs(analytic - numeric), 1e-6 + 1e-4 * abs(numeric), f'{target.name} {analytic} vs {numeric}')


class TestOptimizers(ExtendedTestCase):

    def test_sdco_should_route_gradients_by_the_mask(self):
        captured = []

        _run(_config(iterations=50, batch=1, alpha=0.5), observer=captured.append)

        self.assertEqual(50, len(captured))
        for capture in captured:
            discrete = capture.mask == 1
            self.assertTrue(np.all(capture.rgb_grad[~discrete] == 0.0), capture.iteration)
            self.assertTrue(np.all(capture.p_tilde_grad[discrete] == 0.0), capture.iteration)
        # a fresh mask every iteration
        self.assertFalse(all(np.array_equal(captured[0].mask, c.mask) for c in captured[1:]))

    def test_sdco_should_return_binarized_pattern_and_trace(self):
        run = _run(_config())

        self.assertTrue(run.params.is_binarized())
        self.assertEqual(3, len(run.loss_trace))
        self.assertTrue(np.all(np.isfinite(run.loss_trace)))
        self.assertEqual('SDCO', run.method)
        self.assertEqual(run.loss_trace[-1], run.final_loss)

    def test_full_discretization_should_never_train_the_material(self):
        params0 = init_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 3)

        run = _run(_config(alpha=1.0), params0=params0)

        self.assertArrayEqual(binarize(params0).p_tilde, run.params.p_tilde)

    def test_no_discretization_should_never_train_the_colour(self):
        params0 = init_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 3)

        run = _run(_config(alpha=0.0), params0=params0)

        self.assertArrayEqual(params0.rgb, run.params.rgb)

    def test_runs_should_be_reproducible(self):
        config = _config(AttackMethod.GUMBEL, seed=11)

        self.assertEqual(_run(config), _run(config))

    def test_every_gradient_method_should_produce_a_binarized_pattern(self):
        for method in (AttackMethod.NO_SRD, AttackMethod.GUMBEL, AttackMethod.STE):
            run = _run(_config(method, iterations=2, batch=1))

            self.assertTrue(run.params.is_binarized(), method.value)
            self.assertEqual(method.value, run.method)

    def test_ensemble_should_optimize_weighted_targets(self):
        targets = [(untrained_model(FusionArch.EARLY), 0.5), (untrained_model(FusionArch.MID), 0.5)]
        config = _config(AttackMethod.ENSEMBLE, iterations=2, batch=1)

        run = optimize(undecided_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 0), tiny_constants(), targets, tiny_backgrounds(), config, tiny_setup())

        self.assertEqual('Ensemble', run.method)
        self.assertEqual(2, len(run.loss_trace))

    def test_zero_iterations_should_binarize_the_start(self):
        params0 = init_params(TEXTURE_WIDTH, TEXTURE_HEIGHT, 5)

        run = _run(_config(iterations=0), params0=params0)

        self.assertEqual(binarize(params0), run.params)
        self.assertEqual([], run.loss_trace)

    def test_optimizers_should_check_their_method(self):
        with self.assertRaisesRegex(IllegalArgumentException, 'expects method SDCO or Ensemble'):
            sdco_optimize(undecided_params(8, 6, 0), tiny_constants(), untrained_model(FusionArch.EARLY), tiny_backgrounds(),
                          _config(AttackMethod.STE), tiny_setup())
        with self.assertRaises(IllegalArgumentException):
            nosrd_optimize(undecided_params(8, 6, 0), tiny_constants(), untrained_model(FusionArch.EARLY), tiny_backgrounds(),
                           _config(AttackMethod.SDCO), tiny_setup())
        with self.assertRaises(IllegalArgumentException):
            random_run(undecided_params(8, 6, 0), tiny_constants(), _config(AttackMethod.SDCO))

    def test_attack_should_need_backgrounds(self):
        with self.assertRaises(IllegalArgumentException):
            optimize(undecided_params(8, 6, 0), tiny_constants(), untrained_model(FusionArch.EARLY), [], _config(), tiny_setup())


class TestControls(ExtendedTestCase):

    def test_random_method_should_skip_optimization(self):
        run = optimize(undecided_params(8, 6, 0), tiny_constants(), None, [], _config(AttackMethod.RANDOM, seed=2), tiny_setup())

        self.assertEqual([], run.loss_trace)
        self.assertTrue(run.params.is_binarized())
        self.assertEqual(random_pattern(8, 6, tiny_constants(), 2), run.params)

    def test_random_pattern_should_match_constants_grid(self):
        with self.assertRaises(IllegalArgumentException):
            random_pattern(6, 8, tiny_constants(), 0)

    def test_clean_pattern_should_be_all_fabric(self):
        params = clean_pattern(tiny_constants(), 0)

        self.assertTrue(np.all(params.p_tilde == 1.0))
        self.assertAllInRange(params.rgb, 0.0, 1.0)


class TestRunStorage(ExtendedTestCase):

    def test_save_and_load_should_restore_run(self):
        run = _run(_config(iterations=2, batch=1))

        with TemporaryDirectory() as tmp:
            save_run(run, tiny_constants(), tmp)
            loaded, constants = load_run(tmp)
            record = json.loads(read_file(os.path.join(tmp, RUN_FILE)))

        self.assertEqual(run, loaded)
        self.assertEqual(run.content_hash, loaded.content_hash)
        self.assertArrayEqual(tiny_constants().body_thermal, constants.body_thermal)
        self.assertEqual('SDCO', record['method'])
        self.assertEqual(run.final_loss, record['final_loss'])

    def test_load_should_detect_tampered_pattern(self):
        run = _run(_config(iterations=1, batch=1))

        with TemporaryDirectory() as tmp:
            path = save_run(run, tiny_constants(), tmp)
            record = json.loads(read_file(path))
            record['input_hash'] = '0' * 64
            write_to_file(path, json.dumps(record))

            with self.assertRaisesRegex(ModelFormatException, 'content hash'):
                load_run(tmp)

    def test_load_should_fail_without_record(self):
        with TemporaryDirectory() as tmp:
            with self.assertRaises(ModelFormatException):
                load_run(tmp)

    def test_input_hash_should_track_config(self):
        params0 = undecided_params(8, 6, 0)

        self.assertEqual(input_hash(params0, tiny_constants(), _config()), input_hash(params0, tiny_constants(), _config()))
        self.assertNotEqual(input_hash(params0, tiny_constants(), _config()), input_hash(params0, tiny_constants(), _config(alpha=0.2)))
