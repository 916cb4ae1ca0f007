from dataclasses import replace

import numpy as np
import pandas as pd

from lesion_ensemble.ensemble import (compute_weights, mean_scores, predict, read_weights, run_ensemble,
                                      weighted_scores, write_predictions)
from lesion_ensemble.exceptions import DegenerateScoreError, ModelSpecError
from lesion_ensemble.fields import CLASS_CODES, ClassLabel
from lesion_ensemble.metrics import ConfusionMatrix, confusion
from lesion_ensemble.nets import EncoderSpec, build_cls, load_checkpoint, save_checkpoint
from lesion_ensemble.synth import SynthSpec, generate_synthetic
from lesion_ensemble.trainer import evaluate_cls
from . import TempDirMixin, TestCase


def _random_instance(rng, images=5, classes=7, networks=4):
    P = rng.random((images, classes, networks))
    P /= P.sum(axis=1, keepdims=True)
    W = rng.random((networks, classes))
    return P, W


def _triple_loop(P, W):
    images, classes, networks = P.shape
    out = np.zeros((images, classes))
    for i in range(images):
        denominator = 0.0
        for j in range(classes):
            for k in range(networks):
                denominator += W[k, j] * P[i, j, k]
        for j in range(classes):
            numerator = 0.0
            for k in range(networks):
                numerator += W[k, j] * P[i, j, k]
            out[i, j] = numerator / denominator
    return out


class WeightTests(TestCase):

    def test_two_class_tpr_weights(self):
        weights = compute_weights([ConfusionMatrix(np.array([[3, 1], [2, 2]]))])
        np.testing.assert_allclose(weights, [[0.75, 0.5]])

    def test_perfect_members_give_unit_weights(self):
        labels = list(range(7)) * 2
        weights = compute_weights([confusion(labels, labels)] * 4)
        np.testing.assert_array_equal(weights, np.ones((4, 7)))

    def test_never_predicted_class_has_zero_weight(self):
        weights = compute_weights([confusion([0, 1, 1], [0, 0, 0])])
        self.assertEqual(weights[0, 1], 0.0)
        self.assertEqual(weights[0, 2], 0.0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            compute_weights([ConfusionMatrix(np.eye(2)), ConfusionMatrix(np.eye(7))])
        with self.assertRaises(ValueError):
            compute_weights([])


class WeightedScoreTests(TestCase):

    def test_worked_example(self):
        P = np.array([[[0.6, 0.8], [0.4, 0.2]]])
        scores = weighted_scores(P, np.ones((2, 2)))
        np.testing.assert_allclose(scores, [[0.7, 0.3]], atol=1e-12)
        self.assertEqual(predict(scores), [0])

    def test_single_network_with_uniform_weights(self):
        P, _ = _random_instance(np.random.default_rng(0), networks=1)
        np.testing.assert_allclose(weighted_scores(P, np.full((1, 7), 0.4)), P[:, :, 0], atol=1e-12)

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            P, W = _random_instance(rng)
            diff = np.abs(weighted_scores(P, W) - _triple_loop(P, W)).max()
            self.assertLess(diff, 1e-12)

    def test_rows_are_stochastic(self):
        P, W = _random_instance(np.random.default_rng(2), images=20)
        np.testing.assert_allclose(weighted_scores(P, W).sum(axis=1), np.ones(20), atol=1e-9)

    def test_global_rescaling_is_invisible(self):
        P, W = _random_instance(np.random.default_rng(3))
        np.testing.assert_allclose(weighted_scores(P, W * 3.7), weighted_scores(P, W), rtol=0, atol=1e-12)

    def test_single_network_reduces_to_weighted_argmax(self):
        rng = np.random.default_rng(4)
        P, W = _random_instance(rng, images=30, networks=1)
        expected = (W[0][None, :] * P[:, :, 0]).argmax(axis=1)
        self.assertEqual([int(c) for c in predict(weighted_scores(P, W))], expected.tolist())

    def test_zero_denominator_names_the_image(self):
        P = np.zeros((2, 2, 1))
        P[0, 0, 0] = 1.0
        P[1, 1, 0] = 1.0
        W = np.array([[1.0, 0.0]])
        with self.assertRaises(DegenerateScoreError) as ctx:
            weighted_scores(P, W, image_ids=['a', 'b'])
        self.assertEqual(ctx.exception.image, 'b')
        self.assertIn('b', str(ctx.exception))

    def test_shape_disagreement(self):
        P, W = _random_instance(np.random.default_rng(5))
        with self.assertRaises(ValueError):
            weighted_scores(P, W.T)
        with self.assertRaises(ValueError):
            weighted_scores(P, -W)

    def test_mean_scores(self):
        P = np.array([[[0.6, 0.8], [0.4, 0.2]]])
        np.testing.assert_allclose(mean_scores(P), [[0.7, 0.3]])


class PredictTests(TestCase):

    def test_strict_argmax(self):
        self.assertEqual(predict([[0.7, 0.3, 0, 0, 0, 0, 0]]), [ClassLabel.MEL])

    def test_ties_go_to_lowest_index(self):
        self.assertEqual(predict(np.full((1, 7), 1 / 7.0)), [ClassLabel.MEL])
        self.assertEqual(predict([[0.1, 0.45, 0.45]]), [1])

    def test_empty(self):
        self.assertEqual(predict(np.zeros((0, 7))), [])


class PredictionFileTests(TempDirMixin, TestCase):

    def test_files(self):
        scores = np.eye(7)[[0, 6, 2]] * 0.9 + 0.1 / 7
        predictions, labels = write_predictions(scores, ['a', 'b', 'c'], self.tmp)
        frame = pd.read_csv(predictions)
        self.assertEqual(list(frame.columns), ['image'] + list(CLASS_CODES))
        self.assertEqual(len(frame), 3)
        self.assertEqual(list(pd.read_csv(labels)['label']), ['MEL', 'VASC', 'BCC'])


class RunEnsembleTests(TempDirMixin, TestCase):

    @classmethod
    def setUpClass(cls):
        cls.spec = EncoderSpec.desk(input_side=32)
        cls.images = generate_synthetic(SynthSpec(n_per_class=2, image_size=32, seed=7))

    def setUp(self):
        super(RunEnsembleTests, self).setUp()
        self.checkpoint = save_checkpoint(build_cls(self.spec, seed=0), self.tmp / 'cls.pt')
        self.model, _ = load_checkpoint(self.checkpoint)
        # label each image with the model's own guess so every predicted class has a positive rate
        _, self.own_predictions, _ = evaluate_cls(self.model, self.images)
        self.dev = self.images.with_records([replace(r, label=ClassLabel(int(p)))
                                             for r, p in zip(self.images.records, self.own_predictions)])

    def test_copies_of_one_member_agree_with_the_member(self):
        result = run_ensemble([self.checkpoint] * 3, self.dev, self.dev, self.tmp / 'out')
        self.assertEqual([int(c) for c in predict(result['scores'])], self.own_predictions.tolist())
        self.assertEqual(result['weights'].shape, (3, 7))
        self.assertTrue((result['weights'][0] == result['weights'][2]).all())

    def test_outputs_cover_the_target(self):
        target = self.images.with_records([replace(r, label=None) for r in self.images.records])
        result = run_ensemble([self.checkpoint] * 2, self.dev, target, self.tmp / 'out',
                              weights=np.ones((2, 7)))
        frame = pd.read_csv(result['predictions_path'])
        self.assertEqual(len(frame), len(target))
        self.assertEqual(list(frame['image']), target.ids)
        np.testing.assert_allclose(frame[list(CLASS_CODES)].sum(axis=1), np.ones(len(target)), atol=1e-9)
        np.testing.assert_array_equal(read_weights(result['weights_path']), np.ones((2, 7)))

    def test_member_metrics_are_reported(self):
        result = run_ensemble([self.checkpoint], self.dev, self.dev, self.tmp / 'out')
        self.assertEqual(len(result['member_metrics']), 1)
        self.assertEqual(result['member_metrics'][0].accuracy, 1.0)
        self.assertEqual(result['dev_scores'].shape, (len(self.dev), 7))

    def test_spec_mismatch(self):
        with self.assertRaises(ModelSpecError):
            run_ensemble([self.checkpoint], self.dev, self.dev, self.tmp / 'out',
                         spec=EncoderSpec.desk(input_side=64))

    def test_wrong_number_of_weight_rows(self):
        with self.assertRaises(ModelSpecError):
            run_ensemble([self.checkpoint] * 2, self.dev, self.dev, self.tmp / 'out',
                         weights=np.ones((3, 7)))
