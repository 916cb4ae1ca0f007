import filecmp
import os
import unittest

import numpy as np
import pandas as pd
from mock import patch

from lesion_ensemble import engine
from lesion_ensemble.config import desk_config
from lesion_ensemble.engine import (RUN_MANIFEST, RunManifest, open_run, report, run_all, run_stage,
                                    summarize_scores, write_report)
from lesion_ensemble.exceptions import IncompleteRunError, StageFailedError
from lesion_ensemble.stages import EVALUATION_FILE, BaseStages, PipelineStages, pipeline_stage
from lesion_ensemble.utils import read_json, seed_everything, write_json
from . import TempDirMixin, TestCase


class CountingStages(BaseStages):
    calls = []
    fail_on = None

    def __init__(self, config):
        self.config = config
        self.root = config.output_root

    def _write(self, name):
        type(self).calls.append(name)
        if type(self).fail_on == name:
            raise RuntimeError('boom')
        path = self.root / 'out' / (name + '.txt')
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(name)
        return {'artifacts': {name: 'out/{0}.txt'.format(name)}, 'metrics': {'value': len(name)}}

    @pipeline_stage(order=2)
    def second_stage(self):
        return self._write('second_stage')

    @pipeline_stage(order=1, label='The first')
    def first_stage(self):
        return self._write('first_stage')

    @pipeline_stage(order=3)
    def partial_stage(self, part=None):
        result = self._write('partial_stage')
        result['complete'] = part == 'last'
        return result


class RegistryTests(TestCase):

    def test_stages_sorted_by_order(self):
        stages = CountingStages.get_all_stages()
        self.assertEqual([s['name'] for s in stages], ['first_stage', 'second_stage', 'partial_stage'])
        self.assertEqual(stages[0]['label'], 'The first')
        self.assertEqual(stages[1]['label'], 'Second Stage')
        self.assertEqual(stages[1]['command'], 'second-stage')

    def test_pipeline_order(self):
        self.assertEqual(PipelineStages.stage_names(),
                         ['ingest', 'train_hair', 'preprocess', 'split', 'sample', 'augment', 'train_seg',
                          'transplant', 'train_cls', 'weights', 'ensemble', 'evaluate', 'report'])

    def test_duplicate_order(self):
        class Clash(BaseStages):
            @pipeline_stage(order=1)
            def a(self):
                pass

            @pipeline_stage(order=1)
            def b(self):
                pass

        with self.assertRaises(AssertionError):
            Clash.get_all_stages()

    def test_order_must_be_an_integer(self):
        with self.assertRaises(AssertionError):
            pipeline_stage(order='1')(lambda self: None)


class ResumeTests(TempDirMixin, TestCase):

    def setUp(self):
        super(ResumeTests, self).setUp()
        CountingStages.calls = []
        CountingStages.fail_on = None
        self.config = desk_config(output_root=str(self.tmp / 'run'))

    def _run(self, config=None, force=False):
        return run_all(config or self.config, force=force, stages_class=CountingStages)

    def test_first_run_executes_everything(self):
        manifest = self._run()
        self.assertEqual(CountingStages.calls, ['first_stage', 'second_stage', 'partial_stage'])
        saved = read_json(self.tmp / 'run' / RUN_MANIFEST)
        self.assertEqual(saved['config_hash'], self.config.config_hash())
        self.assertTrue(saved['stages']['first_stage']['done'])
        self.assertEqual(manifest.metrics['second_stage'], {'value': len('second_stage')})
        self.assertTrue((self.tmp / 'run' / 'config.yaml').exists())

    def test_done_stages_are_skipped(self):
        self._run()
        CountingStages.calls = []
        self._run()
        # the partial stage never reported completion
        self.assertEqual(CountingStages.calls, ['partial_stage'])

    def test_missing_artifact_reruns_its_stage(self):
        self._run()
        (self.tmp / 'run' / 'out' / 'second_stage.txt').unlink()
        CountingStages.calls = []
        self._run()
        self.assertEqual(CountingStages.calls, ['second_stage', 'partial_stage'])

    def test_force_reruns_everything(self):
        self._run()
        CountingStages.calls = []
        self._run(force=True)
        self.assertEqual(len(CountingStages.calls), 3)

    def test_config_change_discards_the_manifest(self):
        self._run()
        CountingStages.calls = []
        self._run(config=self.config.with_overrides(seed=self.config.seed + 1))
        self.assertEqual(len(CountingStages.calls), 3)

    def test_output_root_independent_settings_keep_the_manifest(self):
        self._run()
        CountingStages.calls = []
        self._run(config=self.config.with_overrides(log_level='DEBUG'))
        self.assertEqual(CountingStages.calls, ['partial_stage'])

    def test_failure_is_recorded_and_resumed(self):
        CountingStages.fail_on = 'second_stage'
        with self.assertRaises(StageFailedError) as ctx:
            self._run()
        self.assertEqual(ctx.exception.stage, 'second_stage')
        manifest = RunManifest.load(self.tmp / 'run')
        self.assertEqual(manifest.failed_stage, 'second_stage')
        self.assertIn('boom', manifest.stages['second_stage'].error)
        self.assertFalse(manifest.stages['second_stage'].done)

        CountingStages.fail_on = None
        CountingStages.calls = []
        manifest = self._run()
        self.assertEqual(CountingStages.calls, ['second_stage', 'partial_stage'])
        self.assertIsNone(manifest.failed_stage)

    def test_stages_are_seeded_by_order(self):
        with patch.object(engine, 'seed_everything') as seed:
            self._run()
        seeds = [call.args[0] for call in seed.call_args_list]
        self.assertEqual(seeds, [self.config.seed, self.config.seed + 1, self.config.seed + 2,
                                 self.config.seed + 3])

    def test_single_stage_with_options(self):
        self._run()
        CountingStages.calls = []
        manifest = run_stage(self.config, 'partial-stage', stages_class=CountingStages, part='last')
        self.assertEqual(CountingStages.calls, ['partial_stage'])
        self.assertTrue(manifest.stages['partial_stage'].done)

    def test_unknown_stage(self):
        with self.assertRaises(AssertionError):
            run_stage(self.config, 'bogus', stages_class=CountingStages)

    def test_open_run_on_fresh_root(self):
        manifest = open_run(self.config)
        self.assertEqual(manifest.stages, {})
        self.assertTrue(manifest.needs_run('first_stage'))


def _evaluation(member_scores):
    def block(score):
        return {'confusion': np.eye(7, dtype=int).tolist(),
                'metrics': {'balanced_accuracy': score, 'accuracy': score,
                            'tpr': {code: score for code in ('MEL', 'NV', 'BCC', 'AKIEC', 'BKL', 'DF', 'VASC')},
                            'present': {}}}
    return {'members': [block(s) for s in member_scores],
            'weighted': block(0.9),
            'unweighted': block(0.88)}


class ReportTests(TempDirMixin, TestCase):

    def test_summarize_scores(self):
        mean, std = summarize_scores([0.82, 0.84, 0.85, 0.83])
        self.assertAlmostEqual(mean, 0.835, places=12)
        self.assertAlmostEqual(std, np.std([0.82, 0.84, 0.85, 0.83], ddof=1), places=12)
        self.assertEqual(summarize_scores([0.8]), (0.8, 0.0))
        with self.assertRaises(ValueError):
            summarize_scores([])

    def test_write_report(self):
        write_json(self.tmp / EVALUATION_FILE, _evaluation([0.82, 0.84, 0.85, 0.83]))
        paths = write_report(self.tmp)
        summary = read_json(paths['summary'])
        self.assertAlmostEqual(summary['member_balanced_accuracy_mean'], 0.835)
        self.assertEqual(summary['n_members'], 4)
        self.assertEqual(summary['ensemble_weighted'], 0.9)
        models = pd.read_csv(paths['models'])
        self.assertEqual(list(models['model']), ['member_1', 'member_2', 'member_3', 'member_4',
                                                 'ensemble_weighted', 'ensemble_unweighted'])
        self.assertIn('0.835', paths['report'].read_text())
        self.assertTrue(paths['heatmap_weighted'].exists())
        self.assertEqual(len(pd.read_csv(paths['tpr'])), 6)

    def test_report_needs_evaluation(self):
        manifest = RunManifest(config_hash='x', root=self.tmp)
        with self.assertRaises(IncompleteRunError):
            report(manifest)


class EndToEndTests(TempDirMixin, TestCase):
    """ The whole pipeline on a tiny synthetic corpus. """

    def _config(self, root):
        return desk_config(
            output_root=str(root), seed=0,
            encoder={'growth_rate': 8, 'block_layers': [2, 2, 2], 'initial_channels': 16, 'input_side': 32},
            data={'synthetic_per_class': 20, 'synthetic_image_size': 32, 'synthetic_segmentation_per_class': 2},
            hair={'input_side': 32, 'train': {'epochs': 1, 'lr0': 0.05, 'momentum': 0.9,
                                              'batch_size': 16, 'loss': 'bce'}},
            seg={'epochs': 1, 'lr0': 0.05, 'momentum': 0.9, 'batch_size': 8, 'loss': 'bce_dice'},
            cls={'epochs': 3, 'lr0': 0.05, 'momentum': 0.9, 'batch_size': 16},
            sampler={'anchor': 'BCC', 'n_sets': 2})

    def test_run_all_and_repeat(self):
        first = run_all(self._config(self.tmp / 'a'))
        self.assertTrue(first.complete)
        predictions = pd.read_csv(self.tmp / 'a' / 'ensemble' / 'predictions.csv')
        dev = read_json(self.tmp / 'a' / 'split' / 'dev.json')
        self.assertEqual(len(predictions), len(dev['records']))
        self.assertEqual(len(predictions), 14)
        self.assertTrue((self.tmp / 'a' / 'report' / 'report.txt').exists())
        metrics = first.stages['evaluate'].metrics
        self.assertTrue(0.0 <= metrics['ensemble_balanced_accuracy'] <= 1.0)

        run_all(self._config(self.tmp / 'b'))
        for relative in ('ensemble/predictions.csv', 'ensemble/weights.csv', 'evaluation/metrics.json'):
            self.assertTrue(filecmp.cmp(str(self.tmp / 'a' / relative), str(self.tmp / 'b' / relative),
                                        shallow=False), relative)

        (self.tmp / 'a' / 'ensemble' / 'predictions.csv').unlink()
        with patch.object(engine, 'seed_everything', wraps=seed_everything) as seed:
            run_all(self._config(self.tmp / 'a'))
        # run_all seeds once, then only the ensemble stage (order 110) runs again
        self.assertEqual([call.args[0] for call in seed.call_args_list], [0, 110])
        self.assertTrue((self.tmp / 'a' / 'ensemble' / 'predictions.csv').exists())


@unittest.skipUnless(os.environ.get('LESION_ENSEMBLE_SLOW'), 'set LESION_ENSEMBLE_SLOW=1 for desk-scale runs')
class DeskRunTests(TempDirMixin, TestCase):
    """ The desk configuration end to end, twice. Takes about half an hour on a CPU. """

    def test_desk_run_separates_the_classes(self):
        first = run_all(desk_config(output_root=str(self.tmp / 'a'), seed=0))
        self.assertGreaterEqual(first.stages['evaluate'].metrics['ensemble_balanced_accuracy'], 0.85)
        run_all(desk_config(output_root=str(self.tmp / 'b'), seed=0))
        for relative in ('ensemble/predictions.csv', 'ensemble/labels.csv', 'evaluation/metrics.json'):
            self.assertTrue(filecmp.cmp(str(self.tmp / 'a' / relative), str(self.tmp / 'b' / relative),
                                        shallow=False), relative)
