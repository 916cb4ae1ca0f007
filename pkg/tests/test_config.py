from lesion_ensemble.config import (PipelineConfig, desk_config, load_config, save_config)
from lesion_ensemble.exceptions import ConfigError
from lesion_ensemble.fields import LOSS_BCE_DICE
from lesion_ensemble.nets import EncoderSpec
from . import TempDirMixin, TestCase


class DefaultsTests(TestCase):

    def test_published_schedule(self):
        config = PipelineConfig()
        self.assertEqual(config.encoder, EncoderSpec.full_scale())
        self.assertEqual(config.side, 448)
        self.assertEqual(config.seg.epochs, 100)
        self.assertEqual(config.cls.epochs, 50)
        self.assertEqual(config.cls.lr0, 0.001)
        self.assertEqual(config.sampler.anchor, 'BCC')
        self.assertEqual(config.sampler.n_sets, 4)
        self.assertTrue(config.paths.synthetic)

    def test_partial_section_keeps_preset(self):
        config = PipelineConfig.from_dict({'seg': {'epochs': 3}})
        self.assertEqual(config.seg.epochs, 3)
        self.assertEqual(config.seg.loss, LOSS_BCE_DICE)

    def test_desk_config(self):
        config = desk_config(output_root='/tmp/x', seed=4)
        self.assertEqual(config.side, 64)
        self.assertEqual(config.encoder.block_layers, (2, 2, 2))
        self.assertEqual(config.cls.seed, 4)
        self.assertEqual(config.output_root.as_posix(), '/tmp/x')


class ValidationTests(TestCase):

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            PipelineConfig.from_dict({'cls': {'learning_rate': 0.1}})
        self.assertIn('cls.learning_rate', str(ctx.exception))

    def test_invalid_values(self):
        bad = [{'sampler': {'anchor': 'XYZ'}},
               {'sampler': {'n_sets': 0}},
               {'ensemble': {'target': 'test'}},
               {'ensemble': {'target': 'external'}},
               {'paths': {'data_root': '/data'}},
               {'encoder': {'input_side': 100}},
               {'cls': {'decay': 1.5}},
               {'seg': 'fast'}]
        for data in bad:
            with self.assertRaises(ConfigError, msg=str(data)):
                PipelineConfig.from_dict(data)


class HashTests(TestCase):

    def test_hash_ignores_output_root_and_runtime(self):
        a = desk_config(output_root='runs/a')
        b = desk_config(output_root='runs/b').with_overrides(log_level='DEBUG', workers=4)
        self.assertEqual(a.config_hash(), b.config_hash())

    def test_hash_follows_semantics(self):
        self.assertNotEqual(desk_config(seed=0).config_hash(), desk_config(seed=1).config_hash())

    def test_seed_override_reaches_training_sections(self):
        config = desk_config().with_overrides(seed=9)
        self.assertEqual((config.seed, config.seg.seed, config.cls.seed, config.hair.train.seed), (9, 9, 9, 9))


class FileTests(TempDirMixin, TestCase):

    def test_yaml_round_trip(self):
        config = desk_config(output_root=str(self.tmp / 'run'), seed=2)
        loaded = load_config(save_config(config, self.tmp / 'config.yaml'))
        self.assertEqual(loaded, config)
        self.assertEqual(loaded.config_hash(), config.config_hash())

    def test_partial_yaml(self):
        (self.tmp / 'c.yaml').write_text('seed: 5\ncls:\n  epochs: 2\n')
        config = load_config(self.tmp / 'c.yaml')
        self.assertEqual(config.seed, 5)
        self.assertEqual(config.cls.epochs, 2)

    def test_empty_yaml_gives_defaults(self):
        (self.tmp / 'c.yaml').write_text('')
        self.assertEqual(load_config(self.tmp / 'c.yaml'), PipelineConfig())

    def test_bad_files(self):
        with self.assertRaises(ConfigError):
            load_config(self.tmp / 'missing.yaml')
        (self.tmp / 'list.yaml').write_text('- 1\n- 2\n')
        with self.assertRaises(ConfigError):
            load_config(self.tmp / 'list.yaml')
        (self.tmp / 'broken.yaml').write_text('a: [1, 2\n')
        with self.assertRaises(ConfigError):
            load_config(self.tmp / 'broken.yaml')
