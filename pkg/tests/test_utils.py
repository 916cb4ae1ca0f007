from decimal import Decimal

import numpy as np

from lesion_ensemble.utils import (canonical_json, derive_rng, fn_name_to_command,
                                   fn_name_to_pretty_label, read_image, read_mask,
                                   round_half_even, stable_hash, write_image, write_mask)
from . import TempDirMixin, TestCase


class UtilityTests(TestCase):
    """ Test utility functions
    """
    def test_pretty_label_and_command(self):
        self.assertEqual(fn_name_to_pretty_label('train_seg'), 'Train Seg')
        self.assertEqual(fn_name_to_command('train_seg'), 'train-seg')

    def test_round_half_even_ties_go_to_even(self):
        self.assertEqual(round_half_even(115, '0.1'), 12)
        self.assertEqual(round_half_even(1113, '0.1'), 111)
        self.assertEqual(round_half_even(125, '0.1'), 12)
        self.assertEqual(round_half_even(135, '0.1'), 14)

    def test_round_half_even_accepts_floats_and_decimals(self):
        self.assertEqual(round_half_even(327, 0.1), 33)
        self.assertEqual(round_half_even(327, Decimal('0.1')), 33)
        self.assertEqual(round_half_even(5, 0.5), 2)

    def test_stable_hash_ignores_key_order(self):
        self.assertEqual(stable_hash({'a': 1, 'b': [1, 2]}), stable_hash({'b': [1, 2], 'a': 1}))
        self.assertNotEqual(stable_hash({'a': 1}), stable_hash({'a': 2}))
        self.assertEqual(canonical_json({'b': 1, 'a': 2}), '{"a":2,"b":1}')

    def test_derive_rng_is_reproducible_and_seed_sensitive(self):
        a = derive_rng(3, 4).integers(0, 1000, size=8)
        b = derive_rng(3, 4).integers(0, 1000, size=8)
        c = derive_rng(4, 3).integers(0, 1000, size=8)
        np.testing.assert_array_equal(a, b)
        self.assertFalse(np.array_equal(a, c))


class ImageIOTests(TempDirMixin, TestCase):

    def test_image_round_trip_is_lossless(self):
        pixels = np.random.default_rng(0).integers(0, 256, size=(10, 12, 3), dtype=np.uint8)
        write_image(self.tmp / 'nested' / 'a.png', pixels)
        np.testing.assert_array_equal(read_image(self.tmp / 'nested' / 'a.png'), pixels)

    def test_mask_round_trip(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1:4, 2:5] = True
        write_mask(self.tmp / 'm.png', mask)
        np.testing.assert_array_equal(read_mask(self.tmp / 'm.png'), mask)
