import numpy as np

from lesion_ensemble.exceptions import ManifestError
from lesion_ensemble.fields import KIND_SEGMENTATION, KIND_SYNTHETIC, ClassLabel
from lesion_ensemble.synth import SynthSpec, generate_segmentation, generate_synthetic
from . import TestCase


class SynthTests(TestCase):

    def test_counts_and_ids(self):
        manifest = generate_synthetic(SynthSpec(n_per_class=3, image_size=32))
        self.assertEqual(manifest.kind, KIND_SYNTHETIC)
        self.assertEqual(len(manifest), 21)
        self.assertTrue(all(n == 3 for n in manifest.class_counts.values()))
        self.assertEqual(manifest.ids, sorted(manifest.ids))
        self.assertIn('syn_MEL_0002', manifest.ids)

    def test_records_carry_pixels_and_masks(self):
        manifest = generate_synthetic(SynthSpec(n_per_class=2, image_size=48))
        for record in manifest.records:
            self.assertEqual(record.pixels.shape, (48, 48, 3))
            self.assertEqual(record.pixels.dtype, np.uint8)
            self.assertEqual(record.mask.shape, (48, 48))
            self.assertTrue(record.mask.any())
            self.assertFalse(record.mask.all())

    def test_same_seed_same_corpus(self):
        a = generate_synthetic(SynthSpec(n_per_class=2, image_size=32, hair_fraction=0.5, seed=5))
        b = generate_synthetic(SynthSpec(n_per_class=2, image_size=32, hair_fraction=0.5, seed=5))
        c = generate_synthetic(SynthSpec(n_per_class=2, image_size=32, hair_fraction=0.5, seed=6))
        for x, y in zip(a.records, b.records):
            np.testing.assert_array_equal(x.pixels, y.pixels)
        self.assertFalse(all(np.array_equal(x.pixels, z.pixels) for x, z in zip(a.records, c.records)))

    def test_records_do_not_depend_on_class_size(self):
        small = generate_synthetic(SynthSpec(n_per_class=2, image_size=32, seed=1))
        large = generate_synthetic(SynthSpec(n_per_class=4, image_size=32, seed=1))
        lookup = {r.id: r for r in large.records}
        for record in small.records:
            np.testing.assert_array_equal(record.pixels, lookup[record.id].pixels)

    def test_hair_fraction_per_class(self):
        manifest = generate_synthetic(SynthSpec(n_per_class=10, image_size=32, hair_fraction=0.5))
        for label in ClassLabel:
            hairy = [r for r in manifest.records if r.label == label and r.hairy]
            self.assertEqual(len(hairy), 5)
            for record in hairy:
                self.assertTrue(record.hair_mask.any())
        self.assertTrue(all(r.hair_mask is None for r in manifest.records if not r.hairy))

    def test_hair_pixels_are_dark(self):
        manifest = generate_synthetic(SynthSpec(n_per_class=2, image_size=64, hair_fraction=1.0))
        for record in manifest.records:
            luminance = record.pixels.astype(float).mean(axis=2)
            self.assertLess(luminance[record.hair_mask].mean(), 40)

    def test_segmentation_corpus_is_unlabeled(self):
        manifest = generate_segmentation(SynthSpec(n_per_class=1, image_size=32))
        self.assertEqual(manifest.kind, KIND_SEGMENTATION)
        self.assertTrue(all(r.label is None and r.mask is not None for r in manifest.records))

    def test_invalid_spec(self):
        with self.assertRaises(ManifestError):
            SynthSpec(n_per_class=0)
        with self.assertRaises(ManifestError):
            SynthSpec(n_per_class=1, image_size=16)
        with self.assertRaises(ManifestError):
            SynthSpec(n_per_class=1, hair_fraction=1.5)
