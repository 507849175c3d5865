import json

import nibabel as nib
import numpy as np
from django.test import SimpleTestCase

from segmentation.data_io import (
    BACKGROUND_HU,
    CtVolume,
    LabelVolume,
    OrganId,
    SliceDataset,
    class_pixel_distribution,
    discover_patients,
    extract_slices,
    load_dataset,
    load_volume,
    make_phantom_patient,
    normalize_slice,
    render_pixel_distribution,
    split_dataset,
    synthesize_phantom,
    write_volume,
)
from segmentation.exceptions import (
    InvalidOrganCodeError,
    PhantomError,
    ShapeMismatchError,
    VolumeFormatError,
)

from .utils import TempDirMixin


def _write_raw(directory, shape, image, labels):
    directory.mkdir(parents=True)
    with open(directory / 'meta.json', 'w') as fh:
        json.dump({'shape': list(shape), 'spacing': [2.5, 1.0, 1.0], 'dtype': 'int16-le'}, fh)
    np.asarray(image, dtype='<i2').tofile(directory / 'image.raw')
    np.asarray(labels, dtype='<i2').tofile(directory / 'label.raw')


# ========================================
# LOADING
# ========================================
class LoadVolumeTests(TempDirMixin, SimpleTestCase):
    def test_phantom_round_trip(self):
        out = self.make_tempdir()
        paths = synthesize_phantom(out, seed=0, n_patients=3, shape=(8, 64, 64))
        ct, labels = load_volume(paths[0])
        self.assertEqual(ct.shape, (8, 64, 64))
        self.assertEqual(labels.shape, (8, 64, 64))
        self.assertEqual(ct.spacing, (2.5, 1.0, 1.0))
        self.assertEqual(ct.patient_id, 'phantom_000')

    def test_invalid_organ_code(self):
        shape = (2, 4, 4)
        labels = np.zeros(shape, dtype=np.int16)
        labels[0, 0, 0] = 9
        patient_dir = self.make_tempdir() / 'bad'
        _write_raw(patient_dir, shape, np.zeros(shape), labels)
        with self.assertRaisesRegex(InvalidOrganCodeError, 'invalid organ code'):
            load_volume(patient_dir)

    def test_shape_mismatch(self):
        patient_dir = self.make_tempdir() / 'p'
        _write_raw(patient_dir, (8, 64, 64), np.zeros((8, 64, 64)), np.zeros((7, 64, 64)))
        with self.assertRaisesRegex(ShapeMismatchError, 'shape mismatch'):
            load_volume(patient_dir)

    def test_missing_file(self):
        with self.assertRaisesRegex(VolumeFormatError, 'missing file'):
            load_volume(self.make_tempdir() / 'nothing_image.nii.gz')

    def test_nifti_round_trip(self):
        out = self.make_tempdir()
        rng = np.random.default_rng(1)
        ct, labels, _ = make_phantom_patient(rng, 'nifti_case', (4, 16, 16))
        image_path = write_volume(out, ct, labels, fmt='nifti')

        loaded_ct, loaded_labels = load_volume(image_path)
        np.testing.assert_array_equal(loaded_ct.voxels, ct.voxels)
        np.testing.assert_array_equal(loaded_labels.labels, labels.labels)
        self.assertEqual(loaded_ct.spacing, (2.5, 1.0, 1.0))
        self.assertEqual(list(discover_patients(out)), ['nifti_case'])

    def test_nifti_hu_outside_range(self):
        out = self.make_tempdir()
        voxels = np.zeros((4, 4, 2), dtype=np.int32)
        voxels[1, 1, 0] = 66000
        nib.save(nib.Nifti1Image(voxels, np.eye(4)), str(out / 'hot_image.nii.gz'))
        nib.save(nib.Nifti1Image(np.zeros((4, 4, 2), dtype=np.int16), np.eye(4)), str(out / 'hot_label.nii.gz'))
        with self.assertRaisesRegex(VolumeFormatError, r'HU values outside \[-2048, 4095\]'):
            load_volume(out / 'hot_image.nii.gz')

    def test_organ_codes(self):
        self.assertIs(OrganId.from_code(3), OrganId.HEART)
        self.assertIs(OrganId.from_code(np.int16(6)), OrganId.ESOPHAGUS)
        for code in (0, 7, -1):
            with self.subTest(code=code), self.assertRaisesRegex(InvalidOrganCodeError, 'invalid organ code'):
                OrganId.from_code(code)

    def test_load_dataset_lists_patients_in_order(self):
        out = self.make_tempdir()
        synthesize_phantom(out, seed=3, n_patients=4, shape=(2, 16, 16))
        volumes = load_dataset(out)
        self.assertEqual(list(volumes), ['phantom_000', 'phantom_001', 'phantom_002', 'phantom_003'])
        with self.assertRaises(VolumeFormatError):
            load_dataset(out, ['phantom_999'])

    def test_label_volume_rejects_codes_outside_range(self):
        with self.assertRaisesRegex(InvalidOrganCodeError, 'invalid organ code'):
            LabelVolume('p', np.full((1, 2, 2), 7))


# ========================================
# PREPROCESSING
# ========================================
class NormalizeSliceTests(SimpleTestCase):
    def test_window_bounds_and_midpoint(self):
        out = normalize_slice(np.array([[-1000.0, 1000.0, 0.0]]))
        np.testing.assert_allclose(out, [[0.0, 1.0, 0.5]])

    def test_clipping_and_monotonicity(self):
        values = np.linspace(-3000, 3000, 101)
        out = normalize_slice(values[None], (-1000, 1000))[0]
        self.assertTrue((np.diff(out) >= 0).all())
        self.assertEqual(out.min(), 0.0)
        self.assertEqual(out.max(), 1.0)

    def test_invalid_window(self):
        with self.assertRaises(VolumeFormatError):
            normalize_slice(np.zeros((2, 2)), (100, 100))


class SplitDatasetTests(SimpleTestCase):
    def test_fifty_patients(self):
        split = split_dataset([f'p{i:02d}' for i in range(50)], seed=0)
        self.assertEqual((len(split.train_ids), len(split.val_ids), len(split.test_ids)), (40, 5, 5))

    def test_ten_patients(self):
        split = split_dataset([f'p{i}' for i in range(10)], seed=0)
        self.assertEqual((len(split.train_ids), len(split.val_ids), len(split.test_ids)), (8, 1, 1))

    def test_partition_and_determinism(self):
        ids = [f'case{i}' for i in range(23)]
        first = split_dataset(ids, seed=7)
        self.assertEqual(first, split_dataset(list(reversed(ids)), seed=7))
        parts = [set(first.train_ids), set(first.val_ids), set(first.test_ids)]
        self.assertEqual(set().union(*parts), set(ids))
        self.assertFalse(parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])

    def test_too_few_patients(self):
        with self.assertRaises(VolumeFormatError):
            split_dataset(['a', 'b'], seed=0)


class ExtractSlicesTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.ct, self.labels, self.anatomy = make_phantom_patient(rng, 'p', (8, 64, 64))

    def test_one_sample_per_slice(self):
        samples = extract_slices(self.ct, self.labels, OrganId.HEART)
        self.assertEqual(len(samples), 8)
        self.assertEqual([s.slice_index for s in samples], list(range(8)))

    def test_absent_organ_gives_empty_mask(self):
        labels = self.labels.labels.copy()
        labels[0][labels[0] == int(OrganId.HEART)] = 0
        samples = extract_slices(self.ct, LabelVolume('p', labels), OrganId.HEART)
        self.assertEqual(samples[0].mask.sum(), 0)

    def test_heart_mask_matches_ellipse_equation(self):
        heart = self.anatomy.structures[OrganId.HEART]
        (cz, cy, cx), (rz, ry, rx) = heart.center, heart.radii
        expected = 0
        for z in range(8):
            for y in range(64):
                for x in range(64):
                    if ((z - cz) / rz) ** 2 + ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1.0:
                        expected += 1
        samples = extract_slices(self.ct, self.labels, OrganId.HEART)
        self.assertGreater(expected, 0)
        self.assertEqual(sum(int(s.mask.sum()) for s in samples), expected)

    def test_masks_reconstruct_label_volume(self):
        rebuilt = np.zeros(self.labels.shape, dtype=np.int64)
        for organ in OrganId:
            for sample in extract_slices(self.ct, self.labels, organ):
                rebuilt[sample.slice_index] += sample.mask * int(organ)
        np.testing.assert_array_equal(rebuilt, self.labels.labels)

    def test_roi_only_keeps_organ_slices(self):
        samples = extract_slices(self.ct, self.labels, OrganId.HEART, roi_only=True)
        self.assertTrue(all(s.mask.any() for s in samples))
        self.assertLessEqual(len(samples), 8)

    def test_shape_mismatch(self):
        ct = CtVolume('p', np.zeros((7, 64, 64), dtype=np.int16))
        with self.assertRaisesRegex(ShapeMismatchError, 'shape mismatch'):
            extract_slices(ct, self.labels, OrganId.HEART)

    def test_slice_dataset_tensors(self):
        dataset = SliceDataset(extract_slices(self.ct, self.labels, OrganId.RIGHT_LUNG))
        image, mask = dataset[3]
        self.assertEqual(tuple(image.shape), (1, 64, 64))
        self.assertEqual(tuple(mask.shape), (1, 64, 64))
        self.assertEqual(len(dataset), 8)


class PixelDistributionTests(TempDirMixin, SimpleTestCase):
    def test_all_background(self):
        fractions = class_pixel_distribution([LabelVolume('p', np.zeros((2, 4, 4), dtype=np.uint8))])
        self.assertEqual(fractions['background'], 1.0)
        self.assertTrue(all(fractions[o.label] == 0.0 for o in OrganId))

    def test_half_right_lung(self):
        labels = np.zeros((2, 4, 4), dtype=np.uint8)
        labels[0] = 1
        fractions = class_pixel_distribution([LabelVolume('p', labels)])
        self.assertEqual(fractions['right_lung'], 0.5)

    def test_phantom_fractions_match_full_scan(self):
        out = self.make_tempdir()
        synthesize_phantom(out, seed=0, n_patients=3, shape=(8, 64, 64))
        labels = [lab for _, lab in load_dataset(out).values()]
        fractions = class_pixel_distribution(labels)

        stacked = np.concatenate([lab.labels.ravel() for lab in labels])
        for organ in OrganId:
            self.assertAlmostEqual(fractions[organ.label], np.mean(stacked == int(organ)), places=12)
        self.assertAlmostEqual(sum(fractions.values()), 1.0, delta=1e-9)

        tubes = max(fractions['trachea'], fractions['spinal_cord'], fractions['esophagus'])
        self.assertGreater(min(fractions['right_lung'], fractions['left_lung']), fractions['heart'])
        self.assertGreater(fractions['heart'], tubes)

    def test_pie_chart_is_written(self):
        path = render_pixel_distribution({'background': 0.9, 'heart': 0.1}, self.make_tempdir() / 'pie.png')
        self.assertTrue(path.exists())
        self.assertGreater(path.stat().st_size, 0)


# ========================================
# PHANTOM
# ========================================
class PhantomTests(TempDirMixin, SimpleTestCase):
    def test_same_seed_gives_identical_files(self):
        first, second = self.make_tempdir(), self.make_tempdir()
        synthesize_phantom(first, seed=0, n_patients=3, shape=(4, 32, 32))
        synthesize_phantom(second, seed=0, n_patients=3, shape=(4, 32, 32))
        for path in sorted(first.rglob('*.raw')):
            self.assertEqual(path.read_bytes(), (second / path.relative_to(first)).read_bytes())

    def test_all_six_structures_present(self):
        out = self.make_tempdir()
        synthesize_phantom(out, seed=0, n_patients=3, shape=(8, 64, 64))
        for _, labels in load_dataset(out).values():
            self.assertEqual(set(np.unique(labels.labels)), set(range(7)))

    def test_shape_too_small(self):
        with self.assertRaisesRegex(PhantomError, 'shape too small'):
            synthesize_phantom(self.make_tempdir(), shape=(4, 8, 8))

    def test_every_structure_contrasts_with_background(self):
        for seed in range(10):
            _, _, anatomy = make_phantom_patient(np.random.default_rng(seed), f'p{seed}', (4, 32, 32))
            for organ in OrganId:
                with self.subTest(seed=seed, organ=organ.label):
                    self.assertGreaterEqual(abs(anatomy.intensities[organ] - BACKGROUND_HU), 200)
