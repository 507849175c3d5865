import itertools

import numpy as np
import torch
from django.test import SimpleTestCase
from scipy import ndimage

from segmentation.data_io import CtVolume, LabelVolume, OrganId, make_phantom_patient
from segmentation.exceptions import ShapeMismatchError, VolumeFormatError
from segmentation.metrics import (
    BinaryMaskVolume,
    CSV_COLUMNS,
    dsc_volume,
    evaluate_masks,
    evaluate_model,
    hd95_patient,
    hd95_patient_detail,
    hd95_slice,
    surface_pixels,
)
from segmentation.networks import GeneratorConfig, build_generator

from .utils import BandOracle

FOUR_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _brute_boundary(mask):
    h, w = mask.shape
    points = []
    for y, x in itertools.product(range(h), range(w)):
        if not mask[y, x]:
            continue
        for dy, dx in FOUR_NEIGHBORS:
            ny, nx = y + dy, x + dx
            if not (0 <= ny < h and 0 <= nx < w) or not mask[ny, nx]:
                points.append((y, x))
                break
    return np.array(points, dtype=np.float64)


def _brute_hd95(pred, gt):
    a, b = _brute_boundary(pred), _brute_boundary(gt)
    pairwise = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    return float(np.percentile(np.concatenate([pairwise.min(1), pairwise.min(0)]), 95))


def _square(shape, top, left, size=4):
    mask = np.zeros(shape, dtype=np.uint8)
    mask[top:top + size, left:left + size] = 1
    return mask


# ========================================
# OVERLAP
# ========================================
class DscTests(SimpleTestCase):
    def test_identical(self):
        mask = _square((1, 8, 8), 2, 2)
        self.assertEqual(dsc_volume(mask, mask), 1.0)

    def test_disjoint(self):
        self.assertEqual(dsc_volume(_square((1, 8, 8), 0, 0, 2), _square((1, 8, 8), 5, 5, 2)), 0.0)

    def test_shifted_square(self):
        gt = _square((8, 8), 2, 2)
        pred = np.zeros_like(gt)
        pred[2:6, 4:8] = 1
        self.assertEqual(dsc_volume(pred, gt), 0.5)

    def test_both_empty(self):
        self.assertEqual(dsc_volume(np.zeros((2, 4, 4)), np.zeros((2, 4, 4))), 1.0)

    def test_shape_mismatch(self):
        with self.assertRaisesRegex(ShapeMismatchError, 'shape mismatch'):
            dsc_volume(np.zeros((2, 4, 4)), np.zeros((2, 4, 5)))

    def test_symmetric_and_permutation_invariant(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((3, 8, 8)) < 0.4, rng.random((3, 8, 8)) < 0.4
        perm = rng.permutation(a.size)
        self.assertEqual(dsc_volume(a, b), dsc_volume(b, a))
        self.assertEqual(dsc_volume(a, b), dsc_volume(a.ravel()[perm], b.ravel()[perm]))

    def test_binary_mask_volume(self):
        BinaryMaskVolume('p', np.zeros((1, 2, 2), dtype=np.uint8))
        with self.assertRaises(VolumeFormatError):
            BinaryMaskVolume('p', np.full((1, 2, 2), 2))


# ========================================
# SURFACE DISTANCE
# ========================================
class SurfaceTests(SimpleTestCase):
    def test_single_pixel(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[2, 3] = True
        self.assertEqual(surface_pixels(mask), {(2, 3)})

    def test_square_perimeter(self):
        boundary = surface_pixels(_square((8, 8), 2, 2))
        self.assertEqual(len(boundary), 12)
        self.assertNotIn((3, 3), boundary)

    def test_empty(self):
        self.assertEqual(surface_pixels(np.zeros((4, 4))), set())

    def test_touching_the_border(self):
        self.assertEqual(len(surface_pixels(np.ones((3, 3)))), 8)


class Hd95SliceTests(SimpleTestCase):
    def test_identical(self):
        mask = _square((8, 8), 1, 1)
        self.assertEqual(hd95_slice(mask, mask), 0.0)

    def test_two_single_pixels(self):
        pred, gt = np.zeros((6, 6)), np.zeros((6, 6))
        pred[0, 0] = 1
        gt[3, 4] = 1
        self.assertEqual(hd95_slice(pred, gt), 5.0)

    def test_spacing_scales_distances(self):
        pred, gt = np.zeros((6, 6)), np.zeros((6, 6))
        pred[0, 0] = 1
        gt[3, 0] = 1
        self.assertEqual(hd95_slice(pred, gt, spacing=(2.0, 1.0)), 6.0)

    def test_undefined_when_a_mask_is_empty(self):
        self.assertIsNone(hd95_slice(np.zeros((4, 4)), np.zeros((4, 4))))
        self.assertIsNone(hd95_slice(_square((8, 8), 0, 0), np.zeros((8, 8))))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            pred = rng.random((32, 32)) < rng.uniform(0.02, 0.5)
            gt = rng.random((32, 32)) < rng.uniform(0.02, 0.5)
            if not pred.any() or not gt.any():
                continue
            expected_dsc = 2 * np.sum(pred & gt) / (np.sum(pred) + np.sum(gt))
            self.assertEqual(dsc_volume(pred, gt), expected_dsc)
            self.assertAlmostEqual(hd95_slice(pred, gt), _brute_hd95(pred, gt), delta=1e-9)

    def test_symmetric_and_translation_invariant(self):
        rng = np.random.default_rng(5)
        pred = np.zeros((24, 24), dtype=bool)
        gt = np.zeros((24, 24), dtype=bool)
        pred[4:12, 4:12] = rng.random((8, 8)) < 0.7
        gt[5:13, 3:11] = rng.random((8, 8)) < 0.7
        value = hd95_slice(pred, gt)
        self.assertAlmostEqual(value, hd95_slice(gt, pred), delta=1e-12)
        shifted = hd95_slice(np.roll(pred, (6, 5), (0, 1)), np.roll(gt, (6, 5), (0, 1)))
        self.assertAlmostEqual(value, shifted, delta=1e-12)


class Hd95PatientTests(SimpleTestCase):
    def test_identical_volume(self):
        mask = np.stack([_square((8, 8), 1, 1), _square((8, 8), 2, 3)])
        self.assertEqual(hd95_patient(mask, mask), 0.0)

    def test_defined_only_mean(self):
        pred, gt = np.zeros((3, 6, 6)), np.zeros((3, 6, 6))
        pred[0, 0, 0], gt[0, 0, 1] = 1, 1
        pred[1, 0, 0], gt[1, 0, 2] = 1, 1
        detail = hd95_patient_detail(pred, gt)
        self.assertEqual(detail.value, 1.5)
        self.assertEqual(detail.n_undefined, 1)
        self.assertEqual(detail.n_one_sided, 0)

    def test_one_sided_slices_are_counted(self):
        pred, gt = np.zeros((2, 6, 6)), np.zeros((2, 6, 6))
        gt[0, 2, 2] = 1
        detail = hd95_patient_detail(pred, gt)
        self.assertIsNone(detail.value)
        self.assertEqual((detail.n_undefined, detail.n_one_sided), (2, 1))

    def test_rectangles_dilated_by_one_pixel(self):
        gt = np.zeros((3, 20, 20), dtype=bool)
        gt[0, 5:12, 4:15] = True
        gt[1, 3:9, 3:9] = True
        gt[2, 8:16, 6:10] = True
        cross = ndimage.generate_binary_structure(2, 1)
        pred = np.stack([ndimage.binary_dilation(s, cross) for s in gt])
        self.assertEqual(hd95_patient(pred, gt), 1.0)

    def test_dilated_phantom_matches_oracle(self):
        _, labels, _ = make_phantom_patient(np.random.default_rng(0), 'p', (4, 32, 32))
        gt = labels.indicator(OrganId.HEART).astype(bool)
        cross = ndimage.generate_binary_structure(2, 1)
        pred = np.stack([ndimage.binary_dilation(s, cross) for s in gt])
        defined = [_brute_hd95(p, g) for p, g in zip(pred, gt) if g.any()]
        self.assertAlmostEqual(hd95_patient(pred, gt), float(np.mean(defined)), delta=1e-9)


# ========================================
# AGGREGATION
# ========================================
class EvaluateTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.patients = [make_phantom_patient(rng, f'p{i}', (4, 32, 32))[:2] for i in range(3)]

    def test_parallelism_does_not_change_rows(self):
        rng = np.random.default_rng(1)
        volumes = [(f'p{i}', rng.random((3, 16, 16)) < 0.3, rng.random((3, 16, 16)) < 0.3) for i in range(5)]
        serial, _ = evaluate_masks('heart', 'unet', volumes, n_jobs=1)
        parallel, _ = evaluate_masks('heart', 'unet', list(reversed(volumes)), n_jobs=3)
        self.assertEqual(serial, parallel)

    def test_oracle_model(self):
        row, per_patient = evaluate_model(BandOracle(OrganId.HEART), self.patients, OrganId.HEART, 'oracle')
        self.assertEqual((row.dsc_mean, row.dsc_min, row.dsc_max), (1.0, 1.0, 1.0))
        self.assertEqual(row.hd95_mean, 0.0)
        self.assertEqual(row.n_patients, 3)
        self.assertEqual([p.patient_id for p in per_patient], ['p0', 'p1', 'p2'])

    def test_constant_background_model(self):
        model = build_generator(GeneratorConfig(depth=2, base_channels=4, zero_head=True), 0)
        with torch.no_grad():
            model.head.bias.fill_(-10.0)
        row, _ = evaluate_model(model, self.patients, OrganId.HEART, 'background')
        self.assertEqual(row.dsc_mean, 0.0)
        self.assertIsNone(row.hd95_mean)
        self.assertEqual(list(row.as_dict()), CSV_COLUMNS)

    def _shifted_heart_patient(self, patient_id, spacing):
        # oracle fires on (2, 2); the annotation sits one column to the right
        voxels = np.full((1, 8, 8), -1000, dtype=np.int16)
        voxels[0, 2, 2] = 300
        codes = np.zeros((1, 8, 8), dtype=np.uint8)
        codes[0, 2, 3] = int(OrganId.HEART)
        return CtVolume(patient_id, voxels, spacing), LabelVolume(patient_id, codes)

    def test_each_patient_uses_its_own_spacing(self):
        patients = [
            self._shifted_heart_patient('p0', (2.5, 1.0, 1.0)),
            self._shifted_heart_patient('p1', (2.5, 1.0, 3.0)),
        ]
        row, per_patient = evaluate_model(BandOracle(OrganId.HEART), patients, OrganId.HEART)
        self.assertEqual([p.hd95 for p in per_patient], [1.0, 3.0])
        self.assertEqual(row.hd95_mean, 2.0)

        row, _ = evaluate_model(BandOracle(OrganId.HEART), patients, OrganId.HEART, spacing=(1.0, 1.0))
        self.assertEqual((row.hd95_min, row.hd95_max), (1.0, 1.0))
