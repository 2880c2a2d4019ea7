import unittest
import sys
import os
import math

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from cdis_eval.roc import auc, auc_bruteforce, delineation_auc, roc_curve
from cdis_volume.errors import UndefinedAucError, ValidationError
from cdis_volume.volume import MaskVolume, ScalarVolume


def random_suite(rng, n_cases, max_n=5000):
    """Seeded (scores, labels) pairs; every other case is quantized to force ties."""
    for i in range(n_cases):
        n = int(rng.integers(2, max_n + 1))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.normal(size=n) + 0.5 * labels
        if i % 2:
            scores = np.round(scores * 2) / 2
        yield scores, labels


class TestAuc(unittest.TestCase):

    def test_hand_counted_cases(self):
        cases = [
            ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], 0.75),
            ([1, 2, 3, 4], [0, 0, 1, 1], 1.0),
            ([5, 5, 5, 5], [0, 1, 0, 1], 0.5),
            ([1, 2], [0, 1], 1.0),
            ([2, 1], [0, 1], 0.0),
        ]
        for scores, labels, expected in cases:
            with self.subTest(scores=scores, labels=labels):
                self.assertEqual(auc(scores, labels), expected)
                self.assertEqual(auc_bruteforce(scores, labels), expected)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(6698)
        for scores, labels in random_suite(rng, 1000):
            self.assertAlmostEqual(auc(scores, labels), auc_bruteforce(scores, labels), delta=1e-12)

    def test_monotone_invariance(self):
        rng = np.random.default_rng(5)
        for scores, labels in random_suite(rng, 20, max_n=2000):
            with self.subTest(n=scores.size):
                base = auc(scores, labels)
                self.assertEqual(auc(np.exp(scores), labels), base)
                self.assertEqual(auc(3 * scores + 7, labels), base)
                self.assertAlmostEqual(auc(-scores, labels), 1.0 - base, delta=1e-12)

    def test_single_class_is_undefined(self):
        with self.assertRaisesRegex(UndefinedAucError, "0 positive"):
            auc([1, 2, 3], [0, 0, 0])
        with self.assertRaises(UndefinedAucError):
            auc_bruteforce([1, 2], [1, 1])

    def test_bad_inputs(self):
        with self.assertRaisesRegex(ValidationError, "differ in length"):
            auc([1, 2, 3], [0, 1])
        with self.assertRaisesRegex(ValidationError, "0 and 1"):
            auc([1, 2], [0, 2])
        with self.assertRaisesRegex(ValidationError, "finite"):
            auc([1, math.nan], [0, 1])


class TestRocCurve(unittest.TestCase):

    def test_perfect_separation_reaches_corner(self):
        result = roc_curve([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
        self.assertIn((0.0, 1.0), result.curve)
        self.assertEqual(result.curve[0], (0.0, 0.0))
        self.assertEqual(result.curve[-1], (1.0, 1.0))

    def test_binary_scores_give_three_points(self):
        result = roc_curve([0, 1, 1, 0, 1], [0, 1, 0, 0, 1])
        self.assertEqual(len(result.curve), 3)
        self.assertEqual(result.thresholds[0], math.inf)

    def test_trapezoid_area_equals_auc(self):
        rng = np.random.default_rng(12)
        for scores, labels in random_suite(rng, 10, max_n=1000):
            result = roc_curve(scores, labels)
            self.assertAlmostEqual(result.trapezoid_area(), result.auc, delta=1e-12)
            self.assertTrue(np.all(np.diff(result.fpr) >= 0))
            self.assertTrue(np.all(np.diff(result.tpr) >= 0))

    def test_csv_rows_and_summary(self):
        result = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        rows = result.to_csv_rows()
        self.assertEqual(rows[0], ["threshold", "fpr", "tpr"])
        self.assertEqual(rows[1], ["inf", "0.0", "0.0"])
        self.assertEqual(len(rows), len(result.fpr) + 1)
        self.assertEqual(result.summary(), {"auc": 0.75, "n_pos": 2, "n_neg": 2, "n_points": 5})


class TestDelineationAuc(unittest.TestCase):

    def setUp(self):
        breast = np.zeros((1, 4, 4), dtype=np.uint8)
        breast[0, :3, :3] = 1
        tumour = np.zeros_like(breast)
        tumour[0, 1, 1] = 1
        self.breast = MaskVolume(breast)
        self.tumour = MaskVolume(tumour)

    def test_bright_tumour(self):
        data = np.ones((1, 4, 4))
        data[0, 1, 1] = 5.0
        data[0, 3, 3] = 100.0
        self.assertEqual(delineation_auc(ScalarVolume(data), self.tumour, self.breast), 1.0)

    def test_constant_modality(self):
        self.assertEqual(delineation_auc(ScalarVolume(np.full((1, 4, 4), 3.0)), self.tumour, self.breast), 0.5)

    def test_tumour_outside_breast_is_undefined(self):
        outside = np.zeros((1, 4, 4), dtype=np.uint8)
        outside[0, 3, 3] = 1
        with self.assertRaisesRegex(UndefinedAucError, "0 tumour"):
            delineation_auc(ScalarVolume(np.ones((1, 4, 4))), MaskVolume(outside), self.breast)


if __name__ == '__main__':
    unittest.main()
