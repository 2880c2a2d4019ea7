import unittest
import sys
import os
import math

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from cdis_eval.optimizer import Bounds, NmConfig, nelder_mead
from cdis_volume.config import load_json_config
from cdis_volume.errors import ObjectiveFaultError, ValidationError

TIGHT = NmConfig(x_tol=1e-10, f_tol=1e-14, max_iter=2000)


class RecordingObjective:
    """Wraps an objective and records every point it is called with."""

    def __init__(self, fn):
        self.fn = fn
        self.points = []

    def __call__(self, x):
        self.points.append(np.array(x, dtype=float))
        return self.fn(x)


def sphere(x):
    return (x[0] - 1.0) ** 2 + (x[1] - 2.0) ** 2


def rosenbrock(x):
    return (1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2


class TestNelderMead(unittest.TestCase):

    def assertInside(self, recorder, bounds):
        for point in recorder.points:
            self.assertTrue(bounds.contains(point), f"Evaluated point {point} lies outside the bounds")

    def test_sphere(self):
        bounds = Bounds.uniform(-10, 10, 2)
        recorder = RecordingObjective(sphere)
        x_best, f_best, trace = nelder_mead(recorder, [0.0, 0.0], bounds, TIGHT)
        self.assertLess(f_best, 1e-8)
        np.testing.assert_allclose(x_best, [1.0, 2.0], atol=1e-4)
        self.assertInside(recorder, bounds)
        self.assertIn(trace.termination, ("x_tol", "f_tol"))

    def test_rosenbrock(self):
        bounds = Bounds.uniform(-10, 10, 2)
        recorder = RecordingObjective(rosenbrock)
        config = NmConfig(x_tol=1e-10, f_tol=1e-14, max_iter=500)
        x_best, f_best, trace = nelder_mead(recorder, [-1.2, 1.0], bounds, config)
        self.assertLess(f_best, 1e-6)
        np.testing.assert_allclose(x_best, [1.0, 1.0], atol=1e-2)
        self.assertLessEqual(len(trace.records) - 1, 500)
        self.assertInside(recorder, bounds)

    def test_boundary_optimum(self):
        bounds = Bounds.uniform(2, 10, 1)
        recorder = RecordingObjective(lambda x: float(x[0] ** 2))
        x_best, f_best, _ = nelder_mead(recorder, [5.0], bounds, TIGHT)
        self.assertAlmostEqual(float(x_best[0]), 2.0, delta=1e-6)
        self.assertAlmostEqual(f_best, 4.0, delta=1e-5)
        self.assertInside(recorder, bounds)

    def test_start_on_bound_keeps_simplex_open(self):
        bounds = Bounds.uniform(-1, 1, 2)
        x_best, f_best, _ = nelder_mead(lambda x: float((x[0] + 0.5) ** 2 + x[1] ** 2), [1.0, 1.0], bounds, TIGHT)
        self.assertLess(f_best, 1e-8)
        np.testing.assert_allclose(x_best, [-0.5, 0.0], atol=1e-4)

    def test_constant_objective_stops_on_f_tol(self):
        x_best, f_best, trace = nelder_mead(lambda x: 3.0, [1.0, 1.0], Bounds.uniform(-5, 5, 2))
        self.assertEqual(trace.termination, "f_tol")
        self.assertEqual(f_best, 3.0)
        self.assertLessEqual(len(trace.records), 3)

    def test_tiny_initial_simplex_warns(self):
        with self.assertLogs("cdis_eval.optimizer", level="WARNING") as logs:
            x_best, _, trace = nelder_mead(lambda x: float((x[0] - 1.0) ** 2), [0.001], Bounds.uniform(-10, 10, 1))
        self.assertIn("below x_tol", logs.output[0])
        self.assertEqual(trace.termination, "x_tol")
        self.assertEqual(len(trace.records), 1)
        self.assertAlmostEqual(float(x_best[0]), 0.00105, delta=1e-12)

    def test_max_iter(self):
        _, _, trace = nelder_mead(rosenbrock, [-1.2, 1.0], Bounds.uniform(-10, 10, 2), NmConfig(max_iter=5))
        self.assertEqual(trace.termination, "max_iter")
        self.assertEqual(len(trace.records), 6)

    def test_best_point_never_worse_than_start(self):
        rng = np.random.default_rng(8)
        for trial in range(5):
            x0 = rng.uniform(-3, 3, size=3)
            with self.subTest(trial=trial):
                fn = lambda x: float(np.sum(np.abs(x - 0.7)) + np.sin(5 * x[0]))
                _, f_best, _ = nelder_mead(fn, x0, Bounds.uniform(-3, 3, 3), NmConfig(max_iter=30))
                self.assertLessEqual(f_best, fn(x0))

    def test_trace_is_deterministic(self):
        runs = [nelder_mead(rosenbrock, [-1.2, 1.0], Bounds.uniform(-10, 10, 2))[2] for _ in range(2)]
        self.assertEqual(runs[0].records, runs[1].records)
        self.assertEqual(runs[0].to_csv_rows()[0], ["iteration", "best_f", "diameter", "n_evals"])
        best = [record.best_f for record in runs[0].records]
        self.assertEqual(best, sorted(best, reverse=True))

    def test_errors(self):
        with self.assertRaisesRegex(ValidationError, "outside the bounds"):
            nelder_mead(sphere, [20.0, 0.0], Bounds.uniform(-10, 10, 2))
        with self.assertRaisesRegex(ObjectiveFaultError, "nan"):
            nelder_mead(lambda x: math.nan, [0.0], Bounds.uniform(-1, 1, 1))
        with self.assertRaisesRegex(ValidationError, "lo < hi"):
            Bounds.uniform(1, 1, 2)


class TestNmConfig(unittest.TestCase):

    def test_root_file_holds_defaults(self):
        path = os.path.join(os.path.dirname(__file__), '..', 'nm_config.json')
        self.assertEqual(load_json_config(path, NmConfig), NmConfig())

    def test_coefficient_ranges(self):
        for field, value in [("alpha", 0.0), ("gamma", 1.0), ("beta", 1.0), ("sigma", 0.0), ("max_iter", 0)]:
            with self.subTest(field=field):
                with self.assertRaises(ValueError):
                    NmConfig(**{field: value})


if __name__ == '__main__':
    unittest.main()
