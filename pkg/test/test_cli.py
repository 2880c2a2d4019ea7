import unittest
import sys
import os
import io
import csv
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import cdis_app

ROOT_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))

SMALL_SPEC = {
    "shape": [5, 32, 32],
    "breast": {"center": [2, 16, 16], "semi_axes": [3, 12, 13]},
    "tumour": {"center": [2, 14, 17], "semi_axes": [1.5, 4, 4]},
    "noise_sigma": 0.0,
    "seed": 0,
}


def run_cli(*argv) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cdis_app.main(["-q", *argv])
    return code, out.getvalue(), err.getvalue()


def read_tree(directory: str) -> dict:
    contents = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as f:
            contents[name] = f.read()
    return contents


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        self.spec_path = self.path("spec.json")
        with open(self.spec_path, "w", encoding="utf-8") as f:
            json.dump(SMALL_SPEC, f)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, *parts) -> str:
        return os.path.join(self.tmp, *parts)

    def make_phantoms(self, out_dir="phantoms", count=1, **spec_overrides) -> str:
        spec_path = self.spec_path
        if spec_overrides:
            spec_path = self.path(f"spec_{out_dir}.json")
            with open(spec_path, "w", encoding="utf-8") as f:
                json.dump({**SMALL_SPEC, **spec_overrides}, f)
        code, out, err = run_cli("phantom", "--spec", spec_path, "--out", self.path(out_dir), "--count", str(count))
        self.assertEqual(code, 0, err)
        return out.strip()


class TestVolumeCommands(CliTestCase):

    def test_phantom_is_deterministic(self):
        self.make_phantoms("first", count=2, noise_sigma=10.0)
        self.make_phantoms("second", count=2, noise_sigma=10.0)
        first, second = read_tree(self.path("first")), read_tree(self.path("second"))
        self.assertIn("manifest.json", first)
        self.assertIn("phantom_001_adc.raw", first)
        self.assertEqual(first, second)

    def test_volume_commands_chain(self):
        self.make_phantoms()
        dwi = self.path("phantoms", "phantom_000_dwi")
        steps = [
            ("mask", "--dwi", dwi, "--out", self.path("mask")),
            ("adc", "--dwi", dwi, "--r2-min", "0.8", "--out-prefix", self.path("fit")),
            ("synth", "--fit-prefix", self.path("fit"), "--s-hat", "0,1000,2000", "--out", self.path("synth")),
            ("cdis", "--dwi", dwi, "--config", os.path.join(ROOT_DIR, "mixing_unoptimized.json"), "--out", self.path("cdis")),
        ]
        for argv in steps:
            with self.subTest(command=argv[0]):
                code, _, err = run_cli(*argv)
                self.assertEqual(code, 0, err)
        for stem in ("mask", "fit_adc", "fit_valid", "synth", "cdis"):
            self.assertTrue(os.path.exists(self.path(f"{stem}.raw")), stem)
        with open(self.path("mask.raw"), "rb") as f, open(self.path("phantoms", "phantom_000_breast.raw"), "rb") as g:
            self.assertEqual(f.read(), g.read())

    def test_volume_commands_are_deterministic(self):
        self.make_phantoms(noise_sigma=10.0)
        dwi = self.path("phantoms", "phantom_000_dwi")
        for run in ("run_a", "run_b"):
            os.makedirs(self.path(run))
            steps = [
                ("mask", "--dwi", dwi, "--out", self.path(run, "mask")),
                ("adc", "--dwi", dwi, "--out-prefix", self.path(run, "fit")),
                ("synth", "--fit-prefix", self.path(run, "fit"), "--s-hat", "0,1000,2000", "--out", self.path(run, "synth")),
                ("cdis", "--dwi", dwi, "--config", os.path.join(ROOT_DIR, "mixing_initial.json"), "--out", self.path(run, "cdis")),
            ]
            for argv in steps:
                code, _, err = run_cli(*argv)
                self.assertEqual(code, 0, err)
        first, second = read_tree(self.path("run_a")), read_tree(self.path("run_b"))
        self.assertIn("cdis.raw", first)
        self.assertEqual(first, second)

    def test_auc_on_b800(self):
        self.make_phantoms()
        stem = self.path("phantoms", "phantom_000")
        code, out, _ = run_cli(
            "auc", "--modality", f"{stem}_dwi", "--b", "800", "--tumour", f"{stem}_tumour", "--breast", f"{stem}_breast",
            "--curve", self.path("roc.csv"), "--summary", self.path("roc.json"),
        )
        self.assertEqual(code, 0)
        self.assertEqual(out.strip(), "1.0000")
        with open(self.path("roc.csv"), "r", encoding="utf-8") as f:
            self.assertEqual(next(csv.reader(f)), ["threshold", "fpr", "tpr"])
        with open(self.path("roc.json"), "r", encoding="utf-8") as f:
            self.assertEqual(json.load(f)["auc"], 1.0)

    def test_render(self):
        self.make_phantoms()
        out_png = self.path("montage.png")
        code, _, err = run_cli(
            "render", "--volume", self.path("phantoms", "phantom_000_adc"), "--out", out_png,
            "--slices", "0,2,4", "--window", "percentile:1,99",
        )
        self.assertEqual(code, 0, err)
        with open(out_png, "rb") as f:
            self.assertEqual(f.read(8), b"\x89PNG\r\n\x1a\n")


class TestCohortCommands(CliTestCase):

    def setUp(self):
        super().setUp()
        self.manifest = self.make_phantoms(count=2)
        self.nm_path = self.path("nm.json")
        with open(self.nm_path, "w", encoding="utf-8") as f:
            json.dump({"max_iter": 5}, f)

    def _optimize(self, out_name):
        return run_cli(
            "optimize", "--cases", self.manifest, "--config", os.path.join(ROOT_DIR, "mixing_initial.json"),
            "--nm", self.nm_path, "--out", self.path(f"{out_name}.json"), "--trace", self.path(f"{out_name}.csv"),
            "--slices", "5", "--size", "32", "--threads", "1", "--run-manifest", self.path(f"{out_name}_run.json"),
            "--holdout", self.manifest,
        )

    def test_optimize_then_compare(self):
        code, out, err = self._optimize("optimized")
        self.assertEqual(code, 0, err)
        self.assertIn("optimized AUC", out)
        with open(self.path("optimized_run.json"), "r", encoding="utf-8") as f:
            run = json.load(f)
        self.assertEqual(run["case_ids"], ["phantom_000", "phantom_001"])
        self.assertGreaterEqual(run["optimized_auc"], run["initial_auc"])
        self.assertIn("optimized", run["holdout"])

        code, out, err = run_cli(
            "compare", "--cases", self.manifest, "--unopt", os.path.join(ROOT_DIR, "mixing_unoptimized.json"),
            "--opt", self.path("optimized.json"), "--out", self.path("report.csv"), "--json", self.path("report.json"),
            "--slices", "5", "--size", "32", "--threads", "2",
        )
        self.assertEqual(code, 0, err)
        with open(self.path("report.csv"), "r", encoding="utf-8") as f:
            rows = {row["modality"]: float(row["auc"]) for row in csv.DictReader(f)}
        self.assertGreaterEqual(rows["CDIs_optimized"], rows["CDIs_unoptimized"])
        self.assertEqual(set(rows), {"ADC", "DWI_b800", "ADCc", "CDIs_unoptimized", "CDIs_optimized"})

    def test_optimize_is_deterministic(self):
        for name in ("run_a", "run_b"):
            code, _, err = self._optimize(name)
            self.assertEqual(code, 0, err)
        for suffix in (".json", ".csv", "_run.json"):
            with open(self.path(f"run_a{suffix}"), "rb") as a, open(self.path(f"run_b{suffix}"), "rb") as b:
                self.assertEqual(a.read(), b.read(), suffix)

    def test_compare_is_deterministic(self):
        outputs = []
        for name in ("first", "second"):
            code, _, err = run_cli(
                "compare", "--cases", self.manifest, "--unopt", os.path.join(ROOT_DIR, "mixing_unoptimized.json"),
                "--opt", os.path.join(ROOT_DIR, "mixing_initial.json"), "--out", self.path(f"{name}.csv"),
                "--json", self.path(f"{name}.json"), "--slices", "5", "--size", "32", "--threads", "2",
            )
            self.assertEqual(code, 0, err)
            with open(self.path(f"{name}.csv"), "rb") as f, open(self.path(f"{name}.json"), "rb") as g:
                outputs.append((f.read(), g.read()))
        self.assertEqual(outputs[0], outputs[1])


class TestExitCodes(CliTestCase):

    def test_usage_error_prints_help(self):
        code, _, err = run_cli("auc", "--no-such-flag")
        self.assertEqual(code, 2)
        self.assertIn("usage:", err)

    def test_missing_volume_is_io_error(self):
        code, _, err = run_cli("mask", "--dwi", self.path("absent"), "--out", self.path("mask"))
        self.assertEqual(code, 4)
        self.assertIn("absent.json", err)

    def test_unwritable_output_dir_is_io_error(self):
        blocker = self.path("blocker")
        with open(blocker, "w", encoding="utf-8") as f:
            f.write("not a directory")
        code, _, err = run_cli("phantom", "--spec", self.spec_path, "--out", os.path.join(blocker, "sub"))
        self.assertEqual(code, 4)
        self.assertIn("blocker", err)

    def test_missing_config_and_manifest_are_io_errors(self):
        self.make_phantoms()
        missing_config = self.path("no_such_mixing.json")
        code, _, err = run_cli(
            "cdis", "--dwi", self.path("phantoms", "phantom_000_dwi"), "--config", missing_config, "--out", self.path("c"),
        )
        self.assertEqual(code, 4)
        self.assertIn("no_such_mixing.json", err)
        code, _, err = run_cli(
            "compare", "--cases", self.path("no_such_manifest.json"),
            "--unopt", os.path.join(ROOT_DIR, "mixing_unoptimized.json"),
            "--opt", os.path.join(ROOT_DIR, "mixing_initial.json"), "--out", self.path("report.csv"),
        )
        self.assertEqual(code, 4)
        self.assertIn("no_such_manifest.json", err)

    def test_bad_config_is_validation_error(self):
        self.make_phantoms()
        bad = self.path("bad_mixing.json")
        with open(bad, "w", encoding="utf-8") as f:
            json.dump({"s_hat": [0, 1000], "rho": [1.0]}, f)
        code, _, err = run_cli("cdis", "--dwi", self.path("phantoms", "phantom_000_dwi"), "--config", bad, "--out", self.path("c"))
        self.assertEqual(code, 3)
        self.assertIn("bad_mixing.json", err)

    def test_single_class_is_auc_error(self):
        self.make_phantoms()
        stem = self.path("phantoms", "phantom_000")
        code, _, _ = run_cli(
            "auc", "--modality", f"{stem}_adc", "--tumour", f"{stem}_breast", "--breast", f"{stem}_breast",
        )
        self.assertEqual(code, 5)


if __name__ == '__main__':
    unittest.main()
