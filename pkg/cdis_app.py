import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pydantic

from cdis_eval.optimizer import NmConfig
from cdis_eval.roc import delineation_auc, delineation_samples, roc_curve
from cdis_model.diffusion import DEFAULT_R2_MIN, fit_adc, read_fit, synthesize_signals, write_fit
from cdis_model.mixing import MixingConfig, compute_cdis
from cdis_pipeline.cases import (
    DEFAULT_OUT_HW,
    DEFAULT_TARGET_NZ,
    ensure_breast_masks,
    load_case_manifest,
    prepare_cases,
    write_phantom_suite,
)
from cdis_pipeline.pipeline import AGGREGATIONS, CdisObjective, compare_modalities, evaluate_configs, optimize_rho
from cdis_pipeline.render import render_montage
from cdis_pipeline.report import RunManifest
from cdis_volume.bundle import read_volume, write_volume
from cdis_volume.config import load_json_config, save_json_config
from cdis_volume.errors import (
    ObjectiveFaultError,
    UndefinedAucError,
    ValidationError,
    VolumeIOError,
)
from cdis_volume.phantom import PhantomSpec
from cdis_volume.preprocess import compute_breast_mask
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume, extract_b_slice

logger = logging.getLogger("cdis_app")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_AUC = 5

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class _Parser(argparse.ArgumentParser):
    """Prints the full help text on a usage error."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"\n{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _read_typed(stem, expected_type, role: str):
    vol = read_volume(stem)
    if not isinstance(vol, expected_type):
        raise ValidationError(f"{role} bundle '{stem}' is a {type(vol).__name__}, expected {expected_type.__name__}")
    return vol


def _write_csv(rows, filepath):
    try:
        with open(filepath, "w", encoding="utf-8", newline="") as f:
            csv.writer(f, lineterminator="\n").writerows(rows)
    except OSError as e:
        raise VolumeIOError(f"Could not write '{filepath}': {e}")


def _write_json(payload, filepath):
    try:
        with open(filepath, "w", encoding="utf-8") as f:
            f.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise VolumeIOError(f"Could not write '{filepath}': {e}")


def _load_cases(manifest, args):
    raws = load_case_manifest(manifest)
    if args.no_preprocess:
        return ensure_breast_masks(raws), []
    cases, skipped = prepare_cases(raws, target_nz=args.slices, out_hw=args.size)
    if not cases:
        raise ValidationError(f"No usable cases in '{manifest}'; all {len(skipped)} were skipped")
    return cases, skipped


def run_phantom(args) -> int:
    spec = load_json_config(args.spec, PhantomSpec) if args.spec else PhantomSpec()
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as e:
        raise VolumeIOError(f"Could not create output directory '{args.out}': {e}")
    manifest = write_phantom_suite(spec, args.out, count=args.count, seed=args.seed)
    logger.info("Wrote %d phantom case(s) to %s", args.count, args.out)
    print(manifest)
    return EXIT_OK


def run_mask(args) -> int:
    dwi = _read_typed(args.dwi, DwiVolume, "DWI")
    mask = compute_breast_mask(dwi)
    write_volume(mask, args.out)
    print(f"breast mask: {mask.count()} voxels")
    return EXIT_OK


def run_adc(args) -> int:
    fit = fit_adc(_read_typed(args.dwi, DwiVolume, "DWI"), r2_min=args.r2_min)
    write_fit(fit, args.out_prefix)
    print(f"valid voxels: {fit.valid.count()} of {fit.valid.data.size}")
    return EXIT_OK


def run_synth(args) -> int:
    write_volume(synthesize_signals(read_fit(args.fit_prefix), args.s_hat), args.out)
    return EXIT_OK


def run_cdis(args) -> int:
    config = load_json_config(args.config, MixingConfig)
    write_volume(compute_cdis(_read_typed(args.dwi, DwiVolume, "DWI"), config, r2_min=args.r2_min), args.out)
    return EXIT_OK


def run_auc(args) -> int:
    modality = read_volume(args.modality)
    if isinstance(modality, DwiVolume):
        if args.b is None:
            raise ValidationError(f"'{args.modality}' is a DWI volume; choose a b-value with --b")
        modality = extract_b_slice(modality, args.b)
    tumour = _read_typed(args.tumour, MaskVolume, "Tumour")
    breast = _read_typed(args.breast, MaskVolume, "Breast")
    if isinstance(modality, MaskVolume):
        modality = ScalarVolume(modality.data, unit="dimensionless")

    if args.curve or args.summary:
        positives, negatives = delineation_samples(modality, tumour, breast)
        labels = np.r_[np.ones(positives.size, dtype=np.uint8), np.zeros(negatives.size, dtype=np.uint8)]
        result = roc_curve(np.r_[positives, negatives], labels)
        if args.curve:
            _write_csv(result.to_csv_rows(), args.curve)
        if args.summary:
            _write_json(result.summary(), args.summary)
        value = result.auc
    else:
        value = delineation_auc(modality, tumour, breast)
    print(f"{value:.4f}")
    return EXIT_OK


def run_optimize(args) -> int:
    initial = load_json_config(args.config, MixingConfig)
    nm = load_json_config(args.nm, NmConfig) if args.nm else NmConfig()
    cases, skipped = _load_cases(args.cases, args)

    objective = CdisObjective(cases, initial.s_hat, initial.signal_floor, args.aggregation, args.r2_min, args.threads)
    initial_auc = objective(initial.rho)
    optimized, trace = optimize_rho(
        cases, initial, nm, aggregation=args.aggregation, r2_min=args.r2_min, threads=args.threads, objective=objective
    )
    optimized_auc = objective(optimized.rho)
    save_json_config(optimized, args.out)
    if args.trace:
        _write_csv(trace.to_csv_rows(), args.trace)
    print(f"initial AUC {initial_auc:.4f} -> optimized AUC {optimized_auc:.4f} ({trace.termination})")

    holdout = None
    if args.holdout:
        holdout_cases, _ = _load_cases(args.holdout, args)
        holdout = evaluate_configs(
            holdout_cases, {"initial": initial, "optimized": optimized},
            aggregation=args.aggregation, r2_min=args.r2_min, threads=args.threads,
        )
        holdout["case_ids"] = [case.case_id for case in holdout_cases]
        print(f"held-out AUC {holdout['initial']:.4f} -> {holdout['optimized']:.4f}")

    if args.run_manifest:
        RunManifest(
            initial_config=initial.model_dump(mode="json"),
            initial_digest=initial.digest(),
            optimized_config=optimized.model_dump(mode="json"),
            optimized_digest=optimized.digest(),
            nm_config=nm.model_dump(mode="json"),
            nm_digest=nm.digest(),
            case_ids=[case.case_id for case in cases],
            seeds=[case.seed for case in cases],
            aggregation=args.aggregation,
            r2_min=args.r2_min,
            termination=trace.termination,
            n_iterations=len(trace.records) - 1,
            n_evals=trace.records[-1].n_evals,
            initial_auc=initial_auc,
            optimized_auc=optimized_auc,
            skipped=[{"id": s.case_id, "reason": s.reason} for s in skipped],
            holdout=holdout,
        ).write(args.run_manifest)
    return EXIT_OK


def run_compare(args) -> int:
    unopt = load_json_config(args.unopt, MixingConfig)
    opt = load_json_config(args.opt, MixingConfig)
    cases, skipped = _load_cases(args.cases, args)
    report = compare_modalities(cases, unopt, opt, aggregation=args.aggregation, r2_min=args.r2_min, threads=args.threads)
    if skipped:
        report = replace(report, notes=report.notes + tuple(f"skipped case {s.case_id}: {s.reason}" for s in skipped))
    report.to_csv(args.out)
    if args.json:
        report.to_json(args.json)
    print(report.format_table())
    return EXIT_OK


def run_render(args) -> int:
    vol = read_volume(args.volume)
    if isinstance(vol, DwiVolume):
        if args.b is None:
            raise ValidationError(f"'{args.volume}' is a DWI volume; choose a b-value with --b")
        vol = extract_b_slice(vol, args.b)
    png = render_montage(vol, args.slices, args.window)
    try:
        with open(args.out, "wb") as f:
            f.write(png)
    except OSError as e:
        raise VolumeIOError(f"Could not write '{args.out}': {e}")
    return EXIT_OK


COMMAND_REGISTRY = {
    "phantom": run_phantom,
    "mask": run_mask,
    "adc": run_adc,
    "synth": run_synth,
    "cdis": run_cdis,
    "auc": run_auc,
    "optimize": run_optimize,
    "compare": run_compare,
    "render": run_render,
}


def _add_case_flags(parser):
    parser.add_argument("--cases", required=True, help="case manifest JSON")
    parser.add_argument("--aggregation", choices=AGGREGATIONS, default="mean_per_case")
    parser.add_argument("--threads", type=int, default=os.cpu_count(), help="worker threads over cases")
    parser.add_argument("--r2-min", type=float, default=DEFAULT_R2_MIN)
    parser.add_argument("--slices", type=int, default=DEFAULT_TARGET_NZ, help="slices kept per case")
    parser.add_argument("--size", type=int, default=DEFAULT_OUT_HW, help="in-plane size after resizing")
    parser.add_argument("--no-preprocess", action="store_true", help="use the volumes as stored")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cdis_app", description="Synthetic correlated diffusion imaging toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("phantom", help="generate seeded phantom cases")
    p.add_argument("--spec", help="phantom spec JSON (defaults built in)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, help="seed of the first case (default: the seed in --spec)")

    p = commands.add_parser("mask", help="compute a breast mask from a DWI volume")
    p.add_argument("--dwi", required=True)
    p.add_argument("--out", required=True)

    p = commands.add_parser("adc", help="fit ADC, S0 and R^2 per voxel")
    p.add_argument("--dwi", required=True)
    p.add_argument("--r2-min", type=float, default=DEFAULT_R2_MIN)
    p.add_argument("--out-prefix", required=True)

    p = commands.add_parser("synth", help="synthesize signals from a stored fit")
    p.add_argument("--fit-prefix", required=True)
    p.add_argument("--s-hat", type=_float_list, required=True, help="comma-separated b-values")
    p.add_argument("--out", required=True)

    p = commands.add_parser("cdis", help="compute a CDIs map")
    p.add_argument("--dwi", required=True)
    p.add_argument("--config", required=True, help="mixing config JSON")
    p.add_argument("--r2-min", type=float, default=DEFAULT_R2_MIN)
    p.add_argument("--out", required=True)

    p = commands.add_parser("auc", help="tumour-vs-breast delineation AUC of one map")
    p.add_argument("--modality", required=True)
    p.add_argument("--tumour", required=True)
    p.add_argument("--breast", required=True)
    p.add_argument("--curve", help="write the ROC curve as CSV")
    p.add_argument("--summary", help="write an ROC summary as JSON")
    p.add_argument("--b", type=float, help="b-value to score when the modality is a DWI")

    p = commands.add_parser("optimize", help="tune rho on a set of cases")
    _add_case_flags(p)
    p.add_argument("--config", required=True, help="initial mixing config JSON")
    p.add_argument("--nm", help="Nelder-Mead config JSON")
    p.add_argument("--out", required=True, help="optimized mixing config JSON")
    p.add_argument("--trace", help="iteration trace CSV")
    p.add_argument("--holdout", help="manifest of cases to score but not tune on")
    p.add_argument("--run-manifest", help="write run provenance JSON")

    p = commands.add_parser("compare", help="compare modalities by delineation AUC")
    _add_case_flags(p)
    p.add_argument("--unopt", required=True)
    p.add_argument("--opt", required=True)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--json", help="report JSON")

    p = commands.add_parser("render", help="render a slice montage as PNG")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--slices", type=_int_list)
    p.add_argument("--window", default="minmax", help="minmax or percentile:p_lo,p_hi")
    p.add_argument("--b", type=float, help="b-value to render when the volume is a DWI")
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    _configure_logging(args)

    command = COMMAND_REGISTRY[args.command]
    try:
        return command(args)
    except (UndefinedAucError, ObjectiveFaultError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_AUC
    except VolumeIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, pydantic.ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
