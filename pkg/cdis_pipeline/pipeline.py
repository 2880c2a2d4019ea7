"""
Cohort-level orchestration: the delineation-AUC objective over the mixing
exponents, the optimization driver and the modality comparison.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from cdis_eval.optimizer import Bounds, NmConfig, NmTrace, nelder_mead
from cdis_eval.roc import auc, auc_from_samples, delineation_samples
from cdis_model.diffusion import DEFAULT_R2_MIN, fit_adc, synthesize_signals
from cdis_model.mixing import MixingConfig, cdis_from_fit, log_signals, mix_log_signals
from cdis_pipeline.cases import CaseRecord
from cdis_pipeline.report import BEST_NOTE, INVERTED_NOTE, ComparisonReport, ModalityRow
from cdis_volume.errors import UndefinedAucError, ValidationError
from cdis_volume.volume import extract_b_slice

logger = logging.getLogger(__name__)

AGGREGATIONS = ("mean_per_case", "pooled")
DWI_REFERENCE_B = 800.0
MODALITIES = ("ADC", "DWI_b800", "ADCc", "CDIs_unoptimized", "CDIs_optimized")


def _check_aggregation(aggregation: str):
    if aggregation not in AGGREGATIONS:
        raise ValidationError(f"Unknown aggregation '{aggregation}'; expected one of {list(AGGREGATIONS)}")


def _check_cases(cases) -> list[CaseRecord]:
    cases = list(cases)
    if not cases:
        raise ValidationError("At least one case is required")
    for case in cases:
        if case.tumour_mask is None or case.breast_mask is None:
            raise ValidationError(f"Case '{case.case_id}' needs tumour and breast masks; run prepare_case first")
    return cases


def _map_cases(fn, cases, threads: int | None):
    """Applies fn to every case, in case order, on a thread pool when threads != 1."""
    if threads is not None and threads < 1:
        raise ValidationError(f"threads must be at least 1, got {threads}")
    if threads == 1 or len(cases) < 2:
        return [fn(case) for case in cases]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cases))


def _aggregate(per_case: list[tuple[np.ndarray, np.ndarray]], aggregation: str) -> float:
    """per_case holds (positives, negatives) score arrays."""
    if aggregation == "pooled":
        positives = np.concatenate([p for p, _ in per_case])
        negatives = np.concatenate([n for _, n in per_case])
        return auc_from_samples(positives, negatives)
    return float(np.mean([auc_from_samples(p, n) for p, n in per_case]))


@dataclass(frozen=True, eq=False)
class _CaseCache:
    case_id: str
    logs: np.ndarray
    valid: np.ndarray
    labels: np.ndarray


class CdisObjective:
    """
    Aggregated delineation AUC of CDIs as a function of rho, with s_hat fixed.

    Fits and synthesized log-signals are computed once per case and kept for
    breast voxels only, so a call is one weighted sum and one rank pass per
    case. Values match compute_cdis followed by delineation_auc.
    """

    def __init__(
        self,
        cases,
        s_hat,
        signal_floor: float = 1e-6,
        aggregation: str = "mean_per_case",
        r2_min: float = DEFAULT_R2_MIN,
        threads: int | None = None,
    ):
        _check_aggregation(aggregation)
        self.cases = _check_cases(cases)
        self.s_hat = tuple(float(b) for b in s_hat)
        self.signal_floor = signal_floor
        self.aggregation = aggregation
        self.r2_min = r2_min
        self.threads = threads
        self.n_calls = 0
        self._caches = _map_cases(self._build_cache, self.cases, threads)
        logger.info(
            "Objective ready over %d case(s), %d breast voxels, aggregation=%s",
            len(self._caches), sum(c.labels.size for c in self._caches), aggregation,
        )

    def _build_cache(self, case: CaseRecord) -> _CaseCache:
        fit = fit_adc(case.dwi, r2_min=self.r2_min)
        synthetic = synthesize_signals(fit, self.s_hat)
        breast = case.breast_mask.as_bool()
        labels = case.tumour_mask.as_bool()[breast]
        if not labels.any() or labels.all():
            raise UndefinedAucError(
                f"Case '{case.case_id}' lacks tumour or healthy breast voxels; its AUC is undefined"
            )
        return _CaseCache(
            case_id=case.case_id,
            logs=log_signals(synthetic.data[:, breast], self.signal_floor),
            valid=fit.valid.as_bool()[breast],
            labels=labels,
        )

    @property
    def dim(self) -> int:
        return len(self.s_hat)

    def _scores(self, cache: _CaseCache, rho: np.ndarray) -> np.ndarray:
        return np.where(cache.valid, mix_log_signals(cache.logs, rho), 0.0)

    def __call__(self, rho) -> float:
        rho = np.asarray(rho, dtype=np.float64)
        if rho.shape != (self.dim,):
            raise ValidationError(f"rho has {rho.size} entries but s_hat has {self.dim}")
        self.n_calls += 1
        if self.aggregation == "pooled":
            scores = np.concatenate([self._scores(c, rho) for c in self._caches])
            labels = np.concatenate([c.labels for c in self._caches])
            return auc(scores, labels)
        per_case = _map_cases(lambda c: auc(self._scores(c, rho), c.labels), self._caches, self.threads)
        return float(np.mean(per_case))


def objective_auc(
    cases,
    rho,
    s_hat,
    aggregation: str = "mean_per_case",
    r2_min: float = DEFAULT_R2_MIN,
    signal_floor: float = 1e-6,
    threads: int | None = None,
) -> float:
    """Aggregated delineation AUC of CDIs(rho, s_hat) over `cases`."""
    if len(tuple(rho)) != len(tuple(s_hat)):
        raise ValidationError(f"rho has {len(tuple(rho))} entries but s_hat has {len(tuple(s_hat))}")
    objective = CdisObjective(cases, s_hat, signal_floor, aggregation, r2_min, threads)
    return objective(rho)


def optimize_rho(
    cases,
    initial: MixingConfig,
    nm: NmConfig | None = None,
    aggregation: str = "mean_per_case",
    r2_min: float = DEFAULT_R2_MIN,
    threads: int | None = None,
    objective: CdisObjective | None = None,
) -> tuple[MixingConfig, NmTrace]:
    """
    Tunes rho to maximize the aggregated AUC, keeping s_hat fixed.

    Nelder-Mead minimizes -AUC inside the box initial.rho_bounds. The result
    is the best rho ever evaluated, so its AUC is never below the AUC at
    initial.rho.
    """
    if objective is None:
        objective = CdisObjective(cases, initial.s_hat, initial.signal_floor, aggregation, r2_min, threads)
    elif objective.s_hat != initial.s_hat:
        raise ValidationError(f"Objective s_hat {list(objective.s_hat)} differs from config s_hat {list(initial.s_hat)}")

    bounds = Bounds.uniform(*initial.rho_bounds, objective.dim)
    x_best, f_best, trace = nelder_mead(lambda rho: -objective(rho), initial.rho, bounds, nm)
    optimized = initial.with_rho(x_best)
    logger.info(
        "Optimized rho=%s (AUC %.4f, %s after %d iterations)",
        [round(r, 4) for r in optimized.rho], -f_best, trace.termination, len(trace.records) - 1,
    )
    return optimized, trace


def evaluate_configs(cases, configs: dict, aggregation: str = "mean_per_case", r2_min: float = DEFAULT_R2_MIN, threads: int | None = None) -> dict:
    """Aggregated CDIs AUC for each named config, e.g. on held-out cases."""
    return {
        name: objective_auc(cases, config.rho, config.s_hat, aggregation, r2_min, config.signal_floor, threads)
        for name, config in configs.items()
    }


def _case_modalities(case: CaseRecord, unopt: MixingConfig, opt: MixingConfig, r2_min: float, with_adc: bool, with_dwi: bool) -> dict:
    fit = fit_adc(case.dwi, r2_min=r2_min)
    volumes = {}
    if with_adc:
        volumes["ADC"] = case.provided_adc
    if with_dwi:
        volumes["DWI_b800"] = extract_b_slice(case.dwi, DWI_REFERENCE_B)
    volumes["ADCc"] = fit.adc
    volumes["CDIs_unoptimized"] = cdis_from_fit(fit, unopt)
    volumes["CDIs_optimized"] = cdis_from_fit(fit, opt)

    samples = {}
    for name, volume in volumes.items():
        try:
            samples[name] = delineation_samples(volume, case.tumour_mask, case.breast_mask)
        except UndefinedAucError as e:
            raise UndefinedAucError(f"Case '{case.case_id}', modality {name}: {e}")
    return samples


def compare_modalities(
    cases,
    unopt: MixingConfig,
    opt: MixingConfig,
    aggregation: str = "mean_per_case",
    r2_min: float = DEFAULT_R2_MIN,
    threads: int | None = None,
) -> ComparisonReport:
    """
    Scores every available modality with the aggregated delineation AUC.

    Rows come in the order ADC (when every case provides one), DWI_b800 (when
    every case has b=800), ADCc, CDIs_unoptimized, CDIs_optimized. The highest
    row is noted "best"; rows below 0.5 are kept as is and annotated.
    """
    _check_aggregation(aggregation)
    cases = _check_cases(cases)
    notes = []

    with_adc = all(case.provided_adc is not None for case in cases)
    if not with_adc:
        notes.append("ADC: not every case provides an ADC map; row omitted")
    with_dwi = all(DWI_REFERENCE_B in case.dwi.bvalues for case in cases)
    if not with_dwi:
        missing = [case.case_id for case in cases if DWI_REFERENCE_B not in case.dwi.bvalues]
        notes.append(f"DWI_b800: b=800 missing in case(s) {missing}; row omitted")

    per_case = _map_cases(
        lambda case: _case_modalities(case, unopt, opt, r2_min, with_adc, with_dwi), cases, threads
    )

    scores = {name: _aggregate([samples[name] for samples in per_case], aggregation)
              for name in MODALITIES if name in per_case[0]}
    best = max(scores, key=scores.get)
    rows = []
    for name, value in scores.items():
        row_notes = [BEST_NOTE] if name == best else []
        if value < 0.5:
            row_notes.append(INVERTED_NOTE)
        rows.append(ModalityRow(name, value, "; ".join(row_notes)))

    metadata = {
        "aggregation": aggregation,
        "r2_min": r2_min,
        "case_ids": [case.case_id for case in cases],
        "seeds": [case.seed for case in cases],
        "unoptimized_digest": unopt.digest(),
        "optimized_digest": opt.digest(),
    }
    report = ComparisonReport(tuple(rows), tuple(notes), metadata)
    logger.info("Comparison over %d case(s): best modality %s (AUC %.4f)", len(cases), best, scores[best])
    return report
