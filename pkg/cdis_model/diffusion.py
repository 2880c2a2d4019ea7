"""
Per-voxel ADC estimation and synthetic signal acquisition.

The mono-exponential model is log(S(b)) = log(S0) - ADC * b, fitted by
unweighted ordinary least squares in the log domain.
"""
import logging
from dataclasses import dataclass

import numpy as np

from cdis_volume.bundle import read_volume, write_volume
from cdis_volume.errors import ValidationError
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume, require_same_shape, validate_bvalues

logger = logging.getLogger(__name__)

DEFAULT_R2_MIN = 0.8
DEFAULT_SIGNAL_FLOOR = 1e-6
FIT_PARTS = ("adc", "s0", "r2", "valid")


@dataclass(frozen=True, eq=False)
class AdcFitResult:
    adc: ScalarVolume
    s0: ScalarVolume
    r2: ScalarVolume
    valid: MaskVolume

    def __post_init__(self):
        require_same_shape(self.adc, self.s0, self.r2, self.valid)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.adc.shape


def fit_adc(dwi: DwiVolume, r2_min: float = DEFAULT_R2_MIN, signal_floor: float = DEFAULT_SIGNAL_FLOOR) -> AdcFitResult:
    """
    Fits ADC, S0 and R^2 for every voxel of a DWI volume.

    Args:
        dwi: native acquisitions, at least two b-values.
        r2_min: minimum coefficient of determination for a valid voxel.
        signal_floor: signals below this are raised to it before the log.

    Returns:
        AdcFitResult. A voxel is valid when r2 >= r2_min, the fitted ADC is
        non-negative and S0 is positive and finite. Invalid voxels carry
        adc = 0 and s0 = 0; their r2 is kept. A voxel whose log-signal is
        exactly constant has slope 0 and r2 = 1.
    """
    validate_bvalues(dwi.bvalues, min_length=2)
    if not (0.0 <= r2_min <= 1.0):
        raise ValidationError(f"r2_min must lie in [0, 1], got {r2_min}")
    if not signal_floor > 0:
        raise ValidationError(f"signal_floor must be positive, got {signal_floor}")

    b = np.asarray(dwi.bvalues, dtype=np.float64)
    y = np.log(np.maximum(dwi.signal_matrix(), signal_floor))

    b_centered = b - b.mean()
    y_mean = y.mean(axis=0)
    y_centered = y - y_mean
    slope = (b_centered @ y_centered) / (b_centered @ b_centered)
    intercept = y_mean - slope * b.mean()

    residual = y - (intercept[None, :] + slope[None, :] * b[:, None])
    ss_res = np.sum(residual**2, axis=0)
    ss_tot = np.sum(y_centered**2, axis=0)

    constant = np.ptp(y, axis=0) == 0
    slope = np.where(constant, 0.0, slope)
    intercept = np.where(constant, y[0], intercept)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(constant | (ss_tot == 0), 1.0, 1.0 - ss_res / ss_tot)
    r2 = np.clip(r2, 0.0, 1.0)

    adc = -slope
    s0 = np.exp(intercept)
    valid = (r2 >= r2_min) & (adc >= 0) & np.isfinite(adc) & (s0 > 0) & np.isfinite(s0)

    shape = dwi.spatial_shape
    logger.debug("ADC fit: %d of %d voxels valid (r2_min=%s)", int(valid.sum()), valid.size, r2_min)
    return AdcFitResult(
        adc=ScalarVolume(np.where(valid, adc, 0.0).reshape(shape), unit="adc_mm2_per_s"),
        s0=ScalarVolume(np.where(valid, s0, 0.0).reshape(shape), unit="signal"),
        r2=ScalarVolume(r2.reshape(shape), unit="dimensionless"),
        valid=MaskVolume(valid.reshape(shape)),
    )


def synthesize_signals(fit: AdcFitResult, s_hat) -> DwiVolume:
    """Synthetic acquisitions s0 * exp(-b * adc) at every b in `s_hat`; invalid voxels are 0."""
    bvalues = validate_bvalues(s_hat)
    b = np.asarray(bvalues, dtype=np.float64)[:, None, None, None]
    signals = fit.s0.data[None] * np.exp(-b * fit.adc.data[None])
    signals = np.where(fit.valid.as_bool()[None], signals, 0.0)
    return DwiVolume(bvalues, signals)


def write_fit(fit: AdcFitResult, prefix) -> None:
    """Writes `<prefix>_adc`, `<prefix>_s0`, `<prefix>_r2` and `<prefix>_valid` bundles."""
    for part in FIT_PARTS:
        write_volume(getattr(fit, part), f"{prefix}_{part}")


def read_fit(prefix) -> AdcFitResult:
    parts = {part: read_volume(f"{prefix}_{part}") for part in FIT_PARTS}
    for part in ("adc", "s0", "r2"):
        if not isinstance(parts[part], ScalarVolume):
            raise ValidationError(f"Bundle '{prefix}_{part}' is not a scalar volume")
    if not isinstance(parts["valid"], MaskVolume):
        raise ValidationError(f"Bundle '{prefix}_valid' is not a mask volume")
    return AdcFitResult(**parts)
