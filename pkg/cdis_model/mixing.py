"""
CDIs signal mixing: an exponent-weighted product of synthetic acquisitions,

    CDIs(x) = exp( sum_i rho_i * ln(max(S_i(x), floor)) ),

evaluated in the log domain. Exponents past the largest finite float64 log
saturate to the largest finite float64 instead of overflowing.
"""
import logging

import numpy as np
from pydantic import field_validator, model_validator

from cdis_model.diffusion import DEFAULT_R2_MIN, AdcFitResult, fit_adc, synthesize_signals
from cdis_volume.config import ConfigModel
from cdis_volume.errors import ValidationError
from cdis_volume.volume import DwiVolume, ScalarVolume, validate_bvalues

logger = logging.getLogger(__name__)

FLOAT_MAX = float(np.finfo(np.float64).max)
LOG_FLOAT_MAX = float(np.log(FLOAT_MAX))

INITIAL_S_HAT = (50.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0, 6000.0, 7000.0)
INITIAL_RHO = (1.6160, 1.5209, 1.2006, 0.8362, 1.1630, 0.8666, 1.1424, -0.4635)
UNOPTIMIZED_S_HAT = (0.0, 1000.0, 2000.0, 3000.0, 4000.0, 5000.0)
UNOPTIMIZED_RHO = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


class MixingConfig(ConfigModel):
    s_hat: tuple[float, ...]
    rho: tuple[float, ...]
    rho_bounds: tuple[float, float] = (-10.0, 10.0)
    signal_floor: float = 1e-6

    @field_validator("s_hat")
    @classmethod
    def _valid_s_hat(cls, value):
        return validate_bvalues(value)

    @model_validator(mode="after")
    def _check_rho(self):
        lo, hi = self.rho_bounds
        if not lo < hi:
            raise ValueError(f"rho_bounds must satisfy lo < hi, got {self.rho_bounds}")
        if len(self.rho) != len(self.s_hat):
            raise ValueError(f"rho has {len(self.rho)} entries but s_hat has {len(self.s_hat)}")
        if not all(np.isfinite(self.rho)):
            raise ValueError(f"rho must be finite: {list(self.rho)}")
        outside = [r for r in self.rho if not lo <= r <= hi]
        if outside:
            raise ValueError(f"rho values {outside} fall outside the bounds [{lo}, {hi}]")
        if not self.signal_floor > 0:
            raise ValueError(f"signal_floor must be positive, got {self.signal_floor}")
        return self

    @classmethod
    def initial(cls) -> "MixingConfig":
        """Starting point for tuning: eight exponents over s_hat = 50, 1000, ..., 7000."""
        return cls(s_hat=INITIAL_S_HAT, rho=INITIAL_RHO)

    @classmethod
    def unoptimized(cls) -> "MixingConfig":
        """Baseline: unit exponents over s_hat = 0, 1000, ..., 5000."""
        return cls(s_hat=UNOPTIMIZED_S_HAT, rho=UNOPTIMIZED_RHO)

    def with_rho(self, rho) -> "MixingConfig":
        return MixingConfig.model_validate({**self.model_dump(), "rho": tuple(float(r) for r in rho)})


def log_signals(signals: np.ndarray, signal_floor: float) -> np.ndarray:
    return np.log(np.maximum(signals, signal_floor))


def mix_log_signals(logs: np.ndarray, rho) -> np.ndarray:
    """Mixes precomputed log-signals of shape (nb, ...) with exponents `rho`."""
    exponent = np.tensordot(np.asarray(rho, dtype=np.float64), logs, axes=1)
    saturated = exponent >= LOG_FLOAT_MAX
    with np.errstate(over="ignore"):
        mixed = np.exp(np.minimum(exponent, LOG_FLOAT_MAX))
    return np.where(saturated | ~np.isfinite(mixed), FLOAT_MAX, mixed)


def mix(signals: DwiVolume, rho, signal_floor: float) -> ScalarVolume:
    rho = tuple(float(r) for r in rho)
    if len(rho) != signals.nb:
        raise ValidationError(f"rho has {len(rho)} entries but the signals have {signals.nb} b-values")
    if not all(np.isfinite(rho)):
        raise ValidationError(f"rho must be finite: {list(rho)}")
    if not signal_floor > 0:
        raise ValidationError(f"signal_floor must be positive, got {signal_floor}")

    mixed = mix_log_signals(log_signals(signals.data, signal_floor), rho)
    n_saturated = int(np.count_nonzero(mixed == FLOAT_MAX))
    if n_saturated:
        logger.warning("%d voxel(s) saturated while mixing with rho=%s", n_saturated, list(rho))
    return ScalarVolume(mixed, unit="dimensionless")


def cdis_from_fit(fit: AdcFitResult, config: MixingConfig) -> ScalarVolume:
    synthetic = synthesize_signals(fit, config.s_hat)
    mixed = mix(synthetic, config.rho, config.signal_floor)
    return ScalarVolume(np.where(fit.valid.as_bool(), mixed.data, 0.0), unit="dimensionless")


def compute_cdis(native: DwiVolume, config: MixingConfig, r2_min: float = DEFAULT_R2_MIN) -> ScalarVolume:
    """fit_adc -> synthesize_signals at config.s_hat -> mix; voxels with an invalid fit are 0."""
    return cdis_from_fit(fit_adc(native, r2_min=r2_min), config)
