"""
Seeded synthetic breast DWI phantoms with ground-truth breast and tumour masks.

Signals follow S(b) = S0 * exp(-b * ADC) per region, followed by Rician
magnitude noise sqrt((S + n1)^2 + n2^2) with n1, n2 ~ Normal(0, sigma^2).
"""
import logging
from typing import Iterator

import numpy as np
from pydantic import Field, field_validator, model_validator

from cdis_volume.config import ConfigModel
from cdis_volume.errors import ValidationError
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume, validate_bvalues

logger = logging.getLogger(__name__)

DEFAULT_BVALUES = (0.0, 100.0, 600.0, 800.0)


class Ellipsoid(ConfigModel):
    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, value):
        if any(a <= 0 for a in value):
            raise ValueError(f"semi_axes must be positive, got {value}")
        return value

    def mask(self, shape: tuple[int, int, int]) -> np.ndarray:
        """Boolean raster of the voxels whose centers lie inside the ellipsoid."""
        zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
        (cz, cy, cx), (az, ay, ax) = self.center, self.semi_axes
        return ((zz - cz) / az) ** 2 + ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0


class PhantomSpec(ConfigModel):
    shape: tuple[int, int, int] = (25, 224, 224)
    bvalues: tuple[float, ...] = DEFAULT_BVALUES
    s0_tissue: float = 1000.0
    s0_background: float = 0.0
    adc_tissue: float = 1.5e-3
    adc_tumour: float = 0.8e-3
    breast: Ellipsoid = Ellipsoid(center=(12.0, 112.0, 112.0), semi_axes=(10.0, 80.0, 96.0))
    tumour: Ellipsoid = Ellipsoid(center=(12.0, 100.0, 124.0), semi_axes=(4.0, 16.0, 18.0))
    noise_sigma: float = Field(default=10.0, ge=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("shape")
    @classmethod
    def _positive_shape(cls, value):
        if any(n < 1 for n in value):
            raise ValueError(f"shape must be positive, got {value}")
        return value

    @field_validator("bvalues")
    @classmethod
    def _valid_bvalues(cls, value):
        return validate_bvalues(value, min_length=2)

    @model_validator(mode="after")
    def _check_tissue_model(self):
        if self.s0_tissue <= 0:
            raise ValueError(f"s0_tissue must be positive, got {self.s0_tissue}")
        if self.s0_background < 0:
            raise ValueError(f"s0_background must be non-negative, got {self.s0_background}")
        if not (0 <= self.adc_tumour < self.adc_tissue):
            raise ValueError(
                f"Expected 0 <= adc_tumour < adc_tissue (restricted diffusion), "
                f"got adc_tumour={self.adc_tumour}, adc_tissue={self.adc_tissue}"
            )
        breast = self.breast.mask(self.shape)
        tumour = self.tumour.mask(self.shape)
        if not tumour.any():
            raise ValueError("Tumour ellipsoid covers no voxel of the grid")
        if np.any(tumour & ~breast):
            raise ValueError("Tumour ellipsoid must lie inside the breast ellipsoid")
        return self


def _region_maps(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    breast = spec.breast.mask(spec.shape)
    tumour = spec.tumour.mask(spec.shape) & breast
    s0 = np.where(breast, spec.s0_tissue, spec.s0_background)
    adc = np.where(tumour, spec.adc_tumour, spec.adc_tissue)
    return breast, tumour, s0, adc


def generate_phantom(spec: PhantomSpec) -> tuple[DwiVolume, MaskVolume, MaskVolume]:
    """
    Builds (dwi, breast_mask, tumour_mask) for one phantom.

    The noise generator is numpy's counter-based Philox keyed by `spec.seed`.
    n1 is drawn for every voxel in C order over (b, z, y, x), then n2 in the
    same order, so each voxel's draws depend only on its linear index.
    """
    breast, tumour, s0, adc = _region_maps(spec)
    b = np.asarray(spec.bvalues, dtype=np.float64)[:, None, None, None]
    signal = s0[None] * np.exp(-b * adc[None])

    if spec.noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(spec.seed))
        n1 = rng.normal(0.0, spec.noise_sigma, size=signal.shape)
        n2 = rng.normal(0.0, spec.noise_sigma, size=signal.shape)
        signal = np.sqrt((signal + n1) ** 2 + n2**2)

    logger.debug(
        "Generated phantom seed=%d shape=%s breast=%d tumour=%d voxels",
        spec.seed, spec.shape, int(breast.sum()), int(tumour.sum()),
    )
    return DwiVolume(spec.bvalues, signal), MaskVolume(breast), MaskVolume(tumour)


def phantom_adc_map(spec: PhantomSpec) -> ScalarVolume:
    """Ground-truth ADC inside the breast, 0 elsewhere."""
    breast, _, _, adc = _region_maps(spec)
    return ScalarVolume(np.where(breast, adc, 0.0), unit="adc_mm2_per_s")


def generate_phantom_suite(spec: PhantomSpec, count: int, seed: int | None = None) -> Iterator[tuple[str, PhantomSpec]]:
    """Yields (case_id, spec) pairs whose seeds run from `seed` (or spec.seed) upward."""
    if count < 1:
        raise ValidationError(f"Phantom count must be at least 1, got {count}")
    base = spec.seed if seed is None else seed
    for i in range(count):
        case_spec = PhantomSpec.model_validate({**spec.model_dump(), "seed": base + i})
        yield f"phantom_{i:03d}", case_spec
