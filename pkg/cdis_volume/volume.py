import logging
from dataclasses import dataclass

import numpy as np

from cdis_volume.errors import BValueNotFoundError, ValidationError

logger = logging.getLogger(__name__)

UNIT_TAGS = ("signal", "adc_mm2_per_s", "dimensionless")


def validate_bvalues(values, min_length: int = 1) -> tuple[float, ...]:
    """
    Checks a b-value list (s/mm^2) and returns it as a tuple of floats.

    The list must be strictly increasing, finite and non-negative. Fitting
    contexts pass min_length=2.
    """
    try:
        bvalues = tuple(float(b) for b in values)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"b-values must be a list of numbers: {e}")

    if len(bvalues) < min_length:
        raise ValidationError(
            f"At least {min_length} b-values are required, got {len(bvalues)}: {list(bvalues)}"
        )
    if not all(np.isfinite(bvalues)):
        raise ValidationError(f"b-values must be finite: {list(bvalues)}")
    if any(b < 0 for b in bvalues):
        raise ValidationError(f"b-values must be non-negative: {list(bvalues)}")
    if any(later <= earlier for earlier, later in zip(bvalues, bvalues[1:])):
        raise ValidationError(f"b-values must be strictly increasing without duplicates: {list(bvalues)}")
    return bvalues


def _frozen_float_array(data, ndim: int, kind: str) -> np.ndarray:
    array = np.array(data, dtype=np.float64, copy=True)
    if array.ndim != ndim:
        raise ValidationError(f"{kind} expects a {ndim}-D array, got shape {array.shape}")
    if any(n < 1 for n in array.shape):
        raise ValidationError(f"{kind} dimensions must be positive, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{kind} contains non-finite values")
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class DwiVolume:
    """Multi-b-value signal volume indexed (b, z, y, x)."""

    bvalues: tuple[float, ...]
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bvalues", validate_bvalues(self.bvalues))
        data = _frozen_float_array(self.data, 4, "DwiVolume")
        if data.shape[0] != len(self.bvalues):
            raise ValidationError(
                f"DwiVolume has {data.shape[0]} b-index planes but {len(self.bvalues)} b-values"
            )
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def nb(self) -> int:
        return self.data.shape[0]

    @property
    def nz(self) -> int:
        return self.data.shape[1]

    def index_of(self, b: float) -> int:
        """Position of an exactly matching b-value."""
        for i, value in enumerate(self.bvalues):
            if value == float(b):
                return i
        raise BValueNotFoundError(
            f"b-value {float(b)} not present; available b-values: {list(self.bvalues)}"
        )

    def signal_matrix(self) -> np.ndarray:
        """Read-only (nb, voxels) view of the signals."""
        return self.data.reshape(self.nb, -1)

    def equals(self, other) -> bool:
        return (
            isinstance(other, DwiVolume)
            and self.bvalues == other.bvalues
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """3-D float map (z, y, x): ADC, single-b DWI or CDIs output."""

    data: np.ndarray
    unit: str = "signal"

    def __post_init__(self):
        if self.unit not in UNIT_TAGS:
            raise ValidationError(f"Unknown unit tag '{self.unit}'; expected one of {list(UNIT_TAGS)}")
        object.__setattr__(self, "data", _frozen_float_array(self.data, 3, "ScalarVolume"))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    def equals(self, other) -> bool:
        return (
            isinstance(other, ScalarVolume)
            and self.unit == other.unit
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class MaskVolume:
    """3-D binary map (z, y, x) holding only 0 and 1."""

    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 3:
            raise ValidationError(f"MaskVolume expects a 3-D array, got shape {raw.shape}")
        if any(n < 1 for n in raw.shape):
            raise ValidationError(f"MaskVolume dimensions must be positive, got shape {raw.shape}")
        if raw.dtype != np.bool_ and not np.all((raw == 0) | (raw == 1)):
            raise ValidationError("MaskVolume may only contain the values 0 and 1")
        data = raw.astype(np.uint8, copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    def as_bool(self) -> np.ndarray:
        return self.data.astype(bool)

    def count(self) -> int:
        return int(self.data.sum())

    def equals(self, other) -> bool:
        return isinstance(other, MaskVolume) and np.array_equal(self.data, other.data)


def extract_b_slice(dwi: DwiVolume, b: float) -> ScalarVolume:
    """Returns the 3-D signal volume acquired at b-value `b` (exact match)."""
    index = dwi.index_of(b)
    logger.debug("Extracting b=%s (index %d) from DWI of shape %s", b, index, dwi.shape)
    return ScalarVolume(dwi.data[index], unit="signal")


def require_same_shape(*volumes) -> tuple[int, int, int]:
    """All 3-D volumes (or the spatial part of DWI volumes) must share one shape."""
    shapes = {v.spatial_shape if isinstance(v, DwiVolume) else v.shape for v in volumes}
    if len(shapes) != 1:
        raise ValidationError(f"Volume shapes differ: {sorted(shapes)}")
    return shapes.pop()
