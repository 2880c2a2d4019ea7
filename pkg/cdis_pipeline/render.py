import io
import logging

import numpy as np
from PIL import Image

from cdis_volume.errors import ValidationError
from cdis_volume.volume import MaskVolume, ScalarVolume

logger = logging.getLogger(__name__)


def parse_windowing(windowing: str) -> tuple[str, tuple[float, float] | None]:
    """Parses "minmax" or "percentile:p_lo,p_hi" (0 <= p_lo < p_hi <= 100)."""
    if windowing == "minmax":
        return "minmax", None
    kind, _, params = windowing.partition(":")
    if kind != "percentile" or not params:
        raise ValidationError(f"Unknown windowing '{windowing}'; expected 'minmax' or 'percentile:p_lo,p_hi'")
    try:
        p_lo, p_hi = (float(p) for p in params.split(","))
    except ValueError:
        raise ValidationError(f"Percentile window needs two numbers, got '{params}'")
    if not (0.0 <= p_lo < p_hi <= 100.0):
        raise ValidationError(f"Percentile window must satisfy 0 <= p_lo < p_hi <= 100, got {p_lo}, {p_hi}")
    return "percentile", (p_lo, p_hi)


def default_slices(nz: int) -> list[int]:
    """First, middle and last slice, without repeats."""
    return list(dict.fromkeys([0, nz // 2, nz - 1]))


def window_to_uint8(planes: np.ndarray, windowing: str = "minmax") -> np.ndarray:
    kind, percentiles = parse_windowing(windowing)
    if kind == "minmax":
        lo, hi = float(planes.min()), float(planes.max())
    else:
        lo, hi = (float(v) for v in np.percentile(planes, percentiles))
    if not hi > lo:
        # degenerate window
        return np.zeros(planes.shape, dtype=np.uint8)
    scaled = np.clip((planes - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def render_montage(vol, slice_indices=None, windowing: str = "minmax") -> bytes:
    """
    8-bit grayscale PNG of the chosen slices placed left to right.

    One window is computed over all chosen slices together, so their gray
    levels are comparable.
    """
    if not isinstance(vol, (ScalarVolume, MaskVolume)):
        raise ValidationError(f"render_montage needs a scalar or mask volume, got {type(vol).__name__}")
    nz = vol.nz
    indices = default_slices(nz) if slice_indices is None else [int(i) for i in slice_indices]
    if not indices:
        raise ValidationError("At least one slice index is required")
    out_of_range = [i for i in indices if not 0 <= i < nz]
    if out_of_range:
        raise ValidationError(f"Slice indices {out_of_range} out of range for a volume with {nz} slices")

    planes = vol.data[indices].astype(np.float64)
    pixels = window_to_uint8(planes, windowing)
    montage = np.concatenate(list(pixels), axis=1)

    buffer = io.BytesIO()
    Image.fromarray(montage).save(buffer, format="PNG")
    logger.debug("Rendered slices %s as a %dx%d montage", indices, montage.shape[1], montage.shape[0])
    return buffer.getvalue()
