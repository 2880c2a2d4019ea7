"""
Geometric standardization of volumes and threshold-derived breast masks.

Resampling is edge-aligned: the centers of the corner pixels of the input map
onto the centers of the corner pixels of the output.
"""
import logging

import numpy as np
from scipy import ndimage

from cdis_volume.errors import EmptyMaskError, InsufficientSlicesError, ValidationError
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume

logger = logging.getLogger(__name__)


def select_slices(vol, target_nz: int):
    """
    Keeps a centered window of `target_nz` slices.

    With an odd surplus the extra slice is dropped from the high-index end.
    """
    if target_nz < 1:
        raise ValidationError(f"target_nz must be positive, got {target_nz}")
    nz = vol.nz
    if nz < target_nz:
        raise InsufficientSlicesError(f"Volume has {nz} slices but {target_nz} are required.")
    if nz == target_nz:
        return vol

    start = (nz - target_nz) // 2
    window = slice(start, start + target_nz)
    logger.debug("Keeping slices %d..%d of %d", start, start + target_nz - 1, nz)
    if isinstance(vol, DwiVolume):
        return DwiVolume(vol.bvalues, vol.data[:, window])
    if isinstance(vol, ScalarVolume):
        return ScalarVolume(vol.data[window], unit=vol.unit)
    if isinstance(vol, MaskVolume):
        return MaskVolume(vol.data[window])
    raise ValidationError(f"Cannot select slices of {type(vol).__name__}")


def _edge_aligned_coords(n_in: int, n_out: int) -> np.ndarray:
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out)
    return np.arange(n_out) * (n_in - 1) / (n_out - 1)


def _lerp(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a + w*(b - a) keeps constants exact; the clip keeps results inside [min(a,b), max(a,b)].
    return np.clip(a + w * (b - a), np.minimum(a, b), np.maximum(a, b))


def _bilinear_stack(stack: np.ndarray, out_ny: int, out_nx: int) -> np.ndarray:
    """Resizes every 2-D image of a (..., ny, nx) stack."""
    ny, nx = stack.shape[-2:]
    if (ny, nx) == (out_ny, out_nx):
        return stack.copy()

    ys = _edge_aligned_coords(ny, out_ny)
    xs = _edge_aligned_coords(nx, out_nx)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(ny - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(nx - 2, 0))
    y1 = np.minimum(y0 + 1, ny - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    rows0 = stack[..., y0, :]
    rows1 = stack[..., y1, :]
    top = _lerp(rows0[..., x0], rows0[..., x1], wx)
    bottom = _lerp(rows1[..., x0], rows1[..., x1], wx)
    return _lerp(top, bottom, wy)


def _check_output_dims(out_ny: int, out_nx: int):
    if out_ny < 1 or out_nx < 1:
        raise ValidationError(f"Output dimensions must be positive, got {out_ny}x{out_nx}")


def resize_bilinear(vol: ScalarVolume, out_ny: int, out_nx: int) -> ScalarVolume:
    """Per-slice bilinear resize of a scalar volume."""
    _check_output_dims(out_ny, out_nx)
    return ScalarVolume(_bilinear_stack(vol.data, out_ny, out_nx), unit=vol.unit)


def resize_dwi(dwi: DwiVolume, out_ny: int, out_nx: int) -> DwiVolume:
    """Bilinear resize applied independently to every b-index."""
    _check_output_dims(out_ny, out_nx)
    return DwiVolume(dwi.bvalues, _bilinear_stack(dwi.data, out_ny, out_nx))


def resize_nearest(mask: MaskVolume, out_ny: int, out_nx: int) -> MaskVolume:
    """Nearest-neighbour resize on the same edge-aligned grid; output stays binary."""
    _check_output_dims(out_ny, out_nx)
    ny, nx = mask.shape[1:]
    yi = np.floor(_edge_aligned_coords(ny, out_ny) + 0.5).astype(int)
    xi = np.floor(_edge_aligned_coords(nx, out_nx) + 0.5).astype(int)
    return MaskVolume(mask.data[:, yi][:, :, xi])


def resize_volume(vol, out_ny: int, out_nx: int):
    if isinstance(vol, DwiVolume):
        return resize_dwi(vol, out_ny, out_nx)
    if isinstance(vol, ScalarVolume):
        return resize_bilinear(vol, out_ny, out_nx)
    if isinstance(vol, MaskVolume):
        return resize_nearest(vol, out_ny, out_nx)
    raise ValidationError(f"Cannot resize {type(vol).__name__}")


def otsu_threshold(values, n_bins: int = 256) -> float:
    """
    Otsu's threshold over an `n_bins` equal-width histogram on [min, max].

    Candidates are the interior bin edges; a value falls in the upper class
    when it is >= the threshold. Returns the edge maximizing the
    between-class variance, the lowest such edge on ties. When all values are
    identical that value is returned.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("otsu_threshold needs at least one value")
    if not np.all(np.isfinite(values)):
        raise ValidationError("otsu_threshold values must be finite")
    if n_bins < 2:
        raise ValidationError(f"n_bins must be at least 2, got {n_bins}")

    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        return lo

    edges = np.linspace(lo, hi, n_bins + 1)
    # bin k holds edges[k] <= v < edges[k+1]; the maximum lands in the last bin
    bins = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins).astype(np.float64)
    sums = np.bincount(bins, weights=values, minlength=n_bins)

    n_low = np.cumsum(counts)[:-1]
    sum_low = np.cumsum(sums)[:-1]
    n_high = values.size - n_low
    sum_high = sums.sum() - sum_low

    with np.errstate(divide="ignore", invalid="ignore"):
        mean_low = sum_low / n_low
        mean_high = sum_high / n_high
        between = (n_low / values.size) * (n_high / values.size) * (mean_low - mean_high) ** 2
    between = np.where((n_low > 0) & (n_high > 0), between, -np.inf)

    return float(edges[1 + int(np.argmax(between))])


def compute_breast_mask(dwi: DwiVolume) -> MaskVolume:
    """
    Breast mask from the lowest-b volume.

    Otsu threshold, keep voxels at or above it (none for a constant volume),
    retain the largest 6-connected component, then fill holes enclosed
    within each slice.
    """
    reference = dwi.data[0]
    threshold = otsu_threshold(reference)
    if reference.max() > reference.min():
        # edge values belong to the upper class, as in otsu_threshold
        foreground = reference >= threshold
    else:
        foreground = np.zeros(reference.shape, dtype=bool)
    if not foreground.any():
        raise EmptyMaskError(
            f"Breast mask is empty after thresholding the b={dwi.bvalues[0]} volume at {threshold}"
        )

    labels, n_labels = ndimage.label(foreground, structure=ndimage.generate_binary_structure(3, 1))
    sizes = np.bincount(labels.ravel(), minlength=n_labels + 1)
    sizes[0] = 0
    largest = labels == int(np.argmax(sizes))

    filled = np.stack([ndimage.binary_fill_holes(plane) for plane in largest])
    logger.debug(
        "Breast mask: threshold %.4g, %d component(s), kept %d voxels",
        threshold, n_labels, int(filled.sum()),
    )
    return MaskVolume(filled)


def dice_coefficient(a: MaskVolume, b: MaskVolume) -> float:
    """2|A & B| / (|A| + |B|); two empty masks score 1.0."""
    if a.shape != b.shape:
        raise ValidationError(f"Mask shapes differ: {a.shape} vs {b.shape}")
    total = a.count() + b.count()
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(a.as_bool(), b.as_bool()).sum()) / total
