"""
Two-file volume bundle: `<stem>.json` header plus `<stem>.raw` payload.

The payload is raw little-endian C-order bytes, index order (b,) z, y, x from
slowest to fastest. Float volumes are stored as f32le, masks as u8.
"""
import json
import logging
from pathlib import Path

import numpy as np

from cdis_volume.errors import CorruptFileError, UnsupportedFormatError, ValidationError, VolumeIOError
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DTYPES = {"f32le": np.dtype("<f4"), "u8": np.dtype("u1")}
FLOAT32_MAX = float(np.finfo(np.float32).max)


def bundle_paths(path_stem) -> tuple[Path, Path]:
    stem = str(path_stem)
    return Path(stem + ".json"), Path(stem + ".raw")


def _header_for(vol) -> dict:
    if isinstance(vol, DwiVolume):
        return {
            "format_version": FORMAT_VERSION,
            "dtype": "f32le",
            "shape": list(vol.shape),
            "bvalues": list(vol.bvalues),
            "unit": "signal",
        }
    if isinstance(vol, ScalarVolume):
        return {"format_version": FORMAT_VERSION, "dtype": "f32le", "shape": list(vol.shape), "unit": vol.unit}
    if isinstance(vol, MaskVolume):
        return {"format_version": FORMAT_VERSION, "dtype": "u8", "shape": list(vol.shape), "unit": "dimensionless"}
    raise ValidationError(f"Cannot write object of type {type(vol).__name__} as a volume bundle")


def _payload_for(vol, path: Path) -> bytes:
    if isinstance(vol, MaskVolume):
        return vol.data.astype(DTYPES["u8"]).tobytes(order="C")

    data = vol.data
    out_of_range = np.abs(data) > FLOAT32_MAX
    if out_of_range.any():
        # Saturate like the mixing stage does, so saturated maps stay writable.
        logger.warning(
            "%d value(s) exceed the float32 range and are saturated when writing %s",
            int(out_of_range.sum()), path,
        )
        data = np.clip(data, -FLOAT32_MAX, FLOAT32_MAX)
    return data.astype(DTYPES["f32le"]).tobytes(order="C")


def write_volume(vol, path_stem) -> None:
    """
    Writes a DwiVolume, ScalarVolume or MaskVolume as `<stem>.json` + `<stem>.raw`.

    Raises:
        ValidationError: if `vol` is not a volume type.
        VolumeIOError: if either file cannot be written. The message names the path.
    """
    header_path, raw_path = bundle_paths(path_stem)
    header = _header_for(vol)
    payload = _payload_for(vol, raw_path)

    try:
        with open(raw_path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise VolumeIOError(f"Could not write volume payload '{raw_path}': {e}")
    try:
        with open(header_path, "w", encoding="utf-8") as f:
            f.write(json.dumps(header, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise VolumeIOError(f"Could not write volume header '{header_path}': {e}")
    logger.debug("Wrote %s (%s, shape %s)", path_stem, header["dtype"], header["shape"])


def _read_header(header_path: Path) -> dict:
    try:
        with open(header_path, "r", encoding="utf-8") as f:
            header = json.load(f)
    except FileNotFoundError:
        raise VolumeIOError(f"Volume header '{header_path}' not found.")
    except json.JSONDecodeError as e:
        raise CorruptFileError(f"Volume header '{header_path}' is not valid JSON: {e}")
    except OSError as e:
        raise VolumeIOError(f"Could not read volume header '{header_path}': {e}")

    if not isinstance(header, dict) or not all(k in header for k in ("format_version", "dtype", "shape")):
        raise CorruptFileError(f"Volume header '{header_path}' is missing 'format_version', 'dtype' or 'shape'.")
    if header["format_version"] != FORMAT_VERSION:
        raise UnsupportedFormatError(
            f"Volume header '{header_path}' has format_version {header['format_version']!r}; "
            f"only {FORMAT_VERSION} is supported."
        )
    if header["dtype"] not in DTYPES:
        raise UnsupportedFormatError(
            f"Volume header '{header_path}' has unsupported dtype {header['dtype']!r}; "
            f"expected one of {sorted(DTYPES)}."
        )
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(n, int) and n > 0 for n in shape):
        raise CorruptFileError(f"Volume header '{header_path}' has an invalid shape {shape!r}.")
    return header


def read_volume(path_stem):
    """
    Reads a bundle written by write_volume and returns the matching volume type.

    A header with `bvalues` yields a DwiVolume, a u8 payload a MaskVolume and
    anything else a ScalarVolume. Payload values are widened to float64.
    """
    header_path, raw_path = bundle_paths(path_stem)
    header = _read_header(header_path)
    dtype = DTYPES[header["dtype"]]
    shape = tuple(header["shape"])

    try:
        with open(raw_path, "rb") as f:
            payload = f.read()
    except FileNotFoundError:
        raise VolumeIOError(f"Volume payload '{raw_path}' not found.")
    except OSError as e:
        raise VolumeIOError(f"Could not read volume payload '{raw_path}': {e}")

    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise CorruptFileError(
            f"Volume payload '{raw_path}' holds {len(payload)} bytes but header shape {list(shape)} "
            f"with dtype {header['dtype']} needs {expected}."
        )

    array = np.frombuffer(payload, dtype=dtype).reshape(shape)
    if header["dtype"] == "u8":
        if len(shape) != 3:
            raise CorruptFileError(f"Mask bundle '{header_path}' must be 3-D, got shape {list(shape)}.")
        return MaskVolume(array)

    if "bvalues" in header:
        if len(shape) != 4:
            raise CorruptFileError(f"DWI bundle '{header_path}' must be 4-D, got shape {list(shape)}.")
        return DwiVolume(tuple(header["bvalues"]), array.astype(np.float64))

    if len(shape) != 3:
        raise CorruptFileError(f"Scalar bundle '{header_path}' must be 3-D, got shape {list(shape)}.")
    return ScalarVolume(array.astype(np.float64), unit=header.get("unit", "signal"))
