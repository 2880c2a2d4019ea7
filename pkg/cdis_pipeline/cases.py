import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from cdis_volume.bundle import read_volume, write_volume
from cdis_volume.errors import ConfigError, ConfigReadError, ValidationError, VolumeIOError
from cdis_volume.phantom import PhantomSpec, generate_phantom, generate_phantom_suite, phantom_adc_map
from cdis_volume.preprocess import compute_breast_mask, resize_volume, select_slices
from cdis_volume.volume import DwiVolume, MaskVolume, ScalarVolume, require_same_shape

logger = logging.getLogger(__name__)

DEFAULT_TARGET_NZ = 25
DEFAULT_OUT_HW = 224


@dataclass(frozen=True, eq=False)
class CaseRecord:
    case_id: str
    dwi: DwiVolume
    tumour_mask: MaskVolume | None
    breast_mask: MaskVolume | None = None
    provided_adc: ScalarVolume | None = None
    seed: int | None = None


@dataclass(frozen=True)
class SkippedCase:
    case_id: str
    reason: str


def _check_classes(case: CaseRecord):
    tumour = case.tumour_mask.as_bool()
    breast = case.breast_mask.as_bool()
    if not (tumour & breast).any():
        raise ValidationError(f"Case '{case.case_id}': tumour mask does not overlap the breast mask")
    if not (breast & ~tumour).any():
        raise ValidationError(f"Case '{case.case_id}': breast mask has no healthy (non-tumour) voxels")


def prepare_case(raw: CaseRecord, target_nz: int = DEFAULT_TARGET_NZ, out_hw: int = DEFAULT_OUT_HW) -> CaseRecord:
    """
    Standardizes a case geometrically: a centered window of `target_nz`
    slices, then every slice resized to out_hw x out_hw. DWI and ADC volumes
    are resampled bilinearly, masks by nearest neighbour. The breast mask is
    computed from the DWI when the case does not carry one.
    """
    if raw.tumour_mask is None:
        raise ValidationError(f"Case '{raw.case_id}' has no tumour mask")
    if raw.dwi.nb < 2:
        raise ValidationError(
            f"Case '{raw.case_id}' has {raw.dwi.nb} b-value(s); at least 2 are required for the ADC fit"
        )
    present = [v for v in (raw.dwi, raw.tumour_mask, raw.breast_mask, raw.provided_adc) if v is not None]
    try:
        require_same_shape(*present)
    except ValidationError as e:
        raise ValidationError(f"Case '{raw.case_id}': {e}")

    def standardize(vol):
        if vol is None:
            return None
        return resize_volume(select_slices(vol, target_nz), out_hw, out_hw)

    dwi = standardize(raw.dwi)
    breast = standardize(raw.breast_mask)
    if breast is None:
        breast = compute_breast_mask(dwi)
        logger.info("Case '%s': computed breast mask with %d voxels", raw.case_id, breast.count())

    case = replace(
        raw,
        dwi=dwi,
        tumour_mask=standardize(raw.tumour_mask),
        breast_mask=breast,
        provided_adc=standardize(raw.provided_adc),
    )
    _check_classes(case)
    return case


def prepare_cases(raws, target_nz: int = DEFAULT_TARGET_NZ, out_hw: int = DEFAULT_OUT_HW) -> tuple[list[CaseRecord], list[SkippedCase]]:
    """Applies prepare_case to every case, skipping the ones that fail validation."""
    prepared, skipped = [], []
    for raw in raws:
        try:
            prepared.append(prepare_case(raw, target_nz=target_nz, out_hw=out_hw))
        except ValidationError as e:
            logger.warning("Skipping case '%s': %s", raw.case_id, e)
            skipped.append(SkippedCase(raw.case_id, str(e)))
    return prepared, skipped


def ensure_breast_masks(cases) -> list[CaseRecord]:
    """For unpreprocessed cases: fill in computed breast masks and check both classes exist."""
    completed = []
    for case in cases:
        if case.tumour_mask is None:
            raise ValidationError(f"Case '{case.case_id}' has no tumour mask")
        if case.breast_mask is None:
            case = replace(case, breast_mask=compute_breast_mask(case.dwi))
        _check_classes(case)
        completed.append(case)
    return completed


def _load_bundle(manifest_dir: Path, entry: dict, key: str, expected_type, case_id: str):
    stem = entry.get(key)
    if stem is None:
        return None
    vol = read_volume(manifest_dir / stem)
    if not isinstance(vol, expected_type):
        raise ValidationError(
            f"Case '{case_id}': bundle '{stem}' is a {type(vol).__name__}, expected {expected_type.__name__}"
        )
    return vol


def load_case_manifest(filepath) -> list[CaseRecord]:
    """
    Loads the cases listed in a manifest.

    The manifest is a JSON list of objects with an "id", a "dwi" bundle stem,
    a "tumour" stem and optional "breast", "adc" stems and "seed". Stems are
    resolved relative to the manifest's directory.
    """
    filepath = Path(filepath)
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            entries = json.load(f)
    except FileNotFoundError:
        raise ConfigReadError(f"Case manifest '{filepath}' not found.")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Error decoding JSON from '{filepath}': {e}")
    except OSError as e:
        raise ConfigReadError(f"Could not read case manifest '{filepath}': {e}")

    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"Case manifest '{filepath}' must be a non-empty JSON list.")

    cases = []
    for entry in entries:
        if not isinstance(entry, dict) or not all(k in entry for k in ("id", "dwi")):
            raise ConfigError(f"Case manifest entry missing 'id' or 'dwi': {entry}")
        case_id = str(entry["id"])
        cases.append(
            CaseRecord(
                case_id=case_id,
                dwi=_load_bundle(filepath.parent, entry, "dwi", DwiVolume, case_id),
                tumour_mask=_load_bundle(filepath.parent, entry, "tumour", MaskVolume, case_id),
                breast_mask=_load_bundle(filepath.parent, entry, "breast", MaskVolume, case_id),
                provided_adc=_load_bundle(filepath.parent, entry, "adc", ScalarVolume, case_id),
                seed=entry.get("seed"),
            )
        )
    logger.info("Loaded %d case(s) from %s", len(cases), filepath)
    return cases


def write_phantom_suite(spec: PhantomSpec, out_dir, count: int = 1, seed: int | None = None) -> Path:
    """
    Writes `count` phantoms into `out_dir` with a `manifest.json` describing them.

    Each case gets `<id>_dwi`, `<id>_breast`, `<id>_tumour` and `<id>_adc` bundles.
    """
    out_dir = Path(out_dir)
    entries = []
    for case_id, case_spec in generate_phantom_suite(spec, count, seed):
        dwi, breast, tumour = generate_phantom(case_spec)
        write_volume(dwi, out_dir / f"{case_id}_dwi")
        write_volume(breast, out_dir / f"{case_id}_breast")
        write_volume(tumour, out_dir / f"{case_id}_tumour")
        write_volume(phantom_adc_map(case_spec), out_dir / f"{case_id}_adc")
        entries.append({
            "id": case_id,
            "seed": case_spec.seed,
            "dwi": f"{case_id}_dwi",
            "breast": f"{case_id}_breast",
            "tumour": f"{case_id}_tumour",
            "adc": f"{case_id}_adc",
        })
        logger.info("Phantom %d/%d written (%s, seed %d)", len(entries), count, case_id, case_spec.seed)

    manifest_path = out_dir / "manifest.json"
    try:
        with open(manifest_path, "w", encoding="utf-8") as f:
            f.write(json.dumps(entries, indent=2) + "\n")
    except OSError as e:
        raise VolumeIOError(f"Could not write case manifest '{manifest_path}': {e}")
    return manifest_path
