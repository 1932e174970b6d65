"""Line-delimited manifests of candidate utterances.

One JSON object per line, fields exactly as in ``UtteranceRecord``; the
``latent`` block is present only for simulated corpora. Cleansing variants
live in sibling files named ``<stem>.<variant>.jsonl``; the identity variant
is the base file itself.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set

from pydantic import ValidationError

from src.data_collection.artifacts import dumps_line, atomic_write_text, iter_jsonl
from src.models.schemas import IDENTITY, Manifest, UtteranceRecord, variant_registry
from src.utils.errors import DataError, ManifestError

logger = logging.getLogger(__name__)


def variant_path(base: Path, variant: str) -> Path:
    """Path of the ``variant`` manifest belonging to ``base``.

    Args:
        base: Identity manifest, e.g. ``corpus.jsonl``
        variant: Registered variant name

    Returns:
        ``base`` for identity, else ``<stem>.<variant>.jsonl`` next to it
    """
    variant_registry.require(variant)
    base = Path(base)
    if variant == IDENTITY:
        return base
    return base.with_name(f"{base.stem}.{variant}{base.suffix or '.jsonl'}")


def _infer_variant(path: Path) -> str:
    parts = path.name.split(".")
    if len(parts) >= 3 and variant_registry.is_registered(parts[-2]):
        return parts[-2]
    return IDENTITY


def load_manifest(path: Path, variant: Optional[str] = None) -> Manifest:
    """Load and validate a manifest, preserving record order.

    Args:
        path: JSONL manifest
        variant: Variant of the file; inferred from the file name when None

    Returns:
        Validated Manifest

    Raises:
        ManifestError: Malformed line, duplicate id, inconsistent dimensions,
            positive ctc_score, or an empty file; the message names the line
    """
    path = Path(path)
    variant = variant or _infer_variant(path)
    records: List[UtteranceRecord] = []
    seen_ids: Dict[str, int] = {}
    dims = None

    for lineno, obj in iter_jsonl(path):
        try:
            record = UtteranceRecord.model_validate(obj)
        except ValidationError as e:
            first = e.errors()[0]
            where = ".".join(str(p) for p in first.get("loc", ()))
            raise ManifestError(
                f"invalid record ({where}: {first.get('msg')})", path=path, line=lineno
            ) from e

        if record.utterance_id in seen_ids:
            raise ManifestError(
                f"duplicate utterance_id {record.utterance_id!r} "
                f"(first seen on line {seen_ids[record.utterance_id]})",
                path=path, line=lineno
            )
        seen_ids[record.utterance_id] = lineno

        record_dims = (len(record.embedding), len(record.features))
        if dims is None:
            dims = record_dims
        elif record_dims != dims:
            raise ManifestError(
                f"dimensions (D={record_dims[0]}, F={record_dims[1]}) differ from "
                f"(D={dims[0]}, F={dims[1]})",
                path=path, line=lineno
            )
        records.append(record)

    if not records:
        raise ManifestError("manifest must be non-empty", path=path)

    manifest = Manifest(records=tuple(records), variant=variant)
    logger.debug(f"Loaded {len(manifest)} records from {path} ({variant})")
    return manifest


def record_to_dict(record: UtteranceRecord, real_mode: bool = False) -> Dict[str, Any]:
    data = record.model_dump()
    if real_mode or data.get("latent") is None:
        data.pop("latent", None)
    return data


def write_manifest(m: Manifest, path: Path, real_mode: bool = False) -> None:
    """Write ``m`` in canonical form.

    Records are sorted by utterance_id and reals carry 6 significant digits,
    so the same manifest always produces the same bytes.

    Args:
        m: Manifest to write
        path: Destination
        real_mode: Drop latent blocks

    Raises:
        DataError: Empty manifest or unwritable path
    """
    if not m.records:
        raise DataError("manifest must be non-empty")
    records = sorted(m.records, key=lambda r: r.utterance_id)
    text = "".join(dumps_line(record_to_dict(r, real_mode)) + "\n" for r in records)
    atomic_write_text(Path(path), text)
    logger.debug(f"Wrote {len(records)} records to {path}")


def check_same_ids(manifests: Mapping[str, Manifest]) -> Set[str]:
    """Return the shared utterance-id set or raise if variants disagree."""
    expected: Optional[Set[str]] = None
    first = None
    for variant, manifest in manifests.items():
        ids = set(manifest.ids())
        if expected is None:
            expected, first = ids, variant
        elif ids != expected:
            missing = sorted(expected ^ ids)[:3]
            raise DataError(
                f"variant {variant!r} and {first!r} cover different utterances "
                f"(e.g. {missing})"
            )
    return expected or set()


def load_variant_manifests(base: Path, variants: Sequence[str]) -> Dict[str, Manifest]:
    """Load every variant manifest of ``base`` and check they share ids.

    Returns:
        Variant -> Manifest in registration order
    """
    manifests = {
        v: load_manifest(variant_path(base, v), variant=v)
        for v in variant_registry.sort(variants)
    }
    check_same_ids(manifests)
    return manifests


def write_variant_manifests(
    manifests: Mapping[str, Manifest],
    base: Path,
    real_mode: bool = False
) -> List[Path]:
    """Write each variant manifest to its sibling path of ``base``."""
    paths = []
    for variant, manifest in manifests.items():
        path = variant_path(base, variant)
        write_manifest(manifest, path, real_mode=real_mode)
        paths.append(path)
    return paths
