"""Canonical JSONL/JSON artifact I/O shared by every stage."""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple

from pydantic import ValidationError

from src.models.schemas import (
    CorpusSelection,
    QualityTable,
    Report,
    SelectionEntry,
    SelectionMethod,
    SpeakerScore,
    variant_registry,
)
from src.utils.errors import DataError, ManifestError
from src.utils.validators import round_sig

logger = logging.getLogger(__name__)


def canonical(value: Any) -> Any:
    """Round every float to 6 significant digits, recursively."""
    if isinstance(value, float):
        return round_sig(value)
    if isinstance(value, Mapping):
        return {str(k): canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    return value


def dumps_line(record: Mapping[str, Any]) -> str:
    """Serialize one record as a canonical single-line JSON object."""
    return json.dumps(
        canonical(record), sort_keys=True, ensure_ascii=False,
        separators=(",", ":"), allow_nan=False
    )


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary sibling and rename.

    Args:
        path: Destination file; parent directories are created

    Raises:
        DataError: If the path is not writable
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        with tmp.open("w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def write_jsonl(path: Path, records: Sequence[Mapping[str, Any]]) -> None:
    """Write records as canonical JSONL (one object per line, UTF-8)."""
    atomic_write_text(Path(path), "".join(dumps_line(r) + "\n" for r in records))


def iter_jsonl(path: Path) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield ``(line_number, object)`` for each non-blank line.

    Raises:
        ManifestError: On unreadable files or lines that are not JSON objects
    """
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read file: {e}", path=path) from e
    with handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed JSON: {e.msg}", path=path, line=lineno) from e
            if not isinstance(obj, dict):
                raise ManifestError("line is not a JSON object", path=path, line=lineno)
            yield lineno, obj


def write_json(path: Path, payload: Mapping[str, Any]) -> None:
    """Write a canonical, indented JSON document."""
    text = json.dumps(
        canonical(payload), sort_keys=True, indent=2, ensure_ascii=False,
        allow_nan=False
    )
    atomic_write_text(Path(path), text + "\n")


def read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON: {e.msg}") from e
    if not isinstance(payload, dict):
        raise DataError(f"{path}: expected a JSON object")
    return payload


def sidecar_path(path: Path, suffix: str) -> Path:
    """``quality.jsonl`` + ``speakers`` -> ``quality.speakers.jsonl``."""
    path = Path(path)
    return path.with_name(f"{path.stem}.{suffix}{path.suffix or '.jsonl'}")


# Quality tables


def write_quality_table(table: QualityTable, path: Path) -> Path:
    """Write scores to ``path`` and speaker scores to its sidecar.

    Lines are sorted by utterance_id, then variant registration order.

    Returns:
        Path of the speaker-score sidecar
    """
    rows = [
        {"utterance_id": uid, "variant": v, "score": table.scores[v][uid]}
        for uid in table.utterance_ids()
        for v in table.variants
    ]
    write_jsonl(path, rows)

    speaker_rows = []
    for v in table.variants:
        seen = set(table.seen_speakers[v])
        for group_id in sorted(table.speaker_scores[v]):
            speaker_rows.append({
                "variant": v,
                "group_id": group_id,
                "pseudo_mos": table.speaker_scores[v][group_id],
                "seen": group_id in seen,
            })
    speakers_path = sidecar_path(path, "speakers")
    write_jsonl(speakers_path, speaker_rows)
    return speakers_path


def read_quality_table(path: Path) -> QualityTable:
    """Read a quality table and its speaker sidecar."""
    scores: Dict[str, Dict[str, float]] = {}
    order: List[str] = []
    for lineno, row in iter_jsonl(path):
        try:
            uid, v, score = row["utterance_id"], row["variant"], float(row["score"])
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad quality row: {e}", path=Path(path), line=lineno) from e
        if v not in scores:
            scores[v] = {}
            order.append(v)
        if uid in scores[v]:
            raise ManifestError(f"duplicate entry ({uid!r}, {v!r})", path=Path(path), line=lineno)
        scores[v][uid] = score

    speakers: Dict[str, Dict[str, float]] = {v: {} for v in order}
    seen: Dict[str, List[str]] = {v: [] for v in order}
    speakers_path = sidecar_path(path, "speakers")
    for lineno, row in iter_jsonl(speakers_path):
        try:
            v, group_id = row["variant"], row["group_id"]
            speakers.setdefault(v, {})[group_id] = float(row["pseudo_mos"])
            if row.get("seen", True):
                seen.setdefault(v, []).append(group_id)
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad speaker row: {e}", path=speakers_path, line=lineno) from e

    return QualityTable(
        variants=tuple(variant_registry.sort(order)),
        scores=scores,
        speaker_scores=speakers,
        seen_speakers={v: tuple(sorted(g)) for v, g in seen.items()}
    )


# Selections


def write_selection(selection: CorpusSelection, path: Path) -> None:
    """Write a header line followed by entries sorted by utterance_id."""
    header = {
        "method": selection.method.value,
        "n": selection.n,
        "provenance": selection.provenance,
    }
    entries = sorted(selection.entries, key=lambda e: e.utterance_id)
    rows: List[Dict[str, Any]] = [{"selection": header}]
    rows.extend({"utterance_id": e.utterance_id, "variant": e.variant} for e in entries)
    write_jsonl(path, rows)


def read_selection(path: Path) -> CorpusSelection:
    """Read a selection written by :func:`write_selection`.

    Raises:
        ManifestError: Missing or malformed header, or a malformed entry line
    """
    path = Path(path)
    header = None
    header_line = None
    entries = []
    for lineno, row in iter_jsonl(path):
        if "selection" in row:
            header, header_line = row["selection"], lineno
            continue
        try:
            entries.append(SelectionEntry(utterance_id=row["utterance_id"], variant=row["variant"]))
        except KeyError as e:
            raise ManifestError(f"bad selection row: missing {e}", path=path, line=lineno) from e
        except ValidationError as e:
            raise ManifestError(
                f"bad selection row: {_first_error(e)}", path=path, line=lineno
            ) from e
    if header is None:
        raise ManifestError("selection header missing", path=path)
    try:
        return CorpusSelection(
            entries=tuple(entries),
            method=SelectionMethod(header["method"]),
            n=int(header["n"]),
            provenance=dict(header.get("provenance", {}))
        )
    except KeyError as e:
        raise ManifestError(
            f"bad selection header: missing {e}", path=path, line=header_line
        ) from e
    except ValidationError as e:
        raise ManifestError(
            f"bad selection header: {_first_error(e)}", path=path, line=header_line
        ) from e
    except (AttributeError, TypeError, ValueError) as e:
        raise ManifestError(
            f"bad selection header: {e}", path=path, line=header_line
        ) from e


def _first_error(e: ValidationError) -> str:
    first = e.errors()[0]
    where = ".".join(str(p) for p in first.get("loc", ()))
    return f"{where}: {first.get('msg')}" if where else str(first.get("msg"))


# Speaker scores


def write_speaker_scores(scores: Sequence[SpeakerScore], path: Path) -> None:
    rows = [s.model_dump() for s in sorted(scores, key=lambda s: s.group_id)]
    write_jsonl(path, rows)


def read_speaker_scores(path: Path) -> List[SpeakerScore]:
    """Read ``{"group_id", "pseudo_mos", "seen"?}`` lines."""
    scores = []
    for lineno, row in iter_jsonl(path):
        try:
            scores.append(SpeakerScore(
                group_id=row["group_id"],
                pseudo_mos=float(row["pseudo_mos"]),
                seen=bool(row.get("seen", True))
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"bad speaker score: {e}", path=Path(path), line=lineno) from e
    if not scores:
        raise ManifestError("no speaker scores", path=Path(path))
    return scores


# Reports


def write_report(report: Report, path: Path) -> None:
    write_json(path, report.model_dump(mode="json"))


def read_report(path: Path) -> Report:
    return Report.model_validate(read_json(path))
