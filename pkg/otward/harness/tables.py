from __future__ import annotations

from collections.abc import Mapping
from collections.abc import Sequence
import csv
import datetime
from enum import Enum
import json
import logging
from pathlib import Path
from typing import Any

from otward.utils import format_value
from otward.version import __version__


logger = logging.getLogger(__name__)


def write_table(rows: Sequence[Mapping[str, Any]], path: Path | str) -> Path:
    """One CSV row per grid cell; columns follow the first row's key order."""
    target = Path(path)
    fieldnames = list(rows[0].keys()) if rows else []
    with target.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_value(value) for key, value in row.items()})
    logger.info("wrote %d rows to %s", len(rows), target)
    return target


def read_table(path: Path | str) -> list[dict[str, str]]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    return value


def build_manifest(
    command: str,
    run_config: Mapping[str, Any],
    seeds: Sequence[int] | None = None,
    created: str | None = None,
) -> dict[str, Any]:
    if created is None:
        created = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return {
        "command": command,
        "config": _jsonable(run_config),
        "seeds": [int(s) for s in seeds] if seeds is not None else [],
        "version": __version__,
        "created": created,
    }


def write_manifest(
    path: Path | str,
    command: str,
    run_config: Mapping[str, Any],
    seeds: Sequence[int] | None = None,
) -> Path:
    target = Path(path)
    manifest = build_manifest(command, run_config, seeds)
    target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return target
