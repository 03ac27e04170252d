"""On-disk embedding sets.

Binary layout (little-endian)::

    magic   4 bytes  b"OTEM"
    version u16      1
    n       u32
    d       u32
    payload n * d float32, row-major
    flag    u8       1 if a label block follows, else 0 (may be absent on read)
    labels  n * u32  only when flag == 1

A ``.csv`` path selects the text fallback: a ``dim=<d>`` header (``dim=<d>,labels`` when
the last column carries labels) followed by one comma-separated row per embedding.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
import struct

import numpy as np

from otward.errors import BadMagic
from otward.errors import InconsistentHeader
from otward.errors import TruncatedPayload
from otward.metrics import as_embedding_set
from otward.metrics import EmbeddingLike
from otward.metrics import EmbeddingSet


logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"OTEM"
EMBEDDING_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def encode_embeddings(e: EmbeddingLike) -> bytes:
    es = as_embedding_set(e)
    header = _HEADER.pack(EMBEDDING_MAGIC, EMBEDDING_FORMAT_VERSION, es.n, es.d)
    payload = np.ascontiguousarray(es.points, dtype="<f4").tobytes()
    if es.labels is None:
        return header + payload + b"\x00"
    if np.any(es.labels < 0) or np.any(es.labels > np.iinfo(np.uint32).max):
        raise ValueError("labels must fit in an unsigned 32-bit integer")
    return header + payload + b"\x01" + np.asarray(es.labels, dtype="<u4").tobytes()


def decode_embeddings(raw: bytes, source_id: str | None = None) -> EmbeddingSet:
    if raw[: len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise BadMagic("not an embedding file (expected magic 'OTEM')")
    if len(raw) < _HEADER.size:
        raise TruncatedPayload("embedding header is truncated")
    _, version, n, d = _HEADER.unpack_from(raw)
    if version != EMBEDDING_FORMAT_VERSION:
        raise InconsistentHeader(f"unsupported embedding format version {version}")
    if n < 1 or d < 1:
        raise InconsistentHeader(f"header declares an empty set (n={n}, d={d})")
    end = _HEADER.size + 4 * n * d
    if len(raw) < end:
        got = len(raw) - _HEADER.size
        raise TruncatedPayload(f"payload has {got} bytes, expected {4 * n * d}")
    points = np.frombuffer(raw, dtype="<f4", count=n * d, offset=_HEADER.size)
    points = points.astype(np.float64).reshape(n, d)

    labels = None
    tail = raw[end:]
    if tail:
        flag, rest = tail[0], tail[1:]
        if flag == 0:
            if rest:
                raise InconsistentHeader(f"{len(rest)} unexpected bytes after the payload")
        elif flag == 1:
            if len(rest) < 4 * n:
                raise TruncatedPayload(f"label block has {len(rest)} bytes, expected {4 * n}")
            if len(rest) > 4 * n:
                raise InconsistentHeader(f"{len(rest) - 4 * n} unexpected bytes after labels")
            labels = np.frombuffer(rest, dtype="<u4").astype(np.int64)
        else:
            raise InconsistentHeader(f"invalid label flag {flag}")
    return EmbeddingSet(points=points, labels=labels, source_id=source_id)


def _is_csv(path: Path) -> bool:
    return path.suffix.lower() == ".csv"


def _write_csv(es: EmbeddingSet, path: Path) -> None:
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"dim={es.d}"] + (["labels"] if es.labels is not None else []))
        for i, row in enumerate(es.points):
            values = [repr(float(v)) for v in row]
            if es.labels is not None:
                values.append(str(int(es.labels[i])))
            writer.writerow(values)


def _read_csv(path: Path) -> EmbeddingSet:
    with path.open(newline="") as f:
        rows = [row for row in csv.reader(f) if row]
    if not rows or not rows[0][0].startswith("dim="):
        raise BadMagic(f"{path} has no 'dim=<d>' header")
    try:
        d = int(rows[0][0][len("dim=") :])
    except ValueError as err:
        raise InconsistentHeader(f"bad dimension header {rows[0][0]!r}") from err
    has_labels = len(rows[0]) > 1 and rows[0][1].strip() == "labels"
    width = d + 1 if has_labels else d
    body = rows[1:]
    if not body:
        raise TruncatedPayload(f"{path} has a header but no rows")
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise InconsistentHeader(f"{path}:{lineno}: {len(row)} fields, expected {width}")
    points = np.array([[float(v) for v in row[:d]] for row in body], dtype=np.float64)
    labels = np.array([int(row[d]) for row in body], dtype=np.int64) if has_labels else None
    return EmbeddingSet(points=points, labels=labels, source_id=str(path))


def write_embeddings(e: EmbeddingLike, path: Path | str) -> Path:
    target = Path(path)
    es = as_embedding_set(e)
    if _is_csv(target):
        _write_csv(es, target)
    else:
        target.write_bytes(encode_embeddings(es))
    logger.debug("wrote %d x %d embeddings to %s", es.n, es.d, target)
    return target


def read_embeddings(path: Path | str) -> EmbeddingSet:
    source = Path(path)
    if _is_csv(source):
        return _read_csv(source)
    return decode_embeddings(source.read_bytes(), source_id=str(source))
