"""Line-oriented artifact files: a schema-version header line, then one JSON
record per line. Every pipeline stage reads and writes this shape.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Iterator

from .errors import CorruptFile, MissingInput

SCHEMA_PREFIX = "chemhop"
SCHEMA_VERSION = 1


def schema_name(kind: str) -> str:
    return f"{SCHEMA_PREFIX}/{kind}"


def write_records(path: str | Path, kind: str, records: Iterable[dict]) -> int:
    """Write header + records atomically; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [json.dumps(rec, ensure_ascii=False, sort_keys=True) for rec in records]
    header = json.dumps(
        {"schema": schema_name(kind), "version": SCHEMA_VERSION, "count": len(rows)},
        sort_keys=True,
    )
    tmp = path.with_suffix(path.suffix + f".tmp.{os.getpid()}")
    tmp.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    os.replace(tmp, path)
    return len(rows)


def read_records(path: str | Path, kind: str) -> Iterator[dict]:
    """Yield records, validating the header. MissingInput if absent."""
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"expected artifact {path} does not exist")
    with path.open(encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except ValueError as exc:
            raise CorruptFile(f"{path}: bad header: {exc}") from exc
        if header.get("schema") != schema_name(kind):
            raise CorruptFile(f"{path}: schema {header.get('schema')!r}, expected {schema_name(kind)!r}")
        if header.get("version") != SCHEMA_VERSION:
            raise CorruptFile(f"{path}: unsupported version {header.get('version')!r}")
        count = 0
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except ValueError as exc:
                raise CorruptFile(f"{path}: bad record: {exc}") from exc
            count += 1
        if header.get("count") is not None and count != header["count"]:
            raise CorruptFile(f"{path}: header count {header['count']} != {count} records")


def load_records(path: str | Path, kind: str) -> list[dict]:
    return list(read_records(path, kind))
