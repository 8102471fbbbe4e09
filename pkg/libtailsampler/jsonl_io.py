#!/usr/bin/env python3
"""
JSONL file helpers

Records are written compactly with a fixed key order so repeated runs
produce byte-identical files.
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Mapping, Optional, Union

from .errors import MalformedRecord, SinkWriteError

PathLike = Union[str, Path]


def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def iter_lines(path: PathLike) -> Iterator[bytes]:
    """Raw byte lines, decoded one at a time by decode_line"""
    with Path(path).open("rb") as fh:
        for line in fh:
            yield line


def decode_line(line: Union[str, bytes], line_no: int, source: Optional[str] = None) -> str:
    if isinstance(line, str):
        return line
    try:
        return line.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedRecord(line_no, f"invalid UTF-8 at byte {e.start}", source)


def read_records(path: PathLike) -> List[Any]:
    """
    Whole-file JSONL read for small inputs (samples, ground truth)

    Raises:
        MalformedRecord: first line that is not UTF-8 JSON
    """
    records = []
    for line_no, raw in enumerate(iter_lines(path), start=1):
        text = decode_line(raw, line_no, str(path)).strip()
        if not text:
            continue
        try:
            records.append(json.loads(text))
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"invalid JSON ({e.msg})", str(path))
    return records


def write_records(path: PathLike, records: Iterable[Mapping[str, Any]]) -> int:
    with JsonlWriter(path) as writer:
        for record in records:
            writer.write(record)
        return writer.count


def write_json(path: PathLike, payload: Any) -> None:
    try:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise SinkWriteError(f"Cannot write {path}: {e}")


def file_digest(path: PathLike) -> str:
    sha = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


class JsonlWriter:
    """Line-oriented JSONL sink; OS errors surface as SinkWriteError"""

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.count = 0
        self._fh = None

    def open(self) -> "JsonlWriter":
        if self._fh is None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = self.path.open("w", encoding="utf-8")
            except OSError as e:
                raise SinkWriteError(f"Cannot open {self.path}: {e}")
        return self

    def write(self, record: Mapping[str, Any]) -> None:
        self.open()
        try:
            self._fh.write(dumps(record) + "\n")
        except OSError as e:
            raise SinkWriteError(f"Cannot write {self.path}: {e}")
        self.count += 1

    def close(self) -> None:
        if self._fh is not None:
            try:
                self._fh.close()
            finally:
                self._fh = None

    def __enter__(self) -> "JsonlWriter":
        return self.open()

    def __exit__(self, *exc) -> None:
        self.close()


def optional_writer(path: Optional[PathLike]) -> Optional[JsonlWriter]:
    return JsonlWriter(path) if path is not None else None
