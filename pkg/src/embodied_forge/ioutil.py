"""Small file-writing helpers shared by the dataset writers and the CLI."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from .errors import InputError


def atomic_write_text(path, text: str) -> None:
    """Write a file via temp-file-then-rename so readers never see partials."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def write_jsonl(path, records: list) -> None:
    atomic_write_text(path, "".join(
        json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records))


def read_jsonl(path) -> list:
    path = Path(path)
    try:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
