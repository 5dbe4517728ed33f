"""Single-file container for named arrays plus a JSON metadata block.

Thin wrapper over NPZ (a zip of little-endian .npy members) used for both
dataset splits and training checkpoints, so every artifact the tool writes
has one portable format.  Load errors always name the offending field.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np

_META_KEY = "__meta_json__"

_ALLOWED_KINDS = ("f", "c", "i", "u", "b")


class ArchiveError(IOError):
    """Raised when an archive is missing, truncated, or malformed."""


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays and a JSON metadata block to ``path``."""
    out = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind not in _ALLOWED_KINDS:
            raise ArchiveError(f"field '{name}' has unsupported dtype {arr.dtype}")
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        out[name] = arr
    out[_META_KEY] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **out)


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back ``(arrays, meta)``; raises :class:`ArchiveError` on damage."""
    path = Path(path)
    if not path.exists():
        raise ArchiveError(f"archive not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            names = list(data.files)
            if _META_KEY not in names:
                raise ArchiveError(f"archive {path} is missing field '{_META_KEY}'")
            arrays = {}
            for name in names:
                if name == _META_KEY:
                    continue
                try:
                    arrays[name] = data[name]
                except Exception as exc:
                    raise ArchiveError(f"failed to read field '{name}' from {path}: {exc}") from exc
            try:
                meta = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
            except Exception as exc:
                raise ArchiveError(f"failed to decode field '{_META_KEY}' in {path}: {exc}") from exc
    except (zipfile.BadZipFile, ValueError, EOFError, OSError) as exc:
        if isinstance(exc, ArchiveError):
            raise
        raise ArchiveError(f"archive {path} is truncated or corrupt: {exc}") from exc
    return arrays, meta


def require(arrays: dict[str, np.ndarray], name: str, path="archive") -> np.ndarray:
    if name not in arrays:
        raise ArchiveError(f"{path} is missing field '{name}'")
    return arrays[name]
