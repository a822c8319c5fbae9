"""Checkpoint container: a zip archive of named numpy arrays plus a JSON
metadata record.

Layout of a ``.mamc`` file:

    meta.json            — {"format": "mamc-container", "version": 1,
                            "metadata": {...}, "arrays": {name: sha256}}
    arrays/<name>.npy    — one standard .npy per named array

The per-array sha256 digests in meta.json let loads detect truncation or
corruption without trusting zip CRCs alone.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT_NAME = "mamc-container"
FORMAT_VERSION = 1


class IntegrityError(Exception):
    """Raised when a container fails structural or checksum validation."""


def _array_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_container(path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    """Write arrays + metadata to ``path`` atomically (tmp file + rename)."""
    path = Path(path)
    encoded = {name: _array_bytes(np.ascontiguousarray(arr)) for name, arr in arrays.items()}
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "metadata": metadata,
        "arrays": {name: _digest(data) for name, data in encoded.items()},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
        for name, data in encoded.items():
            zf.writestr(f"arrays/{name}.npy", data)
    tmp.replace(path)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    """Load a container, verifying per-array checksums.

    Returns (arrays, metadata). Raises IntegrityError naming the offending
    field on any corruption, truncation, or format mismatch.
    """
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"container not found: {path}")
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise IntegrityError(f"unreadable container {path}: {exc}") from exc
    with zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError as exc:
            raise IntegrityError(f"{path}: missing meta.json") from exc
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"{path}: corrupt meta.json") from exc
        if meta.get("format") != FORMAT_NAME:
            raise IntegrityError(f"{path}: unknown format field {meta.get('format')!r}")
        if meta.get("version") != FORMAT_VERSION:
            raise IntegrityError(f"{path}: unsupported version {meta.get('version')!r}")
        arrays: dict[str, np.ndarray] = {}
        for name, expected in meta.get("arrays", {}).items():
            try:
                data = zf.read(f"arrays/{name}.npy")
            except (KeyError, zipfile.BadZipFile) as exc:
                raise IntegrityError(f"{path}: missing or truncated array {name!r}") from exc
            if _digest(data) != expected:
                raise IntegrityError(f"{path}: checksum mismatch for array {name!r}")
            arrays[name] = np.load(io.BytesIO(data), allow_pickle=False)
    return arrays, meta["metadata"]


def weights_hash(arrays: dict[str, np.ndarray]) -> str:
    """Order-independent sha256 fingerprint of a named array set."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()
