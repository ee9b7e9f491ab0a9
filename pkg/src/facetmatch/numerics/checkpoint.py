"""Named-array checkpoints: JSON manifest + flat little-endian float64 payload."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

PAYLOAD_SUFFIX = ".bin"


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``<path>`` (manifest) and ``<path>.bin`` (payload).

    Entries are written in sorted name order so the bytes depend only on
    the contents.
    """
    path = Path(path)
    entries = []
    offset = 0
    chunks = []
    for name in sorted(arrays):
        a = np.array(arrays[name], dtype="<f8", order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.size
    manifest = {"format": "f64le-v1", "count": offset, "entries": entries, "meta": meta or {}}
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    Path(str(path) + PAYLOAD_SUFFIX).write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    flat = np.frombuffer(Path(str(path) + PAYLOAD_SUFFIX).read_bytes(), dtype="<f8")
    if flat.size != manifest["count"]:
        raise ValueError(f"payload holds {flat.size} values, manifest expects {manifest['count']}")
    arrays = {}
    for e in manifest["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arrays[e["name"]] = flat[e["offset"] : e["offset"] + n].reshape(tuple(e["shape"])).astype(np.float64)
    return arrays, manifest["meta"]
