"""Single-file container: JSON manifest followed by a float32 tensor blob.

Layout: ``b"HWCL"``, manifest length (uint32 LE), UTF-8 JSON manifest with
sorted keys, then the tensors as flat little-endian float32 in manifest
order. Every manifest tensor entry is ``{"name", "shape", "offset"}`` with
the offset counted in float32 elements.
"""
import json
import struct

import numpy as np

from .errors import ManifestMismatch, TruncatedBlob

MAGIC = b"HWCL"


def pack(manifest, tensors):
    """``tensors`` is an ordered mapping name -> array."""
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.reshape(-1))
        offset += a.size
    doc = dict(manifest, tensors=entries, count=offset)
    head = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = np.concatenate(chunks).astype("<f4").tobytes() if chunks else b""
    return MAGIC + struct.pack("<I", len(head)) + head + blob


def unpack(data):
    """Return ``(manifest, {name: float32 array})``."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise ManifestMismatch("not a manifest+blob container")
    (n,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + n:
        raise TruncatedBlob("manifest cut short")
    try:
        doc = json.loads(data[8 : 8 + n].decode("utf-8"))
    except ValueError as exc:
        raise ManifestMismatch(f"unreadable manifest: {exc}") from None
    blob = data[8 + n :]
    count = int(doc.get("count", -1))
    if len(blob) < 4 * count:
        raise TruncatedBlob(f"blob holds {len(blob)} bytes, manifest needs {4 * count}")
    if len(blob) != 4 * count:
        raise ManifestMismatch(f"blob holds {len(blob)} bytes, manifest needs {4 * count}")
    flat = np.frombuffer(blob, dtype="<f4")
    tensors = {}
    end = 0
    for e in doc["tensors"]:
        size = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] != end or e["offset"] + size > count:
            raise ManifestMismatch(f"tensor {e['name']!r} does not fit the blob layout")
        tensors[e["name"]] = flat[e["offset"] : e["offset"] + size].reshape(e["shape"])
        end = e["offset"] + size
    if end != count:
        raise ManifestMismatch("manifest tensors do not cover the blob")
    return doc, tensors
