"""Self-describing binary container for checkpoints and cached datasets.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header
(sorted keys), then the raw C-order array payloads back to back in the
order the header lists them.  Every byte is deterministic for identical
contents, so fixed-seed runs produce bit-identical files.  Writes are
atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import BadMagic, InvalidConfig, TruncatedFile

MAGIC = b"SPKC0001"
_ALLOWED_DTYPES = {"<f8", "<i8", "|u1"}


def save_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write meta (JSON-able) plus named arrays; atomic and deterministic."""
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.str not in _ALLOWED_DTYPES:
            raise InvalidConfig(
                f"array {name!r} has unsupported dtype {arr.dtype.str}")
        entries.append({"name": name, "dtype": arr.dtype.str,
                        "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_container(path):
    """Read a container back as (meta, {name: array})."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if len(magic) < len(MAGIC):
            raise TruncatedFile(f"{path}: shorter than the magic number")
        if magic != MAGIC:
            raise BadMagic(f"{path}: bad magic {magic!r}")
        raw_len = fh.read(8)
        if len(raw_len) < 8:
            raise TruncatedFile(f"{path}: missing header length")
        (header_len,) = struct.unpack("<Q", raw_len)
        header = fh.read(header_len)
        if len(header) < header_len:
            raise TruncatedFile(f"{path}: truncated header")
        doc = json.loads(header.decode("utf-8"))
        arrays = {}
        for entry in doc["arrays"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64)) \
                if entry["shape"] else 1
            nbytes = dtype.itemsize * count
            blob = fh.read(nbytes)
            if len(blob) < nbytes:
                raise TruncatedFile(
                    f"{path}: array {entry['name']!r} payload truncated")
            arrays[entry["name"]] = np.frombuffer(
                blob, dtype=dtype).reshape(entry["shape"]).copy()
        return doc["meta"], arrays
