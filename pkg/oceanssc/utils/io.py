"""
Binary and text artifacts written by the harness.

Formats (byte layouts in ``docs/technical/file-formats.md``):

- ``OCNV``: dense volume, 32-byte header then little-endian payload.
- ``OCNP``: named tensor container with a JSON manifest and md5 checksum.
- ``P5`` PGM: instance masks and BEV debug slices.
- JSON reports (insertion key order) and CSV trajectories.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from collections import OrderedDict
from logging import getLogger
from pathlib import Path
from typing import Dict, Iterable, Mapping, Sequence, Union

import numpy as np

from ..errors import FormatError, ShapeError

log = getLogger(__name__)

PathLike = Union[str, Path]

VOLUME_MAGIC = b"OCNV"
PARAMS_MAGIC = b"OCNP"
FORMAT_VERSION = 1

# magic, version, x, y, z, channels, dtype code, reserved
_VOLUME_HEADER = struct.Struct("<4s7I")
# magic, version, manifest length, reserved
_PARAMS_HEADER = struct.Struct("<4s3I")

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


# ---------------------------------------------------------------------------
# OCNV volumes
# ---------------------------------------------------------------------------

def _as_4d(array: np.ndarray) -> np.ndarray:
    if array.ndim == 4:
        return array
    if array.ndim == 3:
        # (H, W, C) map
        return array[:, :, None, :]
    if array.ndim == 2:
        return array[:, :, None, None]
    raise ShapeError(f"cannot store array of rank {array.ndim} as a volume")


def write_volume(path: PathLike, array: np.ndarray, integer: bool = False) -> Path:
    """
    Write ``array`` as OCNV. Rank 4 is ``(x, y, z, C)``; rank 3 maps are stored
    as ``(H, W, 1, C)`` and rank 2 as ``(H, W, 1, 1)``.
    """
    path = Path(path)
    data = _as_4d(np.asarray(array))
    code = 1 if integer else 0
    x, y, z, c = data.shape
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, FORMAT_VERSION, x, y, z, c, code, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes())
    log.debug(f"wrote volume {path} shape={data.shape}")
    return path


def read_volume(path: PathLike) -> np.ndarray:
    """Read an OCNV file back as a rank-4 array (float64 or int64)."""
    raw = Path(path).read_bytes()
    if len(raw) < _VOLUME_HEADER.size:
        raise FormatError(f"{path}: truncated OCNV header")
    magic, version, x, y, z, c, code, _ = _VOLUME_HEADER.unpack_from(raw)
    if magic != VOLUME_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported OCNV version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = x * y * z * c * dtype.itemsize
    payload = raw[_VOLUME_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    data = np.frombuffer(payload, dtype=dtype).reshape(x, y, z, c)
    return data.astype(np.int64 if code == 1 else np.float64)


# ---------------------------------------------------------------------------
# OCNP tensor container
# ---------------------------------------------------------------------------

def _checksum(entries, payload: bytes) -> str:
    digest = hashlib.md5(json.dumps(entries, sort_keys=True).encode("utf8"))
    digest.update(payload)
    return "md5: {}".format(digest.hexdigest())


def save_tensors(path: PathLike, tensors: Mapping[str, np.ndarray]) -> Path:
    """Write named float64 tensors, in mapping order, to an OCNP container."""
    path = Path(path)
    entries = []
    chunks = []
    offset = 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    payload = b"".join(chunks)
    manifest = {"version": FORMAT_VERSION, "entries": entries,
                "checksum": _checksum(entries, payload)}
    blob = json.dumps(manifest).encode("utf8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PARAMS_HEADER.pack(PARAMS_MAGIC, FORMAT_VERSION, len(blob), 0))
        f.write(blob)
        f.write(payload)
    log.debug(f"wrote {len(entries)} tensors to {path}")
    return path


def load_tensors(path: PathLike) -> "OrderedDict[str, np.ndarray]":
    raw = Path(path).read_bytes()
    if len(raw) < _PARAMS_HEADER.size:
        raise FormatError(f"{path}: truncated OCNP header")
    magic, version, length, _ = _PARAMS_HEADER.unpack_from(raw)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported OCNP version {version}")
    start = _PARAMS_HEADER.size
    try:
        manifest = json.loads(raw[start:start + length].decode("utf8"))
    except ValueError as e:
        raise FormatError(f"{path}: unreadable manifest ({e})") from e
    payload = raw[start + length:]
    entries = manifest.get("entries", [])
    if manifest.get("checksum") != _checksum(entries, payload):
        raise FormatError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8")
    out = OrderedDict()
    for entry in entries:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        lo = entry["offset"]
        if lo + size > flat.size:
            raise FormatError(f"{path}: entry {entry['name']!r} runs past the payload")
        out[entry["name"]] = flat[lo:lo + size].reshape(entry["shape"]).copy()
    return out


# ---------------------------------------------------------------------------
# PGM (P5)
# ---------------------------------------------------------------------------

def write_pgm(path: PathLike, image: np.ndarray, maxval: int = None) -> Path:
    """Write a nonnegative integer image; ``maxval`` defaults to ``max(image.max(), 1)``."""
    path = Path(path)
    img = np.asarray(image)
    if img.ndim != 2:
        raise ShapeError(f"PGM images are 2D, got shape {img.shape}")
    if img.size and (img.min() < 0):
        raise ValueError("PGM pixel values must be nonnegative")
    top = int(img.max()) if img.size else 0
    maxval = max(top, 1) if maxval is None else int(maxval)
    if not 1 <= maxval <= 65535 or top > maxval:
        raise ValueError(f"invalid maxval {maxval} for image maximum {top}")
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = img.shape
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(np.ascontiguousarray(img, dtype=dtype).tobytes())
    return path


def read_pgm(path: PathLike):
    """Return ``(image, maxval)``."""
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    body = raw[pos:pos + w * h * np.dtype(dtype).itemsize]
    if len(body) != w * h * np.dtype(dtype).itemsize:
        raise FormatError(f"{path}: truncated PGM body")
    return np.frombuffer(body, dtype=dtype).reshape(h, w).astype(np.int64), maxval


def to_gray(image: np.ndarray) -> np.ndarray:
    """Min-max scale a real 2D map to 0..255 (constant maps become 0)."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        return np.zeros(img.shape, dtype=np.int64)
    return np.round((img - lo) / (hi - lo) * 255.0).astype(np.int64)


# ---------------------------------------------------------------------------
# JSON and CSV
# ---------------------------------------------------------------------------

def write_json(path: PathLike, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")
    return path


def read_json(path: PathLike):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return path


def read_csv(path: PathLike) -> Dict[str, list]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        columns: Dict[str, list] = {name: [] for name in reader.fieldnames or []}
        for row in reader:
            for key, value in row.items():
                columns[key].append(value)
    return columns
