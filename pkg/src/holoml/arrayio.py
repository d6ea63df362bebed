"""Binary array files (``HOLOARR1``) and ground-truth CSV files.

Layout, all little-endian::

    b"HOLOARR1" | u32 dtype code | u32 ndim | u32 dims[ndim] | [f32 scale] | data

dtype codes: 0 = float32, 1 = uint16 (followed by a float32 scale, value =
raw / 65535 * scale), 2 = complex64 stored as interleaved float32 pairs.
Data is row-major.
"""

from __future__ import annotations

import csv
import os
import struct
from pathlib import Path

import numpy as np

from .optics import Particle

MAGIC = b"HOLOARR1"
F32, U16, C64 = 0, 1, 2
GT_HEADER = ["x_px", "y_px", "z_index", "diameter_px"]


class FormatError(ValueError):
    pass


def encode_array(array: np.ndarray, dtype_code: int | None = None, scale: float = 1.0) -> bytes:
    array = np.asarray(array)
    if dtype_code is None:
        dtype_code = C64 if np.iscomplexobj(array) else F32
    head = MAGIC + struct.pack("<II", dtype_code, array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    if dtype_code == F32:
        body = np.ascontiguousarray(array, dtype="<f4").tobytes()
    elif dtype_code == U16:
        if scale <= 0:
            raise FormatError("u16 scale must be positive")
        raw = np.rint(np.clip(array / scale, 0.0, 1.0) * 65535).astype("<u2")
        head += struct.pack("<f", scale)
        body = raw.tobytes()
    elif dtype_code == C64:
        body = np.ascontiguousarray(array, dtype="<c8").tobytes()
    else:
        raise FormatError(f"unknown dtype code {dtype_code}")
    return head + body


def decode_array(blob: bytes) -> np.ndarray:
    if blob[:8] != MAGIC:
        raise FormatError("bad magic; not a HOLOARR1 file")
    code, ndim = struct.unpack_from("<II", blob, 8)
    offset = 16
    shape = struct.unpack_from(f"<{ndim}I", blob, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if code == F32:
        data = np.frombuffer(blob, "<f4", count, offset).astype(np.float32)
    elif code == U16:
        (scale,) = struct.unpack_from("<f", blob, offset)
        offset += 4
        raw = np.frombuffer(blob, "<u2", count, offset)
        data = (raw / 65535.0 * scale).astype(np.float32)
    elif code == C64:
        data = np.frombuffer(blob, "<c8", count, offset).astype(np.complex64)
    else:
        raise FormatError(f"unknown dtype code {code}")
    return data.reshape(shape)


def _atomic_write(path: Path, payload: bytes | str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(payload, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_array(path, array: np.ndarray, dtype_code: int | None = None, scale: float = 1.0) -> None:
    _atomic_write(Path(path), encode_array(array, dtype_code, scale))


def load_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def save_particles(path, particles) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GT_HEADER)
        for p in particles:
            writer.writerow([repr(float(p.x)), repr(float(p.y)), int(p.z_index), repr(float(p.diameter))])


def load_particles(path) -> list[Particle]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GT_HEADER:
            raise FormatError(f"{path}: line 1: expected header {','.join(GT_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                x, y, z, d = row
                out.append(Particle(float(x), float(y), int(z), float(d)))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
    return out
