"""CT3 tensor files, sidecar metadata and grayscale slice export.

CT3 layout (little-endian): magic ``b"CT3\\0"``, ``uint32`` version 1, three
``uint64`` dims (N, E, T), then N·E·T entries in storage order (space fastest,
then echo, then motion), each a ``float32`` real part followed by a ``float32``
imaginary part.
"""

from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .exceptions import Ct3FormatError
from .tensor import ComplexTensor3, as_tensor3


logger = logging.getLogger(__name__)

CT3_MAGIC = b"CT3\x00"
CT3_VERSION = 1
_HEADER = struct.Struct("<4sI3Q")
HEADER_SIZE = _HEADER.size
_PAYLOAD_DTYPE = np.dtype("<c8")
_F32_MAX = float(np.finfo(np.float32).max)

METADATA_KEYS = ("nx", "ny", "nz", "te_first", "delta_te", "acceleration", "seed")


def ct3_bytes(X: ComplexTensor3) -> bytes:
    if X.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("tensor contains non-finite entries")
    if np.max(np.abs(X.real), initial=0.0) > _F32_MAX or np.max(
        np.abs(X.imag), initial=0.0
    ) > _F32_MAX:
        raise ValueError("tensor entries overflow single precision")
    header = _HEADER.pack(CT3_MAGIC, CT3_VERSION, *X.shape)
    payload = np.ravel(X, order="F").astype(_PAYLOAD_DTYPE).tobytes()
    return header + payload


def write_ct3(X: ComplexTensor3, path: str | Path) -> None:
    Path(path).write_bytes(ct3_bytes(X))
    logger.debug("wrote %s with dims %s", path, X.shape)


def parse_ct3(data: bytes, *, source: str = "<bytes>") -> ComplexTensor3:
    if len(data) < HEADER_SIZE:
        raise Ct3FormatError(
            f"{source}: expected at least {HEADER_SIZE} header bytes, found {len(data)}"
        )
    magic, version, n, e, t = _HEADER.unpack_from(data)
    if magic != CT3_MAGIC:
        raise Ct3FormatError(f"{source}: bad magic {magic!r}")
    if version != CT3_VERSION:
        raise Ct3FormatError(f"{source}: unsupported version {version}")
    if min(n, e, t) < 1:
        raise Ct3FormatError(f"{source}: dims must be positive, got {(n, e, t)}")
    expected = n * e * t * _PAYLOAD_DTYPE.itemsize
    actual = len(data) - HEADER_SIZE
    if actual != expected:
        raise Ct3FormatError(
            f"{source}: payload for dims {(n, e, t)} needs {expected} bytes, found {actual}"
        )
    values = np.frombuffer(data, dtype=_PAYLOAD_DTYPE, offset=HEADER_SIZE)
    if not np.all(np.isfinite(values)):
        raise Ct3FormatError(f"{source}: payload contains non-finite values")
    return as_tensor3(values.astype(np.complex128), dims=(n, e, t))


def read_ct3(path: str | Path) -> ComplexTensor3:
    path = Path(path)
    return parse_ct3(path.read_bytes(), source=str(path))


def write_trace(objective_trace: Sequence[float], path: str | Path) -> None:
    """Write an objective trace as `iteration,objective` rows (iterations from 1)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(("iteration", "objective"))
        for iteration, value in enumerate(objective_trace, start=1):
            writer.writerow((iteration, repr(float(value))))


def metadata_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_metadata(path: str | Path, values: Mapping[str, object]) -> Path:
    """Write the ``key=value`` sidecar next to ``path``; returns the sidecar path."""
    target = metadata_path(path)
    lines = [f"{key}={values[key]}" for key in METADATA_KEYS if key in values]
    target.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return target


def read_metadata(path: str | Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line in metadata_path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"malformed metadata line: {line!r}")
        values[key.strip()] = value.strip()
    return values


def grid_from_metadata(values: Mapping[str, str]) -> tuple[int, int, int]:
    try:
        return int(values["nx"]), int(values["ny"]), int(values["nz"])
    except KeyError as exc:
        raise ValueError(f"metadata lacks grid entry {exc.args[0]}") from None


def central_slice(
    X: ComplexTensor3, echo: int, motion: int, grid: tuple[int, int, int]
) -> np.ndarray:
    """Magnitude of the central axial slice, indexed ``[y, x]``."""
    N, E, T = X.shape
    if not 0 <= echo < E:
        raise ValueError(f"echo index {echo} outside 0..{E - 1}")
    if not 0 <= motion < T:
        raise ValueError(f"motion index {motion} outside 0..{T - 1}")
    nx, ny, nz = grid
    if nx * ny * nz != N:
        raise ValueError(f"grid {grid} does not factor {N} voxels")
    volume = np.reshape(X[:, echo, motion], (nx, ny, nz), order="F")
    return np.abs(volume[:, :, nz // 2]).T


def export_slice(
    X: ComplexTensor3,
    echo: int,
    motion: int,
    path: str | Path,
    grid: tuple[int, int, int],
    window: tuple[float, float] | None = None,
) -> None:
    """Write the central axial magnitude slice as a 16-bit binary graymap (P5).

    ``window=None`` maps ``[0, 99.5th percentile]`` linearly onto ``[0, 65535]``.
    """
    image = central_slice(X, echo, motion, grid)
    if window is None:
        lo, hi = 0.0, float(np.percentile(image, 99.5))
    else:
        lo, hi = (float(v) for v in window)
    if hi > lo:
        scaled = np.clip((image - lo) / (hi - lo), 0.0, 1.0)
        pixels = np.rint(scaled * 65535.0).astype(">u2")
    else:
        pixels = np.zeros(image.shape, dtype=">u2")
    height, width = pixels.shape
    header = f"P5\n{width} {height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())
    logger.debug("exported echo %s state %s to %s (window %s..%s)", echo, motion, path, lo, hi)


def read_graymap(path: str | Path) -> np.ndarray:
    """Read back a graymap written by :func:`export_slice`."""
    data = Path(path).read_bytes()
    fields = data.split(maxsplit=4)
    if len(fields) < 4 or fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary graymap")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise ValueError(f"{path}: expected maxval 65535, got {maxval}")
    body = data[len(data) - width * height * 2 :]
    return np.frombuffer(body, dtype=">u2").reshape(height, width)


__all__ = [
    "CT3_MAGIC",
    "CT3_VERSION",
    "HEADER_SIZE",
    "METADATA_KEYS",
    "central_slice",
    "ct3_bytes",
    "export_slice",
    "grid_from_metadata",
    "metadata_path",
    "parse_ct3",
    "read_ct3",
    "read_graymap",
    "read_metadata",
    "write_ct3",
    "write_metadata",
    "write_trace",
]
