"""Typed 3D grids and the UVOL container format.

All volumetric data in this package flows through the four grid types
defined here. Arrays are C-ordered ``(d, h, w)`` so the linear index of
voxel ``(z, y, x)`` is ``(z * h + y) * w + x``, which is also the byte
order of the UVOL payload. Grids are immutable once constructed: the
wrapped array is copied and its write flag cleared.

UVOL is a single-file container: one UTF-8 JSON header line terminated
by ``\\n``, followed by the raw little-endian payload with no trailing
bytes. Example header::

    {"magic":"UVOL1","dtype":"f32","dims":[64,64,64],"spacing":[1.0,1.0,1.0]}

``dtype`` is ``"f32"`` (4-byte float) for images, probability and
uncertainty maps, and ``"u8"`` (1 byte, values 0/1 only) for binary
masks. Other modules never touch the container bytes directly; reading
and writing happens only through :func:`read_uvol` and
:func:`write_uvol`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Volume",
    "BinaryMask",
    "ProbMap",
    "UncertaintyMap",
    "UvolFormatError",
    "read_uvol",
    "write_uvol",
    "normalize_intensity",
    "extract_slice",
    "stack_slices",
]

UVOL_MAGIC = "UVOL1"


class UvolFormatError(ValueError):
    """Raised for malformed UVOL files or grids that cannot be encoded."""


def _coerce(data, dtype: str) -> np.ndarray:
    arr = np.array(data, dtype=dtype, order="C", copy=True)
    if arr.ndim != 3:
        raise ValueError(f"grid data must be 3D (d, h, w), got shape {arr.shape}")
    if 0 in arr.shape:
        raise ValueError(f"grid dimensions must be positive, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise ValueError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing must be positive and finite, got {sp}")
    return sp


@dataclass(frozen=True)
class Volume:
    """Scalar intensity volume, float32, any finite values."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _coerce(self.data, "float32")
        if not np.isfinite(arr).all():
            raise ValueError("volume intensities must be finite")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class BinaryMask:
    """Voxel labels in {0, 1}, stored as uint8."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _coerce(self.data, "uint8")
        bad = (arr > 1).any()
        if bad:
            raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ProbMap:
    """Per-voxel foreground probability, float32 in [0, 1]."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _coerce(self.data, "float32")
        if not np.isfinite(arr).all():
            raise ValueError("probabilities must be finite")
        if (arr < 0).any() or (arr > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class UncertaintyMap:
    """Per-voxel uncertainty, float32, non-negative.

    Values produced by binary predictive entropy additionally sit in
    [0, ln 2]; that is a property of the producer, not of this type.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _coerce(self.data, "float32")
        if not np.isfinite(arr).all():
            raise ValueError("uncertainty values must be finite")
        if (arr < 0).any():
            raise ValueError("uncertainty values must be non-negative")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


_DTYPE_TAG = {"float32": "f32", "uint8": "u8"}
_TAG_NP = {"f32": "<f4", "u8": "u1"}
_TAG_ITEMSIZE = {"f32": 4, "u8": 1}

Grid = Volume | BinaryMask | ProbMap | UncertaintyMap


def _revalidate(grid: Grid) -> None:
    # Guards hand-built objects that bypassed __post_init__; cheap
    # compared with the write itself.
    if isinstance(grid, BinaryMask):
        if (grid.data > 1).any():
            raise UvolFormatError("mask contains values outside {0, 1}")
    elif isinstance(grid, ProbMap):
        if (grid.data < 0).any() or (grid.data > 1).any():
            raise UvolFormatError("probability map leaves [0, 1]")
    elif isinstance(grid, UncertaintyMap):
        if (grid.data < 0).any():
            raise UvolFormatError("uncertainty map has negative values")
    if not np.isfinite(grid.data).all() and not isinstance(grid, BinaryMask):
        raise UvolFormatError("grid contains non-finite values")


def write_uvol(grid: Grid, path) -> None:
    """Serialize a grid to ``path`` in UVOL format.

    The header is written with a fixed key order and compact separators
    so identical grids always produce identical bytes.
    """
    _revalidate(grid)
    tag = _DTYPE_TAG[grid.data.dtype.name]
    d, h, w = grid.data.shape
    header = {
        "magic": UVOL_MAGIC,
        "dtype": tag,
        "dims": [d, h, w],
        "spacing": list(grid.spacing),
    }
    payload = np.ascontiguousarray(grid.data).astype(_TAG_NP[tag], copy=False)
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        f.write(b"\n")
        f.write(payload.tobytes())


def read_uvol(path, kind: str = "auto") -> Grid:
    """Read a UVOL file back into a typed grid.

    ``kind`` selects the returned type: ``"auto"`` maps f32 payloads to
    :class:`Volume` and u8 payloads to :class:`BinaryMask`; pass
    ``"prob"`` or ``"unc"`` to reinterpret an f32 payload (with the
    matching range validation), or ``"volume"`` / ``"mask"`` to insist
    on a dtype.
    """
    if kind not in ("auto", "volume", "mask", "prob", "unc"):
        raise ValueError(f"unknown kind {kind!r}")
    with open(path, "rb") as f:
        line = f.readline()
        if not line.endswith(b"\n"):
            raise UvolFormatError("missing header line terminator")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise UvolFormatError(f"unparseable header: {e}") from e
        payload = f.read()

    if not isinstance(header, dict) or header.get("magic") != UVOL_MAGIC:
        raise UvolFormatError("bad magic, not a UVOL file")
    tag = header.get("dtype")
    if tag not in _TAG_NP:
        raise UvolFormatError(f"unknown dtype tag {tag!r}")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(v, int) and v > 0 for v in dims)
    ):
        raise UvolFormatError(f"bad dims {dims!r}")
    spacing = header.get("spacing")
    if (
        not isinstance(spacing, list)
        or len(spacing) != 3
        or not all(isinstance(v, (int, float)) and v > 0 for v in spacing)
    ):
        raise UvolFormatError(f"bad spacing {spacing!r}")

    expected = dims[0] * dims[1] * dims[2] * _TAG_ITEMSIZE[tag]
    if len(payload) != expected:
        raise UvolFormatError(
            f"payload length mismatch: expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=_TAG_NP[tag]).reshape(dims)

    sp = tuple(float(s) for s in spacing)
    if tag == "u8":
        if kind in ("volume", "prob", "unc"):
            raise UvolFormatError(f"dtype u8 cannot be read as {kind}")
        if (arr > 1).any():
            raise UvolFormatError("non-binary values in a mask payload")
        return BinaryMask(arr, sp)
    if kind == "mask":
        raise UvolFormatError("dtype f32 cannot be read as mask")
    if not np.isfinite(arr).all():
        raise UvolFormatError("non-finite values in payload")
    if kind == "prob":
        return ProbMap(arr, sp)
    if kind == "unc":
        return UncertaintyMap(arr, sp)
    return Volume(arr, sp)


def normalize_intensity(volume: Volume, lo: float, hi: float) -> Volume:
    """Clip intensities to ``[lo, hi]`` and rescale linearly to [0, 1]."""
    lo = float(lo)
    hi = float(hi)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise ValueError(f"invalid window [{lo}, {hi}]")
    x = np.clip(volume.data.astype(np.float64), lo, hi)
    out = (x - lo) / (hi - lo)
    return Volume(out.astype(np.float32), volume.spacing)


def extract_slice(grid: Grid, z: int) -> np.ndarray:
    """Return a writable copy of the ``(h, w)`` plane at index ``z``."""
    d = grid.data.shape[0]
    if not 0 <= z < d:
        raise IndexError(f"slice index {z} out of range for depth {d}")
    return grid.data[z].copy()


def stack_slices(slices, spacing=(1.0, 1.0, 1.0), kind=Volume) -> Grid:
    """Reassemble a list of ``(h, w)`` planes into a grid of ``kind``."""
    return kind(np.stack(list(slices), axis=0), tuple(spacing))
