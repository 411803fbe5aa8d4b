"""
SegCrowd - File Formats

Responsibilities:
- DMAP grids: b"DMAP", u32 height, u32 width, row-major little-endian float64
- SCNW checkpoints: b"SCNW", u32 version, then records of
  (u16 name length, name bytes, u8 rank, u32 dims..., float64 values) to EOF,
  plus a YAML sidecar <checkpoint>.yaml with the resolved configuration
- 8-bit grayscale PGM (P5) images through Pillow

All writers are deterministic: the same input produces the same bytes.
"""

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np
import yaml
from PIL import Image, UnidentifiedImageError

from .errors import FormatError
from .utils import ensure_dir


DMAP_MAGIC = b"DMAP"
SCNW_MAGIC = b"SCNW"
SCNW_VERSION = 1

_DMAP_HEADER = struct.Struct("<4sII")
_SCNW_HEADER = struct.Struct("<4sI")


# ----------------------------------------------------------------------
# DMAP
# ----------------------------------------------------------------------

def encode_dmap(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise FormatError(f"DMAP holds 2-D grids, got dims {grid.shape}")
    h, w = grid.shape
    return _DMAP_HEADER.pack(DMAP_MAGIC, h, w) + np.ascontiguousarray(grid, dtype="<f8").tobytes()


def decode_dmap(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < _DMAP_HEADER.size:
        raise FormatError(f"{source}: truncated DMAP header ({len(data)} bytes)")
    magic, h, w = _DMAP_HEADER.unpack_from(data)
    if magic != DMAP_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {DMAP_MAGIC!r}")
    expected = _DMAP_HEADER.size + 8 * h * w
    if len(data) != expected:
        raise FormatError(f"{source}: {len(data)} bytes, a {h}x{w} DMAP needs {expected}")
    values = np.frombuffer(data, dtype="<f8", offset=_DMAP_HEADER.size, count=h * w)
    return values.reshape(h, w).astype(np.float64)


def write_dmap(path: Path, grid: np.ndarray) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_bytes(encode_dmap(grid))
    return path


def read_dmap(path: Path) -> np.ndarray:
    path = Path(path)
    return decode_dmap(path.read_bytes(), source=str(path))


# ----------------------------------------------------------------------
# SCNW checkpoints
# ----------------------------------------------------------------------

def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    chunks = [_SCNW_HEADER.pack(SCNW_MAGIC, SCNW_VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF:
            raise FormatError(f"parameter name too long for SCNW: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise FormatError(f"parameter {name}: rank {arr.ndim} too large for SCNW")
        chunks.append(struct.pack("<H", len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> "OrderedDict[str, np.ndarray]":
    if len(data) < _SCNW_HEADER.size:
        raise FormatError(f"{source}: truncated SCNW header")
    magic, version = _SCNW_HEADER.unpack_from(data)
    if magic != SCNW_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {SCNW_MAGIC!r}")
    if version != SCNW_VERSION:
        raise FormatError(f"{source}: unsupported SCNW version {version}")

    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    offset = _SCNW_HEADER.size
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise FormatError(f"{source}: truncated parameter name at byte {offset}")
            offset += name_len
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if offset + 8 * count > len(data):
                raise FormatError(f"{source}: parameter {name} truncated")
            values = np.frombuffer(data, dtype="<f8", offset=offset, count=count)
            offset += 8 * count
            if name in arrays:
                raise FormatError(f"{source}: duplicate parameter {name}")
            arrays[name] = values.reshape(dims).astype(np.float64)
    except struct.error as e:
        raise FormatError(f"{source}: truncated record at byte {offset} ({e})") from None
    except UnicodeDecodeError:
        raise FormatError(f"{source}: parameter name at byte {offset} is not UTF-8") from None
    return arrays


def sidecar_path(checkpoint: Path) -> Path:
    checkpoint = Path(checkpoint)
    return checkpoint.with_name(checkpoint.name + ".yaml")


def write_checkpoint(
    path: Path,
    arrays: Mapping[str, np.ndarray],
    metadata: Optional[dict[str, Any]] = None,
) -> Path:
    """Write parameter arrays, and the sidecar when metadata is given."""
    path = Path(path)
    ensure_dir(path.parent)
    path.write_bytes(encode_checkpoint(arrays))
    if metadata is not None:
        with open(sidecar_path(path), "w", encoding="utf-8") as f:
            yaml.safe_dump(metadata, f, default_flow_style=False, sort_keys=False)
    return path


def read_checkpoint(path: Path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    return decode_checkpoint(path.read_bytes(), source=str(path))


def read_sidecar(path: Path) -> dict[str, Any]:
    side = sidecar_path(path)
    if not side.exists():
        raise FormatError(
            f"checkpoint {path} has no configuration sidecar {side.name}",
            suggested_fix="Checkpoints written by `segcrowd train` carry one; copy it along",
        )
    with open(side, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise FormatError(f"{side}: sidecar must be a mapping")
    return data


# ----------------------------------------------------------------------
# PGM (P5)
# ----------------------------------------------------------------------

def to_uint8(pixels: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit levels; uint8 input passes through."""
    arr = np.asarray(pixels)
    if arr.dtype == np.uint8:
        return arr
    return np.round(np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def normalize_to_uint8(grid: np.ndarray) -> np.ndarray:
    """Stretch a grid's [min, max] onto 0..255 (constant grids map to 0)."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        return np.zeros(grid.shape, dtype=np.uint8)
    lo, hi = float(grid.min()), float(grid.max())
    if hi - lo <= 0.0:
        return np.zeros(grid.shape, dtype=np.uint8)
    return to_uint8((grid - lo) / (hi - lo))


def write_pgm(path: Path, pixels: Union[np.ndarray, Image.Image]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    image = pixels if isinstance(pixels, Image.Image) else Image.fromarray(to_uint8(pixels))
    if image.mode != "L":
        raise FormatError(f"PGM output must be 8-bit grayscale, got mode {image.mode}")
    image.save(path, format="PPM")
    return path


def read_pgm(path: Path) -> np.ndarray:
    """Grayscale pixels scaled to [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.format != "PPM" or image.mode != "L":
                raise FormatError(f"{path}: expected 8-bit grayscale PGM, got {image.format} {image.mode}")
            levels = np.asarray(image, dtype=np.uint8)
    except UnidentifiedImageError:
        raise FormatError(f"{path}: not a PGM image") from None
    return levels.astype(np.float64) / 255.0
