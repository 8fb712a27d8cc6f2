"""Depth map formats (PFM, 16-bit PNG), RGB images and checkpoints."""
from __future__ import annotations

import json
import re
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CheckpointError, FormatError, RangeError

PNG16_SCALE = 256.0
CHECKPOINT_MAGIC = b"SKIPDEPTH-CHECKPOINT\n"
CHECKPOINT_VERSION = 1


# ------------------------------------------------------------------- depth maps


def write_pfm(path, depth: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise FormatError(f"PFM depth must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(depth[::-1]).tobytes())


def _header_token(fh) -> bytes:
    line = fh.readline()
    if not line:
        raise FormatError("truncated PFM header")
    return line.rstrip(b"\r\n")


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        kind = _header_token(fh)
        if kind != b"Pf":
            raise FormatError(f"{path}: expected single-channel 'Pf' header, got {kind[:8]!r}")
        dims = re.fullmatch(rb"\s*(\d+)\s+(\d+)\s*", _header_token(fh))
        if dims is None:
            raise FormatError(f"{path}: malformed PFM dimensions line")
        w, h = int(dims.group(1)), int(dims.group(2))
        try:
            scale = float(_header_token(fh))
        except ValueError:
            raise FormatError(f"{path}: malformed PFM scale line") from None
        if scale == 0:
            raise FormatError(f"{path}: PFM scale must be non-zero")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = fh.read()
    if len(payload) != 4 * w * h:
        raise FormatError(f"{path}: expected {4 * w * h} bytes of samples, found {len(payload)}")
    data = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    return data[::-1].astype(np.float32)


def write_png16(path, depth: np.ndarray, scale: float = PNG16_SCALE) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise FormatError(f"PNG depth must be 2-D, got shape {depth.shape}")
    units = np.round(depth * scale)
    if np.any(units > 65535) or np.any(units < 0):
        raise RangeError(
            f"depth range [{depth.min():.3f}, {depth.max():.3f}] m does not fit 16 bits at {scale} units/m"
        )
    Image.fromarray(units.astype(np.uint16)).save(path)


def read_png16(path, scale: float = PNG16_SCALE) -> np.ndarray:
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if raw.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel image")
    return (raw.astype(np.float64) / scale).astype(np.float32)


def write_depth(path, depth: np.ndarray, fmt: str | None = None) -> None:
    fmt = fmt or _format_from_suffix(path)
    if fmt == "pfm":
        write_pfm(path, depth)
    elif fmt == "png16":
        write_png16(path, depth)
    else:
        raise FormatError(f"unknown depth format {fmt!r}")


def read_depth(path, fmt: str | None = None) -> np.ndarray:
    fmt = fmt or _format_from_suffix(path)
    if fmt == "pfm":
        return read_pfm(path)
    if fmt == "png16":
        return read_png16(path)
    raise FormatError(f"unknown depth format {fmt!r}")


def _format_from_suffix(path) -> str:
    suffix = Path(path).suffix.lower()
    return {".pfm": "pfm", ".png": "png16"}.get(suffix, suffix.lstrip("."))


DEPTH_SUFFIX = {"pfm": ".pfm", "png16": ".png"}


# ----------------------------------------------------------------------- images


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


# ------------------------------------------------------------------ checkpoints


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write a text manifest line followed by little-endian float32 blobs in manifest order."""
    entries = []
    blobs = []
    for name, value in params.items():
        blob = np.ascontiguousarray(value, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "crc32": zlib.crc32(blob)})
        blobs.append(blob)
    manifest = {"format_version": CHECKPOINT_VERSION, "meta": meta or {}, "params": entries}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8") + b"\n")
        for blob in blobs:
            fh.write(blob)


def read_manifest(path) -> tuple[dict, bytes]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC) :]
    line_end = rest.find(b"\n")
    if line_end < 0:
        raise CheckpointError(f"{path}: manifest is not terminated")
    try:
        manifest = json.loads(rest[:line_end])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    version = manifest.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unknown checkpoint format version {version!r}")
    return manifest, rest[line_end + 1 :]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(meta, params)``; every blob is validated against its checksum."""
    manifest, payload = read_manifest(path)
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in manifest["params"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset >= len(payload) and nbytes:
            raise CheckpointError(f"{path}: parameter {name!r} is missing from the blob section")
        blob = payload[offset : offset + nbytes]
        if zlib.crc32(blob) != entry["crc32"] or len(blob) != nbytes:
            raise CheckpointError(f"{path}: checksum mismatch for parameter {name!r}")
        params[name] = np.frombuffer(blob, dtype="<f4").reshape(shape).copy()
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes after the last parameter")
    return manifest["meta"], params
