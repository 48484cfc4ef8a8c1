"""Bit-exact file formats: .fmap tensors and PGM/PPM frame images.

The .fmap container is magic ``FMAP``, u32 little-endian version (1), u32
height, width, depth, then ``h*w*d`` IEEE-754 float32 little-endian values
in row-major, channel-innermost order.  Write then read is bit-identical.
"""

import struct

import numpy as np

from .errors import FormatError
from .tensor import feature_map

_FMAP_MAGIC = b"FMAP"
_FMAP_VERSION = 1
_U32_MAX = 0xFFFFFFFF


def write_fmap(fmap, path):
    arr = np.ascontiguousarray(fmap, dtype=np.float32)
    if arr.ndim != 3:
        raise FormatError(f"fmap payload must be rank 3, got rank {arr.ndim}")
    h, w, d = arr.shape
    if max(h, w, d) > _U32_MAX or h * w * d > _U32_MAX:
        raise FormatError("fmap dimensions overflow u32")
    with open(path, "wb") as f:
        f.write(_FMAP_MAGIC)
        f.write(struct.pack("<4I", _FMAP_VERSION, h, w, d))
        f.write(arr.astype("<f4").tobytes())


def read_fmap(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != _FMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    version, h, w, d = struct.unpack("<4I", blob[4:20])
    if version != _FMAP_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if h == 0 or w == 0 or d == 0 or h * w * d > _U32_MAX:
        raise FormatError(f"{path}: bad dimensions {h}x{w}x{d}")
    expected = h * w * d * 4
    payload = blob[20:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, header declares {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, d)
    return feature_map(data)


def _read_pnm_token(blob, pos):
    # skip whitespace and '#' comments between header fields
    while pos < len(blob):
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(blob) and not blob[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of PNM header")
    return blob[start:pos], pos


def read_image(path):
    """Read a binary 8-bit PGM (P5) or PPM (P6) frame, scaled to [0, 1].

    Returns a depth-1 map for PGM and a depth-3 (R, G, B) map for PPM.
    """
    with open(path, "rb") as f:
        blob = f.read()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported PNM variant {magic!r}")
    depth = 1 if magic == b"P5" else 3
    pos = 2
    try:
        wtok, pos = _read_pnm_token(blob, pos)
        htok, pos = _read_pnm_token(blob, pos)
        mtok, pos = _read_pnm_token(blob, pos)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (ValueError, FormatError) as exc:
        raise FormatError(f"{path}: malformed PNM header ({exc})") from exc
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    pos += 1  # single whitespace byte separates header from raster
    raster = blob[pos : pos + width * height * depth]
    if len(raster) != width * height * depth:
        raise FormatError(f"{path}: truncated raster")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, depth)
    return feature_map(pixels.astype(np.float32) / 255.0)


def write_image(fmap, path):
    """Write a [0, 1] feature map of depth 1 or 3 as binary PGM/PPM."""
    arr = np.asarray(fmap, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise FormatError("image must have depth 1 or 3")
    h, w, d = arr.shape
    magic = b"P5" if d == 1 else b"P6"
    raster = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(magic + b"\n" + f"{w} {h}\n255\n".encode("ascii"))
        f.write(raster.tobytes())
