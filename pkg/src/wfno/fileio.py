"""Image and raw-tensor file I/O.

Images are float64 (H, W, C) arrays with values in [0, 1], C in {1, 3}.
Supported formats: 8-bit grayscale/RGB PNG (non-interlaced) and binary PPM
(P6). Tensors of any rank round-trip through a little-endian container with
an 8-byte magic, u32 rank, u32 extents and raw float64 data.

All writers go through a temp-file + rename so readers never observe a
partially written file.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
TENSOR_MAGIC = b"WFNOTNSR"


class FileFormatError(ValueError):
    """Malformed or unsupported file content."""


def _atomic_write(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# PNG

def _png_chunks(blob: bytes):
    pos = len(PNG_SIGNATURE)
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise FileFormatError("PNG: truncated chunk header")
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        ctype = blob[pos + 4 : pos + 8]
        data = blob[pos + 8 : pos + 8 + length]
        if len(data) != length or pos + 12 + length > len(blob):
            raise FileFormatError(f"PNG: truncated {ctype!r} chunk")
        (crc,) = struct.unpack(">I", blob[pos + 8 + length : pos + 12 + length])
        if crc != zlib.crc32(ctype + data):
            raise FileFormatError(f"PNG: CRC mismatch in {ctype!r} chunk")
        yield ctype, data
        pos += 12 + length


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, height: int, width: int, channels: int) -> np.ndarray:
    stride = width * channels
    if len(raw) != height * (stride + 1):
        raise FileFormatError("PNG: decompressed size does not match dimensions")
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = bytearray(stride)
    for y in range(height):
        ftype = raw[y * (stride + 1)]
        line = bytearray(raw[y * (stride + 1) + 1 : (y + 1) * (stride + 1)])
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(channels, stride):
                line[i] = (line[i] + line[i - channels]) & 0xFF
        elif ftype == 2:
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                ul = prev[i - channels] if i >= channels else 0
                line[i] = (line[i] + _paeth(left, prev[i], ul)) & 0xFF
        else:
            raise FileFormatError(f"PNG: unknown filter type {ftype}")
        out[y] = np.frombuffer(bytes(line), dtype=np.uint8)
        prev = line
    return out.reshape(height, width, channels)


def _decode_png(blob: bytes) -> np.ndarray:
    if not blob.startswith(PNG_SIGNATURE):
        raise FileFormatError("PNG: bad signature")
    header = None
    idat = b""
    seen_end = False
    for ctype, data in _png_chunks(blob):
        if ctype == b"IHDR":
            if len(data) != 13:
                raise FileFormatError("PNG: bad IHDR length")
            header = struct.unpack(">IIBBBBB", data)
        elif ctype == b"IDAT":
            idat += data
        elif ctype == b"IEND":
            seen_end = True
            break
    if header is None:
        raise FileFormatError("PNG: missing IHDR")
    if not seen_end:
        raise FileFormatError("PNG: missing IEND")
    width, height, depth, color, comp, filt, interlace = header
    if width == 0 or height == 0:
        raise FileFormatError("PNG: zero-sized image")
    if depth != 8:
        raise FileFormatError(f"PNG: unsupported bit depth {depth} (only 8)")
    if color not in (0, 2):
        raise FileFormatError(f"PNG: unsupported color type {color} (only gray/RGB)")
    if comp != 0 or filt != 0:
        raise FileFormatError("PNG: unsupported compression/filter method")
    if interlace != 0:
        raise FileFormatError("PNG: interlaced images not supported")
    channels = 1 if color == 0 else 3
    try:
        raw = zlib.decompress(idat)
    except zlib.error as e:
        raise FileFormatError(f"PNG: bad IDAT stream ({e})") from e
    return _unfilter(raw, height, width, channels)


def _encode_png(pixels: np.ndarray) -> bytes:
    height, width, channels = pixels.shape
    color = 0 if channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color, 0, 0, 0)
    rows = b"".join(b"\x00" + pixels[y].tobytes() for y in range(height))
    idat = zlib.compress(rows, 6)

    def chunk(ctype: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + ctype + data + struct.pack(">I", zlib.crc32(ctype + data))

    return PNG_SIGNATURE + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")


# ---------------------------------------------------------------------------
# PPM (binary, P6)

def _decode_ppm(blob: bytes) -> np.ndarray:
    # Header is ASCII tokens (magic, width, height, maxval) with '#' comments,
    # terminated by exactly one whitespace byte before the raster.
    pos = 0

    def token() -> bytes:
        nonlocal pos
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
            raise FileFormatError("PPM: truncated header")
        return blob[start:pos]

    if token() != b"P6":
        raise FileFormatError("PPM: not a P6 file")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise FileFormatError("PPM: non-numeric header field") from e
    if width <= 0 or height <= 0:
        raise FileFormatError("PPM: non-positive dimensions")
    if maxval != 255:
        raise FileFormatError(f"PPM: unsupported maxval {maxval} (only 255)")
    pos += 1  # single whitespace after maxval
    data = blob[pos : pos + width * height * 3]
    if len(data) != width * height * 3:
        raise FileFormatError("PPM: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()


def _encode_ppm(pixels: np.ndarray) -> bytes:
    height, width, channels = pixels.shape
    if channels == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return b"P6\n%d %d\n255\n" % (width, height) + pixels.tobytes()


# ---------------------------------------------------------------------------
# public image API

def load_image(path: str) -> np.ndarray:
    """Read a PNG or PPM file into a float64 (H, W, C) array in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob.startswith(PNG_SIGNATURE):
        pixels = _decode_png(blob)
    elif blob[:2] == b"P6":
        pixels = _decode_ppm(blob)
    else:
        raise FileFormatError(f"{path}: neither PNG nor binary PPM")
    return pixels.astype(np.float64) / 255.0


def save_image(path: str, image: np.ndarray) -> None:
    """Write (H, W, C) values as 8-bit PNG or PPM, clamping to [0, 1] first."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"save_image expects (H, W, 1|3), got {image.shape}")
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        blob = _encode_png(pixels)
    elif ext in (".ppm", ".pnm"):
        blob = _encode_ppm(pixels)
    else:
        raise ValueError(f"save_image: unsupported extension {ext!r} (use .png or .ppm)")
    _atomic_write(path, blob)


# ---------------------------------------------------------------------------
# raw tensor container

def save_tensor(path: str, tensor: np.ndarray) -> None:
    """Write one float64 tensor: magic, u32 rank, u32 extents, data (little-endian)."""
    # asarray keeps rank-0 inputs rank 0 (ascontiguousarray would promote to 1-d)
    arr = np.asarray(tensor, dtype="<f8", order="C")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    _atomic_write(path, header + arr.tobytes())


def load_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != TENSOR_MAGIC:
        raise FileFormatError(f"{path}: bad tensor magic {blob[:8]!r}")
    if len(blob) < 12:
        raise FileFormatError(f"{path}: truncated tensor header")
    (rank,) = struct.unpack("<I", blob[8:12])
    if rank > 32:
        raise FileFormatError(f"{path}: implausible rank {rank}")
    if len(blob) < 12 + 4 * rank:
        raise FileFormatError(f"{path}: truncated extents")
    shape = struct.unpack(f"<{rank}I", blob[12 : 12 + 4 * rank])
    n = int(np.prod(shape)) if rank else 1
    data = blob[12 + 4 * rank :]
    if len(data) != 8 * n:
        raise FileFormatError(f"{path}: expected {8 * n} data bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
