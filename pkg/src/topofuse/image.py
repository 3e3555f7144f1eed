"""Grayscale image type, bit-exact PGM/PNG I/O, and foreground-mask extraction.

Intensities live in [0, 1]; 8-bit pixel values v map to v/255 on load and
intensities quantize back with round-half-up on save, so load/save round
trips are byte-identical for 8-bit-derived images.

Foreground extraction stands in for an external segmentation model: Otsu
threshold, keep the minority side, take the largest 4-connected component,
close with a 3x3 square. Users with real masks supply them as 0/255 PGM
files via ``load_mask``.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GrayImage",
    "RoiMask",
    "ImageIoError",
    "HeaderError",
    "PayloadError",
    "PngFormatError",
    "load_image",
    "save_image",
    "load_mask",
    "save_mask",
    "extract_roi",
    "apply_mask",
]


class ImageIoError(Exception):
    """Base class for image file errors."""


class HeaderError(ImageIoError):
    """Malformed or unsupported file header."""


class PayloadError(ImageIoError):
    """Pixel payload truncated or inconsistent with the header."""


class PngFormatError(ImageIoError):
    """PNG is valid but not 8-bit grayscale, non-interlaced."""


@dataclass(frozen=True)
class GrayImage:
    """H x W grid of intensities in [0, 1]; immutable after construction."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D pixel grid, got shape {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ValueError(f"image must be at least 2x2, got {arr.shape}")
        if not np.all((arr >= 0.0) & (arr <= 1.0)):
            raise ValueError("intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class RoiMask:
    """Boolean foreground mask paired with an image of the same shape.

    ``fallback`` is set when extraction degenerated (constant image) and
    the full-image mask was substituted.
    """

    mask: np.ndarray
    fallback: bool = field(default=False)

    def __post_init__(self):
        arr = np.asarray(self.mask, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"expected a 2-D mask, got shape {arr.shape}")
        if not arr.any():
            raise ValueError("mask must contain at least one foreground pixel")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "mask", arr)

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @staticmethod
    def full(height: int, width: int, fallback: bool = False) -> "RoiMask":
        return RoiMask(np.ones((height, width), dtype=bool), fallback=fallback)


# ---------------------------------------------------------------------------
# PGM (P2 ascii / P5 binary)
# ---------------------------------------------------------------------------

def _pgm_tokens(raw: bytes):
    """Yield whitespace-separated header tokens, skipping # comments."""
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i:i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            while i < n and raw[i:i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < n and raw[j:j + 1] not in b" \t\r\n":
                j += 1
            yield raw[i:j], j
            i = j


def _parse_pgm(raw: bytes) -> np.ndarray:
    toks = _pgm_tokens(raw)
    try:
        magic, _ = next(toks)
    except StopIteration:
        raise HeaderError("empty PGM file") from None
    if magic not in (b"P2", b"P5"):
        raise HeaderError(f"not a PGM file (magic {magic!r})")
    vals = []
    end = 0
    for _ in range(3):
        try:
            tok, end = next(toks)
        except StopIteration:
            raise HeaderError("PGM header ended before width/height/maxval") from None
        try:
            vals.append(int(tok))
        except ValueError:
            raise HeaderError(f"non-numeric PGM header token {tok!r}") from None
    width, height, maxval = vals
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise HeaderError(f"bad PGM dimensions/maxval {width}x{height}/{maxval}")
    if magic == b"P5":
        if maxval > 255:
            raise HeaderError("16-bit binary PGM not supported")
        data = raw[end + 1:]  # single whitespace byte after maxval
        need = width * height
        if len(data) < need:
            raise PayloadError(f"P5 payload has {len(data)} bytes, needs {need}")
        grid = np.frombuffer(data[:need], dtype=np.uint8).astype(np.float64)
    else:
        nums = []
        for tok, end in toks:
            try:
                nums.append(int(tok))
            except ValueError:
                raise PayloadError(f"non-numeric P2 sample {tok!r}") from None
        if len(nums) < width * height:
            raise PayloadError(f"P2 payload has {len(nums)} samples, needs {width * height}")
        grid = np.array(nums[:width * height], dtype=np.float64)
        if grid.min() < 0 or grid.max() > maxval:
            raise PayloadError("P2 sample outside [0, maxval]")
    return (grid / float(maxval)).reshape(height, width)


def _quantize(pixels: np.ndarray) -> np.ndarray:
    # round-half-up so 0.5 -> 128
    return np.floor(pixels * 255.0 + 0.5).astype(np.uint8)


def _encode_pgm(pixels: np.ndarray, ascii_format: bool) -> bytes:
    q = _quantize(pixels)
    h, w = q.shape
    header = f"{'P2' if ascii_format else 'P5'}\n{w} {h}\n255\n".encode("ascii")
    if ascii_format:
        body = "\n".join(" ".join(str(v) for v in row) for row in q.tolist())
        return header + body.encode("ascii") + b"\n"
    return header + q.tobytes()


# ---------------------------------------------------------------------------
# PNG, 8-bit grayscale only
# ---------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def _encode_png(pixels: np.ndarray) -> bytes:
    q = _quantize(pixels)
    h, w = q.shape
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    scanlines = b"".join(b"\x00" + q[i].tobytes() for i in range(h))
    idat = zlib.compress(scanlines, 9)
    return _PNG_SIG + _png_chunk(b"IHDR", ihdr) + _png_chunk(b"IDAT", idat) + _png_chunk(b"IEND", b"")


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _parse_png(raw: bytes) -> np.ndarray:
    if raw[:8] != _PNG_SIG:
        raise HeaderError("not a PNG file (bad signature)")
    pos = 8
    width = height = None
    idat = b""
    seen_iend = False
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise PayloadError("truncated PNG chunk header")
        (length,) = struct.unpack(">I", raw[pos:pos + 4])
        tag = raw[pos + 4:pos + 8]
        payload = raw[pos + 8:pos + 8 + length]
        if len(payload) < length or pos + 12 + length > len(raw):
            raise PayloadError(f"truncated PNG chunk {tag!r}")
        (crc,) = struct.unpack(">I", raw[pos + 8 + length:pos + 12 + length])
        if crc != (zlib.crc32(tag + payload) & 0xFFFFFFFF):
            raise PayloadError(f"PNG chunk {tag!r} fails CRC")
        pos += 12 + length
        if tag == b"IHDR":
            width, height, depth, color, comp, filt, interlace = struct.unpack(">IIBBBBB", payload)
            if color != 0:
                raise PngFormatError(f"PNG color type {color} is not grayscale")
            if depth != 8:
                raise PngFormatError(f"PNG bit depth {depth} unsupported (need 8)")
            if comp != 0 or filt != 0:
                raise PngFormatError("nonstandard PNG compression/filter method")
            if interlace != 0:
                raise PngFormatError("interlaced PNG unsupported")
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            seen_iend = True
            break
    if width is None:
        raise HeaderError("PNG has no IHDR chunk")
    if not seen_iend:
        raise PayloadError("PNG has no IEND chunk")
    try:
        stream = zlib.decompress(idat)
    except zlib.error as exc:
        raise PayloadError(f"PNG IDAT does not decompress: {exc}") from None
    stride = width + 1
    if len(stream) != stride * height:
        raise PayloadError(f"PNG scanline data has {len(stream)} bytes, needs {stride * height}")
    out = np.zeros((height, width), dtype=np.uint8)
    prev = np.zeros(width, dtype=np.int64)
    for i in range(height):
        ftype = stream[i * stride]
        row = np.frombuffer(stream[i * stride + 1:(i + 1) * stride], dtype=np.uint8).astype(np.int64)
        if ftype == 0:
            cur = row
        elif ftype == 1:  # Sub
            cur = row.copy()
            for j in range(1, width):
                cur[j] = (cur[j] + cur[j - 1]) & 0xFF
        elif ftype == 2:  # Up
            cur = (row + prev) & 0xFF
        elif ftype == 3:  # Average
            cur = row.copy()
            cur[0] = (cur[0] + prev[0] // 2) & 0xFF
            for j in range(1, width):
                cur[j] = (cur[j] + (cur[j - 1] + prev[j]) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            cur = row.copy()
            cur[0] = (cur[0] + _paeth(0, int(prev[0]), 0)) & 0xFF
            for j in range(1, width):
                cur[j] = (cur[j] + _paeth(int(cur[j - 1]), int(prev[j]), int(prev[j - 1]))) & 0xFF
        else:
            raise PayloadError(f"unknown PNG filter type {ftype}")
        out[i] = cur.astype(np.uint8)
        prev = cur
    return out.astype(np.float64) / 255.0


# ---------------------------------------------------------------------------
# Public I/O
# ---------------------------------------------------------------------------

_FORMATS = ("pgm-ascii", "pgm-binary", "png-gray8")


def _guess_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".png":
        return "png-gray8"
    return "pgm-binary"


def load_image(path, format: str | None = None) -> GrayImage:
    """Load a PGM (P2/P5) or 8-bit grayscale PNG as intensities in [0, 1]."""
    path = Path(path)
    if format is None:
        format = _guess_format(path)
    if format not in _FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {_FORMATS}")
    raw = path.read_bytes()
    if format == "png-gray8":
        grid = _parse_png(raw)
    else:
        grid = _parse_pgm(raw)
        if format == "pgm-ascii" and not raw.lstrip().startswith(b"P2"):
            raise HeaderError("expected ascii PGM (P2)")
        if format == "pgm-binary" and not raw.lstrip().startswith(b"P5"):
            raise HeaderError("expected binary PGM (P5)")
    return GrayImage(grid)


def save_image(img: GrayImage, path, format: str | None = None) -> None:
    """Write ``img`` quantized to 8 bits with round-half-up."""
    path = Path(path)
    if format is None:
        format = _guess_format(path)
    if format == "png-gray8":
        blob = _encode_png(img.pixels)
    elif format == "pgm-ascii":
        blob = _encode_pgm(img.pixels, ascii_format=True)
    elif format == "pgm-binary":
        blob = _encode_pgm(img.pixels, ascii_format=False)
    else:
        raise ValueError(f"unknown format {format!r}; expected one of {_FORMATS}")
    path.write_bytes(blob)


def load_mask(path) -> RoiMask:
    """Masks are PGM files with 0/255 samples; any nonzero value is foreground."""
    grid = _parse_pgm(Path(path).read_bytes())
    return RoiMask(grid > 0.5)


def save_mask(roi: RoiMask, path) -> None:
    img = np.where(roi.mask, 1.0, 0.0)
    Path(path).write_bytes(_encode_pgm(img, ascii_format=False))


# ---------------------------------------------------------------------------
# ROI extraction
# ---------------------------------------------------------------------------

def _otsu_threshold(q: np.ndarray) -> int:
    """Otsu's threshold on 8-bit values; returns t with classes q<=t / q>t."""
    hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    omega = np.cumsum(hist) / total
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = np.where(denom > 0, (mu_total * omega - mu) ** 2 / denom, 0.0)
    return int(np.argmax(sigma_b))


def _largest_component_4(fg: np.ndarray) -> np.ndarray:
    """Largest 4-connected component of a boolean grid (deterministic ties)."""
    h, w = fg.shape
    labels = -np.ones((h, w), dtype=np.int64)
    sizes = []
    for i in range(h):
        for j in range(w):
            if fg[i, j] and labels[i, j] < 0:
                lab = len(sizes)
                stack = [(i, j)]
                labels[i, j] = lab
                count = 0
                while stack:
                    y, x = stack.pop()
                    count += 1
                    for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                        if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and labels[ny, nx] < 0:
                            labels[ny, nx] = lab
                            stack.append((ny, nx))
                sizes.append(count)
    best = int(np.argmax(sizes))  # first-seen component wins ties
    return labels == best


def _binary_dilate3(m: np.ndarray) -> np.ndarray:
    out = m.copy()
    out[1:, :] |= m[:-1, :]
    out[:-1, :] |= m[1:, :]
    full = out.copy()
    full[:, 1:] |= out[:, :-1]
    full[:, :-1] |= out[:, 1:]
    return full

def _binary_erode3(m: np.ndarray) -> np.ndarray:
    # out-of-bounds neighbors are ignored (treated as foreground)
    out = m.copy()
    out[1:, :] &= m[:-1, :]
    out[:-1, :] &= m[1:, :]
    full = out.copy()
    full[:, 1:] &= out[:, :-1]
    full[:, :-1] &= out[:, 1:]
    return full


def extract_roi(img: GrayImage, method: str = "otsu-largest-component",
                mask_path=None) -> RoiMask:
    """Deterministic foreground extraction.

    ``otsu-largest-component``: Otsu split, keep the side with fewer pixels
    (the object, whether it is darker or brighter than its background),
    largest 4-connected component, 3x3 morphological closing. A constant
    image has no Otsu split and falls back to the full-image mask with
    ``fallback=True``.

    ``external-mask``: read a 0/255 PGM whose dimensions must match.
    """
    if method == "external-mask":
        if mask_path is None:
            raise ValueError("external-mask method requires mask_path")
        roi = load_mask(mask_path)
        if (roi.height, roi.width) != (img.height, img.width):
            raise ValueError(
                f"mask is {roi.height}x{roi.width}, image is {img.height}x{img.width}")
        return roi
    if method != "otsu-largest-component":
        raise ValueError(f"unknown ROI method {method!r}")

    px = img.pixels
    if px.max() == px.min():
        return RoiMask.full(img.height, img.width, fallback=True)
    q = _quantize(px)
    t = _otsu_threshold(q)
    above = q > t
    n_above = int(above.sum())
    n_below = above.size - n_above
    if n_above == 0 or n_below == 0:
        return RoiMask.full(img.height, img.width, fallback=True)
    fg = above if n_above <= n_below else ~above  # minority side is the object
    fg = _largest_component_4(fg)
    fg = _binary_erode3(_binary_dilate3(fg))
    if not fg.any():
        return RoiMask.full(img.height, img.width, fallback=True)
    return RoiMask(fg)


def apply_mask(img: GrayImage, roi: RoiMask, fill: str = "max-value") -> GrayImage:
    """Set pixels outside the ROI to 1.0 so background enters the sublevel
    filtration last and contributes no early topology."""
    if (roi.height, roi.width) != (img.height, img.width):
        raise ValueError(
            f"mask is {roi.height}x{roi.width}, image is {img.height}x{img.width}")
    if fill != "max-value":
        raise ValueError(f"unknown fill mode {fill!r}")
    out = img.pixels.copy()
    out[~roi.mask] = 1.0
    return GrayImage(out)
