"""Integer bit-depth reduction/expansion and image file I/O.

A b-bit image stores values 0 .. 2^b - 1 in an 8-bit container. Reduction
truncates least-significant bits; the two classic expansions are zero
padding (shift left, LSBs zero) and ideal gain (rescale so extremes map to
extremes; identical to bit replication when the depth doubles).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .errors import ImageFormatError, ShapeMismatchError


@dataclass
class ImageBuffer:
    """Integer image: interleaved row-major pixels tagged with a bit depth."""

    width: int
    height: int
    channels: int
    bit_depth: int
    pixels: np.ndarray  # uint8, flat, length width*height*channels

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ImageFormatError(f"channels must be 1 or 3, got {self.channels}")
        if not 1 <= self.bit_depth <= 8:
            raise ImageFormatError(f"bit depth must be in [1,8], got {self.bit_depth}")
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8).reshape(-1)
        expect = self.width * self.height * self.channels
        if self.pixels.size != expect:
            raise ShapeMismatchError(
                f"pixel count {self.pixels.size} != width*height*channels = {expect}"
            )
        top = int(self.pixels.max(initial=0))
        if top > self.max_value:
            raise ImageFormatError(
                f"pixel value {top} exceeds 2^{self.bit_depth}-1 = {self.max_value}"
            )

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def array(self) -> np.ndarray:
        """Pixels as an [H, W, C] uint8 array (a view when possible)."""
        return self.pixels.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_array(cls, arr: np.ndarray, bit_depth: int = 8) -> "ImageBuffer":
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, bit_depth, arr.reshape(-1))


# ---- core conversions (array level) ----------------------------------------


def quantize_array(pixels: np.ndarray, target_bits: int) -> np.ndarray:
    return (pixels >> (8 - target_bits)).astype(np.uint8)


def zp_array(pixels: np.ndarray, bits: int, target_bits: int) -> np.ndarray:
    return (pixels.astype(np.uint16) << (target_bits - bits)).astype(np.uint8)


def mig_array(pixels: np.ndarray, bits: int, target_bits: int) -> np.ndarray:
    lo = (1 << bits) - 1
    hi = (1 << target_bits) - 1
    # round-half-up in exact integer arithmetic
    scaled = (pixels.astype(np.uint32) * hi * 2 + lo) // (2 * lo)
    return scaled.astype(np.uint8)


def _check_expand(bits: int, target_bits: int) -> None:
    if target_bits > 8:
        raise ValueError(f"target bit depth {target_bits} exceeds the 8-bit container")
    if target_bits <= bits:
        raise ValueError(f"target bit depth {target_bits} must exceed source depth {bits}")


# ---- ImageBuffer operations -------------------------------------------------


def quantize(img: ImageBuffer, target_bits: int) -> ImageBuffer:
    """Truncate an 8-bit image to target_bits by dropping LSBs."""
    if img.bit_depth != 8:
        raise ValueError(f"quantize expects an 8-bit source, got {img.bit_depth}-bit")
    if not 1 <= target_bits <= 7:
        raise ValueError(f"target_bits must be in [1,7], got {target_bits}")
    return ImageBuffer(img.width, img.height, img.channels, target_bits,
                       quantize_array(img.pixels, target_bits))


def dequantize_zp(img: ImageBuffer, target_bits: int = 8) -> ImageBuffer:
    """Zero padding: shift left, leaving the new LSBs zero."""
    _check_expand(img.bit_depth, target_bits)
    return ImageBuffer(img.width, img.height, img.channels, target_bits,
                       zp_array(img.pixels, img.bit_depth, target_bits))


def dequantize_mig(img: ImageBuffer, target_bits: int = 8) -> ImageBuffer:
    """Ideal gain: x -> round(x * (2^B - 1) / (2^b - 1)), full dynamic range."""
    _check_expand(img.bit_depth, target_bits)
    return ImageBuffer(img.width, img.height, img.channels, target_bits,
                       mig_array(img.pixels, img.bit_depth, target_bits))


def to_unit(img: ImageBuffer) -> Tensor:
    """Normalize to a [1,C,H,W] float tensor with values in [0,1]."""
    arr = img.array().astype(np.float32) / np.float32(img.max_value)
    return Tensor(arr.transpose(2, 0, 1)[None])


def from_unit(t: Tensor, bit_depth: int = 8) -> ImageBuffer:
    """Round a [1,C,H,W] unit-range tensor back to an integer image."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    if data.ndim != 4 or data.shape[0] != 1:
        raise ShapeMismatchError(f"from_unit expects a [1,C,H,W] tensor, got shape {data.shape}")
    m = (1 << bit_depth) - 1
    levels = np.floor(np.clip(data[0], 0.0, 1.0).astype(np.float64) * m + 0.5)
    return ImageBuffer.from_array(levels.astype(np.uint8).transpose(1, 2, 0), bit_depth)


# ---- file I/O -----------------------------------------------------------------
#
# 8-bit PNG and binary PPM (P6). Sub-8-bit images keep their raw values in the
# 8-bit container and declare the depth in a sidecar file "<image>.bits"; the
# loader enforces the value range whenever a sidecar is present.


def _sidecar(path) -> Path:
    return Path(str(path) + ".bits")


def _read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:2] != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (P6) file")
    # header tokens: magic, width, height, maxval; '#' starts a comment
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated PPM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PPM header {tokens}") from exc
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 PPM supported, got {maxval}")
    need = width * height * 3
    raw = blob[pos : pos + need]
    if len(raw) != need:
        raise ImageFormatError(f"{path}: PPM payload has {len(raw)} bytes, expected {need}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def _write_ppm(path, arr: np.ndarray) -> None:
    h, w, c = arr.shape
    if c != 3:
        raise ImageFormatError("PPM (P6) output requires 3 channels; use PNG for grayscale")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def load_image(path, bit_depth: int | None = None) -> ImageBuffer:
    """Load a PNG or PPM file; sidecar or explicit bit_depth declares b < 8."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    if path.suffix.lower() == ".ppm":
        arr = _read_ppm(path)
    else:
        with Image.open(path) as im:
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.uint8)[:, :, None]
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    if bit_depth is None:
        side = _sidecar(path)
        bit_depth = int(side.read_text().strip()) if side.exists() else 8
    try:
        return ImageBuffer.from_array(arr, bit_depth)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc


def save_image(img: ImageBuffer, path) -> None:
    """Write PNG or PPM; sub-8-bit depths also write the sidecar tag."""
    path = Path(path)
    arr = img.array()
    if path.suffix.lower() == ".ppm":
        _write_ppm(path, arr)
    else:
        pil = Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr)
        pil.save(path)
    side = _sidecar(path)
    if img.bit_depth < 8:
        side.write_text(f"{img.bit_depth}\n")
    elif side.exists():
        side.unlink()


def list_images(directory) -> list[Path]:
    """Image files directly inside ``directory``, sorted by name."""
    exts = {".png", ".ppm"}
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in exts)
