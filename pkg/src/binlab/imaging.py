"""Image handling: loading, grayscale conversion, patch tiling, masks.

The working currency is a numpy float64 array with values in [0, 1]:
shape (H, W) for grayscale or (H, W, 3) for color. Binary images are
uint8 arrays of {0, 1} with 1 = ink (foreground) and 0 = background.
On disk, binary images follow the DIBCO convention instead: ink is
black (0) on a white (255) background.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import FormatError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)

_SUPPORTED_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff")


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check the [0, 1] range and shape contract, returning the array."""
    arr = np.asarray(img)
    if arr.ndim not in (2, 3):
        raise ValueError(f"image must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ValueError(f"image channels must be 1 or 3, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be at least 1x1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image intensities must lie in [0, 1]")
    return arr


def validate_binary(img: np.ndarray) -> np.ndarray:
    """Check that an array is a strict {0, 1} binary map."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"binary image must be 2-D, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("binary image contains values other than 0 and 1")
    return arr


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a raster file as a float image in [0, 1].

    Grayscale sources come back as (H, W); color sources keep their
    three channels as (H, W, 3). Unreadable files raise the underlying
    OSError; recognized-but-broken or unsupported files raise
    FormatError.
    """
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "1":
                im = im.convert("L")
                mode = "L"
            elif mode in ("LA", "I;16", "I"):
                arr16 = np.asarray(im)
                if arr16.dtype == np.uint16 or arr16.dtype == np.int32:
                    return arr16.astype(np.float64) / np.iinfo(arr16.dtype).max
                im = im.convert("L")
                mode = "L"
            elif mode in ("P", "RGBA", "CMYK", "YCbCr"):
                im = im.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise FormatError(f"unsupported image mode {mode!r}: {path}")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise FormatError(f"not a supported raster file: {path}") from exc
    except FileNotFoundError:
        raise
    except IsADirectoryError:
        raise
    except OSError as exc:
        # PIL signals truncated or corrupt streams as OSError during decode.
        raise FormatError(f"broken or truncated image file: {path}") from exc
    return arr


def save_image(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a float image in [0, 1] as an 8-bit raster file."""
    arr = validate_image(img)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data).save(path)


def save_binary(path: str | os.PathLike, binary: np.ndarray) -> None:
    """Write a binary map as 8-bit PNG, DIBCO convention (ink = 0, background = 255)."""
    arr = validate_binary(binary)
    data = ((1 - arr.astype(np.uint8)) * 255).astype(np.uint8)
    PILImage.fromarray(data).save(path)


def load_binary(path: str | os.PathLike) -> np.ndarray:
    """Load a DIBCO-convention raster as a {0, 1} ink map (dark = ink)."""
    gray = to_grayscale(load_image(path))
    return (gray < 0.5).astype(np.uint8)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse a color image to luminance with weights (0.299, 0.587, 0.114)."""
    arr = validate_image(img)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    w = np.asarray(GRAY_WEIGHTS, dtype=np.float64)
    return np.clip(arr @ w, 0.0, 1.0)


@dataclass(frozen=True)
class PatchGrid:
    """Anchor layout produced by extract_patches, needed to stitch back."""

    height: int
    width: int
    patch_size: int
    stride: int
    anchors: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def _axis_anchors(length: int, size: int, stride: int) -> list[int]:
    anchors = list(range(0, length - size + 1, stride))
    if anchors[-1] != length - size:
        # Final patch sits flush with the border, overlapping its neighbor.
        anchors.append(length - size)
    return anchors


def extract_patches(
    img: np.ndarray, size: int, stride: int
) -> tuple[list[np.ndarray], PatchGrid]:
    """Slide a size x size window over a grayscale image.

    Interior anchors advance by ``stride``; the last row and column of
    patches are anchored flush with the image border so every pixel is
    covered without padding.
    """
    arr = validate_image(img)
    if arr.ndim != 2:
        raise ValueError("extract_patches expects a single-channel image")
    if size <= 0 or stride <= 0:
        raise ValueError(f"size and stride must be positive, got {size}, {stride}")
    h, w = arr.shape
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image dims {h}x{w}")
    rows = _axis_anchors(h, size, stride)
    cols = _axis_anchors(w, size, stride)
    anchors = tuple((r, c) for r in rows for c in cols)
    patches = [arr[r : r + size, c : c + size].copy() for r, c in anchors]
    grid = PatchGrid(height=h, width=w, patch_size=size, stride=stride, anchors=anchors)
    return patches, grid


def stitch_patches(patches: list[np.ndarray], grid: PatchGrid) -> np.ndarray:
    """Reassemble patches onto the source canvas, averaging overlaps."""
    if len(patches) != len(grid.anchors):
        raise ValueError(
            f"got {len(patches)} patches for {len(grid.anchors)} anchors"
        )
    size = grid.patch_size
    acc = np.zeros((grid.height, grid.width), dtype=np.float64)
    count = np.zeros((grid.height, grid.width), dtype=np.float64)
    for patch, (r, c) in zip(patches, grid.anchors):
        p = np.asarray(patch, dtype=np.float64)
        if p.shape != (size, size):
            raise ValueError(f"patch shape {p.shape} does not match size {size}")
        acc[r : r + size, c : c + size] += p
        count[r : r + size, c : c + size] += 1.0
    if (count == 0).any():
        raise ValueError("anchors do not cover the full canvas")
    return acc / count


def augment_rotations(patch: np.ndarray) -> list[np.ndarray]:
    """Return [patch, rot90, rot180, rot270] (counter-clockwise rotations)."""
    arr = validate_image(patch)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"rotation augmentation needs a square patch, got {arr.shape}")
    return [np.ascontiguousarray(np.rot90(arr, k)) for k in range(4)]


def make_text_mask(clean: np.ndarray) -> np.ndarray:
    """Mark ink regions of a clean image: 1 where intensity < 0.5, else 0."""
    arr = validate_image(clean)
    if arr.ndim != 2:
        raise ValueError("make_text_mask expects a single-channel image")
    return (arr < 0.5).astype(np.uint8)


def threshold_output(img: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Binarize a float image: ink where intensity < t."""
    if not (0.0 < t < 1.0):
        raise ValueError(f"threshold must lie strictly inside (0, 1), got {t}")
    arr = validate_image(img)
    if arr.ndim != 2:
        raise ValueError("threshold_output expects a single-channel image")
    return (arr < t).astype(np.uint8)


def pad_to_min(img: np.ndarray, min_h: int, min_w: int) -> np.ndarray:
    """Edge-replicate an image so both dims reach at least the given size."""
    arr = validate_image(img)
    pad_h = max(0, min_h - arr.shape[0])
    pad_w = max(0, min_w - arr.shape[1])
    if pad_h == 0 and pad_w == 0:
        return arr
    return np.pad(arr, ((0, pad_h), (0, pad_w)), mode="edge")


def list_rasters(directory: str | os.PathLike) -> list[str]:
    """Sorted raster files (by name) directly inside a directory."""
    names = sorted(
        n
        for n in os.listdir(directory)
        if os.path.splitext(n)[1].lower() in _SUPPORTED_EXTENSIONS
    )
    return [os.path.join(directory, n) for n in names]
