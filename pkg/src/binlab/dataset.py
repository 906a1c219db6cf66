"""Dataset ingestion, unpaired sampling, and the synthetic toy corpus.

Expected on-disk layout is ``<root>/<dataset>/{degraded,gt}/*.png`` with
the gt rasters holding the clean binary pages (DIBCO convention, ink
black on white). Clean and degraded pools are sampled independently;
nothing ever pairs them by index.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError, DataError
from .imaging import list_rasters, load_image, pad_to_min, save_image, to_grayscale

DEFAULT_TRAIN = ("2009", "2013", "2012H", "2014H")
DEFAULT_EVAL = ("2016H", "2011")


class StaleManifestWarning(UserWarning):
    """A manifest file's recorded checksums no longer match the data."""


@dataclass
class SplitFiles:
    degraded: list[str] = field(default_factory=list)
    clean: list[str] = field(default_factory=list)


@dataclass
class DatasetManifest:
    """Named splits of degraded and clean file lists plus checksums."""

    root: str
    splits: dict[str, SplitFiles] = field(default_factory=dict)
    checksums: dict[str, str] = field(default_factory=dict)

    def save(self, path: str | os.PathLike) -> None:
        payload = {
            "root": self.root,
            "splits": {
                name: {"degraded": files.degraded, "clean": files.clean}
                for name, files in self.splits.items()
            },
            "checksums": self.checksums,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike, verify: bool = True) -> "DatasetManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"manifest not found: {path}") from exc
        manifest = cls(
            root=payload["root"],
            splits={
                name: SplitFiles(degraded=entry["degraded"], clean=entry["clean"])
                for name, entry in payload["splits"].items()
            },
            checksums=payload.get("checksums", {}),
        )
        missing = [p for p in manifest.all_files() if not os.path.exists(p)]
        if missing:
            raise ConfigError(f"manifest references missing files: {missing[:5]}")
        if verify:
            stale = [
                p
                for p, digest in manifest.checksums.items()
                if os.path.exists(p) and _sha256(p) != digest
            ]
            if stale:
                warnings.warn(
                    f"{len(stale)} file(s) changed since the manifest was built, "
                    f"first: {stale[0]}",
                    StaleManifestWarning,
                    stacklevel=2,
                )
        return manifest

    def all_files(self) -> list[str]:
        out: list[str] = []
        for files in self.splits.values():
            out.extend(files.degraded)
            out.extend(files.clean)
        return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(
    root: str | os.PathLike, split_spec: dict[str, list[str]] | None = None
) -> DatasetManifest:
    """Scan ``<root>/<dataset>/{degraded,gt}`` directories into a manifest.

    The default split assigns the 2009, 2013, 2012H, and 2014H sets to
    training and 2016H plus 2011 to evaluation; pass ``split_spec`` as
    ``{"train": [...], "eval": [...]}`` to override. Any missing
    directory raises ConfigError naming the offending path.
    """
    root = str(root)
    spec = split_spec or {"train": list(DEFAULT_TRAIN), "eval": list(DEFAULT_EVAL)}
    manifest = DatasetManifest(root=root)
    for split_name, datasets in spec.items():
        files = SplitFiles()
        for ds in datasets:
            for kind, target in (("degraded", files.degraded), ("gt", files.clean)):
                directory = os.path.join(root, ds, kind)
                if not os.path.isdir(directory):
                    raise ConfigError(f"dataset directory missing: {directory}")
                target.extend(list_rasters(directory))
        manifest.splits[split_name] = files
    if not any(s.degraded or s.clean for s in manifest.splits.values()):
        raise ConfigError(f"no datasets found under {root}")
    for path in manifest.all_files():
        manifest.checksums[path] = _sha256(path)
    return manifest


@lru_cache(maxsize=64)
def _cached_gray(path: str, mtime_ns: int, size: int) -> np.ndarray:
    arr = to_grayscale(load_image(path))
    arr.flags.writeable = False
    return arr


def _load_gray(path: str) -> np.ndarray:
    st = os.stat(path)
    return _cached_gray(path, st.st_mtime_ns, st.st_size)


def _random_patch(
    img: np.ndarray, rng: np.random.Generator, patch_size: int
) -> np.ndarray:
    arr = pad_to_min(img, patch_size, patch_size)
    top = int(rng.integers(arr.shape[0] - patch_size + 1))
    left = int(rng.integers(arr.shape[1] - patch_size + 1))
    crop = arr[top : top + patch_size, left : left + patch_size]
    k = int(rng.integers(4))
    return np.ascontiguousarray(np.rot90(crop, k))


def sample_unpaired_batch(
    manifest: DatasetManifest,
    rng: np.random.Generator,
    batch_size: int,
    patch_size: int,
    split: str = "train",
) -> tuple[np.ndarray, np.ndarray]:
    """Draw clean and degraded patch batches from independent pools.

    Returns two (B, patch, patch) float arrays. Each sample picks a
    clean source and a degraded source independently, random-crops a
    patch from each, and applies a random quarter-turn rotation.
    """
    if split not in manifest.splits:
        raise ConfigError(f"manifest has no split {split!r}")
    files = manifest.splits[split]
    if not files.clean or not files.degraded:
        raise ConfigError(
            f"split {split!r} needs both pools populated: "
            f"{len(files.clean)} clean, {len(files.degraded)} degraded"
        )
    clean_patches = []
    degraded_patches = []
    for _ in range(batch_size):
        c_idx = int(rng.integers(len(files.clean)))
        clean_patches.append(
            _random_patch(_load_gray(files.clean[c_idx]), rng, patch_size)
        )
        d_idx = int(rng.integers(len(files.degraded)))
        degraded_patches.append(
            _random_patch(_load_gray(files.degraded[d_idx]), rng, patch_size)
        )
    return np.stack(clean_patches), np.stack(degraded_patches)


def _smooth_field(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    """Low-frequency field in [0, 1] from a bilinearly upsampled coarse grid."""
    coarse = rng.uniform(0.0, 1.0, size=(cells, cells))
    zoomed = ndi.zoom(coarse, size / cells, order=1, mode="nearest")
    zoomed = zoomed[:size, :size]
    if zoomed.shape != (size, size):
        zoomed = np.pad(
            zoomed,
            ((0, size - zoomed.shape[0]), (0, size - zoomed.shape[1])),
            mode="edge",
        )
    lo, hi = zoomed.min(), zoomed.max()
    if hi - lo < 1e-12:
        return np.zeros_like(zoomed)
    return (zoomed - lo) / (hi - lo)


def _toy_clean_page(rng: np.random.Generator, size: int) -> np.ndarray:
    """Text-like page: rows of dark glyph blocks on a white background."""
    page = np.ones((size, size), dtype=np.float64)
    line_height = 12
    y = int(rng.integers(2, 6))
    while y + line_height < size - 2:
        x = int(rng.integers(2, 8))
        glyph_h = int(rng.integers(5, line_height - 2))
        while x < size - 6:
            glyph_w = int(rng.integers(2, 7))
            if rng.uniform() < 0.8:
                page[y : y + glyph_h, x : x + glyph_w] = 0.0
                # Occasionally notch the glyph so strokes vary in shape.
                if glyph_w >= 4 and glyph_h >= 5 and rng.uniform() < 0.5:
                    page[y + 1 : y + glyph_h - 1, x + 1 : x + glyph_w - 1] = 1.0
            x += glyph_w + int(rng.integers(1, 5))
        y += line_height + int(rng.integers(0, 4))
    return page


def _toy_degrade(
    clean: np.ndarray, rng: np.random.Generator, noise_level: float
) -> np.ndarray:
    """Shading, faded ink, bleed-through, blotches, and pixel noise.

    The fade and shading fields are strong enough that no single global
    threshold separates ink from background, while any local window
    still does.
    """
    if noise_level == 0.0:
        return clean.copy()
    size = clean.shape[0]
    img = clean.copy()
    # Faded ink: ink lifts towards gray in smoothly varying regions.
    fade = 1.0 - 0.65 * noise_level * _smooth_field(rng, size)
    img = 1.0 - fade * (1.0 - img)
    # Bleed-through: the mirrored page shows through faintly.
    bleed = 1.0 - 0.42 * noise_level * (1.0 - np.fliplr(clean))
    img = np.minimum(img, bleed)
    # Dark blotches of arbitrary placement and size.
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.integers(0, size, size=2)
        radius = float(rng.uniform(size * 0.05, size * 0.15))
        depth = float(rng.uniform(0.25, 0.55)) * noise_level
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))
        img = img * (1.0 - depth * blob)
    # Global uneven illumination.
    shading = 1.0 - 0.6 * noise_level * _smooth_field(rng, size)
    img = img * shading
    img = img + rng.normal(0.0, 0.035 * noise_level, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_toy_corpus(
    out_dir: str | os.PathLike,
    n_images: int,
    rng: np.random.Generator,
    image_size: int = 128,
    noise_level: float = 1.0,
    name: str = "toy",
) -> DatasetManifest:
    """Generate a procedural clean/degraded corpus under ``out_dir/name``.

    Ground truth is the clean binary page itself. The same split serves
    as both train and eval so desk-scale runs need only one corpus per
    purpose.
    """
    base = os.path.join(str(out_dir), name)
    degraded_dir = os.path.join(base, "degraded")
    gt_dir = os.path.join(base, "gt")
    try:
        os.makedirs(degraded_dir, exist_ok=True)
        os.makedirs(gt_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create toy corpus under {out_dir}: {exc}") from exc
    for i in range(n_images):
        clean = _toy_clean_page(rng, image_size)
        degraded = _toy_degrade(clean, rng, noise_level)
        save_image(os.path.join(gt_dir, f"{name}_{i:03d}.png"), clean)
        save_image(os.path.join(degraded_dir, f"{name}_{i:03d}.png"), degraded)
    return build_manifest(out_dir, {"train": [name], "eval": [name]})
