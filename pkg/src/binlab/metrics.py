"""DIBCO-style evaluation metrics and dataset-level aggregation.

Implements the four competition measures: F-measure, pseudo F-measure
(recall against the skeletonized ground truth), PSNR, and the distance
reciprocal distortion (DRD). All functions take {0, 1} ink maps with
1 = ink, except psnr which also accepts float images in [0, 1].

Skeletons use Guo-Hall style two-subiteration morphological thinning on
the 8-connected neighborhood (``skimage.morphology.thin``); competition
tooling differs slightly in its thinning variant, so small deviations in
pseudo F-measure against other toolchains are expected.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from skimage.morphology import thin

from .errors import DataError
from .imaging import load_binary, validate_binary

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
_PSNR_MSE_FLOOR = 1e-10


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = validate_binary(pred).astype(np.uint8)
    g = validate_binary(gt).astype(np.uint8)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    return p, g


def f_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Harmonic mean of ink precision and recall, in percent.

    Zero denominators (no predicted ink, no true ink, or no overlap)
    yield 0.
    """
    p, g = _check_pair(pred, gt)
    tp = float(np.count_nonzero((p == 1) & (g == 1)))
    fp = float(np.count_nonzero((p == 1) & (g == 0)))
    fn = float(np.count_nonzero((p == 0) & (g == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * recall / (precision + recall)


def skeletonize_ink(gt: np.ndarray) -> np.ndarray:
    """Morphological thinning of the ink set down to its skeleton."""
    g = validate_binary(gt)
    return thin(g.astype(bool)).astype(np.uint8)


def pseudo_f_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """F-measure whose recall is taken against the skeletonized ground truth."""
    p, g = _check_pair(pred, gt)
    skel = skeletonize_ink(g)
    tp = float(np.count_nonzero((p == 1) & (g == 1)))
    fp = float(np.count_nonzero((p == 1) & (g == 0)))
    skel_tp = float(np.count_nonzero((p == 1) & (skel == 1)))
    skel_total = float(np.count_nonzero(skel == 1))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    p_recall = skel_tp / skel_total if skel_total > 0 else 0.0
    if precision + p_recall == 0.0:
        return 0.0
    return 100.0 * 2.0 * precision * p_recall / (precision + p_recall)


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over [0, 1] data, capped at 100."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for arr in (a, b):
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("psnr inputs must lie in [0, 1]")
    mse = float(np.mean((a - b) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse))


def drd_weights() -> np.ndarray:
    """The 5x5 normalized reciprocal-distance weight matrix (center 0)."""
    w = np.zeros((5, 5), dtype=np.float64)
    for i in range(5):
        for j in range(5):
            if i == 2 and j == 2:
                continue
            w[i, j] = 1.0 / np.sqrt((i - 2) ** 2 + (j - 2) ** 2)
    return w / w.sum()


def nubn(gt: np.ndarray, block_size: int = 8) -> int:
    """Count non-uniform blocks of the ground truth (full blocks only)."""
    g = validate_binary(gt)
    h, w = g.shape
    count = 0
    for r in range(0, h - block_size + 1, block_size):
        for c in range(0, w - block_size + 1, block_size):
            s = int(g[r : r + block_size, c : c + block_size].sum())
            if 0 < s < block_size * block_size:
                count += 1
    return count


def drd(pred: np.ndarray, gt: np.ndarray) -> float:
    """Distance reciprocal distortion of the flipped pixels.

    Each flipped pixel contributes the weighted count of ground-truth
    neighbors (5x5 reciprocal-distance weights) that disagree with the
    predicted value; neighbors outside the image contribute nothing.
    The sum is normalized by the non-uniform 8x8 block count of the
    ground truth; with no flipped pixels the result is 0, and a fully
    uniform ground truth (NUBN 0) leaves the sum unnormalized.
    """
    p, g = _check_pair(pred, gt)
    flipped = p != g
    if not flipped.any():
        return 0.0
    w = drd_weights()
    gf = g.astype(np.float64)
    # |gt - pred_k| is gt where pred_k = 0 and (1 - gt) where pred_k = 1,
    # so two zero-padded correlations cover every flipped pixel.
    against_zero = ndi.correlate(gf, w, mode="constant", cval=0.0)
    against_one = ndi.correlate(1.0 - gf, w, mode="constant", cval=0.0)
    total = float(against_zero[flipped & (p == 0)].sum())
    total += float(against_one[flipped & (p == 1)].sum())
    blocks = nubn(g)
    return total / blocks if blocks > 0 else total


@dataclass(frozen=True)
class ImageMetrics:
    name: str
    f: float
    f_ps: float
    psnr: float
    drd: float


@dataclass
class MetricsReport:
    """Per-image metric rows plus their unweighted means."""

    rows: list[ImageMetrics] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    def means(self) -> ImageMetrics:
        if not self.rows:
            raise DataError("metrics report has no evaluated images")
        return ImageMetrics(
            name="mean",
            f=float(np.mean([r.f for r in self.rows])),
            f_ps=float(np.mean([r.f_ps for r in self.rows])),
            psnr=float(np.mean([r.psnr for r in self.rows])),
            drd=float(np.mean([r.drd for r in self.rows])),
        )


def compute_all(pred: np.ndarray, gt: np.ndarray, name: str = "") -> ImageMetrics:
    return ImageMetrics(
        name=name,
        f=f_measure(pred, gt),
        f_ps=pseudo_f_measure(pred, gt),
        psnr=psnr(pred, gt),
        drd=drd(pred, gt),
    )


def evaluate_dataset(pred_dir: str | os.PathLike, gt_dir: str | os.PathLike) -> MetricsReport:
    """Score filename-matched prediction/ground-truth rasters.

    Files match when their stems are equal. Predictions without a
    ground-truth partner are listed as missing, warned about, and
    excluded from the means.
    """
    from .imaging import list_rasters

    preds = {os.path.splitext(os.path.basename(p))[0]: p for p in list_rasters(pred_dir)}
    gts = {os.path.splitext(os.path.basename(p))[0]: p for p in list_rasters(gt_dir)}
    report = MetricsReport()
    for stem in sorted(preds):
        if stem not in gts:
            logger.warning("no ground truth for prediction %r, excluded from means", stem)
            report.missing.append(stem)
            continue
        pred = load_binary(preds[stem])
        gt = load_binary(gts[stem])
        report.rows.append(compute_all(pred, gt, name=stem))
    if not report.rows:
        raise DataError(
            f"no filename-matched pairs between {pred_dir!s} and {gt_dir!s}"
        )
    return report


METRIC_COLUMNS = ("F-Measure", "F_PS", "PSNR", "DRD")


def format_table(report: MetricsReport) -> str:
    """Human-readable aligned table, one row per image plus the mean row."""
    rows = list(report.rows) + [report.means()]
    name_width = max(len("image"), max(len(r.name) for r in rows))
    header = f"{'image':<{name_width}}  " + "  ".join(f"{c:>9}" for c in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.name:<{name_width}}  "
            f"{r.f:>9.2f}  {r.f_ps:>9.2f}  {r.psnr:>9.2f}  {r.drd:>9.2f}"
        )
    return "\n".join(lines) + "\n"


def write_csv(report: MetricsReport, path: str | os.PathLike) -> None:
    """Machine-readable comma-delimited metrics with a header row."""
    rows = list(report.rows) + [report.means()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("image,f,f_ps,psnr,drd\n")
        for r in rows:
            fh.write(f"{r.name},{r.f:.6f},{r.f_ps:.6f},{r.psnr:.6f},{r.drd:.6f}\n")
