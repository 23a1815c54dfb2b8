"""Quantitative evaluation: test-set error, windowed SSIM over a region of
interest, and the shell/kernel segmentation pipeline with its error metrics.

All volume metrics operate on unscaled attenuation values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_opening, gaussian_filter, gaussian_filter1d, uniform_filter
from scipy.signal import find_peaks
from skimage.segmentation import watershed

from .geometry import Volume

__all__ = [
    "tse",
    "ssim",
    "segment",
    "seg_metrics",
    "SegScores",
    "SegmentationError",
    "BACKGROUND",
    "SHELL",
    "EMPTY_SPACE",
    "KERNEL",
    "CLASS_NAMES",
]

# Segmentation label values.
BACKGROUND = 0
SHELL = 1
EMPTY_SPACE = 2
KERNEL = 3
CLASS_NAMES = {BACKGROUND: "background", SHELL: "shell", EMPTY_SPACE: "empty_space", KERNEL: "kernel"}

# SSIM stability constants (standard defaults).
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
DEFAULT_SSIM_WINDOW = 19


class SegmentationError(RuntimeError):
    """Raised when the histogram does not expose the expected three peaks."""


def _as_array(volume) -> np.ndarray:
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D volume, got shape {data.shape}")
    return data


def tse(recon, hq, roi) -> float:
    """Average half squared error over the region of interest:
    ``sum((hq - recon)^2 within roi) / (2 * n_roi)``.
    """
    recon = _as_array(recon)
    hq = _as_array(hq)
    roi = np.asarray(roi, dtype=bool)
    if recon.shape != hq.shape or roi.shape != hq.shape:
        raise ValueError("recon, reference and roi must have identical shapes")
    n_roi = int(roi.sum())
    if n_roi == 0:
        raise ValueError("empty region of interest")
    diff = hq[roi] - recon[roi]
    return float(diff @ diff) / (2.0 * n_roi)


def _ssim_map_2d(img1, img2, win: int, c1: float, c2: float) -> np.ndarray:
    """Full local SSIM map of one slice (uniform window, sample covariance)."""
    np_win = win * win
    cov_norm = np_win / (np_win - 1.0)
    u1 = uniform_filter(img1, win)
    u2 = uniform_filter(img2, win)
    u11 = uniform_filter(img1 * img1, win)
    u22 = uniform_filter(img2 * img2, win)
    u12 = uniform_filter(img1 * img2, win)
    v1 = cov_norm * (u11 - u1 * u1)
    v2 = cov_norm * (u22 - u2 * u2)
    v12 = cov_norm * (u12 - u1 * u2)
    return ((2.0 * u1 * u2 + c1) * (2.0 * v12 + c2)) / (
        (u1 * u1 + u2 * u2 + c1) * (v1 + v2 + c2)
    )


def ssim(recon, hq, roi, win_size: int = DEFAULT_SSIM_WINDOW, data_range: float | None = None) -> float:
    """Mean local SSIM between recon and reference over the region of interest.

    Local SSIM is computed per axial (z) slice with a uniform square window
    of ``win_size`` pixels and the standard stability constants
    (K1 = 0.01, K2 = 0.03); the dynamic range defaults to max - min of the
    reference.  Window centers closer than win_size // 2 to a slice border
    are excluded; the returned value averages the map over the remaining ROI
    voxels.
    """
    recon = _as_array(recon)
    hq = _as_array(hq)
    roi = np.asarray(roi, dtype=bool)
    if recon.shape != hq.shape or roi.shape != hq.shape:
        raise ValueError("recon, reference and roi must have identical shapes")
    if win_size % 2 != 1 or win_size < 3:
        raise ValueError("win_size must be an odd integer >= 3")
    if win_size > min(hq.shape[1], hq.shape[2]):
        raise ValueError(
            f"win_size={win_size} exceeds the slice extent {hq.shape[1:]};"
            " pass a smaller window"
        )
    if data_range is None:
        data_range = float(hq.max() - hq.min())
        if data_range == 0:
            raise ValueError("reference has zero dynamic range; pass data_range explicitly")
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2

    half = win_size // 2
    valid = np.zeros(hq.shape[1:], dtype=bool)
    valid[half : hq.shape[1] - half, half : hq.shape[2] - half] = True

    total = 0.0
    count = 0
    for z in range(hq.shape[0]):
        sel = roi[z] & valid
        if not sel.any():
            continue
        smap = _ssim_map_2d(recon[z], hq[z], win_size, c1, c2)
        total += float(smap[sel].sum())
        count += int(sel.sum())
    if count == 0:
        raise ValueError("region of interest has no valid window centers")
    return total / count


def _histogram_peaks(values: np.ndarray, n_bins: int):
    counts, edges = np.histogram(values, bins=n_bins)
    smoothed = gaussian_filter1d(counts.astype(np.float64), sigma=2.0)
    # pad so maxima at the first/last bin are detectable
    padded = np.concatenate([[0.0], smoothed, [0.0]])
    peaks, props = find_peaks(padded, prominence=0.0)
    peaks -= 1
    centers = 0.5 * (edges[:-1] + edges[1:])
    order = np.argsort(props["prominences"], kind="stable")[::-1]
    return [float(centers[peaks[i]]) for i in order], counts


def segment(recon, smoothing_sigma: float = 1.0, n_bins: int = 256) -> np.ndarray:
    """Label a reconstruction into background / shell / empty space / kernel.

    Pipeline: (1) Gaussian smoothing; (2) histogram peak detection for the
    background, kernel and shell intensity modes; (3) threshold masks at the
    midpoints between adjacent peaks, where the kernel mask is cleaned with a
    small binary opening (partial-volume voxels at smoothed boundaries fall
    into the kernel intensity band as thin shells, which the opening
    removes); (4) watershed on the shell mask, seeded from the volume border
    (outside) and the kernel voxels (inside), giving the total volume
    enclosed by the shell; (5) empty space = enclosed volume minus kernel and
    shell.  Raises :class:`SegmentationError` when fewer than three histogram
    peaks are found.
    """
    data = _as_array(recon)
    smoothed = gaussian_filter(data, sigma=smoothing_sigma)
    peaks, _counts = _histogram_peaks(smoothed.reshape(-1), n_bins)
    if len(peaks) < 3:
        raise SegmentationError(
            f"expected 3 histogram peaks (background/kernel/shell), found {len(peaks)} "
            f"at {peaks}; histogram range [{smoothed.min():.4g}, {smoothed.max():.4g}]"
        )
    background_level, kernel_level, shell_level = sorted(peaks[:3])
    t_background = 0.5 * (background_level + kernel_level)
    t_shell = 0.5 * (kernel_level + shell_level)

    shell_mask = smoothed >= t_shell
    kernel_band = (smoothed >= t_background) & ~shell_mask
    kernel_mask = binary_opening(kernel_band, iterations=2)
    if not kernel_mask.any():
        kernel_mask = kernel_band

    markers = np.zeros(data.shape, dtype=np.int32)
    border = np.zeros(data.shape, dtype=bool)
    for axis in range(3):
        sl = [slice(None)] * 3
        for edge in (0, -1):
            sl[axis] = edge
            border[tuple(sl)] = True
    markers[border & (smoothed < t_background)] = 1
    markers[kernel_mask] = 2
    flooded = watershed(shell_mask.astype(np.uint8), markers)

    inside = (flooded == 2) & ~shell_mask
    labels = np.full(data.shape, BACKGROUND, dtype=np.uint8)
    labels[shell_mask] = SHELL
    labels[inside & ~kernel_mask] = EMPTY_SPACE
    labels[inside & kernel_mask] = KERNEL
    return labels


@dataclass(frozen=True)
class SegScores:
    """Segmentation error triple for one class."""

    volume_error: float   # (|S_rec| - |S_ref|) / |S_ref|, signed
    mislabeled: float     # |S_rec - S_ref| / |S_ref| (symmetric difference)
    dice: float           # 2 |S_rec & S_ref| / (|S_rec| + |S_ref|)


def seg_metrics(seg, seg_gold, classes=(SHELL, EMPTY_SPACE, KERNEL)) -> dict:
    """Per-class volume error, mislabeled fraction and Dice coefficient.

    Raises if a requested class is empty in the gold segmentation.
    """
    seg = np.asarray(seg)
    seg_gold = np.asarray(seg_gold)
    if seg.shape != seg_gold.shape:
        raise ValueError("segmentations must have identical shapes")
    scores = {}
    for cls in classes:
        rec = seg == cls
        gold = seg_gold == cls
        n_gold = int(gold.sum())
        if n_gold == 0:
            raise ValueError(f"gold segmentation has no voxels of class {CLASS_NAMES.get(cls, cls)}")
        n_rec = int(rec.sum())
        inter = int((rec & gold).sum())
        mislabeled = int((rec ^ gold).sum())
        scores[cls] = SegScores(
            volume_error=(n_rec - n_gold) / n_gold,
            mislabeled=mislabeled / n_gold,
            dice=2.0 * inter / (n_rec + n_gold) if (n_rec + n_gold) else 1.0,
        )
    return scores
