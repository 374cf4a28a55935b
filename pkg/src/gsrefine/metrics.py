"""Evaluation metrics: depth correlation, PSNR, and mask IoU."""

from __future__ import annotations

import numpy as np

from .train import pearson

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray, mask=None, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio for [0, 1] images; capped when identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if not m.any():
            return cap
        diff = (a - b)[m]
    else:
        diff = a - b
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return cap
    return min(cap, float(10.0 * np.log10(1.0 / mse)))


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks (1.0 when both empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def depth_pearson(rendered_depth, reference_depth, valid=None):
    """Per-view depth correlation; (value, zero_variance_flag)."""
    rd = np.asarray(rendered_depth, dtype=np.float64).reshape(-1)
    gd = np.asarray(reference_depth, dtype=np.float64).reshape(-1)
    if valid is None:
        sel = np.isfinite(rd) & np.isfinite(gd)
    else:
        sel = np.asarray(valid, dtype=bool).reshape(-1) & np.isfinite(rd) & np.isfinite(gd)
    if np.count_nonzero(sel) < 2:
        return 0.0, True
    return pearson(rd[sel], gd[sel])
