"""Saliency metrics: KLD, CC, NSS and SIM (MIT benchmark conventions).

KLD is KL(gt || pred) with an epsilon guard; CC and NSS work on raw maps,
KLD and SIM on maps normalized to sum 1.
"""

from __future__ import annotations

import csv
import math

import numpy as np

EPS = 1e-12
FIXATION_PERCENTILE = 99.5


class NormalizationError(ValueError):
    pass


def _as_map(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("saliency maps must be finite")
    if np.any(a < 0):
        raise ValueError("saliency maps must be non-negative")
    return a


def normalize_to_distribution(m) -> np.ndarray:
    a = _as_map(m)
    total = a.sum()
    if total <= 0:
        raise NormalizationError("cannot normalize an all-zero map")
    return a / total


def kld(pred, gt, eps: float = EPS) -> float:
    """KL(gt || pred); lower is better."""
    p = normalize_to_distribution(pred)
    g = normalize_to_distribution(gt)
    return float(np.sum(g * np.log(eps + g / (eps + p))))


def cc(pred, gt) -> float:
    """Pearson correlation over pixels; NaN if either map is constant."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=np.float64).ravel()
    if p.shape != g.shape:
        raise ValueError("maps must have the same shape")
    p = p - p.mean()
    g = g - g.mean()
    denom = math.sqrt(float(p @ p) * float(g @ g))
    if denom == 0:
        return math.nan
    return float(p @ g) / denom


def nss(pred, fixations) -> float:
    """Mean z-scored prediction at fixation cells (population std)."""
    p = np.asarray(pred, dtype=np.float64)
    fx = np.asarray(list(fixations), dtype=int).reshape(-1, 2)
    if len(fx) == 0:
        raise ValueError("NSS needs at least one fixation")
    h, w = p.shape
    if np.any(fx[:, 0] < 0) or np.any(fx[:, 0] >= h) or np.any(fx[:, 1] < 0) or np.any(fx[:, 1] >= w):
        raise ValueError("fixation outside the map")
    sd = p.std()
    if sd == 0:
        return 0.0
    z = (p - p.mean()) / sd
    return float(z[fx[:, 0], fx[:, 1]].mean())


def sim(pred, gt) -> float:
    """Histogram intersection of the two normalized maps."""
    p = normalize_to_distribution(pred)
    g = normalize_to_distribution(gt)
    return float(np.minimum(p, g).sum())


def fixations_from_map(gt, percentile: float = FIXATION_PERCENTILE) -> list[tuple[int, int]]:
    """Cells at or above the given percentile of a continuous ground-truth map."""
    g = np.asarray(gt, dtype=np.float64)
    thr = np.percentile(g, percentile)
    rows, cols = np.nonzero(g >= thr)
    if g.max() > 0:
        keep = g[rows, cols] > 0
        rows, cols = rows[keep], cols[keep]
    return list(zip(rows.tolist(), cols.tolist()))


def read_fixations_csv(path) -> list[tuple[int, int]]:
    with open(path, newline="") as fh:
        return [(int(r["row"]), int(r["col"])) for r in csv.DictReader(fh)]


def all_metrics(pred, gt, fixations=None) -> dict[str, float]:
    if fixations is None:
        fixations = fixations_from_map(gt)
    return {"KLD": kld(pred, gt), "CC": cc(pred, gt), "NSS": nss(pred, fixations), "SIM": sim(pred, gt)}
