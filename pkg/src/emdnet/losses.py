"""Weighted L1 training objective and the L1 / RMSE / PDAR evaluation metrics.

Images live on [0, 1] with 0 = ink and 1 = background.  A pixel is "black"
when its intensity is at or below ``threshold``.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .errors import BlankImageError, ShapeError
from .ops import weighted_abs_sum
from .tensor import Tensor

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


def black_pixel_stats(img, threshold: float = THRESHOLD) -> tuple[int, float]:
    """Count of ink pixels and their mean intensity."""
    a = np.asarray(img.data if isinstance(img, Tensor) else img, dtype=np.float64)
    mask = a <= threshold
    count = int(mask.sum())
    if count == 0:
        raise BlankImageError(f"image has no pixels <= {threshold}; cannot weight by 1/N_b")
    return count, float(a[mask].mean())


@dataclass
class BatchWeights:
    """Per-example size/thickness weight ``w_st`` and darkness weight ``w_b``."""

    w_st: np.ndarray
    w_b: np.ndarray
    counts: np.ndarray
    means: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        return self.w_st * self.w_b


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max())
    return e / e.sum()


def batch_weights(targets, threshold: float = THRESHOLD) -> BatchWeights:
    stats = [black_pixel_stats(t, threshold) for t in targets]
    counts = np.array([c for c, _ in stats], dtype=np.int64)
    means = np.array([m for _, m in stats], dtype=np.float64)
    return BatchWeights(1.0 / counts, softmax(means), counts, means)


def uniform_weights(n: int) -> BatchWeights:
    """Unweighted baseline: plain per-image L1 sums averaged over the batch."""
    return BatchWeights(np.ones(n), np.full(n, 1.0 / n), np.zeros(n, np.int64), np.zeros(n))


def weighted_l1(pred: Tensor, target, weights: BatchWeights) -> Tensor:
    """sum_i w_st[i] * w_b[i] * sum_pixels |pred_i - target_i|.

    Only ``pred`` is differentiated; target and weights are constants.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"weighted_l1 shape mismatch: {pred.shape} vs {target.shape}")
    if len(weights.w_st) != pred.shape[0]:
        raise ShapeError(f"{len(weights.w_st)} weights for a batch of {pred.shape[0]}")
    return weighted_abs_sum(pred, target, weights.combined)


def _pair(a, b):
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def l1_metric(a, b) -> float:
    """Mean absolute per-pixel difference."""
    a, b = _pair(a, b)
    return float(np.abs(a - b).mean())


def rmse_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(((a - b) ** 2).mean()))


def pdar_metric(a, b, threshold: float = THRESHOLD) -> float:
    """Fraction of pixels whose binarized values disagree."""
    a, b = _pair(a, b)
    return float(np.mean((a <= threshold) != (b <= threshold)))


METRIC_COLUMNS = ("subset", "n_examples", "l1", "rmse", "pdar")


def metrics_csv(rows) -> str:
    """Render metric rows (mappings with METRIC_COLUMNS keys) as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([row["subset"], row["n_examples"]] + [f"{row[k]:.6f}" for k in ("l1", "rmse", "pdar")])
    return buf.getvalue()
