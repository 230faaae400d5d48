"""Classification metrics."""

from __future__ import annotations

import numpy as np

__all__ = ["top1", "relative_accuracy"]


def top1(logits, labels) -> float:
    """Fraction of rows whose argmax equals the label; ties go to the lowest class index."""
    scores = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels)
    if scores.ndim != 2 or len(scores) == 0:
        raise ValueError(f"top1 needs a non-empty N x K score matrix, got {scores.shape}")
    return float(np.mean(scores.argmax(axis=1) == labels))


def relative_accuracy(acc_low: float, acc_target: float) -> float:
    """Low-quality accuracy as a fraction of the target-resolution accuracy."""
    if acc_target <= 0:
        raise ZeroDivisionError("relative accuracy is undefined when target accuracy is zero")
    return acc_low / acc_target
