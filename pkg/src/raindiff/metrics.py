"""Proxy evaluation metrics: per-image MSE, PSNR, and clean probability.

These stand in for full-reference perceptual and no-reference quality
metrics, which need large pretrained networks. PSNR is defined on the
[-1, 1] value range, so the peak-to-peak range squared is 4:
psnr = 10 * log10(4 / mse), with mse = 0 reported as inf.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .features import FeatureEncoder, PromptPair, prompt_probability

PSNR_RANGE_SQ = 4.0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"mse shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float) -> float:
    if mse_value < 0:
        raise DimensionError(f"mse must be non-negative, got {mse_value}")
    if mse_value == 0.0:
        return float("inf")
    return float(10.0 * np.log10(PSNR_RANGE_SQ / mse_value))


def image_report_rows(names, preds: np.ndarray, gts: np.ndarray,
                      encoder: FeatureEncoder | None = None,
                      prompts: PromptPair | None = None) -> list[dict]:
    """Per-image metric rows sorted by file name (order-independent aggregates)."""
    rows = []
    for name, pred, gt in sorted(zip(names, preds, gts), key=lambda item: item[0]):
        m = mse(pred, gt)
        row = {"file": name, "mse": m, "psnr": psnr(m)}
        if encoder is not None and prompts is not None:
            row["clean_prob"] = prompt_probability(encoder, pred, prompts, "positive")
        rows.append(row)
    return rows


def aggregate_rows(rows: list[dict]) -> dict:
    """Mean and median of every numeric column across per-image rows."""
    out: dict = {}
    for column in rows[0]:
        if column == "file":
            continue
        values = np.asarray([row[column] for row in rows], dtype=np.float64)
        out[f"mean_{column}"] = float(np.mean(values))
        out[f"median_{column}"] = float(np.median(values))
    return out
