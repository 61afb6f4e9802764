"""Reconstruction quality metrics, the bicubic baseline, and a timing harness."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor_ops


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    wall_ms: float
    runs: int

    def __post_init__(self):
        if self.runs < 1:
            raise MetricError(f"runs must be >= 1, got {self.runs}")
        if self.wall_ms < 0:
            raise MetricError(f"wall_ms must be >= 0, got {self.wall_ms}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) over all channels for [0, 1] images; inf when equal."""
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def db_text(value: float, cap: float = 99.0) -> str:
    """PSNR rendered for tables: the +inf sentinel prints as the cap."""
    return f"{min(value, cap):.2f}"


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation of (H, W, C) with the 1-d window g."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0)
    out = np.einsum("hwck,k->hwc", rows, g)
    cols = np.lib.stride_tricks.sliding_window_view(out, k, axis=1)
    return np.einsum("hwck,k->hwc", cols, g)


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03,
         window: int = 11, sigma: float = 1.5, dynamic_range: float = 1.0) -> float:
    """Single-scale SSIM, Gaussian-weighted, valid positions, channels averaged."""
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < window:
        raise MetricError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    g = gaussian_window(window, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def bt601_luma(img: np.ndarray) -> np.ndarray:
    """Y channel (BT.601 weights), shape (H, W, 1)."""
    if img.shape[-1] != 3:
        raise MetricError(f"luma needs 3 channels, got {img.shape[-1]}")
    w = np.array([0.299, 0.587, 0.114])
    return (img @ w)[..., None]


def bicubic_baseline(lr: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic upsample to round(size * scale), clamped to [0, 1]."""
    if scale < 1.0:
        raise MetricError(f"scale must be >= 1, got {scale}")
    h, w = lr.shape[-3], lr.shape[-2]
    oh = max(int(round(h * scale)), 1)
    ow = max(int(round(w * scale)), 1)
    return np.clip(tensor_ops.bicubic_resize(lr, oh, ow), 0.0, 1.0)


def bench(run_once, runs: int = 100) -> dict:
    """Time run_once: one unmeasured warm-up, then `runs` sequential timings.

    run_once may return a report dict; an "nfe" field from the last run is
    passed through. Returns mean/std/min/max wall milliseconds.
    """
    if runs < 1:
        raise MetricError(f"runs must be >= 1, got {runs}")
    run_once()
    times = []
    nfe = None
    for _ in range(runs):
        t0 = time.perf_counter()
        out = run_once()
        times.append((time.perf_counter() - t0) * 1e3)
        if isinstance(out, dict) and "nfe" in out:
            nfe = out["nfe"]
    arr = np.asarray(times)
    return {"runs": runs, "wall_ms": float(arr.mean()),
            "wall_ms_std": float(arr.std()), "wall_ms_min": float(arr.min()),
            "wall_ms_max": float(arr.max()), "nfe": nfe}
