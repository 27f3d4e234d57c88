"""Image quality metrics: MSE, PSNR and SSIM."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03

CSV_FIELDS = ("image", "method", "mse", "psnr", "ssim")


@dataclass(frozen=True)
class QualityReport:
    image: str
    method: str
    mse: float
    psnr: float
    ssim: float

    def row(self) -> list[str]:
        return [self.image, self.method, f"{self.mse:.17g}", _fmt_psnr(self.psnr), f"{self.ssim:.17g}"]


def _fmt_psnr(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.17g}"


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def gaussian_kernel1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim_map(a, b, peak: float = 1.0, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Local SSIM for every window lying fully inside the image."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {a.shape}")
    if min(a.shape) < size:
        raise ContractError(f"image {a.shape} is smaller than the {size}x{size} SSIM window")
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    g = gaussian_kernel1d(size, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))


def ssim(a, b, peak: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, peak)))


def evaluate(image: str, method: str, estimate, reference) -> QualityReport:
    return QualityReport(image, method, mse(estimate, reference), psnr(estimate, reference), ssim(estimate, reference))


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for rep in reports:
        writer.writerow(rep.row())
    return buf.getvalue()


def reports_from_csv(text: str) -> list[QualityReport]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [QualityReport(r["image"], r["method"], float(r["mse"]), float(r["psnr"]), float(r["ssim"])) for r in rows]
