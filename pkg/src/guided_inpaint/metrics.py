"""PSNR, SSIM, and mixture-coverage statistics for run evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 99.0


class MetricError(ValueError):
    pass


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0, mask: np.ndarray | None = None) -> float:
    """10 log10(peak^2 / MSE); identical inputs report the 99 dB cap.

    An optional binary mask restricts the MSE to pixels where mask == 1.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.shape)
        total = m.sum()
        if total == 0:
            raise MetricError("mask selects no pixels")
        mse = float((sq * m).sum() / total)
    else:
        mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak**2 / mse), PSNR_CAP_DB)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter2d(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable 'valid' Gaussian filtering of a 2-D array."""
    size = kernel.shape[0]
    H, W = img.shape
    # horizontal pass
    out = np.zeros((H, W - size + 1))
    for i, kv in enumerate(kernel):
        out += kv * img[:, i : i + W - size + 1]
    # vertical pass
    out2 = np.zeros((H - size + 1, W - size + 1))
    for i, kv in enumerate(kernel):
        out2 += kv * out[i : i + H - size + 1, :]
    return out2


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int | None = None,
    K1: float = 0.01,
    K2: float = 0.03,
    peak: float = 2.0,
    mask: np.ndarray | None = None,
) -> float:
    """Mean local SSIM with a Gaussian window (sigma 1.5, size 11 or 7).

    Channels are averaged. An optional mask (1 = include) restricts the mean
    of the local SSIM map; the map is computed on 'valid' windows and the
    mask is cropped to match.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
        if mask is not None and np.asarray(mask).ndim == 2:
            mask = np.asarray(mask)[None]
    C, H, W = a.shape
    if window is None:
        window = 11 if min(H, W) >= 11 else 7
    if window > min(H, W):
        raise MetricError(f"window {window} exceeds image size {H}x{W}")
    kernel = _gaussian_kernel(window, 1.5)
    C1 = (K1 * peak) ** 2
    C2 = (K2 * peak) ** 2

    maps = []
    for c in range(C):
        x, y = a[c], b[c]
        mu_x = _filter2d(x, kernel)
        mu_y = _filter2d(y, kernel)
        xx = _filter2d(x * x, kernel) - mu_x**2
        yy = _filter2d(y * y, kernel) - mu_y**2
        xy = _filter2d(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + C1) * (2 * xy + C2)
        den = (mu_x**2 + mu_y**2 + C1) * (xx + yy + C2)
        maps.append(num / den)
    smap = np.stack(maps)

    if mask is None:
        return float(smap.mean())
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.shape)
    off = (window - 1) // 2
    crop = m[:, off : off + smap.shape[1], off : off + smap.shape[2]]
    total = crop.sum()
    if total == 0:
        raise MetricError("mask selects no pixels")
    return float((smap * crop).sum() / total)


@dataclass(frozen=True)
class MetricReport:
    psnr_full: float
    psnr_unknown: float
    ssim_full: float
    ssim_unknown: float

    def to_dict(self) -> dict:
        return {
            "psnr_full": self.psnr_full,
            "psnr_unknown": self.psnr_unknown,
            "ssim_full": self.ssim_full,
            "ssim_unknown": self.ssim_unknown,
        }


def evaluate_inpainting(result: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> MetricReport:
    """Full-image and unknown-region-only PSNR/SSIM.

    Region-restricted numbers matter because the known region is pasted from
    gt and would inflate full-image scores.
    """
    unknown = 1.0 - np.broadcast_to(np.asarray(mask, dtype=np.float64), np.asarray(gt).shape)
    return MetricReport(
        psnr_full=psnr(result, gt),
        psnr_unknown=psnr(result, gt, mask=unknown),
        ssim_full=ssim(result, gt),
        ssim_unknown=ssim(result, gt, mask=unknown),
    )


def mixture_coverage_stats(samples: np.ndarray, gmm) -> dict:
    """Nearest-component assignment frequencies and per-component mean errors."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise MetricError("empty sample set")
    n = x.shape[0]
    x2d = x.reshape(n, -1)
    means = gmm.flat_means()
    d2 = ((x2d[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    freqs = np.bincount(assign, minlength=gmm.K) / n
    comp_means = np.full_like(means, np.nan)
    mean_err = np.full(gmm.K, np.nan)
    for k in range(gmm.K):
        sel = x2d[assign == k]
        if sel.shape[0]:
            comp_means[k] = sel.mean(axis=0)
            mean_err[k] = np.max(np.abs(comp_means[k] - means[k]))
    return {
        "n": n,
        "frequencies": freqs.tolist(),
        "freq_error": float(np.max(np.abs(freqs - gmm.weights))),
        "component_means": comp_means.tolist(),
        "mean_error": float(np.nanmax(mean_err)),
        "per_component_mean_error": mean_err.tolist(),
    }
