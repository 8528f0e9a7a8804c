"""PSNR, SSIM, intensity histograms, and the dataset benchmark runner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bitdepth import ImageBuffer, dequantize_mig, dequantize_zp, list_images, load_image, quantize
from .errors import ShapeMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PEAK = 255.0


def _check_pair(a: ImageBuffer, ref: ImageBuffer, op: str) -> None:
    if (a.width, a.height, a.channels) != (ref.width, ref.height, ref.channels):
        raise ShapeMismatchError(
            f"{op}: image dimensions differ: {a.width}x{a.height}x{a.channels} "
            f"vs {ref.width}x{ref.height}x{ref.channels}"
        )
    if a.bit_depth != 8 or ref.bit_depth != 8:
        raise ValueError(f"{op} compares 8-bit images, got {a.bit_depth} and {ref.bit_depth}")


def psnr(a: ImageBuffer, ref: ImageBuffer) -> float:
    """10 log10(255^2 / MSE) over all pixels and channels; inf when identical."""
    _check_pair(a, ref, "psnr")
    diff = a.pixels.astype(np.float64) - ref.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with an outer-product kernel."""
    t = sliding_window_view(img, len(k1d), axis=1) @ k1d
    return sliding_window_view(t, len(k1d), axis=0) @ k1d


def ssim(a: ImageBuffer, ref: ImageBuffer) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
    dynamic range 255; computed per channel, then averaged."""
    _check_pair(a, ref, "ssim")
    if a.width < SSIM_WINDOW or a.height < SSIM_WINDOW:
        raise ShapeMismatchError(
            f"ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.width}x{a.height}"
        )
    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    k = _gaussian_kernel()
    xa = a.array().astype(np.float64)
    xr = ref.array().astype(np.float64)
    scores = []
    for ch in range(a.channels):
        x, y = xa[:, :, ch], xr[:, :, ch]
        mu_x = _filter_valid(x, k)
        mu_y = _filter_valid(y, k)
        var_x = _filter_valid(x * x, k) - mu_x * mu_x
        var_y = _filter_valid(y * y, k) - mu_y * mu_y
        cov = _filter_valid(x * y, k) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def intensity_histogram(img: ImageBuffer) -> np.ndarray:
    """Counts per 8-bit level (256 bins over the raw stored values)."""
    return np.bincount(img.pixels, minlength=256)[:256]


def write_histogram_csv(hist: np.ndarray, path) -> None:
    lines = ["level,count"] + [f"{level},{int(count)}" for level, count in enumerate(hist)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---- dataset benchmark --------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-image and mean scores for one method on one bit path."""

    method: str
    bits: int
    per_image: list = field(default_factory=list)  # (name, psnr, ssim)
    failures: list = field(default_factory=list)  # (name, error message)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([p for _, p, _ in self.per_image])) if self.per_image else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s for _, _, s in self.per_image])) if self.per_image else math.nan


def run_benchmark(dataset_dir, methods, bits: int, checkpoint=None, gen_cfg=None,
                  tile: int = 64, overlap: int = 8) -> list[EvalReport]:
    """Quantize every dataset image to ``bits``, expand it back with each
    method, and score against the original. Per-image failures are recorded
    and the run continues; images are processed in sorted-name order."""
    from .model import dequantize_model, init_generator  # deferred: heavy import
    from .autodiff import Rng
    from .params import load_checkpoint

    model_params = None
    if "model" in methods:
        if checkpoint is None or gen_cfg is None:
            raise ValueError("the 'model' method needs a checkpoint path and generator config")
        model_params = init_generator(Rng(0), gen_cfg)
        store = model_params.store()
        store.load_values(load_checkpoint(checkpoint))

    reports = {m: EvalReport(m, bits) for m in methods}
    for path in list_images(dataset_dir):
        original = load_image(path)
        low = quantize(original, bits)
        for method in methods:
            try:
                if method == "zp":
                    restored = dequantize_zp(low, 8)
                elif method == "mig":
                    restored = dequantize_mig(low, 8)
                elif method == "model":
                    restored = dequantize_model(low, model_params, gen_cfg, tile, overlap)
                else:
                    raise ValueError(f"unknown method {method!r}")
                reports[method].per_image.append(
                    (path.name, psnr(restored, original), ssim(restored, original))
                )
            except Exception as exc:  # record, keep scoring the rest
                reports[method].failures.append((path.name, f"{type(exc).__name__}: {exc}"))
    return [reports[m] for m in methods]


def format_report(reports: list[EvalReport]) -> str:
    lines = [f"{'method':<10} {'bits':>4} {'images':>6} {'mean PSNR':>10} {'mean SSIM':>10}"]
    for r in reports:
        lines.append(
            f"{r.method:<10} {r.bits:>4} {len(r.per_image):>6} "
            f"{r.mean_psnr:>10.4f} {r.mean_ssim:>10.4f}"
        )
        for name, err in r.failures:
            lines.append(f"  ! {name}: {err}")
    return "\n".join(lines)


def write_report_csv(reports: list[EvalReport], path) -> None:
    lines = ["filename,method,bits,psnr,ssim"]
    for r in reports:
        for name, p, s in r.per_image:
            lines.append(f"{name},{r.method},{r.bits},{p:.6f},{s:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
