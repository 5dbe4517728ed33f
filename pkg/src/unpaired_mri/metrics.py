"""Reconstruction quality metrics and the center-crop evaluation protocol.

PSNR is computed on complex values by default: the peak is the maximum
squared magnitude of the reference and the denominator is the mean squared
complex error.  SSIM uses a 7x7 uniform window on magnitude images.  The
evaluation protocol windows both estimate and reference with the same rule
used for training labels, center-crops both, then scores.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.ndimage import uniform_filter

from .data import DatasetSplit, window_image

# Fractional crop mirroring a 272x216 region of a 320x256 image.
CROP_FRAC_H = 0.85
CROP_FRAC_W = 0.84375


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def psnr(reference, estimate) -> float:
    """10 log10( max_j |y_j|^2 / mean_j |y_j - x_j|^2 ), in dB.

    Works on complex or real images; complex errors use the complex modulus.
    Returns ``math.inf`` when the error is exactly zero; an identically zero
    reference is rejected.
    """
    y = _to_numpy(reference)
    x = _to_numpy(estimate)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: reference {y.shape} vs estimate {x.shape}")
    peak = float(np.max(np.abs(y)) ** 2)
    if peak == 0.0:
        raise ValueError("reference is identically zero")
    mse = float(np.mean(np.abs(y.astype(np.complex128) - x.astype(np.complex128)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak / mse)


def ssim(reference, estimate, data_range: float | None = None, win_size: int = 7) -> float:
    """Mean local SSIM over a uniform window, on magnitude images.

    Complex inputs are magnitude-converted.  Stabilization constants are
    C1 = (0.01 L)^2 and C2 = (0.03 L)^2 with L = ``data_range`` (defaults to
    the reference's maximum magnitude).  Symmetric under argument swap for a
    fixed ``data_range``.
    """
    y = np.abs(_to_numpy(reference)).astype(np.float64)
    x = np.abs(_to_numpy(estimate)).astype(np.float64)
    if y.shape != x.shape:
        raise ValueError(f"shape mismatch: reference {y.shape} vs estimate {x.shape}")
    if win_size > min(y.shape):
        raise ValueError(f"window {win_size} larger than image {y.shape}")
    L = float(np.max(y)) if data_range is None else float(data_range)
    c1 = (0.01 * L) ** 2
    c2 = (0.03 * L) ** 2

    mu_y = uniform_filter(y, win_size)
    mu_x = uniform_filter(x, win_size)
    var_y = uniform_filter(y * y, win_size) - mu_y * mu_y
    var_x = uniform_filter(x * x, win_size) - mu_x * mu_x
    cov = uniform_filter(y * x, win_size) - mu_y * mu_x

    num = (2 * mu_y * mu_x + c1) * (2 * cov + c2)
    den = (mu_y**2 + mu_x**2 + c1) * (var_y + var_x + c2)
    smap = num / den
    pad = win_size // 2
    return float(np.mean(smap[pad : y.shape[0] - pad, pad : y.shape[1] - pad]))


def center_crop(image, crop_h: int, crop_w: int):
    """Centered crop; offsets are floor((size - crop)/2)."""
    H, W = image.shape[-2], image.shape[-1]
    if crop_h > H or crop_w > W:
        raise ValueError(f"crop {crop_h}x{crop_w} exceeds image {H}x{W}")
    top = (H - crop_h) // 2
    left = (W - crop_w) // 2
    return image[..., top : top + crop_h, left : left + crop_w]


def center_crop_fraction(image, frac_h: float = CROP_FRAC_H, frac_w: float = CROP_FRAC_W):
    H, W = image.shape[-2], image.shape[-1]
    return center_crop(image, int(round(H * frac_h)), int(round(W * frac_w)))


def high_freq_energy_fraction(image, radius_frac: float = 0.25) -> float:
    """Fraction of spectral energy outside a central low-frequency disc.

    Used as a sharpness proxy when comparing reconstructions.
    """
    x = _to_numpy(image).astype(np.complex128)
    k = np.fft.fftshift(np.fft.fft2(x, norm="ortho"))
    H, W = k.shape[-2], k.shape[-1]
    yy, xx = np.mgrid[0:H, 0:W]
    rho = np.hypot((yy - (H - 1) / 2) / (H / 2), (xx - (W - 1) / 2) / (W / 2))
    total = float(np.sum(np.abs(k) ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(np.abs(k[rho > radius_frac]) ** 2) / total)


# ---------------------------------------------------------------------------
# whole-split evaluation
# ---------------------------------------------------------------------------


@dataclass
class ImageScore:
    id: int
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    per_image: list[ImageScore]
    psnr_mode: str = "complex"
    ssim_mode: str = "magnitude"
    meta: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.per_image]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image]))

    @property
    def count(self) -> int:
        return len(self.per_image)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(
                {
                    "psnr_mode": self.psnr_mode,
                    "ssim_mode": self.ssim_mode,
                    "aggregate": {
                        "mean_psnr": self.mean_psnr,
                        "mean_ssim": self.mean_ssim,
                        "count": self.count,
                    },
                    "per_image": [{"id": s.id, "psnr": s.psnr, "ssim": s.ssim} for s in self.per_image],
                    **self.meta,
                },
                fh,
                indent=2,
            )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "psnr", "ssim"])
            for s in self.per_image:
                w.writerow([s.id, s.psnr, s.ssim])
            w.writerow(["mean", self.mean_psnr, self.mean_ssim])


def evaluate_model(
    recon_fn,
    split: DatasetSplit,
    crop: bool = True,
    psnr_mode: str = "complex",
) -> EvalReport:
    """Score a reconstruction function on every item of a held-out split.

    ``recon_fn`` maps a :class:`~unpaired_mri.data.SplitItem` to a complex
    (H, W) estimate.  Estimate and hidden ground truth are windowed and
    center-cropped identically before scoring; references come only from the
    hidden truths, never from the label set.
    """
    if psnr_mode not in ("complex", "magnitude"):
        raise ValueError(f"unknown psnr_mode {psnr_mode!r}")
    scores = []
    for i, item in enumerate(split.items):
        est = window_image(torch.as_tensor(recon_fn(item)))
        ref = window_image(item.truth)
        if crop:
            est = center_crop_fraction(est)
            ref = center_crop_fraction(ref)
        if psnr_mode == "magnitude":
            p = psnr(ref.abs(), est.abs())
        else:
            p = psnr(ref, est)
        s = ssim(ref, est, data_range=1.0)
        scores.append(ImageScore(id=i, psnr=p, ssim=s))
    return EvalReport(per_image=scores, psnr_mode=psnr_mode, ssim_mode="magnitude")
