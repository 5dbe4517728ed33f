"""MRI acquisition physics: Fourier operators, undersampling masks, coil
sensitivities, the multi-coil forward model and both data-consistency steps.

Conventions used throughout the package:

* images are complex tensors of shape ``(..., H, W)``;
* multi-coil k-space is ``(..., c, H, W)`` with coil maps ``(c, H, W)``;
* the 2D DFT is unitary (``norm="ortho"``) in both directions, so forward
  model, adjoint and DC operators share one normalization and preserve norms;
* k-space arrays and masks are stored *centered* (low frequencies at the
  array center); ``fft2c``/``ifft2c`` include the corresponding shift.

All functions are pure and differentiable through torch autograd, so the
same operators serve physics tests, dataset generation and network layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

__all__ = [
    "SamplingMask",
    "CoilSensitivities",
    "KSpaceData",
    "fft2c",
    "ifft2c",
    "apply_forward",
    "zero_filled_recon",
    "hard_dc",
    "soft_dc",
    "forward_op",
    "adjoint_op",
    "hard_dc_kspace",
    "hard_dc_op",
    "soft_dc_op",
    "generate_poisson_mask",
    "generate_coil_maps",
]


def fft2c(x: torch.Tensor) -> torch.Tensor:
    """Unitary 2D DFT over the last two axes, output centered in k-space."""
    return torch.fft.fftshift(torch.fft.fft2(x, norm="ortho"), dim=(-2, -1))


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c` (exact up to floating point)."""
    return torch.fft.ifft2(torch.fft.ifftshift(k, dim=(-2, -1)), norm="ortho")


def _as_complex(x, dtype=None) -> torch.Tensor:
    t = torch.as_tensor(x)
    if not t.is_complex():
        t = t.to(torch.complex128 if t.dtype == torch.float64 else torch.complex64)
    return t.to(dtype) if dtype is not None else t


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class SamplingMask:
    """Binary k-space sampling pattern with a fully sampled central block.

    ``mask`` is an (H, W) array of exactly 0/1 in the centered k-space
    layout; ``acceleration`` is the nominal undersampling factor the pattern
    was generated for (realized density may deviate up to 20% relative).
    """

    mask: torch.Tensor
    acceleration: float
    calib_size: tuple[int, int]

    def validate(self) -> None:
        m = self.mask
        if m.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {tuple(m.shape)}")
        vals = torch.unique(m)
        if not bool(torch.all((vals == 0) | (vals == 1))):
            raise ValueError("mask entries must be exactly 0 or 1")
        ch, cw = self.calib_size
        H, W = m.shape
        calib = m[(H - ch) // 2 : (H - ch) // 2 + ch, (W - cw) // 2 : (W - cw) // 2 + cw]
        if not bool(torch.all(calib == 1)):
            raise ValueError("central calibration region must be fully sampled")
        density = float(m.to(torch.float64).mean())
        target = 1.0 / self.acceleration
        if abs(density - target) > 0.2 * target:
            raise ValueError(
                f"mask density {density:.4f} deviates from 1/acceleration "
                f"{target:.4f} by more than 20%"
            )


@dataclass
class CoilSensitivities:
    """Complex coil maps (c, H, W) with pointwise sum_i s_i s_i^H = 1."""

    maps: torch.Tensor

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    def validate(self, atol: float = 1e-6) -> None:
        if self.maps.ndim != 3 or self.maps.shape[0] < 1:
            raise ValueError(f"coil maps must be (c, H, W) with c >= 1, got {tuple(self.maps.shape)}")
        ssq = (self.maps * self.maps.conj()).real.sum(dim=0)
        if float((ssq - 1.0).abs().max()) > atol:
            raise ValueError("coil maps are not normalized: sum_i |s_i|^2 != 1 pointwise")


@dataclass
class KSpaceData:
    """Masked multi-coil measurements with their mask and coil maps.

    ``samples`` is (c, H, W) complex and is exactly zero wherever the mask
    is zero.
    """

    samples: torch.Tensor
    mask: SamplingMask
    coils: CoilSensitivities

    def validate(self) -> None:
        c, H, W = self.samples.shape
        if self.mask.mask.shape != (H, W):
            raise ValueError("mask shape does not match samples")
        if self.coils.maps.shape != (c, H, W):
            raise ValueError("coil map shape does not match samples")
        off = self.samples * (1.0 - self.mask.mask)
        if float(off.abs().max()) != 0.0:
            raise ValueError("samples must be exactly zero at unsampled locations")


# ---------------------------------------------------------------------------
# operators (batched: image (..., H, W), k-space (..., c, H, W))
# ---------------------------------------------------------------------------


def forward_op(x: torch.Tensor, coils: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked multi-coil encoding: k_i = mask * FFT2(x * s_i)."""
    return mask * fft2c(x.unsqueeze(-3) * coils)


def adjoint_op(k: torch.Tensor, coils: torch.Tensor) -> torch.Tensor:
    """Adjoint of :func:`forward_op` applied to already-masked data."""
    return (ifft2c(k) * coils.conj()).sum(dim=-3)


def hard_dc_kspace(
    x: torch.Tensor, samples: torch.Tensor, mask: torch.Tensor, coils: torch.Tensor
) -> torch.Tensor:
    """Per-coil k-space after measurement replacement:
    Y_i + (1 - mask) * FFT2(x * s_i).  Restricted to sampled locations this
    equals the measurements exactly."""
    return samples + (1.0 - mask) * fft2c(x.unsqueeze(-3) * coils)


def hard_dc_op(
    x: torch.Tensor, samples: torch.Tensor, mask: torch.Tensor, coils: torch.Tensor
) -> torch.Tensor:
    """Replace sampled k-space locations of x with the measurements.

    Per coil: IFFT2(Y_i + (1 - mask) * FFT2(x * s_i)), then the coil combine
    with s_i^H.  Sampled entries come from the data, unsampled from x.
    """
    return (ifft2c(hard_dc_kspace(x, samples, mask, coils)) * coils.conj()).sum(dim=-3)


def soft_dc_op(
    x: torch.Tensor,
    x_zf: torch.Tensor,
    mask: torch.Tensor,
    coils: torch.Tensor,
    mu: torch.Tensor | float,
) -> torch.Tensor:
    """One gradient-type step toward data consistency.

    Returns ``x + mu * (sum_i IFFT2(mask * FFT2(x * s_i)) * s_i^H - x_zf)``.
    The bracket is the gradient of the least-squares data term, so a descent
    step corresponds to negative ``mu``; the sign is left to the caller
    because the step size is typically learned.
    """
    normal = adjoint_op(mask * fft2c(x.unsqueeze(-3) * coils), coils)
    return x + mu * (normal - x_zf)


# ---------------------------------------------------------------------------
# single-image surface over KSpaceData
# ---------------------------------------------------------------------------


def apply_forward(
    x,
    coils: CoilSensitivities,
    mask: SamplingMask,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
) -> KSpaceData:
    """Simulate the acquisition of image ``x``: per-coil unitary FFT, optional
    circular complex Gaussian noise of std ``noise_sigma``, then masking."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    x = _as_complex(x)
    if x.shape != coils.maps.shape[-2:]:
        raise ValueError(f"image shape {tuple(x.shape)} does not match coil maps {tuple(coils.maps.shape)}")
    if x.shape != mask.mask.shape:
        raise ValueError(f"image shape {tuple(x.shape)} does not match mask {tuple(mask.mask.shape)}")
    coil_maps = coils.maps.to(x.dtype)
    k = fft2c(x.unsqueeze(-3) * coil_maps)
    if noise_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        shape = tuple(k.shape)
        u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        k = k + torch.from_numpy(u).to(k.dtype) * (noise_sigma / np.sqrt(2.0))
    samples = mask.mask.to(k.real.dtype) * k
    return KSpaceData(samples=samples, mask=mask, coils=coils)


def zero_filled_recon(k: KSpaceData) -> torch.Tensor:
    """Adjoint reconstruction: x_zf = sum_i IFFT2(Y_i) * s_i^H."""
    return adjoint_op(k.samples, k.coils.maps.to(k.samples.dtype))


def hard_dc(x, k: KSpaceData) -> torch.Tensor:
    x = _as_complex(x)
    return hard_dc_op(x, k.samples.to(x.dtype), k.mask.mask.to(x.real.dtype), k.coils.maps.to(x.dtype))


def soft_dc(x, x_zf, k: KSpaceData, mu: float) -> torch.Tensor:
    x = _as_complex(x)
    return soft_dc_op(x, _as_complex(x_zf, x.dtype), k.mask.mask.to(x.real.dtype), k.coils.maps.to(x.dtype), mu)


# ---------------------------------------------------------------------------
# mask generation
# ---------------------------------------------------------------------------

# Exclusion radius grows linearly with normalized k-space radius; the offset
# keeps the region just outside the calibration block densely sampled.
_RADIUS_OFFSET = 0.1


def _dart_throw(H: int, W: int, r_base: float, calib: tuple[int, int], seed: int) -> np.ndarray:
    """Variable-density Poisson-disc pattern by sequential dart throwing.

    Grid points are visited in a seeded random order; an accepted point
    blocks a disc of radius ``r_base * (offset + rho)`` around itself, where
    rho is its normalized distance from the k-space center.  Calibration
    points are pre-accepted so density feathers smoothly away from the
    fully sampled center.
    """
    mask = np.zeros((H, W), dtype=bool)
    ch, cw = calib
    r0, c0 = (H - ch) // 2, (W - cw) // 2
    mask[r0 : r0 + ch, c0 : c0 + cw] = True
    if r_base <= 0.0:
        return np.ones((H, W), dtype=bool)

    yy, xx = np.mgrid[0:H, 0:W]
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    rho = np.hypot((yy - cy) / max(cy, 1.0), (xx - cx) / max(cx, 1.0)) / np.sqrt(2.0)
    radius = r_base * (_RADIUS_OFFSET + rho)

    blocked = np.zeros((H, W), dtype=bool)
    calib_pts = np.argwhere(mask)
    rng = np.random.default_rng(seed)
    order = rng.permutation(H * W)

    def stamp(i: int, j: int) -> None:
        r = radius[i, j]
        ri = int(np.ceil(r))
        if ri <= 0:
            return
        ilo, ihi = max(0, i - ri), min(H, i + ri + 1)
        jlo, jhi = max(0, j - ri), min(W, j + ri + 1)
        di = np.arange(ilo, ihi) - i
        dj = np.arange(jlo, jhi) - j
        disc = di[:, None] ** 2 + dj[None, :] ** 2 <= r * r
        blocked[ilo:ihi, jlo:jhi] |= disc

    for i, j in calib_pts:
        stamp(i, j)
    blocked[r0 : r0 + ch, c0 : c0 + cw] = False  # calib itself is kept

    for flat in order:
        i, j = divmod(int(flat), W)
        if mask[i, j] or blocked[i, j]:
            continue
        mask[i, j] = True
        stamp(i, j)
    return mask


@lru_cache(maxsize=64)
def _solve_r_base(H: int, W: int, acceleration: float, calib: tuple[int, int]) -> float:
    """Bisect the base exclusion radius to hit density 1/acceleration."""
    target = 1.0 / acceleration
    calib_frac = (calib[0] * calib[1]) / (H * W)
    if calib_frac > target * 1.2:
        raise ValueError(
            f"acceleration {acceleration} infeasible: calibration region alone "
            f"has density {calib_frac:.4f} > 1.2/acceleration"
        )
    if target >= 1.0:
        return 0.0
    lo, hi = 0.0, float(max(H, W))
    best = hi
    for _ in range(26):
        mid = 0.5 * (lo + hi)
        density = _dart_throw(H, W, mid, calib, seed=0).mean()
        if abs(density - target) <= 0.02 * target:
            return mid
        if density > target:
            lo = mid
        else:
            hi = mid
        best = mid
    return best


def generate_poisson_mask(
    H: int,
    W: int,
    acceleration: float,
    calib_size: tuple[int, int] | None = None,
    seed: int = 0,
) -> SamplingMask:
    """Variable-density Poisson-disc sampling mask, deterministic given seed.

    Density decreases with distance from the k-space center and the central
    ``calib_size`` block is fully sampled.  ``acceleration`` is the nominal
    undersampling factor; acceleration 1 yields a full mask.
    """
    if acceleration < 1.0:
        raise ValueError("acceleration must be >= 1")
    if calib_size is None:
        calib_size = (max(H // 8, 2), max(W // 8, 2))
    ch, cw = calib_size
    if ch > H or cw > W or ch < 1 or cw < 1:
        raise ValueError(f"calibration region {calib_size} does not fit a {H}x{W} grid")
    r_base = _solve_r_base(H, W, float(acceleration), (ch, cw))
    m = _dart_throw(H, W, r_base, (ch, cw), seed=seed)
    out = SamplingMask(
        mask=torch.from_numpy(m.astype(np.float32)),
        acceleration=float(acceleration),
        calib_size=(ch, cw),
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# coil map simulation
# ---------------------------------------------------------------------------


def generate_coil_maps(H: int, W: int, c: int) -> CoilSensitivities:
    """Smooth analytic coil maps: Gaussian magnitude profiles centered on a
    ring of border locations, each with a mild coil-specific linear phase,
    jointly normalized so that sum_i |s_i|^2 = 1 at every pixel.

    For c = 1 the normalized map is identically one.
    """
    if c < 1:
        raise ValueError("need at least one coil")
    if c == 1:
        return CoilSensitivities(maps=torch.ones((1, H, W), dtype=torch.complex128))
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    ry, rx = 0.55 * H, 0.55 * W
    width = 0.5 * min(H, W)
    maps = np.empty((c, H, W), dtype=np.complex128)
    for i in range(c):
        theta = 2.0 * np.pi * i / c
        y0, x0 = cy + ry * np.sin(theta), cx + rx * np.cos(theta)
        mag = np.exp(-((yy - y0) ** 2 + (xx - x0) ** 2) / (2.0 * width**2))
        # gentle linear phase pointing away from the coil center
        phase = 0.5 * np.pi * (np.sin(theta) * (yy - cy) / H + np.cos(theta) * (xx - cx) / W)
        maps[i] = mag * np.exp(1j * phase)
    norm = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    maps /= norm
    out = CoilSensitivities(maps=torch.from_numpy(maps))
    out.validate()
    return out
