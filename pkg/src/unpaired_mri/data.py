"""Synthetic complex-valued phantoms and paired / partial / disjoint splits.

A phantom is a random overlay of ellipses with a smooth low-order polynomial
phase, normalized to unit peak magnitude.  A split bundles M undersampled
inputs (each with its own fresh sampling mask) with a label set realizing
one of three regimes:

* ``paired``   - one label per input, aligned by index;
* ``partial``  - labels are ground truths of a strict subset of the inputs;
* ``disjoint`` - labels share no phantom with any input.

Ground truths are retained on every input item for evaluation only; they are
never exposed as labels outside the paired/partial construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .archive import ArchiveError, load_archive, require, save_archive
from .kspace import (
    CoilSensitivities,
    KSpaceData,
    SamplingMask,
    apply_forward,
    generate_coil_maps,
    generate_poisson_mask,
    zero_filled_recon,
)

REGIMES = ("paired", "partial", "disjoint")
LABEL_MODES = ("complex", "magnitude")

WINDOW_PERCENTILE = 99.0


@dataclass
class Phantom:
    image: torch.Tensor  # (H, W) complex, max |image| = 1
    seed: int
    n_ellipses: int


@dataclass
class SplitItem:
    """One undersampled input with its hidden ground truth."""

    kspace: KSpaceData
    x_zf: torch.Tensor
    truth: torch.Tensor  # evaluation only, never a training label
    seed: int


@dataclass
class DatasetSplit:
    items: list[SplitItem]
    labels: list[torch.Tensor]
    label_seeds: list[int]
    regime: str
    label_mode: str
    acceleration: float
    coils: CoilSensitivities
    seed: int
    noise_sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return len(self.items)

    @property
    def N(self) -> int:
        return len(self.labels)

    @property
    def input_seeds(self) -> list[int]:
        return [it.seed for it in self.items]


def make_phantom(H: int, W: int, seed: int) -> Phantom:
    """Random ellipse-overlay phantom, deterministic given ``seed``.

    4-12 overlapping ellipses with intensities in [0.2, 1] are summed, the
    magnitude is normalized to peak 1, and a smooth random quadratic phase
    map is applied.
    """
    if H < 16 or W < 16:
        raise ValueError("phantoms need H, W >= 16")
    rng = np.random.default_rng(seed)
    n_ellipses = int(rng.integers(4, 13))
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    mag = np.zeros((H, W))
    for _ in range(n_ellipses):
        cy = rng.uniform(0.2, 0.8) * H
        cx = rng.uniform(0.2, 0.8) * W
        ay = rng.uniform(0.08, 0.35) * H / 2
        ax = rng.uniform(0.08, 0.35) * W / 2
        theta = rng.uniform(0, np.pi)
        amp = rng.uniform(0.2, 1.0)
        ct, st = np.cos(theta), np.sin(theta)
        u = (ct * (xx - cx) + st * (yy - cy)) / ax
        v = (-st * (xx - cx) + ct * (yy - cy)) / ay
        mag += amp * (u * u + v * v <= 1.0)
    mag /= mag.max()

    X = (xx - (W - 1) / 2) / ((W - 1) / 2)
    Y = (yy - (H - 1) / 2) / ((H - 1) / 2)
    c = rng.uniform(-1.0, 1.0, size=5)
    phase = (np.pi / 3.0) * (c[0] * X + c[1] * Y + c[2] * X * Y + c[3] * X * X + c[4] * Y * Y)
    image = mag * np.exp(1j * phase)
    return Phantom(image=torch.from_numpy(image), seed=seed, n_ellipses=n_ellipses)


def window_image(x: torch.Tensor, percentile: float = WINDOW_PERCENTILE) -> torch.Tensor:
    """Brightness windowing: clip magnitudes at the given percentile, then
    rescale to [0, 1].  Monotone in pixel magnitude; phase is preserved for
    complex inputs.  Applied identically to labels and evaluation references.
    """
    m = x.abs() if x.is_complex() else x
    t = float(np.percentile(m.detach().cpu().numpy(), percentile))
    if t <= 0.0:
        return x.clone()
    if x.is_complex():
        scale = torch.clamp(m, max=t) / (t * torch.clamp(m, min=torch.finfo(m.dtype).tiny))
        return x * scale
    return torch.clamp(m, max=t) / t


def _input_seed(base: int, i: int) -> int:
    return base * 1_000_000 + i


def build_split(
    M: int,
    N: int,
    regime: str,
    label_mode: str = "complex",
    acceleration: float = 3.0,
    coils: int = 1,
    seed: int = 0,
    H: int = 64,
    W: int = 64,
    calib_size: tuple[int, int] | None = None,
    noise_sigma: float = 0.0,
) -> DatasetSplit:
    """Generate a training split of M undersampled inputs and N labels."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    if label_mode not in LABEL_MODES:
        raise ValueError(f"label_mode must be one of {LABEL_MODES}, got {label_mode!r}")
    if regime == "paired" and N != M:
        raise ValueError("paired regime requires N == M")
    if regime == "partial" and not (0 < N < M):
        raise ValueError("partial regime requires 0 < N < M")
    if regime == "disjoint" and N < 1:
        raise ValueError("disjoint regime requires N >= 1")
    if M < 1:
        raise ValueError("need at least one input")

    coil_maps = generate_coil_maps(H, W, coils)
    coil_maps = CoilSensitivities(maps=coil_maps.maps.to(torch.complex64))
    rng = np.random.default_rng(seed)

    input_seeds = [_input_seed(seed, i) for i in range(M)]
    if regime == "paired":
        label_seeds = list(input_seeds)
    elif regime == "partial":
        idx = sorted(rng.choice(M, size=N, replace=False).tolist())
        label_seeds = [input_seeds[i] for i in idx]
    else:
        label_seeds = [_input_seed(seed, M + j) for j in range(N)]

    items = []
    for s in input_seeds:
        truth = make_phantom(H, W, s).image.to(torch.complex64)
        mask = generate_poisson_mask(H, W, acceleration, calib_size, seed=s)
        k = apply_forward(truth, coil_maps, mask, noise_sigma, rng=np.random.default_rng(s + 1))
        items.append(SplitItem(kspace=k, x_zf=zero_filled_recon(k), truth=truth, seed=s))

    truth_by_seed = {it.seed: it.truth for it in items}
    labels = []
    for s in label_seeds:
        img = truth_by_seed[s] if s in truth_by_seed else make_phantom(H, W, s).image.to(torch.complex64)
        win = window_image(img)
        labels.append(win.abs().to(torch.float32) if label_mode == "magnitude" else win)

    split = DatasetSplit(
        items=items,
        labels=labels,
        label_seeds=label_seeds,
        regime=regime,
        label_mode=label_mode,
        acceleration=float(acceleration),
        coils=coil_maps,
        seed=seed,
        noise_sigma=float(noise_sigma),
        meta={"H": H, "W": W, "n_coils": coils},
    )
    validate_split(split)
    return split


def validate_split(split: DatasetSplit) -> None:
    """Re-check the regime and per-item invariants (also run on load)."""
    if split.regime not in REGIMES:
        raise ValueError(f"unknown regime {split.regime!r}")
    in_seeds = split.input_seeds
    lab_seeds = split.label_seeds
    if split.regime == "paired":
        if lab_seeds != in_seeds:
            raise ValueError("paired split: labels are not index-aligned with inputs")
    elif split.regime == "partial":
        if not set(lab_seeds) < set(in_seeds) or not (0 < len(lab_seeds) < len(in_seeds)):
            raise ValueError("partial split: label set must be a strict subset of input truths")
    else:
        if set(lab_seeds) & set(in_seeds):
            raise ValueError("disjoint split: a label shares a phantom with an input")
    for j, lab in enumerate(split.labels):
        if split.label_mode == "magnitude":
            if lab.is_complex() or bool((lab < 0).any()):
                raise ValueError(f"label {j}: magnitude labels must be real nonnegative")
        elif not lab.is_complex():
            raise ValueError(f"label {j}: complex label expected")
    split.coils.validate()
    for i, it in enumerate(split.items):
        try:
            it.kspace.validate()
        except ValueError as exc:
            raise ValueError(f"input {i}: {exc}") from exc


def save_split(split: DatasetSplit, path) -> None:
    arrays = {"coils": split.coils.maps.numpy().astype(np.complex64)}
    for i, it in enumerate(split.items):
        arrays[f"input{i}/samples"] = it.kspace.samples.numpy().astype(np.complex64)
        arrays[f"input{i}/mask"] = it.kspace.mask.mask.numpy().astype(np.float32)
        arrays[f"input{i}/x_zf"] = it.x_zf.numpy().astype(np.complex64)
        arrays[f"input{i}/truth"] = it.truth.numpy().astype(np.complex64)
    for j, lab in enumerate(split.labels):
        arrays[f"label{j}/image"] = lab.numpy().astype(
            np.float32 if split.label_mode == "magnitude" else np.complex64
        )
    meta = {
        "kind": "dataset_split",
        "regime": split.regime,
        "label_mode": split.label_mode,
        "acceleration": split.acceleration,
        "noise_sigma": split.noise_sigma,
        "seed": split.seed,
        "M": split.M,
        "N": split.N,
        "input_seeds": split.input_seeds,
        "label_seeds": split.label_seeds,
        "calib_size": list(split.items[0].kspace.mask.calib_size),
        **split.meta,
    }
    save_archive(path, arrays, meta)


def load_split(path) -> DatasetSplit:
    arrays, meta = load_archive(path)
    if meta.get("kind") != "dataset_split":
        raise ArchiveError(f"{path} is not a dataset split archive")
    coils = CoilSensitivities(maps=torch.from_numpy(require(arrays, "coils", path)))
    calib = tuple(meta["calib_size"])
    items = []
    for i in range(meta["M"]):
        samples = torch.from_numpy(require(arrays, f"input{i}/samples", path))
        mask = SamplingMask(
            mask=torch.from_numpy(require(arrays, f"input{i}/mask", path)),
            acceleration=meta["acceleration"],
            calib_size=calib,
        )
        items.append(
            SplitItem(
                kspace=KSpaceData(samples=samples, mask=mask, coils=coils),
                x_zf=torch.from_numpy(require(arrays, f"input{i}/x_zf", path)),
                truth=torch.from_numpy(require(arrays, f"input{i}/truth", path)),
                seed=meta["input_seeds"][i],
            )
        )
    labels = [torch.from_numpy(require(arrays, f"label{j}/image", path)) for j in range(meta["N"])]
    split = DatasetSplit(
        items=items,
        labels=labels,
        label_seeds=list(meta["label_seeds"]),
        regime=meta["regime"],
        label_mode=meta["label_mode"],
        acceleration=meta["acceleration"],
        coils=coils,
        seed=meta["seed"],
        noise_sigma=meta.get("noise_sigma", 0.0),
        meta={k: meta[k] for k in ("H", "W", "n_coils") if k in meta},
    )
    validate_split(split)
    return split
