"""Differentiable architectures: plain and unrolled generators with embedded
data consistency, and the scalar-scoring critic.

Images cross the network boundary as two real channels (real, imaginary);
the conversion is a lossless bijection.  Generators take the zero-filled
input plus the measurement context ``(samples, mask, coils)`` and return a
complex image of the same size.  Batch normalization follows every conv
layer except each subnetwork's last one and is applied after residual
summations; the critic uses no normalization so its per-sample input
gradients stay uncoupled across the batch (required by the gradient
penalty).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .kspace import KSpaceData, hard_dc_op, soft_dc_op

LEAKY_SLOPE = 0.2


def complex_to_channels(x: torch.Tensor) -> torch.Tensor:
    """(..., H, W) complex -> (..., 2, H, W) real; channel 0 = real part."""
    return torch.stack((x.real, x.imag), dim=-3)


def channels_to_complex(ch: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`complex_to_channels`; bit-exact round trip."""
    return torch.complex(ch[..., 0, :, :], ch[..., 1, :, :])


def magnitude_view(x: torch.Tensor) -> torch.Tensor:
    """Pointwise |x| as a single-channel image (..., 1, H, W)."""
    return x.abs().unsqueeze(-3)


@dataclass
class GeneratorArch:
    kind: str  # "plain" or "unrolled"
    n_residual_blocks: int = 5
    n_tail_convs: int = 3
    unroll_iterations: int = 3
    blocks_per_iteration: int = 2
    feature_width: int = 32

    def validate(self) -> None:
        if self.kind not in ("plain", "unrolled"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.kind == "unrolled" and self.unroll_iterations < 1:
            raise ValueError("unrolled generator needs at least one iteration")


@dataclass
class CriticArch:
    n_layers: int = 7
    base_features: int = 4
    input_channels: int = 2
    late_widths: tuple[int, int] = (64, 64)


class ResidualBlock(nn.Module):
    """conv-BN-ReLU-conv, skip add, then BN and ReLU after the summation."""

    def __init__(self, width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(width, width, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(width)

    def forward(self, x):
        y = x + self.conv2(torch.relu(self.bn1(self.conv1(x))))
        return torch.relu(self.bn2(y))


def _refinement_net(width: int, n_blocks: int, n_tail_convs: int) -> nn.Sequential:
    layers: list[nn.Module] = [nn.Conv2d(2, width, 3, padding=1), nn.BatchNorm2d(width), nn.ReLU()]
    layers += [ResidualBlock(width) for _ in range(n_blocks)]
    for _ in range(max(n_tail_convs - 1, 0)):
        layers += [nn.Conv2d(width, width, 3, padding=1), nn.BatchNorm2d(width), nn.ReLU()]
    layers.append(nn.Conv2d(width, 2, 3, padding=1))
    return nn.Sequential(*layers)


class PlainGenerator(nn.Module):
    """Residual CNN refiner with a hard data-consistency final layer."""

    def __init__(self, arch: GeneratorArch | None = None):
        super().__init__()
        arch = arch or GeneratorArch(kind="plain")
        arch.validate()
        if arch.kind != "plain":
            raise ValueError("PlainGenerator requires arch.kind == 'plain'")
        self.arch = arch
        self.net = _refinement_net(arch.feature_width, arch.n_residual_blocks, arch.n_tail_convs)

    @property
    def kind(self) -> str:
        return "plain"

    def body(self, x_zf: torch.Tensor) -> torch.Tensor:
        """The learned refinement before DC (complex in, complex out)."""
        return x_zf + channels_to_complex(self.net(complex_to_channels(x_zf)))

    def forward(self, x_zf, samples, mask, coils):
        mask = mask.to(x_zf.real.dtype)
        return hard_dc_op(self.body(x_zf), samples, mask, coils)


class UnrolledGenerator(nn.Module):
    """K alternating soft-DC / refinement iterations, one learnable step
    size per iteration (initialized to -1, the descent sign for the
    data-consistency gradient as written)."""

    MU_INIT = -1.0

    def __init__(self, arch: GeneratorArch | None = None):
        super().__init__()
        arch = arch or GeneratorArch(kind="unrolled")
        arch.validate()
        if arch.kind != "unrolled":
            raise ValueError("UnrolledGenerator requires arch.kind == 'unrolled'")
        self.arch = arch
        self.iterations = nn.ModuleList(
            _refinement_net(arch.feature_width, arch.blocks_per_iteration, 1)
            for _ in range(arch.unroll_iterations)
        )
        self.mu = nn.Parameter(torch.full((arch.unroll_iterations,), self.MU_INIT))

    @property
    def kind(self) -> str:
        return "unrolled"

    def forward(self, x_zf, samples, mask, coils):
        mask = mask.to(x_zf.real.dtype)
        x = x_zf
        for k, net in enumerate(self.iterations):
            v = soft_dc_op(x, x_zf, mask, coils, self.mu[k])
            x = v + channels_to_complex(net(complex_to_channels(v)))
        return x


def build_generator(arch: GeneratorArch) -> nn.Module:
    arch.validate()
    return PlainGenerator(arch) if arch.kind == "plain" else UnrolledGenerator(arch)


class Critic(nn.Module):
    """7-layer plain CNN scoring an image batch with one real scalar each.

    The first four layers use stride 2 and double the feature count from
    ``base_features``; leaky ReLU follows every layer but the last, whose
    single-channel output is averaged over space.
    """

    def __init__(self, arch: CriticArch | None = None):
        super().__init__()
        self.arch = arch or CriticArch()
        a = self.arch
        widths = [a.base_features * (2**i) for i in range(4)] + list(a.late_widths)
        layers: list[nn.Module] = []
        in_ch = a.input_channels
        for i, w in enumerate(widths):
            layers.append(nn.Conv2d(in_ch, w, 3, stride=2 if i < 4 else 1, padding=1))
            layers.append(nn.LeakyReLU(LEAKY_SLOPE))
            in_ch = w
        layers.append(nn.Conv2d(in_ch, 1, 3, stride=1, padding=1))
        assert len([l for l in layers if isinstance(l, nn.Conv2d)]) == a.n_layers
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) -> (B,) scores; (C, H, W) -> scalar."""
        squeeze = image.ndim == 3
        if squeeze:
            image = image.unsqueeze(0)
        if image.shape[1] != self.arch.input_channels:
            raise ValueError(
                f"critic expects {self.arch.input_channels} channels, got {image.shape[1]}"
            )
        out = self.net(image).mean(dim=(1, 2, 3))
        return out[0] if squeeze else out


# single-image convenience surface over KSpaceData -------------------------


def _unbatched(g: nn.Module, x_zf: torch.Tensor, k: KSpaceData) -> torch.Tensor:
    coils = k.coils.maps.to(x_zf.dtype)
    return g(x_zf.unsqueeze(0), k.samples.to(x_zf.dtype).unsqueeze(0), k.mask.mask, coils)[0]


def plain_generator_forward(g: PlainGenerator, x_zf, k: KSpaceData) -> torch.Tensor:
    if g.kind != "plain":
        raise ValueError("generator is not plain")
    return _unbatched(g, torch.as_tensor(x_zf), k)


def unrolled_generator_forward(g: UnrolledGenerator, x_zf, k: KSpaceData) -> torch.Tensor:
    if g.kind != "unrolled":
        raise ValueError("generator is not unrolled")
    return _unbatched(g, torch.as_tensor(x_zf), k)


def generator_forward(g: nn.Module, x_zf, k: KSpaceData) -> torch.Tensor:
    return _unbatched(g, torch.as_tensor(x_zf), k)


def critic_forward(d: Critic, image) -> float:
    with torch.no_grad():
        return float(d(torch.as_tensor(image)))
