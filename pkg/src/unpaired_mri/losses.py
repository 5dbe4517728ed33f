"""Training objectives: Wasserstein critic/generator losses with gradient
penalty, the hybrid pixel-supervised generator loss with its weight
schedule, and the cross-entropy / least-squares baselines.

Score conventions: the critic loss is mean(fake) - mean(real) + penalty, so
minimizing it widens the real-fake score gap; the generator counters with
-mean(fake).  All reductions are means over batch and pixels so the default
penalty weight and schedule transfer across image sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

FAMILIES = ("wgan_gp", "egan", "lsgan", "l1_only")


@dataclass
class LambdaSchedule:
    """Piecewise-linear pixel-loss weight: flat at 1, ramp down, flat at
    ``final_lambda``.  Non-increasing by construction."""

    pure_l1_steps: int = 500
    ramp_end_step: int = 1000
    final_lambda: float = 0.99

    def validate(self) -> None:
        if not 0 <= self.final_lambda <= 1:
            raise ValueError("final_lambda must lie in [0, 1]")
        if self.ramp_end_step < self.pure_l1_steps:
            raise ValueError("ramp_end_step must be >= pure_l1_steps")


def lambda_at(schedule: LambdaSchedule, step: int) -> float:
    if step <= schedule.pure_l1_steps:
        return 1.0
    if step >= schedule.ramp_end_step:
        return schedule.final_lambda
    span = schedule.ramp_end_step - schedule.pure_l1_steps
    frac = (step - schedule.pure_l1_steps) / span
    return 1.0 + frac * (schedule.final_lambda - 1.0)


@dataclass
class ObjectiveConfig:
    """Which adversarial family to train with and its knobs.

    ``lambda_schedule=None`` means no pixel-wise supervision (pure
    adversarial, unpaired); a schedule enables the hybrid objective and
    requires paired labels.  ``l1_only`` never evaluates the critic.
    """

    family: str = "wgan_gp"
    eta: float = 10.0
    lambda_schedule: LambdaSchedule | None = None
    critic_steps_per_gen_step: int = 5

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "wgan_gp" and self.eta <= 0:
            raise ValueError("wgan_gp requires eta > 0")
        if self.critic_steps_per_gen_step < 1:
            raise ValueError("critic_steps_per_gen_step must be >= 1")
        if self.lambda_schedule is not None:
            self.lambda_schedule.validate()

    @property
    def uses_critic(self) -> bool:
        return self.family != "l1_only"

    def log_lambda(self, step: int) -> float:
        if self.family == "l1_only":
            return 1.0
        if self.lambda_schedule is None:
            return 0.0
        return lambda_at(self.lambda_schedule, step)


def gradient_penalty(critic, fake_batch, real_batch, alphas, eta: float) -> torch.Tensor:
    """eta * mean_i (|grad_xhat D(xhat_i)| - 1)^2 at per-sample interpolates
    xhat_i = alpha_i * fake_i + (1 - alpha_i) * real_i.

    The norm is the per-sample Euclidean norm over all channels and pixels;
    the result stays differentiable w.r.t. the critic parameters.
    """
    if fake_batch.shape != real_batch.shape:
        raise ValueError("fake and real batches must share a shape")
    a = torch.as_tensor(alphas, dtype=fake_batch.dtype)
    a = a.reshape(-1, *([1] * (fake_batch.ndim - 1)))
    x_hat = (a * fake_batch + (1.0 - a) * real_batch).detach().requires_grad_(True)
    scores = critic(x_hat)
    grads, = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    norms = grads.flatten(1).norm(dim=1)
    return eta * ((norms - 1.0) ** 2).mean()


def critic_loss(fake_scores, real_scores, gp=0.0) -> torch.Tensor:
    """mean(fake) - mean(real) + gp."""
    fake_scores = torch.as_tensor(fake_scores)
    real_scores = torch.as_tensor(real_scores)
    if fake_scores.numel() == 0 or real_scores.numel() == 0:
        raise ValueError("empty score batch")
    if fake_scores.shape != real_scores.shape:
        raise ValueError("score vectors must have the same length")
    return fake_scores.mean() - real_scores.mean() + gp


def generator_loss_wgan(fake_scores) -> torch.Tensor:
    """-mean(fake)."""
    fake_scores = torch.as_tensor(fake_scores)
    if fake_scores.numel() == 0:
        raise ValueError("empty score batch")
    return -fake_scores.mean()


def l1_image_loss(gen_output: torch.Tensor, label: torch.Tensor) -> torch.Tensor:
    """Complex l1 on the two-channel representation, averaged per pixel."""
    if gen_output.shape != label.shape:
        raise ValueError(
            f"shape mismatch: output {tuple(gen_output.shape)} vs label {tuple(label.shape)}"
        )
    diff = gen_output - label
    if diff.is_complex():
        return (diff.real.abs() + diff.imag.abs()).mean()
    return diff.abs().mean()


def hybrid_generator_loss(fake_scores, gen_output, label, lam: float) -> torch.Tensor:
    """-(1-lambda) * mean(fake) + lambda * l1(label, output).

    At lambda = 1 the critic term is dropped entirely (pure pixel loss);
    ``fake_scores`` may then be None.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    pixel = l1_image_loss(gen_output, label)
    if lam == 1.0:
        return pixel
    return (1.0 - lam) * generator_loss_wgan(fake_scores) + lam * pixel


def egan_generator_loss(fake_scores) -> torch.Tensor:
    """Non-saturating cross-entropy generator loss: -E[log sig(fake)]."""
    return F.softplus(-torch.as_tensor(fake_scores)).mean()


def egan_losses(fake_scores, real_scores) -> tuple[torch.Tensor, torch.Tensor]:
    """Sigmoid cross-entropy objectives (non-saturating generator form).

    Critic: -E[log sig(real)] - E[log(1 - sig(fake))];
    generator: -E[log sig(fake)].  Scores are pre-activation logits.
    """
    fake_scores = torch.as_tensor(fake_scores)
    real_scores = torch.as_tensor(real_scores)
    d = F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()
    return d, egan_generator_loss(fake_scores)


def lsgan_generator_loss(fake_scores) -> torch.Tensor:
    """Least-squares generator loss pushing fake scores to 1."""
    return 0.5 * ((torch.as_tensor(fake_scores) - 1.0) ** 2).mean()


def lsgan_losses(fake_scores, real_scores) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares objectives: real -> 1 and fake -> 0 for the critic,
    fake -> 1 for the generator."""
    fake_scores = torch.as_tensor(fake_scores)
    real_scores = torch.as_tensor(real_scores)
    d = 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores**2).mean()
    return d, lsgan_generator_loss(fake_scores)
