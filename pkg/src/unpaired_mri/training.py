"""Alternating critic/generator SGD with unpaired batch sampling, Adam
state, checkpointing and an append-only metric log.

Every generator step owns a derived RNG stream keyed by (seed, step), so
runs are reproducible and checkpoint resume continues the exact stream.
Adversarial families run ``critic_steps_per_gen_step`` critic updates per
generator update; the pure pixel-loss family never touches the critic.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .archive import ArchiveError, load_archive, save_archive
from .data import DatasetSplit
from .losses import (
    ObjectiveConfig,
    critic_loss,
    egan_generator_loss,
    egan_losses,
    generator_loss_wgan,
    gradient_penalty,
    l1_image_loss,
    lsgan_generator_loss,
    lsgan_losses,
)
from .metrics import evaluate_model
from .networks import (
    Critic,
    CriticArch,
    GeneratorArch,
    build_generator,
    complex_to_channels,
    magnitude_view,
)

LOG_COLUMNS = ("step", "lambda", "loss_d", "loss_g", "gp", "eval_psnr", "eval_ssim")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries a diagnostic snapshot."""

    def __init__(self, step: int, components: dict, grad_norms: dict):
        self.step = step
        self.components = components
        self.grad_norms = grad_norms
        super().__init__(
            f"non-finite loss at step {step}: {components} (grad norms {grad_norms})"
        )


@dataclass
class TrainerConfig:
    total_gen_steps: int
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    batch_size: int = 4
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0
    eval_every: int = 250

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.total_gen_steps < 0:
            raise ValueError("total_gen_steps must be nonnegative")
        self.objective.validate()


@dataclass
class Batch:
    x_zf: torch.Tensor  # (B, H, W) complex
    samples: torch.Tensor  # (B, c, H, W) complex
    masks: torch.Tensor  # (B, 1, H, W) real
    labels: torch.Tensor  # (B, H, W) complex or real


@dataclass
class TrainState:
    step: int
    generator: torch.nn.Module
    critic: Critic | None
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer | None
    config: TrainerConfig
    label_mode: str
    coils: torch.Tensor
    history: list[dict] = field(default_factory=list)


def sample_unpaired_batch(
    split: DatasetSplit, b: int, rng: np.random.Generator, paired: bool = False
) -> Batch:
    """Draw b inputs uniformly and, independently, b labels uniformly (with
    replacement; small sets are never an error).  ``paired=True`` instead
    aligns labels with inputs by index and requires a paired split."""
    if split.M == 0 or split.N == 0:
        raise ValueError("split has no inputs or no labels")
    idx = rng.integers(0, split.M, size=b)
    if paired:
        if split.regime != "paired":
            raise ValueError("paired sampling requires a paired split")
        lab_idx = idx
    else:
        lab_idx = rng.integers(0, split.N, size=b)
    items = [split.items[i] for i in idx]
    return Batch(
        x_zf=torch.stack([it.x_zf for it in items]),
        samples=torch.stack([it.kspace.samples for it in items]),
        masks=torch.stack([it.kspace.mask.mask for it in items]).unsqueeze(1),
        labels=torch.stack([split.labels[j] for j in lab_idx]),
    )


def _critic_input(images: torch.Tensor, label_mode: str) -> torch.Tensor:
    """Complex images enter the critic as (B, 2, H, W); magnitude labels or
    magnitude-converted generator outputs as (B, 1, H, W)."""
    if images.is_complex():
        return magnitude_view(images) if label_mode == "magnitude" else complex_to_channels(images)
    return images.unsqueeze(1)


def _check_finite(step: int, components: dict, models: dict) -> None:
    if all(math.isfinite(v) for v in components.values()):
        return
    norms = {}
    for name, model in models.items():
        if model is None:
            continue
        total = 0.0
        for p in model.parameters():
            if p.grad is not None:
                total += float(p.grad.detach().norm()) ** 2
        norms[name] = math.sqrt(total)
    raise TrainingDiverged(step, components, norms)


def critic_step(state: TrainState, batch: Batch, alphas: np.ndarray) -> dict:
    """One Adam update of the critic on the configured objective; generator
    parameters are untouched (the fake batch is detached)."""
    obj = state.config.objective
    if not obj.uses_critic:
        raise ValueError("critic_step called for an objective without a critic")
    with torch.no_grad():
        fake = state.generator(batch.x_zf, batch.samples, batch.masks, state.coils)
    fake_in = _critic_input(fake, state.label_mode)
    real_in = _critic_input(batch.labels, state.label_mode)
    fake_scores = state.critic(fake_in)
    real_scores = state.critic(real_in)
    if obj.family == "wgan_gp":
        gp = gradient_penalty(state.critic, fake_in, real_in, alphas, obj.eta)
        loss = critic_loss(fake_scores, real_scores, gp)
        gp_val = float(gp.detach())
    elif obj.family == "egan":
        loss, _ = egan_losses(fake_scores, real_scores)
        gp_val = 0.0
    else:
        loss, _ = lsgan_losses(fake_scores, real_scores)
        gp_val = 0.0
    state.opt_d.zero_grad()
    loss.backward()
    components = {"loss_d": float(loss.detach()), "gp": gp_val}
    _check_finite(state.step, components, {"critic": state.critic})
    state.opt_d.step()
    return components


def generator_step(state: TrainState, batch: Batch, lam: float) -> dict:
    """One Adam update of the generator; critic parameters are untouched."""
    obj = state.config.objective
    fake = state.generator(batch.x_zf, batch.samples, batch.masks, state.coils)
    if obj.family == "l1_only" or lam == 1.0:
        loss = l1_image_loss(fake, batch.labels)
    else:
        fake_scores = state.critic(_critic_input(fake, state.label_mode))
        if obj.family == "wgan_gp":
            adv = generator_loss_wgan(fake_scores)
        elif obj.family == "egan":
            adv = egan_generator_loss(fake_scores)
        else:
            adv = lsgan_generator_loss(fake_scores)
        if lam > 0.0:
            loss = (1.0 - lam) * adv + lam * l1_image_loss(fake, batch.labels)
        else:
            loss = adv
    state.opt_g.zero_grad()
    loss.backward()
    components = {"loss_g": float(loss.detach())}
    _check_finite(state.step, components, {"generator": state.generator})
    state.opt_g.step()
    return components


def _init_state(
    config: TrainerConfig,
    split: DatasetSplit,
    gen_arch: GeneratorArch,
    critic_arch: CriticArch | None,
) -> TrainState:
    torch.manual_seed(config.seed)
    generator = build_generator(gen_arch)
    critic = None
    opt_d = None
    if config.objective.uses_critic:
        if critic_arch is None:
            critic_arch = CriticArch(input_channels=1 if split.label_mode == "magnitude" else 2)
        critic = Critic(critic_arch)
        opt_d = torch.optim.Adam(
            critic.parameters(), lr=config.learning_rate,
            betas=(config.adam_beta1, config.adam_beta2),
        )
    opt_g = torch.optim.Adam(
        generator.parameters(), lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    return TrainState(
        step=0,
        generator=generator,
        critic=critic,
        opt_g=opt_g,
        opt_d=opt_d,
        config=config,
        label_mode=split.label_mode,
        coils=split.coils.maps,
    )


def model_recon_fn(state: TrainState):
    """Reconstruction callable over split items using the current generator
    in inference mode (frozen normalization statistics)."""

    def recon(item):
        was_training = state.generator.training
        state.generator.eval()
        try:
            with torch.no_grad():
                out = state.generator(
                    item.x_zf.unsqueeze(0),
                    item.kspace.samples.unsqueeze(0),
                    item.kspace.mask.mask,
                    state.coils,
                )[0]
        finally:
            state.generator.train(was_training)
        return out

    return recon


class _MetricLog:
    """Append-only CSV writer that can flush mid-run on aborts."""

    def __init__(self, path: Path | None):
        self.path = path
        self._fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(path, "w", newline="")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(LOG_COLUMNS)
            self._fh.flush()

    def write(self, row: dict) -> None:
        if self._fh is None:
            return
        self._writer.writerow([row.get(c, "") for c in LOG_COLUMNS])
        self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def train(
    config: TrainerConfig,
    split: DatasetSplit,
    gen_arch: GeneratorArch,
    eval_split: DatasetSplit | None = None,
    out_dir=None,
    critic_arch: CriticArch | None = None,
    resume_from=None,
) -> TrainState:
    """Run the full training loop and return the final state.

    Writes ``metrics.csv`` and checkpoints under ``out_dir`` when given.
    ``resume_from`` restores a checkpoint saved by :func:`save_checkpoint`
    and continues from its step counter.
    """
    config.validate()
    obj = config.objective
    paired_sampling = split.regime == "paired" and (
        obj.family == "l1_only" or obj.lambda_schedule is not None
    )
    if (obj.family == "l1_only" or obj.lambda_schedule is not None) and split.regime != "paired":
        raise ValueError("pixel-supervised objectives need a paired split")
    if obj.lambda_schedule is not None and split.label_mode != "complex":
        raise ValueError("pixel supervision needs complex labels")

    if resume_from is not None:
        state = load_checkpoint(resume_from, config=config)
    else:
        state = _init_state(config, split, gen_arch, critic_arch)
    state.generator.train()
    if state.critic is not None:
        state.critic.train()

    out_dir = Path(out_dir) if out_dir is not None else None
    log = _MetricLog(out_dir / "metrics.csv" if out_dir else None)
    try:
        while state.step < config.total_gen_steps:
            step = state.step
            rng = np.random.default_rng([config.seed, step])
            lam = obj.log_lambda(step)

            d_losses, gps = [], []
            if obj.uses_critic:
                for _ in range(obj.critic_steps_per_gen_step):
                    batch = sample_unpaired_batch(
                        split, config.batch_size, rng, paired=paired_sampling
                    )
                    alphas = rng.uniform(size=config.batch_size)
                    parts = critic_step(state, batch, alphas)
                    d_losses.append(parts["loss_d"])
                    gps.append(parts["gp"])

            batch = sample_unpaired_batch(split, config.batch_size, rng, paired=paired_sampling)
            g_parts = generator_step(state, batch, lam)

            row = {
                "step": step,
                "lambda": lam,
                "loss_d": float(np.mean(d_losses)) if d_losses else "",
                "loss_g": g_parts["loss_g"],
                "gp": float(np.mean(gps)) if gps else "",
            }
            state.step = step + 1

            if eval_split is not None and config.eval_every > 0 and (
                state.step % config.eval_every == 0 or state.step == config.total_gen_steps
            ):
                report = evaluate_model(model_recon_fn(state), eval_split)
                row["eval_psnr"] = report.mean_psnr
                row["eval_ssim"] = report.mean_ssim
                if out_dir is not None:
                    save_checkpoint(state, out_dir / "checkpoint_last.npz")
            state.history.append(row)
            log.write(row)
        if out_dir is not None:
            save_checkpoint(state, out_dir / "checkpoint_final.npz")
    except TrainingDiverged:
        log.close()
        raise
    finally:
        log.close()
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _optim_arrays(opt: torch.optim.Optimizer, prefix: str, arrays: dict) -> list:
    sd = opt.state_dict()
    for pidx, pstate in sd["state"].items():
        for key, val in pstate.items():
            arrays[f"{prefix}/{pidx}/{key}"] = (
                val.detach().cpu().numpy() if isinstance(val, torch.Tensor) else np.asarray(val)
            )
    groups = []
    for g in sd["param_groups"]:
        g = dict(g)
        g["betas"] = list(g["betas"])
        groups.append(g)
    return groups


def _restore_optim(opt: torch.optim.Optimizer, prefix: str, arrays: dict, groups: list) -> None:
    state: dict = {}
    for name, arr in arrays.items():
        if not name.startswith(prefix + "/"):
            continue
        _, pidx, key = name.split("/", 2)
        state.setdefault(int(pidx), {})[key] = torch.from_numpy(arr.copy())
    for g in groups:
        g["betas"] = tuple(g["betas"])
    opt.load_state_dict({"state": state, "param_groups": groups})


def _module_arrays(module: torch.nn.Module, prefix: str, arrays: dict) -> None:
    for key, val in module.state_dict().items():
        arrays[f"{prefix}/{key}"] = val.detach().cpu().numpy()


def _restore_module(module: torch.nn.Module, prefix: str, arrays: dict, path) -> None:
    sd = module.state_dict()
    new = {}
    for key, ref in sd.items():
        name = f"{prefix}/{key}"
        if name not in arrays:
            raise ArchiveError(f"{path} is missing field '{name}'")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise ArchiveError(
                f"shape mismatch for '{name}': checkpoint {tuple(arr.shape)} "
                f"vs model {tuple(ref.shape)}"
            )
        new[key] = torch.from_numpy(arr.copy()).to(ref.dtype)
    module.load_state_dict(new)


def save_checkpoint(state: TrainState, path) -> None:
    arrays: dict = {"coils": state.coils.numpy()}
    _module_arrays(state.generator, "gen", arrays)
    opt_g_groups = _optim_arrays(state.opt_g, "opt_g", arrays)
    opt_d_groups = None
    if state.critic is not None:
        _module_arrays(state.critic, "critic", arrays)
        opt_d_groups = _optim_arrays(state.opt_d, "opt_d", arrays)
    hist_cols = {c: [] for c in LOG_COLUMNS}
    for row in state.history:
        for c in LOG_COLUMNS:
            v = row.get(c, "")
            hist_cols[c].append(np.nan if v == "" else float(v))
    for c, vals in hist_cols.items():
        arrays[f"history/{c}"] = np.asarray(vals, dtype=np.float64)

    ga = state.generator.arch
    meta = {
        "kind": "checkpoint",
        "step": state.step,
        "label_mode": state.label_mode,
        "gen_arch": {
            "kind": ga.kind,
            "n_residual_blocks": ga.n_residual_blocks,
            "n_tail_convs": ga.n_tail_convs,
            "unroll_iterations": ga.unroll_iterations,
            "blocks_per_iteration": ga.blocks_per_iteration,
            "feature_width": ga.feature_width,
        },
        "critic_arch": None,
        "opt_g_groups": opt_g_groups,
        "opt_d_groups": opt_d_groups,
        "config": {
            "total_gen_steps": state.config.total_gen_steps,
            "batch_size": state.config.batch_size,
            "learning_rate": state.config.learning_rate,
            "adam_beta1": state.config.adam_beta1,
            "adam_beta2": state.config.adam_beta2,
            "seed": state.config.seed,
            "eval_every": state.config.eval_every,
            "objective": {
                "family": state.config.objective.family,
                "eta": state.config.objective.eta,
                "critic_steps_per_gen_step": state.config.objective.critic_steps_per_gen_step,
                "lambda_schedule": None
                if state.config.objective.lambda_schedule is None
                else {
                    "pure_l1_steps": state.config.objective.lambda_schedule.pure_l1_steps,
                    "ramp_end_step": state.config.objective.lambda_schedule.ramp_end_step,
                    "final_lambda": state.config.objective.lambda_schedule.final_lambda,
                },
            },
        },
    }
    if state.critic is not None:
        ca = state.critic.arch
        meta["critic_arch"] = {
            "n_layers": ca.n_layers,
            "base_features": ca.base_features,
            "input_channels": ca.input_channels,
            "late_widths": list(ca.late_widths),
        }
    save_archive(path, arrays, meta)


def config_from_meta(meta: dict) -> TrainerConfig:
    c = meta["config"]
    o = c["objective"]
    sched = o["lambda_schedule"]
    from .losses import LambdaSchedule

    objective = ObjectiveConfig(
        family=o["family"],
        eta=o["eta"],
        critic_steps_per_gen_step=o["critic_steps_per_gen_step"],
        lambda_schedule=None if sched is None else LambdaSchedule(**sched),
    )
    return TrainerConfig(
        total_gen_steps=c["total_gen_steps"],
        objective=objective,
        batch_size=c["batch_size"],
        learning_rate=c["learning_rate"],
        adam_beta1=c["adam_beta1"],
        adam_beta2=c["adam_beta2"],
        seed=c["seed"],
        eval_every=c["eval_every"],
    )


def load_checkpoint(path, config: TrainerConfig | None = None) -> TrainState:
    """Rebuild a full training state (models, optimizer moments, history)
    from a checkpoint archive; array round trips are bit-exact."""
    arrays, meta = load_archive(path)
    if meta.get("kind") != "checkpoint":
        raise ArchiveError(f"{path} is not a checkpoint archive")
    if config is None:
        config = config_from_meta(meta)
    gen_arch = GeneratorArch(**meta["gen_arch"])
    generator = build_generator(gen_arch)
    _restore_module(generator, "gen", arrays, path)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.learning_rate,
                             betas=(config.adam_beta1, config.adam_beta2))
    _restore_optim(opt_g, "opt_g", arrays, meta["opt_g_groups"])
    critic = None
    opt_d = None
    if meta["critic_arch"] is not None:
        ca = dict(meta["critic_arch"])
        ca["late_widths"] = tuple(ca["late_widths"])
        critic = Critic(CriticArch(**ca))
        _restore_module(critic, "critic", arrays, path)
        opt_d = torch.optim.Adam(critic.parameters(), lr=config.learning_rate,
                                 betas=(config.adam_beta1, config.adam_beta2))
        _restore_optim(opt_d, "opt_d", arrays, meta["opt_d_groups"])
    history = []
    hist = {c: arrays[f"history/{c}"] for c in LOG_COLUMNS if f"history/{c}" in arrays}
    n_rows = len(next(iter(hist.values()))) if hist else 0
    for i in range(n_rows):
        row = {}
        for c in LOG_COLUMNS:
            v = hist[c][i]
            row[c] = "" if np.isnan(v) else (int(v) if c == "step" else float(v))
        history.append(row)
    return TrainState(
        step=int(meta["step"]),
        generator=generator,
        critic=critic,
        opt_g=opt_g,
        opt_d=opt_d,
        config=config,
        label_mode=meta["label_mode"],
        coils=torch.from_numpy(arrays["coils"].copy()),
        history=history,
    )
