"""Run configuration: one nested, YAML-serializable record that fully
determines a training run (dataset, generator, objective, trainer, seed).

Every run writes its resolved configuration (all defaults expanded, plus
the tool version) next to its outputs, so a run directory is reproducible
from that file alone.  Unknown or ill-typed fields fail loudly with the
field named.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import __version__
from .losses import LambdaSchedule, ObjectiveConfig
from .networks import GeneratorArch
from .training import TrainerConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetParams:
    inputs: int = 200
    labels: int = 60
    regime: str = "disjoint"
    label_mode: str = "magnitude"
    acceleration: float = 3.0
    coils: int = 1
    height: int = 64
    width: int = 64
    noise_sigma: float = 0.0


@dataclass
class RunConfig:
    dataset: DatasetParams = field(default_factory=DatasetParams)
    generator: GeneratorArch = field(default_factory=lambda: GeneratorArch(kind="unrolled"))
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(total_gen_steps=1500))
    eval_count: int = 24
    out_dir: str = "runs/run"
    seed: int = 0

    def resolve(self) -> "RunConfig":
        """Propagate the master seed and validate every section."""
        self.trainer.seed = self.seed
        self.trainer.validate()
        self.generator.validate()
        if self.dataset.regime not in ("paired", "partial", "disjoint"):
            raise ConfigError(f"dataset.regime: unknown regime {self.dataset.regime!r}")
        if self.eval_count < 1:
            raise ConfigError("eval_count must be >= 1")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = __version__
        return d


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    return cls(**data)


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root: expected a mapping")
    data = dict(data)
    data.pop("version", None)
    known = {"dataset", "generator", "trainer", "objective", "eval_count", "out_dir", "seed"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config root: unknown field(s) {sorted(unknown)}")

    dataset = _build(DatasetParams, data.get("dataset", {}), "dataset")
    generator = _build(GeneratorArch, data.get("generator", {"kind": "unrolled"}), "generator")

    obj_data = dict(data.get("objective", {}))
    sched = obj_data.pop("lambda_schedule", None)
    objective = _build(ObjectiveConfig, obj_data, "objective")
    if sched is not None:
        objective.lambda_schedule = _build(LambdaSchedule, sched, "objective.lambda_schedule")

    tr_data = dict(data.get("trainer", {}))
    if "objective" in tr_data:
        raise ConfigError("trainer.objective: the objective belongs in the top-level 'objective' section")
    tr_data.setdefault("total_gen_steps", 1500)
    trainer = _build(TrainerConfig, tr_data, "trainer")
    trainer.objective = objective

    cfg = RunConfig(
        dataset=dataset,
        generator=generator,
        trainer=trainer,
        eval_count=int(data.get("eval_count", 24)),
        out_dir=str(data.get("out_dir", "runs/run")),
        seed=int(data.get("seed", 0)),
    )
    return cfg.resolve()


def _to_nested_dict(cfg: RunConfig) -> dict:
    d = cfg.to_dict()
    trainer = d.pop("trainer")
    objective = trainer.pop("objective")
    trainer.pop("seed", None)  # master seed lives at the root
    d["trainer"] = trainer
    d["objective"] = objective
    return d


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    try:
        return run_config_from_dict(data or {})
    except TypeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc


def save_run_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(_to_nested_dict(cfg), sort_keys=False))
