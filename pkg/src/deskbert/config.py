"""Experiment configuration files (JSON, unknown keys rejected)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from .checkpoint import config_hash
from .errors import InputError
from .model import ModelConfig
from .strategies import TrainingPlan

KINDS = (
    "pretrain",
    "finetune-cls",
    "finetune-reg",
    "ablate-strategies",
    "ablate-layers",
    "ablate-lastk",
    "ablate-pretraining",
    "size-sweep",
)
ABLATIONS = KINDS[3:]


@dataclass
class DataPaths:
    phrasebank: Optional[str] = None
    fiqa: Optional[str] = None
    corpus_dir: Optional[str] = None
    keywords: Optional[str] = None
    domain_corpus_dir: Optional[str] = None


@dataclass
class ExperimentConfig:
    """Everything a command needs besides the data itself.

    ``plan`` drives fine-tuning; ``pretrain_plan`` drives masked-LM
    (further) pre-training. ``grid`` lists the cells of an ablation, e.g.
    ``{"strategies": ["NA", "ALL"]}``, ``{"k": [0, 2]}`` or
    ``{"sizes": [100, 250]}``; missing entries fall back to the full grid.
    """

    kind: str
    model: ModelConfig = field(default_factory=ModelConfig)
    plan: TrainingPlan = field(default_factory=TrainingPlan)
    pretrain_plan: TrainingPlan = field(
        default_factory=lambda: TrainingPlan(peak_lr=1e-3, use_stlr=True, strategy="STL", epochs=3, batch_size=32)
    )
    data: DataPaths = field(default_factory=DataPaths)
    seeds: List[int] = field(default_factory=lambda: [0])
    use_nsp: bool = False
    mask_rate: float = 0.15
    stratify: bool = False
    folds: int = 10
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.seeds:
            raise InputError("seeds must not be empty")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model.to_dict(),
            "plan": self.plan.to_dict(),
            "pretrain_plan": self.pretrain_plan.to_dict(),
            "data": asdict(self.data),
            "seeds": list(self.seeds),
            "use_nsp": self.use_nsp,
            "mask_rate": self.mask_rate,
            "stratify": self.stratify,
            "folds": self.folds,
            "grid": self.grid,
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in d:
            raise InputError("config needs a 'kind'")
        kwargs = dict(d)
        try:
            if "model" in d:
                kwargs["model"] = ModelConfig.from_dict(d["model"])
            for key in ("plan", "pretrain_plan"):
                if key in d:
                    kwargs[key] = TrainingPlan.from_dict(d[key])
            if "data" in d:
                unknown = set(d["data"]) - {f.name for f in fields(DataPaths)}
                if unknown:
                    raise InputError(f"unknown data keys: {sorted(unknown)}")
                kwargs["data"] = DataPaths(**d["data"])
        except (TypeError, ValueError) as exc:
            raise InputError(str(exc)) from exc
        return cls(**kwargs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InputError(f"config is not valid JSON: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file {path} not found")
    return ExperimentConfig.from_json(path.read_text(encoding="utf-8"))
