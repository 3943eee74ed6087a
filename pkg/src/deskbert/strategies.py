"""Fine-tuning schedules that guard against catastrophic forgetting, and the optimizer.

Three knobs, combinable through :func:`preset`:

* slanted triangular learning rate: linear warm-up to the peak, then linear
  decay to zero at the last step;
* discriminative fine-tuning: each layer group below the head trains at
  ``discrimination_rate`` times the rate of the group above it;
* gradual unfreezing: only the head trains at first, then one more group
  (top encoder layer first, embeddings last) every ``unfreeze_interval``
  of an epoch.

``freeze_last_k`` is the alternative static scheme: the head and the top
``k`` encoder layers train, everything else stays frozen for the whole run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Set, Union

import numpy as np

from .errors import ContractError, ParameterError, ScheduleError
from .model import ModelParams, group_names, group_of

STRATEGIES = ("NA", "STL", "STL+DFT", "STL+GU", "ALL")


@dataclass(frozen=True)
class TrainingPlan:
    peak_lr: float = 2e-5
    warmup_proportion: float = 0.2
    total_steps: Optional[int] = None
    discrimination_rate: float = 1.0
    use_stlr: bool = False
    gradual_unfreezing: bool = False
    unfreeze_interval: float = 1 / 3
    freeze_last_k: Optional[int] = None
    head_source: Union[str, int] = "last"
    include_embeddings_in_mean: bool = True
    strategy: str = "NA"
    epochs: int = 6
    batch_size: int = 64

    def __post_init__(self):
        if self.peak_lr < 0:
            raise ParameterError("peak_lr must be non-negative")
        if not 0.0 < self.warmup_proportion < 1.0:
            raise ParameterError("warmup_proportion must be in (0, 1)")
        if self.total_steps is not None and self.total_steps < 1:
            raise ParameterError("total_steps must be positive")
        if not 0.0 < self.discrimination_rate <= 1.0:
            raise ParameterError("discrimination_rate must be in (0, 1]")
        if self.unfreeze_interval <= 0:
            raise ParameterError("unfreeze_interval must be positive")
        if self.gradual_unfreezing and self.freeze_last_k is not None:
            raise ParameterError("gradual unfreezing and freeze_last_k are mutually exclusive")
        if self.freeze_last_k is not None and self.freeze_last_k < 0:
            raise ParameterError("freeze_last_k must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ParameterError("epochs must be >= 0 and batch_size >= 1")

    def with_total_steps(self, total_steps: int) -> "TrainingPlan":
        return replace(self, total_steps=total_steps)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingPlan":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**d)


def preset(name: str, **overrides) -> TrainingPlan:
    """Plan for a named strategy; ``overrides`` set the remaining fields (lr, epochs...)."""
    settings = {
        "NA": dict(use_stlr=False, discrimination_rate=1.0, gradual_unfreezing=False),
        "STL": dict(use_stlr=True, discrimination_rate=1.0, gradual_unfreezing=False),
        "STL+DFT": dict(use_stlr=True, discrimination_rate=0.85, gradual_unfreezing=False),
        "STL+GU": dict(use_stlr=True, discrimination_rate=1.0, gradual_unfreezing=True),
        "ALL": dict(use_stlr=True, discrimination_rate=0.85, gradual_unfreezing=True),
    }
    if name not in settings:
        raise ParameterError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
    clash = set(overrides) & (set(settings[name]) | {"strategy"})
    if clash:
        raise ParameterError(f"{sorted(clash)} are fixed by strategy {name}")
    return TrainingPlan(strategy=name, **settings[name], **overrides)


def stlr_lr(plan: TrainingPlan, t: int) -> float:
    """Learning rate at step ``t`` (constant ``peak_lr`` when the schedule is off)."""
    if plan.total_steps is None:
        raise ScheduleError("plan has no total_steps")
    T = plan.total_steps
    if t < 0 or t > T:
        raise ScheduleError(f"step {t} outside [0, {T}]")
    if not plan.use_stlr:
        return plan.peak_lr
    cut = plan.warmup_proportion * T
    if t <= cut:
        return plan.peak_lr * t / cut
    return plan.peak_lr * (T - t) / ((1.0 - plan.warmup_proportion) * T)


def layer_lr(plan: TrainingPlan, group: str, base_lr: float, num_layers: int) -> float:
    """Discriminative rate for ``group``: head gets ``base_lr``, each group below one more factor."""
    order = group_names(num_layers)
    if group not in order:
        raise ParameterError(f"unknown layer group {group!r}")
    lr = base_lr
    for _ in range(len(order) - 1 - order.index(group)):
        lr *= plan.discrimination_rate
    return lr


def group_learning_rates(plan: TrainingPlan, base_lr: float, num_layers: int) -> Dict[str, float]:
    """All group rates, each obtained from the one above by a single multiply."""
    rates = {}
    lr = base_lr
    for group in reversed(group_names(num_layers)):
        rates[group] = lr
        lr *= plan.discrimination_rate
    return rates


def unfreeze_order(num_layers: int) -> List[str]:
    return [f"encoder.{i}" for i in range(num_layers, 0, -1)] + ["embeddings"]


def frozen_set(plan: TrainingPlan, t: int, steps_per_epoch: int, num_layers: int) -> Set[str]:
    """Groups that must not move at step ``t``."""
    if plan.freeze_last_k is not None:
        return set(group_names(num_layers)) - freeze_mask_last_k(plan, num_layers)
    if not plan.gradual_unfreezing:
        return set()
    if steps_per_epoch <= 0:
        raise ParameterError("steps_per_epoch must be positive")
    interval = Fraction(plan.unfreeze_interval).limit_denominator(1000) * steps_per_epoch
    released = math.floor(Fraction(t) / interval)
    order = unfreeze_order(num_layers)
    return set(order[released:]) if released < len(order) else set()


def freeze_mask_last_k(plan: TrainingPlan, num_layers: int) -> Set[str]:
    """Trainable groups when only the top ``k`` encoder layers are fine-tuned."""
    k = plan.freeze_last_k
    if k is None:
        return set(group_names(num_layers))
    if not 0 <= k <= num_layers:
        raise ParameterError(f"freeze_last_k={k} outside [0, {num_layers}]")
    return {"head"} | {f"encoder.{i}" for i in range(num_layers - k + 1, num_layers + 1)}


class AdamState:
    """First/second moments and a per-parameter step count.

    Bias correction uses each parameter's own count, so a group that starts
    training late gets properly corrected first updates.
    """

    def __init__(self, params: ModelParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.counts = {name: 0 for name in params}
        self.step = 0


def adam_step(
    params: ModelParams,
    state: AdamState,
    lr_per_group: Dict[str, float],
    frozen: Iterable[str] = (),
    names: Optional[Iterable[str]] = None,
) -> None:
    """One Adam update of ``names`` (default: all parameters), skipping frozen groups.

    Parameters are rebound to new arrays rather than modified in place.
    """
    frozen = set(frozen)
    b1, b2 = state.beta1, state.beta2
    for name in params if names is None else names:
        group = group_of(name)
        if group in frozen:
            continue
        tensor = params[name]
        if tensor.grad is None:
            raise ContractError(f"trainable parameter {name} has no gradient")
        g = tensor.grad
        state.counts[name] += 1
        n = state.counts[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        m_hat = state.m[name] / (1 - b1**n)
        v_hat = state.v[name] / (1 - b2**n)
        update = lr_per_group[group] * m_hat / (np.sqrt(v_hat) + state.eps)
        tensor.data = (tensor.data - update).astype(tensor.dtype)
    state.step += 1
