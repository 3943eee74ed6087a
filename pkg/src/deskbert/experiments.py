"""Ablation grids: every cell starts from the same parent and runs the same seeds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .data import Splits, Vocabulary
from .errors import InputError
from .model import ModelParams
from .strategies import TrainingPlan, preset
from .training import RunRecord, finetune_classifier, further_pretrain_on_task, nested_subsample, pretrain_mlm

log = logging.getLogger(__name__)

# Either one fixed split or a function giving the split for a seed.
SplitSource = Union[Splits, Callable[[int], Splits]]

STRATEGY_GRID = ("NA", "STL", "STL+GU", "ALL")
PRETRAINING_ARMS = ("vanilla", "task", "domain")
_STRATEGY_FIELDS = ("use_stlr", "discrimination_rate", "gradual_unfreezing", "strategy", "total_steps")
SUMMARY_COLUMNS = (
    "cell", "status", "seeds", "accuracy", "macro_f1", "weighted_ce", "ce",
    "min_val_loss", "final_val_loss", "best_epoch", "error",
)


@dataclass
class CellResult:
    """All seeds of one grid cell; ``error`` is set if any seed failed."""

    cell: str
    records: List[RunRecord] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def summary(self) -> dict:
        """Medians over seeds, one row of the grid table."""
        row = {"cell": self.cell, "status": "ok" if self.ok else "failed", "seeds": len(self.records), "error": self.error or ""}
        if not self.ok or not self.records:
            return {k: row.get(k, "") for k in SUMMARY_COLUMNS}
        tm = [r.test_metrics for r in self.records]
        row.update(
            accuracy=_median([m.accuracy for m in tm]),
            macro_f1=_median([m.macro_f1 for m in tm]),
            weighted_ce=_median([m.weighted_ce for m in tm]),
            ce=_median([m.ce for m in tm]),
            min_val_loss=_median([min(r.val_losses) for r in self.records]),
            final_val_loss=_median([r.val_losses[-1] for r in self.records]),
            best_epoch=_median([r.best_epoch for r in self.records]),
        )
        return {k: row[k] for k in SUMMARY_COLUMNS}


def _median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def with_strategy(plan: TrainingPlan, name: str) -> TrainingPlan:
    """``plan`` with its schedule/freezing switches replaced by strategy ``name``."""
    kept = {k: v for k, v in plan.to_dict().items() if k not in _STRATEGY_FIELDS}
    if name in ("STL+GU", "ALL"):
        kept["freeze_last_k"] = None
    return preset(name, **kept)


def run_cells(
    cells: Dict[str, Callable[[int], RunRecord]],
    seeds: Sequence[int],
) -> List[CellResult]:
    """Run each cell for every seed; a failing cell is recorded and the grid goes on."""
    results = []
    for name, run in cells.items():
        result = CellResult(name)
        try:
            for seed in seeds:
                result.records.append(run(seed))
        except Exception as exc:  # noqa: BLE001 - any cell failure is reported per row
            log.error("cell %s failed: %s", name, exc)
            result.error = f"{type(exc).__name__}: {exc}"
        results.append(result)
    return results


def splits_for(splits: SplitSource, seed: int) -> Splits:
    return splits(seed) if callable(splits) else splits


def _finetune_cell(parent, splits, vocab, plan):
    def run(seed):
        return finetune_classifier(parent, splits_for(splits, seed), vocab, plan, seed)[1]
    return run


def ablate_strategies(
    parent: ModelParams, splits: SplitSource, vocab: Vocabulary, plan: TrainingPlan, seeds: Sequence[int],
    strategies: Sequence[str] = STRATEGY_GRID,
) -> List[CellResult]:
    cells = {}
    for name in strategies:
        try:
            cell_plan = with_strategy(plan, name)
        except ValueError as exc:
            cells[name] = _raiser(exc)
            continue
        cells[name] = _finetune_cell(parent, splits, vocab, cell_plan)
    return run_cells(cells, seeds)


def ablate_layers(
    parent: ModelParams, splits: SplitSource, vocab: Vocabulary, plan: TrainingPlan, seeds: Sequence[int],
    layers: Optional[Sequence] = None,
) -> List[CellResult]:
    """Classifier on each encoder layer's [CLS] vector, plus the mean over layers."""
    if layers is None:
        layers = list(range(1, parent.config.num_layers + 1)) + ["mean"]
    cells = {}
    for source in layers:
        name = f"layer-{source}" if source != "mean" else "mean"
        cells[name] = _finetune_cell(parent, splits, vocab, replace(plan, head_source=source))
    return run_cells(cells, seeds)


def default_k_grid(num_layers: int) -> List[int]:
    return list(range(num_layers + 1))


def ablate_lastk(
    parent: ModelParams, splits: SplitSource, vocab: Vocabulary, plan: TrainingPlan, seeds: Sequence[int],
    ks: Optional[Sequence[int]] = None,
) -> List[CellResult]:
    """Fine-tune only the top ``k`` encoder layers and the head; k=0 trains the classifier alone."""
    if plan.gradual_unfreezing:
        raise InputError("last-k ablation needs a plan without gradual unfreezing")
    ks = default_k_grid(parent.config.num_layers) if ks is None else list(ks)
    cells = {f"k={k}": _finetune_cell(parent, splits, vocab, replace(plan, freeze_last_k=int(k))) for k in ks}
    return run_cells(cells, seeds)


def pretrain_domain_arm(parent, vocab, domain_corpus, pretrain_plan, seed, documents=None, mask_rate=0.15):
    if not domain_corpus and not documents:
        raise InputError("pre-training ablation needs a domain corpus")
    return pretrain_mlm(
        parent, domain_corpus, vocab, pretrain_plan, pretrain_plan.epochs, seed, documents=documents, mask_rate=mask_rate
    )[0]


def ablate_pretraining(
    parent: ModelParams,
    splits: SplitSource,
    vocab: Vocabulary,
    domain_corpus: Sequence[str],
    plan: TrainingPlan,
    pretrain_plan: TrainingPlan,
    seeds: Sequence[int],
    documents=None,
    mask_rate: float = 0.15,
) -> List[CellResult]:
    """Vanilla vs task vs domain further pre-training, all derived from ``parent``.

    ``vanilla`` fine-tunes the parent directly. ``task`` first continues
    masked-LM training on the seed's classification train split (never its
    validation or test sentences). ``domain`` continues on the domain corpus;
    it does not depend on the split, so it is trained once, with the first
    seed.
    """
    domain = pretrain_domain_arm(parent, vocab, domain_corpus, pretrain_plan, seeds[0], documents, mask_rate)

    def vanilla(seed):
        return finetune_classifier(parent, splits_for(splits, seed), vocab, plan, seed)[1]

    def task(seed):
        split = splits_for(splits, seed)
        start, _ = further_pretrain_on_task(parent, split.train, vocab, pretrain_plan, pretrain_plan.epochs, seed)
        return finetune_classifier(start, split, vocab, plan, seed)[1]

    def domain_cell(seed):
        return finetune_classifier(domain, splits_for(splits, seed), vocab, plan, seed)[1]

    return run_cells({"vanilla": vanilla, "task": task, "domain": domain_cell}, seeds)


def sweep_sizes(
    parent: ModelParams, splits: SplitSource, vocab: Vocabulary, plan: TrainingPlan, seeds: Sequence[int],
    sizes: Sequence[int],
) -> List[CellResult]:
    """Nested train subsamples of each size (the subsample follows the seed)."""
    smallest = min(len(splits_for(splits, s).train) for s in seeds)
    for size in sizes:
        if size > smallest:
            raise InputError(f"size {size} exceeds train split of {smallest}")

    def cell(size):
        def run(seed):
            split = splits_for(splits, seed)
            subset = Splits(nested_subsample(split.train, size, seed), split.validation, split.test)
            return finetune_classifier(parent, subset, vocab, plan, seed)[1]
        return run

    return run_cells({f"n={s}": cell(s) for s in sizes}, seeds)


def _raiser(exc):
    def run(seed):
        raise exc
    return run


def rising_after_minimum(val_losses: Sequence[float]) -> bool:
    """True if some epoch after the minimum has a higher validation loss."""
    best = int(np.argmin(val_losses))
    return best < len(val_losses) - 1 and max(val_losses[best + 1:]) > val_losses[best]


def final_within(val_losses: Sequence[float], tolerance: float) -> bool:
    """Final-epoch validation loss within ``tolerance`` (relative) of the run's minimum."""
    best = min(val_losses)
    return val_losses[-1] <= best * (1 + tolerance) or math.isclose(val_losses[-1], best)
