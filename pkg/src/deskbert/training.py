"""Training loops for masked-LM pre-training and task fine-tuning, plus evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autograd as ag
from .data import (
    CLS_ID,
    LABELS,
    PAD_ID,
    SEP_ID,
    LabeledSentence,
    RegressionExample,
    Splits,
    Vocabulary,
    _apply_masking,
    make_nsp_batch,
    tokenize,
)
from .errors import InputError
from .metrics import (
    MetricsReport,
    compute_class_weights,
    compute_classification_metrics,
    compute_regression_metrics,
    label_counts,
)
from .model import ModelParams, classify, encode, group_of, mlm_logits, nsp_logits, regress, task_parameter_names
from .strategies import AdamState, TrainingPlan, adam_step, frozen_set, group_learning_rates, stlr_lr

log = logging.getLogger(__name__)

BatchHook = Optional[Callable[[list], None]]
# Called after every optimizer step with the 1-based step count and the live parameters.
StepHook = Optional[Callable[[int, ModelParams], None]]
EVAL_BATCH = 256


@dataclass
class RunRecord:
    seed: int
    step_losses: List[float] = field(default_factory=list)
    val_losses: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    test_metrics: Optional[MetricsReport] = None
    epoch_seconds: List[float] = field(default_factory=list)
    info: Dict[str, object] = field(default_factory=dict)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "seed": self.seed,
            "step_losses": self.step_losses,
            "val_losses": self.val_losses,
            "val_accuracy": self.val_accuracy,
            "best_epoch": self.best_epoch,
            "test_metrics": None if self.test_metrics is None else self.test_metrics.to_dict(),
            "info": self.info,
        }
        if include_timing:
            d["epoch_seconds"] = self.epoch_seconds
        return d


# ---------------------------------------------------------------------------
# Encoding helpers
# ---------------------------------------------------------------------------


def encode_texts(vocab: Vocabulary, texts: Sequence[str], max_len: int) -> List[np.ndarray]:
    """[CLS] ids [SEP] per text, truncated to ``max_len``, unpadded."""
    rows = []
    for text in texts:
        content = vocab.ids(tokenize(text))[: max_len - 2]
        rows.append(np.array([CLS_ID] + content + [SEP_ID], dtype=np.int64))
    return rows


def pad_rows(rows: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    width = max(len(r) for r in rows)
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=np.int64)
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1
    return ids, mask


def _check_vocab(params: ModelParams, vocab: Vocabulary) -> None:
    if len(vocab) > params.config.vocab_size:
        raise InputError(f"vocabulary of {len(vocab)} tokens exceeds model vocab_size {params.config.vocab_size}")


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


class _Optimizer:
    """Plan-driven wrapper: per-step learning rates, freezing and Adam."""

    def __init__(self, params: ModelParams, plan: TrainingPlan, task: str, steps_per_epoch: int, total_steps: int):
        self.params = params
        self.plan = plan.with_total_steps(max(total_steps, 1))
        self.steps_per_epoch = steps_per_epoch
        self.task_names = task_parameter_names(params, task, plan.head_source)
        self.state = AdamState(params)
        self.t = 0

    def trainable(self) -> List[str]:
        frozen = frozen_set(self.plan, self.t, self.steps_per_epoch, self.params.config.num_layers)
        return [n for n in self.task_names if group_of(n) not in frozen]

    def prepare(self) -> List[str]:
        """Zero grads and mark only this step's trainable tensors as requiring grad."""
        names = set(self.trainable())
        for name, tensor in self.params.items():
            tensor.grad = None
            tensor.requires_grad = name in names
        return [n for n in self.task_names if n in names]

    def step(self, names: List[str]) -> None:
        base = stlr_lr(self.plan, self.t + 1)
        rates = group_learning_rates(self.plan, base, self.params.config.num_layers)
        adam_step(self.params, self.state, rates, names=names)
        self.t += 1

    def release(self) -> None:
        for tensor in self.params.tensors.values():
            tensor.requires_grad = True
            tensor.grad = None


# ---------------------------------------------------------------------------
# Masked-LM pre-training
# ---------------------------------------------------------------------------


def _mlm_loss(params, ids, mask, segs, positions, targets, training, rng, is_next=None):
    out = encode(params, ids, segs, mask, training=training, rng=rng)
    loss = ag.cross_entropy_weighted(mlm_logits(params, out, positions), targets)
    if is_next is not None:
        loss = ag.add(loss, ag.cross_entropy_weighted(nsp_logits(params, out), is_next))
    return loss


def pretrain_mlm(
    params: ModelParams,
    corpus: Sequence[str],
    vocab: Vocabulary,
    plan: TrainingPlan,
    epochs: int,
    seed: int,
    documents: Optional[Sequence[Sequence[str]]] = None,
    mask_rate: float = 0.15,
    batch_hook: BatchHook = None,
) -> Tuple[ModelParams, RunRecord]:
    """Further pre-train on ``corpus`` with the masked-LM objective.

    When ``documents`` are given, each epoch instead draws sentence pairs from
    them and adds the next-sentence loss. Returns a trained copy; the input
    parameters are left untouched.
    """
    if not corpus and not documents:
        raise InputError("pre-training corpus is empty")
    _check_vocab(params, vocab)
    params = params.copy()
    record = RunRecord(seed=seed, info={"objective": "mlm+nsp" if documents else "mlm"})
    if epochs == 0:
        return params, record
    rng = np.random.default_rng(seed)
    max_len = params.config.max_seq_len
    rows = encode_texts(vocab, corpus, max_len) if not documents else None
    if documents:
        n_items = sum(max(len(d) - 1, 0) for d in documents)
    else:
        n_items = len(rows)
    steps_per_epoch = -(-n_items // plan.batch_size)
    opt = _Optimizer(params, plan, "mlm+nsp" if documents else "mlm", steps_per_epoch, steps_per_epoch * epochs)

    for epoch in range(epochs):
        started = time.perf_counter()
        if documents:
            pairs = make_nsp_batch(documents, vocab, seed=int(rng.integers(2**31)), max_len=max_len, mask_rate=mask_rate)
        for batch_idx in _batches(n_items, plan.batch_size, rng):
            if documents:
                ids, mask, segs, is_next = _take_pairs(pairs, batch_idx)
                ids, positions, targets = _apply_masking(ids, mask_rate, rng)
            else:
                ids, mask = pad_rows([rows[i] for i in batch_idx])
                segs, is_next = None, None
                if batch_hook is not None:
                    batch_hook([corpus[i] for i in batch_idx])
                ids_orig = ids
                ids, positions, targets = _apply_masking(ids_orig, mask_rate, rng)
            if targets.size == 0:
                continue
            names = opt.prepare()
            loss = _mlm_loss(params, ids, mask, segs, positions, targets, True, rng, is_next)
            ag.backward(loss)
            opt.step(names)
            record.step_losses.append(float(loss.data))
        record.epoch_seconds.append(time.perf_counter() - started)
        log.info("pretrain epoch %d: mean loss %.4f", epoch + 1, np.mean(record.step_losses[-steps_per_epoch:]))
    opt.release()
    return params, record


def _take_pairs(batch, idx):
    """Rows ``idx`` of a pair batch, with its original (unmasked) ids restored."""
    ids = batch.token_ids.copy()
    ids[batch.masked_positions[:, 0], batch.masked_positions[:, 1]] = batch.masked_targets
    ids, mask, segs = ids[idx], batch.attention_mask[idx], batch.segment_ids[idx]
    width = int(mask.sum(axis=1).max())
    return ids[:, :width], mask[:, :width], segs[:, :width], batch.is_next[idx]


def further_pretrain_on_task(
    params: ModelParams,
    train_records: Sequence[LabeledSentence],
    vocab: Vocabulary,
    plan: TrainingPlan,
    epochs: int,
    seed: int,
    batch_hook: BatchHook = None,
) -> Tuple[ModelParams, RunRecord]:
    """Masked-LM pre-training on exactly the sentences of the classification train split."""
    return pretrain_mlm(params, [r.text for r in train_records], vocab, plan, epochs, seed, batch_hook=batch_hook)


def evaluate_mlm(
    params: ModelParams, sentences: Sequence[str], vocab: Vocabulary, seed: int, mask_rate: float = 0.15
) -> float:
    """Masked-token accuracy on ``sentences`` with a seeded masking."""
    rng = np.random.default_rng(seed)
    rows = encode_texts(vocab, sentences, params.config.max_seq_len)
    correct = total = 0
    with ag.no_grad():
        for start in range(0, len(rows), EVAL_BATCH):
            ids, mask = pad_rows(rows[start:start + EVAL_BATCH])
            ids, positions, targets = _apply_masking(ids, mask_rate, rng)
            if targets.size == 0:
                continue
            logits = mlm_logits(params, encode(params, ids, None, mask), positions).data
            correct += int((logits.argmax(axis=1) == targets).sum())
            total += int(targets.size)
    return correct / total if total else float("nan")


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def predict_logits(
    params: ModelParams, vocab: Vocabulary, texts: Sequence[str], head_source="last", include_embeddings: bool = True
) -> np.ndarray:
    rows = encode_texts(vocab, texts, params.config.max_seq_len)
    chunks = []
    with ag.no_grad():
        for start in range(0, len(rows), EVAL_BATCH):
            ids, mask = pad_rows(rows[start:start + EVAL_BATCH])
            out = encode(params, ids, None, mask)
            chunks.append(classify(params, out, head_source, include_embeddings=include_embeddings).data)
    if not chunks:
        return np.zeros((0, params.config.num_classes), dtype=np.float32)
    return np.concatenate(chunks)


def evaluate_classifier(
    params: ModelParams,
    vocab: Vocabulary,
    records: Sequence[LabeledSentence],
    class_weights: Sequence[float],
    plan: Optional[TrainingPlan] = None,
) -> MetricsReport:
    head = plan.head_source if plan else "last"
    include = plan.include_embeddings_in_mean if plan else True
    logits = predict_logits(params, vocab, [r.text for r in records], head, include)
    gold = [r.label_id for r in records]
    return compute_classification_metrics(
        logits.argmax(axis=1), gold, class_weights, logits=logits, num_classes=params.config.num_classes
    )


def _check_classification_splits(splits: Splits, num_classes: int) -> List[float]:
    if num_classes != len(LABELS):
        raise InputError(f"classifier has {num_classes} outputs but there are {len(LABELS)} labels")
    for name in ("train", "validation", "test"):
        records = getattr(splits, name)
        if not records:
            raise InputError(f"{name} split is empty")
        if not all(isinstance(r, LabeledSentence) for r in records):
            raise InputError(f"{name} split must hold labeled sentences")
    counts = label_counts([r.label_id for r in splits.train], num_classes)
    missing = [LABELS[c] for c, n in enumerate(counts) if n == 0]
    if missing:
        raise InputError(f"train split has no examples of {missing}")
    return compute_class_weights(counts)


def finetune_classifier(
    params: ModelParams,
    splits: Splits,
    vocab: Vocabulary,
    plan: TrainingPlan,
    seed: int,
    epochs: Optional[int] = None,
    batch_hook: BatchHook = None,
    step_hook: StepHook = None,
) -> Tuple[ModelParams, RunRecord]:
    """Fine-tune on weighted cross entropy and keep the epoch with the lowest validation loss.

    Class weights come from the train split only. The test split is scored
    once, after model selection.
    """
    _check_vocab(params, vocab)
    weights = _check_classification_splits(splits, params.config.num_classes)
    epochs = plan.epochs if epochs is None else epochs
    params = params.copy()
    record = RunRecord(seed=seed, info={"strategy": plan.strategy, "train_size": len(splits.train), "class_weights": weights})
    rng = np.random.default_rng(seed)
    rows = encode_texts(vocab, [r.text for r in splits.train], params.config.max_seq_len)
    labels = np.array([r.label_id for r in splits.train], dtype=np.int64)
    steps_per_epoch = -(-len(rows) // plan.batch_size)
    opt = _Optimizer(params, plan, "classification", steps_per_epoch, steps_per_epoch * epochs)

    best_loss, best_arrays = np.inf, None
    for epoch in range(epochs):
        started = time.perf_counter()
        for batch_idx in _batches(len(rows), plan.batch_size, rng):
            if batch_hook is not None:
                batch_hook([splits.train[i] for i in batch_idx])
            names = opt.prepare()
            ids, mask = pad_rows([rows[i] for i in batch_idx])
            out = encode(params, ids, None, mask, training=True, rng=rng)
            logits = classify(params, out, plan.head_source, True, rng, plan.include_embeddings_in_mean)
            loss = ag.cross_entropy_weighted(logits, labels[batch_idx], weights)
            ag.backward(loss)
            opt.step(names)
            record.step_losses.append(float(loss.data))
            if step_hook is not None:
                step_hook(opt.t, params)
        opt.release()
        val = evaluate_classifier(params, vocab, splits.validation, weights, plan)
        record.val_losses.append(val.weighted_ce)
        record.val_accuracy.append(val.accuracy)
        record.epoch_seconds.append(time.perf_counter() - started)
        log.info("epoch %d: val loss %.4f acc %.3f", epoch + 1, val.weighted_ce, val.accuracy)
        if val.weighted_ce < best_loss:
            best_loss, best_arrays = val.weighted_ce, params.arrays()
            record.best_epoch = epoch + 1
    opt.release()
    if best_arrays is not None:
        params.load_arrays(best_arrays)
    record.test_metrics = evaluate_classifier(params, vocab, splits.test, weights, plan)
    return params, record


def select_best_epoch(val_losses: Sequence[float]) -> int:
    """1-based index of the first minimum validation loss."""
    if not val_losses:
        raise InputError("no completed epochs")
    return int(np.argmin(val_losses)) + 1


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


def predict_scores(params: ModelParams, vocab: Vocabulary, texts: Sequence[str]) -> np.ndarray:
    rows = encode_texts(vocab, texts, params.config.max_seq_len)
    chunks = []
    with ag.no_grad():
        for start in range(0, len(rows), EVAL_BATCH):
            ids, mask = pad_rows(rows[start:start + EVAL_BATCH])
            chunks.append(regress(params, encode(params, ids, None, mask)).data)
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float32)


def _train_regressor(params, train, validation, vocab, plan, epochs, seed, batch_hook):
    params = params.copy()
    record = RunRecord(seed=seed, info={"train_size": len(train)})
    rng = np.random.default_rng(seed)
    rows = encode_texts(vocab, [r.text for r in train], params.config.max_seq_len)
    scores = np.array([r.score for r in train], dtype=np.float32)
    steps_per_epoch = -(-len(rows) // plan.batch_size)
    opt = _Optimizer(params, plan, "regression", steps_per_epoch, steps_per_epoch * epochs)
    best_loss, best_arrays = np.inf, None
    for epoch in range(epochs):
        started = time.perf_counter()
        for batch_idx in _batches(len(rows), plan.batch_size, rng):
            if batch_hook is not None:
                batch_hook([train[i] for i in batch_idx])
            names = opt.prepare()
            ids, mask = pad_rows([rows[i] for i in batch_idx])
            pred = regress(params, encode(params, ids, None, mask, training=True, rng=rng), True, rng)
            loss = ag.mse_loss(pred, scores[batch_idx])
            ag.backward(loss)
            opt.step(names)
            record.step_losses.append(float(loss.data))
        opt.release()
        if validation:
            val_mse = compute_regression_metrics(
                predict_scores(params, vocab, [r.text for r in validation]), [r.score for r in validation]
            ).mse
        else:
            val_mse = record.step_losses[-1]
        record.val_losses.append(val_mse)
        record.epoch_seconds.append(time.perf_counter() - started)
        if val_mse < best_loss:
            best_loss, best_arrays = val_mse, params.arrays()
            record.best_epoch = epoch + 1
    opt.release()
    if best_arrays is not None:
        params.load_arrays(best_arrays)
    return params, record


def finetune_regressor(
    params: ModelParams,
    folds: Sequence[Tuple[Sequence[RegressionExample], Sequence[RegressionExample]]],
    vocab: Vocabulary,
    plan: TrainingPlan,
    seed: int,
    epochs: Optional[int] = None,
    validation_fraction: float = 0.2,
    batch_hook: BatchHook = None,
) -> List[RunRecord]:
    """Independent fine-tuning per fold, all from the same starting parameters.

    Each fold's train part is split again (seeded) into train and a
    validation share used for epoch selection; the test part is scored once.
    """
    if len(folds) < 2:
        raise InputError("need at least 2 folds")
    _check_vocab(params, vocab)
    epochs = plan.epochs if epochs is None else epochs
    records = []
    for i, (train, test) in enumerate(folds):
        if {id(r) for r in train} & {id(r) for r in test}:
            raise InputError(f"fold {i}: train and test overlap")
        if not train or not test:
            raise InputError(f"fold {i}: empty train or test part")
        order = np.random.default_rng([seed, i]).permutation(len(train))
        n_val = int(len(train) * validation_fraction)
        val = [train[j] for j in order[:n_val]]
        fit = [train[j] for j in order[n_val:]]
        fitted, record = _train_regressor(params, fit, val, vocab, plan, epochs, seed, batch_hook)
        record.test_metrics = compute_regression_metrics(
            predict_scores(fitted, vocab, [r.text for r in test]), [r.score for r in test]
        )
        record.info["fold"] = i
        records.append(record)
    return records


# ---------------------------------------------------------------------------
# Training-set size sweep
# ---------------------------------------------------------------------------


def nested_subsample(records: Sequence, size: int, seed: int) -> list:
    """First ``size`` items of one seeded permutation, kept in original order.

    Subsamples for increasing sizes are nested, and the full size returns the
    records unchanged.
    """
    if size > len(records):
        raise InputError(f"size {size} exceeds the {len(records)} available records")
    order = np.random.default_rng(seed).permutation(len(records))
    keep = np.sort(order[:size])
    return [records[i] for i in keep]


def size_sweep(
    params: ModelParams,
    splits: Splits,
    vocab: Vocabulary,
    sizes: Sequence[int],
    plan: TrainingPlan,
    seed: int,
) -> Dict[int, RunRecord]:
    for size in sizes:
        if size > len(splits.train):
            raise InputError(f"size {size} exceeds train split of {len(splits.train)}")
    out = {}
    for size in sizes:
        subset = Splits(nested_subsample(splits.train, size, seed), splits.validation, splits.test)
        _, record = finetune_classifier(params, subset, vocab, plan, seed)
        out[size] = record
    return out
