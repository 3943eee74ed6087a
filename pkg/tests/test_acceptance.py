"""Acceptance suite: one test per criterion, each recording a PASS/FAIL verdict line.

The verdicts are printed in the terminal summary (see conftest.py). The
learning-dynamics criteria (8-10) run the same ablation functions the CLI
uses, on synthetic data, with fixed seeds 0-4.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from deskbert import autograd as ag
from deskbert import experiments as ex
from deskbert import synthetic as syn
from deskbert.cli import EXIT_OK, _write_grid, cmd_report, main
from deskbert.data import Splits, build_vocab, kfold_split, split_dataset
from deskbert.metrics import compute_class_weights, compute_classification_metrics, compute_regression_metrics
from deskbert.model import ModelConfig, group_names, group_of, init_params
from deskbert.strategies import frozen_set, group_learning_rates, layer_lr, preset, stlr_lr, unfreeze_order
from deskbert.training import evaluate_mlm, finetune_classifier, pretrain_mlm
from gradcases import OP_NAMES, op_cases

DESK = ModelConfig()  # L=4, H=64
SEEDS = [0, 1, 2, 3, 4]


# ---------------------------------------------------------------------------
# 1. Gradient suite
# ---------------------------------------------------------------------------


def test_01_gradient_suite(criterion):
    with criterion(1, "every autograd op passes central finite differences, 20 seeds") as d:
        started = time.perf_counter()
        worst = {}
        for seed in range(20):
            for name, fn, inputs in op_cases(np.random.default_rng(seed), np.float32):
                worst[name] = max(worst.get(name, 0.0), ag.gradcheck(fn, inputs, eps=1e-3))
        elapsed = time.perf_counter() - started
        d.update(ops=len(worst), worst_rel_err=f"{max(worst.values()):.1e}", seconds=round(elapsed, 1))
        assert sorted(worst) == sorted(OP_NAMES)
        bad = {k: v for k, v in worst.items() if not v < 1e-3}
        assert not bad, f"ops over tolerance: {bad}"
        assert elapsed < 60


# ---------------------------------------------------------------------------
# 2. Schedule oracles
# ---------------------------------------------------------------------------


def _stlr_closed_form(peak, pw, T, t):
    """eta*t/(p_w*T) up to the peak, eta*(T-t)/((1-p_w)*T) after it, in float arithmetic."""
    if t <= pw * T:
        return peak * t / (pw * T)
    return peak * (T - t) / ((1 - pw) * T)


def _stlr_rational(peak, pw, T, t):
    cut = Fraction(pw) * T
    if t <= cut:
        return Fraction(peak) * t / cut
    return Fraction(peak) * (T - t) / ((1 - Fraction(pw)) * T)


def test_02_schedule_oracles(criterion):
    with criterion(2, "STLR closed form at 20 points; adjacent-group lr ratio is 0.85") as d:
        peak, pw, T = 2e-5, 0.2, 1000
        plan = preset("STL", peak_lr=peak, warmup_proportion=pw, total_steps=T)
        rng = np.random.default_rng(0)
        points = [0, int(pw * T), T] + sorted(rng.choice(np.arange(1, T), size=17, replace=False).tolist())
        assert len(set(points)) == 20
        worst_ulps = 0.0
        for t in points:
            got = stlr_lr(plan, t)
            assert got == _stlr_closed_form(peak, pw, T, t), t
            # and the float result is within rounding of the exact rational value
            exact = _stlr_rational(peak, pw, T, t)
            ulps = 0 if exact == 0 else abs(Fraction(got) - exact) / Fraction(math.ulp(float(exact)))
            worst_ulps = max(worst_ulps, float(ulps))
            assert ulps <= 3, (t, got, float(exact))
        assert stlr_lr(plan, 0) == 0 and stlr_lr(plan, T) == 0 and stlr_lr(plan, 200) == peak

        dft = preset("STL+DFT")
        L = DESK.num_layers
        order = group_names(L)
        rates = group_learning_rates(dft, 1.0, L)
        ratios = []
        for lower, upper in zip(order[:-1], order[1:]):
            ratio = layer_lr(dft, lower, 1.0, L) / layer_lr(dft, upper, 1.0, L)
            ratios.append(ratio)
            assert abs(ratio - 0.85) <= 4 * np.finfo(np.float64).eps
            assert rates[lower] == rates[upper] * 0.85
        d.update(points=len(points), worst_ulps=worst_ulps, max_ratio_err=f"{max(abs(r - 0.85) for r in ratios):.1e}")


# ---------------------------------------------------------------------------
# 3. Freeze contracts
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_task():
    records = syn.sentiment_dataset(216, seed=21)
    splits = Splits(records[:144], records[144:180], records[180:])
    vocab = build_vocab([r.text for r in records], DESK.vocab_size)
    return init_params(DESK, 0), splits, vocab


def test_03_freeze_contracts(criterion, small_task):
    with criterion(3, "frozen groups bit-identical (gradual unfreezing, L=4, 6 epochs; freeze-last-k)") as d:
        parent, splits, vocab = small_task
        init = {n: t.data.copy() for n, t in parent.items()}
        plan = preset("ALL", peak_lr=1e-3, batch_size=16, epochs=6)
        spe = -(-len(splits.train) // plan.batch_size)
        scheduled = {
            g: next(s for s in range(spe * 6) if g not in frozen_set(plan, s, spe, DESK.num_layers)) + 1
            for g in unfreeze_order(DESK.num_layers)
        }
        scheduled["head"] = 1
        first_change = {}
        violations = []

        def hook(t, params):
            for name, tensor in params.items():
                group = group_of(name)
                changed = not np.array_equal(tensor.data, init[name])
                if t < scheduled[group] and changed:
                    violations.append((name, t))
                if changed:
                    first_change.setdefault(group, t)

        finetune_classifier(parent, splits, vocab, plan, seed=0, step_hook=hook)
        assert not violations, violations[:5]
        assert first_change == scheduled  # each group starts moving exactly at its step
        d.update(steps_per_epoch=spe, unfreeze_steps=[scheduled[g] for g in unfreeze_order(DESK.num_layers)])

        untouched = 0
        for k in (0, 1, 2):
            kplan = preset("STL", peak_lr=1e-3, batch_size=16, epochs=2, freeze_last_k=k)
            params, _ = finetune_classifier(parent, splits, vocab, kplan, seed=0)
            trainable = {"head"} | {f"encoder.{i}" for i in range(DESK.num_layers - k + 1, DESK.num_layers + 1)}
            for name, tensor in params.items():
                if group_of(name) not in trainable:
                    assert np.array_equal(tensor.data, init[name]), (k, name)
                    untouched += 1
        d.update(frozen_tensors_checked=untouched)


# ---------------------------------------------------------------------------
# 4. Split arithmetic
# ---------------------------------------------------------------------------


def test_04_split_arithmetic(criterion):
    with criterion(4, "4845 -> 969/775/3101; 10 folds disjoint and exhaustive for N=10..500") as d:
        records = syn.sentiment_dataset(4845, seed=0)
        splits = split_dataset(records, seed=0)
        sizes = (len(splits.test), len(splits.validation), len(splits.train))
        assert sizes == (969, 775, 3101)
        ids = sorted(id(r) for part in (splits.train, splits.validation, splits.test) for r in part)
        assert ids == sorted(id(r) for r in records)
        for n in range(10, 501):
            folds = kfold_split(list(range(n)), k=10, seed=n)
            tests = [t for _, t in folds]
            assert sorted(x for t in tests for x in t) == list(range(n)), n
            for train, test in folds:
                assert not set(train) & set(test) and len(train) + len(test) == n
        d.update(split=sizes, fold_sizes_checked=491)


# ---------------------------------------------------------------------------
# 5. Metric oracles
# ---------------------------------------------------------------------------


def _reference_classification(pred, gold, logits, weights):
    n = len(gold)
    acc = sum(p == g for p, g in zip(pred, gold)) / n
    f1 = []
    for c in range(3):
        tp = sum(p == c and g == c for p, g in zip(pred, gold))
        fp = sum(p == c and g != c for p, g in zip(pred, gold))
        fn = sum(p != c and g == c for p, g in zip(pred, gold))
        f1.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    wce = 0.0
    for row, g in zip(logits, gold):
        top = max(row)
        nll = top + math.log(sum(math.exp(x - top) for x in row)) - row[g]
        wce += weights[g] * nll
    return acc, sum(f1) / 3, wce / n


def test_05_metric_oracles(criterion):
    with criterion(5, "accuracy, macro F1, weighted CE, MSE, R2 match brute force on 1000 cases") as d:
        assert compute_class_weights([25, 75])[0] == 2.0
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 50))
            gold = rng.integers(0, 3, n).tolist()
            pred = rng.integers(0, 3, n).tolist()
            logits = rng.normal(scale=2.0, size=(n, 3))
            counts = [max(gold.count(c), 1) for c in range(3)]
            weights = [math.sqrt(sum(counts) / c) for c in counts]
            report = compute_classification_metrics(pred, gold, weights, logits)
            acc, f1, wce = _reference_classification(pred, gold, logits.tolist(), weights)
            assert report.accuracy == acc
            assert abs(report.macro_f1 - f1) <= 1e-9
            assert abs(report.weighted_ce - wce) <= 1e-9
            assert compute_class_weights(counts) == pytest.approx(weights, abs=1e-12)

            target = rng.uniform(-1, 1, n + 1).tolist()
            guess = rng.uniform(-1, 1, n + 1).tolist()
            reg = compute_regression_metrics(guess, target)
            mse = sum((a - b) ** 2 for a, b in zip(guess, target)) / len(target)
            mean = sum(target) / len(target)
            r2 = 1 - mse * len(target) / sum((t - mean) ** 2 for t in target)
            worst = max(worst, abs(reg.mse - mse), abs(reg.r2 - r2))
            assert abs(reg.mse - mse) <= 1e-9 and abs(reg.r2 - r2) <= 1e-9
        d.update(cases=1000, worst_regression_err=f"{worst:.1e}")


# ---------------------------------------------------------------------------
# 6. Overfit oracle
# ---------------------------------------------------------------------------


def test_06_overfit_oracle(criterion):
    with criterion(6, "desk config reaches 100% train accuracy on 32 sentences within 200 epochs") as d:
        records = syn.sentiment_dataset(32, seed=6)
        vocab = build_vocab([r.text for r in records], DESK.vocab_size)
        started = time.perf_counter()
        plan = preset("NA", peak_lr=1e-3, batch_size=32, epochs=200)
        # validation and test are the train sentences themselves, scored in eval mode
        _, record = finetune_classifier(init_params(DESK, 0), Splits(records, records, records), vocab, plan, seed=0)
        elapsed = time.perf_counter() - started
        reached = next((i + 1 for i, a in enumerate(record.val_accuracy) if a == 1.0), None)
        d.update(epoch_reached=reached, seconds=round(elapsed, 1))
        assert reached is not None
        assert elapsed < 120


# ---------------------------------------------------------------------------
# 7. Masked-LM learning
# ---------------------------------------------------------------------------


def test_07_mlm_learning(criterion):
    with criterion(7, "3 MLM epochs on 5000 grammar sentences beat 5x chance on held-out masks") as d:
        corpus = syn.grammar_corpus(5000, seed=7)
        held_out = syn.grammar_corpus(500, seed=70)
        vocab = build_vocab(corpus, DESK.vocab_size)
        started = time.perf_counter()
        plan = preset("STL", peak_lr=1e-3, batch_size=32)
        params, _ = pretrain_mlm(init_params(DESK, 0), corpus, vocab, plan, 3, seed=0)
        elapsed = time.perf_counter() - started
        accuracy = evaluate_mlm(params, held_out, vocab, seed=0)
        chance = 1.0 / len(vocab)
        d.update(masked_acc=round(accuracy, 3), chance=f"{chance:.4f}", seconds=round(elapsed, 1))
        assert accuracy > 5 * chance
        assert elapsed < 600


# ---------------------------------------------------------------------------
# 8. Further pre-training (three arms)
# ---------------------------------------------------------------------------


def test_08_further_pretraining(criterion, tmp_path):
    with criterion(8, "median val loss: domain further pre-training <= vanilla (3-arm table)") as d:
        domain = syn.financial_corpus(5000, seed=303)
        n_train = 250

        def splits(seed):
            recs = syn.sentiment_dataset(n_train + 600, seed=2000 + seed)
            return Splits(recs[:n_train], recs[n_train:n_train + 300], recs[n_train + 300:])

        vocab = build_vocab(domain + [r.text for r in splits(0).train], DESK.vocab_size)
        parent = init_params(DESK, 0)
        plan = preset("STL", peak_lr=1e-3, batch_size=16, epochs=6)
        pretrain_plan = preset("STL", peak_lr=1e-3, batch_size=32, epochs=3)
        results = ex.ablate_pretraining(parent, splits, vocab, domain, plan, pretrain_plan, SEEDS)
        _write_grid(tmp_path, results)
        (tmp_path / "report.json").write_text(json.dumps({"provenance": {"kind": "ablate-pretraining", "config_hash": "-"}}))
        cmd_report(tmp_path, str(tmp_path / "table.md"))
        table = (tmp_path / "table.md").read_text()
        print(table)
        rows = {r.cell: r.summary() for r in results}
        assert list(rows) == ["vanilla", "task", "domain"] and all(r.ok for r in results)
        assert all(f"| {arm} |" in table for arm in rows)
        val = {arm: round(row["min_val_loss"], 4) for arm, row in rows.items()}
        d.update(median_val_loss=val)
        assert rows["domain"]["min_val_loss"] <= rows["vanilla"]["min_val_loss"]


# ---------------------------------------------------------------------------
# 9. Overfitting with an aggressive learning rate
# ---------------------------------------------------------------------------


def test_09_overfitting_guard(criterion):
    with criterion(9, "lr 1e-3 on 250 examples: NA overfits (>=4/5), ALL ends within 10% of its min (>=4/5)") as d:
        docs = syn.financial_documents(800, 6, seed=101)
        corpus = [s for doc in docs for s in doc]
        vocab = build_vocab(corpus + [r.text for r in syn.sentiment_dataset(2000, seed=7)], DESK.vocab_size)

        def splits(seed):
            # 15% of labels flipped at random, standing in for annotator disagreement
            recs = syn.sentiment_dataset(550, seed=3000 + seed, label_noise=0.15)
            return Splits(recs[:250], recs[250:400], recs[400:])

        plan = preset("NA", peak_lr=1e-3, batch_size=8, epochs=6)
        results = {r.cell: r for r in ex.ablate_strategies(init_params(DESK, 0), splits, vocab, plan, SEEDS, ["NA", "ALL"])}
        na = [ex.rising_after_minimum(rec.val_losses) for rec in results["NA"].records]
        all_ = [ex.final_within(rec.val_losses, 0.10) for rec in results["ALL"].records]
        d.update(na_rising=f"{sum(na)}/5", all_flat=f"{sum(all_)}/5")
        assert sum(na) >= 4
        assert sum(all_) >= 4


# ---------------------------------------------------------------------------
# 10. Fine-tuning only the top k layers
# ---------------------------------------------------------------------------


def test_10_last_k_layers(criterion):
    with criterion(10, "median test accuracy non-decreasing over k in {0,1,L/2,L}, k=0 strictly worst") as d:
        domain = syn.financial_corpus(5000, seed=303)
        vocab = build_vocab(domain + [r.text for r in syn.sentiment_dataset(2000, seed=7)], DESK.vocab_size)
        parent, _ = pretrain_mlm(
            init_params(DESK, 0), domain, vocab, preset("STL", peak_lr=1e-3, batch_size=32), 3, seed=0
        )

        def splits(seed):
            recs = syn.sentiment_dataset(1100, seed=4000 + seed)
            return Splits(recs[:500], recs[500:800], recs[800:])

        # a gentler rate than the other analogues: at 1e-3 the deepest cells
        # overwrite what pre-training put into the lower layers

        L = DESK.num_layers
        ks = [0, 1, L // 2, L]
        plan = preset("STL", peak_lr=3e-4, batch_size=16, epochs=6)
        results = ex.ablate_lastk(parent, splits, vocab, plan, SEEDS, ks)
        acc = [r.summary()["accuracy"] for r in results]
        d.update(median_accuracy=dict(zip(ks, [round(a, 3) for a in acc])))
        assert all(r.ok for r in results)
        assert all(a <= b for a, b in zip(acc, acc[1:]))
        assert all(acc[0] < a for a in acc[1:])


# ---------------------------------------------------------------------------
# 11. Reproducibility of every command
# ---------------------------------------------------------------------------


def _tree(path):
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_11_reproducibility(criterion, tmp_path):
    with criterion(11, "every CLI command repeated with the same config and seed is bit-identical") as d:
        small = {"num_layers": 2, "hidden": 32, "num_heads": 4, "ff_dim": 64, "vocab_size": 500, "max_seq_len": 32}
        generated = []
        for attempt in ("gen-a", "gen-b"):
            root = tmp_path / attempt
            assert main(["generate", "--out", str(root), "--seed", "3", "--size", "120", "--corpus-docs", "20"]) == EXIT_OK
            # configs name their data by absolute path, which is the only intended difference
            generated.append({k: v.replace(str(root).encode(), b"ROOT") for k, v in _tree(root).items()})
        assert generated[0] == generated[1]

        configs = tmp_path / "gen-a" / "configs"
        for path in configs.glob("*.json"):
            cfg = json.loads(path.read_text())
            cfg.update(model=small, folds=3, seeds=[0, 1])
            cfg["plan"]["epochs"] = 2
            cfg["pretrain_plan"]["epochs"] = 1
            if cfg["kind"] == "size-sweep":
                cfg["grid"] = {"sizes": [30, 60]}
            path.write_text(json.dumps(cfg))

        trees = []
        for attempt in ("runs-a", "runs-b"):
            runs = tmp_path / attempt
            commands = [
                ["pretrain", "--config", str(configs / "pretrain.json"), "--out", str(runs / "pre")],
                ["finetune", "--config", str(configs / "finetune-cls.json"), "--out", str(runs / "cls"),
                 "--checkpoint", str(runs / "pre" / "pretrained.mbf")],
                ["finetune", "--config", str(configs / "finetune-reg.json"), "--out", str(runs / "reg")],
            ]
            for kind in ("ablate-strategies", "ablate-layers", "ablate-lastk", "ablate-pretraining", "size-sweep"):
                commands.append(["ablate", "--config", str(configs / f"{kind}.json"), "--out", str(runs / kind)])
            for cmd in commands:
                assert main(cmd) == EXIT_OK, cmd
            for name in ("pre", "cls", "reg", "ablate-lastk"):
                assert main(["report", str(runs / name), "--out", str(runs / f"{name}.md")]) == EXIT_OK
            trees.append(_tree(runs))
        a, b = trees
        assert a.keys() == b.keys()
        differing = [k for k in a if a[k] != b[k]]
        d.update(commands=len(commands) + 5, files_compared=len(a) + len(generated[0]), differing=len(differing))
        assert not differing, differing[:5]
