"""Tokenization, dataset readers, corpus filtering, splits and MLM/NSP batches."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, ParseError, ValidationError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

LABELS = ("positive", "negative", "neutral")
LABEL_TO_ID = {name: i for i, name in enumerate(LABELS)}
AGREEMENT_LEVELS = (50, 66, 75, 100)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> List[str]:
    """Lowercase, then split into word runs and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:5]) != SPECIAL_TOKENS:
            raise InputError("vocabulary must start with the five special tokens")
        if len(set(tokens)) != len(tokens):
            raise InputError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def ids(self, tokens: Iterable[str]) -> List[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        out = []
        for i in ids:
            tok = self.tokens[int(i)]
            if skip_special and tok in SPECIAL_TOKENS and tok != UNK:
                continue
            out.append(tok)
        return " ".join(out)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens


def build_vocab(corpus: Iterable[str], size: int) -> Vocabulary:
    """Keep the ``size - 5`` most frequent tokens; ties go to the lexicographically smaller."""
    if size <= len(SPECIAL_TOKENS):
        raise InputError("vocabulary size must exceed the 5 special tokens")
    counts = Counter()
    n_sentences = 0
    for sentence in corpus:
        n_sentences += 1
        counts.update(tokenize(sentence))
    if n_sentences == 0:
        raise InputError("cannot build a vocabulary from an empty corpus")
    for special in SPECIAL_TOKENS:
        counts.pop(special.lower(), None)
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(list(SPECIAL_TOKENS) + [tok for tok, _ in ranked[: size - len(SPECIAL_TOKENS)]])


def encode_tokens(vocab: Vocabulary, tokens: Sequence[str], max_len: int) -> Tuple[List[int], List[int]]:
    content = vocab.ids(tokens)[: max_len - 2]
    ids = [CLS_ID] + content + [SEP_ID]
    mask = [1] * len(ids) + [0] * (max_len - len(ids))
    return ids + [PAD_ID] * (max_len - len(ids)), mask


def tokenize_encode(vocab: Vocabulary, text: str, max_len: int) -> Tuple[List[int], List[int]]:
    """``[CLS] tokens [SEP] [PAD]...`` truncated from the tail, plus the attention mask."""
    if max_len < 3:
        raise InputError("max_len must be at least 3")
    return encode_tokens(vocab, tokenize(text), max_len)


def encode_batch(vocab: Vocabulary, texts: Sequence[str], max_len: int) -> Tuple[np.ndarray, np.ndarray]:
    """Encode and pad to the longest sequence in the batch (at most ``max_len``)."""
    tokens = [tokenize(t)[: max_len - 2] for t in texts]
    width = max((len(t) for t in tokens), default=0) + 2
    ids = np.zeros((len(texts), width), dtype=np.int64)
    mask = np.zeros((len(texts), width), dtype=np.int64)
    for row, toks in enumerate(tokens):
        encoded, m = encode_tokens(vocab, toks, width)
        ids[row], mask[row] = encoded, m
    return ids, mask


# ---------------------------------------------------------------------------
# Records and file formats
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledSentence:
    text: str
    label: str
    agreement: Optional[int] = None

    def __post_init__(self):
        if self.label not in LABEL_TO_ID:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.agreement is not None and self.agreement not in AGREEMENT_LEVELS:
            raise ValidationError(f"agreement must be one of {AGREEMENT_LEVELS}")

    @property
    def label_id(self) -> int:
        return LABEL_TO_ID[self.label]


@dataclass(frozen=True)
class RegressionExample:
    text: str
    score: float
    target_entity: str = ""

    def __post_init__(self):
        if not (isinstance(self.score, (int, float)) and -1.0 <= self.score <= 1.0):
            raise ValidationError(f"score must lie in [-1, 1], got {self.score!r}")


_AGREEMENT_FROM_NAME = (("allagree", 100), ("75agree", 75), ("66agree", 66), ("50agree", 50))


def agreement_from_filename(path) -> Optional[int]:
    name = Path(path).name.lower()
    for marker, level in _AGREEMENT_FROM_NAME:
        if marker in name:
            return level
    return None


def parse_phrasebank(path, errors: Optional[list] = None) -> List[LabeledSentence]:
    """Read ``sentence@label`` lines.

    The agreement level comes from the file name (``Sentences_AllAgree.txt``
    and friends) unless a line carries a tab-separated override column.
    Malformed lines are collected: if ``errors`` is given they are appended
    to it as ``(line_number, message)``, otherwise a :class:`ParseError`
    listing all of them is raised.
    """
    path = Path(path)
    default_agreement = agreement_from_filename(path)
    records, problems = [], []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            agreement = default_agreement
            if "\t" in line:
                line, _, column = line.rpartition("\t")
                try:
                    agreement = int(column.strip().rstrip("%"))
                except ValueError:
                    problems.append((lineno, f"bad agreement column {column!r}"))
                    continue
                if agreement not in AGREEMENT_LEVELS:
                    problems.append((lineno, f"agreement {agreement} not in {AGREEMENT_LEVELS}"))
                    continue
            if "@" not in line:
                problems.append((lineno, "missing '@' separator"))
                continue
            text, _, label = line.rpartition("@")
            label = label.strip().lower()
            if label not in LABEL_TO_ID:
                problems.append((lineno, f"unknown label {label!r}"))
                continue
            if not text.strip():
                problems.append((lineno, "empty sentence"))
                continue
            records.append(LabeledSentence(text.strip(), label, agreement))
    if problems:
        if errors is None:
            raise ParseError(path, problems)
        errors.extend(problems)
    return records


def write_phrasebank(path, records: Iterable[LabeledSentence], agreement_column: bool = False) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            suffix = f"\t{r.agreement}" if agreement_column and r.agreement is not None else ""
            fh.write(f"{r.text}@{r.label}{suffix}\n")


def parse_fiqa(path) -> List[RegressionExample]:
    path = Path(path)
    try:
        items = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(path, [(exc.lineno, exc.msg)]) from exc
    if not isinstance(items, list):
        raise ParseError(path, [(1, "expected a JSON array")])
    records = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or not {"text", "score"} <= set(item):
            raise ParseError(path, [(i + 1, f"element {i} needs text and score fields")])
        score = item["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ValidationError(f"{path}: element {i} score is not a number")
        if not -1.0 <= score <= 1.0:
            raise ValidationError(f"{path}: element {i} score {score} outside [-1, 1]")
        records.append(RegressionExample(str(item["text"]), float(score), str(item.get("target", ""))))
    return records


def write_fiqa(path, records: Iterable[RegressionExample]) -> None:
    payload = [{"text": r.text, "score": r.score, "target": r.target_entity} for r in records]
    Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def read_corpus_dir(path) -> List[List[str]]:
    """Every ``*.txt`` file under ``path`` (sorted by name) is a document of one sentence per line."""
    path = Path(path)
    if not path.is_dir():
        raise InputError(f"corpus directory {path} does not exist")
    documents = []
    for file in sorted(path.glob("*.txt")):
        lines = [ln.strip() for ln in file.read_text(encoding="utf-8").splitlines()]
        lines = [ln for ln in lines if ln]
        if lines:
            documents.append(lines)
    return documents


def read_keywords(path) -> List[str]:
    words = [ln.strip().lower() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    return [w for w in words if w and not w.startswith("#")]


DEFAULT_FINANCIAL_KEYWORDS = (
    "profit", "revenue", "sales", "earnings", "shares", "stock", "dividend", "quarter",
    "loss", "losses", "operating", "net", "eur", "usd", "million", "percent", "market",
    "investor", "investors", "bank", "debt", "margin", "forecast", "guidance",
)


@dataclass
class FilterResult:
    documents: list
    kept: int
    total: int


def filter_corpus(documents: Sequence, keywords: Sequence[str]) -> FilterResult:
    """Keep documents containing at least one keyword as a whole token (case-insensitive).

    A document is either a string or a list of sentences.
    """
    if not keywords:
        raise InputError("keyword list must not be empty")
    wanted = {k.lower() for k in keywords}
    kept = []
    for doc in documents:
        text = doc if isinstance(doc, str) else " ".join(doc)
        if wanted.intersection(tokenize(text)):
            kept.append(doc)
    return FilterResult(kept, len(kept), len(documents))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class Splits:
    train: list
    validation: list
    test: list


def _split_counts(n: int) -> Tuple[int, int]:
    n_test = n // 5
    return n_test, (n - n_test) // 5


def split_dataset(records: Sequence, seed: int, stratify: bool = False) -> Splits:
    """20% test, then 20% of the remainder as validation, rest train.

    With ``stratify`` the same floor rule is applied within each label, so
    totals can be a little smaller than the unstratified counts.
    """
    records = list(records)
    if len(records) < 5:
        raise InputError("need at least 5 records to split")
    rng = np.random.default_rng(seed)
    if not stratify:
        order = rng.permutation(len(records))
        n_test, n_val = _split_counts(len(records))
        shuffled = [records[i] for i in order]
        return Splits(shuffled[n_test + n_val:], shuffled[n_test:n_test + n_val], shuffled[:n_test])
    train, val, test = [], [], []
    by_label = {}
    for r in records:
        by_label.setdefault(r.label, []).append(r)
    for label in sorted(by_label):
        group = by_label[label]
        order = rng.permutation(len(group))
        n_test, n_val = _split_counts(len(group))
        shuffled = [group[i] for i in order]
        test += shuffled[:n_test]
        val += shuffled[n_test:n_test + n_val]
        train += shuffled[n_test + n_val:]
    return Splits(train, val, test)


def kfold_split(records: Sequence, k: int = 10, seed: int = 0) -> List[Tuple[list, list]]:
    """Shuffled k folds; the first ``N % k`` folds hold one extra record."""
    records = list(records)
    n = len(records)
    if k < 2:
        raise InputError("k must be at least 2")
    if k > n:
        raise InputError(f"cannot make {k} folds from {n} records")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test_idx = order[start:start + size]
        train_idx = np.concatenate([order[:start], order[start + size:]])
        folds.append(([records[j] for j in train_idx], [records[j] for j in test_idx]))
        start += size
    return folds


# ---------------------------------------------------------------------------
# Masked-LM and next-sentence batches
# ---------------------------------------------------------------------------


@dataclass
class MaskedBatch:
    token_ids: np.ndarray
    attention_mask: np.ndarray
    masked_positions: np.ndarray  # [n, 2] (row, column)
    masked_targets: np.ndarray  # original ids at masked_positions
    segment_ids: Optional[np.ndarray] = None
    is_next: Optional[np.ndarray] = None


def mask_count(maskable: int, mask_rate: float) -> int:
    """``max(1, round(rate * maskable))`` with halves rounded up; 0 if nothing is maskable."""
    if maskable == 0:
        return 0
    return max(1, int(math.floor(mask_rate * maskable + 0.5)))


def _apply_masking(ids: np.ndarray, mask_rate: float, rng: np.random.Generator):
    maskable = (ids != PAD_ID) & (ids != CLS_ID) & (ids != SEP_ID)
    positions, targets = [], []
    masked_ids = ids.copy()
    for row in range(ids.shape[0]):
        candidates = np.flatnonzero(maskable[row])
        n = mask_count(candidates.size, mask_rate)
        if n == 0:
            continue
        chosen = np.sort(rng.choice(candidates, size=n, replace=False))
        for col in chosen:
            positions.append((row, col))
            targets.append(ids[row, col])
        masked_ids[row, chosen] = MASK_ID
    return (
        masked_ids,
        np.asarray(positions, dtype=np.int64).reshape(-1, 2),
        np.asarray(targets, dtype=np.int64),
    )


def make_mlm_batch(
    sentences: Sequence[str],
    vocab: Vocabulary,
    mask_rate: float = 0.15,
    seed: int = 0,
    max_len: int = 64,
) -> MaskedBatch:
    """Replace a random ``mask_rate`` share of each sentence's content tokens with [MASK]."""
    if not 0.0 < mask_rate < 1.0:
        raise InputError("mask_rate must be in (0, 1)")
    rng = np.random.default_rng(seed)
    ids, attn = encode_batch(vocab, sentences, max_len)
    masked, positions, targets = _apply_masking(ids, mask_rate, rng)
    return MaskedBatch(masked, attn, positions, targets, segment_ids=np.zeros_like(ids))


def _encode_pair(vocab: Vocabulary, a: List[int], b: List[int], max_len: int):
    a, b = list(a), list(b)
    while len(a) + len(b) > max_len - 3:
        (a if len(a) >= len(b) else b).pop()
    ids = [CLS_ID] + a + [SEP_ID] + b + [SEP_ID]
    segs = [0] * (len(a) + 2) + [1] * (len(b) + 1)
    return ids, segs


def make_nsp_batch(
    documents: Sequence[Sequence[str]],
    vocab: Vocabulary,
    seed: int = 0,
    num_pairs: Optional[int] = None,
    max_len: int = 64,
    mask_rate: float = 0.15,
) -> MaskedBatch:
    """Sentence pairs, half true continuations and half random second sentences.

    ``is_next`` is exactly balanced (the extra pair of an odd count is a true
    continuation). Random second sentences come from a different document.
    Segment id 0 covers [CLS], sentence A and the first [SEP].
    """
    docs = [list(d) for d in documents]
    eligible = [i for i, d in enumerate(docs) if len(d) >= 2]
    if len(eligible) < 2:
        raise InputError("need at least 2 documents with 2 or more sentences each")
    rng = np.random.default_rng(seed)
    starts = [(d, s) for d in eligible for s in range(len(docs[d]) - 1)]
    if num_pairs is None:
        num_pairs = len(starts)
    labels = np.array([1] * ((num_pairs + 1) // 2) + [0] * (num_pairs // 2), dtype=np.int64)
    rng.shuffle(labels)
    tokenized = [[vocab.ids(tokenize(s)) for s in d] for d in docs]

    rows, seg_rows = [], []
    for label in labels:
        d, s = starts[rng.integers(len(starts))]
        first = tokenized[d][s]
        if label == 1:
            second = tokenized[d][s + 1]
        else:
            others = [i for i in range(len(docs)) if i != d and docs[i]]
            other = others[rng.integers(len(others))]
            second = tokenized[other][rng.integers(len(docs[other]))]
        ids, segs = _encode_pair(vocab, first, second, max_len)
        rows.append(ids)
        seg_rows.append(segs)

    width = max(len(r) for r in rows)
    ids = np.zeros((num_pairs, width), dtype=np.int64)
    segs = np.zeros_like(ids)
    attn = np.zeros_like(ids)
    for i, (r, s) in enumerate(zip(rows, seg_rows)):
        ids[i, : len(r)] = r
        segs[i, : len(s)] = s
        attn[i, : len(r)] = 1
    masked, positions, targets = _apply_masking(ids, mask_rate, rng)
    return MaskedBatch(masked, attn, positions, targets, segment_ids=segs, is_next=labels)
