"""BERT-style encoder with masked-LM, next-sentence, classification and regression heads.

Post-norm residual blocks (attention, then a GELU feed-forward network), learned
token/position/segment embeddings, and no pooler: task heads read the raw
[CLS] vector of a chosen layer.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ParameterError

HeadSource = Union[str, int]

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 4
    hidden: int = 64
    num_heads: int = 4
    ff_dim: int = 256
    vocab_size: int = 2000
    max_seq_len: int = 64
    dropout: float = 0.1
    type_vocab: int = 2
    num_classes: int = 3
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        for name in ("num_layers", "hidden", "num_heads", "ff_dim", "vocab_size", "num_classes"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be a positive integer")
        if self.hidden % self.num_heads:
            raise ParameterError(f"hidden ({self.hidden}) must be divisible by num_heads ({self.num_heads})")
        if self.max_seq_len < 3:
            raise ParameterError("max_seq_len must leave room for [CLS], one token and [SEP]")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        if self.type_vocab != 2:
            raise ParameterError("type_vocab is fixed at 2 (sentence A / sentence B)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def group_names(num_layers: int) -> List[str]:
    """Layer groups from bottom to top."""
    return ["embeddings"] + [f"encoder.{i}" for i in range(1, num_layers + 1)] + ["head"]


def group_of(name: str) -> str:
    if name.startswith("embeddings."):
        return "embeddings"
    if name.startswith("encoder."):
        return "encoder." + name.split(".")[1]
    if name.startswith("head."):
        return "head"
    raise ParameterError(f"parameter {name!r} belongs to no layer group")


def _param_shapes(config: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    h, f, v = config.hidden, config.ff_dim, config.vocab_size
    shapes = [
        ("embeddings.token", (v, h)),
        ("embeddings.position", (config.max_seq_len, h)),
        ("embeddings.segment", (config.type_vocab, h)),
        ("embeddings.norm.gain", (h,)),
        ("embeddings.norm.bias", (h,)),
    ]
    for layer in range(1, config.num_layers + 1):
        p = f"encoder.{layer}"
        for proj in ("query", "key", "value", "output"):
            shapes += [(f"{p}.attention.{proj}.weight", (h, h)), (f"{p}.attention.{proj}.bias", (h,))]
        shapes += [
            (f"{p}.attention.norm.gain", (h,)),
            (f"{p}.attention.norm.bias", (h,)),
            (f"{p}.ffn.inner.weight", (h, f)),
            (f"{p}.ffn.inner.bias", (f,)),
            (f"{p}.ffn.outer.weight", (f, h)),
            (f"{p}.ffn.outer.bias", (h,)),
            (f"{p}.ffn.norm.gain", (h,)),
            (f"{p}.ffn.norm.bias", (h,)),
        ]
    shapes += [
        ("head.mlm.weight", (h, v)),
        ("head.mlm.bias", (v,)),
        ("head.nsp.weight", (h, 2)),
        ("head.nsp.bias", (2,)),
        ("head.classifier.weight", (h, config.num_classes)),
        ("head.classifier.bias", (config.num_classes,)),
        ("head.regressor.weight", (h, 1)),
        ("head.regressor.bias", (1,)),
    ]
    return shapes


class ModelParams:
    """Named parameter tensors for one :class:`ModelConfig`, in a fixed order."""

    def __init__(self, config: ModelConfig, tensors: "OrderedDict[str, Tensor]"):
        expected = [name for name, _ in _param_shapes(config)]
        if list(tensors) != expected:
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ParameterError(f"parameter set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in _param_shapes(config):
            if tensors[name].shape != shape:
                raise ParameterError(f"{name}: expected shape {shape}, got {tensors[name].shape}")
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def groups(self) -> Dict[str, List[str]]:
        out: Dict[str, List[str]] = {g: [] for g in group_names(self.config.num_layers)}
        for name in self.tensors:
            out[group_of(name)].append(name)
        return out

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            OrderedDict((name, Tensor(t.data.copy(), requires_grad=True)) for name, t in self.tensors.items()),
        )

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            t.data = np.array(arrays[name], dtype=t.dtype, copy=True)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        names = [name for name, _ in _param_shapes(config)]
        missing = [n for n in names if n not in arrays]
        if missing:
            raise ParameterError(f"missing parameters: {missing[:5]}")
        return cls(
            config,
            OrderedDict((n, Tensor(np.array(arrays[n], dtype=np.float32), requires_grad=True)) for n in names),
        )

    def equals(self, other: "ModelParams") -> bool:
        """Bit-identical comparison of every tensor."""
        return list(self.tensors) == list(other.tensors) and all(
            np.array_equal(a.data, other.tensors[n].data) for n, a in self.tensors.items()
        )


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).astype(np.float32)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Weights ~ truncated normal(0, 0.02) cut at two std, biases 0, norm gains 1."""
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in _param_shapes(config):
        if name.endswith(".gain"):
            data = np.ones(shape, dtype=np.float32)
        elif name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = _truncated_normal(rng, shape, INIT_STD)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(config, tensors)


@dataclass
class EncoderOutput:
    hidden_states: List[Tensor]
    attention_mask: np.ndarray

    @property
    def last(self) -> Tensor:
        return self.hidden_states[-1]


def _attention(params: ModelParams, prefix: str, x: Tensor, key_mask: np.ndarray, training, rng) -> Tensor:
    cfg = params.config
    b, s, h = x.shape
    a, d = cfg.num_heads, cfg.head_dim

    def project(which):
        y = ag.linear(x, params[f"{prefix}.{which}.weight"], params[f"{prefix}.{which}.bias"])
        return ag.transpose(ag.reshape(y, (b, s, a, d)), (0, 2, 1, 3))

    q, k, v = project("query"), project("key"), project("value")
    scores = ag.scale(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d))
    probs = ag.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    probs = ag.dropout(probs, cfg.dropout, training, rng)
    context = ag.reshape(ag.transpose(ag.matmul(probs, v), (0, 2, 1, 3)), (b, s, h))
    return ag.linear(context, params[f"{prefix}.output.weight"], params[f"{prefix}.output.bias"])


def encode(
    params: ModelParams,
    token_ids,
    segment_ids=None,
    attention_mask=None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> EncoderOutput:
    """Run the encoder; returns the embedding output plus every layer's hidden states.

    Keys at positions where ``attention_mask`` is 0 get zero attention weight,
    so the contents of padding never reach real positions.
    """
    cfg = params.config
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ParameterError(f"token_ids must be [batch, seq], got shape {ids.shape}")
    batch, seq = ids.shape
    if seq > cfg.max_seq_len:
        raise ParameterError(f"sequence length {seq} exceeds max_seq_len {cfg.max_seq_len}")
    segs = np.zeros_like(ids) if segment_ids is None else np.asarray(segment_ids, dtype=np.int64)
    mask = np.ones_like(ids) if attention_mask is None else np.asarray(attention_mask, dtype=np.int64)
    if segs.shape != ids.shape or mask.shape != ids.shape:
        raise ParameterError("segment_ids and attention_mask must match token_ids in shape")
    if not np.isin(mask, (0, 1)).all():
        raise ParameterError("attention_mask must be 0/1")
    key_mask = mask.astype(bool)
    eps = cfg.layer_norm_eps

    positions = np.broadcast_to(np.arange(seq), (batch, seq))
    x = ag.add(
        ag.add(ag.embedding_lookup(params["embeddings.token"], ids), ag.embedding_lookup(params["embeddings.position"], positions)),
        ag.embedding_lookup(params["embeddings.segment"], segs),
    )
    x = ag.layer_norm(x, params["embeddings.norm.gain"], params["embeddings.norm.bias"], eps)
    x = ag.dropout(x, cfg.dropout, training, rng)
    hidden = [x]
    for layer in range(1, cfg.num_layers + 1):
        p = f"encoder.{layer}"
        attn = ag.dropout(_attention(params, f"{p}.attention", x, key_mask, training, rng), cfg.dropout, training, rng)
        x = ag.layer_norm(ag.add(x, attn), params[f"{p}.attention.norm.gain"], params[f"{p}.attention.norm.bias"], eps)
        inner = ag.gelu(ag.linear(x, params[f"{p}.ffn.inner.weight"], params[f"{p}.ffn.inner.bias"]))
        ff = ag.linear(inner, params[f"{p}.ffn.outer.weight"], params[f"{p}.ffn.outer.bias"])
        ff = ag.dropout(ff, cfg.dropout, training, rng)
        x = ag.layer_norm(ag.add(x, ff), params[f"{p}.ffn.norm.gain"], params[f"{p}.ffn.norm.bias"], eps)
        hidden.append(x)
    return EncoderOutput(hidden_states=hidden, attention_mask=mask)


def mlm_logits(params: ModelParams, output: EncoderOutput, positions) -> Tensor:
    """Vocabulary logits at ``positions``, an [n, 2] array of (batch, seq) pairs."""
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    batch, seq, h = output.last.shape
    if pos.size and (pos.min() < 0 or pos[:, 0].max() >= batch or pos[:, 1].max() >= seq):
        raise IndexError(f"masked position outside [{batch}, {seq}]")
    flat = ag.reshape(output.last, (batch * seq, h))
    rows = ag.embedding_lookup(flat, pos[:, 0] * seq + pos[:, 1])
    return ag.linear(rows, params["head.mlm.weight"], params["head.mlm.bias"])


def nsp_logits(params: ModelParams, output: EncoderOutput) -> Tensor:
    cls = ag.select(output.last, 0, axis=1)
    return ag.linear(cls, params["head.nsp.weight"], params["head.nsp.bias"])


def check_head_source(head_source: HeadSource, num_layers: int) -> HeadSource:
    if head_source in ("last", "mean"):
        return head_source
    if isinstance(head_source, (int, np.integer)) and not isinstance(head_source, bool):
        if 1 <= head_source <= num_layers:
            return int(head_source)
    raise ParameterError(f"head_source must be 'last', 'mean' or a layer in 1..{num_layers}, got {head_source!r}")


def cls_vector(
    output: EncoderOutput, head_source: HeadSource = "last", include_embeddings: bool = True
) -> Tensor:
    """The [CLS] vector of the selected layer, or the mean over layers."""
    num_layers = len(output.hidden_states) - 1
    head_source = check_head_source(head_source, num_layers)
    if head_source == "last":
        return ag.select(output.last, 0, axis=1)
    if head_source == "mean":
        states = output.hidden_states if include_embeddings else output.hidden_states[1:]
        total = ag.select(states[0], 0, axis=1)
        for state in states[1:]:
            total = ag.add(total, ag.select(state, 0, axis=1))
        return ag.scale(total, 1.0 / len(states))
    return ag.select(output.hidden_states[head_source], 0, axis=1)


def classify(
    params: ModelParams,
    output: EncoderOutput,
    head_source: HeadSource = "last",
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    include_embeddings: bool = True,
) -> Tensor:
    cls = cls_vector(output, head_source, include_embeddings)
    cls = ag.dropout(cls, params.config.dropout, training, rng)
    return ag.linear(cls, params["head.classifier.weight"], params["head.classifier.bias"])


def regress(
    params: ModelParams,
    output: EncoderOutput,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    cls = ag.dropout(ag.select(output.last, 0, axis=1), params.config.dropout, training, rng)
    score = ag.linear(cls, params["head.regressor.weight"], params["head.regressor.bias"])
    return ag.reshape(score, (score.shape[0],))


_HEAD_PREFIX = {
    "mlm": ("head.mlm.",),
    "mlm+nsp": ("head.mlm.", "head.nsp."),
    "classification": ("head.classifier.",),
    "regression": ("head.regressor.",),
}


def task_parameter_names(
    params: ModelParams, task: str, head_source: HeadSource = "last"
) -> List[str]:
    """Parameters that receive gradient for ``task``.

    Other tasks' heads are excluded, and so are encoder layers above the
    selected classification layer.
    """
    if task not in _HEAD_PREFIX:
        raise ParameterError(f"unknown task {task!r}")
    top = params.config.num_layers
    if task == "classification":
        source = check_head_source(head_source, top)
        if isinstance(source, int):
            top = source
    names = []
    for name in params:
        group = group_of(name)
        if group == "head":
            if name.startswith(_HEAD_PREFIX[task]):
                names.append(name)
        elif group == "embeddings" or int(group.split(".")[1]) <= top:
            names.append(name)
    return names
