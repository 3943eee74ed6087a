import struct

import numpy as np
import pytest

from deskbert.checkpoint import FORMAT_VERSION, MAGIC, Checkpoint, file_hash, load_checkpoint, save_checkpoint
from deskbert.data import SPECIAL_TOKENS
from deskbert.errors import ConfigMismatchError, CorruptCheckpointError, UnsupportedVersionError
from deskbert.model import ModelConfig, init_params
from deskbert.strategies import AdamState

CFG = ModelConfig(num_layers=1, hidden=8, num_heads=2, ff_dim=8, vocab_size=7, max_seq_len=6)
VOCAB = list(SPECIAL_TOKENS) + ["up", "down"]


def _save(tmp_path, optimizer=False, name="m.mbf"):
    params = init_params(CFG, 1)
    state = None
    if optimizer:
        state = AdamState(params)
        state.m["head.classifier.bias"] += 0.5
        state.counts["head.classifier.bias"] = 3
        state.step = 3
    ckpt = Checkpoint(CFG, params, VOCAB, {"lineage": ["init"]}, state)
    path = tmp_path / name
    digest = save_checkpoint(path, ckpt)
    return path, digest, ckpt


def test_round_trip(tmp_path):
    path, digest, original = _save(tmp_path, optimizer=True)
    assert digest == file_hash(path)
    loaded = load_checkpoint(path, expected_config=CFG)
    assert loaded.config == CFG and loaded.vocab == VOCAB
    assert loaded.provenance == {"lineage": ["init"]}
    assert loaded.params.equals(original.params)
    assert loaded.optimizer.counts["head.classifier.bias"] == 3 and loaded.optimizer.step == 3
    np.testing.assert_array_equal(loaded.optimizer.m["head.classifier.bias"], 0.5)


def test_save_is_byte_deterministic(tmp_path):
    a, da, _ = _save(tmp_path, name="a.mbf")
    b, db, _ = _save(tmp_path, name="b.mbf")
    assert a.read_bytes() == b.read_bytes() and da == db


def test_layout(tmp_path):
    path, _, _ = _save(tmp_path)
    raw = path.read_bytes()
    assert raw[:4] == MAGIC
    version, header_len = struct.unpack("<II", raw[4:12])
    assert version == FORMAT_VERSION
    n_floats = sum(t.data.size for _, t in init_params(CFG, 1).items())
    assert len(raw) == 12 + header_len + 4 * n_floats


def test_truncated_file(tmp_path):
    path, _, _ = _save(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(CorruptCheckpointError) as info:
        load_checkpoint(path)
    assert info.value.check == "tensor bytes"
    path.write_bytes(raw[:40])
    with pytest.raises(CorruptCheckpointError) as info:
        load_checkpoint(path)
    assert info.value.check == "header"


def test_bad_magic(tmp_path):
    path, _, _ = _save(tmp_path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CorruptCheckpointError) as info:
        load_checkpoint(path)
    assert info.value.check == "magic"


def test_unknown_version(tmp_path):
    path, _, _ = _save(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(UnsupportedVersionError) as info:
        load_checkpoint(path)
    assert info.value.version == 99


def test_config_mismatch(tmp_path):
    path, _, _ = _save(tmp_path)
    other = ModelConfig(**{**CFG.to_dict(), "ff_dim": 16})
    with pytest.raises(ConfigMismatchError):
        load_checkpoint(path, expected_config=other)
