"""Tensor-directory checkpoint format."""

import json

import numpy as np
import pytest
import torch

from cogfatigue.checkpoint import (
    FORMAT_VERSION,
    load_module_tensors,
    load_tensor_dir,
    module_tensors,
    rng_state_from_hex,
    rng_state_to_hex,
    save_tensor_dir,
)
from cogfatigue.encoder import EncoderConfig, FatigueEncoder, init_encoder
from cogfatigue.errors import FormatError


def test_round_trip(tmp_path, rng):
    tensors = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "b.bias": rng.standard_normal(5).astype(np.float32),
    }
    path = save_tensor_dir(tmp_path / "ckpt", tensors, {"epoch": 3, "kind": "test"})
    back, meta = load_tensor_dir(path)
    assert meta["epoch"] == 3 and meta["kind"] == "test"
    for name in tensors:
        np.testing.assert_array_equal(back[name], tensors[name])
    assert (path / "meta").is_file()
    assert (path / "a.weight.bin").is_file()


def test_tensor_files_are_raw_float32(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = save_tensor_dir(tmp_path / "ckpt", {"x": arr}, {})
    raw = np.fromfile(path / "x.bin", dtype="<f4")
    np.testing.assert_array_equal(raw, np.arange(6, dtype=np.float32))
    doc = json.loads((path / "meta").read_text())
    assert doc["tensors"]["x"]["shape"] == [2, 3]
    assert doc["format_version"] == FORMAT_VERSION


def test_overwrite_atomic(tmp_path, rng):
    target = tmp_path / "ckpt"
    save_tensor_dir(target, {"x": np.zeros(2, dtype=np.float32)}, {"epoch": 0})
    save_tensor_dir(target, {"y": np.ones(3, dtype=np.float32)}, {"epoch": 1})
    tensors, meta = load_tensor_dir(target)
    assert set(tensors) == {"y"}
    assert meta["epoch"] == 1
    assert not list(tmp_path.glob("*.tmp-*"))


def test_version_check(tmp_path):
    path = save_tensor_dir(tmp_path / "ckpt", {}, {})
    doc = json.loads((path / "meta").read_text())
    doc["format_version"] = 999
    (path / "meta").write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="version"):
        load_tensor_dir(path)


def test_not_a_checkpoint(tmp_path):
    with pytest.raises(FormatError, match="meta"):
        load_tensor_dir(tmp_path)


def test_module_round_trip_including_int_buffers(tmp_path):
    cfg = EncoderConfig(
        conv_channels=(4, 4, 4), lstm_hidden=8, embed_dim=4, input_depth=2, input_hw=(8, 8)
    )
    enc = init_encoder(cfg, seed=3)
    # advance batch-norm state so buffers are non-trivial
    enc.train()
    enc(torch.randn(2, 3, 2, 8, 8))
    path = save_tensor_dir(tmp_path / "enc", module_tensors(enc, "m."), {"kind": "test"})

    tensors, _ = load_tensor_dir(path)
    clone = FatigueEncoder(cfg)
    load_module_tensors(clone, tensors, "m.")
    for name, val in enc.state_dict().items():
        assert torch.equal(clone.state_dict()[name], val), name
        assert clone.state_dict()[name].dtype == val.dtype, name


def test_missing_tensor_rejected(tmp_path):
    cfg = EncoderConfig(
        conv_channels=(4, 4, 4), lstm_hidden=8, embed_dim=4, input_depth=2, input_hw=(8, 8)
    )
    enc = init_encoder(cfg, seed=3)
    tensors = module_tensors(enc, "m.")
    tensors.pop("m.proj.bias")
    path = save_tensor_dir(tmp_path / "enc", tensors, {})
    loaded, _ = load_tensor_dir(path)
    with pytest.raises(FormatError, match="proj.bias"):
        load_module_tensors(FatigueEncoder(cfg), loaded, "m.")


def test_rng_state_hex_round_trip():
    torch.manual_seed(123)
    state = torch.get_rng_state()
    restored = rng_state_from_hex(rng_state_to_hex(state))
    assert torch.equal(state, restored)
