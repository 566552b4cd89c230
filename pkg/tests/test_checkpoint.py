import struct

import numpy as np
import pytest

from dualdual import trainer as tr
from dualdual.checkpoint import (MAGIC, CheckpointFormatError, decode, encode, load_checkpoint, save_checkpoint,
                                 state_tensors)
from dualdual.networks import build_model
from dualdual.signal_io import synthesize_dataset
from test_trainer import tiny_config


@pytest.fixture(scope="module")
def pairs():
    return synthesize_dataset(4, 11)


def trained(pairs, steps, seed=0, mode="dual"):
    cfg = tiny_config(mode)
    return tr.train(pairs, build_model(cfg, seed), steps, seed, cfg)


def test_encode_layout_by_hand():
    buf = encode({"b": 2, "a": "x"}, [("w", np.array([[1.0, 2.0]]))])
    meta = b"a=x\nb=2"
    head = MAGIC + struct.pack("<II", 1, len(meta)) + meta
    rec = struct.pack("<I", 1) + b"w" + struct.pack("<BB", 1, 2) + struct.pack("<II", 1, 2)
    assert buf == head + rec + np.array([1.0, 2.0], dtype="<f8").tobytes()


def test_decode_inverts_encode():
    arrays = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.float32([1.5])), ("c", np.zeros((0,)))]
    meta, tensors = decode(encode({"k": "v"}, arrays))
    assert meta == {"k": "v"}
    for name, arr in arrays:
        assert tensors[name].dtype == arr.dtype and np.array_equal(tensors[name], arr)


@pytest.mark.parametrize("mode", ["dual", "single"])
def test_round_trip_is_lossless_and_byte_stable(pairs, tmp_path, mode):
    state = trained(pairs, 2, mode=mode)
    p1, p2 = tmp_path / "a.ddgn", tmp_path / "b.ddgn"
    save_checkpoint(state, p1, "abc")
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2, "abc")
    assert p1.read_bytes() == p2.read_bytes()
    for (n1, a1), (n2, a2) in zip(state_tensors(state), state_tensors(loaded)):
        assert n1 == n2 and a1.tobytes() == a2.tobytes()
    assert loaded.step == 2 and loaded.manifest_hash == "abc"
    assert loaded.rng.bit_generator.state == state.rng.bit_generator.state
    assert loaded.config.to_text() == state.config.to_text()


def test_resume_equals_uninterrupted_run(pairs, tmp_path):
    k = 2
    full = trained(pairs, 2 * k)
    half = trained(pairs, k)
    save_checkpoint(half, tmp_path / "half.ddgn")
    resumed = load_checkpoint(tmp_path / "half.ddgn")
    resumed = tr.train(pairs, resumed.model, k, 0, resumed.config, state=resumed)
    assert resumed.loss_history == full.loss_history
    for (n1, a1), (n2, a2) in zip(state_tensors(full), state_tensors(resumed)):
        assert n1 == n2 and a1.tobytes() == a2.tobytes(), n1


def test_corrupted_magic_is_rejected(pairs, tmp_path):
    path = tmp_path / "x.ddgn"
    save_checkpoint(trained(pairs, 0), path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_truncation_and_version_are_rejected(pairs, tmp_path):
    buf = encode({"a": 1}, [("w", np.ones(4))])
    with pytest.raises(CheckpointFormatError, match="truncated"):
        decode(buf[:-3])
    bad = buf[:4] + struct.pack("<I", 99) + buf[8:]
    with pytest.raises(CheckpointFormatError, match="version"):
        decode(bad)


def test_missing_record_is_reported(pairs, tmp_path):
    state = trained(pairs, 0)
    from dualdual.checkpoint import state_meta
    tensors = state_tensors(state)[1:]
    path = tmp_path / "m.ddgn"
    path.write_bytes(encode(state_meta(state), tensors))
    with pytest.raises(CheckpointFormatError, match="missing"):
        load_checkpoint(path)
