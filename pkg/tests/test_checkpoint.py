import numpy as np
import pytest

from codecse.checkpoint import (CheckpointError, MAGIC, encode_checkpoint, load_checkpoint, load_models,
                                save_checkpoint, save_models, snap_to_storage)
from codecse.codec import CodecConfig, CodecModel
from codecse.se_model import SEConfig, SEModel
from codecse.trainer import state_digest


def test_round_trip_bit_exact(tmp_path, rng):
    params = {"a": rng.normal(size=(3, 4)), "b.c": rng.normal(size=7), "s": np.array(2.5)}
    snap_to_storage(params)
    save_checkpoint(tmp_path / "x.ckpt", {"k": [1, 2]}, params)
    cfg, back = load_checkpoint(tmp_path / "x.ckpt")
    assert cfg == {"k": [1, 2]}
    assert list(back) == list(params)
    for k in params:
        assert back[k].shape == params[k].shape
        assert np.array_equal(back[k], params[k])


def test_encoding_is_deterministic(rng):
    params = {"w": rng.normal(size=5)}
    assert encode_checkpoint({"b": 1, "a": 2}, params) == encode_checkpoint({"a": 2, "b": 1}, params)


def test_payload_is_little_endian_float32(rng):
    w = np.array([1.0, -2.0])
    raw = encode_checkpoint({}, {"w": w})
    assert raw.startswith(MAGIC)
    assert raw.endswith(np.array([1.0, -2.0], dtype="<f4").tobytes())


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"hello world, not a checkpoint")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated_payload_rejected(tmp_path, rng):
    raw = encode_checkpoint({}, {"w": rng.normal(size=100)})
    p = tmp_path / "t.ckpt"
    p.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="past end"):
        load_checkpoint(p)


def test_models_round_trip(tmp_path):
    codec = CodecModel(CodecConfig(strides=[2, 2], base_channels=2, latent_dim=8))
    se = SEModel(SEConfig(n_blocks=1, emb=8, n_heads=2), 8)
    for m in (codec, se):
        snap_to_storage({n: p.data for n, p in m.named_parameters()})
    save_models(tmp_path / "m.ckpt", codec, se, extra={"note": "x"})
    c2, s2, cfg = load_models(tmp_path / "m.ckpt")
    assert cfg["note"] == "x"
    assert state_digest(c2) == state_digest(codec)
    assert state_digest(s2) == state_digest(se)


def test_codec_only_checkpoint(tmp_path):
    codec = CodecModel(CodecConfig(strides=[2], base_channels=2, latent_dim=4))
    save_models(tmp_path / "c.ckpt", codec=codec)
    c2, s2, _ = load_models(tmp_path / "c.ckpt")
    assert s2 is None and c2 is not None


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_models(tmp_path / "nope.ckpt")


def test_empty_models_checkpoint_rejected(tmp_path):
    save_checkpoint(tmp_path / "e.ckpt", {}, {})
    with pytest.raises(CheckpointError, match="neither"):
        load_models(tmp_path / "e.ckpt")
