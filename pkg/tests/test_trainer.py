import math

import numpy as np
import pytest

from codecse import tensor as T
from codecse.codec import CodecConfig, CodecModel
from codecse.data import DataConfig, SyntheticCorpus
from codecse.se_model import SEConfig, SEModel
from codecse.tensor import Tape, Tensor
from codecse.trainer import (Adam, TargetCache, TrainConfig, TrainingDiverged, clip_grad_norm,
                             pretrain_codec, run_ablation, state_digest, train_se)

TINY_CODEC = CodecConfig(strides=[2, 2], base_channels=2, latent_dim=8, n_codebooks=2, codebook_size=4)
TINY_SE = SEConfig(n_blocks=1, emb=8, n_heads=2, ffn_mult=1)


@pytest.fixture(scope="module")
def corpus():
    return SyntheticCorpus(DataConfig(n_utterances=10, crop_seconds=0.1))


def named(*arrays):
    return [(f"p{i}", Tensor(np.array(a, dtype=np.float64), requires_grad=True)) for i, a in enumerate(arrays)]


# Adam

def test_adam_first_step_is_sign_step():
    lr = 1e-3
    (name, p), = named([0.7])
    opt = Adam([(name, p)], lr)
    p.grad = np.array([0.3])
    opt.step()
    step = abs(0.7 - p.data[0])
    assert 0.99 * lr <= step <= lr
    assert opt.t == 1


def test_adam_zero_gradient_leaves_parameters_and_advances_t():
    params = named([1.0, -2.0], [[3.0]])
    before = [p.data.copy() for _, p in params]
    opt = Adam(params, 1e-2)
    for _, p in params:
        p.grad = np.zeros(p.shape)
    opt.step()
    opt.step()
    assert opt.t == 2
    for (_, p), b in zip(params, before):
        assert np.array_equal(p.data, b)


def test_adam_missing_grad_counts_as_zero():
    params = named([1.0])
    opt = Adam(params, 1e-2)
    opt.step()
    assert params[0][1].data[0] == 1.0 and opt.t == 1


def test_adam_matches_closed_form_over_steps(rng):
    grads = rng.normal(size=(6, 3))
    params = named(np.zeros(3))
    p = params[0][1]
    opt = Adam(params, 0.01)
    m = v = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(grads, start=1):
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12, atol=1e-15)


def test_adam_buffers_match_shapes():
    params = named(np.zeros((2, 3)), np.zeros(5))
    opt = Adam(params)
    for name, p in params:
        assert opt.m[name].shape == p.shape and opt.v[name].shape == p.shape


def test_adam_nan_gradient_names_parameter():
    params = named([1.0], [2.0])
    params[1][1].grad = np.array([np.nan])
    opt = Adam(params)
    with pytest.raises(TrainingDiverged, match="p1"):
        opt.step()
    assert opt.t == 0 and params[0][1].data[0] == 1.0


def test_adam_ten_steps_deterministic(rng):
    x = rng.normal(size=(4, 3))
    target = rng.normal(size=(4, 2))

    def run():
        w = Tensor(np.random.default_rng(5).normal(size=(3, 2)), requires_grad=True)
        opt = Adam([("w", w)], 1e-2)
        for _ in range(10):
            opt.zero_grad()
            with Tape() as tape:
                loss = T.sq_mean(T.matmul(Tensor(x), w) - target)
            tape.backward(loss)
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())


# helpers

def test_clip_grad_norm_scales_to_max():
    a, b = Tensor(np.zeros(2), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    total = math.sqrt(float(np.sum(a.grad ** 2) + np.sum(b.grad ** 2)))
    assert total == pytest.approx(1.0)
    np.testing.assert_allclose(a.grad, [0.6, 0.0])


def test_clip_grad_norm_leaves_small_gradients():
    a = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([0.1, 0.2])
    clip_grad_norm([a], 1.0)
    np.testing.assert_array_equal(a.grad, [0.1, 0.2])


def test_lr_schedules():
    const = TrainConfig(lr=1e-3, epochs=10)
    assert all(const.lr_at(e) == 1e-3 for e in range(10))
    cos = TrainConfig(lr=1e-3, epochs=10, lr_schedule="cosine")
    assert cos.lr_at(0) == pytest.approx(1e-3)
    assert cos.lr_at(5) == pytest.approx(5e-4)
    assert all(cos.lr_at(e) > cos.lr_at(e + 1) for e in range(9))


@pytest.mark.parametrize("bad", [dict(lr=0.0), dict(epochs=-1), dict(batch_size=0),
                                 dict(ablation="nope"), dict(lr_schedule="step")])
def test_train_config_rejects_invalid(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_train_config_defaults_follow_reference_recipe():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.epochs, cfg.batch_size) == (1.5e-4, 70, 4)
    assert cfg.grad_clip is None and cfg.lr_schedule == "constant"


def test_state_digest_sensitive_to_single_bit():
    codec = CodecModel(TINY_CODEC)
    d = state_digest(codec)
    p = codec.parameters()[0]
    p.data.flat[0] = np.nextafter(p.data.flat[0], np.inf)
    assert state_digest(codec) != d


def test_target_cache_matches_direct_and_reuses(corpus):
    codec = CodecModel(TINY_CODEC)
    cache = TargetCache(codec)
    batch = next(corpus.batches(1, 2))
    x_e, x_out = cache(batch.clean)
    assert x_e.shape == (2, 8, batch.clean.shape[1] // 4)
    assert x_out.shape == batch.clean.shape
    x_e2, x_out2 = cache(batch.clean)
    assert np.array_equal(x_e, x_e2) and np.array_equal(x_out, x_out2)
    assert len(cache._store) == 2


# SE training

def test_train_se_zero_epochs_leaves_model_unchanged(corpus):
    codec = CodecModel(TINY_CODEC)
    se = SEModel(TINY_SE, 8)
    before = state_digest(se)
    se, hist = train_se(codec, se, corpus, TrainConfig(epochs=0))
    assert state_digest(se) == before
    assert len(hist.val) == 1 and hist.train == []
    assert hist.initial_val is hist.final_val


def test_train_se_keeps_codec_frozen_and_is_deterministic(corpus):
    def run():
        codec = CodecModel(TINY_CODEC)
        before = state_digest(codec)
        se, hist = train_se(codec, SEModel(TINY_SE, 8), corpus, TrainConfig(epochs=2, lr=1e-3))
        assert state_digest(codec) == before
        assert all(p.grad is None or not p.requires_grad for p in codec.parameters())
        return state_digest(se), hist

    (da, ha), (db, hb) = run(), run()
    assert da == db
    assert ha.train == hb.train and ha.val == hb.val
    assert len(ha.val) == 3 and len(ha.train) == 2
    assert all(math.isfinite(v) for row in ha.val for v in row.values())


def test_train_se_aborts_on_nan_loss(corpus):
    codec = CodecModel(TINY_CODEC)
    se = SEModel(TINY_SE, 8)
    se.in_proj.weight.data[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train_se(codec, se, corpus, TrainConfig(epochs=1))


def test_ablation_arms_share_initial_weights(corpus):
    # an untrained codec maps everything to the zero codeword, so train it briefly
    codec, _ = pretrain_codec(TINY_CODEC, corpus, epochs=1)
    heldout = [corpus.example(0, i) for i in corpus.val_ids[:1]]
    rows, runs = run_ablation(codec, corpus, TrainConfig(epochs=0), TINY_SE, heldout=heldout)
    assert [r["arm"] for r in rows] == ["emb_only", "time_freq_only", "all"]
    digests = {state_digest(se) for se, _ in runs.values()}
    assert len(digests) == 1
    assert len({r["val_l_emb_initial"] for r in rows}) == 1
