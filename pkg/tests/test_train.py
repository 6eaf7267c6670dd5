"""Optimizer math, loss masking, batching, and training-loop behavior
(early stopping, checkpointing, bit-exact resume)."""

import json
import os

import numpy as np
import pytest

from cpdrums.nn.model import ConditionalDrumModel, ModelConfig
from cpdrums.nn.tensor import Tensor
from cpdrums.nn.train import (
    PAD_ID,
    AdamW,
    bucket_batches,
    evaluate_loss,
    loss_tensors,
    shifted_pair,
    teacher_forcing_accuracy,
    train_model,
    train_step,
)

ENC_SIZES = {"onset": 10, "group": 5, "type": 7, "duration": 8, "value": 9}
DEC_SIZES = {"onset": 10, "drums": 6}


def tiny_config(lr=1e-2):
    return ModelConfig(
        enc_emb_sizes=(4, 2, 2, 4, 4),
        dec_emb_sizes=(6, 6),
        bilstm_layers=1,
        bilstm_hidden=8,
        latent_dim=8,
        d_model=8,
        dec_layers=1,
        heads=2,
        ffn_dim=16,
        dropout=0.0,
        lr=lr,
        max_enc_len=40,
        max_dec_len=32,
    )


def build(lr=1e-2, seed=0):
    return ConditionalDrumModel(tiny_config(lr), ENC_SIZES, DEC_SIZES, seed=seed)


def make_dataset(rng, n, enc_len=5, dec_len=6):
    out = []
    for _ in range(n):
        enc = np.stack(
            [
                rng.integers(1, ENC_SIZES[d], size=enc_len)
                for d in ("onset", "group", "type", "duration", "value")
            ],
            axis=-1,
        )
        dec = np.stack(
            [
                rng.integers(1, DEC_SIZES["onset"], size=dec_len),
                rng.integers(1, DEC_SIZES["drums"], size=dec_len),
            ],
            axis=-1,
        )
        out.append((enc, dec))
    return out


def test_adamw_first_step_matches_hand_computation():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, 0.5], dtype=p.data.dtype)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.1)
    opt.step()
    # With bias correction the first step is g/|g| = 1, plus decoupled decay.
    want = np.array([1.0 - 0.1 * (1.0 + 0.1 * 1.0), -2.0 - 0.1 * (1.0 + 0.1 * -2.0)])
    assert np.allclose(p.data, want, atol=1e-6)
    assert opt.t == 1


def test_adamw_decay_is_decoupled_from_gradient():
    # No gradient at all: the only movement is the weight-decay shrink.
    p = Tensor(np.array([4.0]), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.5, weight_decay=0.01)
    opt.step()
    assert np.allclose(p.data, [4.0 - 0.5 * 0.01 * 4.0], atol=1e-6)


def test_adamw_zero_grad_clears():
    p = Tensor(np.array([1.0]), requires_grad=True)
    p.grad = np.array([1.0], dtype=p.data.dtype)
    AdamW({"p": p}, lr=0.1).zero_grad()
    assert p.grad is None


def test_shifted_pair():
    stream = np.arange(10).reshape(5, 2)
    dec_in, dec_tgt = shifted_pair(stream)
    assert np.array_equal(dec_in, stream[:-1])
    assert np.array_equal(dec_tgt, stream[1:])


def test_loss_masks_joint_pad_positions():
    rng = np.random.default_rng(0)
    onset_logits = Tensor(rng.standard_normal((1, 3, 4)))
    drums_logits = Tensor(rng.standard_normal((1, 3, 5)))
    onset_t = np.array([[1, PAD_ID, 2]])
    drums_t = np.array([[PAD_ID, PAD_ID, 1]])  # only position 1 is joint-PAD

    def nll(logits, targets, keep):
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
        return -(picked * keep).sum() / keep.sum()

    keep = np.array([[1.0, 0.0, 1.0]])
    want = nll(onset_logits.data, onset_t, keep) + nll(drums_logits.data, drums_t, keep)
    got = loss_tensors(onset_logits, drums_logits, onset_t, drums_t)
    assert float(got.data) == pytest.approx(float(want), abs=1e-5)


def test_loss_all_pad_raises():
    onset_logits = Tensor(np.zeros((1, 2, 4)))
    drums_logits = Tensor(np.zeros((1, 2, 5)))
    pads = np.full((1, 2), PAD_ID)
    with pytest.raises(ValueError):
        loss_tensors(onset_logits, drums_logits, pads, pads)


def test_train_step_reduces_loss_on_fixed_batch():
    rng = np.random.default_rng(5)
    model = build(lr=1e-2)
    opt = AdamW(model.params(), lr=1e-2)
    data = make_dataset(rng, 4)
    enc = np.stack([e for e, _ in data])
    dec = np.stack([d for _, d in data])
    first = train_step(model, opt, enc, dec, rng)
    for _ in range(29):
        last = train_step(model, opt, enc, dec, rng)
    assert last < first * 0.5


def test_train_step_raises_on_nonfinite_loss():
    rng = np.random.default_rng(6)
    model = build()
    opt = AdamW(model.params(), lr=1e-2)
    model.onset_head.w.data[:] = np.nan
    (enc, dec) = make_dataset(rng, 1)[0]
    with pytest.raises(RuntimeError, match="non-finite"):
        train_step(model, opt, enc[None], dec[None], rng)


def test_accuracy_and_loss_guards():
    rng = np.random.default_rng(7)
    model = build()
    data = make_dataset(rng, 3)
    onset_acc, drums_acc = teacher_forcing_accuracy(model, data)
    assert 0.0 <= onset_acc <= 1.0
    assert 0.0 <= drums_acc <= 1.0
    assert evaluate_loss(model, data) > 0.0
    with pytest.raises(ValueError):
        evaluate_loss(model, [])
    with pytest.raises(ValueError):
        teacher_forcing_accuracy(model, [])


def test_bucket_batches_group_same_shapes():
    rng = np.random.default_rng(8)
    data = make_dataset(rng, 5, enc_len=3, dec_len=4) + make_dataset(
        rng, 3, enc_len=2, dec_len=6
    )
    batches = bucket_batches(data, batch_size=2, rng=rng)
    # 5 -> 2+2+1 and 3 -> 2+1 batches.
    assert len(batches) == 5
    seen = 0
    for enc, dec in batches:
        assert enc.shape[0] == dec.shape[0] <= 2
        assert all(e.shape == enc.shape[1:] for e in enc)
        seen += enc.shape[0]
    assert seen == len(data)


def test_bucket_batches_cover_every_item_once():
    rng = np.random.default_rng(9)
    data = make_dataset(rng, 6)
    batches = bucket_batches(data, batch_size=4, rng=rng)
    flat = sorted(
        tuple(enc[i].ravel()) + tuple(dec[i].ravel())
        for enc, dec in batches
        for i in range(enc.shape[0])
    )
    want = sorted(tuple(e.ravel()) + tuple(d.ravel()) for e, d in data)
    assert flat == want


def test_train_model_writes_logs_and_checkpoints(tmp_path):
    rng = np.random.default_rng(10)
    model = build()
    train = make_dataset(rng, 4)
    valid = make_dataset(rng, 2)
    log = tmp_path / "log.jsonl"
    out = tmp_path / "ckpts"
    out.mkdir()
    with open(log, "w") as fh:
        result = train_model(
            model, train, valid, ENC_SIZES, DEC_SIZES,
            epochs=2, batch_size=2, seed=0, patience=5,
            out_dir=str(out), log_fh=fh,
        )
    assert result.epochs == 2
    assert result.steps == 4  # 4 phrases / batch 2 = 2 steps per epoch
    assert {p.name for p in out.iterdir()} >= {
        "epoch_0001.ckpt", "epoch_0002.ckpt", "latest.ckpt", "best.ckpt",
    }
    assert os.path.samefile(out / "latest.ckpt", out / "epoch_0002.ckpt")
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert sum("val_loss" in r for r in records) == 2
    assert sum("loss" in r and "val_loss" not in r for r in records) == 4
    assert [r["step"] for r in records] == sorted(r["step"] for r in records)


def test_train_model_early_stops_when_frozen(tmp_path):
    # lr = 0 never improves after the first epoch, so patience=1 stops it.
    rng = np.random.default_rng(11)
    model = build(lr=0.0)
    result = train_model(
        model, make_dataset(rng, 3), make_dataset(rng, 2),
        ENC_SIZES, DEC_SIZES, epochs=50, batch_size=2, patience=1,
    )
    assert result.stopped_early
    assert result.epochs == 2


def test_train_model_stops_at_target_accuracy():
    rng = np.random.default_rng(12)
    model = build()
    result = train_model(
        model, make_dataset(rng, 3), make_dataset(rng, 2),
        ENC_SIZES, DEC_SIZES, epochs=50, batch_size=2, target_accuracy=0.0,
    )
    assert result.stopped_early
    assert result.epochs == 1


def test_train_model_respects_max_steps():
    rng = np.random.default_rng(13)
    model = build()
    result = train_model(
        model, make_dataset(rng, 4), make_dataset(rng, 2),
        ENC_SIZES, DEC_SIZES, epochs=50, batch_size=2, max_steps=1,
    )
    assert result.stopped_early
    assert result.steps == 1


def test_resume_is_bit_exact(tmp_path):
    rng = np.random.default_rng(14)
    train = make_dataset(rng, 4)
    valid = make_dataset(rng, 2)

    straight = build(seed=3)
    train_model(straight, train, valid, ENC_SIZES, DEC_SIZES,
                epochs=4, batch_size=2, seed=21, patience=99)

    half_dir = tmp_path / "half"
    half_dir.mkdir()
    half = build(seed=3)
    train_model(half, train, valid, ENC_SIZES, DEC_SIZES,
                epochs=2, batch_size=2, seed=21, patience=99,
                out_dir=str(half_dir))

    resumed = build(seed=3)
    train_model(resumed, train, valid, ENC_SIZES, DEC_SIZES,
                epochs=4, batch_size=2, seed=21, patience=99,
                resume_from=str(half_dir / "latest.ckpt"))

    a, b = straight.params(), resumed.params()
    for name in a:
        assert np.array_equal(a[name].data, b[name].data), name
