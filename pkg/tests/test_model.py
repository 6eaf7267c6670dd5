"""Model wiring: config presets, fused dimensions, forward shapes,
checkpoint round-trips."""

import json

import numpy as np
import pytest

from cpdrums.nn.model import ConditionalDrumModel, ModelConfig, PRESETS
from cpdrums.nn.train import (
    AdamW,
    load_checkpoint,
    restore_model,
    restore_optimizer,
    save_checkpoint,
)

ENC_SIZES = {"onset": 12, "group": 5, "type": 7, "duration": 9, "value": 11}
DEC_SIZES = {"onset": 12, "drums": 8}

TINY = ModelConfig(
    enc_emb_sizes=(4, 2, 2, 4, 4),
    dec_emb_sizes=(6, 6),
    bilstm_layers=1,
    bilstm_hidden=8,
    latent_dim=8,
    d_model=8,
    dec_layers=1,
    heads=2,
    ffn_dim=16,
    dropout=0.3,
    max_enc_len=40,
    max_dec_len=32,
)


def build(seed=0):
    return ConditionalDrumModel(TINY, ENC_SIZES, DEC_SIZES, seed=seed)


def enc_batch(rng, b, length):
    highs = [ENC_SIZES[d] for d in ("onset", "group", "type", "duration", "value")]
    return np.stack(
        [rng.integers(0, h, size=(b, length)) for h in highs], axis=-1
    )


def dec_batch(rng, b, length):
    return np.stack(
        [
            rng.integers(0, DEC_SIZES["onset"], size=(b, length)),
            rng.integers(0, DEC_SIZES["drums"], size=(b, length)),
        ],
        axis=-1,
    )


def test_paper_preset_matches_published_architecture():
    cfg = ModelConfig.paper()
    assert cfg.enc_emb_sizes == (64, 16, 32, 64, 64)
    assert cfg.enc_fused_dim == 240
    assert cfg.dec_emb_sizes == (96, 96)
    assert cfg.dec_fused_dim == 192
    assert cfg.bilstm_layers == 3 and cfg.bilstm_hidden == 512
    assert cfg.dec_layers == 4 and cfg.heads == 8 and cfg.ffn_dim == 1024
    assert cfg.dropout == pytest.approx(0.30)
    assert cfg.lr == pytest.approx(2e-5)
    assert cfg.weight_decay == pytest.approx(0.01)
    assert cfg.max_enc_len == 597 and cfg.max_dec_len == 545


def test_presets_registry():
    assert set(PRESETS) == {"paper", "desk"}
    desk = PRESETS["desk"]()
    assert desk.d_model % desk.heads == 0
    assert desk.dec_layers >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(z_conditioning="fancy")


def test_config_json_round_trip():
    cfg = ModelConfig.desk()
    again = ModelConfig.from_json(cfg.to_json())
    assert again == cfg
    assert isinstance(again.enc_emb_sizes, tuple)


def test_vocab_dimension_count_mismatch_rejected():
    with pytest.raises(ValueError):
        ConditionalDrumModel(TINY, {"onset": 4}, DEC_SIZES)
    with pytest.raises(ValueError):
        ConditionalDrumModel(TINY, ENC_SIZES, {"onset": 4})


def test_encode_shapes_and_guards():
    rng = np.random.default_rng(0)
    model = build()
    latent, states = model.bilstm_encode(enc_batch(rng, 2, 7))
    assert latent.z.shape == (2, TINY.latent_dim)
    assert states.shape == (2, 7, 2 * TINY.bilstm_hidden)
    # Unbatched input gets a batch axis.
    latent1, _ = model.bilstm_encode(enc_batch(rng, 1, 3)[0])
    assert latent1.z.shape == (1, TINY.latent_dim)
    with pytest.raises(ValueError):
        model.bilstm_encode(np.zeros((1, 0, 5), dtype=int))
    with pytest.raises(ValueError):
        model.bilstm_encode(enc_batch(rng, 1, TINY.max_enc_len + 1))


def test_decoder_forward_shapes():
    rng = np.random.default_rng(1)
    model = build()
    latent, _ = model.bilstm_encode(enc_batch(rng, 2, 5))
    onset_logits, drums_logits, h = model.decoder_forward(dec_batch(rng, 2, 9), latent.z)
    assert onset_logits.shape == (2, 9, DEC_SIZES["onset"])
    assert drums_logits.shape == (2, 9, DEC_SIZES["drums"])
    assert h.shape == (2, 9, TINY.d_model)
    with pytest.raises(ValueError):
        model.decoder_forward(dec_batch(rng, 2, 9), None)
    with pytest.raises(ValueError):
        model.decoder_forward(dec_batch(rng, 2, 9), latent.z, train=True, rng=None)


def test_decoder_steps_are_distributions():
    rng = np.random.default_rng(2)
    model = build()
    latent, _ = model.bilstm_encode(enc_batch(rng, 1, 4))
    steps = model.decoder_steps(dec_batch(rng, 1, 6), latent.z)
    assert len(steps) == 6
    for step in steps:
        assert step.onset_dist.shape == (DEC_SIZES["onset"],)
        assert step.drums_dist.shape == (DEC_SIZES["drums"],)
        assert step.onset_dist.sum() == pytest.approx(1.0, abs=1e-5)
        assert step.drums_dist.sum() == pytest.approx(1.0, abs=1e-5)
        assert step.h_t.shape == (TINY.d_model,)


def test_forward_is_deterministic_in_eval():
    rng = np.random.default_rng(3)
    model = build()
    e, d = enc_batch(rng, 1, 4), dec_batch(rng, 1, 5)
    a1, b1 = model.forward(e, d)
    a2, b2 = model.forward(e, d)
    assert np.array_equal(a1.data, a2.data)
    assert np.array_equal(b1.data, b2.data)


def test_same_seed_same_init_different_seed_differs():
    a, b, c = build(seed=4), build(seed=4), build(seed=5)
    pa, pb, pc = a.params(), b.params(), c.params()
    assert set(pa) == set(pb) == set(pc)
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    assert any(not np.array_equal(pa[k].data, pc[k].data) for k in pa)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    model = build(seed=7)
    opt = AdamW(model.params(), lr=1e-3, weight_decay=0.01)
    # Take one step so moments are nonzero.
    e, d = enc_batch(rng, 1, 4), dec_batch(rng, 1, 5)
    logits_o, logits_d = model.forward(e, d[:, :-1], train=True, rng=rng)
    (logits_o.sum() + logits_d.sum()).backward()
    opt.step()

    path = tmp_path / "model.ckpt"
    save_checkpoint(
        str(path), model, ENC_SIZES, DEC_SIZES,
        optimizer=opt, rng=rng, meta={"note": "test"},
    )
    snap = load_checkpoint(str(path))
    assert snap["meta"] == {"note": "test"}
    assert snap["enc_vocab_sizes"] == ENC_SIZES
    assert snap["optimizer_step"] == 1
    assert snap["rng_state"] == rng.bit_generator.state

    clone = restore_model(snap, seed=0)
    for name, tensor in model.params().items():
        assert np.allclose(clone.params()[name].data, tensor.data, atol=1e-7)
    opt2 = restore_optimizer(snap, clone)
    assert opt2.t == 1
    for name in opt.m:
        assert np.allclose(opt2.m[name], opt.m[name], atol=1e-7)
        assert np.allclose(opt2.v[name], opt.v[name], atol=1e-7)

    # Restored model computes the same eval forward.
    a1, b1 = model.forward(e, d)
    a2, b2 = clone.forward(e, d)
    assert np.allclose(a1.data, a2.data, atol=1e-5)
    assert np.allclose(b1.data, b2.data, atol=1e-5)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(str(path))


def test_restore_rejects_shape_mismatch(tmp_path):
    model = build()
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), model, ENC_SIZES, DEC_SIZES)
    snap = load_checkpoint(str(path))
    snap["dec_vocab_sizes"] = dict(DEC_SIZES, drums=DEC_SIZES["drums"] + 1)
    with pytest.raises(ValueError):
        restore_model(snap)


def test_checkpoint_header_is_json(tmp_path):
    model = build()
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), model, ENC_SIZES, DEC_SIZES)
    raw = path.read_bytes()
    assert raw[:4] == b"CPCK"
    (hlen,) = np.frombuffer(raw[6:10], dtype="<u4")
    header = json.loads(raw[10 : 10 + hlen])
    assert header["config"]["d_model"] == TINY.d_model
    assert header["optimizer_step"] is None
