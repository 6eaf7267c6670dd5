"""Training loop: AdamW with decoupled weight decay, PAD-masked dual
cross-entropy, length-bucketed batches, early stopping, and a versioned
binary checkpoint format that captures parameters, optimizer moments,
and rng state so runs resume bit-for-bit in deterministic mode.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .model import ConditionalDrumModel, ModelConfig
from .tensor import Tensor, cross_entropy

PAD_ID = 0

CHECKPOINT_MAGIC = b"CPCK"
CHECKPOINT_VERSION = 1


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            # Decoupled decay: applied directly to the weights, scaled by lr.
            p.data -= self.lr * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data
            )


def shifted_pair(dec_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Teacher forcing: input is the stream minus EOS, target minus BOS."""
    return dec_ids[:-1], dec_ids[1:]


def loss_tensors(
    onset_logits: Tensor,
    drums_logits: Tensor,
    onset_targets: np.ndarray,
    drums_targets: np.ndarray,
) -> Tensor:
    """Mean over non-PAD positions of CE_onset + CE_drums, equal weight.

    A position is padding when both target dimensions are PAD; an
    all-padding batch raises.
    """
    mask = (~((onset_targets == PAD_ID) & (drums_targets == PAD_ID))).astype(
        onset_logits.data.dtype
    )
    return cross_entropy(onset_logits, onset_targets, mask) + cross_entropy(
        drums_logits, drums_targets, mask
    )


def train_step(
    model: ConditionalDrumModel,
    optimizer: AdamW,
    enc_ids: np.ndarray,
    dec_ids: np.ndarray,
    rng: np.random.Generator,
) -> float:
    """One optimization step on a (B, L, 5)/(B, T, 2) batch; returns loss."""
    dec_in, dec_tgt = dec_ids[:, :-1], dec_ids[:, 1:]
    onset_logits, drums_logits = model.forward(enc_ids, dec_in, train=True, rng=rng)
    loss = loss_tensors(onset_logits, drums_logits, dec_tgt[..., 0], dec_tgt[..., 1])
    value = float(loss.data)
    if not np.isfinite(value):
        raise RuntimeError(
            f"non-finite loss {value} at optimizer step {optimizer.t + 1}; "
            f"batch shape enc={enc_ids.shape} dec={dec_ids.shape}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return value


def evaluate_loss(model: ConditionalDrumModel, dataset) -> float:
    """Mean teacher-forcing loss over a list of (enc_ids, dec_ids)."""
    total, count = 0.0, 0
    for enc_ids, dec_ids in dataset:
        dec_in, dec_tgt = shifted_pair(dec_ids)
        onset_logits, drums_logits = model.forward(enc_ids[None], dec_in[None])
        loss = loss_tensors(
            onset_logits, drums_logits, dec_tgt[None, ..., 0], dec_tgt[None, ..., 1]
        )
        total += float(loss.data)
        count += 1
    if count == 0:
        raise ValueError("empty evaluation set")
    return total / count


def teacher_forcing_accuracy(
    model: ConditionalDrumModel, dataset
) -> tuple[float, float]:
    """Greedy argmax accuracy of (onset head, drums head) over a dataset."""
    hits = np.zeros(2)
    totals = 0
    for enc_ids, dec_ids in dataset:
        dec_in, dec_tgt = shifted_pair(dec_ids)
        onset_logits, drums_logits = model.forward(enc_ids[None], dec_in[None])
        hits[0] += np.sum(onset_logits.data[0].argmax(-1) == dec_tgt[:, 0])
        hits[1] += np.sum(drums_logits.data[0].argmax(-1) == dec_tgt[:, 1])
        totals += len(dec_tgt)
    if totals == 0:
        raise ValueError("empty accuracy set")
    return float(hits[0] / totals), float(hits[1] / totals)


def bucket_batches(dataset, batch_size: int, rng: np.random.Generator):
    """Group same-shape sequences into batches; shuffle order each call."""
    buckets: dict[tuple[int, int], list[int]] = {}
    for idx, (enc_ids, dec_ids) in enumerate(dataset):
        buckets.setdefault((len(enc_ids), len(dec_ids)), []).append(idx)
    batches = []
    for key in sorted(buckets):
        members = buckets[key]
        for i in range(0, len(members), batch_size):
            chunk = members[i : i + batch_size]
            batches.append(
                (
                    np.stack([dataset[j][0] for j in chunk]),
                    np.stack([dataset[j][1] for j in chunk]),
                )
            )
    rng.shuffle(batches)
    return batches


# -- checkpoints --------------------------------------------------------


def _write_tensor(buf: io.BufferedIOBase, name: str, array: np.ndarray):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", array.ndim))
    for dim in array.shape:
        buf.write(struct.pack("<I", dim))
    buf.write(array.astype("<f4").tobytes(order="C"))


def _read_tensor(buf: io.BufferedIOBase) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", buf.read(2))
    name = buf.read(nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(buf.read(4 * count), dtype="<f4").reshape(shape)
    return name, data.copy()


def save_checkpoint(
    path: str,
    model: ConditionalDrumModel,
    enc_vocab_sizes: dict[str, int],
    dec_vocab_sizes: dict[str, int],
    optimizer: AdamW | None = None,
    rng: np.random.Generator | None = None,
    meta: dict | None = None,
):
    header = {
        "config": json.loads(model.config.to_json()),
        "enc_vocab_sizes": enc_vocab_sizes,
        "dec_vocab_sizes": dec_vocab_sizes,
        "optimizer_step": optimizer.t if optimizer else None,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "meta": meta or {},
    }
    params = model.params()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        names = sorted(params)
        count = len(names) * (3 if optimizer else 1)
        fh.write(struct.pack("<I", count))
        for name in names:
            _write_tensor(fh, f"param:{name}", params[name].data)
        if optimizer:
            for name in names:
                _write_tensor(fh, f"adam_m:{name}", optimizer.m[name])
            for name in names:
                _write_tensor(fh, f"adam_v:{name}", optimizer.v[name])


def load_checkpoint(path: str) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = dict(_read_tensor(fh) for _ in range(count))
    header["tensors"] = tensors
    return header


def restore_model(snapshot: dict, seed: int = 0) -> ConditionalDrumModel:
    config = ModelConfig.from_json(json.dumps(snapshot["config"]))
    model = ConditionalDrumModel(
        config, snapshot["enc_vocab_sizes"], snapshot["dec_vocab_sizes"], seed=seed
    )
    params = model.params()
    for name, tensor in params.items():
        stored = snapshot["tensors"].get(f"param:{name}")
        if stored is None:
            raise ValueError(f"checkpoint missing parameter {name}")
        if stored.shape != tensor.data.shape:
            raise ValueError(
                f"checkpoint shape mismatch for {name}: "
                f"{stored.shape} vs {tensor.data.shape}"
            )
        tensor.data = stored.astype(tensor.data.dtype)
    return model


def restore_optimizer(snapshot: dict, model: ConditionalDrumModel) -> AdamW | None:
    if snapshot.get("optimizer_step") is None:
        return None
    config = model.config
    opt = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay)
    opt.t = snapshot["optimizer_step"]
    for name in opt.params:
        opt.m[name] = snapshot["tensors"][f"adam_m:{name}"].astype(np.float32)
        opt.v[name] = snapshot["tensors"][f"adam_v:{name}"].astype(np.float32)
    return opt


@dataclass
class TrainResult:
    steps: int
    epochs: int
    best_val_loss: float
    history: list[dict]
    stopped_early: bool


def train_model(
    model: ConditionalDrumModel,
    train_set,
    valid_set,
    enc_vocab_sizes: dict[str, int],
    dec_vocab_sizes: dict[str, int],
    *,
    epochs: int,
    batch_size: int = 16,
    seed: int = 0,
    patience: int = 5,
    out_dir: str | None = None,
    target_accuracy: float | None = None,
    max_steps: int | None = None,
    log_fh=None,
    resume_from: str | None = None,
) -> TrainResult:
    """Epoch loop with early stopping on validation loss (patience in
    epochs).  ``target_accuracy`` stops once both heads reach it
    (overfit-style runs); ``max_steps`` is a hard cap.
    """
    rng = np.random.default_rng(seed)
    optimizer = AdamW(model.params(), lr=model.config.lr,
                      weight_decay=model.config.weight_decay)
    start_epoch, step = 0, 0
    best_val, bad_epochs = float("inf"), 0
    if resume_from:
        snapshot = load_checkpoint(resume_from)
        params = model.params()
        for name in params:
            params[name].data = snapshot["tensors"][f"param:{name}"].astype(
                params[name].data.dtype
            )
        restored = restore_optimizer(snapshot, model)
        if restored is not None:
            optimizer = restored
        if snapshot.get("rng_state"):
            rng.bit_generator.state = snapshot["rng_state"]
        meta = snapshot.get("meta", {})
        start_epoch = meta.get("epoch", 0)
        step = meta.get("step", optimizer.t)
        best_val = meta.get("best_val_loss", float("inf"))
        bad_epochs = meta.get("bad_epochs", 0)

    history = []
    stopped = False
    for epoch in range(start_epoch, epochs):
        for enc_ids, dec_ids in bucket_batches(train_set, batch_size, rng):
            value = train_step(model, optimizer, enc_ids, dec_ids, rng)
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "loss": round(value, 6),
                "lr": model.config.lr,
                "seed": seed,
            }
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
            if max_steps is not None and step >= max_steps:
                stopped = True
                break
        val_loss = evaluate_loss(model, valid_set)
        record = {
            "step": step,
            "epoch": epoch,
            "val_loss": round(val_loss, 6),
            "lr": model.config.lr,
            "seed": seed,
        }
        history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(record) + "\n")

        improved = val_loss < best_val - 1e-9
        if improved:
            best_val, bad_epochs = val_loss, 0
        else:
            bad_epochs += 1
        if out_dir is not None:
            meta = {
                "epoch": epoch + 1,
                "step": step,
                "best_val_loss": best_val,
                "bad_epochs": bad_epochs,
                "seed": seed,
            }
            path = os.path.join(out_dir, f"epoch_{epoch + 1:04d}.ckpt")
            save_checkpoint(path, model, enc_vocab_sizes, dec_vocab_sizes,
                            optimizer, rng, meta)
            latest = os.path.join(out_dir, "latest.ckpt")
            if os.path.lexists(latest):
                os.remove(latest)
            os.link(path, latest)
            if improved:
                best = os.path.join(out_dir, "best.ckpt")
                if os.path.lexists(best):
                    os.remove(best)
                os.link(path, best)
        if stopped:
            break
        if target_accuracy is not None:
            onset_acc, drums_acc = teacher_forcing_accuracy(model, train_set)
            if onset_acc >= target_accuracy and drums_acc >= target_accuracy:
                stopped = True
                break
        if bad_epochs >= patience:
            stopped = True
            break
    return TrainResult(
        steps=step,
        epochs=epoch + 1 if epochs > start_epoch else start_epoch,
        best_val_loss=best_val,
        history=history,
        stopped_early=stopped,
    )
