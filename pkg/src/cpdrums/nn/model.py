"""Condition-to-drums sequence model.

Encoder: per-dimension compound-word embeddings, concatenated and
linearly fused, run through a stacked BiLSTM; the latent ``z`` is a
linear projection of the concatenated final forward/backward states.

Decoder: per-dimension embeddings fused the same way with ``z``
broadcast-concatenated to every step, a stack of causal relative-
attention blocks (pre-norm residuals), and two softmax heads reading the
shared hidden state — one over onsets, one over drum components.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from ..codec import DECODER_DIMS, ENCODER_DIMS
from .layers import BiLSTM, DecoderBlock, Embedding, LayerNorm, Linear, Module, dropout
from .tensor import Tensor, concat, softmax


def _canonical_order(sizes: dict[str, int], reference: tuple[str, ...]) -> list[str]:
    """Stable dimension order regardless of dict key order."""
    known = [d for d in reference if d in sizes]
    return known + [d for d in sizes if d not in reference]


@dataclass(frozen=True)
class ModelConfig:
    enc_emb_sizes: tuple[int, ...] = (64, 16, 32, 64, 64)
    dec_emb_sizes: tuple[int, ...] = (96, 96)
    bilstm_layers: int = 3
    bilstm_hidden: int = 512
    latent_dim: int = 512
    d_model: int = 512
    dec_layers: int = 4
    heads: int = 8
    ffn_dim: int = 1024
    dropout: float = 0.30
    lr: float = 2e-5
    weight_decay: float = 0.01
    rel_window: int | None = None  # None -> floor(L/2) at call time
    max_enc_len: int = 597
    max_dec_len: int = 545
    z_conditioning: str = "concat"  # "cross_attention" reserved, not built

    @property
    def enc_fused_dim(self) -> int:
        return sum(self.enc_emb_sizes)

    @property
    def dec_fused_dim(self) -> int:
        return sum(self.dec_emb_sizes)

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must divide evenly into heads")
        if self.z_conditioning not in ("concat", "cross_attention"):
            raise ValueError(f"unknown z_conditioning {self.z_conditioning!r}")

    @staticmethod
    def paper() -> "ModelConfig":
        return ModelConfig()

    @staticmethod
    def desk() -> "ModelConfig":
        """Small CPU-trainable configuration; same architecture, every
        width scaled down, lr raised to suit the tiny corpus."""
        return ModelConfig(
            enc_emb_sizes=(16, 4, 8, 16, 16),
            dec_emb_sizes=(24, 24),
            bilstm_layers=2,
            bilstm_hidden=64,
            latent_dim=64,
            d_model=64,
            dec_layers=2,
            heads=2,
            ffn_dim=128,
            dropout=0.30,
            lr=1e-3,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        raw = json.loads(text)
        raw["enc_emb_sizes"] = tuple(raw["enc_emb_sizes"])
        raw["dec_emb_sizes"] = tuple(raw["dec_emb_sizes"])
        return ModelConfig(**raw)


PRESETS = {"paper": ModelConfig.paper, "desk": ModelConfig.desk}


@dataclass
class EncoderLatent:
    z: Tensor  # (B, latent_dim)


@dataclass
class DecoderStep:
    h_t: np.ndarray
    onset_dist: np.ndarray
    drums_dist: np.ndarray


class ConditionalDrumModel(Module):
    """End-to-end network; vocab sizes come from the built vocabularies."""

    def __init__(
        self,
        config: ModelConfig,
        enc_vocab_sizes: dict[str, int],
        dec_vocab_sizes: dict[str, int],
        seed: int = 0,
    ):
        if len(enc_vocab_sizes) != len(config.enc_emb_sizes):
            raise ValueError("encoder vocab/embedding dimension count mismatch")
        if len(dec_vocab_sizes) != len(config.dec_emb_sizes):
            raise ValueError("decoder vocab/embedding dimension count mismatch")
        rng = np.random.default_rng(seed)
        self.config = config
        self.enc_dims = _canonical_order(enc_vocab_sizes, ENCODER_DIMS)
        self.dec_dims = _canonical_order(dec_vocab_sizes, DECODER_DIMS)
        self.enc_emb = [
            Embedding(rng, enc_vocab_sizes[d], e)
            for d, e in zip(self.enc_dims, config.enc_emb_sizes)
        ]
        self.enc_fuse = Linear(rng, config.enc_fused_dim, config.bilstm_hidden)
        self.encoder = BiLSTM(
            rng, config.bilstm_hidden, config.bilstm_hidden, config.bilstm_layers
        )
        self.z_proj = Linear(rng, 2 * config.bilstm_hidden, config.latent_dim)

        self.dec_emb = [
            Embedding(rng, dec_vocab_sizes[d], e)
            for d, e in zip(self.dec_dims, config.dec_emb_sizes)
        ]
        self.dec_fuse = Linear(
            rng, config.dec_fused_dim + config.latent_dim, config.d_model
        )
        # Fixed clip distance: half the maximum stream length.  Deriving
        # the window from the current input length would make prefix
        # forwards disagree with full-sequence forwards and break greedy
        # regeneration of memorized streams.
        self.max_rel = max(config.max_dec_len // 2, 1)
        self.blocks = [
            DecoderBlock(rng, config.d_model, config.heads, config.ffn_dim, self.max_rel)
            for _ in range(config.dec_layers)
        ]
        self.final_norm = LayerNorm(config.d_model)
        self.onset_head = Linear(rng, config.d_model, dec_vocab_sizes[self.dec_dims[0]])
        self.drums_head = Linear(rng, config.d_model, dec_vocab_sizes[self.dec_dims[1]])

    # -- encoder --------------------------------------------------------
    def embed_fuse_condition(self, ids: np.ndarray) -> Tensor:
        """(B, L, 5) int ids -> (B, L, bilstm input) fused vectors."""
        parts = [emb(ids[..., i]) for i, emb in enumerate(self.enc_emb)]
        return self.enc_fuse(concat(parts, axis=-1))

    def embed_fuse_drums(self, ids: np.ndarray) -> Tensor:
        """(B, T, 2) int ids -> (B, T, dec_fused_dim) concatenated
        embeddings (projection happens after z is attached)."""
        parts = [emb(ids[..., i]) for i, emb in enumerate(self.dec_emb)]
        return concat(parts, axis=-1)

    def bilstm_encode(self, enc_ids: np.ndarray) -> tuple[EncoderLatent, Tensor]:
        enc_ids = np.asarray(enc_ids)
        if enc_ids.ndim == 2:
            enc_ids = enc_ids[None]
        if enc_ids.shape[1] == 0:
            raise ValueError("condition must contain at least one word")
        if enc_ids.shape[1] > self.config.max_enc_len:
            raise ValueError(
                f"condition length {enc_ids.shape[1]} exceeds "
                f"max_enc_len {self.config.max_enc_len}"
            )
        fused = self.embed_fuse_condition(enc_ids)
        states, final = self.encoder(fused)
        return EncoderLatent(z=self.z_proj(final)), states

    # -- decoder --------------------------------------------------------
    def decoder_forward(
        self,
        dec_ids: np.ndarray,
        z: Tensor | None,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor, Tensor]:
        """Teacher-forcing pass; returns (onset_logits, drums_logits, h)."""
        if z is None:
            raise ValueError("decoder requires the encoder latent z")
        if self.config.z_conditioning != "concat":
            raise NotImplementedError(
                "only z_conditioning='concat' is implemented"
            )
        dec_ids = np.asarray(dec_ids)
        if dec_ids.ndim == 2:
            dec_ids = dec_ids[None]
        b, t, _ = dec_ids.shape
        if train and rng is None:
            raise ValueError("training mode needs an rng for dropout")
        rng = rng or np.random.default_rng(0)
        p = self.config.dropout
        fused = self.embed_fuse_drums(dec_ids)
        zcast = z.reshape(z.shape[0], 1, z.shape[-1]) * Tensor(np.ones((1, t, 1)))
        x = self.dec_fuse(concat([fused, zcast], axis=-1))
        x = dropout(x, p, rng, train)
        window = self.config.rel_window
        if window is None:
            window = self.max_rel
        for block in self.blocks:
            x = block(x, p, rng, train, window)
        h = self.final_norm(x)
        return self.onset_head(h), self.drums_head(h), h

    def decoder_steps(
        self, dec_ids: np.ndarray, z: Tensor
    ) -> list[DecoderStep]:
        """Evaluation-mode forward repackaged per position."""
        onset_logits, drums_logits, h = self.decoder_forward(dec_ids, z)
        od = softmax(onset_logits).data[0]
        dd = softmax(drums_logits).data[0]
        return [
            DecoderStep(h_t=h.data[0, i], onset_dist=od[i], drums_dist=dd[i])
            for i in range(od.shape[0])
        ]

    def forward(
        self,
        enc_ids: np.ndarray,
        dec_in: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, Tensor]:
        latent, _ = self.bilstm_encode(enc_ids)
        onset_logits, drums_logits, _ = self.decoder_forward(
            dec_in, latent.z, train, rng
        )
        return onset_logits, drums_logits
