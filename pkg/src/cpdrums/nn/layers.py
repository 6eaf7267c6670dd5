"""Neural building blocks on the autodiff tensor.

Includes the two pieces the sequence model leans on: a stacked
bidirectional LSTM (explicit gate equations, loop over time) and causal
relative global attention computed with the memory-efficient skewing
rearrangement, plus a naive O(L^2 d) reference used as its oracle.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, embedding, softmax, stack

NEG_INF = -1e9


class Module:
    """Parameter container; collects tensors from attributes recursively."""

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                for key, tensor in value.params().items():
                    out[f"{name}.{key}"] = tensor
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for key, tensor in item.params().items():
                            out[f"{name}.{i}.{key}"] = tensor
        return out


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(
        rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)),
        requires_grad=True,
    )


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.w = glorot(rng, in_dim, out_dim)
        self.b = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class Embedding(Module):
    def __init__(self, rng, vocab: int, dim: int):
        self.table = Tensor(rng.normal(0.0, 0.02, size=(vocab, dim)), requires_grad=True)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return embedding(self.table, ids)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps) ** 0.5 * self.gain + self.bias


def dropout(x: Tensor, p: float, rng: np.random.Generator, train: bool) -> Tensor:
    if not train or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(keep)


class LSTM(Module):
    """Single-direction layer; gate order (input, forget, cell, output),
    forget bias initialized to 1."""

    def __init__(self, rng, in_dim: int, hidden: int):
        self.wx = glorot(rng, in_dim, 4 * hidden)
        self.wh = glorot(rng, hidden, 4 * hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        self.b = Tensor(bias, requires_grad=True)
        self.hidden = hidden

    def __call__(self, x: Tensor):
        """x: (B, L, D) -> (outputs (B, L, H), (h_final, c_final))."""
        batch, length, _ = x.shape
        hsz = self.hidden
        h = Tensor(np.zeros((batch, hsz), dtype=x.data.dtype))
        c = Tensor(np.zeros((batch, hsz), dtype=x.data.dtype))
        steps = []
        for t in range(length):
            gates = x[:, t] @ self.wx + h @ self.wh + self.b
            i = gates[:, 0 * hsz : 1 * hsz].sigmoid()
            f = gates[:, 1 * hsz : 2 * hsz].sigmoid()
            g = gates[:, 2 * hsz : 3 * hsz].tanh()
            o = gates[:, 3 * hsz : 4 * hsz].sigmoid()
            c = f * c + i * g
            h = o * c.tanh()
            steps.append(h)
        return stack(steps, axis=1), (h, c)


class BiLSTM(Module):
    """Stack of bidirectional layers; each layer feeds the next with the
    concatenated forward/backward outputs."""

    def __init__(self, rng, in_dim: int, hidden: int, layers: int):
        self.forward_layers = []
        self.backward_layers = []
        d = in_dim
        for _ in range(layers):
            self.forward_layers.append(LSTM(rng, d, hidden))
            self.backward_layers.append(LSTM(rng, d, hidden))
            d = 2 * hidden
        self.out_dim = d

    def __call__(self, x: Tensor):
        """Returns (seq (B, L, 2H), final (B, 2H)) where final concatenates
        the top layer's forward state at t = L-1 and backward state at t = 0."""
        final_fwd = final_bwd = None
        for fwd, bwd in zip(self.forward_layers, self.backward_layers):
            out_f, (h_f, _) = fwd(x)
            rev = x[:, ::-1]
            out_b, (h_b, _) = bwd(rev)
            x = concat([out_f, out_b[:, ::-1]], axis=-1)
            final_fwd, final_bwd = h_f, h_b
        return x, concat([final_fwd, final_bwd], axis=-1)


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)


def skew(qe: Tensor) -> Tensor:
    """(B, H, L, L) relative logits from qe[i, r] = q_i . e_(dist L-1-r).

    Pad one column on the left, reshape the trailing (L, L+1) block to
    (L+1, L), drop the first row: row i then holds q_i . e_(i-j) at
    column j for j <= i (junk above the diagonal, masked later).
    """
    b, h, length, _ = qe.shape
    padded = qe.pad(((0, 0), (0, 0), (0, 0), (1, 0)))
    return padded.reshape(b, h, length + 1, length)[:, :, 1:, :]


class RelativeGlobalAttention(Module):
    """Multi-head causal self-attention with clipped relative-position
    logits (skewing implementation)."""

    def __init__(self, rng, dim: int, heads: int, max_rel: int):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by heads {heads}")
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)
        self.rel = Tensor(
            rng.normal(0.0, 0.02, size=(max_rel + 1, dim // heads)),
            requires_grad=True,
        )
        self.heads = heads
        self.max_rel = max_rel

    def _heads(self, x: Tensor) -> Tensor:
        b, length, dim = x.shape
        return x.reshape(b, length, self.heads, dim // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, window: int | None = None) -> Tensor:
        b, length, dim = x.shape
        if window is None:
            window = length // 2
        window = min(window, self.max_rel)
        q, k, v = self._heads(self.wq(x)), self._heads(self.wk(x)), self._heads(self.wv(x))
        # Row r of the gathered table is the embedding for distance L-1-r,
        # clipped to the window.
        dist = np.minimum(np.arange(length - 1, -1, -1), window)
        e = embedding(self.rel, dist)  # (L, dh)
        qe = q @ e.transpose(1, 0)
        logits = (q @ k.transpose(0, 1, 3, 2) + skew(qe)) * (
            1.0 / np.sqrt(dim // self.heads)
        )
        logits = logits + Tensor(causal_mask(length))
        ctx = softmax(logits) @ v
        merged = ctx.transpose(0, 2, 1, 3).reshape(b, length, dim)
        return self.wo(merged)


def naive_relative_attention(
    x: np.ndarray, attn: RelativeGlobalAttention, window: int | None = None
) -> np.ndarray:
    """Direct O(L^2 d) reference computation with explicit loops, sharing
    the layer's weights; oracle for the skewed implementation."""
    b, length, dim = x.shape
    if window is None:
        window = length // 2
    window = min(window, attn.max_rel)
    heads, dh = attn.heads, dim // attn.heads

    def project(lin):
        return (x @ lin.w.data + lin.b.data).reshape(b, length, heads, dh)

    q, k, v = project(attn.wq), project(attn.wk), project(attn.wv)
    out = np.zeros((b, length, heads, dh), dtype=x.dtype)
    for bi in range(b):
        for h in range(heads):
            logits = np.full((length, length), NEG_INF)
            for i in range(length):
                for j in range(i + 1):
                    rel = attn.rel.data[min(i - j, window)]
                    logits[i, j] = (q[bi, :, h][i] @ k[bi, :, h][j] + q[bi, :, h][i] @ rel) / np.sqrt(dh)
            weights = np.exp(logits - logits.max(axis=-1, keepdims=True))
            weights /= weights.sum(axis=-1, keepdims=True)
            out[bi, :, h] = weights @ v[bi, :, h]
    merged = out.reshape(b, length, dim)
    return merged @ attn.wo.w.data + attn.wo.b.data


class FeedForward(Module):
    def __init__(self, rng, dim: int, inner: int):
        self.up = Linear(rng, dim, inner)
        self.down = Linear(rng, inner, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(self.up(x).relu())


class DecoderBlock(Module):
    """Pre-norm residual block: attention then feed-forward."""

    def __init__(self, rng, dim: int, heads: int, ffn_dim: int, max_rel: int):
        self.norm1 = LayerNorm(dim)
        self.attn = RelativeGlobalAttention(rng, dim, heads, max_rel)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(rng, dim, ffn_dim)

    def __call__(
        self,
        x: Tensor,
        p_drop: float,
        rng: np.random.Generator,
        train: bool,
        window: int | None = None,
    ) -> Tensor:
        x = x + dropout(self.attn(self.norm1(x), window), p_drop, rng, train)
        return x + dropout(self.ffn(self.norm2(x)), p_drop, rng, train)
