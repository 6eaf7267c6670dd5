"""Temperature sampling and autoregressive generation.

Each step samples the onset dimension first; a structural onset (bar
marker or end-of-stream) short-circuits to the canonical structural
word, otherwise the drums dimension is sampled from the same hidden
state restricted to real components.  Generation stops at EOS, when the
bar count reaches the condition's bar count, or at the hard length cap.
"""

from __future__ import annotations

import numpy as np

from ..codec import BAR_ID, EOS_ID, PAD_ID, DecoderWord
from .model import ConditionalDrumModel
from .tensor import Tensor


def draw_temperature(
    rng: np.random.Generator,
    fixed: float | None = None,
    low: float = 0.8,
    high: float = 1.2,
) -> float:
    """U(low, high) per generation unless a fixed value is given
    (evaluation fixes 1.0)."""
    if fixed is not None:
        if fixed <= 0:
            raise ValueError("temperature must be positive")
        return float(fixed)
    return float(rng.uniform(low, high))


def sample_token(
    dist: np.ndarray, temperature: float, rng: np.random.Generator
) -> int:
    """Categorical draw after scaling logits by 1/temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    dist = np.asarray(dist, dtype=np.float64)
    if not np.isclose(dist.sum(), 1.0, atol=1e-4):
        raise ValueError("distribution must sum to 1")
    logits = np.log(np.maximum(dist, 1e-300)) / temperature
    logits -= logits.max()
    scaled = np.exp(logits)
    scaled /= scaled.sum()
    return int(rng.choice(len(scaled), p=scaled))


def _pick(
    dist: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
    greedy: bool,
    forbid: tuple[int, ...] = (),
) -> int:
    dist = np.asarray(dist, dtype=np.float64).copy()
    for idx in forbid:
        dist[idx] = 0.0
    if dist.sum() <= 0:
        dist[:] = 1.0
        for idx in forbid:
            dist[idx] = 0.0
    dist /= dist.sum()
    if greedy:
        return int(dist.argmax())
    return sample_token(dist, temperature, rng)


def condition_bar_count(enc_ids: np.ndarray) -> int:
    """Bars in an encoded condition = words whose onset dim is the bar
    marker."""
    return int(np.sum(np.asarray(enc_ids)[:, 0] == BAR_ID))


def generate(
    model: ConditionalDrumModel,
    enc_ids: np.ndarray,
    *,
    temperature: float = 1.0,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
    bar_limit: int | None = None,
    max_len: int | None = None,
) -> list[DecoderWord]:
    """Autoregressive decode conditioned on an encoded phrase.

    Returns the full BOS..EOS word stream (BOS shares the PAD row).
    """
    rng = rng or np.random.default_rng(0)
    enc_ids = np.asarray(enc_ids)
    if bar_limit is None:
        bar_limit = condition_bar_count(enc_ids)
    cap = max_len if max_len is not None else model.config.max_dec_len
    latent, _ = model.bilstm_encode(enc_ids)
    z = Tensor(latent.z.data)  # inference: cut the graph

    words: list[DecoderWord] = [DecoderWord(PAD_ID, PAD_ID)]
    bars = 0
    if bar_limit >= 1 and cap > 1:
        # Valid streams open bar 1 before any hit, so the first word is
        # fixed by the grammar rather than sampled.
        words.append(DecoderWord(BAR_ID, BAR_ID))
        bars = 1
    structural = (PAD_ID, BAR_ID, EOS_ID)
    while len(words) < cap:
        dec_ids = np.asarray(words, dtype=np.int64)
        onset_logits, drums_logits, _ = model.decoder_forward(dec_ids[None], z)
        onset_row = _softmax_row(onset_logits.data[0, -1])
        onset_id = _pick(onset_row, temperature, rng, greedy, forbid=(PAD_ID,))
        if onset_id == EOS_ID:
            words.append(DecoderWord(EOS_ID, EOS_ID))
            break
        if onset_id == BAR_ID:
            if bars >= bar_limit:
                words.append(DecoderWord(EOS_ID, EOS_ID))
                break
            bars += 1
            words.append(DecoderWord(BAR_ID, BAR_ID))
            continue
        drums_row = _softmax_row(drums_logits.data[0, -1])
        drums_id = _pick(drums_row, temperature, rng, greedy, forbid=structural)
        words.append(DecoderWord(onset_id, drums_id))
    return words


def _softmax_row(logits: np.ndarray) -> np.ndarray:
    shifted = logits.astype(np.float64) - logits.max()
    e = np.exp(shifted)
    return e / e.sum()
