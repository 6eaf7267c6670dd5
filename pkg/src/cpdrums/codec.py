"""Compound-word token streams for conditioning tracks and drums.

Two stream shapes:

* condition stream, 5 dimensions per word: (onset, group, type, duration,
  value).  Each bar opens with a high-level Bar word, followed by
  TimeSig/Tempo words, then guitar/bass events.  Guitar and bass words
  carry a NaN value token (pitch content is deliberately dropped).
* drum stream, 2 dimensions per word: (onset, drums).  Each bar opens
  with a Bar word; simultaneous hits repeat the same onset token.  The
  stream is wrapped start/end; the start word reuses the PAD row (ids 0)
  as the begin-of-stream symbol, so structural vocabulary entries per
  dimension are exactly PAD, BAR and EOS.

Onset tokens are bar-relative positions in quarter notes on a fixed grid
(default 4 steps per quarter, i.e. 16th notes) and reset at every bar.
Token ids are dense from 0 and deterministically assigned, so vocabulary
files are byte-identical across runs on the same corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, NamedTuple

from .preprocess import Bar, DrumComponent, EventKind, Phrase

SCHEMA_VERSION = 1
DEFAULT_GRID = 4  # steps per quarter note
DEFAULT_TEMPO_BIN = 10  # bpm

PAD = "<pad>"
BAR = "<bar>"
EOS = "<eos>"
NAN = "<nan>"

PAD_ID, BAR_ID, EOS_ID = 0, 1, 2
STRUCTURAL = [PAD, BAR, EOS]

GROUP_GUITAR = "guitar"
GROUP_BASS = "bass"
GROUP_HIGHLEVEL = "high_level"

TYPE_NOTE = "note"
TYPE_CHORD = "chord"
TYPE_TEMPO = "tempo"
TYPE_TIMESIG = "time_sig"
TYPE_BAR = "bar"

ENCODER_DIMS = ("onset", "group", "type", "duration", "value")
DECODER_DIMS = ("onset", "drums")

# Reference vocabulary sizes reported for the full-scale corpus; printed
# alongside reports, not reproducible from a toy corpus.
REFERENCE_VOCAB_SIZES = {
    "encoder": {"onset": 31, "group": 5, "type": 7, "duration": 40, "value": 33},
    "decoder": {"onset": 31, "drums": 16},
}


class EncoderWord(NamedTuple):
    onset: int
    group: int
    type_: int
    duration: int
    value: int


class DecoderWord(NamedTuple):
    onset: int
    drums: int


class CodecError(ValueError):
    pass


class OutOfVocabularyError(CodecError):
    def __init__(self, dim: str, token: str):
        super().__init__(f"token {token!r} not in vocabulary dimension {dim!r}")
        self.dim = dim
        self.token = token


def _token_sort_key(token: str):
    """Stable numeric-aware ordering for deterministic id assignment."""
    try:
        frac = Fraction(token)
        return (0, frac, Fraction(0), "")
    except ValueError:
        pass
    if token.startswith("ts:"):
        num, den = token[3:].split("/")
        return (1, Fraction(int(num)), Fraction(int(den)), "")
    if token.startswith("tempo:"):
        return (2, Fraction(token[6:]), Fraction(0), "")
    return (3, Fraction(0), Fraction(0), token)


@dataclass
class Vocabulary:
    """Bidirectional token<->id maps, one table per CP dimension."""

    dims: dict[str, list[str]]
    grid: int = DEFAULT_GRID
    tempo_bin_width: int = DEFAULT_TEMPO_BIN
    schema_version: int = SCHEMA_VERSION
    _ids: dict[str, dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self._ids = {d: {t: i for i, t in enumerate(toks)} for d, toks in self.dims.items()}
        for dim, toks in self.dims.items():
            if toks[: len(STRUCTURAL)] != STRUCTURAL:
                raise CodecError(f"dimension {dim!r} missing structural prefix")
            if len(self._ids[dim]) != len(toks):
                raise CodecError(f"dimension {dim!r} has duplicate tokens")

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def bar_id(self) -> int:
        return BAR_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def bos_id(self) -> int:
        # Start-of-stream reuses the PAD row; see module docstring.
        return PAD_ID

    def size(self, dim: str) -> int:
        return len(self.dims[dim])

    def sizes(self) -> dict[str, int]:
        return {d: len(t) for d, t in self.dims.items()}

    def id(self, dim: str, token: str) -> int:
        try:
            return self._ids[dim][token]
        except KeyError:
            raise OutOfVocabularyError(dim, token) from None

    def token(self, dim: str, token_id: int) -> str:
        toks = self.dims[dim]
        if not 0 <= token_id < len(toks):
            raise CodecError(f"id {token_id} out of range for dimension {dim!r}")
        return toks[token_id]

    def max_duration(self) -> Fraction:
        """Largest numeric duration token (encoder vocabularies only)."""
        best = Fraction(0)
        for tok in self.dims["duration"]:
            try:
                best = max(best, Fraction(tok))
            except ValueError:
                continue
        return best

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "grid": self.grid,
            "tempo_bin_width": self.tempo_bin_width,
            "dims": self.dims,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        payload = json.loads(text)
        if payload.get("schema_version") != SCHEMA_VERSION:
            raise CodecError(f"unsupported vocabulary schema {payload.get('schema_version')}")
        return cls(
            dims=payload["dims"],
            grid=payload["grid"],
            tempo_bin_width=payload["tempo_bin_width"],
        )


def tempo_token(bpm: Fraction, bin_width: int = DEFAULT_TEMPO_BIN) -> str:
    return f"tempo:{round(bpm / bin_width) * bin_width}"


def ts_token(ts: tuple[int, int]) -> str:
    return f"ts:{ts[0]}/{ts[1]}"


def _quantize_to_grid(value: Fraction, grid: int) -> Fraction:
    steps = value * grid
    whole = steps.numerator // steps.denominator
    rem = steps - whole
    # Ties round down, matching the tick quantizer.
    return Fraction(whole + (1 if rem > Fraction(1, 2) else 0), grid)


def onset_token(pos: Fraction) -> str:
    return str(pos)


def grid_positions(ts: tuple[int, int], grid: int) -> list[Fraction]:
    """All representable bar positions for a time signature at ``grid``."""
    bar_quarters = Fraction(4 * ts[0], ts[1])
    n = bar_quarters * grid
    if n.denominator != 1:
        raise CodecError(f"grid {grid} does not tile a {ts[0]}/{ts[1]} bar")
    return [Fraction(i, grid) for i in range(n.numerator)]


def _condition_symbols(
    phrase: Phrase, grid: int, tempo_bin: int, every_bar: bool
) -> list[tuple[str, str, str, str, str]]:
    """Token-string form of the condition stream; shared by vocab build/encode."""
    words = []
    starts = phrase.bar_starts()
    per_bar: dict[int, list] = {i: [] for i in range(len(phrase.bars))}
    for group, events in ((GROUP_GUITAR, phrase.guitar_events), (GROUP_BASS, phrase.bass_events)):
        for onset, duration, kind in events:
            i = phrase.bar_of(onset)
            per_bar[i].append((onset - starts[i], group, kind, duration))

    prev_ts: tuple[int, int] | None = None
    prev_tempo: str | None = None
    for i, bar in enumerate(phrase.bars):
        words.append((BAR, GROUP_HIGHLEVEL, TYPE_BAR, BAR, BAR))
        tempo = tempo_token(bar.tempo_bpm, tempo_bin)
        if every_bar or bar.ts != prev_ts:
            words.append(("0", GROUP_HIGHLEVEL, TYPE_TIMESIG, BAR, ts_token(bar.ts)))
        if every_bar or tempo != prev_tempo:
            words.append(("0", GROUP_HIGHLEVEL, TYPE_TEMPO, BAR, tempo))
        prev_ts, prev_tempo = bar.ts, tempo

        bar_events = []
        for pos, group, kind, duration in per_bar[i]:
            pos = _quantize_to_grid(pos, grid)
            clipped = min(duration, bar.quarters - pos)  # truncate at bar end
            clipped = max(_quantize_to_grid(clipped, grid), Fraction(1, grid))
            kind_tok = TYPE_CHORD if kind is EventKind.CHORD else TYPE_NOTE
            bar_events.append((pos, group, kind_tok, clipped))
        # Guitar before bass at equal onsets, then type and duration.
        order = {GROUP_GUITAR: 0, GROUP_BASS: 1}
        bar_events.sort(key=lambda e: (e[0], order[e[1]], e[2], e[3]))
        for pos, group, kind_tok, duration in bar_events:
            words.append((onset_token(pos), group, kind_tok, str(duration), NAN))
    return words


def _drum_symbols(phrase: Phrase, grid: int) -> list[tuple[str, str]]:
    words = [(PAD, PAD)]  # begin-of-stream
    starts = phrase.bar_starts()
    per_bar: dict[int, list] = {i: [] for i in range(len(phrase.bars))}
    for onset, component in phrase.drum_events:
        i = phrase.bar_of(onset)
        per_bar[i].append((onset - starts[i], component))
    for i in range(len(phrase.bars)):
        words.append((BAR, BAR))
        for pos, component in sorted(per_bar[i], key=lambda h: (h[0], h[1])):
            words.append((onset_token(pos), component.token))
    words.append((EOS, EOS))
    return words


def build_vocab(
    corpus: Iterable[Phrase],
    grid: int = DEFAULT_GRID,
    tempo_bin_width: int = DEFAULT_TEMPO_BIN,
) -> tuple[Vocabulary, Vocabulary]:
    """Scan a corpus and build (encoder, decoder) vocabularies.

    Tables hold exactly the observed tokens plus the structural prefix,
    with NaN reserved in the value dimension.  Ids are assigned in sorted
    token order, so rebuilding on the same corpus is byte-identical.
    """
    if grid < 1:
        raise CodecError("grid must be >= 1")
    enc_sets: dict[str, set[str]] = {d: set() for d in ENCODER_DIMS}
    dec_sets: dict[str, set[str]] = {d: set() for d in DECODER_DIMS}
    seen = False
    for phrase in corpus:
        seen = True
        for word in _condition_symbols(phrase, grid, tempo_bin_width, every_bar=True):
            for dim, tok in zip(ENCODER_DIMS, word):
                enc_sets[dim].add(tok)
        for word in _drum_symbols(phrase, grid):
            for dim, tok in zip(DECODER_DIMS, word):
                dec_sets[dim].add(tok)
    if not seen:
        raise CodecError("cannot build a vocabulary from an empty corpus")

    def finalize(token_sets: dict[str, set[str]], nan_dims: tuple[str, ...]) -> dict[str, list[str]]:
        dims = {}
        for dim, toks in token_sets.items():
            reserved = STRUCTURAL + ([NAN] if dim in nan_dims else [])
            observed = sorted(toks - set(reserved), key=_token_sort_key)
            dims[dim] = reserved + observed
        return dims

    enc = Vocabulary(finalize(enc_sets, ("value",)), grid, tempo_bin_width)
    dec = Vocabulary(finalize(dec_sets, ()), grid, tempo_bin_width)
    return enc, dec


def _clip_duration(vocab: Vocabulary, token: str) -> str:
    """Snap an unobserved duration down to the nearest in-vocab value."""
    if token in vocab.dims["duration"][len(STRUCTURAL):] or token in STRUCTURAL:
        return token
    value = Fraction(token)
    candidates = []
    for tok in vocab.dims["duration"]:
        try:
            candidates.append(Fraction(tok))
        except ValueError:
            continue
    below = [c for c in candidates if c <= value]
    chosen = max(below) if below else min(candidates)
    return str(chosen)


def encode_condition(
    phrase: Phrase,
    vocab: Vocabulary,
    every_bar: bool = True,
) -> list[EncoderWord]:
    """Tokenize the conditioning side of a phrase into 5-dimension words.

    ``every_bar=False`` emits TimeSig/Tempo words only at bar 1 and on
    change instead of every bar.  Durations beyond the vocabulary maximum
    clip down to the nearest in-vocabulary value; any other unknown token
    raises OutOfVocabularyError naming the dimension.
    """
    words = []
    for sym in _condition_symbols(phrase, vocab.grid, vocab.tempo_bin_width, every_bar):
        onset, group, type_, duration, value = sym
        duration = _clip_duration(vocab, duration)
        words.append(
            EncoderWord(
                vocab.id("onset", onset),
                vocab.id("group", group),
                vocab.id("type", type_),
                vocab.id("duration", duration),
                vocab.id("value", value),
            )
        )
    return words


def encode_drums(phrase: Phrase, vocab: Vocabulary) -> list[DecoderWord]:
    """Tokenize a phrase's drums into 2-dimension words wrapped BOS..EOS."""
    return [
        DecoderWord(vocab.id("onset", o), vocab.id("drums", d))
        for o, d in _drum_symbols(phrase, vocab.grid)
    ]


def decode_drums(
    words: list[DecoderWord],
    vocab: Vocabulary,
    bar_context: list[Bar],
    flags: list[str] | None = None,
) -> list[tuple[Fraction, DrumComponent]]:
    """Exact inverse of encode_drums on valid streams.

    Bar words advance the bar counter; onsets at or past the bar length
    clamp to the last grid step and are flagged.  Bars beyond the supplied
    context reuse the last context bar's length (flagged).
    """
    if not words or tuple(words[0]) != (vocab.bos_id, vocab.bos_id):
        raise CodecError("drum stream must begin with the BOS word")
    if not bar_context:
        raise CodecError("decode_drums requires at least one context bar")
    out_flags = flags if flags is not None else []
    components = {c.token: c for c in DrumComponent}

    starts: list[Fraction] = [Fraction(0)]
    for bar in bar_context:
        starts.append(starts[-1] + bar.quarters)

    events = []
    bar_index = -1
    for word in words[1:]:
        onset_id = word.onset
        if onset_id == vocab.eos_id:
            break
        if onset_id == vocab.bar_id:
            bar_index += 1
            continue
        if bar_index < 0:
            raise CodecError("drum hit before the first bar word")
        ctx_index = min(bar_index, len(bar_context) - 1)
        if bar_index >= len(bar_context):
            out_flags.append(f"bar {bar_index} beyond context; reusing last bar length")
        bar = bar_context[ctx_index]
        pos = Fraction(vocab.token("onset", onset_id))
        if pos >= bar.quarters:
            clamped = bar.quarters - Fraction(1, vocab.grid)
            out_flags.append(f"onset {pos} clamped to {clamped} in bar {bar_index}")
            pos = clamped
        drums_tok = vocab.token("drums", word.drums)
        component = components.get(drums_tok)
        if component is None:
            raise CodecError(f"unexpected drums token {drums_tok!r} in hit word")
        if bar_index < len(bar_context):
            start = starts[bar_index]
        else:
            start = starts[-1] + (bar_index - len(bar_context)) * bar.quarters
        events.append((start + pos, component))
    return events


def encoder_grammar_violations(
    words: list[EncoderWord], vocab: Vocabulary
) -> list[str]:
    """Check the condition-stream grammar; returns human-readable violations."""
    problems = []
    if not words:
        return ["empty stream"]
    first = words[0]
    if first.group != vocab.id("group", GROUP_HIGHLEVEL) or first.type_ != vocab.id("type", TYPE_BAR):
        problems.append("stream does not begin with a high-level Bar word")
    guitar_id = vocab.id("group", GROUP_GUITAR)
    bass_id = vocab.id("group", GROUP_BASS)
    nan_id = vocab.id("value", NAN)
    last_pos: Fraction | None = None
    for i, word in enumerate(words):
        if word.onset == vocab.bar_id:
            last_pos = None
            continue
        tok = vocab.token("onset", word.onset)
        try:
            pos = Fraction(tok)
        except ValueError:
            continue
        if last_pos is not None and pos < last_pos:
            problems.append(f"word {i}: onset {pos} decreases within bar")
        last_pos = pos
        if word.group in (guitar_id, bass_id) and word.value != nan_id:
            problems.append(f"word {i}: guitar/bass word without NaN value")
    return problems


def decoder_grammar_violations(
    words: list[DecoderWord], vocab: Vocabulary, n_bars: int | None = None
) -> list[str]:
    problems = []
    if not words or tuple(words[0]) != (vocab.bos_id, vocab.bos_id):
        problems.append("missing BOS word")
        return problems
    if words[-1].onset != vocab.eos_id:
        problems.append("missing EOS word")
    bars = 0
    last_pos: Fraction | None = None
    for i, word in enumerate(words[1:-1], start=1):
        if word.onset == vocab.bar_id:
            bars += 1
            last_pos = None
            continue
        pos = Fraction(vocab.token("onset", word.onset))
        if last_pos is not None and pos < last_pos:
            problems.append(f"word {i}: onset {pos} decreases within bar")
        last_pos = pos
    if n_bars is not None and bars != n_bars:
        problems.append(f"bar count {bars} != phrase bar count {n_bars}")
    return problems
