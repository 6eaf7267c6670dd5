"""Corpus preprocessing: role track selection, drum mapping, phrase cutting.

The pipeline per file is: pick the densest guitar/bass/drums track, map
percussion pitches onto the 13-component drum kit, cut the piece into
consecutive phrases of at most 16 bars, drop phrases with disallowed time
signatures or tempos, and split the survivors 8:1:1.

All musical positions inside a Phrase are exact rationals measured in
quarter notes from the phrase start.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from importlib import resources

from .midi import Score, Track, TrackRole

MAX_PHRASE_BARS = 16


class DrumComponent(IntEnum):
    """The 13-piece kit; enum order is the canonical simultaneous-hit order."""

    KICK = 0
    SNARE = 1
    SIDE_STICK = 2
    CLOSED_HIHAT = 3
    OPEN_HIHAT = 4
    TOM_HIGH = 5
    TOM_MID = 6
    TOM_LOW = 7
    CRASH1 = 8
    CRASH2 = 9
    CHINA = 10
    RIDE_BELL = 11
    RIDE_CYMBAL = 12

    @property
    def token(self) -> str:
        return self.name.lower()


def _load_percussion_map() -> dict[int, DrumComponent]:
    raw = json.loads(
        resources.files("cpdrums.data").joinpath("gm_percussion_map.json").read_text()
    )
    by_token = {c.token: c for c in DrumComponent}
    return {int(pitch): by_token[name] for pitch, name in raw["map"].items()}


GM_PERCUSSION_MAP: dict[int, DrumComponent] = _load_percussion_map()

# Representative source pitch per component, used when rendering back to MIDI.
COMPONENT_PITCH: dict[DrumComponent, int] = {}
for _pitch in sorted(GM_PERCUSSION_MAP):
    COMPONENT_PITCH.setdefault(GM_PERCUSSION_MAP[_pitch], _pitch)


class EventKind(IntEnum):
    NOTE = 0
    CHORD = 1


@dataclass(frozen=True)
class Bar:
    index: int
    ts: tuple[int, int]
    tempo_bpm: Fraction

    @property
    def quarters(self) -> Fraction:
        num, den = self.ts
        return Fraction(4 * num, den)


@dataclass
class Phrase:
    bars: list[Bar]
    # (onset_quarters, duration_quarters, kind), onsets relative to phrase start
    guitar_events: list[tuple[Fraction, Fraction, EventKind]]
    bass_events: list[tuple[Fraction, Fraction, EventKind]]
    # (onset_quarters, component); drum hits carry no duration
    drum_events: list[tuple[Fraction, DrumComponent]]
    source_id: str = ""

    @property
    def total_quarters(self) -> Fraction:
        return sum((b.quarters for b in self.bars), Fraction(0))

    def bar_starts(self) -> list[Fraction]:
        starts, acc = [], Fraction(0)
        for bar in self.bars:
            starts.append(acc)
            acc += bar.quarters
        return starts

    def bar_of(self, onset: Fraction) -> int:
        """Index of the bar containing ``onset`` (quarters from phrase start)."""
        acc = Fraction(0)
        for i, bar in enumerate(self.bars):
            acc += bar.quarters
            if onset < acc:
                return i
        return len(self.bars) - 1

    def validate(self) -> None:
        if not 1 <= len(self.bars) <= MAX_PHRASE_BARS:
            raise ValueError(f"phrase has {len(self.bars)} bars")
        total = self.total_quarters
        for events in (self.guitar_events, self.bass_events):
            for onset, duration, _ in events:
                if not 0 <= onset < total or duration < 0 or onset + duration > total:
                    raise ValueError(f"event at {onset} outside phrase")
        for onset, _ in self.drum_events:
            if not 0 <= onset < total:
                raise ValueError(f"drum hit at {onset} outside phrase")


# Default stand-in for the allowed time-signature set; configurable.
DEFAULT_ALLOWED_TS: frozenset[tuple[int, int]] = frozenset(
    {(4, 4), (3, 4), (6, 8), (2, 4), (5, 4), (7, 4), (12, 8), (2, 2)}
)


@dataclass(frozen=True)
class CorpusFilterConfig:
    allowed_ts: frozenset[tuple[int, int]] = DEFAULT_ALLOWED_TS
    tempo_range: tuple[Fraction, Fraction] = (Fraction(60), Fraction(220))
    min_phrase_bars: int = 2

    def __post_init__(self):
        if self.tempo_range[0] >= self.tempo_range[1]:
            raise ValueError("tempo_range min must be below max")


class RoleMissingError(ValueError):
    """The file lacks a guitar, bass, or drums track and is rejected."""


def bar_boundaries(score: Score, max_bars: int | None = None) -> list[Fraction]:
    """Bar start positions in ticks (exact rationals), derived from the TS map.

    A time-signature change occurring mid-bar starts a new bar at the
    change tick.  The returned list ends with the first bar start at or
    beyond the last note (or covers ``max_bars`` bars).
    """
    tpq = score.ticks_per_quarter
    last_tick = 0
    for track in score.tracks:
        for note in track.notes:
            last_tick = max(last_tick, note.end_tick)
    ts_changes = [(Fraction(t), n, d) for t, n, d in score.ts_map]

    starts = [Fraction(0)]
    while starts[-1] < last_tick or (max_bars and len(starts) <= max_bars):
        t0 = starts[-1]
        num, den = 4, 4
        for t, n, d in ts_changes:
            if t <= t0:
                num, den = n, d
        bar_len = Fraction(tpq) * 4 * num / den
        nxt = t0 + bar_len
        for t, _, _ in ts_changes:
            if t0 < t < nxt:
                nxt = t  # mid-bar TS change truncates the bar
                break
        starts.append(nxt)
        if max_bars and len(starts) > max_bars:
            break
        if len(starts) > 100_000:
            raise ValueError("unreasonable bar count; corrupt tempo/ts maps?")
    return starts


def _note_density(track: Track, starts: list[Fraction]) -> Fraction:
    """Notes per complete bar, so sustained activity outranks one busy bar."""
    if not track.notes:
        return Fraction(0)
    return Fraction(len(track.notes), max(len(starts) - 1, 1))



def select_tracks(score: Score) -> tuple[Track, Track, Track]:
    """Pick the densest candidate per role; ties go to the lower track index.

    Raises RoleMissingError when any of guitar/bass/drums has no candidate.
    """
    starts = bar_boundaries(score)
    chosen: dict[TrackRole, Track] = {}
    for role in (TrackRole.GUITAR, TrackRole.BASS, TrackRole.DRUMS):
        best, best_density = None, None
        for track in score.tracks:
            if track.role_hint is not role:
                continue
            density = _note_density(track, starts)
            if best_density is None or density > best_density:
                best, best_density = track, density
        if best is None:
            raise RoleMissingError(f"no {role.value} track in file")
        chosen[role] = best
    return chosen[TrackRole.GUITAR], chosen[TrackRole.BASS], chosen[TrackRole.DRUMS]


def map_drum_pitches(
    notes, tpq: int, dropped: list[int] | None = None
) -> list[tuple[Fraction, DrumComponent]]:
    """Map percussion NoteEvents to (onset_quarters, component) via the GM table.

    Unmapped pitches are dropped; the drop count is appended to ``dropped``
    when given.  Duplicate (onset, component) pairs collapse to one hit.
    """
    out = set()
    n_dropped = 0
    for note in notes:
        component = GM_PERCUSSION_MAP.get(note.pitch)
        if component is None:
            n_dropped += 1
            continue
        out.add((Fraction(note.onset_tick, tpq), component))
    if dropped is not None:
        dropped.append(n_dropped)
    return sorted(out)


def _group_events(
    notes, tpq: int, phrase_start: Fraction, phrase_end: Fraction
) -> list[tuple[Fraction, Fraction, EventKind]]:
    """Collapse same-onset same-duration notes into Chord events (pitch dropped)."""
    groups: dict[tuple[Fraction, Fraction], int] = {}
    for note in notes:
        tick = Fraction(note.onset_tick)
        if not phrase_start <= tick < phrase_end:
            continue
        onset = Fraction(note.onset_tick, tpq) - phrase_start / tpq
        end = min(Fraction(note.end_tick), phrase_end)
        duration = (end - tick) / tpq
        key = (onset, duration)
        groups[key] = groups.get(key, 0) + 1
    return [
        (onset, duration, EventKind.CHORD if count >= 2 else EventKind.NOTE)
        for (onset, duration), count in sorted(groups.items())
    ]


def segment_phrases(
    score: Score,
    guitar: Track,
    bass: Track,
    drums: Track,
    config: CorpusFilterConfig,
    source_id: str = "",
) -> list[Phrase]:
    """Cut the piece at bar boundaries into consecutive phrases of <= 16 bars.

    The final shorter remainder is kept when it spans at least
    ``config.min_phrase_bars`` complete bars.  Notes after the last
    complete bar are discarded.
    """
    starts = bar_boundaries(score)
    n_bars = len(starts) - 1  # complete bars only
    if n_bars <= 0:
        return []

    drum_hits = map_drum_pitches(drums.notes, score.ticks_per_quarter)
    tpq = score.ticks_per_quarter

    phrases = []
    for first in range(0, n_bars, MAX_PHRASE_BARS):
        last = min(first + MAX_PHRASE_BARS, n_bars)
        if last - first < MAX_PHRASE_BARS and last - first < config.min_phrase_bars:
            continue
        p_start, p_end = starts[first], starts[last]
        bars = []
        for i in range(first, last):
            tick = starts[i]
            num, den = score.ts_at(int(tick))
            bars.append(
                Bar(index=i - first, ts=(num, den), tempo_bpm=score.tempo_at(int(tick)))
            )
        start_q = p_start / tpq
        phrase = Phrase(
            bars=bars,
            guitar_events=_group_events(guitar.notes, tpq, p_start, p_end),
            bass_events=_group_events(bass.notes, tpq, p_start, p_end),
            drum_events=[
                (onset - start_q, comp)
                for onset, comp in drum_hits
                if start_q <= onset < p_end / tpq
            ],
            source_id=f"{source_id}#{first // MAX_PHRASE_BARS}",
        )
        phrase.validate()
        phrases.append(phrase)
    return phrases


def filter_phrases(
    phrases: list[Phrase], config: CorpusFilterConfig
) -> list[Phrase]:
    """Keep phrases whose every bar has an allowed TS and an in-range tempo."""
    lo, hi = config.tempo_range
    kept = []
    for phrase in phrases:
        ok = all(
            bar.ts in config.allowed_ts and lo <= bar.tempo_bpm <= hi
            for bar in phrase.bars
        )
        if ok:
            kept.append(phrase)
    return kept


def split_dataset(
    phrases: list[Phrase], ratio: tuple[int, int, int] = (8, 1, 1), seed: int = 0
) -> tuple[list[Phrase], list[Phrase], list[Phrase]]:
    """Deterministic seeded shuffle, then a largest-remainder 8:1:1 partition."""
    if len(phrases) < 10:
        raise ValueError(f"need at least 10 phrases to split, got {len(phrases)}")
    order = list(range(len(phrases)))
    random.Random(seed).shuffle(order)
    shuffled = [phrases[i] for i in order]

    sizes = _partition_sizes(len(phrases), ratio)
    a, b = sizes[0], sizes[0] + sizes[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


def _partition_sizes(total: int, ratio: tuple[int, ...]) -> list[int]:
    denom = sum(ratio)
    ideal = [Fraction(total * r, denom) for r in ratio]
    sizes = [int(x) for x in ideal]
    remainders = [x - s for x, s in zip(ideal, sizes)]
    for _ in range(total - sum(sizes)):
        # Largest remainder next; earlier bucket wins ties.
        best = max(range(len(ratio)), key=lambda i: (remainders[i], -i))
        sizes[best] += 1
        remainders[best] = Fraction(-1)
    return sizes


# -- rendering and re-reading ------------------------------------------

# Canonical render pitches (events themselves are pitch-free).
GUITAR_NOTE_PITCH = 64
GUITAR_CHORD_PITCHES = (60, 64, 67)
BASS_NOTE_PITCH = 40
BASS_CHORD_PITCHES = (40, 47)


def phrase_to_score(
    phrase: Phrase,
    drum_events: list[tuple[Fraction, DrumComponent]] | None = None,
    tpq: int = 480,
) -> Score:
    """Render a phrase as a 3-track score (guitar, bass, drums).

    ``drum_events`` substitutes generated drums for the phrase's own.
    """
    from .midi import NoteEvent  # local to avoid ping-pong at import time

    if drum_events is None:
        drum_events = phrase.drum_events

    def tick(q: Fraction) -> int:
        scaled = q * tpq
        if scaled.denominator != 1:
            raise ValueError(f"position {q} not representable at {tpq} tpq")
        return int(scaled)

    tempo_map, ts_map = [], []
    acc = Fraction(0)
    for bar in phrase.bars:
        t = tick(acc)
        if not tempo_map or tempo_map[-1][1] != bar.tempo_bpm:
            tempo_map.append((t, bar.tempo_bpm))
        if not ts_map or ts_map[-1][1:] != bar.ts:
            ts_map.append((t, bar.ts[0], bar.ts[1]))
        acc += bar.quarters

    def melodic(events, note_pitch, chord_pitches):
        notes = []
        for onset, duration, kind in events:
            pitches = chord_pitches if kind is EventKind.CHORD else (note_pitch,)
            length = max(tick(duration), 1)
            for p in pitches:
                notes.append(NoteEvent(tick(onset), length, p))
        return sorted(notes)

    drums = sorted(
        NoteEvent(tick(onset), 0, COMPONENT_PITCH[component])
        for onset, component in drum_events
    )
    return Score(
        ticks_per_quarter=tpq,
        tracks=[
            Track(TrackRole.GUITAR, melodic(phrase.guitar_events,
                                            GUITAR_NOTE_PITCH, GUITAR_CHORD_PITCHES)),
            Track(TrackRole.BASS, melodic(phrase.bass_events,
                                          BASS_NOTE_PITCH, BASS_CHORD_PITCHES)),
            Track(TrackRole.DRUMS, drums),
        ],
        tempo_map=tempo_map,
        ts_map=ts_map,
    )


def score_to_phrase(score: Score, source_id: str = "") -> Phrase:
    """Rebuild a phrase from a rendered 3-track score.

    The bar list covers every note onset, extending past the last
    complete bar if an onset lands on or after its boundary.
    """
    guitar, bass, drums = select_tracks(score)
    starts = bar_boundaries(score)
    max_onset = max(
        (n.onset_tick for t in score.tracks for n in t.notes), default=0
    )
    tpq = score.ticks_per_quarter
    while starts[-1] <= max_onset:
        num, den = score.ts_at(int(starts[-1]))
        starts.append(starts[-1] + Fraction(tpq) * 4 * num / den)

    bars = []
    for i, t in enumerate(starts[:-1]):
        num, den = score.ts_at(int(t))
        bars.append(Bar(index=i, ts=(num, den), tempo_bpm=score.tempo_at(int(t))))
    end = starts[-1]
    phrase = Phrase(
        bars=bars,
        guitar_events=_group_events(guitar.notes, tpq, Fraction(0), end),
        bass_events=_group_events(bass.notes, tpq, Fraction(0), end),
        drum_events=[
            (o, c)
            for o, c in map_drum_pitches(drums.notes, tpq)
            if o < end / tpq
        ],
        source_id=source_id,
    )
    phrase.validate()
    return phrase


# -- phrase (de)serialization ------------------------------------------


def phrase_to_record(phrase: Phrase) -> dict:
    """JSON-safe dict; rationals stored as strings, bars as [ts, tempo]."""
    return {
        "source_id": phrase.source_id,
        "bars": [[f"{b.ts[0]}/{b.ts[1]}", str(b.tempo_bpm)] for b in phrase.bars],
        "guitar": [
            [str(o), str(d), k.name.lower()] for o, d, k in phrase.guitar_events
        ],
        "bass": [
            [str(o), str(d), k.name.lower()] for o, d, k in phrase.bass_events
        ],
        "drums": [[str(o), c.token] for o, c in phrase.drum_events],
    }


def phrase_from_record(record: dict) -> Phrase:
    kinds = {k.name.lower(): k for k in EventKind}
    components = {c.token: c for c in DrumComponent}
    bars = []
    for i, (ts, tempo) in enumerate(record["bars"]):
        num, den = ts.split("/")
        bars.append(Bar(index=i, ts=(int(num), int(den)), tempo_bpm=Fraction(tempo)))
    phrase = Phrase(
        bars=bars,
        guitar_events=[
            (Fraction(o), Fraction(d), kinds[k]) for o, d, k in record["guitar"]
        ],
        bass_events=[
            (Fraction(o), Fraction(d), kinds[k]) for o, d, k in record["bass"]
        ],
        drum_events=[(Fraction(o), components[c]) for o, c in record["drums"]],
        source_id=record["source_id"],
    )
    phrase.validate()
    return phrase
