"""Shared builders: deterministic random phrases and scores."""

from __future__ import annotations

import os
from fractions import Fraction

import numpy as np
import pytest

from cpdrums.midi import NoteEvent, Score, Track, TrackRole
from cpdrums.preprocess import Bar, DrumComponent, EventKind, Phrase

ASSETS = os.path.join(os.path.dirname(__file__), "..", "assets")

ALLOWED_TS = [(4, 4), (3, 4), (6, 8), (2, 4), (5, 4), (7, 4), (12, 8), (2, 2)]
# Signatures whose numerator has a duple/triple tree (syncopation-safe).
TREE_TS = [(4, 4), (3, 4), (6, 8), (2, 4), (12, 8), (2, 2)]

COMPONENTS = list(DrumComponent)
DURATIONS = [Fraction(1, 4), Fraction(1, 2), Fraction(1), Fraction(2)]


def make_phrase(
    rng: np.random.Generator,
    n_bars: int | None = None,
    ts_pool=ALLOWED_TS,
    grid: int = 4,
    source_id: str = "test",
    allow_ts_change: bool = True,
) -> Phrase:
    """A random grid-aligned phrase that passes Phrase.validate()."""
    n_bars = n_bars if n_bars is not None else int(rng.integers(1, 6))
    ts = ts_pool[int(rng.integers(len(ts_pool)))]
    tempo = Fraction(int(rng.integers(60, 221)))
    bars = []
    for i in range(n_bars):
        if allow_ts_change and i and rng.random() < 0.15:
            ts = ts_pool[int(rng.integers(len(ts_pool)))]
        bars.append(Bar(index=i, ts=ts, tempo_bpm=tempo))
    phrase = Phrase(
        bars=bars,
        guitar_events=[],
        bass_events=[],
        drum_events=[],
        source_id=source_id,
    )
    starts = phrase.bar_starts()

    drums = set()
    for i, bar in enumerate(bars):
        steps = int(bar.quarters * grid)
        for _ in range(int(rng.integers(0, 7))):
            step = int(rng.integers(steps))
            comp = COMPONENTS[int(rng.integers(len(COMPONENTS)))]
            drums.add((starts[i] + Fraction(step, grid), comp))
    phrase.drum_events.extend(sorted(drums))

    total = phrase.total_quarters
    for events in (phrase.guitar_events, phrase.bass_events):
        seen = set()
        for _ in range(int(rng.integers(0, 2 * n_bars + 1))):
            onset = Fraction(int(rng.integers(int(total * grid))), grid)
            duration = min(DURATIONS[int(rng.integers(len(DURATIONS)))], total - onset)
            kind = EventKind.CHORD if rng.random() < 0.3 else EventKind.NOTE
            if (onset, duration) in seen:
                continue
            seen.add((onset, duration))
            events.append((onset, duration, kind))
        events.sort()
    phrase.validate()
    return phrase


def make_score(rng: np.random.Generator, tpq: int = 480) -> Score:
    """A random quantized three-track score (16th grid)."""
    step = tpq // 4
    n_bars = int(rng.integers(1, 5))
    num, den = ALLOWED_TS[int(rng.integers(len(ALLOWED_TS)))]
    bar = num * 4 * tpq // den
    tempo = Fraction(60_000_000, int(rng.integers(300_000, 1_000_001)))

    def notes(pitch_lo, pitch_hi, n, drum=False):
        # Same-pitch notes must not overlap in time: SMF note-on/off
        # pairing cannot represent that unambiguously.
        out = {}
        for _ in range(n):
            onset = int(rng.integers(n_bars * bar // step)) * step
            dur = 0 if drum else int(rng.integers(1, 5)) * step
            pitch = int(rng.integers(pitch_lo, pitch_hi))
            out.setdefault((onset, pitch), NoteEvent(onset, dur, pitch))
        kept, last_end = [], {}
        for note in sorted(out.values()):
            if note.onset_tick < last_end.get(note.pitch, 0):
                continue
            last_end[note.pitch] = note.onset_tick + note.duration_ticks
            kept.append(note)
        return kept

    return Score(
        ticks_per_quarter=tpq,
        tracks=[
            Track(TrackRole.GUITAR, notes(52, 68, int(rng.integers(1, 9)))),
            Track(TrackRole.BASS, notes(36, 48, int(rng.integers(1, 9)))),
            Track(TrackRole.DRUMS, notes(35, 60, int(rng.integers(1, 13)), drum=True)),
        ],
        tempo_map=[(0, tempo)],
        ts_map=[(0, num, den)],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
