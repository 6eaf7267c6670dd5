#!/usr/bin/env python3
"""Regenerate the committed toy corpus under assets/.

Deterministic: rerunning produces byte-identical files.  The corpus
exercises the whole pipeline — all 13 drum components, several time
signatures and tempos, multi-phrase pieces — plus a few deliberately
broken files the preprocess stage must reject (missing role, corrupt
header, out-of-range tempo, disallowed time signature, unmapped
percussion pitch).
"""

import argparse
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from cpdrums.midi import NoteEvent, Score, Track, TrackRole, write_midi
from cpdrums.preprocess import COMPONENT_PITCH, DrumComponent

TPQ = 480
STEP = TPQ // 4  # 16th-note grid

C = DrumComponent
BASIC = [C.KICK, C.SNARE, C.CLOSED_HIHAT]
FLAVOR = [
    C.SIDE_STICK, C.OPEN_HIHAT, C.TOM_HIGH, C.TOM_MID, C.TOM_LOW,
    C.CRASH1, C.CRASH2, C.CHINA, C.RIDE_BELL, C.RIDE_CYMBAL,
]

GUITAR_SCALE = [55, 57, 59, 60, 62, 64, 66, 67]
BASS_SCALE = [40, 43, 45, 47]


def bar_ticks(ts: tuple[int, int]) -> int:
    num, den = ts
    return num * 4 * TPQ // den


def drum_notes(rng, n_bars, ts, extras, include_pitch=None):
    """Rock-ish kit pattern: kick pulse, backbeat, 8th hats, extras on fills."""
    notes = []
    blen = bar_ticks(ts)
    steps = blen // STEP

    def hit(bar, step, comp):
        notes.append(NoteEvent(bar * blen + step * STEP, 0, COMPONENT_PITCH[comp]))

    for bar in range(n_bars):
        hit(bar, 0, C.KICK)
        if steps >= 8:
            hit(bar, steps // 2, C.KICK)
            hit(bar, steps // 4, C.SNARE)
            hit(bar, 3 * steps // 4, C.SNARE)
        else:
            hit(bar, steps // 2, C.SNARE)
        for step in range(0, steps, 2):
            hit(bar, step, C.CLOSED_HIHAT)
        for comp in extras:
            hit(bar, int(rng.integers(steps)), comp)
        if bar % 4 == 3:  # small fill at phrase-internal cadences
            hit(bar, steps - 2, C.TOM_HIGH)
            hit(bar, steps - 1, C.TOM_LOW)
    if include_pitch is not None:
        notes.append(NoteEvent(0, 0, include_pitch))
    return sorted(set(notes))


def guitar_notes(rng, n_bars, ts):
    notes = []
    blen = bar_ticks(ts)
    for bar in range(n_bars):
        root = GUITAR_SCALE[int(rng.integers(len(GUITAR_SCALE)))]
        if rng.random() < 0.4:  # strummed triad: same onset+duration
            for offset in (0, 4, 7):
                notes.append(NoteEvent(bar * blen, TPQ, root + offset))
        beats = blen // TPQ
        for beat in range(1, beats):
            pitch = GUITAR_SCALE[int(rng.integers(len(GUITAR_SCALE)))]
            notes.append(NoteEvent(bar * blen + beat * TPQ, TPQ // 2, pitch))
    return notes


def bass_notes(rng, n_bars, ts):
    notes = []
    blen = bar_ticks(ts)
    for bar in range(n_bars):
        pitch = BASS_SCALE[int(rng.integers(len(BASS_SCALE)))]
        notes.append(NoteEvent(bar * blen, blen // 2, pitch))
        notes.append(NoteEvent(bar * blen + blen // 2, blen // 2, pitch))
    return notes


def make_score(rng, n_bars, ts, tempo, extras, *, with_bass=True, include_pitch=None):
    tracks = [Track(TrackRole.GUITAR, guitar_notes(rng, n_bars, ts))]
    if with_bass:
        tracks.append(Track(TrackRole.BASS, bass_notes(rng, n_bars, ts)))
    tracks.append(Track(TrackRole.DRUMS, drum_notes(rng, n_bars, ts, extras,
                                                    include_pitch)))
    from fractions import Fraction

    return Score(
        ticks_per_quarter=TPQ,
        tracks=tracks,
        tempo_map=[(0, Fraction(tempo))],
        ts_map=[(0, ts[0], ts[1])],
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(
        os.path.dirname(__file__), "..", "assets"))
    parser.add_argument("--seed", type=int, default=20240817)
    args = parser.parse_args(argv)

    corpus_dir = os.path.join(args.out, "corpus")
    overfit_dir = os.path.join(args.out, "overfit")
    os.makedirs(corpus_dir, exist_ok=True)
    os.makedirs(overfit_dir, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    manifest = {"corpus": [], "overfit": [], "seed": args.seed}

    def emit(directory, name, data, note=""):
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(data)
        entry = {"file": name}
        if note:
            entry["note"] = note
        manifest["corpus" if directory == corpus_dir else "overfit"].append(entry)

    # One file guaranteed to contain every component.
    score = make_score(rng, 4, (4, 4), 120, FLAVOR)
    emit(corpus_dir, "00_all_components.mid", write_midi(score),
         "all 13 components")

    specs = [
        (8, (4, 4), 90), (12, (4, 4), 100), (16, (4, 4), 110),
        (20, (4, 4), 130), (33, (4, 4), 120), (6, (3, 4), 140),
        (10, (3, 4), 96), (8, (6, 8), 80), (12, (6, 8), 150),
        (4, (2, 4), 170), (6, (12, 8), 70), (8, (2, 2), 200),
        # 192 and 60 are exactly representable as integer us/quarter, so
        # they survive the MIDI round trip inside the tempo filter range.
        (18, (4, 4), 60), (5, (4, 4), 192),
    ]
    for i, (n_bars, ts, tempo) in enumerate(specs, start=1):
        extras = [FLAVOR[(i + k) % len(FLAVOR)] for k in range(2)]
        score = make_score(rng, n_bars, ts, tempo, extras)
        emit(corpus_dir, f"{i:02d}_{ts[0]}-{ts[1]}_{tempo}bpm.mid",
             write_midi(score))

    score = make_score(rng, 4, (4, 4), 120, [], with_bass=False)
    emit(corpus_dir, "90_missing_bass.mid", write_midi(score),
         "no bass track; preprocess must exclude")
    score = make_score(rng, 4, (4, 4), 120, [], include_pitch=39)
    emit(corpus_dir, "91_unmapped_pitch.mid", write_midi(score),
         "contains unmapped percussion pitch 39")
    score = make_score(rng, 4, (4, 4), 240, [])
    emit(corpus_dir, "92_fast_tempo.mid", write_midi(score),
         "240 BPM, outside 60-220; phrases filtered")
    score = make_score(rng, 4, (11, 8), 120, [])
    emit(corpus_dir, "93_odd_ts.mid", write_midi(score),
         "11/8 not in the allowed set; phrases filtered")
    emit(corpus_dir, "zz_corrupt.mid", b"MThd\x00\x00\x00\x06garbage",
         "truncated header; unreadable")

    # Small memorization set: distinct conditions, distinct drum lines.
    # The condition stream carries rhythm, duration and binned tempo — not
    # pitch — so pitch variety alone cannot tell the files apart.  Give
    # each file its own tempo bin (all values divide 60e6 exactly, so the
    # MIDI round trip preserves them).
    overfit_tempos = [60, 75, 80, 96, 120, 150, 160, 200]
    for i, tempo in enumerate(overfit_tempos):
        extras = [FLAVOR[i % len(FLAVOR)]]
        score = make_score(rng, 2, (4, 4), tempo, extras)
        emit(overfit_dir, f"of{i}.mid", write_midi(score))

    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(manifest['corpus'])} corpus + "
          f"{len(manifest['overfit'])} overfit files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
