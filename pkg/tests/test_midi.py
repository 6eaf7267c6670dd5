"""Binary MIDI reader/writer: round trips, malformed input, quantize."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpdrums.midi import (
    MidiParseError,
    NoteEvent,
    Score,
    Track,
    TrackRole,
    _read_vlq,
    _write_vlq,
    bpm_to_uspq,
    parse_midi,
    quantize,
    write_midi,
)

from conftest import make_score


@given(st.integers(min_value=0, max_value=0x0FFFFFFF))
def test_vlq_round_trip(value):
    data = _write_vlq(value)
    decoded, pos = _read_vlq(data, 0)
    assert decoded == value
    assert pos == len(data)


def test_vlq_known_encodings():
    # Reference pairs from the SMF spec's delta-time table.
    assert _write_vlq(0) == b"\x00"
    assert _write_vlq(0x7F) == b"\x7f"
    assert _write_vlq(0x80) == b"\x81\x00"
    assert _write_vlq(0x0FFFFFFF) == b"\xff\xff\xff\x7f"


def test_round_trip_small_score():
    score = Score(
        ticks_per_quarter=480,
        tracks=[
            Track(TrackRole.GUITAR, [NoteEvent(0, 480, 60), NoteEvent(480, 240, 64)]),
            Track(TrackRole.BASS, [NoteEvent(0, 960, 40)]),
            Track(TrackRole.DRUMS, [NoteEvent(0, 0, 36), NoteEvent(480, 0, 38)]),
        ],
        tempo_map=[(0, Fraction(120))],
        ts_map=[(0, 4, 4)],
    )
    again = parse_midi(write_midi(score))
    assert again == score


def test_round_trip_random_scores(rng):
    for _ in range(30):
        score = make_score(rng)
        assert parse_midi(write_midi(score)) == score


def test_tempo_and_ts_changes_survive():
    score = Score(
        ticks_per_quarter=96,
        tracks=[Track(TrackRole.GUITAR, [NoteEvent(0, 96, 60)])],
        tempo_map=[(0, Fraction(100)), (384, Fraction(150))],
        ts_map=[(0, 4, 4), (384, 3, 4)],
    )
    again = parse_midi(write_midi(score))
    assert again.tempo_map == score.tempo_map
    assert again.ts_map == score.ts_map
    assert again.tempo_at(383) == 100
    assert again.tempo_at(384) == 150
    assert again.ts_at(500) == (3, 4)


def test_role_detection_by_channel_and_program():
    score = parse_midi(write_midi(make_score(np.random.default_rng(0))))
    roles = [t.role_hint for t in score.tracks]
    assert TrackRole.DRUMS in roles
    assert TrackRole.GUITAR in roles
    assert TrackRole.BASS in roles


@pytest.mark.parametrize(
    "data",
    [
        b"",
        b"MThd",
        b"RIFF\x00\x00\x00\x06" + b"\x00" * 6,
        b"MThd\x00\x00\x00\x06\x00\x03\x00\x01\x01\xe0",  # format 3
        b"MThd\x00\x00\x00\x06\x00\x01\x00\x01\x01\xe0" + b"MTrk\xff\xff\xff\xff",
    ],
)
def test_malformed_input_raises(data):
    with pytest.raises(MidiParseError) as err:
        parse_midi(data)
    assert err.value.offset >= 0


def test_dangling_note_on_closes_at_track_end_with_warning():
    track = (
        b"\x00\x90\x3c\x64"  # note-on C4, never released
        b"\x60\xff\x2f\x00"  # end of track after 96 ticks
    )
    data = (
        b"MThd\x00\x00\x00\x06\x00\x01\x00\x01\x01\xe0"
        + b"MTrk" + len(track).to_bytes(4, "big") + track
    )
    warnings: list[str] = []
    score = parse_midi(data, warnings)
    assert any("dangling" in w for w in warnings)
    (note,) = [n for t in score.tracks for n in t.notes]
    assert (note.onset_tick, note.duration_ticks) == (0, 96)


def test_bpm_to_uspq_exact_and_rounded():
    assert bpm_to_uspq(Fraction(120)) == 500_000
    assert bpm_to_uspq(Fraction(60)) == 1_000_000
    # 220 BPM is not an integer microsecond count; nearest wins.
    assert bpm_to_uspq(Fraction(220)) == round(60_000_000 / 220)


def test_quantize_snaps_to_grid():
    score = Score(
        ticks_per_quarter=480,
        tracks=[Track(TrackRole.GUITAR, [NoteEvent(119, 481, 60)])],
    )
    q = quantize(score, 120)
    note = q.tracks[0].notes[0]
    assert note.onset_tick == 120
    assert note.onset_tick % 120 == 0


def test_quantize_rejects_non_divisor_grid():
    score = Score(ticks_per_quarter=480, tracks=[])
    with pytest.raises(ValueError):
        quantize(score, 7)


def test_quantize_is_idempotent(rng):
    score = make_score(rng)
    once = quantize(score, 120)
    assert quantize(once, 120) == once


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=3))
def test_write_is_deterministic(seed):
    score = make_score(np.random.default_rng(seed))
    assert write_midi(score) == write_midi(score)
