"""Standard MIDI File reading/writing against a small internal score model.

Supports format 0 and 1 files, running status, both note-off encodings
(0x8n and 0x9n with velocity 0), and variable-length delta times.  Time is
kept in integer ticks throughout; fractional beat positions only appear in
the codec layer.

Round-trip guarantee: ``parse_midi(write_midi(s)) == s`` holds for scores
whose tempos are exactly representable as an integer number of microseconds
per quarter note and whose tracks contain no same-pitch overlapping notes
(same-tick zero-duration notes are fine).  Everything the writer emits for
such a score re-parses tick-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

MICROSECONDS_PER_MINUTE = 60_000_000

# Canonical channel/program used when rendering a role back to MIDI.
_ROLE_CHANNEL = {"guitar": 0, "bass": 1, "drums": 9}
_ROLE_PROGRAM = {"guitar": 29, "bass": 33, "drums": 0, "other": 0}

_GUITAR_PROGRAMS = range(24, 32)
_BASS_PROGRAMS = range(32, 40)
DRUM_CHANNEL = 9  # MIDI channel 10, zero-based


class TrackRole(str, Enum):
    GUITAR = "guitar"
    BASS = "bass"
    DRUMS = "drums"
    OTHER = "other"


class MidiParseError(ValueError):
    """Malformed MIDI data.  ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset_tick: int
    duration_ticks: int
    pitch: int

    def __post_init__(self):
        if not 0 <= self.pitch <= 127:
            raise ValueError(f"pitch {self.pitch} outside MIDI range")
        if self.onset_tick < 0 or self.duration_ticks < 0:
            raise ValueError("negative tick values")

    @property
    def end_tick(self) -> int:
        return self.onset_tick + self.duration_ticks


@dataclass
class Track:
    role_hint: TrackRole = TrackRole.OTHER
    notes: list[NoteEvent] = field(default_factory=list)

    def sorted(self) -> "Track":
        return Track(self.role_hint, sorted(self.notes))


@dataclass
class Score:
    ticks_per_quarter: int
    tracks: list[Track] = field(default_factory=list)
    # (tick, bpm) and (tick, numerator, denominator), sorted, unique ticks.
    tempo_map: list[tuple[int, Fraction]] = field(default_factory=list)
    ts_map: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.ticks_per_quarter <= 0:
            raise ValueError("ticks_per_quarter must be positive")
        if not self.tempo_map:
            self.tempo_map = [(0, Fraction(120))]
        if not self.ts_map:
            self.ts_map = [(0, 4, 4)]
        for m in (self.tempo_map, self.ts_map):
            ticks = [e[0] for e in m]
            if ticks != sorted(set(ticks)):
                raise ValueError("tempo/ts map ticks must be sorted and unique")

    def tempo_at(self, tick: int) -> Fraction:
        bpm = self.tempo_map[0][1]
        for t, b in self.tempo_map:
            if t <= tick:
                bpm = b
            else:
                break
        return bpm

    def ts_at(self, tick: int) -> tuple[int, int]:
        num, den = self.ts_map[0][1], self.ts_map[0][2]
        for t, n, d in self.ts_map:
            if t <= tick:
                num, den = n, d
            else:
                break
        return num, den


def _read_vlq(data: bytes, pos: int) -> tuple[int, int]:
    """Variable-length quantity; returns (value, new_pos)."""
    value = 0
    for _ in range(4):
        if pos >= len(data):
            raise MidiParseError("truncated variable-length quantity", pos)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise MidiParseError("variable-length quantity longer than 4 bytes", pos)


def _write_vlq(value: int) -> bytes:
    if value < 0:
        raise ValueError("negative delta time")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def _role_for(channel: int, program: int) -> TrackRole:
    if channel == DRUM_CHANNEL:
        return TrackRole.DRUMS
    if program in _GUITAR_PROGRAMS:
        return TrackRole.GUITAR
    if program in _BASS_PROGRAMS:
        return TrackRole.BASS
    return TrackRole.OTHER


def parse_midi(data: bytes, warnings: list[str] | None = None) -> Score:
    """Parse a format-0/1 Standard MIDI File into a Score.

    Note-on/note-off pairs are matched first-in-first-out per (channel,
    pitch).  Dangling note-ons are closed at end of track with a warning.
    Default 120 bpm / 4/4 are inserted at tick 0 when the file has no
    tempo or time-signature events.
    """
    warns = warnings if warnings is not None else []
    if len(data) < 14:
        raise MidiParseError("file shorter than MIDI header", 0)
    if data[0:4] != b"MThd":
        raise MidiParseError("missing MThd header", 0)
    header_len = struct.unpack(">I", data[4:8])[0]
    if header_len < 6:
        raise MidiParseError(f"header length {header_len} < 6", 4)
    fmt, ntrks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise MidiParseError(f"unsupported MIDI format {fmt}", 8)
    if division & 0x8000:
        raise MidiParseError("SMPTE time division not supported", 12)
    if division == 0:
        raise MidiParseError("zero ticks per quarter", 12)

    pos = 8 + header_len
    tempo_events: dict[int, Fraction] = {}
    ts_events: dict[int, tuple[int, int]] = {}
    # (chunk_index, channel) -> list[NoteEvent]; plus first program per key
    chunk_notes: dict[tuple[int, int], list[NoteEvent]] = {}
    chunk_program: dict[tuple[int, int], int] = {}

    chunk_index = 0
    while chunk_index < ntrks:
        if pos + 8 > len(data):
            raise MidiParseError("truncated track chunk header", pos)
        chunk_type = data[pos : pos + 4]
        chunk_len = struct.unpack(">I", data[pos + 4 : pos + 8])[0]
        body_start = pos + 8
        body_end = body_start + chunk_len
        if body_end > len(data):
            raise MidiParseError("track chunk extends past end of file", pos + 4)
        if chunk_type != b"MTrk":
            # Unknown chunk types are skipped per the SMF spec.
            pos = body_end
            continue
        _parse_track(
            data,
            body_start,
            body_end,
            chunk_index,
            tempo_events,
            ts_events,
            chunk_notes,
            chunk_program,
            warns,
        )
        pos = body_end
        chunk_index += 1

    tracks = []
    for key in sorted(chunk_notes):
        # Note-free tracks are kept: an intentionally silent part still
        # declares its role via the program change.
        notes = sorted(chunk_notes[key])
        role = _role_for(key[1], chunk_program.get(key, 0))
        tracks.append(Track(role_hint=role, notes=notes))

    tempo_map = sorted(tempo_events.items())
    if not tempo_map or tempo_map[0][0] != 0:
        tempo_map.insert(0, (0, Fraction(120)))
    ts_list = sorted((t, n, d) for t, (n, d) in ts_events.items())
    if not ts_list or ts_list[0][0] != 0:
        ts_list.insert(0, (0, 4, 4))
    return Score(
        ticks_per_quarter=division,
        tracks=tracks,
        tempo_map=tempo_map,
        ts_map=ts_list,
    )


def _parse_track(
    data: bytes,
    pos: int,
    end: int,
    chunk_index: int,
    tempo_events: dict[int, Fraction],
    ts_events: dict[int, tuple[int, int]],
    chunk_notes: dict[tuple[int, int], list[NoteEvent]],
    chunk_program: dict[tuple[int, int], int],
    warns: list[str],
) -> None:
    tick = 0
    running_status: int | None = None
    # FIFO queues of open note-on ticks per (channel, pitch)
    open_notes: dict[tuple[int, int], list[int]] = {}

    def close_note(channel: int, pitch: int, off_tick: int) -> None:
        queue = open_notes.get((channel, pitch))
        if not queue:
            return
        onset = queue.pop(0)
        duration = max(off_tick - onset, 0)
        if duration == 0 and channel != DRUM_CHANNEL:
            # Zero duration is a drums-only convention internally.
            duration = 1
            warns.append(
                f"chunk {chunk_index}: zero-length melodic note at tick {onset} "
                f"extended to 1 tick"
            )
        key = (chunk_index, channel)
        chunk_notes.setdefault(key, []).append(NoteEvent(onset, duration, pitch))

    while pos < end:
        delta, pos = _read_vlq(data, pos)
        tick += delta
        if pos >= end:
            raise MidiParseError("event data truncated", pos)
        status = data[pos]
        if status & 0x80:
            pos += 1
            if status < 0xF0:
                running_status = status
        else:
            if running_status is None:
                raise MidiParseError("data byte without running status", pos)
            status = running_status

        if status == 0xFF:  # meta event
            if pos >= end:
                raise MidiParseError("truncated meta event", pos)
            meta_type = data[pos]
            pos += 1
            length, pos = _read_vlq(data, pos)
            if pos + length > end:
                raise MidiParseError("meta event extends past track end", pos)
            payload = data[pos : pos + length]
            pos += length
            if meta_type == 0x51 and length == 3:
                uspq = int.from_bytes(payload, "big")
                if uspq > 0:
                    tempo_events[tick] = Fraction(MICROSECONDS_PER_MINUTE, uspq)
            elif meta_type == 0x58 and length >= 2:
                num = payload[0]
                den = 1 << payload[1]
                if num > 0 and den > 0:
                    ts_events[tick] = (num, den)
            elif meta_type == 0x2F:
                break
        elif status in (0xF0, 0xF7):  # sysex: skip
            length, pos = _read_vlq(data, pos)
            if pos + length > end:
                raise MidiParseError("sysex extends past track end", pos)
            pos += length
            running_status = None
        else:
            kind = status & 0xF0
            channel = status & 0x0F
            n_data = 1 if kind in (0xC0, 0xD0) else 2
            if pos + n_data > end:
                raise MidiParseError("truncated channel event", pos)
            d1 = data[pos]
            d2 = data[pos + 1] if n_data == 2 else 0
            if d1 > 127 or d2 > 127:
                raise MidiParseError("data byte out of range", pos)
            pos += n_data
            if kind == 0x90 and d2 > 0:
                open_notes.setdefault((channel, d1), []).append(tick)
                key = (chunk_index, channel)
                chunk_notes.setdefault(key, [])
                chunk_program.setdefault(key, 0)
            elif kind == 0x80 or (kind == 0x90 and d2 == 0):
                close_note(channel, d1, tick)
            elif kind == 0xC0:
                key = (chunk_index, channel)
                chunk_program.setdefault(key, d1)
                chunk_notes.setdefault(key, [])

    for (channel, pitch), queue in open_notes.items():
        while queue:
            warns.append(
                f"chunk {chunk_index}: dangling note-on ch{channel} pitch {pitch}, "
                f"closed at track end"
            )
            close_note(channel, pitch, tick)


def bpm_to_uspq(bpm: Fraction) -> int:
    uspq = MICROSECONDS_PER_MINUTE / bpm
    if uspq != int(uspq):
        # Round; callers needing exact round-trips should pass representable bpm.
        uspq = round(uspq)
    uspq = int(uspq)
    if not 1 <= uspq <= 0xFFFFFF:
        raise ValueError(f"tempo {bpm} bpm not representable in MIDI")
    return uspq


def write_midi(score: Score) -> bytes:
    """Serialize a Score as a format-1 SMF.

    Track 0 carries tempo/time-signature meta events; each note track gets
    the canonical channel and program for its role.  The emitted file
    re-parses to an equivalent Score, tick-exact.
    """
    meta: list[tuple[int, int, bytes]] = []
    for tick, bpm in score.tempo_map:
        uspq = bpm_to_uspq(bpm)
        meta.append((tick, 0, b"\xff\x51\x03" + uspq.to_bytes(3, "big")))
    for tick, num, den in score.ts_map:
        dd = den.bit_length() - 1
        if (1 << dd) != den or not 1 <= num <= 255:
            raise ValueError(f"time signature {num}/{den} not representable")
        meta.append((tick, 1, bytes([0xFF, 0x58, 0x04, num, dd, 24, 8])))
    chunks = [_encode_track(sorted(meta))]

    used_channels = set()
    note_tracks = []
    for track in score.tracks:
        channel = _ROLE_CHANNEL.get(track.role_hint.value)
        if channel is None or channel in used_channels:
            channel = next(
                c for c in range(16) if c not in used_channels and c != DRUM_CHANNEL
            )
        used_channels.add(channel)
        note_tracks.append((channel, track))

    for channel, track in note_tracks:
        events: list[tuple[int, int, bytes]] = [
            (0, -1, bytes([0xC0 | channel, _ROLE_PROGRAM[track.role_hint.value]]))
        ]
        for seq, note in enumerate(sorted(track.notes)):
            on = bytes([0x90 | channel, note.pitch, 100])
            off = bytes([0x80 | channel, note.pitch, 64])
            events.append((note.onset_tick, 2 * seq, on))
            events.append((note.end_tick, 2 * seq + 1, off))
        chunks.append(_encode_track(sorted(events)))

    header = b"MThd" + struct.pack(">IHHH", 6, 1, len(chunks), score.ticks_per_quarter)
    return header + b"".join(chunks)


def _encode_track(events: list[tuple[int, int, bytes]]) -> bytes:
    body = bytearray()
    last_tick = 0
    for tick, _, payload in events:
        body += _write_vlq(tick - last_tick)
        body += payload
        last_tick = tick
    body += _write_vlq(0) + b"\xff\x2f\x00"
    return b"MTrk" + struct.pack(">I", len(body)) + bytes(body)


def quantize(score: Score, grid: int) -> Score:
    """Snap all onsets and durations to the nearest multiple of ``grid`` ticks.

    ``grid`` must divide ticks_per_quarter evenly.  Exact half-step ties
    round down.  Idempotent; onsets never move by more than grid/2.
    """
    if grid <= 0:
        raise ValueError("grid must be a positive number of ticks")
    if score.ticks_per_quarter % grid:
        raise ValueError(
            f"grid {grid} does not divide ticks_per_quarter {score.ticks_per_quarter}"
        )

    def snap(ticks: int) -> int:
        q, r = divmod(ticks, grid)
        return (q + (1 if 2 * r > grid else 0)) * grid

    tracks = []
    for track in score.tracks:
        is_drums = track.role_hint is TrackRole.DRUMS
        notes = []
        for n in track.notes:
            duration = snap(n.duration_ticks)
            if duration == 0 and not is_drums:
                duration = grid  # zero duration is reserved for drum hits
            notes.append(NoteEvent(snap(n.onset_tick), duration, n.pitch))
        tracks.append(Track(track.role_hint, sorted(notes)))
    return Score(
        ticks_per_quarter=score.ticks_per_quarter,
        tracks=tracks,
        tempo_map=list(score.tempo_map),
        ts_map=list(score.ts_map),
    )
