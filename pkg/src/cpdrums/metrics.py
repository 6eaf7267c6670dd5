"""Objective rhythm measures for drum phrases.

Two levels of reporting: a per-bar density report over four component
groups, and five phrase-level features (compression ratio lives in
``patterns``; the other four are here):

* symmetry — fraction of adjacent inter-onset-interval pairs that are
  equal; equally spaced onsets score 1.0.
* syncopation — metrical-weight displacement summed over note->rest
  pairs on a duple/triple subdivision tree, normalized by the maximum
  attainable score for the same bar count and grid.
* groove consistency — mean similarity (1 - normalized Hamming distance)
  of neighboring bars' binary onset vectors.
* pattern rate — fraction of drum onsets landing exactly on a chosen
  beat-resolution grid.

Paired generated-vs-truth evaluation normalizes each feature's absolute
differences by the maximum observed difference, so reports are on a
comparable scale across features; the normalizer is recorded with the
report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

from .preprocess import Bar, DrumComponent, Phrase

DENSITY_GROUPS = {
    "kick_snares": (DrumComponent.KICK, DrumComponent.SNARE, DrumComponent.SIDE_STICK),
    "hh_rides": (
        DrumComponent.CLOSED_HIHAT,
        DrumComponent.OPEN_HIHAT,
        DrumComponent.RIDE_BELL,
        DrumComponent.RIDE_CYMBAL,
    ),
    "toms": (DrumComponent.TOM_HIGH, DrumComponent.TOM_MID, DrumComponent.TOM_LOW),
    "cymbals": (DrumComponent.CRASH1, DrumComponent.CRASH2, DrumComponent.CHINA),
}

# Full-scale training-corpus reference row (empty-bars %, then per-bar
# averages); rendered alongside densities for comparison.
REFERENCE_TRAINING_DENSITY = {
    "empty_bars_pct": 5.91,
    "kick_snares": 5.0588,
    "hh_rides": 5.6203,
    "toms": 0.7919,
    "cymbals": 0.4902,
}

METRIC_NAMES = (
    "compression_ratio",
    "symmetry",
    "syncopation",
    "groove_consistency",
    "pattern_rate",
)

# Full-scale paired-difference reference row: per-feature mean (stddev).
REFERENCE_DIFF_ROW = {
    "compression_ratio": (7.11, 7.64),
    "symmetry": (7.55, 8.12),
    "syncopation": (3.76, 4.76),
    "groove_consistency": (1.36, 1.69),
    "pattern_rate": (1.54, 3.86),
}


@dataclass(frozen=True)
class DensityReport:
    empty_bars_pct: Fraction
    kick_snares: Fraction
    hh_rides: Fraction
    toms: Fraction
    cymbals: Fraction

    def as_dict(self) -> dict[str, float]:
        return {
            "empty_bars_pct": float(self.empty_bars_pct),
            "kick_snares": float(self.kick_snares),
            "hh_rides": float(self.hh_rides),
            "toms": float(self.toms),
            "cymbals": float(self.cymbals),
        }


@dataclass(frozen=True)
class MetricVector:
    compression_ratio: float
    symmetry: float
    syncopation: float
    groove_consistency: float
    pattern_rate: float

    def get(self, name: str) -> float:
        return getattr(self, name)

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in METRIC_NAMES}


class UnsupportedTimeSignatureError(ValueError):
    pass


def density_report(
    drum_events: list[tuple[Fraction, DrumComponent]], bars: list[Bar]
) -> DensityReport:
    """Per-bar averages of the four component groups plus empty-bar share."""
    if not bars:
        raise ValueError("density report needs at least one bar")
    starts, acc = [], Fraction(0)
    for bar in bars:
        starts.append(acc)
        acc += bar.quarters
    occupied = set()
    counts = {name: 0 for name in DENSITY_GROUPS}
    member = {c: name for name, comps in DENSITY_GROUPS.items() for c in comps}
    for onset, component in drum_events:
        idx = 0
        for i, s in enumerate(starts):
            if onset >= s:
                idx = i
        occupied.add(idx)
        counts[member[component]] += 1
    n = len(bars)
    return DensityReport(
        empty_bars_pct=Fraction(100 * (n - len(occupied)), n),
        kick_snares=Fraction(counts["kick_snares"], n),
        hh_rides=Fraction(counts["hh_rides"], n),
        toms=Fraction(counts["toms"], n),
        cymbals=Fraction(counts["cymbals"], n),
    )


def symmetry(onsets: list[Fraction]) -> Fraction:
    """Share of adjacent inter-onset-interval pairs that are equal.

    Fewer than three onsets give 1.0 by convention.
    """
    positions = sorted(set(onsets))
    if len(positions) < 3:
        return Fraction(1)
    iois = [b - a for a, b in zip(positions, positions[1:])]
    pairs = list(zip(iois, iois[1:]))
    equal = sum(1 for a, b in pairs if a == b)
    return Fraction(equal, len(pairs))


@lru_cache(maxsize=None)
def subdivision_splits(ts: tuple[int, int], grid: int) -> tuple[int, ...]:
    """Duple/triple split sequence from the bar level down to the grid.

    Compound numerators split into beats first, then triple; leftover
    resolution must be a power of two.  Raises for numerators without a
    2-3 factorization (e.g. 5/4, 7/4).
    """
    num, den = ts
    bar_steps = Fraction(4 * num, den) * grid
    if bar_steps.denominator != 1 or bar_steps.numerator < 1:
        raise UnsupportedTimeSignatureError(f"grid {grid} does not tile {num}/{den}")
    splits = []
    n = num
    while n > 1:
        if n % 3 == 0 and n != 3 and n % 2 == 0:
            splits.append(2)  # e.g. 6/8 and 12/8 group into beats first
            n //= 2
        elif n % 3 == 0:
            splits.append(3)
            n //= 3
        elif n % 2 == 0:
            splits.append(2)
            n //= 2
        else:
            raise UnsupportedTimeSignatureError(
                f"{num}/{den} has no duple/triple subdivision tree"
            )
    rest = bar_steps.numerator // num
    while rest > 1:
        if rest % 2 == 0:
            splits.append(2)
            rest //= 2
        elif rest % 3 == 0:
            splits.append(3)
            rest //= 3
        else:
            raise UnsupportedTimeSignatureError(
                f"grid {grid} is not a duple/triple refinement of {num}/{den}"
            )
    return tuple(splits)


@lru_cache(maxsize=None)
def metrical_weights(ts: tuple[int, int], grid: int) -> tuple[int, ...]:
    """Per-step weights: bar start 0, each subdivision level one lower."""
    weights = [0]
    for level, m in enumerate(subdivision_splits(ts, grid), start=1):
        weights = [w for x in weights for w in (x, *[-level] * (m - 1))]
    return tuple(weights)


def _bar_raw_syncopation(onset_steps: frozenset[int], weights: tuple[int, ...]) -> int:
    """Sum of max(0, w(best rest) - w(note)) over note->following-rest pairs."""
    if not onset_steps:
        return 0
    notes = sorted(onset_steps)
    total = 0
    for i, note in enumerate(notes):
        end = notes[i + 1] if i + 1 < len(notes) else len(weights)
        rests = range(note + 1, end)
        if not rests:
            continue
        best = max(weights[r] for r in rests)
        total += max(0, best - weights[note])
    return total


@lru_cache(maxsize=None)
def max_bar_syncopation(ts: tuple[int, int], grid: int) -> int:
    """Maximum attainable raw score for one bar, by dynamic programming.

    best(i) = best total score for a pattern whose first onset is at
    step i; the note at i may pair with the strongest rest before the
    next onset (or the bar end).
    """
    weights = metrical_weights(ts, grid)
    n = len(weights)
    best = [0] * (n + 1)
    for i in range(n - 1, -1, -1):
        # No further onsets: rests run to the bar end.
        options = [_pair_score(weights, i, n)]
        for j in range(i + 1, n):
            options.append(_pair_score(weights, i, j) + best[j])
        best[i] = max(options)
    return max(best[:n], default=0)


def _pair_score(weights: tuple[int, ...], note: int, nxt: int) -> int:
    rests = range(note + 1, nxt)
    if not rests:
        return 0
    return max(0, max(weights[r] for r in rests) - weights[note])


def syncopation(
    bar_onsets: list[frozenset[int] | set[int]], bars: list[Bar], grid: int
) -> Fraction:
    """Normalized metrical displacement over a phrase, in [0, 1].

    ``bar_onsets[i]`` holds grid-step onset positions inside bar i.
    The normalizer is the summed per-bar maximum for the same bars.
    """
    if len(bar_onsets) != len(bars):
        raise ValueError("one onset set per bar required")
    raw, cap = 0, 0
    for onsets, bar in zip(bar_onsets, bars):
        weights = metrical_weights(bar.ts, grid)
        for step in onsets:
            if not 0 <= step < len(weights):
                raise ValueError(f"onset step {step} outside a {bar.ts} bar")
        raw += _bar_raw_syncopation(frozenset(onsets), weights)
        cap += max_bar_syncopation(bar.ts, grid)
    if cap == 0:
        return Fraction(0)
    return Fraction(raw, cap)


def groove_vectors(
    phrase: Phrase, grid: int, include_condition: bool
) -> list[tuple[tuple[int, ...], tuple[int, int]]]:
    """Per bar: (binary onset vector at grid resolution, time signature)."""
    starts = phrase.bar_starts()
    vectors = [([0] * int(bar.quarters * grid), bar.ts) for bar in phrase.bars]
    onsets = [o for o, _ in phrase.drum_events]
    if include_condition:
        onsets += [o for o, _, _ in phrase.guitar_events]
        onsets += [o for o, _, _ in phrase.bass_events]
    for onset in onsets:
        i = phrase.bar_of(onset)
        step = (onset - starts[i]) * grid
        if step.denominator == 1 and 0 <= step.numerator < len(vectors[i][0]):
            vectors[i][0][step.numerator] = 1
    return [(tuple(vec), ts) for vec, ts in vectors]


def groove_consistency(
    phrase: Phrase, grid: int = 4, include_condition: bool = True
) -> Fraction:
    """Mean neighbor-bar similarity of groove vectors; needs >= 2 bars.

    Bars with different time signatures compare as similarity 0.
    """
    if len(phrase.bars) < 2:
        raise ValueError("groove consistency needs at least 2 bars")
    vectors = groove_vectors(phrase, grid, include_condition)
    sims = []
    for (a, ts_a), (b, ts_b) in zip(vectors, vectors[1:]):
        if ts_a != ts_b:
            sims.append(Fraction(0))
            continue
        hamming = sum(1 for x, y in zip(a, b) if x != y)
        sims.append(1 - Fraction(hamming, len(a)))
    return sum(sims, Fraction(0)) / len(sims)


def pattern_rate(onsets: list[Fraction], resolution: int = 4) -> Fraction:
    """Fraction of onsets landing exactly on the resolution grid.

    ``resolution`` is in steps per quarter note (4 = 16th notes).
    """
    if not onsets:
        raise ValueError("pattern rate needs at least one drum note")
    on_grid = sum(1 for o in onsets if (o * resolution).denominator == 1)
    return Fraction(on_grid, len(onsets))


def extract_metrics(
    phrase: Phrase,
    grid: int = 4,
    resolution: int = 4,
    include_condition_in_groove: bool = True,
) -> MetricVector:
    """The five-feature vector for one phrase's drums.

    Bars whose time signature lacks a duple/triple tree are skipped by
    the syncopation term; single-bar phrases report groove 1.0.
    """
    from .patterns import compression_ratio_metric

    onsets = [o for o, _ in phrase.drum_events]
    starts = phrase.bar_starts()

    supported_bars, bar_steps = [], []
    for i, bar in enumerate(phrase.bars):
        try:
            metrical_weights(bar.ts, grid)
        except UnsupportedTimeSignatureError:
            continue
        steps = set()
        for onset, _ in phrase.drum_events:
            if phrase.bar_of(onset) != i:
                continue
            pos = (onset - starts[i]) * grid
            if pos.denominator == 1:
                steps.add(pos.numerator)
        supported_bars.append(bar)
        bar_steps.append(frozenset(steps))
    sync = syncopation(bar_steps, supported_bars, grid) if supported_bars else Fraction(0)

    if phrase.drum_events:
        ratio = compression_ratio_metric(phrase.drum_events, grid)
        rate = pattern_rate(onsets, resolution)
    else:
        ratio, rate = Fraction(1), Fraction(0)
    groove = (
        groove_consistency(phrase, grid, include_condition_in_groove)
        if len(phrase.bars) >= 2
        else Fraction(1)
    )
    return MetricVector(
        compression_ratio=float(ratio),
        symmetry=float(symmetry(onsets)),
        syncopation=float(sync),
        groove_consistency=float(groove),
        pattern_rate=float(rate),
    )


@dataclass(frozen=True)
class DiffReport:
    # per feature: (mean, stddev) of normalized absolute differences,
    # plus the normalizer used (max observed absolute difference).
    stats: dict[str, tuple[float, float]]
    normalizers: dict[str, float]
    n_pairs: int


def metric_diff_report(
    generated: list[MetricVector], truth: list[MetricVector]
) -> DiffReport:
    """Normalized mean absolute difference per feature over paired phrases.

    Differences are scaled by the feature's maximum observed absolute
    difference so features are comparable; all-zero differences stay 0.
    """
    if len(generated) != len(truth):
        raise ValueError(f"pair count mismatch: {len(generated)} vs {len(truth)}")
    if not generated:
        raise ValueError("no pairs to compare")
    stats: dict[str, tuple[float, float]] = {}
    normalizers: dict[str, float] = {}
    for name in METRIC_NAMES:
        diffs = [abs(g.get(name) - t.get(name)) for g, t in zip(generated, truth)]
        norm = max(diffs)
        normalizers[name] = norm
        scaled = [d / norm for d in diffs] if norm > 0 else [0.0] * len(diffs)
        mean = sum(scaled) / len(scaled)
        if len(scaled) > 1:
            var = sum((x - mean) ** 2 for x in scaled) / (len(scaled) - 1)
        else:
            var = 0.0
        stats[name] = (mean, math.sqrt(var))
    return DiffReport(stats=stats, normalizers=normalizers, n_pairs=len(generated))
