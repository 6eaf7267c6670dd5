"""Geometric pattern discovery over 2-D integer point sets.

A drum phrase becomes a point set (x = onset in grid steps from the
phrase start, y = drum component index).  For every nonzero difference
vector v the maximal translatable pattern MTP(v) is the set of points
that stay inside the set when shifted by v; patterns equal up to
translation collapse into translational equivalence classes (TECs), and
a greedy cover by best-compressing TECs yields a compression ratio that
proxies how much repeated structure the phrase contains.

The difference table is built with numpy (sorted packed vectors rather
than an n x n x n intersection), which keeps a 2,000-point SIATEC run in
seconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

Point = tuple[int, int]


@dataclass(frozen=True)
class TranslationalEquivalenceClass:
    pattern: frozenset[Point]
    translators: frozenset[Point]  # includes the zero vector occurrence

    def covered(self) -> frozenset[Point]:
        return frozenset(
            (p[0] + t[0], p[1] + t[1]) for p in self.pattern for t in self.translators
        )

    def cost(self) -> int:
        # Identity translator is free: a non-repeating set costs ~|D|.
        return len(self.pattern) + len(self.translators) - 1


@dataclass(frozen=True)
class CompressionResult:
    tecs: tuple[TranslationalEquivalenceClass, ...]
    ratio: Fraction

    def decode(self) -> frozenset[Point]:
        out: set[Point] = set()
        for tec in self.tecs:
            out |= tec.covered()
        return frozenset(out)


def _as_array(points) -> np.ndarray:
    pts = sorted(set(map(tuple, points)))
    if not pts:
        raise ValueError("point set must be non-empty")
    return np.asarray(pts, dtype=np.int64)


def _packer(arr: np.ndarray):
    """Pack 2-D int points/vectors into order-preserving scalars."""
    xmin, ymin = arr.min(axis=0)
    xmax, ymax = arr.max(axis=0)
    span = int(ymax - ymin) + 1

    def pack(a: np.ndarray) -> np.ndarray:
        return (a[:, 0] - xmin) * span + (a[:, 1] - ymin)

    bounds = (int(xmin), int(xmax), int(ymin), int(ymax))
    return pack, bounds


def _difference_groups(A: np.ndarray):
    """All positive (lex > 0) difference vectors with their MTP row indices.

    Yields (vector, origin_rows) where origin_rows indexes A; A is sorted
    lexicographically, so for i < j the vector A[j] - A[i] is positive.
    """
    n = len(A)
    iu, ju = np.triu_indices(n, k=1)
    dx = A[ju, 0] - A[iu, 0]
    dy = A[ju, 1] - A[iu, 1]
    span = int(dy.max() - dy.min()) + 1 if len(dy) else 1
    packed = dx * span + (dy - (dy.min() if len(dy) else 0))
    order = np.argsort(packed, kind="stable")
    packed = packed[order]
    origins = iu[order].astype(np.int64)
    dx, dy = dx[order], dy[order]
    starts = np.flatnonzero(np.concatenate(([True], packed[1:] != packed[:-1])))
    ends = np.concatenate((starts[1:], [len(packed)]))
    for s, e in zip(starts, ends):
        yield (int(dx[s]), int(dy[s])), origins[s:e]


def sia(points) -> list[tuple[Point, frozenset[Point]]]:
    """Maximal translatable patterns for every nonzero difference vector.

    Returns (vector, MTP) pairs for both vector signs; MTP(-v) is MTP(v)
    shifted by v.
    """
    A = _as_array(points)
    out = []
    for vec, rows in _difference_groups(A):
        pattern = frozenset(map(tuple, A[rows]))
        out.append((vec, pattern))
        mirrored = frozenset((p[0] + vec[0], p[1] + vec[1]) for p in pattern)
        out.append(((-vec[0], -vec[1]), mirrored))
    return out


def siatec(points) -> list[TranslationalEquivalenceClass]:
    """Group MTPs into TECs with every translator of each pattern.

    Patterns identical up to translation are reported once, with the
    occurrence at the lexicographically least translator as the
    canonical pattern and translators based at zero.
    """
    A = _as_array(points)
    n = len(A)
    if n == 1:
        p = tuple(int(c) for c in A[0])
        return [
            TranslationalEquivalenceClass(frozenset({p}), frozenset({(0, 0)}))
        ]

    # Pack (x, y) -> x*S + y with S wide enough that adding any offset
    # whose |dy| < yspan can never alias a different real point, so a
    # plain searchsorted doubles as the membership test.
    xmin, ymin = (int(v) for v in A.min(axis=0))
    ymax = int(A[:, 1].max())
    S = 4 * (ymax - ymin + 1)
    packedA = (A[:, 0] - xmin) * S + (A[:, 1] - ymin)  # strictly increasing

    vec_packed, rows_list = [], []
    for vec, rows in _difference_groups(A):  # yields vectors in lex order
        vec_packed.append(vec[0] * S + vec[1])
        rows_list.append(rows)
    vecp = np.asarray(vec_packed, dtype=np.int64)
    sizes = np.asarray([len(r) for r in rows_list], dtype=np.int64)

    # Dedup MTPs by shape (pattern translated so its first point is 0).
    shapes: dict[bytes, np.ndarray] = {}
    for rows in rows_list:
        shape = A[rows] - A[rows[0]]
        shapes.setdefault(shape.tobytes(), shape)

    keyed = []
    for shape in shapes.values():
        # Candidate bases b need b + s in D for every shape offset s, i.e.
        # b lies in MTP(s)'s base set for each s.  Intersect the two
        # smallest base sets, then confirm leftovers by lookup.
        if len(shape) == 1:
            rows = np.arange(n)
        else:
            offp = shape[1:, 0] * S + shape[1:, 1]
            at = np.searchsorted(vecp, offp)
            order = np.argsort(sizes[at], kind="stable")
            rows = rows_list[at[order[0]]]
            if len(order) > 1:
                rows = np.intersect1d(
                    rows, rows_list[at[order[1]]], assume_unique=True
                )
            rest = offp[order[2:]]
            if len(rest):
                q = packedA[rows][:, None] + rest[None, :]
                pos = np.searchsorted(packedA, q)
                found = (pos < n) & (packedA[np.minimum(pos, n - 1)] == q)
                rows = rows[found.all(axis=1)]
        bx, by = (int(v) for v in A[rows[0]])  # least occurrence
        pattern = tuple((bx + int(sx), by + int(sy)) for sx, sy in shape)
        translators = tuple(
            (int(x) - bx, int(y) - by) for x, y in A[rows]
        )
        keyed.append((pattern, translators))
    keyed.sort()
    return [
        TranslationalEquivalenceClass(frozenset(p), frozenset(t)) for p, t in keyed
    ]


def _bbox_area(pattern: frozenset[Point]) -> int:
    xs = [p[0] for p in pattern]
    ys = [p[1] for p in pattern]
    return (max(xs) - min(xs)) * (max(ys) - min(ys))


def cosiatec(points) -> CompressionResult:
    """Greedy cover of the point set by best-compressing TECs.

    Selection order per iteration: highest TEC compression ratio, then
    largest coverage, then smallest pattern bounding box, then smallest
    pattern lexicographically (for determinism).  Covered points are
    removed and the search repeats until the set is exhausted.
    """
    remaining = set(map(tuple, points))
    if not remaining:
        raise ValueError("point set must be non-empty")
    total = len(remaining)
    chosen = []
    cost_sum = 0
    while remaining:
        best = None
        best_key = None
        for tec in siatec(remaining):
            coverage = tec.covered()
            ratio = Fraction(len(coverage), tec.cost())
            key = (
                -ratio,
                -len(coverage),
                _bbox_area(tec.pattern),
                sorted(tec.pattern),
                sorted(tec.translators),
            )
            if best_key is None or key < best_key:
                best, best_key = (tec, coverage), key
        tec, coverage = best
        chosen.append(tec)
        cost_sum += tec.cost()
        remaining -= coverage
    return CompressionResult(tuple(chosen), Fraction(total, cost_sum))


def to_point_set(
    drum_events: list[tuple[Fraction, "DrumComponent"]], grid: int = 4
) -> frozenset[Point]:
    """Drum hits as (grid-step, component-index) integer points.

    Off-grid onsets round to the nearest step (ties down), matching the
    codec's quantization.
    """
    points = set()
    for onset, component in drum_events:
        steps = onset * grid
        whole = steps.numerator // steps.denominator
        frac = steps - whole
        x = whole + (1 if frac > Fraction(1, 2) else 0)
        points.add((int(x), int(component)))
    return frozenset(points)


def compression_ratio_metric(drum_events, grid: int = 4) -> Fraction:
    """COSIATEC compression ratio of a phrase's drums; >= 1, higher means
    more repeated structure."""
    if not drum_events:
        raise ValueError("compression ratio needs at least one drum event")
    return cosiatec(to_point_set(drum_events, grid)).ratio


def dump_point_set(points) -> str:
    """One ``x y`` pair per line, sorted; for cross-checks with external
    pattern-discovery tools."""
    return "".join(f"{x} {y}\n" for x, y in sorted(set(map(tuple, points))))


def load_point_set(text: str) -> frozenset[Point]:
    points = set()
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        x, y = line.split()
        points.add((int(x), int(y)))
    return frozenset(points)
