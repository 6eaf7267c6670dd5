"""Pipeline artifacts: run configuration, phrase/token stores, reports.

Every artifact embeds the run's config hash and seed so stages can
verify they are reading outputs of the same run; stores are written
deterministically (sorted keys, fixed field order) so identical configs
produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, asdict, fields
from fractions import Fraction

import numpy as np

from .codec import Vocabulary
from .metrics import (
    DensityReport,
    DiffReport,
    METRIC_NAMES,
    REFERENCE_DIFF_ROW,
    REFERENCE_TRAINING_DENSITY,
)
from .preprocess import (
    CorpusFilterConfig,
    Phrase,
    phrase_from_record,
    phrase_to_record,
)

TOKEN_STORE_MAGIC = b"CPTK"
TOKEN_STORE_VERSION = 1

# RunConfig fields that determine the contents of stored artifacts.
_HASHED_FIELDS = (
    "allowed_ts", "tempo_min", "tempo_max", "min_phrase_bars",
    "grid", "tempo_bin", "preset", "seed",
)


@dataclass(frozen=True)
class RunConfig:
    corpus_dir: str = "corpus"
    work_dir: str = "work"
    allowed_ts: tuple[str, ...] = (
        "4/4", "3/4", "6/8", "2/4", "5/4", "7/4", "12/8", "2/2",
    )
    tempo_min: int = 60
    tempo_max: int = 220
    min_phrase_bars: int = 2
    grid: int = 4
    tempo_bin: int = 10
    preset: str = "desk"
    seed: int = 0
    tau: str = "1.0"  # fixed value or "uniform"
    resolution: int = 4  # pattern-rate grid, steps per quarter
    epochs: int = 50
    batch_size: int = 16
    patience: int = 5
    target_accuracy: float | None = None
    max_steps: int | None = None

    def filter_config(self) -> CorpusFilterConfig:
        ts = frozenset(
            (int(n), int(d)) for n, d in (s.split("/") for s in self.allowed_ts)
        )
        return CorpusFilterConfig(
            allowed_ts=ts,
            tempo_range=(Fraction(self.tempo_min), Fraction(self.tempo_max)),
            min_phrase_bars=self.min_phrase_bars,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        """Build from JSON; omitted fields keep their defaults, unknown
        fields are rejected instead of silently ignored."""
        raw = json.loads(text)
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        if "allowed_ts" in raw:
            raw["allowed_ts"] = tuple(raw["allowed_ts"])
        return RunConfig(**raw)

    @staticmethod
    def load(path: str) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_json(fh.read())

    @property
    def config_hash(self) -> str:
        """Hash of the fields that shape stored artifacts.

        Paths and runtime knobs (tau, epoch counts, ...) are excluded so
        overriding them later does not orphan existing stores.
        """
        raw = asdict(self)
        payload = json.dumps(
            {k: raw[k] for k in _HASHED_FIELDS}, sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def tau_value(config: RunConfig) -> float | None:
    """None means per-generation U(0.8, 1.2); otherwise the fixed value."""
    if config.tau == "uniform":
        return None
    return float(config.tau)


# -- phrase store (JSONL, header line first) ----------------------------


def write_phrase_store(path: str, phrases: list[Phrase], config: RunConfig):
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "artifact": "phrase_store",
            "config_hash": config.config_hash,
            "seed": config.seed,
            "count": len(phrases),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for phrase in phrases:
            fh.write(json.dumps(phrase_to_record(phrase), sort_keys=True) + "\n")


def read_phrase_store(path: str) -> tuple[dict, list[Phrase]]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("artifact") != "phrase_store":
            raise ValueError(f"{path}: not a phrase store")
        phrases = [phrase_from_record(json.loads(line)) for line in fh if line.strip()]
    if len(phrases) != header["count"]:
        raise ValueError(
            f"{path}: expected {header['count']} phrases, found {len(phrases)}"
        )
    return header, phrases


# -- vocabulary files ---------------------------------------------------


def write_vocab(path: str, vocab: Vocabulary, config: RunConfig):
    wrapper = {
        "artifact": "vocab",
        "config_hash": config.config_hash,
        "seed": config.seed,
        "vocab": json.loads(vocab.to_json()),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(wrapper, sort_keys=True) + "\n")


def read_vocab(path: str) -> tuple[dict, Vocabulary]:
    with open(path, "r", encoding="utf-8") as fh:
        wrapper = json.load(fh)
    if wrapper.get("artifact") != "vocab":
        raise ValueError(f"{path}: not a vocabulary file")
    vocab = Vocabulary.from_json(json.dumps(wrapper["vocab"]))
    return wrapper, vocab


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(vocab.to_json().encode("utf-8")).hexdigest()[:12]


# -- token store (binary, little-endian) --------------------------------


def write_token_store(
    path: str,
    records: list[tuple[str, np.ndarray, np.ndarray]],
    config: RunConfig,
    enc_vocab: Vocabulary,
    dec_vocab: Vocabulary,
):
    """records: (source_id, enc_ids (L,5) , dec_ids (T,2)) per phrase."""
    header = {
        "artifact": "token_store",
        "config_hash": config.config_hash,
        "seed": config.seed,
        "enc_vocab_hash": vocab_hash(enc_vocab),
        "dec_vocab_hash": vocab_hash(dec_vocab),
        "count": len(records),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(TOKEN_STORE_MAGIC)
        fh.write(struct.pack("<H", TOKEN_STORE_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for source_id, enc_ids, dec_ids in records:
            raw = source_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            for ids, width in ((enc_ids, 5), (dec_ids, 2)):
                arr = np.ascontiguousarray(ids, dtype="<u2")
                if arr.ndim != 2 or arr.shape[1] != width:
                    raise ValueError(f"token array must be (n, {width})")
                fh.write(struct.pack("<I", arr.shape[0]))
                fh.write(arr.tobytes())


def read_token_store(path: str) -> tuple[dict, list[tuple[str, np.ndarray, np.ndarray]]]:
    with open(path, "rb") as fh:
        if fh.read(4) != TOKEN_STORE_MAGIC:
            raise ValueError(f"{path}: not a token store")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != TOKEN_STORE_VERSION:
            raise ValueError(f"{path}: unsupported token store version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        records = []
        for _ in range(header["count"]):
            (slen,) = struct.unpack("<H", fh.read(2))
            source_id = fh.read(slen).decode("utf-8")
            arrays = []
            for width in (5, 2):
                (n,) = struct.unpack("<I", fh.read(4))
                data = np.frombuffer(fh.read(2 * width * n), dtype="<u2")
                arrays.append(data.reshape(n, width).astype(np.int64))
            records.append((source_id, arrays[0], arrays[1]))
    return header, records


# -- report rendering ---------------------------------------------------

_DENSITY_COLUMNS = (
    ("empty_bars_pct", "Empty Bars"),
    ("kick_snares", "Kick-Snares"),
    ("hh_rides", "HH-Rides"),
    ("toms", "Toms"),
    ("cymbals", "Cymbals"),
)

_METRIC_LABELS = {
    "compression_ratio": "Compression Ratio",
    "symmetry": "Symmetry",
    "syncopation": "Syncopation",
    "groove_consistency": "Groove Consistency",
    "pattern_rate": "Pattern Rate",
}


def _table(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [c.ljust(w) if i == 0 else c.rjust(w)
                 for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def render_density_table(
    rows: list[tuple[str, DensityReport]], include_reference: bool = True
) -> str:
    """Average per-bar drum-component density, one row per corpus, in the
    layout of the published density table; the full-scale training-corpus
    row is included for reference."""
    table = [["", *[label for _, label in _DENSITY_COLUMNS]]]
    if include_reference:
        table.append(
            ["Training Dataset (reference)"]
            + [f"{REFERENCE_TRAINING_DENSITY[key]:.4f}" for key, _ in _DENSITY_COLUMNS]
        )
    for label, report in rows:
        values = report.as_dict()
        table.append([label] + [f"{float(values[key]):.4f}" for key, _ in _DENSITY_COLUMNS])
    return _table(table)


def render_diff_table(
    rows: list[tuple[str, DiffReport]], include_reference: bool = True
) -> str:
    """Normalized mean absolute metric differences, "mean (stddev)" cells
    scaled to percent, with the published full-scale row for reference."""
    table = [["", *[_METRIC_LABELS[name] for name in METRIC_NAMES]]]
    if include_reference:
        table.append(
            ["Published full-scale (reference)"]
            + [
                f"{REFERENCE_DIFF_ROW[name][0]:.2f} ({REFERENCE_DIFF_ROW[name][1]:.2f})"
                for name in METRIC_NAMES
            ]
        )
    for label, report in rows:
        cells = []
        for name in METRIC_NAMES:
            mean, std = report.stats[name]
            cells.append(f"{100 * mean:.2f} ({100 * std:.2f})")
        table.append([label] + cells)
    return _table(table)


def density_report_json(report: DensityReport) -> dict:
    return {k: float(v) for k, v in report.as_dict().items()}


def diff_report_json(report: DiffReport) -> dict:
    return {
        "n_pairs": report.n_pairs,
        "stats": {
            name: {"mean": mean, "stddev": std}
            for name, (mean, std) in report.stats.items()
        },
        "normalizers": {k: float(v) for k, v in report.normalizers.items()},
    }
