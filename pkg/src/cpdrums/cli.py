"""Command-line pipeline: preprocess -> vocab -> tokenize -> train ->
generate -> evaluate, plus a one-shot metrics command.

Every stage reads/writes artifacts under the work directory and embeds
the run's config hash and seed; stages verify hashes so mismatched
artifacts fail loudly instead of silently disagreeing.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from fractions import Fraction

import numpy as np

from .artifacts import (
    RunConfig,
    density_report_json,
    diff_report_json,
    read_phrase_store,
    read_token_store,
    read_vocab,
    render_density_table,
    render_diff_table,
    tau_value,
    vocab_hash,
    write_phrase_store,
    write_token_store,
    write_vocab,
)
from .codec import build_vocab, decode_drums, encode_condition, encode_drums
from .metrics import density_report, extract_metrics, metric_diff_report
from .midi import MidiParseError, parse_midi, quantize, write_midi
from .nn.model import ConditionalDrumModel, PRESETS
from .nn.sample import draw_temperature, generate
from .nn.train import load_checkpoint, restore_model, train_model
from .preprocess import (
    RoleMissingError,
    filter_phrases,
    map_drum_pitches,
    phrase_to_score,
    score_to_phrase,
    segment_phrases,
    select_tracks,
    split_dataset,
)


class CliError(Exception):
    """Domain failure with a structured message; maps to exit code 2."""


def _work_path(config: RunConfig, *parts: str) -> str:
    return os.path.join(config.work_dir, *parts)


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"missing {hint}: {path}")
    return path


def _check_hash(header: dict, config: RunConfig, path: str):
    if header.get("config_hash") != config.config_hash:
        raise CliError(
            f"{path} was produced by config {header.get('config_hash')}, "
            f"current config is {config.config_hash}"
        )


def _sanitize(source_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", source_id)


def _splits_path(config: RunConfig) -> str:
    return _work_path(config, "splits.json")


def _load_split_ids(config: RunConfig, name: str) -> list[str]:
    with open(_require(_splits_path(config), "split manifest"), "r") as fh:
        manifest = json.load(fh)
    _check_hash(manifest, config, _splits_path(config))
    return manifest["splits"][name]


# -- preprocess ---------------------------------------------------------


def cmd_preprocess(config: RunConfig) -> int:
    corpus = config.corpus_dir
    if not os.path.isdir(corpus):
        raise CliError(f"corpus directory not found: {corpus}")
    names = sorted(
        n for n in os.listdir(corpus) if n.lower().endswith((".mid", ".midi"))
    )
    if not names:
        raise CliError(f"no input files in {corpus}")
    os.makedirs(config.work_dir, exist_ok=True)

    filter_cfg = config.filter_config()
    phrases = []
    stats = {
        "files_seen": len(names),
        "files_used": 0,
        "files_unreadable": 0,
        "files_missing_role": 0,
        "dropped_drum_pitches": 0,
        "phrases_before_filter": 0,
        "ts_histogram": {},
    }
    for name in names:
        path = os.path.join(corpus, name)
        try:
            with open(path, "rb") as fh:
                score = parse_midi(fh.read())
        except (MidiParseError, OSError) as exc:
            print(f"skipping unreadable {name}: {exc}", file=sys.stderr)
            stats["files_unreadable"] += 1
            continue
        tick_grid = score.ticks_per_quarter // config.grid
        if tick_grid and score.ticks_per_quarter % config.grid == 0:
            score = quantize(score, tick_grid)
        try:
            guitar, bass, drums = select_tracks(score)
        except RoleMissingError as exc:
            print(f"excluding {name}: {exc}", file=sys.stderr)
            stats["files_missing_role"] += 1
            continue
        dropped: list[int] = []
        map_drum_pitches(drums.notes, score.ticks_per_quarter, dropped)
        stats["dropped_drum_pitches"] += dropped[0]
        file_phrases = segment_phrases(
            score, guitar, bass, drums, filter_cfg, source_id=name
        )
        stats["phrases_before_filter"] += len(file_phrases)
        kept = filter_phrases(file_phrases, filter_cfg)
        for phrase in kept:
            for bar in phrase.bars:
                key = f"{bar.ts[0]}/{bar.ts[1]}"
                stats["ts_histogram"][key] = stats["ts_histogram"].get(key, 0) + 1
        phrases.extend(kept)
        stats["files_used"] += 1
    stats["phrases_kept"] = len(phrases)

    write_phrase_store(_work_path(config, "phrases.jsonl"), phrases, config)
    train, valid, test = split_dataset(phrases, seed=config.seed)
    manifest = {
        "artifact": "splits",
        "config_hash": config.config_hash,
        "seed": config.seed,
        "splits": {
            "train": [p.source_id for p in train],
            "valid": [p.source_id for p in valid],
            "test": [p.source_id for p in test],
        },
    }
    with open(_splits_path(config), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    stats.update(
        config_hash=config.config_hash,
        seed=config.seed,
        split_sizes={"train": len(train), "valid": len(valid), "test": len(test)},
    )
    with open(_work_path(config, "stats.json"), "w") as fh:
        json.dump(stats, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(
        f"kept {len(phrases)} phrases from {stats['files_used']}/{len(names)} files "
        f"(split {len(train)}/{len(valid)}/{len(test)})"
    )
    return 0


# -- vocab / tokenize ---------------------------------------------------


def cmd_vocab(config: RunConfig) -> int:
    path = _require(_work_path(config, "phrases.jsonl"), "phrase store")
    header, phrases = read_phrase_store(path)
    _check_hash(header, config, path)
    if not phrases:
        raise CliError("phrase store is empty")
    enc_vocab, dec_vocab = build_vocab(
        phrases, grid=config.grid, tempo_bin_width=config.tempo_bin
    )
    write_vocab(_work_path(config, "enc_vocab.json"), enc_vocab, config)
    write_vocab(_work_path(config, "dec_vocab.json"), dec_vocab, config)
    sizes = {
        "encoder": {d: len(v) for d, v in enc_vocab.dims.items()},
        "decoder": {d: len(v) for d, v in dec_vocab.dims.items()},
    }
    print(json.dumps(sizes, sort_keys=True))
    return 0


def _load_vocabs(config: RunConfig):
    enc_path = _require(_work_path(config, "enc_vocab.json"), "encoder vocabulary")
    dec_path = _require(_work_path(config, "dec_vocab.json"), "decoder vocabulary")
    enc_header, enc_vocab = read_vocab(enc_path)
    dec_header, dec_vocab = read_vocab(dec_path)
    _check_hash(enc_header, config, enc_path)
    _check_hash(dec_header, config, dec_path)
    return enc_vocab, dec_vocab


def cmd_tokenize(config: RunConfig) -> int:
    store_path = _require(_work_path(config, "phrases.jsonl"), "phrase store")
    header, phrases = read_phrase_store(store_path)
    _check_hash(header, config, store_path)
    enc_vocab, dec_vocab = _load_vocabs(config)
    model_cfg = PRESETS[config.preset]()
    by_id = {p.source_id: p for p in phrases}
    skipped = 0
    for split in ("train", "valid", "test"):
        records = []
        for source_id in _load_split_ids(config, split):
            phrase = by_id[source_id]
            enc = np.asarray(encode_condition(phrase, enc_vocab), dtype=np.int64)
            dec = np.asarray(encode_drums(phrase, dec_vocab), dtype=np.int64)
            if len(enc) > model_cfg.max_enc_len or len(dec) > model_cfg.max_dec_len:
                skipped += 1
                continue
            records.append((source_id, enc, dec))
        write_token_store(
            _work_path(config, f"{split}.tok"), records, config, enc_vocab, dec_vocab
        )
        print(f"{split}: {len(records)} phrases tokenized")
    if skipped:
        print(f"skipped {skipped} overlength phrases", file=sys.stderr)
    return 0


# -- train --------------------------------------------------------------


def _load_token_split(config: RunConfig, split: str, enc_vocab, dec_vocab):
    path = _require(_work_path(config, f"{split}.tok"), f"{split} token store")
    header, records = read_token_store(path)
    _check_hash(header, config, path)
    if header["enc_vocab_hash"] != vocab_hash(enc_vocab) or header[
        "dec_vocab_hash"
    ] != vocab_hash(dec_vocab):
        raise CliError(f"{path}: token store was built with different vocabularies")
    return records


def cmd_train(config: RunConfig, resume: str | None = None) -> int:
    enc_vocab, dec_vocab = _load_vocabs(config)
    train_records = _load_token_split(config, "train", enc_vocab, dec_vocab)
    valid_records = _load_token_split(config, "valid", enc_vocab, dec_vocab)
    if not train_records:
        raise CliError("train split is empty")
    train_set = [(e, d) for _, e, d in train_records]
    valid_set = [(e, d) for _, e, d in valid_records] or train_set

    model_cfg = PRESETS[config.preset]()
    enc_sizes = {d: len(v) for d, v in enc_vocab.dims.items()}
    dec_sizes = {d: len(v) for d, v in dec_vocab.dims.items()}
    model = ConditionalDrumModel(model_cfg, enc_sizes, dec_sizes, seed=config.seed)

    ckpt_dir = _work_path(config, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    log_path = _work_path(config, "train_log.jsonl")
    with open(log_path, "a", encoding="utf-8") as log_fh:
        result = train_model(
            model,
            train_set,
            valid_set,
            enc_sizes,
            dec_sizes,
            epochs=config.epochs,
            batch_size=config.batch_size,
            seed=config.seed,
            patience=config.patience,
            out_dir=ckpt_dir,
            target_accuracy=config.target_accuracy,
            max_steps=config.max_steps,
            log_fh=log_fh,
            resume_from=resume,
        )
    summary = {
        "config_hash": config.config_hash,
        "seed": config.seed,
        "steps": result.steps,
        "epochs": result.epochs,
        "best_val_loss": result.best_val_loss,
        "stopped_early": result.stopped_early,
        "best_checkpoint": os.path.join(ckpt_dir, "best.ckpt"),
    }
    with open(_work_path(config, "train_summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


# -- generate -----------------------------------------------------------


def cmd_generate(
    config: RunConfig,
    checkpoint: str | None = None,
    split: str = "test",
    out_dir: str | None = None,
    truth_dir: str | None = None,
    limit: int | None = None,
) -> int:
    checkpoint = checkpoint or _work_path(config, "checkpoints", "best.ckpt")
    _require(checkpoint, "checkpoint")
    enc_vocab, dec_vocab = _load_vocabs(config)
    snapshot = load_checkpoint(checkpoint)
    enc_sizes = {d: len(v) for d, v in enc_vocab.dims.items()}
    dec_sizes = {d: len(v) for d, v in dec_vocab.dims.items()}
    if snapshot["enc_vocab_sizes"] != enc_sizes or snapshot["dec_vocab_sizes"] != dec_sizes:
        raise CliError("checkpoint was trained with different vocabularies")
    model = restore_model(snapshot)

    store_path = _require(_work_path(config, "phrases.jsonl"), "phrase store")
    header, phrases = read_phrase_store(store_path)
    _check_hash(header, config, store_path)
    by_id = {p.source_id: p for p in phrases}
    ids = _load_split_ids(config, split)
    if limit is not None:
        ids = ids[:limit]

    out_dir = out_dir or _work_path(config, "generated")
    truth_dir = truth_dir or _work_path(config, "truth")
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(truth_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    fixed_tau = tau_value(config)
    made = 0
    for source_id in ids:
        phrase = by_id[source_id]
        enc = np.asarray(encode_condition(phrase, enc_vocab), dtype=np.int64)
        if len(enc) > model.config.max_enc_len:
            print(f"skipping overlength condition {source_id}", file=sys.stderr)
            continue
        tau = draw_temperature(rng, fixed_tau)
        words = generate(model, enc, temperature=tau, rng=rng)
        flags: list[str] = []
        drum_events = decode_drums(words, dec_vocab, phrase.bars, flags)
        stem = _sanitize(source_id)
        with open(os.path.join(out_dir, f"{stem}.mid"), "wb") as fh:
            fh.write(write_midi(phrase_to_score(phrase, drum_events)))
        with open(os.path.join(out_dir, f"{stem}.tokens"), "w") as fh:
            fh.write(f"# source_id={source_id} tau={tau} seed={config.seed} "
                     f"config_hash={config.config_hash}\n")
            for word in words:
                fh.write(
                    f"{dec_vocab.token('onset', word.onset)}\t"
                    f"{dec_vocab.token('drums', word.drums)}\n"
                )
            for flag in flags:
                fh.write(f"# flag: {flag}\n")
        with open(os.path.join(truth_dir, f"{stem}.mid"), "wb") as fh:
            fh.write(write_midi(phrase_to_score(phrase)))
        made += 1
    print(f"generated {made} phrases into {out_dir} (truth in {truth_dir})")
    return 0


# -- evaluate -----------------------------------------------------------


def _phrases_from_midi_dir(directory: str) -> dict[str, "object"]:
    out = {}
    for name in sorted(os.listdir(directory)):
        if not name.lower().endswith((".mid", ".midi")):
            continue
        path = os.path.join(directory, name)
        with open(path, "rb") as fh:
            score = parse_midi(fh.read())
        out[name] = score_to_phrase(score, source_id=name)
    return out


def cmd_evaluate(
    config: RunConfig,
    generated_dir: str | None = None,
    truth_dir: str | None = None,
) -> int:
    generated_dir = generated_dir or _work_path(config, "generated")
    truth_dir = truth_dir or _work_path(config, "truth")
    _require(generated_dir, "generated directory")
    _require(truth_dir, "truth directory")
    generated = _phrases_from_midi_dir(generated_dir)
    truth = _phrases_from_midi_dir(truth_dir)
    paired = sorted(set(generated) & set(truth))
    unpaired = sorted(set(generated) ^ set(truth))
    if not paired:
        raise CliError("no paired files between generated and truth directories")
    for name in unpaired:
        print(f"unpaired, excluded: {name}", file=sys.stderr)

    gen_vectors, truth_vectors = [], []
    per_phrase = {}
    for name in paired:
        gv = extract_metrics(generated[name], grid=config.grid,
                             resolution=config.resolution)
        tv = extract_metrics(truth[name], grid=config.grid,
                             resolution=config.resolution)
        gen_vectors.append(gv)
        truth_vectors.append(tv)
        per_phrase[name] = {"generated": gv.as_dict(), "truth": tv.as_dict()}
    gen_density = density_report(
        [e for name in paired for e in generated[name].drum_events],
        [b for name in paired for b in generated[name].bars],
    )
    truth_density = density_report(
        [e for name in paired for e in truth[name].drum_events],
        [b for name in paired for b in truth[name].bars],
    )
    diff = metric_diff_report(gen_vectors, truth_vectors)

    density_text = render_density_table(
        [("Generated", gen_density), ("Ground truth", truth_density)]
    )
    diff_text = render_diff_table([("This run", diff)])
    bundle = {
        "artifact": "evaluation",
        "config_hash": config.config_hash,
        "seed": config.seed,
        "n_pairs": len(paired),
        "unpaired": unpaired,
        "density": {
            "generated": density_report_json(gen_density),
            "truth": density_report_json(truth_density),
        },
        "diff": diff_report_json(diff),
        "per_phrase": per_phrase,
    }
    os.makedirs(config.work_dir, exist_ok=True)
    with open(_work_path(config, "evaluation.json"), "w") as fh:
        json.dump(bundle, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(_work_path(config, "evaluation_tables.txt"), "w") as fh:
        fh.write("Average drum-component density per bar\n")
        fh.write(density_text)
        fh.write("\nNormalized mean absolute metric differences (x100)\n")
        fh.write(diff_text)
    print("Average drum-component density per bar")
    print(density_text, end="")
    print("\nNormalized mean absolute metric differences (x100)")
    print(diff_text, end="")
    return 0


# -- metrics ------------------------------------------------------------


def cmd_metrics(config: RunConfig, midi_path: str) -> int:
    _require(midi_path, "MIDI file")
    with open(midi_path, "rb") as fh:
        score = parse_midi(fh.read())
    phrase = score_to_phrase(score, source_id=os.path.basename(midi_path))
    vector = extract_metrics(phrase, grid=config.grid, resolution=config.resolution)
    report = density_report(phrase.drum_events, phrase.bars)
    out = {
        "source": midi_path,
        "metrics": vector.as_dict(),
        "density": density_report_json(report),
    }
    print(json.dumps(out, sort_keys=True, indent=1))
    return 0


# -- argument parsing ---------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpdrums",
        description="Conditional drum-track generation pipeline",
    )
    parser.add_argument("--config", help="JSON run-config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="model preset")
    parser.add_argument("--tau", help="sampling temperature (float or 'uniform')")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("preprocess", help="corpus -> phrase store + splits + stats")
    sub.add_parser("vocab", help="phrase store -> encoder/decoder vocabularies")
    sub.add_parser("tokenize", help="phrase store -> per-split token stores")

    p_train = sub.add_parser("train", help="token stores -> checkpoints")
    p_train.add_argument("--resume", help="checkpoint to resume from")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--max-steps", type=int)
    p_train.add_argument("--target-accuracy", type=float)

    p_gen = sub.add_parser("generate", help="checkpoint + seeds -> MIDI + tokens")
    p_gen.add_argument("--checkpoint")
    p_gen.add_argument("--split", default="test")
    p_gen.add_argument("--out-dir")
    p_gen.add_argument("--truth-dir")
    p_gen.add_argument("--limit", type=int)

    p_eval = sub.add_parser("evaluate", help="generated vs truth MIDI directories")
    p_eval.add_argument("--generated-dir")
    p_eval.add_argument("--truth-dir")

    p_metrics = sub.add_parser("metrics", help="metric vector of one MIDI file")
    p_metrics.add_argument("midi")
    return parser


def _resolve_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.tau is not None:
        overrides["tau"] = args.tau
    for attr in ("epochs", "max_steps", "target_accuracy"):
        if getattr(args, attr.replace("-", "_"), None) is not None:
            overrides[attr] = getattr(args, attr.replace("-", "_"))
    if overrides:
        raw = json.loads(config.to_json())
        raw.update(overrides)
        config = RunConfig.from_json(json.dumps(raw))
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    config = _resolve_config(args)
    try:
        if args.command == "preprocess":
            return cmd_preprocess(config)
        if args.command == "vocab":
            return cmd_vocab(config)
        if args.command == "tokenize":
            return cmd_tokenize(config)
        if args.command == "train":
            return cmd_train(config, resume=args.resume)
        if args.command == "generate":
            return cmd_generate(
                config,
                checkpoint=args.checkpoint,
                split=args.split,
                out_dir=args.out_dir,
                truth_dir=args.truth_dir,
                limit=args.limit,
            )
        if args.command == "evaluate":
            return cmd_evaluate(
                config,
                generated_dir=args.generated_dir,
                truth_dir=args.truth_dir,
            )
        if args.command == "metrics":
            return cmd_metrics(config, args.midi)
        raise CliError(f"unknown command {args.command}")
    except CliError as exc:
        print(json.dumps({"error": str(exc), "command": args.command}),
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
