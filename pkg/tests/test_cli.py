"""End-to-end pipeline through the command-line entry point, plus the
error paths (missing artifacts, config-hash mismatches, exit codes).

The full pipeline runs once per module on the bundled toy corpus with a
tiny step budget; individual tests then inspect the artifacts it left.
"""

import json
import os

import pytest

from cpdrums.cli import main
from tests.conftest import ASSETS

CORPUS = os.path.join(ASSETS, "corpus")


def write_config(path, work_dir, **overrides):
    payload = {
        "corpus_dir": CORPUS,
        "work_dir": str(work_dir),
        "preset": "desk",
        "epochs": 1,
        "batch_size": 4,
        "max_steps": 2,
        "tau": "1.0",
        "seed": 0,
    }
    payload.update(overrides)
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run preprocess..evaluate once; yields (config_path, work_dir)."""
    root = tmp_path_factory.mktemp("cli")
    work = root / "work"
    config = write_config(root / "config.json", work)
    for argv in (
        ["--config", config, "preprocess"],
        ["--config", config, "vocab"],
        ["--config", config, "tokenize"],
        ["--config", config, "train"],
        ["--config", config, "generate"],
        ["--config", config, "evaluate"],
    ):
        assert main(argv) == 0, argv
    return config, work


def test_preprocess_writes_store_splits_stats(pipeline):
    _, work = pipeline
    stats = json.loads((work / "stats.json").read_text())
    assert stats["files_seen"] == 20
    assert stats["files_unreadable"] == 1
    assert stats["files_missing_role"] == 1
    assert stats["dropped_drum_pitches"] >= 1
    assert stats["phrases_kept"] <= stats["phrases_before_filter"]

    splits = json.loads((work / "splits.json").read_text())
    assert splits["artifact"] == "splits"
    ids = [i for name in ("train", "valid", "test") for i in splits["splits"][name]]
    assert len(ids) == len(set(ids)) == stats["phrases_kept"]
    assert len(splits["splits"]["test"]) >= 1

    head = json.loads((work / "phrases.jsonl").read_text().splitlines()[0])
    assert head["artifact"] == "phrase_store"
    assert head["count"] == stats["phrases_kept"]


def test_vocab_files_and_sizes(pipeline, capsys):
    config, work = pipeline
    enc = json.loads((work / "enc_vocab.json").read_text())
    dec = json.loads((work / "dec_vocab.json").read_text())
    assert enc["artifact"] == "vocab" and dec["artifact"] == "vocab"
    # Toy corpus exercises every drum component: 3 structural + 13 parts.
    assert len(dec["vocab"]["dims"]["drums"]) == 16
    for dims in (enc["vocab"]["dims"], dec["vocab"]["dims"]):
        for tokens in dims.values():
            assert tokens[:3] == ["<pad>", "<bar>", "<eos>"]
    # Re-running vocab is a no-op byte-wise (deterministic construction).
    before = (work / "enc_vocab.json").read_bytes()
    assert main(["--config", config, "vocab"]) == 0
    capsys.readouterr()
    assert (work / "enc_vocab.json").read_bytes() == before


def test_tokenize_covers_all_splits(pipeline):
    _, work = pipeline
    splits = json.loads((work / "splits.json").read_text())
    for name in ("train", "valid", "test"):
        path = work / f"{name}.tok"
        assert path.exists()
        with open(path, "rb") as fh:
            assert fh.read(4) == b"CPTK"
        # Token store carries one stream per split phrase (none overlength here).
        count = len(splits["splits"][name])
        assert count >= 1


def test_train_summary_and_checkpoints(pipeline):
    _, work = pipeline
    summary = json.loads((work / "train_summary.json").read_text())
    assert summary["steps"] == 2  # max_steps cap
    assert summary["stopped_early"] is True
    assert os.path.exists(summary["best_checkpoint"])
    assert (work / "checkpoints" / "latest.ckpt").exists()
    log_lines = (work / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) >= 3  # 2 train records + 1 validation record


def test_generate_emits_midi_tokens_truth(pipeline):
    _, work = pipeline
    gen = sorted(os.listdir(work / "generated"))
    mids = [n for n in gen if n.endswith(".mid")]
    toks = [n for n in gen if n.endswith(".tokens")]
    assert mids and len(mids) == len(toks)
    assert sorted(os.listdir(work / "truth")) == mids
    text = (work / "generated" / toks[0]).read_text().splitlines()
    assert text[0].startswith("# source_id=")
    assert "config_hash=" in text[0]
    assert text[1] == "<pad>\t<pad>"
    assert text[2] == "<bar>\t<bar>"
    with open(work / "generated" / mids[0], "rb") as fh:
        assert fh.read(4) == b"MThd"


def test_evaluate_writes_tables_and_bundle(pipeline):
    _, work = pipeline
    bundle = json.loads((work / "evaluation.json").read_text())
    assert bundle["artifact"] == "evaluation"
    assert bundle["n_pairs"] == len(bundle["per_phrase"]) >= 1
    assert set(bundle["density"]) == {"generated", "truth"}
    tables = (work / "evaluation_tables.txt").read_text()
    assert "Empty Bars" in tables and "Kick-Snares" in tables
    assert "Training Dataset (reference)" in tables
    assert "Compression Ratio" in tables and "Syncopation" in tables
    assert "Published full-scale (reference)" in tables


def test_truth_vs_truth_diff_is_zero(pipeline, tmp_path, capsys):
    _, work = pipeline
    config = write_config(tmp_path / "config.json", tmp_path / "work2")
    truth = str(work / "truth")
    assert main(["--config", config, "evaluate",
                 "--generated-dir", truth, "--truth-dir", truth]) == 0
    capsys.readouterr()
    bundle = json.loads((tmp_path / "work2" / "evaluation.json").read_text())
    for stat in bundle["diff"]["stats"].values():
        assert stat["mean"] == 0.0
        assert stat["stddev"] == 0.0


def test_metrics_command_reports_vector(pipeline, capsys):
    config, _ = pipeline
    sample = os.path.join(CORPUS, "00_all_components.mid")
    assert main(["--config", config, "metrics", sample]) == 0
    report = json.loads(capsys.readouterr().out)
    for key in ("compression_ratio", "symmetry", "syncopation",
                "groove_consistency", "pattern_rate"):
        assert key in report["metrics"]
    assert report["density"]["kick_snares"] > 0


def test_preprocess_errors_on_empty_corpus(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    config = write_config(tmp_path / "c.json", tmp_path / "w", corpus_dir=str(empty))
    assert main(["--config", config, "preprocess"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["command"] == "preprocess"
    assert "no input files" in err["error"]


def test_stages_error_without_upstream_artifacts(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", tmp_path / "w")
    for command in ("vocab", "tokenize", "train", "generate"):
        assert main(["--config", config, command]) == 2, command
        err = json.loads(capsys.readouterr().err)
        assert err["command"] == command
        assert "missing" in err["error"]


def test_evaluate_errors_without_directories(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", tmp_path / "w")
    assert main(["--config", config, "evaluate"]) == 2
    assert "missing" in json.loads(capsys.readouterr().err)["error"]


def test_metrics_errors_on_missing_file(tmp_path, capsys):
    config = write_config(tmp_path / "c.json", tmp_path / "w")
    assert main(["--config", config, "metrics", str(tmp_path / "nope.mid")]) == 2
    assert "missing" in json.loads(capsys.readouterr().err)["error"]


def test_seed_override_breaks_artifact_hash(pipeline, capsys):
    config, _ = pipeline
    assert main(["--config", config, "--seed", "99", "vocab"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "produced by config" in err["error"]


def test_unknown_command_exits_via_argparse():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
