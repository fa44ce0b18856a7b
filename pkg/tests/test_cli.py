"""End-to-end CLI runs on a small corpus, plus series/figure emission."""

import csv
import json
from pathlib import Path

import pytest

from silolab import plots
from silolab.cli import main as cli_main
from silolab.cost import LatencyTable, cost
from silolab.isa import parse
from silolab.model import PolicyModel, save_checkpoint
from silolab.verify import verify


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def cli_env(warm4, tmp_path_factory):
    """A corpus directory and a warm checkpoint, as the CLI expects them."""
    base = tmp_path_factory.mktemp("cli")
    corpus = base / "corpus"
    corpus.mkdir()
    model, entries, _ = warm4
    for split in ("train", "dev", "test"):
        with open(corpus / f"{split}.jsonl", "w") as fh:
            for e in entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
    clone = PolicyModel(model.config)
    clone.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
    clone.step = 0
    ckpt = base / "warm.ckpt"
    save_checkpoint(ckpt, clone)
    return base, corpus, ckpt


@pytest.fixture(scope="module")
def silo_cli_run(cli_env):
    base, corpus, ckpt = cli_env
    run = base / "run-silo"
    rc = cli_main(["finetune", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--algo", "silo", "--out", str(run), "--steps", "8",
                   "--explore-size", "2", "--train-size", "4",
                   "--seed", "3", "--torch-seed", "7",
                   "--factor", "0.5", "--warmup", "100",
                   "--dev-every", "4", "--dev-subsample", "4",
                   "--dev-beam", "2", "--checkpoint-every", "4"])
    assert rc == 0
    return run


# --- datagen ----------------------------------------------------------------------------

def test_datagen_writes_corpus_and_stats(tmp_path, capsys):
    args = ["--train", "4", "--dev", "2", "--test", "2", "--seed", "11",
            "--suite-k", "16"]
    assert cli_main(["datagen", "--out", str(tmp_path / "a")] + args) == 0
    out = capsys.readouterr().out
    assert "train: 4 entries" in out and "discards:" in out
    for split, want in (("train", 4), ("dev", 2), ("test", 2)):
        lines = (tmp_path / "a" / f"{split}.jsonl").read_text().splitlines()
        assert len(lines) == want
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert set(meta["splits"]) == {"train", "dev", "test"}
    assert all("discards" in st for st in meta["splits"].values())
    assert json.loads((tmp_path / "a" / "run-config.json").read_text())[
        "command"] == "datagen"

    # Same flags, different directory: byte-identical corpus files.
    assert cli_main(["datagen", "--out", str(tmp_path / "b")] + args) == 0
    for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_datagen_exhaustion_is_a_runtime_failure(tmp_path, monkeypatch, capsys):
    import silolab.cli as cli_mod

    def stalled(*a, **k):
        raise RuntimeError("admission stalled for split train")

    monkeypatch.setattr(cli_mod, "build_corpus", stalled)
    rc = cli_main(["datagen", "--out", str(tmp_path / "x"), "--train", "1"])
    assert rc == 3
    assert "runtime failure" in capsys.readouterr().err


# --- pretrain ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def pre_cli_run(cli_env):
    base, corpus, _ = cli_env
    run = base / "run-pre"
    rc = cli_main(["pretrain", "--corpus", str(corpus), "--out", str(run),
                   "--steps", "6", "--batch-size", "2",
                   "--layers", "1", "--dim", "32", "--heads", "2",
                   "--ff-dim", "64", "--dropout", "0.0",
                   "--eval-every", "3", "--checkpoint-every", "3",
                   "--warmup", "30", "--seed", "5", "--torch-seed", "5"])
    assert rc == 0
    return run


def test_pretrain_cli_writes_run_artifacts(cli_env, pre_cli_run):
    base, corpus, _ = cli_env
    run = pre_cli_run
    rows = read_csv(run / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4, 5, 6]
    assert (run / "checkpoints" / "step-000003.ckpt").exists()
    assert (run / "checkpoints" / "step-000006.ckpt").exists()
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["phase"] == "pretrain" and cfg["model"]["model_dim"] == 32

    # Resuming the 6-step run for 2 more steps picks up from the checkpoint.
    rc = cli_main(["pretrain", "--corpus", str(corpus),
                   "--out", str(base / "run-pre2"), "--steps", "8",
                   "--batch-size", "2", "--eval-every", "4",
                   "--checkpoint-every", "4", "--warmup", "30",
                   "--seed", "5", "--torch-seed", "5",
                   "--resume", str(run / "checkpoints" / "step-000006.ckpt")])
    assert rc == 0
    rows = read_csv(base / "run-pre2" / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [7, 8]


def test_missing_corpus_is_a_config_error(tmp_path, capsys):
    rc = cli_main(["pretrain", "--corpus", str(tmp_path / "nowhere"),
                   "--out", str(tmp_path / "r"), "--steps", "1"])
    assert rc == 2
    assert "corpus split not found" in capsys.readouterr().err


# --- finetune ---------------------------------------------------------------------------

def test_finetune_cli_run_directory(silo_cli_run, warm4):
    run = silo_cli_run
    _, entries, witness_text = warm4
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["phase"] == "finetune" and cfg["algo"] == "silo"
    rows = read_csv(run / "metrics.csv")
    assert [int(r["step"]) for r in rows] == list(range(1, 9))
    assert (run / "checkpoints" / "step-000004.ckpt").exists()
    assert (run / "checkpoints" / "step-000008.ckpt").exists()

    # The warm model emits the planted cheaper rewrite, so the replacement
    # log is non-empty and every record re-verifies offline.
    recs = [json.loads(line) for line in
            (run / "replacements.jsonl").read_text().splitlines()]
    assert recs and any(r["entry_id"] == "abs32" for r in recs)
    by_id = {e.id: e for e in entries}
    for rec in recs:
        e = by_id[rec["entry_id"]]
        assert rec["new_cost"] < rec["old_cost"]
        prog = parse(rec["rewrite"])
        assert verify(prog, parse(e.f_s), e.suite(), e.live_out,
                      e.verify_config()).equivalent
        assert cost(prog, e.suite(),
                    LatencyTable.default()).c_total == rec["new_cost"]

    dev = read_csv(run / "dev_series.csv")
    assert [int(r["step"]) for r in dev] == [4, 8]
    assert all(0.0 <= float(r["proportion"]) <= 1.0 for r in dev)


def test_finetune_concurrent_cli_matches_artifact_layout(cli_env):
    base, corpus, ckpt = cli_env
    run = base / "run-silo-x2"
    rc = cli_main(["finetune", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--algo", "silo", "--out", str(run), "--steps", "4",
                   "--explore-size", "2", "--train-size", "4",
                   "--seed", "3", "--torch-seed", "7",
                   "--factor", "0.5", "--warmup", "100",
                   "--dev-every", "2", "--dev-subsample", "4",
                   "--dev-beam", "2", "--checkpoint-every", "2",
                   "--actors", "2", "--staleness", "0"])
    assert rc == 0
    assert json.loads((run / "config.json").read_text())["actors"] == 2
    rows = read_csv(run / "metrics.csv")
    assert [int(r["step"]) for r in rows] == [1, 2, 3, 4]
    assert (run / "checkpoints" / "step-000004.ckpt").exists()
    assert (run / "dev_series.csv").exists()
    assert (run / "replacements.jsonl").exists()


def test_finetune_missing_checkpoint_is_config_error(cli_env, capsys):
    base, corpus, _ = cli_env
    rc = cli_main(["finetune", "--corpus", str(corpus),
                   "--ckpt", str(base / "missing.ckpt"), "--algo", "silo",
                   "--out", str(base / "r"), "--steps", "1"])
    assert rc == 2
    assert "checkpoint not found" in capsys.readouterr().err


def test_finetune_rejects_unknown_algo(cli_env):
    base, corpus, ckpt = cli_env
    with pytest.raises(SystemExit) as exc:
        cli_main(["finetune", "--corpus", str(corpus), "--ckpt", str(ckpt),
                  "--algo", "hillclimb", "--out", str(base / "r"),
                  "--steps", "1"])
    assert exc.value.code == 2  # argparse choices enforcement


def test_bad_staleness_flag_is_config_error(cli_env, capsys):
    base, corpus, ckpt = cli_env
    rc = cli_main(["finetune", "--corpus", str(corpus), "--ckpt", str(ckpt),
                   "--algo", "silo", "--out", str(base / "r"),
                   "--steps", "1", "--staleness", "soon"])
    assert rc == 2
    assert "staleness" in capsys.readouterr().err


# --- eval -------------------------------------------------------------------------------

def test_eval_cli_summary_and_per_entry_records(cli_env, silo_cli_run,
                                                warm4, capsys):
    base, corpus, ckpt = cli_env
    _, entries, _ = warm4
    out = base / "eval-out"
    tuned = silo_cli_run / "checkpoints" / "step-000008.ckpt"
    rc = cli_main(["eval", "--corpus", str(corpus), "--split", "test",
                   "--beam", "3", "--out", str(out),
                   "--model", f"Pre-train={ckpt}",
                   "--model", f"SILO={tuned}",
                   "--model", f"REINFORCE={ckpt}"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "proportion superoptimized (automatic verification)" in printed
    for label in ("Pre-train", "SILO", "REINFORCE"):
        assert label in printed

    rows = read_csv(out / "summary.csv")
    assert [r["model"] for r in rows] == ["Pre-train", "SILO", "REINFORCE"]
    for row in rows:
        label = row["model"]
        proportion = float(
            row["proportion superoptimized (automatic verification)"])
        assert 0.0 <= proportion <= 1.0
        slug = "".join(ch if ch.isalnum() else "-" for ch in label.lower())
        recs = [json.loads(line) for line in
                (out / f"results-{slug}.jsonl").read_text().splitlines()]
        assert {r["entry_id"] for r in recs} == {e.id for e in entries}
        assert all(r["candidates"] <= 3 for r in recs)
        # No hidden state: the summary is the mean of the per-entry column.
        assert proportion == pytest.approx(
            sum(r["superoptimized"] for r in recs) / len(recs))


def test_eval_rejects_malformed_model_flag(cli_env, capsys):
    base, corpus, ckpt = cli_env
    rc = cli_main(["eval", "--corpus", str(corpus), "--out",
                   str(base / "e2"), "--model", "just-a-path.ckpt"])
    assert rc == 2
    assert "LABEL=CHECKPOINT" in capsys.readouterr().err


# --- plotdata / report --------------------------------------------------------------------

def test_plotdata_emits_series_csvs(cli_env, silo_cli_run, tmp_path):
    out = tmp_path / "series"
    rc = cli_main(["plotdata", str(silo_cli_run), "--out", str(out)])
    assert rc == 0
    prop = read_csv(out / f"{silo_cli_run.name}-proportion.csv")
    steps = [int(r["step"]) for r in prop]
    assert steps == sorted(set(steps))  # strictly increasing
    assert all(0.0 <= float(r["proportion"]) <= 1.0 for r in prop)
    repl = read_csv(out / f"{silo_cli_run.name}-replacements.csv")
    assert sum(int(r["replacements"]) for r in repl) >= 1
    rsteps = [int(r["step"]) for r in repl]
    assert rsteps == sorted(set(rsteps))


def test_plotdata_missing_run_dir_is_config_error(tmp_path, capsys):
    rc = cli_main(["plotdata", str(tmp_path / "ghost"), "--out",
                   str(tmp_path / "o")])
    assert rc == 2
    assert "run directory not found" in capsys.readouterr().err


def test_report_renders_figures_alongside_csvs(pre_cli_run, silo_cli_run,
                                               tmp_path):
    out = tmp_path / "report"
    rc = cli_main(["report", str(pre_cli_run), str(silo_cli_run),
                   "--out", str(out)])
    assert rc == 0
    assert (out / f"{silo_cli_run.name}-proportion.csv").exists()
    pngs = {p.name for p in out.glob("*.png")}
    assert "run-pre-pretrain.png" in pngs
    assert f"{silo_cli_run.name}-finetune.png" in pngs
    for p in out.glob("*.png"):
        assert p.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_comparison_figure_needs_two_series(tmp_path):
    assert plots.render_comparison_figure({"a": []}, tmp_path / "x.png") is None
    p = plots.render_comparison_figure(
        {"a": [(1, 0.1), (2, 0.2)], "b": [(1, 0.0), (2, 0.4)]},
        tmp_path / "cmp.png")
    assert p is not None and p.exists()


def test_series_fallback_reads_metrics_when_no_dev_series(tmp_path):
    run = tmp_path / "r"
    run.mkdir()
    (run / "metrics.csv").write_text(
        "step,loss,token_acc,replacements,dev_proportion,dev_token_acc,"
        "dev_exact\n"
        "1,0.5,,1,,,\n2,0.4,,0,0.25,,\n3,0.3,,2,,,\n4,0.2,,0,0.5,,\n")
    assert plots.proportion_series(run) == [(2, 0.25), (4, 0.5)]
    assert plots.replacement_series(run) == [(1, 1), (3, 2)]
