import io
import json

import pytest

from pydefgen.checkpoint import load_checkpoint
from pydefgen.cli import EXIT_CHECK_FAILED, EXIT_INPUT_ERROR, EXIT_OK, exit_code, main
from pydefgen.exceptions import PydefgenDivergedLoss, PydefgenMalformedRecord
from pydefgen.manifest import MANIFEST_NAME, RunManifest

from tests import TINY_MODEL, fixture_path


@pytest.fixture()
def tiny_run_config(tmp_path):
    path = tmp_path / "tiny.json"
    document = {
        "model": TINY_MODEL,
        "training": {
            "batch_size": 16,
            "optimizer": {"lr": 0.01},
            "decode": {"max_decode_len": 8},
        },
        "stage_one": {"max_epoch": 1, "early_stop_patience": 1},
        "stage_two": {"max_epoch": 1, "early_stop_patience": 1},
    }
    path.write_text(json.dumps(document))
    yield path


@pytest.fixture()
def train_args(corpus_dir, tiny_run_config):
    config = str(tiny_run_config)
    yield ["--quiet", "train", "--data", str(corpus_dir), "--config", config]


@pytest.fixture()
def stage_one_checkpoint(tmp_path, train_args):
    out = tmp_path / "stage1"
    code = main([*train_args, "--out", str(out)])
    assert code == EXIT_OK
    yield out / "best.ckpt"


def _row(printed: str, name: str) -> str:
    return next(line for line in printed.splitlines() if line.startswith(name))


def _failing(printed: str) -> list[str]:
    return [line.split()[0] for line in printed.splitlines() if line.endswith("FAIL")]


def test_exit_codes():
    assert exit_code(PydefgenMalformedRecord("bad", 3)) == EXIT_INPUT_ERROR
    assert exit_code(FileNotFoundError("x")) == EXIT_INPUT_ERROR
    assert exit_code(PydefgenDivergedLoss("nan", 1, 2)) == EXIT_CHECK_FAILED


def test_prepare_demo_data(tmp_path, capsys):
    out = tmp_path / "prepared"
    assert main(["--quiet", "prepare", "--demo-data", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert _row(printed, "train").split()[1:3] == ["50", "50"]
    assert "vocab size" in printed
    assert (out / "vocab.json").is_file()
    assert len((out / "splits" / "train.jsonl").read_text().splitlines()) == 50
    manifest = RunManifest.read(out)
    assert manifest.command == "prepare"
    assert manifest.finished_at is not None


def test_prepare_uses_run_root(run_root):
    assert main(["--quiet", "prepare", "--demo-data"]) == EXIT_OK
    (run_dir,) = run_root.iterdir()
    assert run_dir.name.startswith("prepare-")
    assert (run_dir / MANIFEST_NAME).is_file()


def test_prepare_lenient_counts_rejections(tmp_path, capsys):
    malformed = str(fixture_path("data/malformed.tsv"))
    args = ["--quiet", "prepare", "--data", malformed, "--lenient"]
    assert main([*args, "--out", str(tmp_path)]) == EXIT_OK
    assert _row(capsys.readouterr().out, "train").split()[-1] == "1"


def test_malformed_input_exits_2(tmp_path, capsys):
    malformed = str(fixture_path("data/malformed.tsv"))
    code = main(["--quiet", "prepare", "--data", malformed, "--out", str(tmp_path)])
    assert code == EXIT_INPUT_ERROR
    assert "line 2" in capsys.readouterr().err


def test_missing_data_path_exits_2(tmp_path, tiny_run_config, capsys):
    missing = tmp_path / "nowhere"
    args = ["--quiet", "train", "--data", str(missing)]
    code = main([*args, "--config", str(tiny_run_config)])
    assert code == EXIT_INPUT_ERROR
    assert str(missing) in capsys.readouterr().err


def test_stage_two_without_checkpoint_exits_2(corpus_dir, tiny_run_config):
    args = ["--quiet", "train", "--stage", "2", "--data", str(corpus_dir)]
    code = main([*args, "--config", str(tiny_run_config)])
    assert code == EXIT_INPUT_ERROR


def test_training_is_reproducible(tmp_path, train_args, stage_one_checkpoint):
    again = tmp_path / "again"
    assert main([*train_args, "--out", str(again)]) == EXIT_OK
    assert (again / "best.ckpt").read_bytes() == stage_one_checkpoint.read_bytes()
    assert len((again / "epochs.jsonl").read_text().splitlines()) == 1


def test_stage_two_continues(tmp_path, train_args, stage_one_checkpoint, capsys):
    out = tmp_path / "stage2"
    args = [*train_args, "--stage", "2", "--init-from", str(stage_one_checkpoint)]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    assert "stage 2: best epoch 1" in capsys.readouterr().out
    checkpoint = load_checkpoint(out / "best.ckpt")
    assert checkpoint.state.completed_stages == ["one", "two"]
    assert checkpoint.stage_config.lambda_ == 0.8


def test_stage_two_rejects_other_architecture(
    tmp_path, corpus_dir, stage_one_checkpoint
):
    wider = tmp_path / "wider.json"
    wider.write_text(json.dumps({"model": {**TINY_MODEL, "d_model": 16}}))
    args = ["--quiet", "train", "--stage", "2", "--data", str(corpus_dir)]
    args += ["--config", str(wider), "--init-from", str(stage_one_checkpoint)]
    assert main(args) == EXIT_INPUT_ERROR


def test_generate_from_stdin(monkeypatch, capsys, stage_one_checkpoint):
    capsys.readouterr()
    stdin = io.StringIO("bank\twe sat on the bank\tsloping land\n")
    monkeypatch.setattr("sys.stdin", stdin)
    args = ["--quiet", "generate", "--checkpoint", str(stage_one_checkpoint)]
    assert main([*args, "--data", "-"]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 1


def test_generate_to_file(tmp_path, corpus_dir, stage_one_checkpoint):
    out = tmp_path / "gen.tsv"
    args = ["--quiet", "generate", "--checkpoint", str(stage_one_checkpoint)]
    args += ["--data", str(corpus_dir), "--beam", "2", "--workers", "2"]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 10


def test_evaluate_writes_metrics(tmp_path, corpus_dir, stage_one_checkpoint, capsys):
    out = tmp_path / "eval"
    args = ["--quiet", "evaluate", "--checkpoint", str(stage_one_checkpoint)]
    args += ["--data", str(corpus_dir), "--split", "valid"]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["count"] == 10
    assert len((out / "generations.tsv").read_text().splitlines()) == 10
    assert "BLEU" in capsys.readouterr().out


def test_evaluate_empty_split_exits_2(tmp_path, stage_one_checkpoint, capsys):
    empty = tmp_path / "empty.tsv"
    empty.write_text("")
    args = ["--quiet", "evaluate", "--checkpoint", str(stage_one_checkpoint)]
    args += ["--data", str(empty), "--out", str(tmp_path / "eval")]
    assert main(args) == EXIT_INPUT_ERROR
    assert "No hypotheses" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_2(tmp_path, corpus_dir):
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint at all, just bytes padding it out to length")
    args = ["--quiet", "generate", "--checkpoint", str(bogus)]
    assert main([*args, "--data", str(corpus_dir)]) == EXIT_INPUT_ERROR


def test_gradcheck_passes(capsys):
    assert main(["--quiet", "gradcheck", "--samples", "50"]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "full_loss" in printed
    assert "FAIL" not in printed


def test_gradcheck_tight_tolerance_names_failures(capsys):
    args = ["--quiet", "gradcheck", "--tolerance", "1e-12", "--samples", "20"]
    assert main(args) == EXIT_CHECK_FAILED
    assert _failing(capsys.readouterr().out)


def test_gradcheck_catches_corrupted_op(capsys):
    args = ["--quiet", "gradcheck", "--corrupt-gradient", "matmul", "--samples", "20"]
    assert main(args) == EXIT_CHECK_FAILED
    assert {"matmul", "full_loss"} <= set(_failing(capsys.readouterr().out))


def test_gradcheck_help_says_config_model_is_ignored(capsys):
    with pytest.raises(SystemExit) as error:
        main(["gradcheck", "--help"])
    assert error.value.code == 0
    assert "ignored" in capsys.readouterr().out


def test_gradcheck_uses_only_config_seed(tmp_path, capsys):
    path = tmp_path / "wide.json"
    document = {"model": {"d_model": 256, "n_heads": 8}, "training": {"seed": 5}}
    path.write_text(json.dumps(document))
    args = ["--quiet", "gradcheck", "--config", str(path), "--samples", "20"]
    assert main(args) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as error:
        main(["train", "--stage", "3"])
    assert error.value.code == 2


def test_one_shot_training_skips_stage_one(tmp_path, train_args):
    out = tmp_path / "one-shot"
    assert main([*train_args, "--stage", "one-shot", "--out", str(out)]) == EXIT_OK

    checkpoint = load_checkpoint(out / "best.ckpt")
    assert checkpoint.state.completed_stages == ["two"]
    assert checkpoint.stage_config.lambda_ == 0.8


def test_ablate_writes_comparison_table(tmp_path, corpus_dir, tiny_run_config, capsys):
    out = tmp_path / "ablate"
    args = ["--quiet", "ablate", "--axis", "pooling", "--data", str(corpus_dir)]
    assert main([*args, "--config", str(tiny_run_config), "--out", str(out)]) == EXIT_OK

    printed = capsys.readouterr().out
    assert printed.startswith("| pooling | BLEU |")
    assert "| max |" in printed and "| mean |" in printed
    document = json.loads((out / "ablation.json").read_text())
    assert document["axis"] == "pooling"
    assert len(document["arms"]) == 2
    assert RunManifest.read(out).command == "ablate"
