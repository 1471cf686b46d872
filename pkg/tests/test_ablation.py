import json

import pytest

from pydefgen import ablation
from pydefgen.ablation import (
    ABLATION_ARMS,
    AblationTable,
    ArmResult,
    arm_config,
    run_ablation,
)
from pydefgen.config import ModelSettings, RunConfig, preset
from pydefgen.data import build_vocab, make_batches
from pydefgen.demo import demo_entries
from pydefgen.evaluation import evaluate_split
from pydefgen.exceptions import PydefgenInvalidConfig, PydefgenZeroNorm
from pydefgen.model import Seq2SeqModel
from pydefgen.objectives import alignment_diagnostics
from pydefgen.training import OptimizerConfig, StageConfig, TrainingConfig, train_stage

from tests import BEHAVIOUR_SEEDS, SMALL_MODEL, TINY_MODEL


@pytest.fixture()
def tiny_ablation():
    entries = demo_entries(20, seed=1)
    splits = {"train": entries[:12], "valid": entries[12:16], "test": entries[16:]}
    config = RunConfig(
        model=ModelSettings(**TINY_MODEL),
        training=TrainingConfig(batch_size=4, optimizer=OptimizerConfig(lr=1e-2)),
        stage_one=StageConfig("one", 1, 1),
        stage_two=StageConfig("two", 1, 1, "max", 0.8),
    )
    yield config, build_vocab(splits["train"]), splits


def test_arms_cover_every_axis():
    assert ABLATION_ARMS["pooling"] == ("max", "mean")
    assert ABLATION_ARMS["lambda"] == (1.0, 0.8, 0.6, 0.4, 0.2, 0.0)
    assert ABLATION_ARMS["batch-size"] == (8, 16, 32, 64)
    assert ABLATION_ARMS["stages"] == ("one", "two")


def test_arm_config():
    base = RunConfig()
    mean, one_stage = arm_config(base, "pooling", "mean")
    assert mean.stage_two.pooling == "mean" and not one_stage
    assert arm_config(base, "lambda", 0.4)[0].stage_two.lambda_ == 0.4
    assert arm_config(base, "batch-size", 32)[0].training.batch_size == 32
    assert arm_config(base, "stages", "two") == (base, False)
    single, one_stage = arm_config(base, "stages", "one")
    assert one_stage
    total = base.stage_one.max_epoch + base.stage_two.max_epoch
    assert single.stage_two.max_epoch == total
    with pytest.raises(PydefgenInvalidConfig):
        arm_config(base, "depth", 3)


def test_table_rendering(tmp_path):
    table = AblationTable(
        "pooling",
        [
            ArmResult("pooling", "max", [0], 0.12345, 1.5, 0.9, 0.4, 1.0),
            ArmResult("pooling", "mean", [0], error="PydefgenZeroNorm: degenerate"),
        ],
    )
    lines = table.to_markdown().splitlines()
    assert lines[0].startswith("| pooling | BLEU | NIST")
    assert lines[2] == "| max | 12.35 | 1.5000 | 0.9000 | 0.4000 | 1.0000 | ok |"
    assert lines[3].endswith("| failed: PydefgenZeroNorm: degenerate |")
    paths = table.write(tmp_path)
    failed = json.loads(paths["json"].read_text())["arms"][1]
    assert failed["error"].startswith("PydefgenZeroNorm")
    assert paths["markdown"].read_text() == table.to_markdown()


def test_run_ablation_shares_stage_one(monkeypatch, tiny_ablation):
    config, vocab, splits = tiny_ablation
    calls = []
    original = ablation.train_stage

    def counting(model, vocab, train, valid, stage, settings, **kwargs):
        calls.append(stage.stage)
        return original(model, vocab, train, valid, stage, settings, **kwargs)

    monkeypatch.setattr(ablation, "train_stage", counting)
    table = run_ablation("pooling", config, vocab, splits, seeds=(0,))
    assert calls == ["one", "two", "two"]
    assert [arm.value for arm in table.arms] == ["max", "mean"]
    for arm in table.arms:
        assert not arm.failed
        assert 0.0 <= arm.bleu <= 1.0
        assert len(arm.per_seed) == 1


def test_zero_lambda_arm_matches_stage_one_continued(monkeypatch, tiny_ablation):
    config, vocab, splits = tiny_ablation
    monkeypatch.setitem(ABLATION_ARMS, "lambda", (0.0,))
    (row,) = run_ablation("lambda", config, vocab, splits).arms[0].per_seed

    settings = config.training
    model = Seq2SeqModel(config.model.resolve(len(vocab)), seed=settings.seed)
    train, valid = splits["train"], splits["valid"]
    first = train_stage(model, vocab, train, valid, config.stage_one, settings)
    stage_two = config.stage_two
    continued = StageConfig("one", stage_two.max_epoch, stage_two.early_stop_patience)
    train_stage(model, vocab, train, valid, continued, settings, state=first.state)
    report = evaluate_split(model, vocab, splits["test"], settings.decode)
    batches = make_batches(splits["test"], vocab, settings.batch_size)
    diagnostics = alignment_diagnostics(model, batches, "max")
    assert row["bleu"] == report.bleu
    assert row["nist"] == report.nist
    assert row["diag_mean_sim"] == diagnostics.diag_mean_sim


def test_failed_arm_is_recorded(monkeypatch, tiny_ablation):
    config, vocab, splits = tiny_ablation
    original = ablation._train_arm

    def failing(arm_cfg, one_stage, *args):
        if one_stage:
            raise PydefgenZeroNorm("degenerate pooled representation")
        return original(arm_cfg, one_stage, *args)

    monkeypatch.setattr(ablation, "_train_arm", failing)
    table = run_ablation("stages", config, vocab, splits, seeds=(0, 1))
    one, two = table.arms
    assert one.failed and one.bleu is None
    assert "degenerate" in one.error
    assert not two.failed
    assert len(two.per_seed) == 2
    assert two.bleu == pytest.approx(sum(row["bleu"] for row in two.per_seed) / 2)


def test_run_ablation_validates(tiny_ablation):
    config, vocab, splits = tiny_ablation
    with pytest.raises(PydefgenInvalidConfig):
        run_ablation("depth", config, vocab, splits)
    with pytest.raises(PydefgenInvalidConfig):
        run_ablation("pooling", config, vocab, splits, seeds=())


@pytest.mark.slow
def test_contrastive_only_is_worse_than_mixed(monkeypatch):
    entries = demo_entries(70, seed=0)
    splits = {"train": entries[:50], "valid": entries[50:60], "test": entries[60:]}
    config = preset("toy")
    config = RunConfig(
        model=ModelSettings(**SMALL_MODEL),
        training=config.training,
        stage_one=config.stage_one,
        stage_two=config.stage_two,
    )
    monkeypatch.setitem(ABLATION_ARMS, "lambda", (1.0, 0.8))
    vocab = build_vocab(splits["train"])
    table = run_ablation("lambda", config, vocab, splits, seeds=BEHAVIOUR_SEEDS)
    contrastive_only, mixed = table.arms
    assert contrastive_only.bleu < mixed.bleu
