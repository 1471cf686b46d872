"""Canned ablation sweeps over pooling, lambda, batch size and stage schedule."""
from copy import deepcopy
from dataclasses import asdict, dataclass, field, replace
import json
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .config import RunConfig
from .const import LOGGER
from .data import Entry, Vocab, make_batches
from .evaluation import evaluate_split
from .exceptions import PydefgenError, PydefgenInvalidConfig
from .manifest import canonical_json, content_hash
from .model import Seq2SeqModel
from .models.common import AblationAxis
from .objectives import alignment_diagnostics
from .training import TrainState, train_one_stage, train_stage
from .types import FloatArray, JsonObject

#: Arms of every sweep axis, in reporting order
ABLATION_ARMS: dict[str, tuple[Union[str, float, int], ...]] = {
    "pooling": ("max", "mean"),
    "lambda": (1.0, 0.8, 0.6, 0.4, 0.2, 0.0),
    "batch-size": (8, 16, 32, 64),
    "stages": ("one", "two"),
}

_METRICS = ("bleu", "nist", "diag_mean_sim", "margin", "retrieval_acc")

_StageOneResult = tuple[dict[str, FloatArray], TrainState]


@dataclass
class ArmResult:
    """Seed-averaged test scores of one arm; ``error`` is set when any seed failed."""

    axis: str
    value: Union[str, float, int]
    seeds: list[int]
    bleu: Optional[float] = None
    nist: Optional[float] = None
    diag_mean_sim: Optional[float] = None
    margin: Optional[float] = None
    retrieval_acc: Optional[float] = None
    per_seed: list[JsonObject] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class AblationTable:
    """Comparison of every arm of one axis."""

    axis: str
    arms: list[ArmResult]

    def to_dict(self) -> JsonObject:
        return {"axis": self.axis, "arms": [asdict(arm) for arm in self.arms]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_markdown(self) -> str:
        """GitHub-flavoured table; BLEU is scaled by 100, NIST is the raw score."""

        def cell(value: Optional[float]) -> str:
            return "-" if value is None else f"{value:.4f}"

        lines = [
            f"| {self.axis} | BLEU | NIST | diag sim | margin | retrieval | status |",
            "|---|---|---|---|---|---|---|",
        ]
        for arm in self.arms:
            status = f"failed: {arm.error}" if arm.failed else "ok"
            bleu = "-" if arm.bleu is None else f"{arm.bleu * 100.0:.2f}"
            cells = [
                str(arm.value),
                bleu,
                cell(arm.nist),
                cell(arm.diag_mean_sim),
                cell(arm.margin),
                cell(arm.retrieval_acc),
                status,
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def write(self, directory: Union[str, Path]) -> dict[str, Path]:
        """Write ``ablation.md`` and ``ablation.json``."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        paths = {"markdown": root / "ablation.md", "json": root / "ablation.json"}
        paths["markdown"].write_text(self.to_markdown(), encoding="utf-8")
        paths["json"].write_text(self.to_json(), encoding="utf-8")
        return paths


def arm_config(
    config: RunConfig, axis: AblationAxis, value: Union[str, float, int]
) -> tuple[RunConfig, bool]:
    """Run config of one arm and whether it trains in a single mixed stage.

    The ``stages`` axis' ``one`` arm skips stage one and gives the mixed stage
    the epochs of both stages combined.

    Raises:
        PydefgenInvalidConfig: Unknown axis.
    """
    stage_two = config.stage_two
    if axis == "pooling":
        return replace(config, stage_two=replace(stage_two, pooling=value)), False
    if axis == "lambda":
        weighted = replace(stage_two, lambda_=float(value))
        return replace(config, stage_two=weighted), False
    if axis == "batch-size":
        training = replace(config.training, batch_size=int(value))
        return replace(config, training=training), False
    if axis == "stages":
        if value == "two":
            return config, False
        total_epochs = config.stage_one.max_epoch + stage_two.max_epoch
        merged = replace(stage_two, max_epoch=total_epochs)
        return replace(config, stage_two=merged), True
    raise PydefgenInvalidConfig(f"Unknown ablation axis '{axis}'")


class _StageOneCache:
    """Stage-one results shared by arms with the same seed and stage-one inputs."""

    def __init__(self) -> None:
        self._results: dict[str, _StageOneResult] = {}

    @staticmethod
    def key(config: RunConfig) -> str:
        document = config.to_dict()
        sections = ("model", "data", "training", "stage_one")
        return content_hash(canonical_json({key: document[key] for key in sections}))

    def get(self, config: RunConfig) -> Optional[_StageOneResult]:
        found = self._results.get(self.key(config))
        return None if found is None else deepcopy(found)

    def put(
        self, config: RunConfig, params: dict[str, FloatArray], state: TrainState
    ) -> None:
        self._results[self.key(config)] = deepcopy((params, state))


def _train_arm(
    config: RunConfig,
    one_stage: bool,
    vocab: Vocab,
    splits: Mapping[str, Sequence[Entry]],
    cache: _StageOneCache,
) -> Seq2SeqModel:
    settings = config.training
    model = Seq2SeqModel(config.model.resolve(len(vocab)), seed=settings.seed)
    train, valid = splits["train"], splits["valid"]
    if one_stage:
        train_one_stage(model, vocab, train, valid, config.stage_two, settings)
        return model
    cached = cache.get(config)
    if cached is None:
        first = train_stage(model, vocab, train, valid, config.stage_one, settings)
        cache.put(config, first.params, first.state)
        state = first.state
    else:
        LOGGER.info("Reusing stage one of seed %d", settings.seed)
        params, state = cached
        model.load_snapshot(params)
    train_stage(model, vocab, train, valid, config.stage_two, settings, state=state)
    return model


def _score_arm(
    model: Seq2SeqModel, config: RunConfig, vocab: Vocab, test: Sequence[Entry]
) -> JsonObject:
    settings = config.training
    occurrence = settings.target_occurrence
    report = evaluate_split(
        model, vocab, test, settings.decode, target_occurrence=occurrence
    )
    pooling = config.stage_two.pooling if config.stage_two.pooling != "none" else "max"
    batches = make_batches(test, vocab, settings.batch_size, None, occurrence)
    diagnostics = alignment_diagnostics(model, batches, pooling)
    return {
        "seed": settings.seed,
        "bleu": report.bleu,
        "nist": report.nist,
        "diag_mean_sim": diagnostics.diag_mean_sim,
        "margin": diagnostics.margin,
        "retrieval_acc": diagnostics.retrieval_acc,
    }


def _mean(values: list[Optional[float]]) -> Optional[float]:
    present = [value for value in values if value is not None]
    return float(np.mean(present)) if present else None


def run_ablation(
    axis: AblationAxis,
    config: RunConfig,
    vocab: Vocab,
    splits: Mapping[str, Sequence[Entry]],
    seeds: Sequence[int] = (0,),
    progress: bool = False,
) -> AblationTable:
    """Train and test every arm of one axis, averaging over seeds.

    A failing arm is recorded with its error and the sweep moves on.

    Args:
        axis (AblationAxis): Sweep axis.
        config (RunConfig): Base run config.
        vocab (Vocab): Vocabulary of the splits.
        splits (Mapping[str, Sequence[Entry]]): ``train``, ``valid`` and ``test``.
        seeds (Sequence[int], optional): Seeds to average over. Defaults to (0,).
        progress (bool, optional): Show a progress bar. Defaults to False.

    Raises:
        PydefgenInvalidConfig: Unknown axis or no seeds.

    Returns:
        AblationTable: One row per arm.
    """
    if axis not in ABLATION_ARMS:
        raise PydefgenInvalidConfig(f"Unknown ablation axis '{axis}'")
    if not seeds:
        raise PydefgenInvalidConfig("Ablation needs at least one seed")
    cache = _StageOneCache()
    arms = []
    jobs = [(value, seed) for value in ABLATION_ARMS[axis] for seed in seeds]
    results: dict[Union[str, float, int], ArmResult] = {
        value: ArmResult(axis, value, list(seeds)) for value in ABLATION_ARMS[axis]
    }
    for value, seed in tqdm(jobs, desc=f"ablate {axis}", disable=not progress):
        arm = results[value]
        if arm.failed:
            continue
        try:
            arm_cfg, one_stage = arm_config(config.with_seed(seed), axis, value)
            model = _train_arm(arm_cfg, one_stage, vocab, splits, cache)
            arm.per_seed.append(_score_arm(model, arm_cfg, vocab, splits["test"]))
        except PydefgenError as exception:
            LOGGER.error(
                "Arm %s=%s failed on seed %d: %s", axis, value, seed, exception
            )
            arm.error = f"{type(exception).__name__}: {exception}"
    for value in ABLATION_ARMS[axis]:
        arm = results[value]
        if not arm.failed:
            for metric in _METRICS:
                setattr(arm, metric, _mean([row[metric] for row in arm.per_seed]))
        arms.append(arm)
    return AblationTable(axis, arms)
