"""Adam, early stopping and the staged training loop."""
from dataclasses import asdict, dataclass, field, replace
import json
import math
from pathlib import Path
import time
from typing import Any, Mapping, Optional, Sequence, TextIO

import numpy as np
from tqdm import tqdm

from .const import DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_TAU, LOGGER
from .data import Entry, Vocab, make_batches
from .decoding import DecodeConfig
from .evaluation import evaluate_split
from .exceptions import (
    PydefgenDivergedLoss,
    PydefgenInvalidConfig,
    PydefgenLambdaOutOfRange,
    PydefgenNonFiniteGradient,
    PydefgenNonFiniteValue,
    PydefgenStageOrderError,
)
from .model import Seq2SeqModel
from .models.common import Monitor, Reduction, StageKind, StagePooling, TargetOccurrence
from .numerics import Tape, Tensor, backward, zero_grad
from .objectives import ContrastiveConfig, batch_losses
from .seeding import derive_seed
from .types import FloatArray, JsonObject


@dataclass(frozen=True)
class StageConfig:
    """Settings of one training stage.

    Stage ``one`` trains on the generation loss alone (``lambda_`` 0, no
    pooling); stage ``two`` mixes in the contrastive loss.
    """

    stage: StageKind = "one"
    max_epoch: int = 10
    early_stop_patience: int = 3
    pooling: StagePooling = "none"
    lambda_: float = 0.0

    def __post_init__(self) -> None:
        if self.stage not in ("one", "two"):
            raise PydefgenInvalidConfig(f"Unknown stage '{self.stage}'")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise PydefgenLambdaOutOfRange(
                f"lambda must be in [0, 1], got {self.lambda_}"
            )
        if self.stage == "one" and (self.lambda_ != 0.0 or self.pooling != "none"):
            raise PydefgenInvalidConfig("Stage one needs lambda 0 and pooling 'none'")
        if self.stage == "two" and self.pooling not in ("max", "mean"):
            raise PydefgenInvalidConfig("Stage two needs max or mean pooling")
        if self.max_epoch < 1:
            raise PydefgenInvalidConfig(f"max_epoch must be >= 1, got {self.max_epoch}")
        if not 0 <= self.early_stop_patience <= self.max_epoch:
            raise PydefgenInvalidConfig("early_stop_patience must be in [0, max_epoch]")

    def contrastive(
        self, tau: float = DEFAULT_TAU, reduction: Reduction = "mean"
    ) -> Optional[ContrastiveConfig]:
        """Contrastive settings of the stage, None for generation-only training."""
        if self.pooling == "none":
            return None
        return ContrastiveConfig(tau=tau, pooling=self.pooling, reduction=reduction)

    def to_dict(self) -> JsonObject:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StageConfig":
        values = dict(data)
        if "lambda" in values:
            values["lambda_"] = values.pop("lambda")
        try:
            return cls(**values)
        except TypeError as exception:
            raise PydefgenInvalidConfig(
                f"Invalid stage config: {exception}"
            ) from exception


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam hyperparameters, gradient clipping and the stage hand-over policy."""

    lr: float = DEFAULT_LEARNING_RATE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 1.0
    carry_moments: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.eps <= 0:
            raise PydefgenInvalidConfig("lr and eps must be > 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise PydefgenInvalidConfig("betas must be in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise PydefgenInvalidConfig("clip_norm must be > 0 or None")


@dataclass(frozen=True)
class TrainingConfig:
    """Run-level training settings shared by every stage."""

    seed: int = 0
    batch_size: int = DEFAULT_BATCH_SIZE
    optimizer: OptimizerConfig = OptimizerConfig()
    tau: float = DEFAULT_TAU
    reduction: Reduction = "mean"
    monitor: Monitor = "loss"
    target_occurrence: TargetOccurrence = "context"
    decode: DecodeConfig = DecodeConfig()

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise PydefgenInvalidConfig(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if self.monitor not in ("loss", "bleu"):
            raise PydefgenInvalidConfig(f"Unknown monitor '{self.monitor}'")
        if self.target_occurrence not in ("context", "word"):
            raise PydefgenInvalidConfig(
                f"Unknown target occurrence '{self.target_occurrence}'"
            )


@dataclass
class AdamState:
    """First and second moments per parameter plus the step counter."""

    step: int = 0
    m: dict[str, FloatArray] = field(default_factory=dict)
    v: dict[str, FloatArray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        """Independent copy of the moments."""
        return AdamState(
            self.step,
            {name: array.copy() for name, array in self.m.items()},
            {name: array.copy() for name, array in self.v.items()},
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, FloatArray],
    state: AdamState,
    lr: float = DEFAULT_LEARNING_RATE,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place.

    Args:
        params (Mapping[str, Tensor]): Parameters by name.
        grads (Mapping[str, FloatArray]): Gradient per parameter name.
        state (AdamState): Moments, updated in place.
        lr (float, optional): Step size. Defaults to 3e-4.
        betas (tuple[float, float], optional): Moment decay rates.
        eps (float, optional): Denominator floor. Defaults to 1e-8.

    Raises:
        PydefgenNonFiniteGradient: A gradient holds NaN or Inf; nothing is updated.

    Returns:
        AdamState: ``state``.
    """
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise PydefgenNonFiniteGradient(f"Non-finite gradient for '{name}'")
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params.items():
        grad = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.values)
            state.v[name] = np.zeros_like(tensor.values)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * (grad * grad)
        tensor.values -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


def global_norm(grads: Mapping[str, FloatArray]) -> float:
    return math.sqrt(sum(float((grad * grad).sum()) for grad in grads.values()))


def clip_gradients(
    grads: Mapping[str, FloatArray], max_norm: Optional[float]
) -> tuple[dict[str, FloatArray], float]:
    """Rescale gradients so their global L2 norm is at most ``max_norm``.

    Returns:
        tuple[dict[str, FloatArray], float]: Gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: grad * scale for name, grad in grads.items()}, norm


class EarlyStopping:
    """Tracks the best validation score and the epochs since it improved.

    Training should stop once more than ``patience`` consecutive epochs failed
    to improve on the best score.
    """

    def __init__(self, patience: int, mode: str = "min"):
        if mode not in ("min", "max"):
            raise PydefgenInvalidConfig(f"Unknown early stopping mode '{mode}'")
        self.patience = patience
        self.mode = mode
        self.best: Optional[float] = None
        self.best_epoch = 0
        self.epochs_since_improvement = 0

    def update(self, score: float, epoch: int) -> bool:
        """Record an epoch's score; True when it is a new best."""
        improved = self.best is None or (
            score < self.best if self.mode == "min" else score > self.best
        )
        if improved:
            self.best = score
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_improvement > self.patience


@dataclass
class TrainState:
    """Progress of a run, saved inside checkpoints."""

    seed: int = 0
    stage: Optional[StageKind] = None
    epoch: int = 0
    step: int = 0
    best_score: Optional[float] = None
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    completed_stages: list[str] = field(default_factory=list)
    adam: AdamState = field(default_factory=AdamState)

    def to_meta(self) -> JsonObject:
        """JSON scalars of the state; moments are stored as tensors."""
        meta = asdict(self)
        meta.pop("adam")
        meta["adam_step"] = self.adam.step
        return meta

    @classmethod
    def from_meta(
        cls,
        meta: Mapping[str, Any],
        m: Optional[dict[str, FloatArray]] = None,
        v: Optional[dict[str, FloatArray]] = None,
    ) -> "TrainState":
        values = dict(meta)
        adam = AdamState(values.pop("adam_step", 0), dict(m or {}), dict(v or {}))
        return cls(**values, adam=adam)


@dataclass
class TrainingResult:
    """Best-epoch parameters of a stage, its final state and its epoch log."""

    params: dict[str, FloatArray]
    state: TrainState
    epoch_log: list[JsonObject]
    stopped_early: bool


def validation_score(
    model: Seq2SeqModel,
    vocab: Vocab,
    entries: Sequence[Entry],
    stage: StageConfig,
    settings: TrainingConfig,
) -> float:
    """Stage criterion on a split with dropout off.

    Mean ``L_G`` for stage one and mean ``L_Final`` for stage two, or corpus
    BLEU when the run monitors ``bleu``.
    """
    occurrence = settings.target_occurrence
    if settings.monitor == "bleu":
        report = evaluate_split(
            model, vocab, entries, settings.decode, target_occurrence=occurrence
        )
        return report.bleu
    was_training = model.training
    model.eval()
    contrastive = stage.contrastive(settings.tau, settings.reduction)
    total = 0.0
    try:
        batches = make_batches(entries, vocab, settings.batch_size, None, occurrence)
        for batch in batches:
            losses = batch_losses(model, batch, contrastive, stage.lambda_)
            total += losses.final.item() * batch.size
    finally:
        model.training = was_training
    return total / len(entries)


def _write_jsonl(handle: Optional[TextIO], record: JsonObject) -> None:
    if handle is not None:
        handle.write(json.dumps(record, sort_keys=True) + "\n")


def train_stage(
    model: Seq2SeqModel,
    vocab: Vocab,
    train_entries: Sequence[Entry],
    valid_entries: Sequence[Entry],
    stage: StageConfig,
    settings: TrainingConfig = TrainingConfig(),
    state: Optional[TrainState] = None,
    one_stage: bool = False,
    log_dir: Optional[Path] = None,
    progress: bool = False,
) -> TrainingResult:
    """Train one stage with early stopping on the validation criterion.

    Every epoch reshuffles the training entries with a seed derived from the run
    seed and the epoch number, and restarts dropout the same way. After the
    loop the model holds the parameters of the best validation epoch and the
    returned state holds the optimizer moments of that same epoch.

    Args:
        model (Seq2SeqModel): Model, updated in place.
        vocab (Vocab): Vocabulary.
        train_entries (Sequence[Entry]): Training split.
        valid_entries (Sequence[Entry]): Validation split; empty falls back to
            the training split.
        stage (StageConfig): Stage settings.
        settings (TrainingConfig, optional): Run settings.
        state (Optional[TrainState], optional): State of a previous stage.
        one_stage (bool, optional): Allow stage two without a finished stage
            one. Defaults to False.
        log_dir (Optional[Path], optional): Directory for ``epochs.jsonl`` and
            ``steps.jsonl``.
        progress (bool, optional): Show progress bars. Defaults to False.

    Raises:
        PydefgenStageOrderError: Stage two without stage one and not one-stage.
        PydefgenDivergedLoss: The training loss became non-finite.

    Returns:
        TrainingResult: Best-epoch parameters, state and epoch log.
    """
    previous = state or TrainState(seed=settings.seed)
    if (
        stage.stage == "two"
        and not one_stage
        and "one" not in previous.completed_stages
    ):
        raise PydefgenStageOrderError(
            "Stage two needs a model trained by stage one first"
        )
    carry = settings.optimizer.carry_moments and state is not None
    state = replace(
        previous,
        stage=stage.stage,
        epoch=0,
        best_score=None,
        best_epoch=0,
        epochs_since_improvement=0,
        completed_stages=list(previous.completed_stages),
        adam=previous.adam if carry else AdamState(),
    )
    if not valid_entries:
        LOGGER.warning("No validation entries, monitoring the training split")
        valid_entries = train_entries

    optimizer = settings.optimizer
    contrastive = stage.contrastive(settings.tau, settings.reduction)
    mode = "max" if settings.monitor == "bleu" else "min"
    stopper = EarlyStopping(stage.early_stop_patience, mode)
    best = model.snapshot()
    best_adam = state.adam.copy()
    epoch_log: list[JsonObject] = []
    stopped_early = False

    epoch_handle = step_handle = None
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        epoch_handle = (log_dir / "epochs.jsonl").open("a", encoding="utf-8")
        step_handle = (log_dir / "steps.jsonl").open("a", encoding="utf-8")
    try:
        epochs = tqdm(
            range(1, stage.max_epoch + 1),
            desc=f"stage {stage.stage}",
            disable=not progress,
        )
        for epoch in epochs:
            started = time.perf_counter()
            state.epoch = epoch
            model.train()
            model.reseed_dropout(settings.seed, epoch)
            batches = make_batches(
                train_entries,
                vocab,
                settings.batch_size,
                derive_seed(settings.seed, "shuffle", epoch),
                settings.target_occurrence,
            )
            sums = {"L_G": 0.0, "L_C": 0.0}
            for batch in batches:
                state.step += 1
                zero_grad(model.params)
                try:
                    with Tape() as tape:
                        bundle = batch_losses(model, batch, contrastive, stage.lambda_)
                except PydefgenNonFiniteValue as exception:
                    raise PydefgenDivergedLoss(
                        f"Training diverged in epoch {epoch} "
                        f"step {state.step}: {exception}",
                        epoch,
                        state.step,
                    ) from exception
                found = backward(bundle.final, tape)
                grads = {
                    name: found.get(tensor, np.zeros_like(tensor.values))
                    for name, tensor in model.params.items()
                }
                grads, norm = clip_gradients(grads, optimizer.clip_norm)
                betas = (optimizer.beta1, optimizer.beta2)
                adam_step(
                    model.params, grads, state.adam, optimizer.lr, betas, optimizer.eps
                )

                record = bundle.to_record()
                sums["L_G"] += record["L_G"] * batch.size
                sums["L_C"] += (record["L_C"] or 0.0) * batch.size
                _write_jsonl(
                    step_handle,
                    {
                        "stage": stage.stage,
                        "epoch": epoch,
                        "step": state.step,
                        "grad_norm": norm,
                        **record,
                    },
                )

            score = validation_score(model, vocab, valid_entries, stage, settings)
            if stopper.update(score, epoch):
                best = model.snapshot()
                best_adam = state.adam.copy()
            state.best_score = stopper.best
            state.best_epoch = stopper.best_epoch
            state.epochs_since_improvement = stopper.epochs_since_improvement
            record = {
                "stage": stage.stage,
                "epoch": epoch,
                "train_LG": sums["L_G"] / len(train_entries),
                "train_LC": sums["L_C"] / len(train_entries) if contrastive else None,
                "valid_score": score,
                "lr": optimizer.lr,
                "elapsed_s": time.perf_counter() - started,
            }
            epoch_log.append(record)
            _write_jsonl(epoch_handle, record)
            LOGGER.info(
                "stage %s epoch %d: train L_G %.4f valid %.4f (best %.4f @ %d)",
                stage.stage,
                epoch,
                record["train_LG"],
                score,
                stopper.best,
                stopper.best_epoch,
            )
            if stopper.should_stop:
                LOGGER.info(
                    "Early stop after epoch %d, best epoch %d",
                    epoch,
                    stopper.best_epoch,
                )
                stopped_early = True
                break
    finally:
        for handle in (epoch_handle, step_handle):
            if handle is not None:
                handle.close()

    model.load_snapshot(best)
    model.eval()
    state.adam = best_adam
    state.completed_stages.append(stage.stage)
    return TrainingResult(best, state, epoch_log, stopped_early)


def train_one_stage(
    model: Seq2SeqModel,
    vocab: Vocab,
    train_entries: Sequence[Entry],
    valid_entries: Sequence[Entry],
    stage: StageConfig,
    settings: TrainingConfig = TrainingConfig(),
    log_dir: Optional[Path] = None,
    progress: bool = False,
) -> TrainingResult:
    """Mixed-loss training straight from initialisation.

    Identical to :func:`train_stage` with a stage-two config and no prior state.
    """
    return train_stage(
        model,
        vocab,
        train_entries,
        valid_entries,
        replace(stage, stage="two") if stage.pooling != "none" else stage,
        settings,
        state=None,
        one_stage=True,
        log_dir=log_dir,
        progress=progress,
    )
