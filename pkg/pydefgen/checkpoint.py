"""Checkpoints: parameters, optimizer moments, configs and vocabulary in one file."""
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .const import LOGGER
from .data import Vocab
from .exceptions import PydefgenConfigMismatch, PydefgenCorruptCheckpoint
from .model import ModelConfig, Seq2SeqModel
from .tensor_io import read_tensors, write_tensors
from .training import StageConfig, TrainState
from .types import FloatArray, JsonObject

_PARAM = "param/"
_FIRST_MOMENT = "adam_m/"
_SECOND_MOMENT = "adam_v/"


@dataclass
class Checkpoint:
    """Everything needed to resume training or to decode."""

    model_config: ModelConfig
    params: dict[str, FloatArray]
    state: TrainState
    vocab: Vocab
    stage_config: Optional[StageConfig] = None
    extra: Optional[JsonObject] = None

    def build_model(self, seed: Optional[int] = None) -> Seq2SeqModel:
        """Model holding a copy of the saved parameters, in eval mode."""
        seed = self.state.seed if seed is None else seed
        model = Seq2SeqModel(self.model_config, seed=seed)
        model.load_snapshot(self.params)
        return model.eval()


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write a checkpoint; equal checkpoints always produce equal bytes."""
    tensors = {f"{_PARAM}{name}": array for name, array in checkpoint.params.items()}
    adam = checkpoint.state.adam
    tensors.update({f"{_FIRST_MOMENT}{name}": array for name, array in adam.m.items()})
    tensors.update({f"{_SECOND_MOMENT}{name}": array for name, array in adam.v.items()})
    stage = checkpoint.stage_config
    meta = {
        "model_config": checkpoint.model_config.to_dict(),
        "stage_config": None if stage is None else stage.to_dict(),
        "state": checkpoint.state.to_meta(),
        "vocab": checkpoint.vocab.tokens,
        "extra": checkpoint.extra,
    }
    target = write_tensors(path, tensors, meta)
    LOGGER.info("Saved checkpoint %s", target)
    return target


def _strip(tensors: dict[str, FloatArray], prefix: str) -> dict[str, FloatArray]:
    return {
        name[len(prefix) :]: array
        for name, array in tensors.items()
        if name.startswith(prefix)
    }


def load_checkpoint(
    path: Union[str, Path],
    expected_model: Optional[ModelConfig] = None,
    expected_stage: Optional[StageConfig] = None,
) -> Checkpoint:
    """Read a checkpoint, optionally refusing one written for other configs.

    Args:
        path (Union[str, Path]): Checkpoint file.
        expected_model (Optional[ModelConfig], optional): Required model config.
        expected_stage (Optional[StageConfig], optional): Required stage config.

    Raises:
        PydefgenCorruptCheckpoint: Missing file, bad checksum or bad header.
        PydefgenConfigMismatch: A stored config differs from the expected one.

    Returns:
        Checkpoint: Decoded checkpoint.
    """
    file = Path(path)
    if not file.is_file():
        raise PydefgenCorruptCheckpoint(f"Checkpoint not found: {file}")
    tensors, meta = read_tensors(file)
    try:
        model_config = ModelConfig.from_dict(meta["model_config"])
        stage_meta = meta["stage_config"]
        stage_config = None if stage_meta is None else StageConfig.from_dict(stage_meta)
        vocab = Vocab(meta["vocab"])
        state = TrainState.from_meta(
            meta["state"],
            _strip(tensors, _FIRST_MOMENT),
            _strip(tensors, _SECOND_MOMENT),
        )
    except (KeyError, TypeError) as exception:
        raise PydefgenCorruptCheckpoint(
            f"Incomplete checkpoint header in {file}"
        ) from exception

    if expected_model is not None and expected_model != model_config:
        raise PydefgenConfigMismatch(
            f"Checkpoint {file} was written for {model_config}, "
            f"expected {expected_model}"
        )
    if expected_stage is not None and expected_stage != stage_config:
        raise PydefgenConfigMismatch(
            f"Checkpoint {file} was written for {stage_config}, "
            f"expected {expected_stage}"
        )
    return Checkpoint(
        model_config=model_config,
        params=_strip(tensors, _PARAM),
        state=state,
        vocab=vocab,
        stage_config=stage_config,
        extra=meta.get("extra"),
    )
