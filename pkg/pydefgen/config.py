"""Run configuration: one JSON document covering model, data, training and stages."""
from dataclasses import asdict, dataclass, fields, replace
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .const import DEFAULT_RUN_ROOT, RUN_ROOT_ENV
from .decoding import DecodeConfig
from .exceptions import PydefgenInputError, PydefgenInvalidConfig
from .model import ModelConfig
from .models.common import DatasetFormat, PresetName
from .training import OptimizerConfig, StageConfig, TrainingConfig
from .types import JsonObject


@dataclass(frozen=True)
class ModelSettings:
    """Architecture without the vocabulary size, which comes from the data."""

    encoder_layers: int = 2
    decoder_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 128
    dropout: float = 0.1
    tie_embeddings: bool = True

    def resolve(self, vocab_size: int) -> ModelConfig:
        """Full :class:`ModelConfig` for a vocabulary."""
        return ModelConfig(vocab_size=vocab_size, **asdict(self))


@dataclass(frozen=True)
class DataConfig:
    """Where the corpus lives and how the vocabulary is cut."""

    data_dir: Optional[str] = None
    format: DatasetFormat = "tsv"
    min_freq: int = 1
    max_vocab: Optional[int] = None
    strict: bool = True


def _build(cls: Any, data: Mapping[str, Any], section: str) -> Any:
    known = {item.name for item in fields(cls)}
    unknown = set(data) - known
    if unknown:
        names = ", ".join(sorted(unknown))
        raise PydefgenInvalidConfig(f"Unknown key(s) in '{section}': {names}")
    try:
        return cls(**data)
    except TypeError as exception:
        raise PydefgenInvalidConfig(
            f"Invalid '{section}' section: {exception}"
        ) from exception


@dataclass(frozen=True)
class RunConfig:
    """Complete, JSON-serializable description of a run."""

    model: ModelSettings = ModelSettings()
    data: DataConfig = DataConfig()
    training: TrainingConfig = TrainingConfig()
    stage_one: StageConfig = StageConfig("one", 50, 10, "none", 0.0)
    stage_two: StageConfig = StageConfig("two", 50, 10, "max", 0.8)

    def to_dict(self) -> JsonObject:
        """Nested dictionary; stage ``lambda_`` is spelled ``lambda``."""
        return {
            "model": asdict(self.model),
            "data": asdict(self.data),
            "training": asdict(self.training),
            "stage_one": self.stage_one.to_dict(),
            "stage_two": self.stage_two.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Parse a (possibly partial) document; missing keys keep their defaults.

        Raises:
            PydefgenInvalidConfig: Unknown keys or out-of-range values.
        """
        unknown = set(data) - {"model", "data", "training", "stage_one", "stage_two"}
        if unknown:
            names = ", ".join(sorted(unknown))
            raise PydefgenInvalidConfig(f"Unknown config section(s): {names}")
        base = cls()
        training = dict(data.get("training", {}))
        optimizer = _build(
            OptimizerConfig,
            {**asdict(base.training.optimizer), **training.pop("optimizer", {})},
            "training.optimizer",
        )
        decode = _build(
            DecodeConfig,
            {**asdict(base.training.decode), **training.pop("decode", {})},
            "training.decode",
        )
        defaults = {
            key: value
            for key, value in asdict(base.training).items()
            if key not in ("optimizer", "decode")
        }
        model = {**asdict(base.model), **data.get("model", {})}
        data_section = {**asdict(base.data), **data.get("data", {})}
        settings = {**defaults, **training, "optimizer": optimizer, "decode": decode}
        stage_one = {**base.stage_one.to_dict(), **data.get("stage_one", {})}
        stage_two = {**base.stage_two.to_dict(), **data.get("stage_two", {})}
        return cls(
            model=_build(ModelSettings, model, "model"),
            data=_build(DataConfig, data_section, "data"),
            training=_build(TrainingConfig, settings, "training"),
            stage_one=StageConfig.from_dict(stage_one),
            stage_two=StageConfig.from_dict(stage_two),
        )

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exception:
            raise PydefgenInvalidConfig(
                f"Config is not valid JSON: {exception.msg}"
            ) from exception

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, training=replace(self.training, seed=seed))


def _stage_pair(one: tuple[int, int], two: tuple[int, int]) -> dict[str, StageConfig]:
    return {
        "stage_one": StageConfig("one", one[0], one[1], "none", 0.0),
        "stage_two": StageConfig("two", two[0], two[1], "max", 0.8),
    }


#: Stage schedules (max epoch, patience) of the named presets
PRESET_SCHEDULES: dict[str, dict[str, StageConfig]] = {
    "toy": _stage_pair((60, 10), (30, 10)),
    "wordnet": _stage_pair((140, 40), (70, 40)),
    "oxford": _stage_pair((50, 10), (50, 10)),
    "urban": _stage_pair((30, 5), (15, 5)),
}


def preset(name: PresetName) -> RunConfig:
    """Named run preset.

    ``toy`` is sized for the 50-entry demo corpus: dropout off and a larger
    learning rate so the model can memorize it quickly.

    Raises:
        PydefgenInvalidConfig: Unknown preset.
    """
    if name not in PRESET_SCHEDULES:
        raise PydefgenInvalidConfig(f"Unknown preset '{name}'")
    config = RunConfig(**PRESET_SCHEDULES[name])
    if name == "toy":
        config = replace(
            config,
            model=replace(config.model, dropout=0.0),
            training=replace(
                config.training, optimizer=replace(config.training.optimizer, lr=1e-3)
            ),
        )
    return config


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """Read a run config JSON file."""
    file = Path(path)
    if not file.is_file():
        raise PydefgenInputError(f"Config file not found: {file}")
    return RunConfig.from_json(file.read_text(encoding="utf-8"))


def run_root() -> Path:
    """Root of run directories, from ``PYDEFGEN_RUN_ROOT`` or ``./runs``."""
    return Path(os.environ.get(RUN_ROOT_ENV, DEFAULT_RUN_ROOT))
