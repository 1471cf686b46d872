from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, preset
from .data import Entry, Vocab, build_vocab, load_dataset, make_batches
from .decoding import DecodeConfig, generate
from .evaluation import MetricReport, evaluate_split
from .model import ModelConfig, Seq2SeqModel
from .numerics import Tape, Tensor, backward, finite_diff_check
from .objectives import ContrastiveConfig, contrastive_loss, generation_loss, mixed_loss
from .training import StageConfig, TrainingConfig, train_one_stage, train_stage

__all__ = [
    "Checkpoint",
    "ContrastiveConfig",
    "DecodeConfig",
    "Entry",
    "MetricReport",
    "ModelConfig",
    "RunConfig",
    "Seq2SeqModel",
    "StageConfig",
    "Tape",
    "Tensor",
    "TrainingConfig",
    "Vocab",
    "backward",
    "build_vocab",
    "contrastive_loss",
    "evaluate_split",
    "finite_diff_check",
    "generate",
    "generation_loss",
    "load_checkpoint",
    "load_dataset",
    "make_batches",
    "mixed_loss",
    "preset",
    "save_checkpoint",
    "train_one_stage",
    "train_stage",
]
