from typing import Literal

#: On-disk dataset formats
DatasetFormat = Literal["tsv", "jsonl"]

#: Which spliced copy of the target word feeds the word representation
TargetOccurrence = Literal["context", "word"]
"""Target occurrence

context:
    The copy inside the ``context:`` segment (default). It carries the sense
    of the word in this particular usage.

word:
    The copy right after the ``word:`` prefix.
"""

#: Row pooling applied to encoder target rows and decoder rows
PoolingKind = Literal["max", "mean"]

#: Stage pooling, ``none`` for generation-only training
StagePooling = Literal["none", "max", "mean"]

#: Batch reduction of the contrastive loss
Reduction = Literal["sum", "mean"]

#: Training stage
StageKind = Literal["one", "two"]

#: CLI stage selector
StageSelector = Literal["1", "2", "one-shot"]
"""Stage selector

1:
    Generation-only training from random initialisation.

2:
    Mixed-loss training, requires ``--init-from`` a stage 1 checkpoint.

one-shot:
    Mixed-loss training from random initialisation.
"""

#: Validation criterion watched by early stopping
Monitor = Literal["loss", "bleu"]

#: Decoding strategy
DecodeStrategy = Literal["greedy", "beam"]

#: Ablation sweep axis
AblationAxis = Literal["pooling", "lambda", "batch-size", "stages"]

#: Named run presets
PresetName = Literal["toy", "wordnet", "oxford", "urban"]
"""Run presets

wordnet / oxford / urban:
    Stage schedules of the reference training settings (max epoch, early-stop
    patience, max pooling, lambda 0.8 in stage 2) with a desk-scale model.

toy:
    Settings sized for the synthetic 50-entry corpus.
"""
