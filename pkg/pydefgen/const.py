"""Pydefgen Constants"""
from logging import Logger, getLogger

LOGGER: Logger = getLogger(__package__)

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
#: Prompt prefixes spliced in front of the target word and the context.
WORD_PREFIX = "word:"
CONTEXT_PREFIX = "context:"

#: Specials occupy the leading ids in this order, PAD first.
SPECIAL_TOKENS = (
    PAD_TOKEN,
    BOS_TOKEN,
    EOS_TOKEN,
    UNK_TOKEN,
    WORD_PREFIX,
    CONTEXT_PREFIX,
)
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3

#: Additive attention bias for masked keys; exp() of it underflows to exactly 0.
MASK_BIAS = -1e9

#: Norms below this are treated as degenerate by cosine similarity.
ZERO_NORM_EPS = 1e-12

DEFAULT_LEARNING_RATE = 3e-4
DEFAULT_BATCH_SIZE = 16
DEFAULT_TAU = 0.1
DEFAULT_MAX_DECODE_LEN = 32

RUN_ROOT_ENV = "PYDEFGEN_RUN_ROOT"
DEFAULT_RUN_ROOT = "runs"

SPLIT_NAMES = ("train", "valid", "test")
