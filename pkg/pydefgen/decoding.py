"""Greedy and beam-search definition generation."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from tqdm import tqdm

from .const import BOS_ID, DEFAULT_MAX_DECODE_LEN, EOS_ID, LOGGER
from .data import Entry, Vocab, splice
from .exceptions import PydefgenInvalidConfig
from .model import Seq2SeqModel
from .models.common import DecodeStrategy, TargetOccurrence
from .numerics import Tensor, index, log_softmax
from .types import FloatArray, JsonObject, Tokens


@dataclass(frozen=True)
class DecodeConfig:
    """Decoding settings.

    Args:
        strategy (DecodeStrategy): ``greedy`` or ``beam``. Defaults to "greedy".
        beam_size (int): Beam width, ignored by greedy decoding. Defaults to 1.
        max_decode_len (int): Most generated tokens, ``<eos>`` included.
            Defaults to 32.
        length_penalty (float): Finished beam scores are divided by
            ``length ** length_penalty``. Defaults to 1.0.
    """

    strategy: DecodeStrategy = "greedy"
    beam_size: int = 1
    max_decode_len: int = DEFAULT_MAX_DECODE_LEN
    length_penalty: float = 1.0

    def __post_init__(self) -> None:
        if self.strategy not in ("greedy", "beam"):
            raise PydefgenInvalidConfig(f"Unknown decoding strategy '{self.strategy}'")
        if self.beam_size < 1:
            raise PydefgenInvalidConfig(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_decode_len < 1:
            raise PydefgenInvalidConfig("max_decode_len must be >= 1")
        if self.length_penalty < 0:
            raise PydefgenInvalidConfig("length_penalty must be >= 0")

    @property
    def width(self) -> int:
        """Effective beam width; greedy decoding is a beam of one."""
        return 1 if self.strategy == "greedy" else self.beam_size

    def to_dict(self) -> JsonObject:
        return asdict(self)


@dataclass(frozen=True)
class Generation:
    """One decoded definition.

    ``ids`` excludes ``<bos>`` and ``<eos>``; ``truncated`` is set when no
    ``<eos>`` was produced within ``max_decode_len`` steps.
    """

    tokens: Tokens
    ids: tuple[int, ...]
    score: float
    truncated: bool


class _Decoder:
    """Next-token log-probabilities for one encoded prompt."""

    def __init__(
        self,
        model: Seq2SeqModel,
        entry: Entry,
        vocab: Vocab,
        occurrence: TargetOccurrence,
    ):
        ids, _ = splice(entry, vocab, occurrence)
        self.model = model
        self.encoder_ids = np.asarray([ids], dtype=np.int64)
        self.encoder_mask = np.ones_like(self.encoder_ids, dtype=bool)
        self.encoder_states = model.encode(self.encoder_ids, self.encoder_mask)

    def log_probs(self, prefixes: Sequence[Sequence[int]]) -> FloatArray:
        count = len(prefixes)
        decoder_in = np.asarray(prefixes, dtype=np.int64)
        states = Tensor(np.repeat(self.encoder_states.values, count, axis=0))
        decoded = self.model.decode_teacher_forced(
            states,
            np.repeat(self.encoder_mask, count, axis=0),
            decoder_in,
            np.ones_like(decoder_in, dtype=bool),
        )
        last = index(decoded, (slice(None), -1))
        return log_softmax(self.model.lm_head(last)).values


def _max_steps(model: Seq2SeqModel, decode: DecodeConfig) -> int:
    return min(decode.max_decode_len, model.config.max_len)


def greedy_decode(decoder: _Decoder, steps: int) -> tuple[list[int], float, bool]:
    prefix = [BOS_ID]
    score = 0.0
    for _ in range(steps):
        log_probs = decoder.log_probs([prefix])[0]
        token = int(np.argmax(log_probs))
        score += float(log_probs[token])
        if token == EOS_ID:
            return prefix[1:], score, False
        prefix.append(token)
    return prefix[1:], score, True


def beam_decode(
    decoder: _Decoder, steps: int, width: int, length_penalty: float
) -> tuple[list[int], float, bool]:
    """Beam search over summed log-probabilities.

    Candidates are ranked by score with ties broken by beam order, then token
    id. A hypothesis finishes on ``<eos>``; search ends once ``width``
    hypotheses finished or ``steps`` tokens were generated.
    """
    live: list[tuple[list[int], float]] = [([BOS_ID], 0.0)]
    finished: list[tuple[list[int], float, float]] = []
    for step in range(1, steps + 1):
        log_probs = decoder.log_probs([prefix for prefix, _ in live])
        totals = np.asarray([score for _, score in live])[:, None] + log_probs
        order = np.argsort(-totals.reshape(-1), kind="stable")[:width]
        vocab_size = log_probs.shape[1]
        survivors = []
        for flat in order:
            beam, token = divmod(int(flat), vocab_size)
            prefix, _ = live[beam]
            score = float(totals[beam, token])
            if token == EOS_ID:
                finished.append((prefix[1:], score, score / step**length_penalty))
            else:
                survivors.append((prefix + [token], score))
        live = survivors
        if len(finished) >= width or not live:
            break

    if finished:
        best = max(
            range(len(finished)),
            key=lambda position: (finished[position][2], -position),
        )
        ids, score, _ = finished[best]
        return ids, score, False
    ids, score = live[0]
    return ids[1:], score, True


def generate(
    model: Seq2SeqModel,
    vocab: Vocab,
    entry: Entry,
    decode: DecodeConfig = DecodeConfig(),
    target_occurrence: TargetOccurrence = "context",
) -> Generation:
    """Decode a definition for one entry from ``<bos>`` until ``<eos>``.

    Args:
        model (Seq2SeqModel): Model; must be in eval mode for reproducible output.
        vocab (Vocab): Vocabulary.
        entry (Entry): Entry whose definition is generated.
        decode (DecodeConfig, optional): Strategy settings.
        target_occurrence (TargetOccurrence, optional): Prompt convention of the
            model. Defaults to "context".

    Returns:
        Generation: Decoded tokens, score and truncation flag.
    """
    decoder = _Decoder(model, entry, vocab, target_occurrence)
    steps = _max_steps(model, decode)
    if decode.strategy == "greedy":
        ids, score, truncated = greedy_decode(decoder, steps)
    else:
        ids, score, truncated = beam_decode(
            decoder, steps, decode.width, decode.length_penalty
        )
    if truncated:
        LOGGER.debug("Decoding of '%s' hit the %d-token limit", entry.word, steps)
    return Generation(tuple(vocab.decode(ids)), tuple(ids), score, truncated)


def generate_all(
    model: Seq2SeqModel,
    vocab: Vocab,
    entries: Sequence[Entry],
    decode: DecodeConfig = DecodeConfig(),
    target_occurrence: TargetOccurrence = "context",
    workers: int = 1,
    progress: bool = False,
) -> list[Generation]:
    """Decode every entry, optionally on a thread pool over frozen parameters.

    The model is switched to eval mode for the duration of the call.
    """
    was_training = model.training
    model.eval()
    try:
        if workers <= 1:
            return [
                generate(model, vocab, entry, decode, target_occurrence)
                for entry in tqdm(entries, desc="decoding", disable=not progress)
            ]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            jobs = pool.map(
                lambda entry: generate(model, vocab, entry, decode, target_occurrence),
                entries,
            )
            bar = tqdm(jobs, total=len(entries), desc="decoding", disable=not progress)
            return list(bar)
    finally:
        model.training = was_training


def truncation_count(generations: Sequence[Generation]) -> int:
    """Number of generations that hit the length limit."""
    return sum(generation.truncated for generation in generations)
