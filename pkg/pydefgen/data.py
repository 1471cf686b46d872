"""Dictionary datasets, vocabulary, prompt splicing and batching."""
from collections import Counter
from dataclasses import dataclass, field
import json
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

from nltk.tokenize import wordpunct_tokenize
import numpy as np

from .const import (
    BOS_ID,
    CONTEXT_PREFIX,
    EOS_ID,
    LOGGER,
    PAD_ID,
    SPECIAL_TOKENS,
    SPLIT_NAMES,
    UNK_ID,
    WORD_PREFIX,
)
from .exceptions import (
    PydefgenEmptyCorpus,
    PydefgenInputError,
    PydefgenInvalidConfig,
    PydefgenInvalidEntry,
    PydefgenMalformedRecord,
    PydefgenTargetNotFound,
)
from .models.common import DatasetFormat, TargetOccurrence
from .types import BoolArray, IdArray, Span, Tokens


def tokenize(text: str) -> Tokens:
    """Lowercase, then split on whitespace and punctuation.

    Args:
        text (str): Raw text.

    Returns:
        Tokens: Token tuple.
    """
    return tuple(wordpunct_tokenize(text.lower()))


def find_occurrences(
    word_tokens: Sequence[str], context_tokens: Sequence[str]
) -> list[Span]:
    """Every contiguous exact match of ``word_tokens`` in ``context_tokens``."""
    width = len(word_tokens)
    if width == 0:
        return []
    target = tuple(word_tokens)
    return [
        (start, start + width)
        for start in range(len(context_tokens) - width + 1)
        if tuple(context_tokens[start : start + width]) == target
    ]


@dataclass(frozen=True)
class Entry:
    """One dictionary record: target word, its context and a definition.

    ``target_span`` is a half-open ``[i, j)`` index pair into ``context_tokens``.
    """

    word_tokens: Tokens
    context_tokens: Tokens
    definition_tokens: Tokens
    target_span: Span

    def __post_init__(self) -> None:
        names = ("word_tokens", "context_tokens", "definition_tokens", "target_span")
        for name in names:
            object.__setattr__(self, name, tuple(getattr(self, name)))
        start, end = self.target_span
        if not 0 <= start < end <= len(self.context_tokens):
            raise PydefgenInvalidEntry(
                f"Span {self.target_span} outside a context of "
                f"{len(self.context_tokens)} tokens"
            )
        if self.context_tokens[start:end] != self.word_tokens:
            raise PydefgenInvalidEntry(
                f"Span {self.target_span} covers {self.context_tokens[start:end]}, "
                f"not the target {self.word_tokens}"
            )
        if not self.definition_tokens:
            raise PydefgenInvalidEntry("Definition is empty")

    @classmethod
    def from_text(
        cls,
        word: str,
        context: str,
        definition: str,
        span: Optional[Span] = None,
    ) -> "Entry":
        """Tokenize raw fields and locate the target when no span is given.

        The first occurrence wins when the target appears more than once.

        Raises:
            PydefgenTargetNotFound: The target does not occur in the context.
            PydefgenInvalidEntry: The explicit span or the definition is invalid.
        """
        word_tokens = tokenize(word)
        context_tokens = tokenize(context)
        if span is None:
            occurrences = find_occurrences(word_tokens, context_tokens)
            if not occurrences:
                raise PydefgenTargetNotFound(f"'{word}' does not occur in '{context}'")
            if len(occurrences) > 1:
                LOGGER.warning(
                    "'%s' occurs %d times in its context, using the first",
                    word,
                    len(occurrences),
                )
            span = occurrences[0]
        return cls(word_tokens, context_tokens, tokenize(definition), tuple(span))

    @property
    def word(self) -> str:
        return " ".join(self.word_tokens)

    @property
    def context(self) -> str:
        return " ".join(self.context_tokens)

    @property
    def definition(self) -> str:
        return " ".join(self.definition_tokens)


@dataclass(frozen=True)
class Rejection:
    """A record skipped by a non-strict load."""

    line_number: int
    reason: str


@dataclass
class Dataset:
    """Entries of one file plus the records rejected while loading it."""

    entries: list[Entry]
    rejections: list[Rejection] = field(default_factory=list)
    source: Optional[str] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries)

    def __getitem__(self, position: int) -> Entry:
        return self.entries[position]


def _parse_span(values: Sequence[object], line_number: int) -> Span:
    try:
        start, end = (int(str(value)) for value in values)
    except ValueError as exception:
        raise PydefgenMalformedRecord(
            f"span must be two integers, got {list(values)}", line_number
        ) from exception
    return (start, end)


def _tsv_entries(line: str, line_number: int) -> list[Entry]:
    columns = line.split("\t")
    if len(columns) not in (3, 5):
        raise PydefgenMalformedRecord(
            f"expected 3 or 5 tab-separated columns, got {len(columns)}", line_number
        )
    if not all(column.strip() for column in columns[:3]):
        raise PydefgenMalformedRecord("empty word, context or definition", line_number)
    span = _parse_span(columns[3:], line_number) if len(columns) == 5 else None
    return [Entry.from_text(columns[0], columns[1], columns[2], span)]


def _jsonl_entries(line: str, line_number: int) -> list[Entry]:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exception:
        raise PydefgenMalformedRecord(
            f"invalid JSON ({exception.msg})", line_number
        ) from exception
    if not isinstance(record, dict):
        raise PydefgenMalformedRecord("record is not a JSON object", line_number)
    missing = [key for key in ("word", "context", "definition") if key not in record]
    if missing:
        raise PydefgenMalformedRecord(
            f"missing key(s) {', '.join(missing)}", line_number
        )

    definitions = record["definition"]
    if isinstance(definitions, str):
        definitions = [definitions]
    if not isinstance(definitions, list) or not all(
        isinstance(item, str) for item in definitions
    ):
        raise PydefgenMalformedRecord(
            "definition must be a string or a list of strings", line_number
        )
    if not definitions:
        raise PydefgenMalformedRecord("definition list is empty", line_number)
    span = None
    if record.get("span") is not None:
        if not isinstance(record["span"], list) or len(record["span"]) != 2:
            raise PydefgenMalformedRecord("span must be a pair [i, j]", line_number)
        span = _parse_span(record["span"], line_number)
    return [
        Entry.from_text(str(record["word"]), str(record["context"]), definition, span)
        for definition in definitions
    ]


def parse_records(
    lines: Iterable[str],
    format: DatasetFormat = "tsv",
    strict: bool = True,
    source: Optional[str] = None,
) -> Dataset:
    """Parse dataset lines, one record per non-blank line.

    Args:
        lines (Iterable[str]): Raw lines.
        format (DatasetFormat, optional): ``tsv`` or ``jsonl``. Defaults to "tsv".
        strict (bool, optional): Raise on the first bad record instead of
            collecting it as a rejection. Defaults to True.
        source (Optional[str], optional): Name used in log messages.

    Raises:
        PydefgenMalformedRecord: Wrong column count, missing key or bad JSON.
        PydefgenTargetNotFound: Target absent from its context and no span given.
        PydefgenInvalidEntry: Explicit span does not cover the target.

    Returns:
        Dataset: Entries in file order.
    """
    if format not in ("tsv", "jsonl"):
        raise PydefgenInvalidConfig(f"Unknown dataset format '{format}'")
    parse = _tsv_entries if format == "tsv" else _jsonl_entries
    dataset = Dataset(entries=[], source=source)
    for line_number, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        try:
            try:
                dataset.entries.extend(parse(line, line_number))
            except PydefgenTargetNotFound as exception:
                if exception.line_number is not None:
                    raise
                raise PydefgenTargetNotFound(str(exception), line_number) from exception
            except PydefgenInvalidEntry as exception:
                raise PydefgenInvalidEntry(
                    f"line {line_number}: {exception}"
                ) from exception
        except PydefgenInputError as exception:
            if strict:
                raise
            LOGGER.warning(
                "Rejected %s line %d: %s", source or "record", line_number, exception
            )
            dataset.rejections.append(Rejection(line_number, str(exception)))
    return dataset


def infer_format(path: Union[str, Path]) -> DatasetFormat:
    """``jsonl`` for ``.jsonl``/``.json`` files, ``tsv`` otherwise."""
    return "jsonl" if Path(path).suffix.lower() in (".jsonl", ".json") else "tsv"


def load_dataset(
    path: Union[str, Path],
    format: Optional[DatasetFormat] = None,
    strict: bool = True,
) -> Dataset:
    """Load a TSV or JSONL dictionary file.

    TSV lines are ``word \\t context \\t definition`` with an optional explicit
    ``\\t i \\t j`` span. JSONL objects carry ``word``, ``context``,
    ``definition`` (a string or a list, one entry per item) and optional
    ``span``.

    Args:
        path (Union[str, Path]): Dataset file.
        format (Optional[DatasetFormat], optional): Defaults to the file suffix.
        strict (bool, optional): See :func:`parse_records`. Defaults to True.

    Raises:
        PydefgenInputError: The file does not exist.

    Returns:
        Dataset: Entries in file order plus rejections.
    """
    file = Path(path)
    if not file.is_file():
        raise PydefgenInputError(f"Dataset file not found: {file}")
    with file.open(encoding="utf-8") as handle:
        dataset = parse_records(handle, format or infer_format(file), strict, str(file))
    LOGGER.info(
        "Loaded %d entries from %s (%d rejected)",
        len(dataset.entries),
        file,
        len(dataset.rejections),
    )
    return dataset


def load_splits(
    directory: Union[str, Path],
    format: DatasetFormat = "tsv",
    strict: bool = True,
    names: Sequence[str] = SPLIT_NAMES,
) -> dict[str, Dataset]:
    """Load the ``train``/``valid``/``test`` files of a corpus directory.

    A split is read from ``<name>.<format>`` or, failing that, a bare ``<name>``.

    Raises:
        PydefgenInputError: A split file is missing.
    """
    root = Path(directory)
    splits = {}
    for name in names:
        candidates = [root / f"{name}.{format}", root / name]
        found = next((path for path in candidates if path.is_file()), None)
        if found is None:
            raise PydefgenInputError(f"Split '{name}' not found in {root}")
        splits[name] = load_dataset(found, format, strict)
    return splits


@dataclass(frozen=True)
class DatasetStatistics:
    """Corpus summary: distinct targets, entries, mean lengths in tokens."""

    phrases: int
    entries: int
    mean_context_length: float
    mean_definition_length: float


def dataset_statistics(entries: Sequence[Entry]) -> DatasetStatistics:
    """Summarize a split."""
    if not entries:
        return DatasetStatistics(0, 0, 0.0, 0.0)
    return DatasetStatistics(
        phrases=len({entry.word_tokens for entry in entries}),
        entries=len(entries),
        mean_context_length=float(np.mean([len(e.context_tokens) for e in entries])),
        mean_definition_length=float(
            np.mean([len(e.definition_tokens) for e in entries])
        ),
    )


class Vocab:
    """Token/id bijection with the specials at fixed leading ids.

    Ids follow ``SPECIAL_TOKENS`` (``<pad>`` is 0), then corpus tokens by
    descending frequency with a lexicographic tie-break. Unknown tokens encode
    as ``<unk>``.
    """

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise PydefgenInvalidConfig("Vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise PydefgenInvalidConfig("Vocabulary contains duplicate tokens")
        self._tokens = list(tokens)
        self._ids = {token: position for position, token in enumerate(self._tokens)}

    @classmethod
    def build(
        cls,
        entries: Sequence[Entry],
        min_freq: int = 1,
        max_size: Optional[int] = None,
    ) -> "Vocab":
        """Rank the corpus tokens of word, context and definition fields.

        Args:
            entries (Sequence[Entry]): Corpus.
            min_freq (int, optional): Minimum count to get an id. Defaults to 1.
            max_size (Optional[int], optional): Maximum number of non-special
                tokens. Defaults to None (unbounded).

        Raises:
            PydefgenEmptyCorpus: ``entries`` is empty.
            PydefgenInvalidConfig: ``min_freq`` < 1 or ``max_size`` < 0.
        """
        if not entries:
            raise PydefgenEmptyCorpus("Cannot build a vocabulary from zero entries")
        if min_freq < 1:
            raise PydefgenInvalidConfig(f"min_freq must be >= 1, got {min_freq}")
        if max_size is not None and max_size < 0:
            raise PydefgenInvalidConfig(f"max_size must be >= 0, got {max_size}")
        counts: Counter[str] = Counter()
        for entry in entries:
            counts.update(entry.word_tokens)
            counts.update(entry.context_tokens)
            counts.update(entry.definition_tokens)
        ranked = sorted(
            (
                item
                for item in counts.items()
                if item[1] >= min_freq and item[0] not in SPECIAL_TOKENS
            ),
            key=lambda item: (-item[1], item[0]),
        )
        if max_size is not None:
            ranked = ranked[:max_size]
        return cls([*SPECIAL_TOKENS, *(token for token, _ in ranked)])

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> list[str]:
        """Id-ordered token list."""
        return list(self._tokens)

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def id_to_token(self, token_id: int) -> str:
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        """Map tokens to ids, unknowns to ``<unk>``."""
        return [self._ids.get(token, UNK_ID) for token in tokens]

    def decode(self, ids: Iterable[int], strip_specials: bool = True) -> list[str]:
        """Map ids back to tokens.

        Args:
            ids (Iterable[int]): Token ids.
            strip_specials (bool, optional): Stop at ``<eos>`` and drop
                ``<pad>``/``<bos>``. Defaults to True.
        """
        tokens = []
        for token_id in ids:
            if strip_specials:
                if token_id == EOS_ID:
                    break
                if token_id in (PAD_ID, BOS_ID):
                    continue
            tokens.append(self._tokens[int(token_id)])
        return tokens

    def save(self, path: Union[str, Path]) -> Path:
        """Write the id-ordered token list as JSON."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        document = json.dumps({"tokens": self._tokens}, ensure_ascii=False)
        target.write_text(document, encoding="utf-8")
        return target

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        """Read a vocabulary written by :meth:`save`."""
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(document["tokens"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exception:
            raise PydefgenInputError(
                f"Unreadable vocabulary file {path}"
            ) from exception


def build_vocab(
    entries: Sequence[Entry], min_freq: int = 1, max_size: Optional[int] = None
) -> Vocab:
    """Build a :class:`Vocab` from entries. See :meth:`Vocab.build`."""
    return Vocab.build(entries, min_freq, max_size)


def splice(
    entry: Entry,
    vocab: Vocab,
    target_occurrence: TargetOccurrence = "context",
) -> tuple[list[int], list[int]]:
    """Build the encoder prompt ``word: W context: C``.

    Args:
        entry (Entry): Record to encode.
        vocab (Vocab): Vocabulary.
        target_occurrence (TargetOccurrence, optional): Which copy of the target
            the returned positions point at. Defaults to "context".

    Returns:
        tuple[list[int], list[int]]: Encoder ids and target positions.
    """
    ids = [
        vocab.token_to_id(WORD_PREFIX),
        *vocab.encode(entry.word_tokens),
        vocab.token_to_id(CONTEXT_PREFIX),
        *vocab.encode(entry.context_tokens),
    ]
    if target_occurrence == "word":
        positions = list(range(1, 1 + len(entry.word_tokens)))
    else:
        offset = len(entry.word_tokens) + 2
        start, end = entry.target_span
        positions = list(range(offset + start, offset + end))
    return ids, positions


@dataclass(frozen=True)
class Batch:
    """Padded encoder prompts and teacher-forced decoder sequences.

    All masks are validity masks: ``True`` marks a real token.
    ``decoder_gold`` is ``decoder_in`` shifted left by one with ``<eos>``
    appended.
    """

    encoder_ids: IdArray
    encoder_pad_mask: BoolArray
    target_mask: BoolArray
    decoder_in: IdArray
    decoder_gold: IdArray
    decoder_pad_mask: BoolArray
    entries: tuple[Entry, ...]

    @property
    def size(self) -> int:
        return int(self.encoder_ids.shape[0])

    @property
    def words(self) -> tuple[Tokens, ...]:
        return tuple(entry.word_tokens for entry in self.entries)


def collate(
    entries: Sequence[Entry],
    vocab: Vocab,
    target_occurrence: TargetOccurrence = "context",
) -> Batch:
    """Pad a group of entries into one :class:`Batch`."""
    spliced = [splice(entry, vocab, target_occurrence) for entry in entries]
    definitions = [vocab.encode(entry.definition_tokens) for entry in entries]
    count = len(entries)
    source_len = max(len(ids) for ids, _ in spliced)
    target_len = max(len(ids) for ids in definitions) + 1

    encoder_ids = np.full((count, source_len), PAD_ID, dtype=np.int64)
    encoder_pad_mask = np.zeros((count, source_len), dtype=bool)
    target_mask = np.zeros((count, source_len), dtype=bool)
    decoder_in = np.full((count, target_len), PAD_ID, dtype=np.int64)
    decoder_gold = np.full((count, target_len), PAD_ID, dtype=np.int64)
    decoder_pad_mask = np.zeros((count, target_len), dtype=bool)
    for row, ((ids, positions), definition) in enumerate(zip(spliced, definitions)):
        encoder_ids[row, : len(ids)] = ids
        encoder_pad_mask[row, : len(ids)] = True
        target_mask[row, positions] = True
        decoder_in[row, : len(definition) + 1] = [BOS_ID, *definition]
        decoder_gold[row, : len(definition) + 1] = [*definition, EOS_ID]
        decoder_pad_mask[row, : len(definition) + 1] = True
    return Batch(
        encoder_ids=encoder_ids,
        encoder_pad_mask=encoder_pad_mask,
        target_mask=target_mask,
        decoder_in=decoder_in,
        decoder_gold=decoder_gold,
        decoder_pad_mask=decoder_pad_mask,
        entries=tuple(entries),
    )


def make_batches(
    entries: Sequence[Entry],
    vocab: Vocab,
    batch_size: int,
    shuffle_seed: Optional[int] = None,
    target_occurrence: TargetOccurrence = "context",
) -> list[Batch]:
    """Partition entries into padded batches.

    Args:
        entries (Sequence[Entry]): Entries to batch.
        vocab (Vocab): Vocabulary.
        batch_size (int): Entries per batch; the last batch may be smaller.
        shuffle_seed (Optional[int], optional): Seed of the entry permutation.
            Defaults to None (file order).
        target_occurrence (TargetOccurrence, optional): See :func:`splice`.

    Raises:
        PydefgenInvalidConfig: ``batch_size`` < 1.

    Returns:
        list[Batch]: Batches covering every entry exactly once.
    """
    if batch_size < 1:
        raise PydefgenInvalidConfig(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(entries))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(entries))
    return [
        collate(
            [entries[i] for i in order[start : start + batch_size]],
            vocab,
            target_occurrence,
        )
        for start in range(0, len(entries), batch_size)
    ]
