import json

import numpy as np
import pytest

from pydefgen.const import BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID
from pydefgen.data import (
    Entry,
    Vocab,
    build_vocab,
    collate,
    dataset_statistics,
    find_occurrences,
    load_dataset,
    load_splits,
    make_batches,
    parse_records,
    splice,
    tokenize,
)
from pydefgen.demo import DEMO_SPLIT_SIZES, demo_entries
from pydefgen.exceptions import (
    PydefgenEmptyCorpus,
    PydefgenInputError,
    PydefgenInvalidConfig,
    PydefgenInvalidEntry,
    PydefgenMalformedRecord,
    PydefgenTargetNotFound,
)

from tests import fixture_path


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize("We sat on the Bank, quietly.") == (
        "we",
        "sat",
        "on",
        "the",
        "bank",
        ",",
        "quietly",
        ".",
    )
    # the prompt prefixes can never come out of the tokenizer
    assert tokenize("word: context:") == ("word", ":", "context", ":")


def test_find_occurrences():
    context = tokenize("the bank by the bank")
    assert find_occurrences(("bank",), context) == [(1, 2), (4, 5)]
    assert find_occurrences(("the", "bank"), context) == [(0, 2), (3, 5)]
    assert find_occurrences(("river",), context) == []
    assert find_occurrences((), context) == []


def test_entry_from_text_locates_target():
    entry = Entry.from_text("Bank", "We sat on the bank.", "sloping land")
    assert entry.target_span == (4, 5)
    assert entry.word == "bank"
    assert entry.definition_tokens == ("sloping", "land")


def test_entry_first_occurrence_wins(caplog):
    entry = Entry.from_text("bank", "the bank by the bank", "sloping land")
    assert entry.target_span == (1, 2)
    assert "occurs 2 times" in caplog.text


def test_entry_invariants():
    with pytest.raises(PydefgenTargetNotFound):
        Entry.from_text("kite", "the bird flew away", "a bird")
    with pytest.raises(PydefgenInvalidEntry):
        Entry.from_text("bank", "the bank", "sloping land", span=(0, 1))
    with pytest.raises(PydefgenInvalidEntry):
        Entry.from_text("bank", "the bank", "sloping land", span=(1, 3))
    with pytest.raises(PydefgenInvalidEntry):
        Entry(("bank",), ("the", "bank"), (), (1, 2))


def test_load_tsv():
    dataset = load_dataset(fixture_path("data/tiny.tsv"))
    assert len(dataset) == 3
    assert dataset[0].word_tokens == ("bank",)
    assert dataset[0].target_span == (4, 5)
    # explicit five-column span
    assert dataset[2].target_span == (1, 2)
    assert dataset.rejections == []


def test_load_jsonl_expands_definition_lists():
    dataset = load_dataset(fixture_path("data/tiny.jsonl"))
    assert [entry.word for entry in dataset] == ["bank", "run", "run", "glass"]
    assert dataset[1].definition == "move fast on foot"
    assert dataset[2].definition == "operate or function"
    assert dataset[3].target_span == (1, 2)


def test_malformed_record_names_line():
    with pytest.raises(PydefgenMalformedRecord) as error:
        load_dataset(fixture_path("data/malformed.tsv"))
    assert error.value.line_number == 2
    assert "line 2" in str(error.value)


def test_lenient_load_collects_rejections():
    dataset = load_dataset(fixture_path("data/malformed.tsv"), strict=False)
    assert len(dataset) == 2
    assert [rejection.line_number for rejection in dataset.rejections] == [2]


def test_missing_target_names_line():
    with pytest.raises(PydefgenTargetNotFound) as error:
        load_dataset(fixture_path("data/missing_target.tsv"))
    assert error.value.line_number == 2


def test_parse_records_jsonl_errors():
    with pytest.raises(PydefgenMalformedRecord) as error:
        parse_records(['{"word": "bank"}'], "jsonl")
    assert "missing key(s) context, definition" in str(error.value)
    with pytest.raises(PydefgenMalformedRecord):
        parse_records(["not json"], "jsonl")
    with pytest.raises(PydefgenMalformedRecord):
        parse_records(['{"word": "a", "context": "a", "definition": 3}'], "jsonl")
    with pytest.raises(PydefgenInvalidConfig):
        parse_records([], "csv")


def test_empty_definition_list_is_rejected(caplog):
    lines = [
        '{"word": "bank", "context": "the bank was shut", "definition": "a lender"}',
        '{"word": "bank", "context": "the bank was shut", "definition": []}',
    ]
    with pytest.raises(PydefgenMalformedRecord) as error:
        parse_records(lines, "jsonl")
    assert error.value.line_number == 2
    assert "definition list is empty" in str(error.value)

    dataset = parse_records(lines, "jsonl", strict=False)
    assert len(dataset) == 1
    assert [rejection.line_number for rejection in dataset.rejections] == [2]
    assert "definition list is empty" in caplog.text


def test_load_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.tsv"
    with pytest.raises(PydefgenInputError) as error:
        load_dataset(missing)
    assert str(missing) in str(error.value)


def test_load_splits(corpus_dir):
    splits = load_splits(corpus_dir)
    assert {name: len(dataset) for name, dataset in splits.items()} == DEMO_SPLIT_SIZES
    with pytest.raises(PydefgenInputError):
        load_splits(corpus_dir, names=("train", "dev"))


def test_dataset_statistics():
    entries = load_dataset(fixture_path("data/tiny.jsonl")).entries
    stats = dataset_statistics(entries)
    assert stats.phrases == 3
    assert stats.entries == 4
    assert stats.mean_definition_length == pytest.approx((7 + 4 + 3 + 4) / 4)
    assert dataset_statistics([]).entries == 0


def test_vocab_specials_and_ordering():
    entries = [
        Entry.from_text("b", "a b a", "c a"),
        Entry.from_text("c", "c b", "b"),
    ]
    vocab = build_vocab(entries)
    # counts: a=3, b=4, c=3
    assert vocab.tokens == [*SPECIAL_TOKENS, "b", "a", "c"]
    assert vocab.token_to_id("<pad>") == PAD_ID
    assert vocab.token_to_id("zebra") == UNK_ID
    assert vocab.encode(["a", "zebra"]) == [len(SPECIAL_TOKENS) + 1, UNK_ID]
    assert len(build_vocab(entries, max_size=1)) == len(SPECIAL_TOKENS) + 1
    assert "c" not in build_vocab(entries, min_freq=4)


def test_vocab_errors():
    with pytest.raises(PydefgenEmptyCorpus):
        build_vocab([])
    with pytest.raises(PydefgenInvalidConfig):
        Vocab(["a", "b"])
    with pytest.raises(PydefgenInvalidConfig):
        build_vocab(demo_entries(2), min_freq=0)


def test_vocab_decode_and_persistence(tmp_path, toy_vocab: Vocab):
    ids = toy_vocab.encode(["a", "the"])
    assert toy_vocab.decode([BOS_ID, *ids, EOS_ID, *ids]) == ["a", "the"]
    with_pad = toy_vocab.decode([*ids, PAD_ID], strip_specials=False)
    assert with_pad == ["a", "the", "<pad>"]

    path = toy_vocab.save(tmp_path / "vocab.json")
    assert json.loads(path.read_text())["tokens"] == toy_vocab.tokens
    assert Vocab.load(path).tokens == toy_vocab.tokens
    (tmp_path / "broken.json").write_text("{}")
    with pytest.raises(PydefgenInputError):
        Vocab.load(tmp_path / "broken.json")


def test_splice_positions():
    entry = Entry.from_text("river bank", "we sat on the river bank", "sloping land")
    vocab = build_vocab([entry])
    ids, positions = splice(entry, vocab)
    tokens = [vocab.id_to_token(token_id) for token_id in ids]
    assert tokens == [
        "word:",
        "river",
        "bank",
        "context:",
        "we",
        "sat",
        "on",
        "the",
        "river",
        "bank",
    ]
    assert positions == [8, 9]
    assert [tokens[p] for p in positions] == ["river", "bank"]

    _, word_positions = splice(entry, vocab, target_occurrence="word")
    assert word_positions == [1, 2]


def test_collate_masks_and_shift(toy_entries: list[Entry], toy_vocab: Vocab):
    batch = collate(toy_entries[:3], toy_vocab)
    assert batch.size == 3
    for row, entry in enumerate(toy_entries[:3]):
        length = len(entry.definition_tokens) + 1
        assert batch.decoder_in[row, 0] == BOS_ID
        assert batch.decoder_gold[row, length - 1] == EOS_ID
        # gold is the decoder input shifted left by one
        np.testing.assert_array_equal(
            batch.decoder_gold[row, : length - 1], batch.decoder_in[row, 1:length]
        )
        assert batch.decoder_pad_mask[row].sum() == length
        # target positions are real tokens
        assert not (batch.target_mask[row] & ~batch.encoder_pad_mask[row]).any()
        assert batch.target_mask[row].sum() == len(entry.word_tokens)
    assert (batch.encoder_ids[~batch.encoder_pad_mask] == PAD_ID).all()
    assert batch.words == tuple(entry.word_tokens for entry in toy_entries[:3])


def test_make_batches_partition(toy_entries: list[Entry], toy_vocab: Vocab):
    batches = make_batches(toy_entries, toy_vocab, batch_size=5)
    assert [batch.size for batch in batches] == [5, 5, 2]
    assert [entry for batch in batches for entry in batch.entries] == toy_entries

    shuffled = make_batches(toy_entries, toy_vocab, batch_size=5, shuffle_seed=3)
    again = make_batches(toy_entries, toy_vocab, batch_size=5, shuffle_seed=3)
    order = [entry for batch in shuffled for entry in batch.entries]
    assert sorted(order, key=toy_entries.index) == toy_entries
    assert order == [entry for batch in again for entry in batch.entries]
    with pytest.raises(PydefgenInvalidConfig):
        make_batches(toy_entries, toy_vocab, batch_size=0)


def test_demo_entries_are_distinct():
    entries = demo_entries(50, seed=0)
    assert len({entry.word for entry in entries}) == 50
    assert len({entry.definition for entry in entries}) == 50
    assert demo_entries(50, seed=0) == entries


def test_load_dataset_repeated_target_uses_first_occurrence(caplog):
    dataset = load_dataset(fixture_path("data/repeated_target.tsv"))

    assert dataset[0].target_span == (4, 5)
    assert "occurs 2 times" in caplog.text
