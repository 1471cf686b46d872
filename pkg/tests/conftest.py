import pytest

from pydefgen.data import Entry, Vocab, build_vocab, make_batches
from pydefgen.demo import demo_entries, write_demo_corpus
from pydefgen.model import ModelConfig, Seq2SeqModel

from tests import TINY_MODEL, TOY_ENTRY_COUNT, TOY_SEED


@pytest.fixture()
def toy_entries():
    yield demo_entries(TOY_ENTRY_COUNT, TOY_SEED)


@pytest.fixture()
def toy_vocab(toy_entries: list[Entry]):
    yield build_vocab(toy_entries)


@pytest.fixture()
def tiny_config(toy_vocab: Vocab):
    yield ModelConfig(vocab_size=len(toy_vocab), **TINY_MODEL)


@pytest.fixture()
def tiny_model(tiny_config: ModelConfig):
    yield Seq2SeqModel(tiny_config, seed=TOY_SEED).eval()


@pytest.fixture()
def toy_batch(toy_entries: list[Entry], toy_vocab: Vocab):
    yield make_batches(toy_entries[:4], toy_vocab, batch_size=4)[0]


@pytest.fixture()
def corpus_dir(tmp_path):
    directory = tmp_path / "corpus"
    write_demo_corpus(directory, TOY_SEED)
    yield directory


@pytest.fixture()
def run_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("PYDEFGEN_RUN_ROOT", str(root))
    yield root
