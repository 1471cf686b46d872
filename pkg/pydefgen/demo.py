"""Synthetic dictionary corpus for smoke runs and CI.

Every entry defines an invented word by four attributes (size, colour, kind and
habitat). Attribute tuples are unique across the whole corpus, so no two words
share a definition.
"""
from itertools import product
from pathlib import Path
from typing import Union

from .const import LOGGER
from .data import Entry
from .seeding import make_rng

SIZES = ("small", "large", "tiny", "huge")
COLOURS = ("red", "blue", "green", "grey", "white")
KINDS = ("bird", "fish", "insect", "lizard", "mammal")
HABITATS = ("forest", "river", "desert", "mountain", "marsh")

_ONSETS = ("b", "d", "gl", "k", "m", "pr", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")
_CODAS = ("ck", "n", "p", "sh", "x")

_CONTEXTS = (
    "the {word} was seen near the {habitat}",
    "a {word} rested by the {habitat} at dawn",
    "children pointed at the {word} all afternoon",
    "we heard a {word} calling in the night",
    "an old {word} crossed the path slowly",
)

#: Entries per split of the default corpus
DEMO_SPLIT_SIZES = {"train": 50, "valid": 10, "test": 10}


def demo_entries(count: int, seed: int = 0) -> list[Entry]:
    """Generate ``count`` entries with distinct words and definitions.

    Args:
        count (int): Number of entries, at most 500.
        seed (int, optional): Generator seed. Defaults to 0.

    Returns:
        list[Entry]: Entries in generation order.
    """
    rng = make_rng(seed, "demo")
    syllables = ["".join(parts) for parts in product(_ONSETS, _VOWELS, _CODAS)]
    words: list[str] = []
    seen = set()
    while len(words) < count:
        word = "".join(rng.choice(syllables, size=2))
        if word not in seen:
            seen.add(word)
            words.append(word)

    attributes = list(product(SIZES, COLOURS, KINDS, HABITATS))
    picks = rng.choice(len(attributes), size=count, replace=False)
    entries = []
    for position, (word, pick) in enumerate(zip(words, picks)):
        size, colour, kind, habitat = attributes[int(pick)]
        template = _CONTEXTS[position % len(_CONTEXTS)]
        context = template.format(word=word, habitat=habitat)
        definition = f"a {size} {colour} {kind} that lives in the {habitat}"
        entries.append(Entry.from_text(word, context, definition))
    return entries


def write_demo_corpus(directory: Union[str, Path], seed: int = 0) -> dict[str, Path]:
    """Write ``train.tsv``, ``valid.tsv`` and ``test.tsv`` of the demo corpus.

    Args:
        directory (Union[str, Path]): Output directory, created if missing.
        seed (int, optional): Generator seed. Defaults to 0.

    Returns:
        dict[str, Path]: Written file per split.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    entries = demo_entries(sum(DEMO_SPLIT_SIZES.values()), seed)
    paths = {}
    start = 0
    for split, size in DEMO_SPLIT_SIZES.items():
        lines = [
            f"{entry.word}\t{entry.context}\t{entry.definition}\n"
            for entry in entries[start : start + size]
        ]
        paths[split] = root / f"{split}.tsv"
        paths[split].write_text("".join(lines), encoding="utf-8")
        start += size
    LOGGER.info("Wrote demo corpus to %s", root)
    return paths
