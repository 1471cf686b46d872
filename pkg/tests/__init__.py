import pathlib

TOY_SEED = 0
TOY_ENTRY_COUNT = 12

#: Smallest architecture the gradient and property checks run on
TINY_MODEL = {
    "encoder_layers": 1,
    "decoder_layers": 1,
    "d_model": 8,
    "n_heads": 2,
    "d_ff": 16,
    "max_len": 64,
    "dropout": 0.0,
}

#: Architecture of the behavioural training checks
SMALL_MODEL = {
    "encoder_layers": 2,
    "decoder_layers": 2,
    "d_model": 64,
    "n_heads": 4,
    "d_ff": 128,
    "max_len": 64,
    "dropout": 0.0,
}

BEHAVIOUR_SEEDS = (0, 1, 2)


def load_fixture(filename) -> str:
    """Load a fixture."""
    return (
        pathlib.Path(__file__)
        .parent.joinpath("fixtures", filename)
        .read_text(encoding="utf8")
    )


def fixture_path(filename) -> pathlib.Path:
    """Path of a fixture file."""
    return pathlib.Path(__file__).parent.joinpath("fixtures", filename)
