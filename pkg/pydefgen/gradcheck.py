"""Finite-difference checks of every differentiable op and of the full loss."""
from contextlib import ExitStack
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .const import LOGGER
from .data import build_vocab, make_batches
from .demo import demo_entries
from .model import ModelConfig, Seq2SeqModel
from .numerics import (
    Function,
    Tensor,
    cosine_sim,
    embedding,
    exp,
    finite_diff_check,
    gelu,
    gradient_fault,
    index,
    layer_norm,
    log,
    log_softmax,
    matmul,
    max_pool_rows,
    mean,
    mean_pool_rows,
    normalize_rows,
    reshape,
    softmax_rows,
    stack,
    transpose,
    tsum,
)
from .objectives import (
    ContrastiveConfig,
    batch_losses,
    contrastive_loss,
    generation_loss,
)
from .seeding import make_rng

#: Default pass threshold of a single op
OP_TOLERANCE = 1e-6
#: Default pass threshold of the full loss
DEFAULT_TOLERANCE = 1e-4


def op_names() -> list[str]:
    """Names of every differentiable op, the valid targets of a gradient fault."""
    return sorted(cls.name for cls in Function.__subclasses__())


@dataclass(frozen=True)
class CheckResult:
    """Worst relative gradient error of one check."""

    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance


def _weights(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _positive(rng: np.random.Generator, low: float, high: float) -> Tensor:
    return Tensor(rng.uniform(low, high, (3, 4)), requires_grad=True)


Scalar = Callable[[list[Tensor]], Tensor]
Check = Callable[[np.random.Generator], tuple[Scalar, list[Tensor]]]


def op_checks() -> dict[str, Check]:
    """Scalar-valued checks, one per op, keyed by op name."""
    # op outputs are reduced against a fixed random projection
    def project(out: Tensor, rng_seed: int = 7) -> Tensor:
        weights = np.random.default_rng(rng_seed).normal(size=out.shape)
        return tsum(out * Tensor(weights))

    gold = np.array([[1, 4, 0], [2, 2, 6]])
    mask = np.array([[True, True, False], [True, True, True]])
    rows = np.array([True, False, True, True])
    return {
        "add": lambda r: (
            lambda p: project(p[0] + p[1]),
            [_weights(r, 3, 4), _weights(r, 4)],
        ),
        "sub": lambda r: (
            lambda p: project(p[0] - p[1]),
            [_weights(r, 3, 4), _weights(r, 3, 1)],
        ),
        "mul": lambda r: (
            lambda p: project(p[0] * p[1]),
            [_weights(r, 3, 4), _weights(r, 3, 4)],
        ),
        "div": lambda r: (
            lambda p: project(p[0] / p[1]),
            [_weights(r, 3, 4), _positive(r, 1.0, 2.0)],
        ),
        "matmul": lambda r: (
            lambda p: project(matmul(p[0], p[1])),
            [_weights(r, 3, 4), _weights(r, 4, 5)],
        ),
        "neg": lambda r: (lambda p: project(-p[0]), [_weights(r, 3, 4)]),
        "exp": lambda r: (lambda p: project(exp(p[0])), [_weights(r, 3, 4)]),
        "log": lambda r: (lambda p: project(log(p[0])), [_positive(r, 0.5, 2.0)]),
        "sum": lambda r: (
            lambda p: project(tsum(p[0], axis=1)),
            [_weights(r, 3, 4)],
        ),
        "mean": lambda r: (
            lambda p: project(mean(p[0], axis=0)),
            [_weights(r, 3, 4)],
        ),
        "reshape": lambda r: (
            lambda p: project(reshape(p[0], (2, 6))),
            [_weights(r, 3, 4)],
        ),
        "transpose": lambda r: (
            lambda p: project(transpose(p[0], (1, 0))),
            [_weights(r, 3, 4)],
        ),
        "index": lambda r: (
            lambda p: project(index(p[0], (np.array([0, 2, 2]), slice(None)))),
            [_weights(r, 3, 4)],
        ),
        "stack": lambda r: (
            lambda p: project(stack([p[0], p[1]])),
            [_weights(r, 4), _weights(r, 4)],
        ),
        "embedding": lambda r: (
            lambda p: project(embedding(p[0], np.array([[1, 3], [3, 0]]))),
            [_weights(r, 5, 4)],
        ),
        "softmax_rows": lambda r: (
            lambda p: project(softmax_rows(p[0])),
            [_weights(r, 3, 5)],
        ),
        "log_softmax": lambda r: (
            lambda p: project(log_softmax(p[0])),
            [_weights(r, 3, 5)],
        ),
        "layer_norm": lambda r: (
            lambda p: project(layer_norm(p[0], p[1], p[2])),
            [_weights(r, 3, 5), _weights(r, 5), _weights(r, 5)],
        ),
        "gelu": lambda r: (lambda p: project(gelu(p[0])), [_weights(r, 3, 4)]),
        "normalize_rows": lambda r: (
            lambda p: project(normalize_rows(p[0])),
            [_weights(r, 3, 4)],
        ),
        "cosine_sim": lambda r: (
            lambda p: cosine_sim(p[0], p[1]),
            [_weights(r, 5), _weights(r, 5)],
        ),
        "max_pool_rows": lambda r: (
            lambda p: project(max_pool_rows(p[0], rows)),
            [_weights(r, 4, 3)],
        ),
        "mean_pool_rows": lambda r: (
            lambda p: project(mean_pool_rows(p[0], rows)),
            [_weights(r, 4, 3)],
        ),
        "generation_loss": lambda r: (
            lambda p: generation_loss(p[0], gold, mask),
            [_weights(r, 2, 3, 7)],
        ),
        "contrastive_loss": lambda r: (
            lambda p: contrastive_loss(p[0], p[1], p[2]),
            [_weights(r, 4, 6), _weights(r, 4, 6), Tensor(0.5, requires_grad=True)],
        ),
    }


def full_loss_check(seed: int = 0, num_samples: int = 200) -> float:
    """Relative error of the mixed loss through a 1-layer, d=8, 2-head model."""
    entries = demo_entries(4, seed)
    vocab = build_vocab(entries)
    config = ModelConfig(
        vocab_size=len(vocab),
        encoder_layers=1,
        decoder_layers=1,
        d_model=8,
        n_heads=2,
        d_ff=16,
        max_len=32,
        dropout=0.0,
    )
    model = Seq2SeqModel(config, seed=seed).eval()
    batch = make_batches(entries, vocab, batch_size=4)[0]
    contrastive = ContrastiveConfig(tau=0.5, pooling="mean")
    return finite_diff_check(
        lambda _: batch_losses(model, batch, contrastive, 0.5).final,
        model.params,
        num_samples=num_samples,
        seed=seed,
    )


def run_gradcheck(
    tolerance: Optional[float] = None,
    corrupt_op: Optional[str] = None,
    seed: int = 0,
    num_samples: int = 200,
) -> list[CheckResult]:
    """Check every op and the full loss against central finite differences.

    Args:
        tolerance (Optional[float], optional): Pass threshold of every check.
            Defaults to 1e-6 per op and 1e-4 for the full loss.
        corrupt_op (Optional[str], optional): Op whose gradient is deliberately
            scaled, to prove the checker catches it.
        seed (int, optional): Input and sampling seed. Defaults to 0.
        num_samples (int, optional): Sampled coordinates of the full-loss check.

    Returns:
        list[CheckResult]: One result per op plus ``full_loss``.
    """
    op_tolerance = OP_TOLERANCE if tolerance is None else tolerance
    loss_tolerance = DEFAULT_TOLERANCE if tolerance is None else tolerance
    results = []
    with ExitStack() as faults:
        if corrupt_op is not None:
            faults.enter_context(gradient_fault(corrupt_op))
        for name, check in op_checks().items():
            f, params = check(make_rng(seed, "gradcheck", name))
            error = finite_diff_check(f, params, seed=seed)
            results.append(CheckResult(name, error, op_tolerance))
        error = full_loss_check(seed, num_samples)
        results.append(CheckResult("full_loss", error, loss_tolerance))
    for result in results:
        level = "debug" if result.passed else "warning"
        getattr(LOGGER, level)("gradcheck %-16s %.3e", result.name, result.error)
    return results
