"""Generation cross-entropy, in-batch contrastive loss and their mixture."""
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .const import DEFAULT_TAU
from .data import Batch
from .exceptions import (
    PydefgenAllPadded,
    PydefgenInputError,
    PydefgenInvalidConfig,
    PydefgenLambdaOutOfRange,
    PydefgenShapeMismatch,
)
from .model import Seq2SeqModel
from .models.common import PoolingKind, Reduction
from .numerics import (
    Tensor,
    cosine_similarity_matrix,
    index,
    log_softmax,
    max_pool_rows,
    mean_pool_rows,
    stack,
    tsum,
)
from .types import BoolArray, FloatArray, IdArray, JsonObject, Tokens


@dataclass(frozen=True)
class ContrastiveConfig:
    """Settings of the contrastive objective.

    Args:
        tau (float): Softmax temperature, > 0. Defaults to 0.1.
        pooling (PoolingKind): Row pooling of ``H_target`` and ``G``.
            Defaults to "max".
        reduction (Reduction): Batch reduction. Defaults to "mean".
    """

    tau: float = DEFAULT_TAU
    pooling: PoolingKind = "max"
    reduction: Reduction = "mean"

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise PydefgenInvalidConfig(f"tau must be > 0, got {self.tau}")
        if self.pooling not in ("max", "mean"):
            raise PydefgenInvalidConfig(f"Unknown pooling '{self.pooling}'")
        if self.reduction not in ("sum", "mean"):
            raise PydefgenInvalidConfig(f"Unknown reduction '{self.reduction}'")


def generation_loss(logits: Tensor, gold: IdArray, pad_mask: BoolArray) -> Tensor:
    """Mean negative log-likelihood of the non-pad gold tokens.

    Args:
        logits (Tensor): ``[N, T, |V|]`` raw scores.
        gold (IdArray): ``[N, T]`` gold ids.
        pad_mask (BoolArray): ``[N, T]``, True at real gold tokens.

    Raises:
        PydefgenAllPadded: No real gold token.

    Returns:
        Tensor: Scalar loss.
    """
    valid = np.asarray(pad_mask, dtype=bool)
    gold = np.asarray(gold, dtype=np.int64)
    if logits.shape[:2] != gold.shape or valid.shape != gold.shape:
        raise PydefgenShapeMismatch(
            f"logits {logits.shape} do not match gold {gold.shape} / mask {valid.shape}"
        )
    count = int(valid.sum())
    if count == 0:
        raise PydefgenAllPadded("Every gold token is padding")
    rows, steps = np.nonzero(valid)
    picked = index(log_softmax(logits), (rows, steps, gold[rows, steps]))
    return -tsum(picked) * (1.0 / count)


def _pool(
    rows: Tensor, pooling: PoolingKind, row_mask: Optional[BoolArray] = None
) -> Tensor:
    if pooling == "max":
        return max_pool_rows(rows, row_mask)
    return mean_pool_rows(rows, row_mask)


def pooled_representations(
    target_rows: Sequence[Tensor],
    decoder_states: Tensor,
    decoder_pad_mask: BoolArray,
    pooling: PoolingKind = "max",
) -> tuple[Tensor, Tensor]:
    """Pool each sample's target rows into ``h`` and its decoder rows into ``g``.

    ``g`` pools every non-pad decoder position, including the one predicting
    ``<eos>``.

    Returns:
        tuple[Tensor, Tensor]: ``h`` and ``g``, both ``[N, d]``.
    """
    mask = np.asarray(decoder_pad_mask, dtype=bool)
    h = stack([_pool(rows, pooling) for rows in target_rows])
    g = stack(
        [
            _pool(index(decoder_states, sample), pooling, mask[sample])
            for sample in range(mask.shape[0])
        ]
    )
    return h, g


def contrastive_loss(
    h: Tensor,
    g: Tensor,
    tau: Union[float, Tensor] = DEFAULT_TAU,
    reduction: Reduction = "mean",
) -> Tensor:
    """In-batch InfoNCE over cosine similarities.

    Sample ``i`` contributes ``-log softmax_j(sim(h_i, g_j) / tau)[i]``; every
    other ``g_j`` of the batch is a negative.

    Args:
        h (Tensor): ``[N, d]`` word representations.
        g (Tensor): ``[N, d]`` definition representations.
        tau (Union[float, Tensor], optional): Temperature. A tensor makes it
            differentiable. Defaults to 0.1.
        reduction (Reduction, optional): ``sum`` or ``mean`` over samples.
            Defaults to "mean".

    Raises:
        PydefgenZeroNorm: A row of ``h`` or ``g`` has (near) zero norm.

    Returns:
        Tensor: Scalar loss.
    """
    if h.shape != g.shape:
        raise PydefgenShapeMismatch(f"h {h.shape} and g {g.shape} differ")
    count = h.shape[0]
    scores = log_softmax(cosine_similarity_matrix(h, g) / tau)
    diagonal = np.arange(count)
    total = -tsum(index(scores, (diagonal, diagonal)))
    if reduction == "sum":
        return total
    return total * (1.0 / count)


def mixed_loss(contrastive: Tensor, generation: Tensor, lambda_: float) -> Tensor:
    """``lambda * L_C + (1 - lambda) * L_G``.

    The endpoints return the selected loss tensor itself.

    Raises:
        PydefgenLambdaOutOfRange: ``lambda_`` outside ``[0, 1]``.
    """
    if not 0.0 <= lambda_ <= 1.0:
        raise PydefgenLambdaOutOfRange(f"lambda must be in [0, 1], got {lambda_}")
    if lambda_ == 0.0:
        return generation
    if lambda_ == 1.0:
        return contrastive
    return contrastive * lambda_ + generation * (1.0 - lambda_)


@dataclass(frozen=True)
class AlignmentDiagnostics:
    """How well word and definition representations line up within batches."""

    diag_mean_sim: float
    offdiag_mean_sim: Optional[float]
    retrieval_acc: float
    duplicate_rate: float

    @property
    def margin(self) -> Optional[float]:
        """Diagonal minus off-diagonal mean similarity."""
        if self.offdiag_mean_sim is None:
            return None
        return self.diag_mean_sim - self.offdiag_mean_sim

    def to_dict(self) -> JsonObject:
        return asdict(self)


def duplicate_rate(words: Sequence[Tokens]) -> float:
    """Fraction of samples whose target word occurs more than once in the batch."""
    if not words:
        return 0.0
    counts: dict[Tokens, int] = {}
    for word in words:
        counts[word] = counts.get(word, 0) + 1
    return sum(counts[word] > 1 for word in words) / len(words)


class _SimilarityTotals:
    def __init__(self) -> None:
        self.diag_sum = 0.0
        self.diag_count = 0
        self.offdiag_sum = 0.0
        self.offdiag_count = 0
        self.hits = 0
        self.duplicates = 0.0

    def add(self, similarity: FloatArray, words: Sequence[Tokens]) -> None:
        count = similarity.shape[0]
        diagonal = np.diag(similarity)
        self.diag_sum += float(diagonal.sum())
        self.diag_count += count
        self.offdiag_sum += float(similarity.sum() - diagonal.sum())
        self.offdiag_count += count * count - count
        self.hits += int((similarity.argmax(axis=1) == np.arange(count)).sum())
        self.duplicates += duplicate_rate(words) * count

    def result(self) -> AlignmentDiagnostics:
        if not self.diag_count:
            raise PydefgenInputError("No samples to compute alignment diagnostics over")
        return AlignmentDiagnostics(
            diag_mean_sim=self.diag_sum / self.diag_count,
            offdiag_mean_sim=(
                self.offdiag_sum / self.offdiag_count if self.offdiag_count else None
            ),
            retrieval_acc=self.hits / self.diag_count,
            duplicate_rate=self.duplicates / self.diag_count,
        )


def similarity_diagnostics(
    similarity: FloatArray, words: Sequence[Tokens] = ()
) -> AlignmentDiagnostics:
    """Diagnostics of one ``[N, N]`` similarity matrix."""
    totals = _SimilarityTotals()
    totals.add(similarity, words)
    return totals.result()


@dataclass
class LossBundle:
    """Losses of one batch; ``contrastive`` is None for generation-only steps."""

    generation: Tensor
    contrastive: Optional[Tensor]
    final: Tensor
    similarity: Optional[FloatArray] = None
    diagnostics: Optional[AlignmentDiagnostics] = None

    def to_record(self) -> JsonObject:
        """Flat JSON-friendly values: ``L_G``, ``L_C``, ``L_Final`` and diagnostics."""
        record: JsonObject = {
            "L_G": self.generation.item(),
            "L_C": None if self.contrastive is None else self.contrastive.item(),
            "L_Final": self.final.item(),
        }
        if self.diagnostics is not None:
            record.update(
                diag_mean_sim=self.diagnostics.diag_mean_sim,
                offdiag_mean_sim=self.diagnostics.offdiag_mean_sim,
                retrieval_acc=self.diagnostics.retrieval_acc,
                duplicate_rate=self.diagnostics.duplicate_rate,
            )
        return record


def batch_losses(
    model: Seq2SeqModel,
    batch: Batch,
    contrastive: Optional[ContrastiveConfig] = None,
    lambda_: float = 0.0,
) -> LossBundle:
    """Run the model on a batch and compute every loss it needs.

    Args:
        model (Seq2SeqModel): Model, in whatever train/eval mode the caller set.
        batch (Batch): Batch.
        contrastive (Optional[ContrastiveConfig], optional): None skips the
            contrastive branch entirely. Defaults to None.
        lambda_ (float, optional): Mixing weight. Defaults to 0.0.

    Returns:
        LossBundle: Losses and, with a contrastive branch, its diagnostics.
    """
    outputs = model.forward(
        batch.encoder_ids,
        batch.encoder_pad_mask,
        batch.decoder_in,
        batch.decoder_pad_mask,
    )
    generation = generation_loss(
        outputs.logits, batch.decoder_gold, batch.decoder_pad_mask
    )
    if contrastive is None:
        if lambda_ != 0.0:
            raise PydefgenInvalidConfig("A non-zero lambda needs a contrastive config")
        return LossBundle(generation, None, generation)

    h, g = pooled_representations(
        model.extract_target(outputs.encoder_states, batch.target_mask),
        outputs.decoder_states,
        batch.decoder_pad_mask,
        contrastive.pooling,
    )
    loss = contrastive_loss(h, g, contrastive.tau, contrastive.reduction)
    similarity = cosine_similarity_matrix(h.detach(), g.detach()).values
    return LossBundle(
        generation=generation,
        contrastive=loss,
        final=mixed_loss(loss, generation, lambda_),
        similarity=similarity,
        diagnostics=similarity_diagnostics(similarity, batch.words),
    )


def alignment_diagnostics(
    model: Seq2SeqModel,
    batches: Iterable[Batch],
    pooling: PoolingKind = "max",
) -> AlignmentDiagnostics:
    """Average in-batch alignment of a model over batches, dropout off.

    Args:
        model (Seq2SeqModel): Model to measure; its train/eval mode is restored.
        batches (Iterable[Batch]): Batches to measure.
        pooling (PoolingKind, optional): Row pooling. Defaults to "max".

    Returns:
        AlignmentDiagnostics: Sample-weighted averages over all batches.
    """
    was_training = model.training
    model.eval()
    totals = _SimilarityTotals()
    try:
        for batch in batches:
            encoder_states = model.encode(batch.encoder_ids, batch.encoder_pad_mask)
            decoder_states = model.decode_teacher_forced(
                encoder_states,
                batch.encoder_pad_mask,
                batch.decoder_in,
                batch.decoder_pad_mask,
            )
            h, g = pooled_representations(
                model.extract_target(encoder_states, batch.target_mask),
                decoder_states,
                batch.decoder_pad_mask,
                pooling,
            )
            totals.add(cosine_similarity_matrix(h, g).values, batch.words)
    finally:
        model.training = was_training
    return totals.result()
