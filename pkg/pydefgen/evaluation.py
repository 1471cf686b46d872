"""Split evaluation: decode, score with BLEU and NIST, write per-sample output."""
import csv
from dataclasses import asdict, dataclass
import json
from pathlib import Path
from typing import Optional, Sequence, Union

from .const import LOGGER
from .data import Entry, Vocab
from .decoding import DecodeConfig, Generation, generate_all, truncation_count
from .metrics import bleu_corpus, nist_corpus, sentence_bleu, sentence_nist_mean
from .model import Seq2SeqModel
from .models.common import TargetOccurrence
from .types import JsonObject

NIST_NOTE = (
    "nist is the corpus-level Doddington score (NLTK convention); "
    "nist_display is the mean sentence-level NIST scaled by 100"
)


@dataclass(frozen=True)
class MetricReport:
    """Automatic metrics of one decoded split.

    ``bleu`` is in [0, 1] and ``bleu_display`` is the same value x100.
    ``nist`` is the raw corpus score while ``nist_display`` is the x100
    sentence-averaged variant; see ``note``.
    """

    count: int
    bleu: float
    bleu_display: float
    nist: float
    nist_display: float
    precisions: list[Optional[float]]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    exact_match: float
    truncated: int
    sentence_bleu: list[float]
    note: str = NIST_NOTE

    def to_dict(self) -> JsonObject:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        """One-line human readable summary."""
        return (
            f"BLEU {self.bleu_display:.2f}  NIST {self.nist:.4f} "
            f"(x100 sentence mean {self.nist_display:.2f})  "
            f"exact {self.exact_match:.2%}  n={self.count}"
        )


def score_corpus(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    truncated: int = 0,
) -> MetricReport:
    """Score tokenized hypotheses against one reference each.

    Raises:
        PydefgenEmptyHypothesisSet: No hypotheses.
    """
    bleu = bleu_corpus(hyps, refs)
    nist = nist_corpus(hyps, refs)
    return MetricReport(
        count=len(hyps),
        bleu=bleu.bleu,
        bleu_display=100.0 * bleu.bleu,
        nist=nist,
        nist_display=100.0 * sentence_nist_mean(hyps, refs),
        precisions=bleu.precisions,
        brevity_penalty=bleu.brevity_penalty,
        hyp_length=bleu.hyp_length,
        ref_length=bleu.ref_length,
        exact_match=sum(list(h) == list(r) for h, r in zip(hyps, refs)) / len(hyps),
        truncated=truncated,
        sentence_bleu=[sentence_bleu(h, r) for h, r in zip(hyps, refs)],
    )


def write_generations(
    path: Union[str, Path],
    entries: Sequence[Entry],
    generations: Sequence[Generation],
    scores: Optional[Sequence[float]] = None,
) -> Path:
    """Write ``word, context, reference, hypothesis[, sent_bleu]`` TSV rows."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(
            handle, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE
        )
        for position, (entry, generation) in enumerate(zip(entries, generations)):
            hypothesis = " ".join(generation.tokens)
            row = [entry.word, entry.context, entry.definition, hypothesis]
            if scores is not None:
                row.append(f"{scores[position]:.6f}")
            writer.writerow(row)
    return target


def evaluate_split(
    model: Seq2SeqModel,
    vocab: Vocab,
    entries: Sequence[Entry],
    decode: DecodeConfig = DecodeConfig(),
    out_path: Optional[Union[str, Path]] = None,
    target_occurrence: TargetOccurrence = "context",
    workers: int = 1,
    progress: bool = False,
) -> MetricReport:
    """Decode every entry and compute BLEU and NIST against its definition.

    Args:
        model (Seq2SeqModel): Trained model.
        vocab (Vocab): Vocabulary of the model.
        entries (Sequence[Entry]): Split to evaluate.
        decode (DecodeConfig, optional): Decoding settings.
        out_path (Optional[Union[str, Path]], optional): Per-sample TSV output.
        target_occurrence (TargetOccurrence, optional): Prompt convention.
        workers (int, optional): Decoding threads. Defaults to 1.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Raises:
        PydefgenEmptyHypothesisSet: ``entries`` is empty.

    Returns:
        MetricReport: Scores of the split.
    """
    generations = generate_all(
        model, vocab, entries, decode, target_occurrence, workers, progress
    )
    report = score_corpus(
        [generation.tokens for generation in generations],
        [entry.definition_tokens for entry in entries],
        truncation_count(generations),
    )
    if out_path is not None:
        write_generations(out_path, entries, generations, report.sentence_bleu)
        LOGGER.info("Wrote %d generations to %s", len(generations), out_path)
    if report.truncated:
        LOGGER.warning(
            "%d of %d decodes hit the length limit", report.truncated, report.count
        )
    return report
