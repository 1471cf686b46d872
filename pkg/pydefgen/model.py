"""Pre-norm encoder-decoder transformer on top of :mod:`pydefgen.numerics`."""
from dataclasses import asdict, dataclass
import math
from typing import Any, Optional

import numpy as np

from .const import LOGGER, MASK_BIAS
from .exceptions import (
    PydefgenEmptyTarget,
    PydefgenInputError,
    PydefgenInvalidConfig,
    PydefgenSequenceTooLong,
)
from .numerics import (
    Tensor,
    embedding,
    gelu,
    index,
    layer_norm,
    matmul,
    reshape,
    softmax_rows,
    transpose,
)
from .seeding import make_rng
from .types import BoolArray, FloatArray, IdArray, JsonObject

Params = dict[str, Tensor]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Args:
        vocab_size (int): Vocabulary size, specials included.
        encoder_layers (int): Encoder blocks. Defaults to 2.
        decoder_layers (int): Decoder blocks. Defaults to 2.
        d_model (int): Hidden width. Defaults to 64.
        n_heads (int): Attention heads, must divide ``d_model``. Defaults to 4.
        d_ff (int): Feed-forward width. Defaults to 128.
        max_len (int): Longest encoder or decoder sequence. Defaults to 128.
        dropout (float): Dropout on attention weights and FFN outputs.
            Defaults to 0.1.
        tie_embeddings (bool): Reuse the token embedding as the LM head.
            Defaults to True.
    """

    vocab_size: int
    encoder_layers: int = 2
    decoder_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    max_len: int = 128
    dropout: float = 0.1
    tie_embeddings: bool = True

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise PydefgenInvalidConfig(
                f"vocab_size must be >= 1, got {self.vocab_size}"
            )
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise PydefgenInvalidConfig(
                "encoder_layers and decoder_layers must be >= 1"
            )
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise PydefgenInvalidConfig(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}"
            )
        if self.d_ff < 1 or self.max_len < 1:
            raise PydefgenInvalidConfig("d_ff and max_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise PydefgenInvalidConfig(
                f"dropout must be in [0, 1), got {self.dropout}"
            )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> JsonObject:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: JsonObject) -> "ModelConfig":
        try:
            return cls(**data)
        except TypeError as exception:
            raise PydefgenInvalidConfig(
                f"Invalid model config: {exception}"
            ) from exception


def sinusoidal_positions(max_len: int, d_model: int) -> FloatArray:
    """Fixed sine/cosine position table ``[max_len, d_model]``."""
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    rates = np.power(10000.0, -np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((max_len, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return table


def init_params(config: ModelConfig, seed: int = 0) -> Params:
    """Randomly initialise every weight.

    Matrices are drawn from ``N(0, 1/fan_in)``; the token embedding from
    ``N(0, 1/d_model)``; norm gains start at one and biases at zero.

    Args:
        config (ModelConfig): Architecture.
        seed (int, optional): Run seed. Defaults to 0.

    Returns:
        Params: Leaf tensors keyed by dotted name.
    """
    rng = make_rng(seed, "init")
    d, ff = config.d_model, config.d_ff
    params: Params = {}

    def matrix(name: str, rows: int, cols: int) -> None:
        params[name] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(rows), (rows, cols)))

    def norm(name: str) -> None:
        params[f"{name}.gain"] = Tensor(np.ones(d))
        params[f"{name}.bias"] = Tensor(np.zeros(d))

    def attention(name: str) -> None:
        for part in ("query", "key", "value", "out"):
            matrix(f"{name}.{part}", d, d)

    def feed_forward(name: str) -> None:
        matrix(f"{name}.w_in", d, ff)
        params[f"{name}.b_in"] = Tensor(np.zeros(ff))
        matrix(f"{name}.w_out", ff, d)
        params[f"{name}.b_out"] = Tensor(np.zeros(d))

    params["embedding"] = Tensor(
        rng.normal(0.0, 1.0 / math.sqrt(d), (config.vocab_size, d))
    )
    for layer in range(config.encoder_layers):
        prefix = f"encoder.{layer}"
        norm(f"{prefix}.self_norm")
        attention(f"{prefix}.self_attn")
        norm(f"{prefix}.ffn_norm")
        feed_forward(f"{prefix}.ffn")
    norm("encoder.final_norm")
    for layer in range(config.decoder_layers):
        prefix = f"decoder.{layer}"
        norm(f"{prefix}.self_norm")
        attention(f"{prefix}.self_attn")
        norm(f"{prefix}.cross_norm")
        attention(f"{prefix}.cross_attn")
        norm(f"{prefix}.ffn_norm")
        feed_forward(f"{prefix}.ffn")
    norm("decoder.final_norm")
    if not config.tie_embeddings:
        matrix("lm_head", d, config.vocab_size)

    for name, tensor in params.items():
        tensor.requires_grad = True
        tensor.name = name
    return params


@dataclass
class ModelOutputs:
    """Encoder states ``H``, decoder states ``G`` and the logits of one batch."""

    encoder_states: Tensor
    decoder_states: Tensor
    logits: Tensor


def padding_bias(valid: BoolArray, query_len: int) -> FloatArray:
    """Additive bias ``[N, 1, Tq, Tk]`` masking invalid keys."""
    bias = np.where(valid, 0.0, MASK_BIAS)[:, None, None, :]
    return np.broadcast_to(bias, (valid.shape[0], 1, query_len, valid.shape[1]))


def causal_bias(length: int) -> FloatArray:
    """Additive bias ``[1, 1, T, T]`` masking future keys."""
    future = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.where(future, MASK_BIAS, 0.0)[None, None, :, :]


class Seq2SeqModel:
    """Encoder-decoder network with a tied (or separate) LM head.

    The encoder reads the spliced prompt; the decoder reads the definition under
    teacher forcing with causal self-attention and cross-attention over the
    encoder output. Dropout is active only while :attr:`training` is set.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: Optional[Params] = None,
        seed: int = 0,
    ):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)
        self.positions = sinusoidal_positions(config.max_len, config.d_model)
        self.rng = make_rng(seed, "dropout")
        self.training = False
        LOGGER.debug("Model with %d parameters", self.parameter_count())

    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self.params.values())

    def train(self) -> "Seq2SeqModel":
        self.training = True
        return self

    def eval(self) -> "Seq2SeqModel":
        self.training = False
        return self

    def reseed_dropout(self, seed: int, *labels: Any) -> None:
        """Restart the dropout stream from a derived seed."""
        self.rng = make_rng(seed, "dropout", *labels)

    def _dropout(self, x: Tensor) -> Tensor:
        rate = self.config.dropout
        if not self.training or rate == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= rate) / (1.0 - rate)
        return x * Tensor(keep)

    def _norm(self, name: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{name}.gain"], self.params[f"{name}.bias"])

    def _embed(self, ids: IdArray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[1] > self.config.max_len:
            raise PydefgenSequenceTooLong(
                f"Sequence of length {ids.shape[1]} "
                f"exceeds max_len {self.config.max_len}"
            )
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise PydefgenInputError(f"Token id outside [0, {self.config.vocab_size})")
        scale = math.sqrt(self.config.d_model)
        return embedding(self.params["embedding"], ids) * scale + Tensor(
            self.positions[: ids.shape[1]]
        )

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        heads = reshape(x, (batch, length, self.config.n_heads, self.config.head_dim))
        return transpose(heads, (0, 2, 1, 3))

    def _attention(
        self, name: str, queries: Tensor, keys: Tensor, bias: FloatArray
    ) -> Tensor:
        p = self.params
        q = self._split_heads(matmul(queries, p[f"{name}.query"]))
        k = self._split_heads(matmul(keys, p[f"{name}.key"]))
        v = self._split_heads(matmul(keys, p[f"{name}.value"]))
        scale = 1.0 / math.sqrt(self.config.head_dim)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * scale
        weights = self._dropout(softmax_rows(scores + Tensor(bias)))
        context = transpose(matmul(weights, v), (0, 2, 1, 3))
        batch, length = queries.shape[0], queries.shape[1]
        merged = reshape(context, (batch, length, self.config.d_model))
        return matmul(merged, p[f"{name}.out"])

    def _feed_forward(self, name: str, x: Tensor) -> Tensor:
        p = self.params
        hidden = gelu(matmul(x, p[f"{name}.w_in"]) + p[f"{name}.b_in"])
        return self._dropout(matmul(hidden, p[f"{name}.w_out"]) + p[f"{name}.b_out"])

    def encode(self, encoder_ids: IdArray, encoder_pad_mask: BoolArray) -> Tensor:
        """Encoder states ``H`` of shape ``[N, S, d_model]``.

        Args:
            encoder_ids (IdArray): ``[N, S]`` prompt ids.
            encoder_pad_mask (BoolArray): ``[N, S]``, True at real tokens.

        Raises:
            PydefgenSequenceTooLong: ``S`` exceeds ``max_len``.

        Returns:
            Tensor: Output of the last encoder block after the final norm.
        """
        x = self._embed(encoder_ids)
        bias = padding_bias(np.asarray(encoder_pad_mask, dtype=bool), x.shape[1])
        for layer in range(self.config.encoder_layers):
            prefix = f"encoder.{layer}"
            normed = self._norm(f"{prefix}.self_norm", x)
            x = x + self._attention(f"{prefix}.self_attn", normed, normed, bias)
            normed = self._norm(f"{prefix}.ffn_norm", x)
            x = x + self._feed_forward(f"{prefix}.ffn", normed)
        return self._norm("encoder.final_norm", x)

    def extract_target(
        self, encoder_states: Tensor, target_mask: BoolArray
    ) -> list[Tensor]:
        """Rows of ``H`` flagged by ``target_mask``, one ``[r_i, d]`` matrix per sample.

        Raises:
            PydefgenEmptyTarget: A sample has no flagged position.
        """
        mask = np.asarray(target_mask, dtype=bool)
        rows = []
        for sample in range(mask.shape[0]):
            positions = np.flatnonzero(mask[sample])
            if positions.size == 0:
                raise PydefgenEmptyTarget(f"Sample {sample} has no target position")
            rows.append(index(encoder_states, (sample, positions)))
        return rows

    def decode_teacher_forced(
        self,
        encoder_states: Tensor,
        encoder_pad_mask: BoolArray,
        decoder_in: IdArray,
        decoder_pad_mask: BoolArray,
    ) -> Tensor:
        """Decoder states ``G`` of shape ``[N, T, d_model]``.

        Position ``t`` sees ``decoder_in[:, :t + 1]`` and the unmasked encoder
        states only.

        Raises:
            PydefgenSequenceTooLong: ``T`` exceeds ``max_len``.
        """
        y = self._embed(decoder_in)
        length = y.shape[1]
        self_bias = causal_bias(length) + padding_bias(
            np.asarray(decoder_pad_mask, dtype=bool), length
        )
        cross_bias = padding_bias(np.asarray(encoder_pad_mask, dtype=bool), length)
        for layer in range(self.config.decoder_layers):
            prefix = f"decoder.{layer}"
            normed = self._norm(f"{prefix}.self_norm", y)
            y = y + self._attention(f"{prefix}.self_attn", normed, normed, self_bias)
            normed = self._norm(f"{prefix}.cross_norm", y)
            y = y + self._attention(
                f"{prefix}.cross_attn", normed, encoder_states, cross_bias
            )
            normed = self._norm(f"{prefix}.ffn_norm", y)
            y = y + self._feed_forward(f"{prefix}.ffn", normed)
        return self._norm("decoder.final_norm", y)

    def lm_head(self, decoder_states: Tensor) -> Tensor:
        """Raw logits ``[N, T, |V|]``; softmax is left to losses and decoding."""
        if self.config.tie_embeddings:
            return matmul(decoder_states, self.params["embedding"].T)
        return matmul(decoder_states, self.params["lm_head"])

    def forward(
        self,
        encoder_ids: IdArray,
        encoder_pad_mask: BoolArray,
        decoder_in: IdArray,
        decoder_pad_mask: BoolArray,
    ) -> ModelOutputs:
        """Encode, decode under teacher forcing and project to logits."""
        encoder_states = self.encode(encoder_ids, encoder_pad_mask)
        decoder_states = self.decode_teacher_forced(
            encoder_states, encoder_pad_mask, decoder_in, decoder_pad_mask
        )
        logits = self.lm_head(decoder_states)
        return ModelOutputs(encoder_states, decoder_states, logits)

    def snapshot(self) -> dict[str, FloatArray]:
        """Copy of every parameter array."""
        return {name: tensor.values.copy() for name, tensor in self.params.items()}

    def load_snapshot(self, arrays: dict[str, FloatArray]) -> None:
        """Overwrite parameters in place from :meth:`snapshot` output."""
        for name, tensor in self.params.items():
            tensor.values[...] = arrays[name]
