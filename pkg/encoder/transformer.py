"""Post-layer-norm Transformer encoder with classification, tagging and MLM decoders"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np

from autodiff import losses, ops
from autodiff.tensor import Tensor
from encoder.params import ModelParams
from models.config import EncoderConfig, TaskKind
from tasks.dataset import Batch
from utils.errors import ConfigurationError, InputError, NumericalError
from utils.validators import validate_mask, validate_token_ids

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DropoutMode:
    """Dropout either off or driven by a mask seed"""
    mask_seed: Optional[int] = None

    @classmethod
    def disabled(cls) -> "DropoutMode":
        return cls(None)

    @classmethod
    def seeded(cls, mask_seed: int) -> "DropoutMode":
        return cls(int(mask_seed))

    @property
    def enabled(self) -> bool:
        return self.mask_seed is not None


@dataclass
class EncodeOutput:
    final_hidden: Tensor
    # embedding output followed by every layer's output
    hidden_states: List[Tensor] = field(default_factory=list)
    # per layer: batch x heads x seq x seq
    attentions: List[Tensor] = field(default_factory=list)
    attention_mask: Optional[np.ndarray] = None


class TaskOutput(NamedTuple):
    loss: Tensor
    logits: Tensor
    correct: int
    total: int


class MiniTransformer:
    def __init__(self, config: EncoderConfig):
        self.config = config
        # instrumentation: encoder passes run by this instance
        self.forward_calls = 0

    def embed(self, token_ids: np.ndarray, params: ModelParams) -> Tensor:
        """Token plus position embeddings; the point where a perturbation attaches"""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 2:
            raise InputError(f"token ids must be batch x seq, got shape {token_ids.shape}")
        seq_len = token_ids.shape[1]
        if seq_len > self.config.max_seq_len:
            raise ConfigurationError(f"sequence length {seq_len} exceeds max_seq_len {self.config.max_seq_len}")
        validate_token_ids(token_ids, self.config.vocab_size)
        tokens = ops.embedding(params["embeddings.token"], token_ids)
        positions = ops.getitem(params["embeddings.position"], slice(0, seq_len))
        return ops.add(tokens, positions)

    def encode(
        self,
        x: Tensor,
        mask: np.ndarray,
        params: ModelParams,
        dropout: DropoutMode = DropoutMode.disabled(),
    ) -> EncodeOutput:
        mask = np.asarray(mask, dtype=bool)
        if x.ndim != 3 or x.shape[-1] != self.config.hidden_size or mask.shape != x.shape[:2]:
            raise ConfigurationError(
                f"encode: input {x.shape} and mask {mask.shape} do not match hidden size {self.config.hidden_size}"
            )
        validate_mask(mask)
        rng = np.random.default_rng(dropout.mask_seed) if dropout.enabled and self.config.dropout_rate > 0 else None
        # keys at padding positions are filled before the softmax
        key_padding = ~mask[:, None, None, :]

        hidden = x
        output = EncodeOutput(final_hidden=x, hidden_states=[x], attentions=[], attention_mask=mask)
        for layer in range(self.config.num_layers):
            hidden, probs = self._layer(layer, hidden, key_padding, params, rng)
            if not np.isfinite(hidden.data).all():
                raise NumericalError(f"non-finite activation in encoder layer {layer}")
            output.hidden_states.append(hidden)
            output.attentions.append(probs)
        output.final_hidden = hidden
        self.forward_calls += 1
        return output

    def _dropout(self, t: Tensor, rng: Optional[np.random.Generator]) -> Tensor:
        if rng is None:
            return t
        keep = 1.0 - self.config.dropout_rate
        mask = (rng.random(t.shape) < keep) / keep
        return ops.mul(t, Tensor(mask))

    def _linear(self, h: Tensor, params: ModelParams, name: str) -> Tensor:
        return ops.add(ops.matmul(h, params[f"{name}.weight"]), params[f"{name}.bias"])

    def _split_heads(self, t: Tensor, batch: int, seq: int) -> Tensor:
        t = ops.reshape(t, (batch, seq, self.config.num_heads, self.config.head_size))
        return ops.transpose(t, (0, 2, 1, 3))

    def _layer(self, index: int, hidden: Tensor, key_padding: np.ndarray, params: ModelParams, rng):
        batch, seq, width = hidden.shape
        prefix = f"layers.{index}"
        query = self._split_heads(self._linear(hidden, params, f"{prefix}.attention.query"), batch, seq)
        key = self._split_heads(self._linear(hidden, params, f"{prefix}.attention.key"), batch, seq)
        value = self._split_heads(self._linear(hidden, params, f"{prefix}.attention.value"), batch, seq)

        scores = ops.scale(ops.matmul(query, ops.transpose(key, (0, 1, 3, 2))), 1.0 / math.sqrt(self.config.head_size))
        probs = ops.softmax(ops.masked_fill(scores, key_padding), axis=-1)
        context = ops.matmul(self._dropout(probs, rng), value)
        context = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, seq, width))

        attended = self._dropout(self._linear(context, params, f"{prefix}.attention.output"), rng)
        hidden = ops.layer_norm(
            ops.add(hidden, attended),
            params[f"{prefix}.attention_norm.gain"],
            params[f"{prefix}.attention_norm.bias"],
        )
        inner = ops.gelu(self._linear(hidden, params, f"{prefix}.ffn.intermediate"))
        fed = self._dropout(self._linear(inner, params, f"{prefix}.ffn.output"), rng)
        hidden = ops.layer_norm(
            ops.add(hidden, fed),
            params[f"{prefix}.ffn_norm.gain"],
            params[f"{prefix}.ffn_norm.bias"],
        )
        return hidden, probs

    def classify(self, output: EncodeOutput, params: ModelParams) -> Tensor:
        """First-token pooling through a linear layer -> batch x classes"""
        pooled = ops.getitem(output.final_hidden, (slice(None), 0))
        return self._linear(pooled, params, "classifier")

    def tag(self, output: EncodeOutput, params: ModelParams) -> Tensor:
        """Per-token logits -> batch x seq x tags"""
        return self._linear(output.final_hidden, params, "tagger")

    def mlm_head(self, output: EncodeOutput, masked_positions: np.ndarray, params: ModelParams) -> Tensor:
        """Vocabulary logits at (example, position) pairs -> masked x vocab"""
        masked_positions = np.asarray(masked_positions, dtype=np.int64).reshape(-1, 2)
        if masked_positions.shape[0] == 0:
            raise InputError("mlm_head needs at least one masked position")
        rows, cols = masked_positions[:, 0], masked_positions[:, 1]
        mask = output.attention_mask
        if (
            rows.min() < 0 or rows.max() >= mask.shape[0]
            or cols.min() < 0 or cols.max() >= mask.shape[1]
            or not mask[rows, cols].all()
        ):
            raise InputError("masked positions must address real tokens")
        hidden = ops.getitem(output.final_hidden, (rows, cols))
        return self._linear(hidden, params, "mlm_head")

    def task_output(self, output: EncodeOutput, batch: Batch, params: ModelParams) -> TaskOutput:
        """Decoder logits, mean cross-entropy and accuracy counts for the batch's task"""
        if batch.kind == TaskKind.SEQUENCE_CLASSIFICATION:
            logits = self.classify(output, params)
            labels = batch.labels
        elif batch.kind == TaskKind.TOKEN_CLASSIFICATION:
            positions = batch.real_positions()
            logits = ops.getitem(self.tag(output, params), (positions[:, 0], positions[:, 1]))
            labels = batch.tags[positions[:, 0], positions[:, 1]]
        else:
            positions = batch.masked_positions()
            logits = self.mlm_head(output, positions, params)
            labels = batch.targets[positions[:, 0], positions[:, 1]]
        loss = ops.reduce_mean(losses.cross_entropy(logits, labels))
        correct = int((logits.data.argmax(axis=-1) == labels).sum())
        return TaskOutput(loss, logits, correct, int(labels.size))
