"""Parameter containers and seeded initialization for the encoder and its decoders"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

import numpy as np

from autodiff.tensor import Tensor
from models.config import EncoderConfig, TaskKind, TaskSpec
from utils.seeding import DECODER_INIT, PARAM_INIT, make_rng

INIT_STD = 0.02

DECODER_PREFIX = {
    TaskKind.SEQUENCE_CLASSIFICATION: "classifier",
    TaskKind.TOKEN_CLASSIFICATION: "tagger",
    TaskKind.TOY_MLM: "mlm_head",
}


def decoder_outputs(task: TaskSpec) -> int:
    """Width of the decoder for a task"""
    if task.kind == TaskKind.SEQUENCE_CLASSIFICATION:
        return task.num_classes
    if task.kind == TaskKind.TOKEN_CLASSIFICATION:
        # tag 0 marks tokens outside any motif
        return task.num_classes + 1
    return task.vocab_size


def encoder_shapes(config: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    d, inner = config.hidden_size, config.intermediate_size
    shapes = {
        "embeddings.token": (config.vocab_size, d),
        "embeddings.position": (config.max_seq_len, d),
    }
    for i in range(config.num_layers):
        prefix = f"layers.{i}"
        for proj in ("query", "key", "value", "output"):
            shapes[f"{prefix}.attention.{proj}.weight"] = (d, d)
            shapes[f"{prefix}.attention.{proj}.bias"] = (d,)
        shapes[f"{prefix}.attention_norm.gain"] = (d,)
        shapes[f"{prefix}.attention_norm.bias"] = (d,)
        shapes[f"{prefix}.ffn.intermediate.weight"] = (d, inner)
        shapes[f"{prefix}.ffn.intermediate.bias"] = (inner,)
        shapes[f"{prefix}.ffn.output.weight"] = (inner, d)
        shapes[f"{prefix}.ffn.output.bias"] = (d,)
        shapes[f"{prefix}.ffn_norm.gain"] = (d,)
        shapes[f"{prefix}.ffn_norm.bias"] = (d,)
    return shapes


def decoder_shapes(config: EncoderConfig, kind: TaskKind, num_outputs: int) -> Dict[str, Tuple[int, ...]]:
    prefix = DECODER_PREFIX[kind]
    return {
        f"{prefix}.weight": (config.hidden_size, num_outputs),
        f"{prefix}.bias": (num_outputs,),
    }


def _init_tensor(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> Tensor:
    if name.endswith(".gain"):
        data = np.ones(shape)
    elif name.endswith(".bias"):
        data = np.zeros(shape)
    else:
        data = rng.normal(0.0, INIT_STD, size=shape)
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class ModelParams:
    """All learnable tensors: encoder theta plus one task decoder"""
    config: EncoderConfig
    decoder_kind: TaskKind
    num_outputs: int
    encoder: Dict[str, Tensor] = field(default_factory=dict)
    decoder: Dict[str, Tensor] = field(default_factory=dict)

    def named(self) -> Dict[str, Tensor]:
        return {**self.encoder, **self.decoder}

    def __getitem__(self, name: str) -> Tensor:
        if name in self.encoder:
            return self.encoder[name]
        return self.decoder[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.named().values())

    def tensors(self) -> List[Tensor]:
        return list(self)

    @property
    def decoder_prefix(self) -> str:
        return DECODER_PREFIX[self.decoder_kind]

    def zero_grad(self):
        for tensor in self:
            tensor.zero_grad()

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {
            **encoder_shapes(self.config),
            **decoder_shapes(self.config, self.decoder_kind, self.num_outputs),
        }

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self)


def init_params(config: EncoderConfig, seed: int, task: TaskSpec) -> ModelParams:
    """Seeded N(0, 0.02) weights, zero biases, unit layer-norm gains"""
    rng = make_rng(seed, PARAM_INIT)
    encoder = {name: _init_tensor(name, shape, rng) for name, shape in encoder_shapes(config).items()}
    params = ModelParams(config, task.kind, decoder_outputs(task), encoder=encoder)
    return reinit_decoder(params, seed, task)


def reinit_decoder(params: ModelParams, seed: int, task: TaskSpec) -> ModelParams:
    """Fresh decoder for `task`; encoder tensors are left untouched"""
    rng = make_rng(seed, DECODER_INIT)
    kind, width = task.kind, decoder_outputs(task)
    params.decoder_kind = kind
    params.num_outputs = width
    params.decoder = {
        name: _init_tensor(name, shape, rng)
        for name, shape in decoder_shapes(params.config, kind, width).items()
    }
    return params
