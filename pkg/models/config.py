from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class StrictModel(BaseModel):
    # unknown fields are typos, not extensions
    model_config = ConfigDict(extra="forbid")


class AttackMode(str, Enum):
    AT = "AT"
    CREAT = "CreAT"
    CREAT_MINUS = "CreAT_minus"
    RPT = "RPT"
    NONE = "none"


class SimilarityAggregation(str, Enum):
    """How per-token cosines become one similarity inside the CreAT objectives"""
    MEAN = "mean"
    MIN = "min"
    FLATTENED = "flattened"


class TaskKind(str, Enum):
    SEQUENCE_CLASSIFICATION = "sequence_classification"
    TOKEN_CLASSIFICATION = "token_classification"
    TOY_MLM = "toy_mlm"


class EncoderConfig(StrictModel):
    num_layers: int = Field(default=2, ge=0, description="Number of transformer layers (0 = identity encoder)")
    hidden_size: int = Field(default=32, gt=0, description="Model width d")
    num_heads: int = Field(default=4, gt=0, description="Attention heads per layer")
    intermediate_size: int = Field(default=64, gt=0, description="Feed-forward inner width")
    vocab_size: int = Field(default=64, gt=3, description="Vocabulary size including reserved ids")
    max_seq_len: int = Field(default=32, gt=0, description="Number of learned positions")
    dropout_rate: float = Field(default=0.1, ge=0, lt=1, description="Dropout probability")

    @model_validator(mode="after")
    def validate_heads(self):
        if self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        return self

    @property
    def head_size(self) -> int:
        return self.hidden_size // self.num_heads


class AttackConfig(StrictModel):
    mode: AttackMode = Field(default=AttackMode.NONE, description="Attack objective")
    ascent_step_size: float = Field(default=1e-1, gt=0, description="PGD step length alpha")
    decision_boundary: float = Field(default=1e-1, gt=0, description="Frobenius radius epsilon")
    ascent_steps: int = Field(default=1, ge=0, description="Number of PGD steps k")
    temperature: float = Field(default=1.0, description="Weight tau of the representation term")
    similarity_aggregation: SimilarityAggregation = Field(
        default=SimilarityAggregation.MEAN, description="Token aggregation of the representation term"
    )

    @model_validator(mode="after")
    def validate_temperature(self):
        if self.mode == AttackMode.CREAT and self.temperature < 0:
            raise ValueError("temperature must be non-negative for CreAT")
        return self

    @property
    def effective_steps(self) -> int:
        """Random perturbation and no-attack modes never ascend"""
        if self.mode in (AttackMode.RPT, AttackMode.NONE):
            return 0
        return self.ascent_steps


class TaskSpec(StrictModel):
    kind: TaskKind = Field(default=TaskKind.SEQUENCE_CLASSIFICATION)
    vocab_size: int = Field(default=64, gt=3)
    seq_len: int = Field(default=16, gt=1, description="Padded sequence length")
    min_seq_len: Optional[int] = Field(default=None, gt=1, description="Shortest real length (defaults to seq_len)")
    num_classes: int = Field(default=2, ge=2)
    num_train: int = Field(default=8192, gt=0)
    num_eval: int = Field(default=256, gt=0)
    generator_seed: int = Field(default=0, ge=0)
    motif_length: int = Field(default=4, gt=1, description="Tokens in each planted motif")
    noise_rate: float = Field(default=0.0, ge=0, lt=0.5, description="Label-flip probability")
    mask_rate: float = Field(default=0.15, gt=0, lt=1, description="Masked fraction for toy MLM")
    markov_concentration: float = Field(default=0.1, gt=0, description="Dirichlet concentration of the Markov chain")

    @model_validator(mode="after")
    def validate_lengths(self):
        if self.min_seq_len is not None and self.min_seq_len > self.seq_len:
            raise ValueError(f"min_seq_len {self.min_seq_len} exceeds seq_len {self.seq_len}")
        return self

    @property
    def shortest(self) -> int:
        return self.seq_len if self.min_seq_len is None else self.min_seq_len


class TrainConfig(StrictModel):
    learning_rate: float = Field(default=1e-3, gt=0, description="Model step size beta")
    mix_lambda: float = Field(default=0.5, ge=0, le=1, description="Weight of the benign loss")
    batch_size: int = Field(default=32, gt=0)
    max_steps: int = Field(default=2000, gt=0)
    warmup_proportion: float = Field(default=0.06, ge=0, lt=1)
    weight_decay: float = Field(default=0.01, ge=0)
    gradient_clip: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)
    share_dropout_mask: bool = Field(default=False, description="Reuse the benign dropout mask adversarially")
    log_every: int = Field(default=100, gt=0)
    init_checkpoint: Optional[str] = Field(default=None, description="Encoder weights to start from")
    eval_attack: Optional[AttackConfig] = Field(default=None, description="Attack used for robust evaluation")
    attack: AttackConfig = Field(default_factory=AttackConfig)
    task: TaskSpec = Field(default_factory=TaskSpec)


class ExperimentConfig(StrictModel):
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output_dir: str = Field(default="runs")
    seeds: List[int] = Field(default_factory=lambda: [0])
    modes: List[AttackMode] = Field(default_factory=list, description="Modes compared by a grid or probe")

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("seed list must not be empty")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        return v

    @field_validator("modes")
    @classmethod
    def validate_modes(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("modes must be distinct")
        return v

    @model_validator(mode="after")
    def validate_vocab(self):
        if self.train.task.vocab_size != self.encoder.vocab_size:
            raise ValueError(
                f"task vocab_size {self.train.task.vocab_size} differs from encoder vocab_size {self.encoder.vocab_size}"
            )
        if self.train.task.seq_len > self.encoder.max_seq_len:
            raise ValueError(
                f"task seq_len {self.train.task.seq_len} exceeds encoder max_seq_len {self.encoder.max_seq_len}"
            )
        return self
