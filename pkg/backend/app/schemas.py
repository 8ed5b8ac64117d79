from pydantic import BaseModel, Field, model_validator
from typing import Dict, List, Literal, Optional

from app.config import settings


# Context windows
class WindowConfig(BaseModel):
    window_size: int = Field(default_factory=lambda: settings.window_size, ge=2)
    right_context: int = Field(default_factory=lambda: settings.right_context, ge=0)


# Multilingual mixing
class DatasetSize(BaseModel):
    corpus_id: str = Field(..., min_length=1)
    size: int = Field(..., ge=1)


class MixSpec(BaseModel):
    datasets: List[DatasetSize]
    strategy: Literal["logarithmic", "uniform", "linear", "half_focus"] = "logarithmic"
    target: Optional[str] = None  # only for half_focus
    use_corpus_id: bool = False
    exclude: List[str] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _check_target(self) -> "MixSpec":
        if self.strategy == "half_focus":
            ids = {d.corpus_id for d in self.datasets}
            if self.target is None or self.target not in ids:
                raise ValueError(f"half_focus target {self.target!r} is not one of the datasets")
        return self


class SampleRatios(BaseModel):
    weights: Dict[str, float]
    probabilities: Dict[str, float]


# Synthetic corpora
class SynthSpec(BaseModel):
    documents: int = Field(20, ge=1)
    sentences_per_doc: int = Field(8, ge=1)
    min_sentence_length: int = Field(4, ge=1)
    max_sentence_length: int = Field(12, ge=1)
    vocab_size: int = Field(200, ge=1)
    max_depth: int = Field(3, ge=1)
    crossing_prob: float = Field(0.1, ge=0.0, le=1.0)
    empty_node_prob: float = Field(0.1, ge=0.0, le=1.0)
    min_entities: int = Field(2, ge=0)
    max_entities: int = Field(5, ge=0)
    corpus_id: str = "synth"
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self) -> "SynthSpec":
        if self.max_sentence_length < self.min_sentence_length:
            raise ValueError("max_sentence_length must be >= min_sentence_length")
        if self.max_entities < self.min_entities:
            raise ValueError("max_entities must be >= min_entities")
        return self


# Training
class TrainConfig(BaseModel):
    # Optimization
    batch_size: int = Field(8, ge=1)
    peak_lr: float = Field(2e-5, gt=0)
    warmup_fraction: float = Field(0.1, gt=0, lt=1)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epochs: int = Field(10, ge=1)
    batches_per_epoch: int = Field(100, ge=1)
    lazy_adam: bool = False
    seed: int = 0

    # Joint loss
    detection_weight: float = Field(1.0, ge=0)
    linking_weight: float = Field(1.0, ge=0)
    at_most_k_links: Optional[int] = Field(None, ge=1)
    linking_loss: Literal["uniform", "marginal"] = "uniform"
    scale_attention: bool = False
    learn_transitions: bool = True

    # Encoder
    dim: int = Field(64, ge=2)
    layers: int = Field(2, ge=0)
    attention_heads: int = Field(4, ge=1)
    dropout: float = Field(0.1, ge=0, lt=1)
    min_count: int = Field(1, ge=1)
    dtype: Literal["float32", "float64"] = "float32"

    # Data
    window_size: int = Field(default_factory=lambda: settings.window_size, ge=2)
    right_context: int = Field(default_factory=lambda: settings.right_context, ge=0)
    mixing: Literal["logarithmic", "uniform", "linear", "half_focus"] = "logarithmic"
    half_focus_target: Optional[str] = None
    use_corpus_id: bool = False
    exclude: List[str] = Field(default_factory=list)

    # Evaluation and prediction
    with_singletons: bool = False
    reduce_to_heads: bool = True

    @model_validator(mode="after")
    def _check_heads(self) -> "TrainConfig":
        if self.dim % self.attention_heads:
            raise ValueError(f"dim {self.dim} is not divisible by attention_heads {self.attention_heads}")
        return self

    def window_config(self) -> WindowConfig:
        return WindowConfig(window_size=self.window_size, right_context=self.right_context)


# Scoring
class MetricScore(BaseModel):
    precision: float = Field(..., ge=0, le=100)
    recall: float = Field(..., ge=0, le=100)
    f1: float = Field(..., ge=0, le=100)


class ScoreReport(BaseModel):
    muc: MetricScore
    b3: MetricScore
    ceafe: MetricScore
    conll: float = Field(..., ge=0, le=100)
    with_singletons: bool
    empty_key: bool = False
    documents: int = 0


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    dev_conll: Dict[str, float] = Field(default_factory=dict)
    dev_macro: Optional[float] = None
