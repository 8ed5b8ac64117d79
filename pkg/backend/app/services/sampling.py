import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Generic, Iterator, Mapping, Optional, Sequence, TypeVar

import numpy as np
import yaml
from pydantic import ValidationError

from app.errors import ConfigurationError, SamplingError
from app.schemas import MixSpec, SampleRatios

logger = logging.getLogger(__name__)

T = TypeVar("T")


def corpus_token(corpus_id: str) -> str:
    return f"<corpus:{corpus_id}>"


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def logarithmic_weights(sizes: Mapping[str, int]) -> Dict[str, float]:
    """Log sizes interpolated linearly onto [1, 5], rounded half up."""
    logs = {k: math.log(n) for k, n in sizes.items()}
    low, high = min(logs.values()), max(logs.values())
    if high == low:
        return {k: 1.0 for k in sizes}
    return {k: float(round_half_up(1 + 4 * (v - low) / (high - low))) for k, v in logs.items()}


def _normalize(weights: Mapping[str, float]) -> Dict[str, float]:
    total = sum(weights.values())
    return {k: w / total for k, w in weights.items()}


def compute_ratios(spec: MixSpec) -> SampleRatios:
    excluded = set(spec.exclude)
    sizes = {d.corpus_id: d.size for d in spec.datasets if d.corpus_id not in excluded}
    if not sizes:
        raise SamplingError(f"every dataset is excluded ({sorted(excluded)})")

    if spec.strategy == "logarithmic":
        weights = logarithmic_weights(sizes)
        probabilities = _normalize(weights)
    elif spec.strategy == "uniform":
        weights = {k: 1.0 for k in sizes}
        probabilities = _normalize(weights)
    elif spec.strategy == "linear":
        weights = {k: float(n) for k, n in sizes.items()}
        probabilities = _normalize(weights)
    else:
        if spec.target not in sizes:
            raise SamplingError(f"half_focus target {spec.target!r} is excluded")
        rest = {k: n for k, n in sizes.items() if k != spec.target}
        if not rest:
            logger.warning(f"half_focus target {spec.target!r} is the only dataset; sampling it exclusively")
            probabilities = {spec.target: 1.0}
        else:
            probabilities = {spec.target: 0.5}
            probabilities.update({k: 0.5 * p for k, p in _normalize(logarithmic_weights(rest)).items()})
        weights = dict(probabilities)

    logger.info(f"Sampling ratios ({spec.strategy}): {weights}")
    return SampleRatios(weights=weights, probabilities=probabilities)


@dataclass(frozen=True)
class Sample(Generic[T]):
    corpus_id: str
    example: T
    # reserved token prepended to the model input when corpus ids are used
    corpus_token: Optional[str] = None


def sample_stream(spec: MixSpec, pools: Mapping[str, Sequence[T]]) -> Iterator[Sample[T]]:
    """Endless seeded stream: pick a dataset by ratio, then an example uniformly inside it."""
    ratios = compute_ratios(spec)
    ids = list(ratios.probabilities)
    for corpus_id in ids:
        if not pools.get(corpus_id):
            raise SamplingError(f"no examples for dataset {corpus_id!r}")
    probabilities = np.array([ratios.probabilities[k] for k in ids])
    probabilities = probabilities / probabilities.sum()
    rng = np.random.default_rng(spec.seed)
    while True:
        corpus_id = ids[int(rng.choice(len(ids), p=probabilities))] if len(ids) > 1 else ids[0]
        pool = pools[corpus_id]
        example = pool[int(rng.integers(len(pool)))]
        yield Sample(corpus_id, example, corpus_token(corpus_id) if spec.use_corpus_id else None)


def _datasets_from_config(raw: Any):
    # validated together with the rest of the MixSpec
    if isinstance(raw, Mapping):
        return [{"corpus_id": k, "size": v} for k, v in raw.items()]
    return raw


def load_mix_spec(path: Path, overrides: Optional[Mapping[str, Any]] = None) -> MixSpec:
    """Read a YAML mix configuration; non-None overrides (from CLI flags) take precedence."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot read mix configuration {path}: {e}")
    if not isinstance(raw, dict):
        raise ConfigurationError(f"mix configuration {path} must be a mapping")
    if "datasets" in raw:
        raw["datasets"] = _datasets_from_config(raw["datasets"])
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return MixSpec(**raw)
    except ValidationError as e:
        raise ConfigurationError(f"invalid mix configuration {path}: {e}")
