from typing import Any, Dict, Mapping, Optional, Sequence

from pydantic import ValidationError

from app.errors import ConfigurationError
from app.schemas import TrainConfig

# Named experiment settings; each maps TrainConfig fields to values.
PRESETS: Dict[str, Dict[str, Any]] = {
    # Full spans are scored: head reduction merges mentions that share a head.
    "toy-overfit": {
        "peak_lr": 1e-3,
        "epochs": 300,
        "batches_per_epoch": 10,
        "batch_size": 8,
        "dropout": 0.0,
        "dim": 64,
        "layers": 2,
        "attention_heads": 4,
        "reduce_to_heads": False,
    },
    "right-context-0": {"right_context": 0},
    "right-context-50": {"right_context": 50},
    "right-context-100": {"right_context": 100},
    "at-most-1-links": {"at_most_k_links": 1},
    "at-most-2-links": {"at_most_k_links": 2},
    "at-most-3-links": {"at_most_k_links": 3},
    "mix-logarithmic": {"mixing": "logarithmic"},
    "mix-uniform": {"mixing": "uniform"},
    "mix-linear": {"mixing": "linear"},
    "corpus-id": {"use_corpus_id": True},
    "half-focus": {"mixing": "half_focus"},
    "full-mentions": {"reduce_to_heads": False},
    "with-singletons": {"with_singletons": True},
    "zero-shot": {"use_corpus_id": False},
    "beta2-0.99": {"beta2": 0.99},
    "lazy-adam": {"lazy_adam": True},
}


def preset_values(names: Sequence[str]) -> Dict[str, Any]:
    """Merge presets left to right."""
    values: Dict[str, Any] = {}
    for name in names:
        if name not in PRESETS:
            raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
        values.update(PRESETS[name])
    return values


def resolve_train_config(
    presets: Sequence[str] = (),
    file_values: Optional[Mapping[str, Any]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
) -> TrainConfig:
    """Built-in defaults < presets < config file < command-line flags (None flags are unset)."""
    values = preset_values(presets)
    values.update(file_values or {})
    values.update({k: v for k, v in (flag_values or {}).items() if v is not None})
    try:
        cfg = TrainConfig(**values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid training configuration: {e}")
    if "zero-shot" in presets and not cfg.exclude:
        raise ConfigurationError("preset zero-shot needs the held-out corpus given with --exclude")
    if cfg.mixing == "half_focus" and not cfg.half_focus_target:
        raise ConfigurationError("half_focus mixing needs a target corpus (--half-focus-target)")
    return cfg
