from collections import Counter
from itertools import islice

import pytest
from pydantic import ValidationError
from scipy.stats import chisquare

from app.errors import ConfigurationError, SamplingError
from app.schemas import DatasetSize, MixSpec
from app.services.sampling import compute_ratios, load_mix_spec, logarithmic_weights, round_half_up, sample_stream


def mix(sizes, **kwargs):
    return MixSpec(datasets=[DatasetSize(corpus_id=k, size=n) for k, n in sizes.items()], **kwargs)


def pools_for(sizes):
    return {k: list(range(min(n, 50))) for k, n in sizes.items()}


def test_logarithmic_weights_span_one_to_five():
    assert logarithmic_weights({"small": 457, "large": 40000}) == {"small": 1.0, "large": 5.0}
    assert logarithmic_weights({"only": 12}) == {"only": 1.0}
    assert logarithmic_weights({"a": 10, "b": 100, "c": 1000})["b"] == 3.0


def test_round_half_up():
    assert [round_half_up(x) for x in (1.5, 2.5, 2.49)] == [2, 3, 2]


def test_logarithmic_ratios():
    ratios = compute_ratios(mix({"small": 457, "large": 40000}))
    assert ratios.probabilities["small"] == pytest.approx(1 / 6)
    assert ratios.probabilities["large"] == pytest.approx(5 / 6)


def test_uniform_and_linear_ratios():
    sizes = {"a": 100, "b": 300}
    assert compute_ratios(mix(sizes, strategy="uniform")).probabilities == {"a": 0.5, "b": 0.5}
    assert compute_ratios(mix(sizes, strategy="linear")).probabilities == {"a": 0.25, "b": 0.75}


def test_half_focus():
    ratios = compute_ratios(mix({"t": 100, "a": 457, "b": 40000}, strategy="half_focus", target="t"))
    assert ratios.probabilities["t"] == 0.5
    assert ratios.probabilities["a"] == pytest.approx(0.5 / 6)
    assert ratios.probabilities["b"] == pytest.approx(2.5 / 6)
    alone = compute_ratios(mix({"t": 100}, strategy="half_focus", target="t"))
    assert alone.probabilities == {"t": 1.0}


def test_half_focus_target_must_exist():
    with pytest.raises(ValidationError):
        mix({"a": 10}, strategy="half_focus", target="zz")
    with pytest.raises(SamplingError, match="excluded"):
        compute_ratios(mix({"a": 10, "t": 10}, strategy="half_focus", target="t", exclude=["t"]))


def test_exclusion():
    ratios = compute_ratios(mix({"a": 457, "b": 40000}, exclude=["b"]))
    assert ratios.probabilities == {"a": 1.0}
    with pytest.raises(SamplingError):
        compute_ratios(mix({"a": 457}, exclude=["a"]))


def test_stream_frequencies_follow_ratios():
    sizes = {"small": 457, "large": 40000}
    counts = Counter(s.corpus_id for s in islice(sample_stream(mix(sizes, seed=1), pools_for(sizes)), 60000))
    assert abs(counts["small"] - 10000) < 500
    assert abs(counts["large"] - 50000) < 500


def test_linear_stream_passes_goodness_of_fit():
    sizes = {"a": 100, "b": 300, "c": 600}
    draws = 30000
    counts = Counter(s.corpus_id for s in islice(sample_stream(mix(sizes, strategy="linear", seed=2), pools_for(sizes)), draws))
    observed = [counts[k] for k in sizes]
    expected = [draws * n / 1000 for n in sizes.values()]
    assert chisquare(observed, expected).pvalue > 1e-4


def test_stream_is_seeded():
    sizes = {"a": 5, "b": 9}
    first = [(s.corpus_id, s.example) for s in islice(sample_stream(mix(sizes, seed=4), pools_for(sizes)), 100)]
    again = [(s.corpus_id, s.example) for s in islice(sample_stream(mix(sizes, seed=4), pools_for(sizes)), 100)]
    assert first == again


def test_corpus_token():
    sample = next(sample_stream(mix({"a": 5}, use_corpus_id=True), {"a": ["x"]}))
    assert sample.corpus_token == "<corpus:a>"
    assert next(sample_stream(mix({"a": 5}), {"a": ["x"]})).corpus_token is None


def test_empty_pool_is_an_error():
    with pytest.raises(SamplingError, match="no examples"):
        next(sample_stream(mix({"a": 5, "b": 5}), {"a": ["x"]}))


def test_load_mix_spec(tmp_path):
    path = tmp_path / "mix.yaml"
    path.write_text("datasets:\n  small: 457\n  large: 40000\nstrategy: uniform\nseed: 3\n")
    spec = load_mix_spec(path, {"strategy": "logarithmic", "seed": None})
    assert spec.strategy == "logarithmic"
    assert spec.seed == 3
    assert [d.corpus_id for d in spec.datasets] == ["small", "large"]


def test_load_mix_spec_errors(tmp_path):
    path = tmp_path / "mix.yaml"
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigurationError, match="mapping"):
        load_mix_spec(path)
    path.write_text("datasets: {a: 0}\n")
    with pytest.raises(ConfigurationError, match="invalid"):
        load_mix_spec(path)
    path.write_text("datasets: [unclosed\n")
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_mix_spec(path)
