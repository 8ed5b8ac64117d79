from itertools import combinations

import pytest
from pydantic import ValidationError

from app.corefud.conllu_io import parse_corpus, serialize_corpus
from app.errors import AnnotationError
from app.schemas import SynthSpec
from app.services.selftest import SUITES, check_synthetic_corpus, run_selftest
from app.services.synth import crosses, generate


def test_same_seed_same_corpus():
    assert generate(SynthSpec(documents=4, seed=3)) == generate(SynthSpec(documents=4, seed=3))
    assert generate(SynthSpec(documents=4, seed=3)) != generate(SynthSpec(documents=4, seed=4))


def test_identifiers(synth_docs):
    assert [d.doc_id for d in synth_docs] == ["synth-doc1", "synth-doc2", "synth-doc3"]
    assert all(d.corpus_id == "synth" for d in synth_docs)
    first = synth_docs[0].sentences[0]
    assert first.sentence_id == "synth-doc1-s1"
    assert first.comments[0] == ("newdoc id", "synth-doc1")


def test_sentence_shapes(synth_docs):
    for doc in synth_docs:
        assert len(doc.sentences) == 4
        for sentence in doc.sentences:
            words = [t for t in sentence.tokens if not t.is_empty]
            assert 4 <= len(words) <= 8
            assert [t.word_index for t in words] == list(range(1, len(words) + 1))


def test_round_trip_through_conllu(synth_docs):
    assert parse_corpus(serialize_corpus(synth_docs), "synth") == synth_docs


def test_mention_constraints():
    spec = SynthSpec(documents=10, crossing_prob=1.0, max_depth=2, seed=5)
    found_crossing = False
    for doc in generate(spec):
        assert len(doc.entities) <= spec.max_entities
        for entity in doc.entities:
            assert not any(crosses(a.span, b.span) for a, b in combinations(entity.mentions, 2))
        for index in range(len(doc.sentences)):
            spans = [m.span for _, m in doc.sentence_mentions(index)]
            assert len(spans) == len(set(spans))
            assert all(e - s < 4 for s, e in spans)
            for position in range(*doc.sentence_span(index)):
                assert sum(1 for s, e in spans if s <= position <= e) <= 2
            found_crossing |= any(crosses(a, b) for a, b in combinations(spans, 2))
    assert found_crossing


def test_zero_entities():
    docs = generate(SynthSpec(documents=3, min_entities=0, max_entities=0))
    assert all(not d.entities for d in docs)


def test_no_empty_nodes():
    docs = generate(SynthSpec(documents=3, empty_node_prob=0.0))
    assert not any(t.is_empty for d in docs for t in d.tokens)


def test_heads_lie_inside_mentions(synth_docs):
    for _, mention in (pair for d in synth_docs for pair in d.mentions()):
        assert mention.head_position in mention.token_positions


def test_invalid_ranges():
    with pytest.raises(ValidationError):
        SynthSpec(min_sentence_length=5, max_sentence_length=4)
    with pytest.raises(ValidationError):
        SynthSpec(min_entities=3, max_entities=1)


def test_synthetic_corpus_suite():
    result = check_synthetic_corpus(seed=2)
    assert result.passed, result.failures


def test_synthetic_corpus_suite_reports_parse_errors(mocker):
    error = AnnotationError("closing bracket without a matching opening bracket", "e2")
    mocker.patch("app.services.selftest.parse_corpus", side_effect=error)
    result = check_synthetic_corpus(seed=2)
    assert not result.passed
    assert "does not parse" in result.failures[0]
    assert result.cases == 5


def test_run_selftest_turns_errors_into_failures(mocker):
    mocker.patch.dict(SUITES, {"synth": mocker.Mock(side_effect=AnnotationError("broken corpus"))})
    (result,) = run_selftest(["synth"])
    assert not result.passed
    assert result.failures == ["suite stopped: broken corpus"]
