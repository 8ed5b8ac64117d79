import logging

import numpy as np
import pytest

from app.config import DEFAULT_EMPTY_NODE_MARKER as MARKER
from app.corefud.conllu_io import parse_document
from app.corefud.document import Mention
from app.corefud.empty_nodes import surface_empty_nodes
from app.errors import DecodeError, EncodingError, FormatError
from app.services.selftest import random_span_set
from app.tagging.mention_codec import (
    PUSH_INSTRUCTION,
    Tag,
    TagVocabulary,
    build_tag_vocabulary,
    decode_tags,
    decode_tags_with_report,
    encode_document,
    encode_mentions,
    format_tag,
    head_reduced,
    parse_tag,
    pop,
    read_tag_dump,
    reduce_discontinuous,
    reduce_to_head,
    tagged_documents,
    write_tag_dump,
)


def texts(tags):
    return [format_tag(t) for t in tags]


def tags_of(*items):
    return [parse_tag(item) for item in items]


def test_encode_crossing_mentions():
    assert texts(encode_mentions(4, {(1, 3), (2, 4)})) == ["0:PUSH", "1:PUSH", "2:POP2", "1:POP1"]


def test_encode_without_mentions():
    assert texts(encode_mentions(3, set())) == ["0:", "0:", "0:"]


def test_encode_nested_single_token():
    assert texts(encode_mentions(3, {(1, 3), (2, 2)})) == ["0:PUSH", "1:PUSH,POP1", "1:POP1"]


def test_encode_rejects_duplicates_and_out_of_range():
    with pytest.raises(EncodingError, match="duplicate"):
        encode_mentions(3, [(1, 2), (1, 2)])
    with pytest.raises(EncodingError, match="outside"):
        encode_mentions(3, [(2, 4)])


def test_decode_crossing_mentions():
    assert decode_tags(tags_of("0:PUSH", "1:PUSH", "2:POP2", "1:POP1")) == {(1, 3), (2, 4)}
    assert decode_tags(tags_of("0:", "0:")) == set()


def test_decode_discards_open_mentions(caplog):
    with caplog.at_level(logging.WARNING):
        spans, discarded = decode_tags_with_report(tags_of("0:PUSH", "1:"))
    assert spans == set()
    assert discarded == 1
    assert "Discarded 1" in caplog.text


def test_decode_errors_name_the_token():
    with pytest.raises(DecodeError) as error:
        decode_tags(tags_of("0:", "1:POP1"))
    assert error.value.position == 2


def test_tag_grammar_is_enforced():
    with pytest.raises(EncodingError, match="POP\\* PUSH\\* POP\\*"):
        Tag(1, (pop(1), PUSH_INSTRUCTION, pop(1), PUSH_INSTRUCTION))
    with pytest.raises(EncodingError, match="pops index 2"):
        Tag(1, (pop(2),))
    with pytest.raises(FormatError):
        parse_tag("PUSH")
    with pytest.raises(FormatError):
        parse_tag("0:POPX")


def test_tag_text_round_trip():
    for text in ("0:", "2:POP2,PUSH,POP1", "1:PUSH,PUSH"):
        assert format_tag(parse_tag(text)) == text
    assert parse_tag("2:POP2,PUSH,POP1").depth_after == 1


def test_random_span_sets_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(500):
        length = int(rng.integers(1, 31))
        spans = random_span_set(rng, length, 4)
        tags = encode_mentions(length, spans)
        assert decode_tags(tags) == spans
        assert encode_mentions(length, spans) == tags
        assert tags[0].depth_before == 0 and tags[-1].depth_after == 0
        assert all(a.depth_after == b.depth_before for a, b in zip(tags, tags[1:]))


def test_reduce_discontinuous():
    assert reduce_discontinuous(Mention((1, 2, 5, 6, 7), 6)) == Mention((5, 6, 7), 6)
    assert reduce_discontinuous(Mention((2, 3), 2)) == Mention((2, 3), 2)
    assert reduce_discontinuous(Mention((4,), 4)) == Mention((4,), 4)


def test_reduce_to_head():
    assert reduce_to_head(Mention((2, 3, 4, 5), 3)) == Mention((3,), 3)


def test_vocabulary_of_crossing_example():
    vocabulary = build_tag_vocabulary([encode_mentions(4, {(1, 3), (2, 4)})])
    assert vocabulary.to_list() == ["0:", "1:", "2:", "0:PUSH", "1:POP1", "1:PUSH", "2:POP2"]
    assert vocabulary.compatible(parse_tag("0:PUSH"), parse_tag("1:PUSH"))
    assert not vocabulary.compatible(parse_tag("0:PUSH"), parse_tag("0:"))
    assert TagVocabulary.from_list(vocabulary.to_list()).to_list() == vocabulary.to_list()


def test_vocabulary_masks():
    vocabulary = build_tag_vocabulary([tags_of("0:PUSH", "1:POP1")])
    index = {format_tag(t): i for i, t in enumerate(vocabulary.tags)}
    mask = vocabulary.transition_mask()
    assert mask[index["0:PUSH"], index["1:POP1"]]
    assert not mask[index["0:PUSH"], index["0:"]]
    assert vocabulary.start_mask()[index["0:PUSH"]] and not vocabulary.start_mask()[index["1:POP1"]]
    assert vocabulary.end_mask()[index["1:POP1"]] and not vocabulary.end_mask()[index["0:PUSH"]]


def test_tag_free_corpus_vocabulary():
    assert build_tag_vocabulary([encode_mentions(2, set())]).to_list() == ["0:"]


def test_unknown_tag_cannot_be_indexed():
    vocabulary = build_tag_vocabulary([encode_mentions(2, set())])
    with pytest.raises(EncodingError, match="token 1"):
        vocabulary.encode(tags_of("0:PUSH,POP1"))


def test_encode_document(sample_doc):
    assert [texts(tags) for tags in encode_document(sample_doc)] == [
        ["0:PUSH,POP1", "0:", "0:PUSH,PUSH,POP1", "1:POP1"],
        ["0:", "0:PUSH,POP1", "0:"],
    ]


def test_duplicate_mentions_are_dropped_with_warning(caplog):
    text = "1\ta\ta\tX\t_\t_\t0\troot\t_\tEntity=(e1--1)(e2--1)\n\n"
    doc = parse_document(text)
    with caplog.at_level(logging.WARNING):
        (tags,) = encode_document(doc)
    assert texts(tags) == ["0:PUSH,POP1"]
    assert "duplicate mention" in caplog.text


def test_tag_dump_round_trip(sample_doc):
    dump = write_tag_dump([surface_empty_nodes(sample_doc, MARKER)])
    assert dump.splitlines()[:4] == ["# newdoc id = doc1", "# sent_id = doc1-s1", "Mary\t0:PUSH,POP1", "saw\t0:"]
    assert f"{MARKER}#PersPron\t0:PUSH,POP1" in dump

    sentences = read_tag_dump(dump)
    assert [s.sentence_id for s in sentences] == ["doc1-s1", "doc1-s2"]
    assert sentences[0].doc_id == "doc1"

    rebuilt = tagged_documents(sentences, MARKER)
    assert rebuilt[0].tokens[5].is_empty
    assert write_tag_dump([surface_empty_nodes(d, MARKER) for d in rebuilt]) == dump


def test_malformed_tag_dump_line():
    with pytest.raises(FormatError, match="line 2"):
        read_tag_dump("# sent_id = s\nword without tag\n")


def test_head_reduced(sample_doc):
    reduced = head_reduced(sample_doc)
    assert [m.token_positions for m in reduced.entities[1].mentions] == [(3,), (5,)]
    assert all(len(m.token_positions) == 1 for _, m in reduced.mentions())
