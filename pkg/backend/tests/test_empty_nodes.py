from dataclasses import replace

import pytest

from app.config import DEFAULT_EMPTY_NODE_MARKER
from app.corefud.empty_nodes import (
    restore_empty_nodes,
    strip_surfaced_forms,
    surface_empty_nodes,
    surfaced_text,
    write_surfaced_forms,
)
from app.errors import ConfigurationError, FormatError

MARKER = DEFAULT_EMPTY_NODE_MARKER


def test_surfaced_text_falls_back_to_lemma():
    assert surfaced_text("he", "he", MARKER) == MARKER + "he"
    assert surfaced_text("_", "#PersPron", MARKER) == MARKER + "#PersPron"
    assert surfaced_text("_", "_", MARKER) == MARKER


def test_surface_only_touches_empty_nodes(sample_doc):
    surfaced = surface_empty_nodes(sample_doc, MARKER)
    assert [t.surfaced_form for t in surfaced.tokens] == [
        "Mary", "saw", "her", "sister", "Left", MARKER + "#PersPron", "early",
    ]
    assert surfaced.entities == sample_doc.entities
    assert len(surfaced.tokens) == len(sample_doc.tokens)


def test_restore_inverts_surface(sample_doc):
    assert restore_empty_nodes(surface_empty_nodes(sample_doc, MARKER), MARKER) == sample_doc


def test_marker_in_regular_token_is_rejected(sample_doc):
    with pytest.raises(ConfigurationError, match="occurs in regular token"):
        surface_empty_nodes(sample_doc, "y")


def test_marker_must_be_one_character(sample_doc):
    with pytest.raises(ConfigurationError, match="single character"):
        surface_empty_nodes(sample_doc, "##")


def test_restore_rejects_marker_on_regular_token(sample_doc):
    tokens = list(sample_doc.tokens)
    tokens[0] = replace(tokens[0], surfaced_form=MARKER + "Mary")
    with pytest.raises(FormatError, match="no empty node id"):
        restore_empty_nodes(sample_doc.with_tokens(tokens), MARKER)


def test_surfaced_forms_written_and_stripped(sample_doc):
    written = write_surfaced_forms(sample_doc, MARKER)
    assert written.tokens[5].form == MARKER + "#PersPron"
    assert strip_surfaced_forms(written, MARKER) == sample_doc
