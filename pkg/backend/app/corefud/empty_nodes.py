import logging
from dataclasses import replace
from typing import Optional

from app.config import settings
from app.corefud.document import Document
from app.errors import ConfigurationError, FormatError

logger = logging.getLogger(__name__)


def _text(value: str) -> str:
    return "" if value == "_" else value


def surfaced_text(form: str, lemma: str, marker: str) -> str:
    """Model-facing text of an empty node: marker plus its form, falling back to the lemma."""
    return marker + (_text(form) or _text(lemma))


def surface_empty_nodes(doc: Document, marker: Optional[str] = None) -> Document:
    marker = marker or settings.empty_node_marker
    if len(marker) != 1:
        raise ConfigurationError(f"empty node marker must be a single character, got {marker!r}")
    for token in doc.tokens:
        if not token.is_empty and marker in token.form:
            raise ConfigurationError(
                f"empty node marker {marker!r} occurs in regular token {token.form!r} of document {doc.doc_id!r}"
            )

    surfaced = 0
    tokens = []
    for token in doc.tokens:
        if token.is_empty:
            tokens.append(replace(token, surfaced_form=surfaced_text(token.form, token.lemma, marker)))
            surfaced += 1
        else:
            tokens.append(replace(token, surfaced_form=token.form))
    if surfaced:
        logger.debug(f"Surfaced {surfaced} empty nodes in document {doc.doc_id!r}")
    return doc.with_tokens(tokens)


def restore_empty_nodes(doc: Document, marker: Optional[str] = None) -> Document:
    marker = marker or settings.empty_node_marker
    tokens = []
    for sentence in doc.sentences:
        for token in sentence.tokens:
            if token.surfaced_form.startswith(marker) and not token.is_empty:
                raise FormatError(
                    f"token {token.token_id} of sentence {sentence.sentence_id!r} carries the empty node marker "
                    f"but has no empty node id"
                )
            tokens.append(replace(token, surfaced_form=token.form))
    return doc.with_tokens(tokens)


def write_surfaced_forms(doc: Document, marker: Optional[str] = None) -> Document:
    """Empty-node FORM columns replaced by their surfaced text."""
    surfaced = surface_empty_nodes(doc, marker)
    return surfaced.with_tokens([replace(t, form=t.surfaced_form) if t.is_empty else t for t in surfaced.tokens])


def strip_surfaced_forms(doc: Document, marker: Optional[str] = None) -> Document:
    """Inverse of write_surfaced_forms; a surfaced lemma fallback becomes an empty form again."""
    marker = marker or settings.empty_node_marker
    checked = restore_empty_nodes(doc.with_tokens([replace(t, surfaced_form=t.form) for t in doc.tokens]), marker)
    tokens = []
    for token in checked.tokens:
        if token.is_empty and token.form.startswith(marker):
            text = token.form[len(marker):]
            form = "_" if not text or text == token.lemma else text
            token = replace(token, form=form, surfaced_form=form)
        tokens.append(token)
    return checked.with_tokens(tokens)
