import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import conllu

from app.corefud.document import OPAQUE_COLUMNS, Document, Entity, Mention, Sentence, Token
from app.errors import AnnotationError, ParseError
from app.services.scorer import head_of_span

logger = logging.getLogger(__name__)

FIELDS = ["id", "form", "lemma", "upos", "xpos", "feats", "head", "deprel", "deps", "misc"]

# Keep every column as raw text; ids like 1.1 and 2-3 must not be split.
FIELD_PARSERS = {name: (lambda line, i: line[i]) for name in FIELDS}

ID_PATTERN = re.compile(r"^(?:(?P<word>\d+)|(?P<range>\d+-\d+)|(?P<base>\d+)\.(?P<empty>\d+))$")
EID_PATTERN = re.compile(r"^(?P<eid>[^\s()\-\[\]|]+)(?:\[(?P<part>\d+)/(?P<total>\d+)\])?$")
ENTITY_KEY = "Entity="


@dataclass
class _Block:
    lines: List[str]
    first_line: int


@dataclass
class _Discontinuous:
    total: int
    head_index: Optional[int]
    positions: List[int] = field(default_factory=list)
    parts_opened: int = 1
    parts_done: int = 0


@dataclass
class _OpenMention:
    eid: str
    start: int
    head_index: Optional[int]
    group: Optional[_Discontinuous] = None


@dataclass
class _Bracket:
    kind: str  # open, close or unit
    eid: str
    etype: Optional[str] = None
    head_index: Optional[int] = None
    part: Optional[Tuple[int, int]] = None


def _split_blocks(text: str) -> List[_Block]:
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    blocks: List[_Block] = []
    current: List[str] = []
    start = 1
    for number, line in enumerate(text.split("\n"), start=1):
        if line.strip():
            if not current:
                start = number
            current.append(line)
        elif current:
            blocks.append(_Block(current, start))
            current = []
    if current:
        blocks.append(_Block(current, start))
    return blocks


def _parse_comment(line: str) -> Tuple[str, Optional[str]]:
    body = line[1:].strip()
    if "=" in body:
        key, value = body.split("=", 1)
        return key.strip(), value.strip()
    return body, None


def _is_newdoc(block: _Block) -> bool:
    return any(line.startswith("#") and _parse_comment(line)[0].startswith("newdoc") for line in block.lines)


def parse_entity_value(value: str) -> List[_Bracket]:
    """Split the value of an Entity= MISC item into its brackets, left to right."""
    brackets = []
    i = 0
    while i < len(value):
        if value[i] == "(":
            j = i + 1
            while j < len(value) and value[j] not in "()":
                j += 1
            body = value[i + 1:j]
            closed = j < len(value) and value[j] == ")"
            kind = "unit" if closed else "open"
            i = j + 1 if closed else j
        else:
            j = value.find(")", i)
            if j < 0 or "(" in value[i:j]:
                raise AnnotationError(f"malformed Entity value {value!r}")
            body = value[i:j]
            kind = "close"
            i = j + 1
        parts = body.split("-")
        match = EID_PATTERN.match(parts[0])
        if not match:
            raise AnnotationError(f"malformed entity reference {body!r} in {value!r}")
        bracket = _Bracket(kind, match["eid"])
        if match["part"]:
            bracket.part = (int(match["part"]), int(match["total"]))
        if kind != "close":
            if len(parts) > 1 and parts[1]:
                bracket.etype = parts[1]
            if len(parts) > 2 and parts[2].isdigit():
                bracket.head_index = int(parts[2])
        brackets.append(bracket)
    return brackets


class _EntityCollector:
    """Turns Entity brackets seen token by token into finished mentions."""

    def __init__(self):
        self.open: Dict[str, List[_OpenMention]] = {}
        self.groups: Dict[str, List[_Discontinuous]] = {}
        self.mentions: Dict[str, List[Tuple[List[int], Optional[int]]]] = {}
        self.etypes: Dict[str, str] = {}

    def _note_entity(self, eid: str, etype: Optional[str]):
        self.mentions.setdefault(eid, [])
        if etype and not self.etypes.get(eid):
            self.etypes[eid] = etype

    def _open(self, bracket: _Bracket, position: int) -> _OpenMention:
        group = None
        if bracket.part is not None:
            index, total = bracket.part
            if index == 1:
                group = _Discontinuous(total, bracket.head_index)
                self.groups.setdefault(bracket.eid, []).append(group)
            else:
                candidates = [
                    g for g in self.groups.get(bracket.eid, [])
                    if g.total == total and g.parts_opened == index - 1 and g.parts_done == index - 1
                ]
                if not candidates:
                    raise AnnotationError(f"part {index}/{total} opened before part {index - 1} closed", bracket.eid)
                group = candidates[-1]
                group.parts_opened += 1
        pending = _OpenMention(bracket.eid, position, bracket.head_index, group)
        self.open.setdefault(bracket.eid, []).append(pending)
        return pending

    def _close(self, pending: _OpenMention, position: int):
        positions = list(range(pending.start, position + 1))
        group = pending.group
        if group is None:
            self.mentions[pending.eid].append((positions, pending.head_index))
            return
        group.positions.extend(positions)
        group.parts_done += 1
        if group.parts_done == group.total:
            self.groups[pending.eid].remove(group)
            self.mentions[pending.eid].append((sorted(group.positions), group.head_index))

    def feed(self, position: int, value: str):
        for bracket in parse_entity_value(value):
            self._note_entity(bracket.eid, bracket.etype)
            if bracket.kind == "close":
                stack = self.open.get(bracket.eid, [])
                if bracket.part is None:
                    matching = [k for k, p in enumerate(stack) if p.group is None]
                else:
                    matching = [
                        k for k, p in enumerate(stack)
                        if p.group is not None and p.group.parts_opened == bracket.part[0]
                    ]
                if not matching:
                    raise AnnotationError("closing bracket without a matching opening bracket", bracket.eid)
                self._close(stack.pop(matching[-1]), position)
            else:
                pending = self._open(bracket, position)
                if bracket.kind == "unit":
                    self.open[bracket.eid].remove(pending)
                    self._close(pending, position)

    def end_sentence(self, sentence_id: str):
        for eid, stack in self.open.items():
            if stack:
                raise AnnotationError(f"unbalanced brackets at the end of sentence {sentence_id!r}", eid)
        for eid, groups in self.groups.items():
            if groups:
                raise AnnotationError(f"discontinuous mention left incomplete in sentence {sentence_id!r}", eid)

    def entities(self, parents: Dict[int, Optional[int]]) -> List[Entity]:
        entities = []
        for eid, found in self.mentions.items():
            mentions = []
            for positions, head_index in found:
                if head_index is None:
                    head = head_of_span(positions, parents)
                elif 1 <= head_index <= len(positions):
                    head = positions[head_index - 1]
                else:
                    raise AnnotationError(f"head index {head_index} outside a {len(positions)}-token mention", eid)
                mentions.append(Mention(tuple(positions), head))
            if mentions:
                entities.append(Entity(eid, tuple(mentions), self.etypes.get(eid, "")))
        return entities


def _parse_head(value: str, line_number: int) -> Optional[int]:
    if value == "_":
        return None
    if not value.isdigit():
        raise ParseError(f"HEAD column {value!r} is not a number", line_number)
    return int(value)


def _parse_sentence(block: _Block, position: int, collector: _EntityCollector) -> Sentence:
    comments = []
    token_lines = []
    numbers = []
    for offset, line in enumerate(block.lines):
        number = block.first_line + offset
        if line.startswith("#"):
            comments.append(_parse_comment(line))
            continue
        columns = line.split("\t")
        if len(columns) != len(FIELDS):
            raise ParseError(f"expected {len(FIELDS)} tab-separated columns, found {len(columns)}", number)
        if not ID_PATTERN.match(columns[0]):
            raise ParseError(f"invalid token id {columns[0]!r}", number)
        token_lines.append(line)
        numbers.append(number)
    if not token_lines:
        raise ParseError("sentence block without tokens", block.first_line)

    try:
        parsed = conllu.parse("\n".join(token_lines) + "\n\n", fields=FIELDS, field_parsers=FIELD_PARSERS)
    except conllu.exceptions.ParseException as e:
        raise ParseError(str(e), block.first_line)
    sentence_id = next((value for key, value in comments if key == "sent_id"), None) or ""

    tokens: List[Token] = []
    head_lines: List[int] = []
    ranges: List[Tuple[int, str]] = []
    expected_word = 1
    for raw, line, number in zip(parsed[0], token_lines, numbers):
        match = ID_PATTERN.match(raw["id"])
        if match["range"]:
            ranges.append((len(tokens), line))
            continue
        if match["word"]:
            word_index, empty_index = int(match["word"]), None
            if word_index != expected_word:
                raise ParseError(f"token {word_index} out of order, expected {expected_word}", number)
            expected_word += 1
        else:
            word_index, empty_index = int(match["base"]), int(match["empty"])
            previous = tokens[-1] if tokens else None
            expected_empty = 1
            if previous is not None and previous.is_empty and previous.word_index == word_index:
                expected_empty = previous.empty_index + 1
            if word_index != expected_word - 1 or empty_index != expected_empty:
                raise ParseError(f"empty node {raw['id']} out of order", number)

        kept = []
        for item in ([] if raw["misc"] == "_" else raw["misc"].split("|")):
            if item.startswith(ENTITY_KEY):
                try:
                    collector.feed(position + len(tokens), item[len(ENTITY_KEY):])
                except AnnotationError as e:
                    raise AnnotationError(f"line {number}: {e.detail}")
            else:
                kept.append(item)

        tokens.append(Token(
            form=raw["form"],
            word_index=word_index,
            lemma=raw["lemma"],
            head=_parse_head(raw["head"], number) if empty_index is None else None,
            empty_index=empty_index,
            surfaced_form=raw["form"],
            columns=tuple(raw[name] for name in OPAQUE_COLUMNS),
            misc=tuple(kept),
        ))
        head_lines.append(number)

    last_word = expected_word - 1
    for token, number in zip(tokens, head_lines):
        if token.head is not None and token.head > last_word:
            raise ParseError(f"HEAD {token.head} refers to a missing token (sentence has {last_word})", number)
    collector.end_sentence(sentence_id)
    return Sentence(tuple(tokens), sentence_id, tuple(comments), tuple(ranges))


def _parse_blocks(blocks: Sequence[_Block], corpus_id: str, doc_id: Optional[str]) -> Document:
    collector = _EntityCollector()
    sentences = []
    position = 0
    for block in blocks:
        sentence = _parse_sentence(block, position, collector)
        sentences.append(sentence)
        position += len(sentence)
    if doc_id is None:
        doc_id = ""
        for key, value in (sentences[0].comments if sentences else ()):
            if key.startswith("newdoc"):
                doc_id = value or ""
                break
    skeleton = Document(doc_id, tuple(sentences), (), corpus_id)
    return skeleton.with_entities(collector.entities(skeleton.parents))


def parse_document(text: str, corpus_id: str = "", doc_id: Optional[str] = None) -> Document:
    return _parse_blocks(_split_blocks(text), corpus_id, doc_id)


def parse_corpus(text: str, corpus_id: str = "") -> List[Document]:
    groups: List[List[_Block]] = []
    for block in _split_blocks(text):
        if not groups or _is_newdoc(block):
            groups.append([])
        groups[-1].append(block)
    documents = [_parse_blocks(group, corpus_id, None) for group in groups]
    logger.debug(f"Parsed {len(documents)} documents for corpus {corpus_id!r}")
    return documents


def _entity_brackets(doc: Document) -> Dict[int, str]:
    opens: Dict[int, List[Tuple[int, str]]] = {}
    units: Dict[int, List[str]] = {}
    closes: Dict[int, List[Tuple[int, str]]] = {}
    for entity, mention in doc.mentions():
        runs = mention.runs()
        head_index = mention.token_positions.index(mention.head_position) + 1
        for k, (first, last) in enumerate(runs, start=1):
            ref = entity.entity_id if len(runs) == 1 else f"{entity.entity_id}[{k}/{len(runs)}]"
            opener = f"({ref}-{entity.etype}-{head_index}" if k == 1 else f"({ref}"
            if first == last:
                units.setdefault(first, []).append(opener + ")")
            else:
                opens.setdefault(first, []).append((last, opener))
                closes.setdefault(last, []).append((first, f"{ref})"))

    # Closers come before openers so an opener body never runs into a closer.
    # Spans opened later close first; longer spans open first.
    brackets = {}
    for position in sorted(set(opens) | set(units) | set(closes)):
        text = "".join(b for _, b in sorted(closes.get(position, []), key=lambda x: -x[0]))
        text += "".join(b for _, b in sorted(opens.get(position, []), key=lambda x: -x[0]))
        text += "".join(units.get(position, []))
        brackets[position] = text
    return brackets


def serialize_document(doc: Document) -> str:
    brackets = _entity_brackets(doc)
    lines: List[str] = []
    for sentence, offset in zip(doc.sentences, doc.sentence_offsets):
        for key, value in sentence.comments:
            lines.append(f"# {key}" if value is None else f"# {key} = {value}")
        ranges: Dict[int, List[str]] = {}
        for index, raw in sentence.ranges:
            ranges.setdefault(index, []).append(raw)
        for i, token in enumerate(sentence.tokens):
            lines.extend(ranges.get(i, []))
            misc = list(token.misc)
            if offset + i in brackets:
                misc.append(ENTITY_KEY + brackets[offset + i])
            upos, xpos, feats, deprel, deps = token.columns
            lines.append("\t".join([
                token.token_id, token.form, token.lemma, upos, xpos, feats,
                "_" if token.head is None else str(token.head), deprel, deps,
                "|".join(misc) if misc else "_",
            ]))
        lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def serialize_corpus(docs: Sequence[Document]) -> str:
    return "".join(serialize_document(doc) for doc in docs)


def corpus_id_from_path(path: Path) -> str:
    return Path(path).name.split(".")[0].split("-")[0]


def read_corpus_file(path: Path, corpus_id: Optional[str] = None) -> List[Document]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    documents = parse_corpus(text, corpus_id if corpus_id is not None else corpus_id_from_path(path))
    logger.info(f"Read {len(documents)} documents from {path}")
    return documents


def write_corpus_file(path: Path, docs: Sequence[Document]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_corpus(docs))
    logger.info(f"Wrote {len(docs)} documents to {path}")
